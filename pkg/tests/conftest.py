import pytest

from fewner.corpus import AnnotatedSentence, EntitySpan, load_entity_types
from fewner.templates import FEATURE_NAMES


def sent(id, text, spans=(), language="en"):
    """Shorthand sentence factory for tests."""
    return AnnotatedSentence(id=id, text=text, spans=tuple(spans), language=language)


def span(start, end, type_, mention):
    return EntitySpan(start=start, end=end, type=type_, mention=mention)


def additive_scorer(weights, base=0.5):
    """A configuration scorer with no feature interactions.

    score(config) = base + sum of weights[name] over enabled features; a
    greedy sweep and an exhaustive grid must agree on the argmax for any
    such scorer.
    """

    def score(config):
        return base + sum(weights.get(name, 0.0) for name in config.enabled_features())

    return score


@pytest.fixture(scope="session")
def registry():
    return load_entity_types()


@pytest.fixture
def diso(registry):
    return registry["DISO"]


@pytest.fixture
def chem(registry):
    return registry["CHEM"]


def nine_weights(rng_values):
    """Map an iterable of nine floats onto the feature names."""
    return dict(zip(FEATURE_NAMES, rng_values))
