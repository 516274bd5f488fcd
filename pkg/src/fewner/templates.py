"""Prompt configuration and rendering.

A prompt targets exactly one entity type.  In tagging mode the model is asked
to repeat the sentence with every mention wrapped in a tag pair; in listing
mode it is asked for the bare mention list.  Nine binary features control the
wording:

1.  prompt_language_native   prompt in the corpus language instead of English
2.  additional_sentences     10 demonstrations instead of 5
3.  self_verification        entity-rich demo selection plus a yes/no
                             verification pass over decoded spans
4.  alt_taggers              << and >> instead of @@ and ##
5.  specialist_persona       the header becomes a "you are an excellent
                             linguist/clinician" sentence
6.  label_definitions        a one-sentence definition of the entity type is
                             added after the header
7.  intro_sentence           an extra instruction between the demonstrations
                             and the test sentence
8.  long_verification_answer verification answers restate the mention
                             instead of a bare yes/no
9.  dialogue_template        dash-prefixed turns instead of Input:/Output:

Nested or overlapping same-type gold spans cannot be expressed with flat
tag pairs, so demonstrations show outermost spans only.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Sequence

from . import rng
from .corpus import AnnotatedSentence, EntitySpan, EntityType
from .errors import ConfigError

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "prompt_language_native",
    "additional_sentences",
    "self_verification",
    "alt_taggers",
    "specialist_persona",
    "label_definitions",
    "intro_sentence",
    "long_verification_answer",
    "dialogue_template",
)

PROMPT_MODES = ("tagging", "listing")
LISTING_SEPARATORS = ("comma", "newline")

TokenCounter = Callable[[str], int]


@lru_cache(maxsize=None)
def fragments() -> dict[str, dict[str, str]]:
    raw = resources.files("fewner").joinpath("data/templates.json").read_text("utf-8")
    return json.loads(raw)


def supported_languages() -> tuple[str, ...]:
    return tuple(sorted(fragments()))


def fragments_for(language: str) -> dict[str, str]:
    table = fragments()
    if language not in table:
        raise ConfigError(
            f"unsupported prompt language {language!r}; "
            f"supported: {', '.join(sorted(table))}"
        )
    return table[language]


@dataclass(frozen=True)
class TagPair:
    open: str
    close: str

    def __post_init__(self):
        if not self.open or not self.close:
            raise ConfigError("tag pair strings must be non-empty")
        if self.open == self.close:
            raise ConfigError("open and close tags must differ")


DEFAULT_TAGS = TagPair("@@", "##")
ALT_TAGS = TagPair("<<", ">>")


@dataclass(frozen=True)
class PromptConfig:
    """The nine feature flags plus mode, separator and base demo count."""

    prompt_language_native: bool = False
    additional_sentences: bool = False
    self_verification: bool = False
    alt_taggers: bool = False
    specialist_persona: bool = False
    label_definitions: bool = False
    intro_sentence: bool = False
    long_verification_answer: bool = False
    dialogue_template: bool = False
    mode: str = "tagging"
    listing_separator: str = "comma"
    base_demo_count: int = 5

    def __post_init__(self):
        if self.mode not in PROMPT_MODES:
            raise ConfigError(f"unknown prompt mode {self.mode!r}; expected one of {PROMPT_MODES}")
        if self.listing_separator not in LISTING_SEPARATORS:
            raise ConfigError(
                f"unknown listing separator {self.listing_separator!r}; "
                f"expected one of {LISTING_SEPARATORS}"
            )
        if self.base_demo_count < 1:
            raise ConfigError(f"base_demo_count must be positive, got {self.base_demo_count}")

    def feature(self, name: str) -> bool:
        if name not in FEATURE_NAMES:
            raise ConfigError(f"unknown feature {name!r}")
        return getattr(self, name)

    def with_features(self, **flags: bool) -> "PromptConfig":
        for name in flags:
            if name not in FEATURE_NAMES:
                raise ConfigError(f"unknown feature {name!r}")
        return replace(self, **flags)

    def enabled_features(self) -> tuple[str, ...]:
        return tuple(name for name in FEATURE_NAMES if getattr(self, name))

    @property
    def bitmask(self) -> int:
        mask = 0
        for i, name in enumerate(FEATURE_NAMES):
            if getattr(self, name):
                mask |= 1 << i
        return mask

    @classmethod
    def from_bitmask(cls, mask: int, **rest) -> "PromptConfig":
        if not 0 <= mask < (1 << len(FEATURE_NAMES)):
            raise ConfigError(f"feature bitmask out of range: {mask}")
        flags = {name: bool(mask & (1 << i)) for i, name in enumerate(FEATURE_NAMES)}
        return cls(**flags, **rest)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "PromptConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown prompt config keys: {sorted(unknown)}")
        return cls(**payload)

    @property
    def effective_demo_count(self) -> int:
        return self.base_demo_count * (2 if self.additional_sentences else 1)

    @property
    def tag_pair(self) -> TagPair:
        return ALT_TAGS if self.alt_taggers else DEFAULT_TAGS

    def separator_string(self) -> str:
        return ", " if self.listing_separator == "comma" else "\n"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    entity_type: str
    demonstrations: tuple[str, ...]
    stop_sequences: tuple[str, ...]
    estimated_tokens: int
    kind: str  # "main" or "self_verification"
    dropped_demos: int = 0


# --------------------------------------------------------------------------
# Token estimation

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def default_token_counter(text: str) -> int:
    return len(_TOKEN_RE.findall(text))


def estimate_tokens(text: str, counter: TokenCounter | None = None) -> int:
    """Approximate token count; whitespace-and-punctuation segmentation by
    default, or any injected counter (e.g. a real tokenizer's)."""
    return (counter or default_token_counter)(text)


# --------------------------------------------------------------------------
# Span tagging helpers

def outermost_spans(spans: Iterable[EntitySpan]) -> tuple[EntitySpan, ...]:
    """Drop spans nested in (or overlapping) an earlier-starting span.

    Sorting by (start, -end) and sweeping keeps, for each overlap cluster,
    the span that starts first and extends furthest.
    """
    kept: list[EntitySpan] = []
    last_end = -1
    for span in sorted(spans, key=lambda s: (s.start, -s.end)):
        if span.start >= last_end:
            kept.append(span)
            last_end = span.end
    return tuple(kept)


def tag_sentence(text: str, spans: Iterable[EntitySpan], tags: TagPair) -> str:
    """Wrap the given (non-overlapping) spans of the text in the tag pair."""
    pieces: list[str] = []
    cursor = 0
    for span in sorted(spans, key=lambda s: s.start):
        pieces.append(text[cursor:span.start])
        pieces.append(tags.open + text[span.start:span.end] + tags.close)
        cursor = span.end
    pieces.append(text[cursor:])
    return "".join(pieces)


def _demo_output(
    sentence: AnnotatedSentence, entity_type: EntityType, config: PromptConfig
) -> str:
    spans = outermost_spans(sentence.spans_of(entity_type.id))
    if config.mode == "tagging":
        return tag_sentence(sentence.text, spans, config.tag_pair)
    return config.separator_string().join(s.mention for s in spans)


# --------------------------------------------------------------------------
# Prompt assembly

def _turn(frags: dict[str, str], config: PromptConfig, input_text: str, output_text: str | None) -> list[str]:
    """One Input/Output exchange; output_text None leaves the slot open."""
    if config.dialogue_template:
        lines = [f"- {input_text}"]
        lines.append("-" if output_text is None else (f"- {output_text}" if output_text else "-"))
        return lines
    lines = [f"{frags['input_label']} {input_text}"]
    if output_text is None or output_text == "":
        lines.append(frags["output_label"])
    else:
        lines.append(f"{frags['output_label']} {output_text}")
    return lines


def stop_sequences_for(config: PromptConfig, prompt_language: str) -> tuple[str, ...]:
    if config.dialogue_template:
        return ("\n-",)
    return ("\n" + fragments_for(prompt_language)["input_label"],)


def _header(frags: dict[str, str], config: PromptConfig, entity_type: EntityType, language: str) -> str:
    plural = entity_type.plural(language)
    if config.specialist_persona:
        key = "specialist_clinical" if entity_type.domain == "clinical" else "specialist_general"
        return frags["persona"].format(specialist=frags[key], plural=plural)
    if config.mode == "tagging":
        return frags["task_tagging"].format(
            plural=plural, open=config.tag_pair.open, close=config.tag_pair.close
        )
    separator = frags["separator_comma" if config.listing_separator == "comma" else "separator_newline"]
    return frags["task_listing"].format(plural=plural, separator=separator)


def _intro(frags: dict[str, str], config: PromptConfig, entity_type: EntityType, language: str) -> str:
    plural = entity_type.plural(language)
    if config.mode == "tagging":
        return frags["intro_tagging"].format(
            plural=plural, open=config.tag_pair.open, close=config.tag_pair.close
        )
    separator = frags["separator_comma" if config.listing_separator == "comma" else "separator_newline"]
    return frags["intro_listing"].format(plural=plural, separator=separator)


def render_main_prompt(
    config: PromptConfig,
    entity_type: EntityType,
    demos: Sequence[AnnotatedSentence],
    test_text: str,
    prompt_language: str,
    token_counter: TokenCounter | None = None,
    allow_empty_demos: bool = False,
) -> RenderedPrompt:
    """Assemble the main prompt for one test sentence and one entity type.

    Layout: header (task description or persona), optional definition,
    demonstrations in the order given, optional introductory sentence, then
    the test sentence with an open output slot.
    """
    if not demos and not allow_empty_demos:
        raise ConfigError("cannot render a prompt with an empty demonstration set")
    frags = fragments_for(prompt_language)
    lines = [_header(frags, config, entity_type, prompt_language)]
    if config.label_definitions:
        lines.append(entity_type.definition(prompt_language))
    for demo in demos:
        lines.extend(_turn(frags, config, demo.text, _demo_output(demo, entity_type, config)))
    if config.intro_sentence:
        lines.append(_intro(frags, config, entity_type, prompt_language))
    lines.extend(_turn(frags, config, test_text, None))
    text = "\n".join(lines)
    return RenderedPrompt(
        text=text,
        entity_type=entity_type.id,
        demonstrations=tuple(d.id for d in demos),
        stop_sequences=stop_sequences_for(config, prompt_language),
        estimated_tokens=estimate_tokens(text, token_counter),
        kind="main",
    )


VerificationDemo = tuple[AnnotatedSentence, str, bool]


def _verification_answer(
    frags: dict[str, str], config: PromptConfig, entity_type: EntityType,
    language: str, mention: str, is_positive: bool,
) -> str:
    if config.long_verification_answer:
        key = "long_answer_yes" if is_positive else "long_answer_no"
        return frags[key].format(mention=mention, singular=entity_type.singular(language))
    return frags["answer_yes" if is_positive else "answer_no"]


def render_verification_prompt(
    config: PromptConfig,
    entity_type: EntityType,
    candidate_mention: str,
    context_sentence: str,
    demos: Sequence[VerificationDemo],
    prompt_language: str,
    token_counter: TokenCounter | None = None,
) -> RenderedPrompt:
    """A yes/no prompt asking whether the candidate really is of the type.

    demos are (sentence, mention, is_positive) triples; at least one positive
    and one negative example are required so both answers are demonstrated.
    """
    if not config.self_verification:
        raise ConfigError("verification prompts require the self_verification feature")
    positives = sum(1 for _, _, pos in demos if pos)
    if positives == 0 or positives == len(demos):
        raise ConfigError(
            "verification demos must include at least one positive and one negative"
        )
    frags = fragments_for(prompt_language)
    singular = entity_type.singular(prompt_language)
    lines = [frags["verification_task"].format(singular=singular)]
    for sentence, mention, is_positive in demos:
        question = frags["verification_question"].format(
            sentence=sentence.text, mention=mention, singular=singular
        )
        answer = _verification_answer(frags, config, entity_type, prompt_language, mention, is_positive)
        lines.extend(_turn(frags, config, question, answer))
    final_question = frags["verification_question"].format(
        sentence=context_sentence, mention=candidate_mention, singular=singular
    )
    lines.extend(_turn(frags, config, final_question, None))
    text = "\n".join(lines)
    return RenderedPrompt(
        text=text,
        entity_type=entity_type.id,
        demonstrations=tuple(s.id for s, _, _ in demos),
        stop_sequences=stop_sequences_for(config, prompt_language),
        estimated_tokens=estimate_tokens(text, token_counter),
        kind="self_verification",
    )


def fit_to_budget(
    config: PromptConfig,
    entity_type: EntityType,
    ranked_demos: Sequence[AnnotatedSentence],
    test_text: str,
    prompt_language: str,
    budget: int,
    token_counter: TokenCounter | None = None,
    shuffle_seed: int | None = None,
) -> RenderedPrompt:
    """Render the main prompt, dropping demos until it fits the token budget.

    Demonstrations are dropped from the end of the selection-ranked list; the
    kept demos are then shuffled (when a seed is given) to fix prompt order.
    Raises ConfigError when even the scaffold without demonstrations exceeds
    the budget.
    """
    if budget < 1:
        raise ConfigError(f"token budget must be positive, got {budget}")
    for keep in range(len(ranked_demos), -1, -1):
        kept = list(ranked_demos[:keep])
        if shuffle_seed is not None:
            kept = rng.shuffled(kept, shuffle_seed)
        prompt = render_main_prompt(
            config, entity_type, kept, test_text, prompt_language,
            token_counter=token_counter, allow_empty_demos=True,
        )
        if prompt.estimated_tokens <= budget:
            dropped = len(ranked_demos) - keep
            if keep == 0:
                logger.warning(
                    "token budget %d leaves no room for demonstrations (entity type %s)",
                    budget, entity_type.id,
                )
            if dropped:
                return replace(prompt, dropped_demos=dropped)
            return prompt
    raise ConfigError(
        f"token budget {budget} is too small even for the prompt scaffold "
        f"(entity type {entity_type.id})"
    )
