"""Seeded synthetic clinical corpora for offline experiments and tests.

Sentences are assembled from closed word banks chosen so that decoding can
never mislocate a mention:

  * mention surfaces are single tokens, distinct within each sentence;
  * no mention surface occurs as a substring of any other word in the same
    language's banks (so a tagged mention matches exactly one position);
  * every sentence carries a unique record token, so sentence texts are
    unique corpus-wide.

The generator asserts the first two properties for every sentence it emits
rather than trusting the bank definitions.
"""

from __future__ import annotations

from . import rng
from .corpus import AnnotatedSentence, EntitySpan, EntityType, load_entity_types, validate_sentence
from .errors import ConfigError

FILLERS = {
    "en": (
        "the", "patient", "reported", "noted", "with", "after", "during",
        "morning", "evening", "repeat", "visit", "exam", "onset", "stable",
        "severe", "mild", "persistent", "and", "improved", "follow", "up",
    ),
    "fr": (
        "le", "patient", "signale", "pendant", "la", "visite", "matin",
        "soir", "traitement", "avec", "suivi", "stable", "et", "examen",
        "persistant", "depuis", "mois", "notable", "malgré", "retour",
    ),
    "es": (
        "el", "paciente", "refiere", "durante", "la", "visita", "tarde",
        "tras", "tratamiento", "con", "seguimiento", "estable", "y",
        "examen", "persistente", "desde", "meses", "notable", "mejora",
    ),
}

MENTION_BANKS = {
    "en": {
        "DISO": (
            "dyspnea", "vertigo", "migraine", "nausea", "insomnia",
            "angina", "eczema", "asthma", "fatigue", "anemia",
        ),
        "CHEM": (
            "ibuprofen", "warfarin", "insulin", "morphine", "heparin",
            "lisinopril", "metformin", "prednisone", "aspirin", "codeine",
        ),
        "ANAT": (
            "femur", "aorta", "retina", "larynx", "spleen",
            "cornea", "tibia", "sternum", "pelvis", "thorax",
        ),
    },
    "fr": {
        "DISO": (
            "vertige", "migraine", "insomnie", "eczéma", "asthme",
            "anémie", "dyspnée", "angine", "mycose", "fièvre",
        ),
        "CHEM": (
            "ibuprofène", "warfarine", "insuline", "morphine", "héparine",
            "lisinopril", "metformine", "prednisone", "aspirine", "codéine",
        ),
        "ANAT": (
            "fémur", "aorte", "rétine", "larynx", "plèvre",
            "cornée", "tibia", "sternum", "bassin", "thorax",
        ),
    },
    "es": {
        "DISO": (
            "vértigo", "migraña", "insomnio", "eccema", "asma",
            "anemia", "disnea", "angina", "micosis", "fiebre",
        ),
        "CHEM": (
            "ibuprofeno", "warfarina", "insulina", "morfina", "heparina",
            "lisinopril", "metformina", "prednisona", "aspirina", "codeína",
        ),
        "ANAT": (
            "fémur", "aorta", "retina", "laringe", "bazo",
            "córnea", "tibia", "esternón", "pelvis", "tórax",
        ),
    },
}

_checked_languages: set[str] = set()


def _check_banks(language: str) -> None:
    """No mention surface may be a substring of any other bank word."""
    if language in _checked_languages:
        return
    mentions = [m for bank in MENTION_BANKS[language].values() for m in bank]
    others = list(mentions) + list(FILLERS[language])
    for m in mentions:
        for other in others:
            if m != other and m in other:
                raise AssertionError(
                    f"bank word {other!r} contains mention {m!r}; decoding could mislocate"
                )
    _checked_languages.add(language)


def _assert_safe(sentence: AnnotatedSentence) -> None:
    for span in sentence.spans:
        count = sentence.text.count(span.mention)
        matching = sum(1 for s in sentence.spans if s.mention == span.mention)
        assert count == matching == 1, (
            f"{sentence.id}: surface {span.mention!r} occurs {count} times "
            f"for {matching} spans"
        )


def synthetic_corpus(
    n_sentences: int,
    seed: int,
    language: str = "en",
    type_ids: tuple[str, ...] = ("DISO", "CHEM"),
    max_mentions: int = 3,
) -> tuple[list[AnnotatedSentence], list[EntityType]]:
    """A deterministic annotated corpus with the safety properties above.

    Each sentence holds 0..max_mentions mentions spread over type_ids.
    Returns the sentences together with the matching entity type records.
    """
    if language not in MENTION_BANKS:
        raise ConfigError(f"no synthetic banks for language {language!r}")
    unknown = [t for t in type_ids if t not in MENTION_BANKS[language]]
    if unknown:
        raise ConfigError(f"no synthetic banks for entity types {unknown}")
    if n_sentences < 1:
        raise ConfigError(f"need at least one sentence, got {n_sentences}")
    _check_banks(language)
    registry = load_entity_types()
    types = [registry[t] for t in type_ids]
    fillers = FILLERS[language]
    sentences = []
    for i in range(n_sentences):
        gen = rng.SplitMix64(rng.stable_seed(seed, "s", i))
        total = gen.randrange(max_mentions + 1)
        per_type = {t: 0 for t in type_ids}
        for _ in range(total):
            per_type[type_ids[gen.randrange(len(type_ids))]] += 1
        picked: list[tuple[str, str]] = []
        for tid, count in per_type.items():
            bank = MENTION_BANKS[language][tid]
            for surface in rng.pick_first_k(
                bank, min(count, len(bank)), rng.stable_seed(seed, "m", i, tid)
            ):
                picked.append((surface, tid))
        picked = rng.shuffled(picked, rng.stable_seed(seed, "o", i))

        tokens: list[tuple[str, str | None]] = [(f"r{i:04d}", None)]
        for _ in range(2):
            tokens.append((fillers[gen.randrange(len(fillers))], None))
        for surface, tid in picked:
            tokens.append((fillers[gen.randrange(len(fillers))], None))
            tokens.append((surface, tid))
        tokens.append((fillers[gen.randrange(len(fillers))], None))

        parts = []
        spans = []
        pos = 0
        for word, tid in tokens:
            if parts:
                pos += 1  # the joining space
            if tid is not None:
                spans.append(EntitySpan(pos, pos + len(word), tid, word))
            parts.append(word)
            pos += len(word)
        sentence = AnnotatedSentence(
            id=f"syn-{language}-{i:04d}",
            text=" ".join(parts),
            spans=tuple(sorted(spans, key=lambda s: s.start)),
            language=language,
        )
        validate_sentence(sentence)
        _assert_safe(sentence)
        sentences.append(sentence)
    return sentences, types
