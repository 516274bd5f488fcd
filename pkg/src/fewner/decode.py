"""Turn model completions back into entity spans.

Completions are treated as untrusted text: decoding never raises on
arbitrary input, and anything that cannot be mapped back onto the original
sentence is dropped and counted instead.

Only the text before the first stop-like boundary is decoded (a blank line
or a line starting with "Input:"), which guards against servers that ignore
stop sequences and hallucinate further exchanges.

Each extracted mention is located in the original sentence starting one
character past the previous successful match's start, so repeated surface
forms map to successive occurrences.  Localization has three stages of
increasing leniency: (a) exact substring search, (b) case-insensitive search
on lowercased copies, (c) whitespace-normalized case-insensitive search via
an escaped-token regex.  The recorded mention is always the original text
between the found offsets, so span invariants hold by construction.

A consequence of surface matching: when a completion tags a later occurrence
of a word whose earlier occurrences are untagged, the span lands on the
first occurrence.  This is inherent to decoding rewritten text and mirrors
the behavior of tag-based NER prompting generally.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from .corpus import EntitySpan
from .templates import TagPair

VERDICT_ACCEPT = "accept"
VERDICT_REJECT = "reject"
VERDICT_UNPARSEABLE = "unparseable"

_AFFIRMATIVE = {"yes", "oui", "sí"}
_NEGATIVE = {"no", "non"}

_WORD = re.compile(r"[^\W_]+", re.UNICODE)

# Stripped from both ends of listed mentions, after whitespace.
_EDGE_PUNCT = ".,;:!?\"'()[]{}«»¡¿…·-"


@dataclass
class DecodeDiagnostics:
    unbalanced_tags: int = 0
    unmatched_mentions: int = 0
    duplicate_mentions: int = 0
    unverified_kept: int = 0

    def __add__(self, other: "DecodeDiagnostics") -> "DecodeDiagnostics":
        return DecodeDiagnostics(
            unbalanced_tags=self.unbalanced_tags + other.unbalanced_tags,
            unmatched_mentions=self.unmatched_mentions + other.unmatched_mentions,
            duplicate_mentions=self.duplicate_mentions + other.duplicate_mentions,
            unverified_kept=self.unverified_kept + other.unverified_kept,
        )

    def to_dict(self) -> dict[str, int]:
        return {
            "unbalanced_tags": self.unbalanced_tags,
            "unmatched_mentions": self.unmatched_mentions,
            "duplicate_mentions": self.duplicate_mentions,
            "unverified_kept": self.unverified_kept,
        }


@dataclass(frozen=True)
class DecodeResult:
    spans: tuple[EntitySpan, ...]
    diagnostics: DecodeDiagnostics


def decodable_prefix(completion: str) -> str:
    """Text before the first blank line or 'Input:'-prefixed line."""
    body = completion.lstrip()
    kept = []
    for line in body.split("\n"):
        if line.strip() == "" or line.startswith("Input:"):
            break
        kept.append(line)
    return "\n".join(kept)


def _locate_mention(original: str, mention: str, search_from: int) -> tuple[int, int] | None:
    idx = original.find(mention, search_from)
    if idx != -1:
        return idx, idx + len(mention)
    idx = original.lower().find(mention.lower(), search_from)
    if idx != -1 and idx + len(mention) <= len(original):
        return idx, idx + len(mention)
    tokens = mention.lower().split()
    if tokens:
        pattern = re.compile(r"\s+".join(re.escape(t) for t in tokens), re.IGNORECASE)
        found = pattern.search(original, search_from)
        if found is not None and found.start() < found.end():
            return found.start(), found.end()
    return None


def _localize_all(
    mentions: list[str], original: str, entity_type: str, diagnostics: DecodeDiagnostics
) -> list[EntitySpan]:
    spans: list[EntitySpan] = []
    located_surfaces: set[str] = set()
    search_from = 0
    for mention in mentions:
        if mention.strip() == "":
            diagnostics.unmatched_mentions += 1
            continue
        place = _locate_mention(original, mention, search_from)
        if place is None:
            if mention in located_surfaces:
                diagnostics.duplicate_mentions += 1
            else:
                diagnostics.unmatched_mentions += 1
            continue
        start, end = place
        spans.append(EntitySpan(start, end, entity_type, original[start:end]))
        located_surfaces.add(mention)
        search_from = start + 1
    return spans


def decode_tagged(
    completion: str, original: str, tags: TagPair, entity_type: str
) -> DecodeResult:
    """Extract tag-wrapped mentions from a completion and map them to spans."""
    diagnostics = DecodeDiagnostics()
    text = decodable_prefix(completion)
    mentions: list[str] = []
    cursor = 0
    while True:
        i = text.find(tags.open, cursor)
        if i == -1:
            break
        after = i + len(tags.open)
        close_at = text.find(tags.close, after)
        next_open = text.find(tags.open, after)
        if close_at == -1:
            diagnostics.unbalanced_tags += 1
            cursor = after
            continue
        if next_open != -1 and next_open < close_at:
            diagnostics.unbalanced_tags += 1
            cursor = next_open
            continue
        mentions.append(text[after:close_at])
        cursor = close_at + len(tags.close)
    spans = _localize_all(mentions, original, entity_type, diagnostics)
    return DecodeResult(spans=tuple(spans), diagnostics=diagnostics)


def decode_listing(
    completion: str, original: str, separator: str, entity_type: str
) -> DecodeResult:
    """Split a listed completion into mentions and map them to spans.

    separator is "comma" or "newline"; items are trimmed of surrounding
    whitespace and punctuation, empties dropped.
    """
    diagnostics = DecodeDiagnostics()
    text = decodable_prefix(completion)
    raw_items = text.split("," if separator == "comma" else "\n")
    mentions = []
    for item in raw_items:
        cleaned = item.strip().strip(_EDGE_PUNCT).strip()
        if cleaned:
            mentions.append(cleaned)
    spans = _localize_all(mentions, original, entity_type, diagnostics)
    return DecodeResult(spans=tuple(spans), diagnostics=diagnostics)


def parse_verification(completion: str, long_form: bool = False) -> str:
    """Map a verification completion to accept/reject/unparseable.

    Only the first non-empty line is considered.  Affirmative and negative
    word tokens are matched case-insensitively in English, French and
    Spanish; a line containing both (or neither) is unparseable.  long_form
    is accepted for symmetry with rendering but the parse is identical: long
    answers end in ", yes."/", no." and contain the same tokens.
    """
    del long_form
    first_line = ""
    for line in completion.lstrip().split("\n"):
        if line.strip():
            first_line = line
            break
    tokens = {t.lower() for t in _WORD.findall(first_line)}
    saw_yes = bool(tokens & _AFFIRMATIVE)
    saw_no = bool(tokens & _NEGATIVE)
    if saw_yes == saw_no:
        return VERDICT_UNPARSEABLE
    return VERDICT_ACCEPT if saw_yes else VERDICT_REJECT


def apply_verification(result: DecodeResult, verdicts: list[str]) -> DecodeResult:
    """Filter decoded spans by their verification verdicts.

    Accepted and unparseable spans are kept (unparseable conservatively, and
    counted); rejected spans are dropped.  The verdict list must align
    one-to-one with result.spans.
    """
    if len(verdicts) != len(result.spans):
        raise ValueError(
            f"got {len(verdicts)} verdicts for {len(result.spans)} spans"
        )
    kept = []
    diagnostics = replace(result.diagnostics)
    for span, verdict in zip(result.spans, verdicts):
        if verdict == VERDICT_REJECT:
            continue
        if verdict == VERDICT_UNPARSEABLE:
            diagnostics.unverified_kept += 1
        elif verdict != VERDICT_ACCEPT:
            raise ValueError(f"unknown verdict {verdict!r}")
        kept.append(span)
    return DecodeResult(spans=tuple(kept), diagnostics=diagnostics)


@dataclass
class PredictionSet:
    """Decoded spans per sentence per entity type, with pooled diagnostics."""

    spans: dict[str, dict[str, tuple[EntitySpan, ...]]] = field(default_factory=dict)
    diagnostics: DecodeDiagnostics = field(default_factory=DecodeDiagnostics)

    def add(self, sentence_id: str, entity_type: str, result: DecodeResult) -> None:
        per_type = self.spans.setdefault(sentence_id, {})
        per_type[entity_type] = result.spans
        self.diagnostics = self.diagnostics + result.diagnostics

    def spans_for(self, sentence_id: str, entity_type: str) -> tuple[EntitySpan, ...]:
        return self.spans.get(sentence_id, {}).get(entity_type, ())

    def sentence_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.spans))

    def total_spans(self) -> int:
        return sum(
            len(spans) for per_type in self.spans.values() for spans in per_type.values()
        )

    def to_json(self) -> str:
        payload = {
            "diagnostics": self.diagnostics.to_dict(),
            "sentences": {
                sid: {
                    type_id: [
                        {"start": s.start, "end": s.end, "type": s.type, "mention": s.mention}
                        for s in spans
                    ]
                    for type_id, spans in sorted(per_type.items())
                }
                for sid, per_type in sorted(self.spans.items())
            },
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2)

    @classmethod
    def from_json(cls, raw: str) -> "PredictionSet":
        payload = json.loads(raw)
        out = cls()
        out.diagnostics = DecodeDiagnostics(**payload.get("diagnostics", {}))
        for sid, per_type in payload.get("sentences", {}).items():
            out.spans[sid] = {
                type_id: tuple(
                    EntitySpan(r["start"], r["end"], r["type"], r["mention"]) for r in rows
                )
                for type_id, rows in per_type.items()
            }
        return out
