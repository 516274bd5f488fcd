"""Independent reference implementation of tagged-completion decoding.

Written against the decoding contract before the production decoder, and
kept deliberately different in structure: tag occurrences are enumerated up
front (including overlapping ones, via lookahead regex) and walked with
bisect, instead of scanning with a moving cursor.  The fuzz suite asserts
byte-for-byte agreement between this module and fewner.decode.

Contract being implemented:

* Only text before the first stop-like boundary is decoded: leading
  whitespace is stripped, then lines are kept up to (excluding) the first
  line that is blank or starts with "Input:".
* An open tag with no close before the next open counts as unbalanced and
  is skipped.  A trailing open with no close at all is unbalanced too.
* Extracted mentions that are empty or whitespace-only are unmatched.
* Each mention is located in the original sentence searching from one past
  the previous successful match's start: (a) exact substring, then
  (b) case-insensitive via lowercased copies, then (c) whitespace-normalized
  and case-insensitive via an escaped-token regex.
* A mention that cannot be located counts as a duplicate when an identical
  extracted string was located before, as unmatched otherwise.
"""

from __future__ import annotations

import bisect
import re


def _all_positions(haystack: str, needle: str) -> list[int]:
    """Every occurrence position, overlapping ones included."""
    return [m.start() for m in re.finditer(f"(?=({re.escape(needle)}))", haystack)]


def _decodable_prefix(completion: str) -> str:
    body = completion.lstrip()
    kept = []
    for line in body.split("\n"):
        if line.strip() == "" or line.startswith("Input:"):
            break
        kept.append(line)
    return "\n".join(kept)


def _extract_mentions(text: str, open_tag: str, close_tag: str) -> tuple[list[str], int]:
    opens = _all_positions(text, open_tag)
    closes = _all_positions(text, close_tag)
    mentions: list[str] = []
    unbalanced = 0
    cursor = 0
    while True:
        oi = bisect.bisect_left(opens, cursor)
        if oi == len(opens):
            break
        start = opens[oi]
        after = start + len(open_tag)
        ci = bisect.bisect_left(closes, after)
        ni = bisect.bisect_left(opens, after)
        close_at = closes[ci] if ci < len(closes) else None
        next_open = opens[ni] if ni < len(opens) else None
        if close_at is None:
            unbalanced += 1
            cursor = after
            continue
        if next_open is not None and next_open < close_at:
            unbalanced += 1
            cursor = next_open
            continue
        mentions.append(text[after:close_at])
        cursor = close_at + len(close_tag)
    return mentions, unbalanced


def _locate(original: str, mention: str, search_from: int) -> tuple[int, int] | None:
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


def reference_decode_tagged(
    completion: str, original: str, open_tag: str, close_tag: str
) -> dict:
    """Returns {"spans": [(start, end)], "unbalanced": n, "unmatched": n,
    "duplicates": n} for comparison against the production decoder."""
    text = _decodable_prefix(completion)
    mentions, unbalanced = _extract_mentions(text, open_tag, close_tag)
    spans: list[tuple[int, int]] = []
    located_surfaces: set[str] = set()
    unmatched = 0
    duplicates = 0
    search_from = 0
    for mention in mentions:
        if mention.strip() == "":
            unmatched += 1
            continue
        place = _locate(original, mention, search_from)
        if place is None:
            if mention in located_surfaces:
                duplicates += 1
            else:
                unmatched += 1
            continue
        spans.append(place)
        located_surfaces.add(mention)
        search_from = place[0] + 1
    return {
        "spans": spans,
        "unbalanced": unbalanced,
        "unmatched": unmatched,
        "duplicates": duplicates,
    }
