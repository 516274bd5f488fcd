"""Completion backends: an OpenAI-compatible HTTP client, deterministic
offline mocks, and caching/counting wrappers.

All backends answer GenerationRequests with plain completion strings.  The
mocks never look at anything but the prompt text, so they exercise exactly
the same prompt-rendering and decoding paths as a real server.

Mock limitations (deliberate, to keep them simple): sentence texts must be
unique within the corpus handed to OracleBackend; mention surfaces and
sentence texts must not contain double quotes; and listing prompts with the
newline separator are only recognized when a header or intro sentence names
the separator, and are not supported together with the dialogue template
(a multi-line answer would break the turn shape anyway).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

from . import rng
from .corpus import AnnotatedSentence, EntitySpan, EntityType
from .errors import ConfigError, ProtocolError, TransportError
from .templates import ALT_TAGS, DEFAULT_TAGS, fragments, outermost_spans, tag_sentence

logger = logging.getLogger(__name__)

ENV_API_BASE = "FEWNER_API_BASE"
ENV_API_KEY = "FEWNER_API_KEY"

_WORD = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_new_tokens: int
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()
    model_name: str = ""


@dataclass(frozen=True)
class GenerationRecord:
    request_hash: str
    completion: str
    latency_s: float
    backend_id: str
    timestamp: float


def request_digest(request: GenerationRequest) -> str:
    """Stable cache key: sha256 over the canonical JSON of all request fields."""
    payload = {
        "prompt": request.prompt,
        "max_new_tokens": request.max_new_tokens,
        "temperature": request.temperature,
        "stop_sequences": list(request.stop_sequences),
        "model_name": request.model_name,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def truncate_at_stop(text: str, stop_sequences: tuple[str, ...]) -> str:
    """Cut text at the earliest occurrence of any stop sequence."""
    cut = len(text)
    for stop in stop_sequences:
        idx = text.find(stop)
        if idx != -1 and idx < cut:
            cut = idx
    return text[:cut]


class CompletionBackend(Protocol):
    backend_id: str

    def generate(self, request: GenerationRequest) -> str: ...


# ---------------------------------------------------------------------------
# HTTP


# transport(url, headers, payload, timeout_s) -> (status_code, body_text)
Transport = Callable[[str, dict[str, str], dict, float], tuple[int, str]]


def _requests_transport(
    url: str, headers: dict[str, str], payload: dict, timeout_s: float
) -> tuple[int, str]:
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout_s)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    return resp.status_code, resp.text


class HttpCompletionBackend:
    """Client for an OpenAI-compatible /v1/completions endpoint.

    Retries transport failures and 429/5xx responses with exponential
    backoff; other non-200 responses fail immediately.  A semaphore caps
    in-flight requests (default 1: strictly sequential).  Stop sequences are
    sent to the server and re-applied client-side, since some servers ignore
    them.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model_name: str = "",
        transport: Transport | None = None,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        max_in_flight: int = 1,
    ):
        if not base_url:
            raise ConfigError("the HTTP backend needs a non-empty base URL")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model_name = model_name
        self.backend_id = f"http:{model_name or self.base_url}"
        self._transport = transport or _requests_transport
        self._max_retries = max_retries
        self._backoff_s = backoff_s
        self._timeout_s = timeout_s
        self._gate = threading.Semaphore(max_in_flight)

    @classmethod
    def from_env(cls, model_name: str = "", **kwargs) -> "HttpCompletionBackend":
        base = os.environ.get(ENV_API_BASE, "")
        if not base:
            raise ConfigError(f"set {ENV_API_BASE} to use the HTTP backend")
        return cls(base, api_key=os.environ.get(ENV_API_KEY), model_name=model_name, **kwargs)

    def _payload(self, request: GenerationRequest) -> dict:
        payload = {
            "model": request.model_name or self.model_name,
            "prompt": request.prompt,
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        return payload

    def generate(self, request: GenerationRequest) -> str:
        url = self.base_url + "/v1/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(request)
        with self._gate:
            last_error: Exception | None = None
            for attempt in range(self._max_retries + 1):
                if attempt:
                    delay = self._backoff_s * 2 ** (attempt - 1)
                    logger.warning("retrying completion request in %.1fs", delay)
                    time.sleep(delay)
                try:
                    status, body = self._transport(url, headers, payload, self._timeout_s)
                except TransportError as exc:
                    last_error = exc
                    continue
                if status == 429 or status >= 500:
                    last_error = ProtocolError(
                        "server busy or failing", status=status, body_excerpt=body[:200]
                    )
                    continue
                if status != 200:
                    raise ProtocolError(
                        "completion request rejected", status=status, body_excerpt=body[:200]
                    )
                return self._parse_body(body, request)
        assert last_error is not None
        raise last_error

    def _parse_body(self, body: str, request: GenerationRequest) -> str:
        try:
            parsed = json.loads(body)
            text = parsed["choices"][0]["text"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(
                f"malformed completion response: {exc}", body_excerpt=body[:200]
            ) from exc
        if not isinstance(text, str):
            raise ProtocolError("completion text is not a string", body_excerpt=body[:200])
        return truncate_at_stop(text, request.stop_sequences)


# ---------------------------------------------------------------------------
# Deterministic mocks


def _final_input_text(prompt: str) -> str:
    """The test slot content: the last Input line, or the last dash line."""
    lines = prompt.rstrip("\n").split("\n")
    if lines[-1].strip() == "-":
        return lines[-2][2:] if lines[-2].startswith("- ") else lines[-2]
    # Classic layout: final line is a bare output label, test input before it.
    if len(lines) < 2 or ":" not in lines[-2]:
        return ""
    return lines[-2].split(":", 1)[1].lstrip()


class EchoBackend:
    """Returns the test sentence untagged: a model that never finds entities."""

    backend_id = "echo"

    def generate(self, request: GenerationRequest) -> str:
        return _final_input_text(request.prompt)


def _turn_pairs(prompt: str, input_label: str, output_label: str) -> list[tuple[str, str]]:
    """(input, output) demonstration pairs, in both turn layouts.

    The final test turn is not a pair and is excluded.  In the dialogue
    layout an empty output renders as a bare dash, which counts as "".
    """
    lines = prompt.rstrip("\n").split("\n")
    pairs: list[tuple[str, str]] = []
    if lines[-1].strip() == "-":
        items = [
            "" if ln.strip() == "-" else ln[2:]
            for ln in lines
            if ln.strip() == "-" or ln.startswith("- ")
        ]
        items = items[:-2]  # drop the test input and its empty answer slot
        for i in range(0, len(items) - 1, 2):
            pairs.append((items[i], items[i + 1]))
        return pairs
    for i, line in enumerate(lines[:-2]):
        if line.startswith(input_label) and lines[i + 1].startswith(output_label):
            pairs.append(
                (
                    line[len(input_label):].lstrip(),
                    lines[i + 1][len(output_label):].lstrip(),
                )
            )
    return pairs


class OracleBackend:
    """Answers prompts from gold annotations, inferring the task from the
    prompt text alone.

    Tagging prompts get the test sentence with gold outermost spans tagged,
    listing prompts the separator-joined gold mentions, verification prompts
    Yes or No (in the prompt's language) by gold membership of the candidate
    mention.  Subclasses can perturb the answered span set by overriding
    _spans_for_answer.
    """

    backend_id = "oracle"

    def __init__(self, sentences: list[AnnotatedSentence], entity_types: list[EntityType]):
        self._by_text: dict[str, AnnotatedSentence] = {}
        for s in sentences:
            if s.text in self._by_text:
                raise ConfigError(
                    f"oracle backend needs unique sentence texts; {s.id!r} duplicates one"
                )
            self._by_text[s.text] = s
        self._types = {t.id: t for t in entity_types}
        frags = fragments()
        # (plural, language, type) sorted longest-first so e.g. a type whose
        # plural embeds another's never resolves to the shorter name.
        self._plurals: list[tuple[str, str, str]] = sorted(
            (
                (t.names[lang]["plural"], lang, t.id)
                for t in entity_types
                for lang in t.languages()
            ),
            key=lambda item: (-len(item[0]), item[1], item[2]),
        )
        self._verification_headers = {
            lang: frags[lang]["verification_task"].split("{singular}")[0]
            for lang in frags
        }
        self._question_parts = {
            lang: _question_markers(frags[lang]["verification_question"])
            for lang in frags
        }
        self._listing_markers = {
            lang: frags[lang]["task_listing"].split("{plural}")[0] for lang in frags
        }
        self._newline_names = {
            lang: frags[lang]["separator_newline"] for lang in frags
        }
        self._labels = {
            lang: (frags[lang]["input_label"], frags[lang]["output_label"])
            for lang in frags
        }
        self._answers = {
            lang: (frags[lang]["answer_no"], frags[lang]["answer_yes"]) for lang in frags
        }

    # Overridden by noisy variants.
    def _spans_for_answer(
        self, sentence: AnnotatedSentence, type_id: str
    ) -> list[EntitySpan]:
        return sorted(sentence.spans_of(type_id), key=lambda s: (s.start, s.end))

    def _sentence(self, text: str) -> AnnotatedSentence:
        try:
            return self._by_text[text]
        except KeyError:
            raise ConfigError(f"oracle backend does not know the sentence {text!r}") from None

    def generate(self, request: GenerationRequest) -> str:
        prompt = request.prompt
        for lang, header in self._verification_headers.items():
            if prompt.startswith(header):
                return self._answer_verification(prompt, lang)
        return self._answer_main(prompt)

    def _answer_verification(self, prompt: str, lang: str) -> str:
        prefix, mid, tail_strip = self._question_parts[lang]
        start = prompt.rfind(prefix)
        if start == -1:
            raise ConfigError("verification prompt without a final question")
        segment = prompt[start + len(prefix):]
        sent_end = segment.find(mid)
        sentence_text = segment[:sent_end]
        rest = segment[sent_end + len(mid):]
        mention_end = rest.find('"')
        mention = rest[:mention_end]
        tail = rest[mention_end + 1:].split("\n")[0].strip().rstrip("?").strip()
        if tail_strip and tail.startswith(tail_strip):
            tail = tail[len(tail_strip):]
        type_id = self._type_by_singular(tail, lang)
        sentence = self._sentence(sentence_text)
        gold = any(sp.mention == mention for sp in sentence.spans_of(type_id))
        return self._answers[lang][int(gold)]

    def _type_by_singular(self, tail: str, lang: str) -> str:
        for t in self._types.values():
            if lang in t.languages() and t.names[lang]["singular"] == tail:
                return t.id
        raise ConfigError(f"no entity type has the {lang} singular name {tail!r}")

    def _answer_main(self, prompt: str) -> str:
        first_line = prompt.split("\n", 1)[0]
        for plural, lang, type_id in self._plurals:
            if plural in first_line:
                break
        else:
            raise ConfigError("prompt names no known entity type on its first line")
        tags = ALT_TAGS if ALT_TAGS.open in prompt else DEFAULT_TAGS
        input_label, output_label = self._labels[lang]
        pairs = _turn_pairs(prompt, input_label, output_label)
        test_text = _final_input_text(prompt)
        sentence = self._sentence(test_text)
        spans = self._spans_for_answer(sentence, type_id)
        if self._is_listing(prompt, first_line, pairs, tags):
            sep = "\n" if self._newline_names[lang] in prompt else ", "
            return sep.join(sp.mention for sp in outermost_spans(spans))
        return tag_sentence(sentence.text, outermost_spans(spans), tags)

    def _is_listing(
        self,
        prompt: str,
        first_line: str,
        pairs: list[tuple[str, str]],
        tags,
    ) -> bool:
        for marker in self._listing_markers.values():
            if first_line.startswith(marker):
                return True
        if tags.open in prompt:
            return False
        if any(out == inp and out for inp, out in pairs):
            # Untagged passthrough only happens in tagging mode.
            return False
        # Remaining evidence: demo outputs that are neither tagged text nor
        # the input itself.  Tagging outputs are never empty, so even
        # all-empty outputs imply listing.  With no demos at all, assume
        # tagging (the default mode).
        return bool(pairs)


def _question_markers(template: str) -> tuple[str, str, str]:
    """(prefix-before-sentence, marker-between-sentence-and-mention,
    word to strip from the head of the trailing singular)."""
    before_sentence, after = template.split("{sentence}", 1)
    between, tail = after.split("{mention}", 1)
    # tail looks like '" {singular}?' or '" est {singular} ?'
    lead = tail[1:].split("{singular}")[0].strip()
    return before_sentence, between, (lead + " " if lead else "")


class NoisyOracleBackend(OracleBackend):
    """Oracle whose main answers drop gold spans and add spurious ones with
    fixed probabilities.

    Every decision is a pure function of (seed, sentence id, type, span), so
    answers are identical regardless of request order or caching.
    Verification answers stay truthful to gold.
    """

    def __init__(
        self,
        sentences: list[AnnotatedSentence],
        entity_types: list[EntityType],
        seed: int,
        drop_prob: float = 0.0,
        spurious_prob: float = 0.0,
    ):
        super().__init__(sentences, entity_types)
        if not 0.0 <= drop_prob <= 1.0 or not 0.0 <= spurious_prob <= 1.0:
            raise ConfigError("noise probabilities must be within [0, 1]")
        self.backend_id = f"noisy-oracle:{seed}:{drop_prob}:{spurious_prob}"
        self._seed = seed
        self._drop_prob = drop_prob
        self._spurious_prob = spurious_prob

    def _spans_for_answer(
        self, sentence: AnnotatedSentence, type_id: str
    ) -> list[EntitySpan]:
        kept = [
            sp
            for sp in super()._spans_for_answer(sentence, type_id)
            if rng.unit_uniform(self._seed, "drop", sentence.id, type_id, sp.start, sp.end)
            >= self._drop_prob
        ]
        if (
            self._spurious_prob > 0.0
            and rng.unit_uniform(self._seed, "spur", sentence.id, type_id)
            < self._spurious_prob
        ):
            gold = sentence.spans_of(type_id)
            candidates = [
                (m.start(), m.end(), m.group())
                for m in _WORD.finditer(sentence.text)
                if not any(sp.start < m.end() and m.start() < sp.end for sp in gold)
            ]
            if candidates:
                pick = int(
                    rng.unit_uniform(self._seed, "spurpick", sentence.id, type_id)
                    * len(candidates)
                )
                start, end, surface = candidates[min(pick, len(candidates) - 1)]
                kept.append(EntitySpan(start, end, type_id, surface))
        return sorted(kept, key=lambda s: (s.start, s.end))


def make_noisy_oracle(
    sentences: list[AnnotatedSentence],
    entity_types: list[EntityType],
    seed: int,
    drop_prob: float = 0.0,
    spurious_prob: float = 0.0,
) -> NoisyOracleBackend:
    return NoisyOracleBackend(sentences, entity_types, seed, drop_prob, spurious_prob)


# ---------------------------------------------------------------------------
# Wrappers


class CountingBackend:
    """Wrapper counting how many requests reach the wrapped backend."""

    def __init__(self, inner: CompletionBackend):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> str:
        with self._lock:
            self.calls += 1
        return self.inner.generate(request)


class MemoryCache:
    """In-process record store, mainly for tests."""

    def __init__(self):
        self._store: dict[str, GenerationRecord] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> GenerationRecord | None:
        record = self._store.get(key)
        if record is None:
            self.misses += 1
        else:
            self.hits += 1
        return record

    def put(self, key: str, record: GenerationRecord) -> None:
        self._store[key] = record

    def __len__(self) -> int:
        return len(self._store)


class DiskCache:
    """One JSON file per request digest.

    Corrupt entries are logged and treated as misses, then overwritten by
    the fresh result; they never poison a run.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> GenerationRecord | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            return GenerationRecord(
                request_hash=payload["request_hash"],
                completion=payload["completion"],
                latency_s=payload["latency_s"],
                backend_id=payload["backend_id"],
                timestamp=payload["timestamp"],
            )
        except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError) as exc:
            logger.warning("ignoring corrupt cache entry %s: %s", path, exc)
            return None

    def put(self, key: str, record: GenerationRecord) -> None:
        path = self._path(key)
        payload = {
            "request_hash": record.request_hash,
            "completion": record.completion,
            "latency_s": record.latency_s,
            "backend_id": record.backend_id,
            "timestamp": record.timestamp,
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2),
            encoding="utf-8",
        )
        tmp.replace(path)

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


class CachedBackend:
    """Memoizes completions by request digest.

    Identical concurrent requests are serialized by a per-key lock, so the
    wrapped backend sees each distinct request at most once per cache
    lifetime.
    """

    def __init__(self, inner: CompletionBackend, cache):
        self.inner = inner
        self.cache = cache
        self.backend_id = f"cached:{inner.backend_id}"
        self._locks: dict[str, threading.Lock] = {}
        self._master = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._master:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock

    def generate(self, request: GenerationRequest) -> str:
        key = request_digest(request)
        with self._lock_for(key):
            record = self.cache.get(key)
            if record is not None:
                return record.completion
            started = time.monotonic()
            completion = self.inner.generate(request)
            record = GenerationRecord(
                request_hash=key,
                completion=completion,
                latency_s=time.monotonic() - started,
                backend_id=self.inner.backend_id,
                timestamp=time.time(),
            )
            self.cache.put(key, record)
            return completion
