"""Prompt pipeline, leave-one-out scoring, and feature search.

With only k annotated sentences there is no development set, so feature
combinations are scored by leave-one-out cross-validation over those k
sentences: each fold holds one sentence out, prompts are built from the
remaining k-1, and the pooled span counts across all folds and entity types
give one micro-F1 per configuration.

Two searches share that scorer.  The greedy search toggles the nine binary
features one at a time in their fixed order and keeps a toggle only when it
strictly improves micro-F1, costing at most ten evaluations.  The exhaustive
grid scores all 512 combinations and is therefore gated behind an explicit
acknowledgement flag.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field

from . import rng, selection
from .backend import CompletionBackend, CountingBackend, GenerationRequest
from .corpus import AnnotatedSentence, EntityType
from .decode import (
    DecodeResult,
    PredictionSet,
    apply_verification,
    decode_listing,
    decode_tagged,
    parse_verification,
)
from .errors import ConfigError
from .evaluation import f1_from_counts, span_match_counts
from .selection import TfidfIndex
from .templates import (
    FEATURE_NAMES,
    PromptConfig,
    RenderedPrompt,
    VerificationDemo,
    estimate_tokens,
    fit_to_budget,
    render_verification_prompt,
)

_WORD_LIMIT_PAD = 32
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class PipelineSettings:
    """Knobs that stay fixed while configurations vary.

    prompt_language is the corpus's native language; prompts render in it
    only when a configuration enables prompt_language_native, and in English
    otherwise.
    """

    prompt_language: str = "en"
    model_name: str = ""
    token_budget: int = 4096
    max_new_tokens: int | None = None  # None: sized from the test sentence
    seed: int = 0  # ties demo ordering and verification picks to the sample


@dataclass(frozen=True)
class TraceEntry:
    bitmask: int
    features: tuple[str, ...]
    micro_f1: float


@dataclass
class SearchTrace:
    """What a search tried and what it cost.

    wall_clock_seconds is deliberately excluded from to_json so the artifact
    is byte-identical across reruns; timing belongs in run metadata.
    """

    evaluations: list[TraceEntry] = field(default_factory=list)
    accepted_features: tuple[str, ...] = ()
    total_backend_calls: int = 0
    wall_clock_seconds: float = 0.0

    def to_json(self) -> str:
        payload = {
            "evaluations": [
                {
                    "bitmask": e.bitmask,
                    "features": list(e.features),
                    "micro_f1": e.micro_f1,
                }
                for e in self.evaluations
            ],
            "accepted_features": list(self.accepted_features),
            "total_backend_calls": self.total_backend_calls,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2)


class PromptingPipeline:
    """Select demos, render prompts, call the backend, decode spans.

    corpus is the k-sentence annotated sample; every prompt for a held-out
    or unseen sentence draws its demonstrations from it.  The backend is
    wrapped in a counter so searches can report how many requests they
    issued (a cache below the counter still sees all of them).

    observer, when set, is called as observer(rendered_prompt, held_out_id)
    for every prompt before it is sent; tests use it to check that held-out
    text never appears among demonstrations.
    """

    def __init__(
        self,
        corpus: list[AnnotatedSentence],
        entity_types: list[EntityType],
        backend: CompletionBackend,
        settings: PipelineSettings | None = None,
        observer=None,
    ):
        if not corpus:
            raise ConfigError("the pipeline needs at least one annotated sentence")
        self.corpus = sorted(corpus, key=lambda s: s.id)
        self.corpus_by_id = {s.id: s for s in self.corpus}
        if len(self.corpus_by_id) != len(corpus):
            raise ConfigError("duplicate sentence ids in the annotated sample")
        self.entity_types = list(entity_types)
        self.backend = CountingBackend(backend)
        self.settings = settings or PipelineSettings()
        self.observer = observer
        # One TF-IDF index per held-out id (None: the full corpus), built on
        # first use; fold pools never change within a pipeline's lifetime.
        self._indexes: dict[str | None, TfidfIndex] = {}

    @property
    def backend_calls(self) -> int:
        return self.backend.calls

    def _language(self, config: PromptConfig) -> str:
        return self.settings.prompt_language if config.prompt_language_native else "en"

    def _pool(self, held_out_id: str | None) -> list[AnnotatedSentence]:
        return [s for s in self.corpus if s.id != held_out_id]

    def _index(self, held_out_id: str | None) -> TfidfIndex:
        index = self._indexes.get(held_out_id)
        if index is None:
            index = selection.build_index(self._pool(held_out_id))
            self._indexes[held_out_id] = index
        return index

    def _generate(self, prompt: RenderedPrompt, test_text: str, held_out_id: str | None) -> str:
        if self.observer is not None:
            self.observer(prompt, held_out_id)
        request = GenerationRequest(
            prompt=prompt.text,
            max_new_tokens=self._max_new_tokens(test_text),
            temperature=0.0,
            stop_sequences=prompt.stop_sequences,
            model_name=self.settings.model_name,
        )
        return self.backend.generate(request)

    def _max_new_tokens(self, test_text: str) -> int:
        if self.settings.max_new_tokens is not None:
            return self.settings.max_new_tokens
        # Room for the answer: a tagged copy of the test sentence plus slack.
        return 2 * estimate_tokens(test_text) + _WORD_LIMIT_PAD

    def _verification_demos(
        self, demos: list[AnnotatedSentence], entity_type: EntityType
    ) -> list[VerificationDemo] | None:
        """Alternating yes/no examples drawn from the main demonstrations.

        Positives quote a gold mention, negatives a word of the sentence
        outside any gold span of the type; both picks are seeded.  Returns
        None when either side has no example to offer.
        """
        p = self.settings.seed
        positives: list[VerificationDemo] = []
        negatives: list[VerificationDemo] = []
        for s in demos:
            golds = s.spans_of(entity_type.id)
            if golds:
                pick = rng.SplitMix64(
                    rng.stable_seed(p, "vpos", s.id, entity_type.id)
                ).randrange(len(golds))
                positives.append((s, golds[pick].mention, True))
            gold_surfaces = {sp.mention for sp in golds}
            tokens = [
                (m.start(), m.group())
                for m in _WORD.finditer(s.text)
                if not any(sp.start <= m.start() < sp.end for sp in golds)
                and m.group() not in gold_surfaces
            ]
            if tokens:
                pick = rng.SplitMix64(
                    rng.stable_seed(p, "vneg", s.id, entity_type.id)
                ).randrange(len(tokens))
                negatives.append((s, tokens[pick][1], False))
        if not positives or not negatives:
            return None
        out: list[VerificationDemo] = []
        for pos, neg in zip(positives, negatives):
            out.extend((pos, neg))
        longer = positives[len(negatives):] or negatives[len(positives):]
        out.extend(longer)
        return out[: max(2, len(demos))]

    def _verify(
        self,
        config: PromptConfig,
        entity_type: EntityType,
        result: DecodeResult,
        test_text: str,
        demos: list[AnnotatedSentence],
        held_out_id: str | None,
    ) -> DecodeResult:
        if not result.spans:
            return result
        vdemos = self._verification_demos(demos, entity_type)
        if vdemos is None:
            result.diagnostics.unverified_kept += len(result.spans)
            return result
        verdicts = []
        for span in result.spans:
            prompt = render_verification_prompt(
                config,
                entity_type,
                span.mention,
                test_text,
                vdemos,
                self._language(config),
            )
            completion = self._generate(prompt, test_text, held_out_id)
            verdicts.append(
                parse_verification(completion, config.long_verification_answer)
            )
        return apply_verification(result, verdicts)

    def annotate(
        self,
        config: PromptConfig,
        entity_type: EntityType,
        test_text: str,
        test_id: str,
        held_out_id: str | None = None,
    ) -> DecodeResult:
        """Predict spans of one type for one sentence.

        held_out_id removes that sentence from the demonstration pool (the
        LOOCV case); the returned spans refer to offsets in test_text.
        """
        pool = self._pool(held_out_id)
        n = min(config.effective_demo_count, len(pool))
        if config.self_verification:
            demo_ids = selection.select_entity_rich(pool, entity_type.id, n)
        else:
            demo_ids = selection.select_nearest(self._index(held_out_id), test_text, n)
        by_id = self.corpus_by_id
        demos = [by_id[sid] for sid in demo_ids]
        prompt = fit_to_budget(
            config,
            entity_type,
            demos,
            test_text,
            self._language(config),
            self.settings.token_budget,
            shuffle_seed=rng.stable_seed(self.settings.seed, test_id, entity_type.id),
        )
        completion = self._generate(prompt, test_text, held_out_id)
        if config.mode == "tagging":
            result = decode_tagged(completion, test_text, config.tag_pair, entity_type.id)
        else:
            result = decode_listing(
                completion, test_text, config.listing_separator, entity_type.id
            )
        if config.self_verification:
            result = self._verify(
                config, entity_type, result, test_text, demos, held_out_id
            )
        return result

    def evaluate_loocv(self, config: PromptConfig) -> float:
        """Micro-F1 of config under leave-one-out over the annotated sample."""
        if len(self.corpus) < 2:
            raise ConfigError("leave-one-out needs at least two annotated sentences")
        tp = fp = fn = 0
        for sentence in self.corpus:
            for entity_type in self.entity_types:
                result = self.annotate(
                    config,
                    entity_type,
                    sentence.text,
                    sentence.id,
                    held_out_id=sentence.id,
                )
                dtp, dfp, dfn = span_match_counts(
                    result.spans, sentence.spans_of(entity_type.id)
                )
                tp, fp, fn = tp + dtp, fp + dfp, fn + dfn
        return f1_from_counts(tp, fp, fn)[2]

    def predict(
        self, config: PromptConfig, test_sentences: list[AnnotatedSentence]
    ) -> PredictionSet:
        """Annotate unseen sentences with every entity type, pooling demos
        from the whole annotated sample."""
        predictions = PredictionSet()
        for sentence in test_sentences:
            for entity_type in self.entity_types:
                result = self.annotate(config, entity_type, sentence.text, sentence.id)
                predictions.add(sentence.id, entity_type.id, result)
        return predictions


def _run_and_trace(score_fn, config: PromptConfig, trace: SearchTrace) -> float:
    micro = score_fn(config)
    trace.evaluations.append(
        TraceEntry(config.bitmask, config.enabled_features(), micro)
    )
    return micro


def greedy_search(
    pipeline: PromptingPipeline | None,
    base: PromptConfig | None = None,
    score_fn=None,
    second_pass: bool = False,
) -> tuple[PromptConfig, SearchTrace]:
    """Feature-by-feature hill climb from the base configuration.

    Each of the nine features is toggled once, in their fixed order, and the
    toggle is kept only when micro-F1 strictly improves: ties and losses
    roll back.  At most 1 + 9 evaluations (plus up to 9 more with
    second_pass, which retries the features rejected in the first sweep).
    """
    if pipeline is None and score_fn is None:
        raise ConfigError("greedy search needs a pipeline or an explicit scorer")
    score_fn = score_fn or pipeline.evaluate_loocv
    base = base or PromptConfig()
    calls_before = pipeline.backend_calls if pipeline is not None else 0
    started = time.monotonic()
    trace = SearchTrace()
    current = base
    best = _run_and_trace(score_fn, base, trace)
    for name in FEATURE_NAMES:
        candidate = current.with_features(**{name: not current.feature(name)})
        micro = _run_and_trace(score_fn, candidate, trace)
        if micro > best:
            current, best = candidate, micro
    if second_pass:
        for name in FEATURE_NAMES:
            if current.feature(name) != base.feature(name):
                continue
            candidate = current.with_features(**{name: not current.feature(name)})
            micro = _run_and_trace(score_fn, candidate, trace)
            if micro > best:
                current, best = candidate, micro
    trace.accepted_features = tuple(
        name for name in FEATURE_NAMES if current.feature(name) != base.feature(name)
    )
    trace.wall_clock_seconds = time.monotonic() - started
    if pipeline is not None:
        trace.total_backend_calls = pipeline.backend_calls - calls_before
    return current, trace


def grid_search(
    pipeline: PromptingPipeline | None,
    base: PromptConfig | None = None,
    score_fn=None,
    acknowledge_cost: bool = False,
) -> tuple[PromptConfig, SearchTrace]:
    """Exhaustive scan of all 512 feature combinations.

    The bitmasks are visited in ascending order and only a strictly better
    micro-F1 displaces the incumbent, so ties resolve to the smallest mask.
    The cost is 512 full leave-one-out evaluations; pass
    acknowledge_cost=True to confirm that is intended.
    """
    if not acknowledge_cost:
        raise ConfigError(
            "grid search evaluates all 512 feature combinations; "
            "pass acknowledge_cost=True (or --acknowledge-cost) to proceed"
        )
    if pipeline is None and score_fn is None:
        raise ConfigError("grid search needs a pipeline or an explicit scorer")
    score_fn = score_fn or pipeline.evaluate_loocv
    base = base or PromptConfig()
    rest = {
        "mode": base.mode,
        "listing_separator": base.listing_separator,
        "base_demo_count": base.base_demo_count,
    }
    calls_before = pipeline.backend_calls if pipeline is not None else 0
    started = time.monotonic()
    trace = SearchTrace()
    best_config: PromptConfig | None = None
    best = -1.0
    for mask in range(1 << len(FEATURE_NAMES)):
        candidate = PromptConfig.from_bitmask(mask, **rest)
        micro = _run_and_trace(score_fn, candidate, trace)
        if micro > best:
            best_config, best = candidate, micro
    assert best_config is not None
    trace.accepted_features = best_config.enabled_features()
    trace.wall_clock_seconds = time.monotonic() - started
    if pipeline is not None:
        trace.total_backend_calls = pipeline.backend_calls - calls_before
    return best_config, trace
