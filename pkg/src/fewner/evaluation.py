"""Span-level scoring and energy/carbon accounting.

Scoring is exact-match micro/macro F1: a predicted span counts as a true
positive only when its (start, end, type) triple matches a gold span
one-to-one within the same sentence.  Matching is multiset intersection, so
duplicate predictions of the same gold span count once as TP and once as FP.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .corpus import AnnotatedSentence, EntitySpan
from .decode import PredictionSet
from .errors import DataError


def span_match_counts(
    predicted: Iterable[EntitySpan], gold: Iterable[EntitySpan]
) -> tuple[int, int, int]:
    """(tp, fp, fn) under exact (start, end, type) one-to-one matching."""
    pred_keys = Counter((s.start, s.end, s.type) for s in predicted)
    gold_keys = Counter((s.start, s.end, s.type) for s in gold)
    tp = sum((pred_keys & gold_keys).values())
    fp = sum(pred_keys.values()) - tp
    fn = sum(gold_keys.values()) - tp
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, f1); empty denominators score zero."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class TypeScore:
    type_id: str
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)[2]


@dataclass
class EvalReport:
    per_type: dict[str, TypeScore]
    n_sentences: int
    timestamp: str | None = None

    @property
    def micro_counts(self) -> tuple[int, int, int]:
        tp = sum(s.tp for s in self.per_type.values())
        fp = sum(s.fp for s in self.per_type.values())
        fn = sum(s.fn for s in self.per_type.values())
        return tp, fp, fn

    @property
    def micro_precision(self) -> float:
        return f1_from_counts(*self.micro_counts)[0]

    @property
    def micro_recall(self) -> float:
        return f1_from_counts(*self.micro_counts)[1]

    @property
    def micro_f1(self) -> float:
        return f1_from_counts(*self.micro_counts)[2]

    @property
    def macro_f1(self) -> float:
        if not self.per_type:
            return 0.0
        return sum(s.f1 for s in self.per_type.values()) / len(self.per_type)

    def to_json(self) -> str:
        payload = {
            "n_sentences": self.n_sentences,
            "timestamp": self.timestamp,
            "micro": {
                "tp": self.micro_counts[0],
                "fp": self.micro_counts[1],
                "fn": self.micro_counts[2],
                "precision": self.micro_precision,
                "recall": self.micro_recall,
                "f1": self.micro_f1,
            },
            "macro_f1": self.macro_f1,
            "per_type": {
                tid: {
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                }
                for tid, s in sorted(self.per_type.items())
            },
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2)

    @classmethod
    def from_json(cls, raw: str) -> "EvalReport":
        payload = json.loads(raw)
        per_type = {
            tid: TypeScore(tid, row["tp"], row["fp"], row["fn"])
            for tid, row in payload["per_type"].items()
        }
        return cls(
            per_type=per_type,
            n_sentences=payload["n_sentences"],
            timestamp=payload.get("timestamp"),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["type", "tp", "fp", "fn", "precision", "recall", "f1", "n_sentences"])
        for tid, s in sorted(self.per_type.items()):
            writer.writerow(
                [tid, s.tp, s.fp, s.fn, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", self.n_sentences]
            )
        tp, fp, fn = self.micro_counts
        writer.writerow(
            [
                "micro",
                tp,
                fp,
                fn,
                f"{self.micro_precision:.6f}",
                f"{self.micro_recall:.6f}",
                f"{self.micro_f1:.6f}",
                self.n_sentences,
            ]
        )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, raw: str) -> "EvalReport":
        reader = csv.DictReader(io.StringIO(raw))
        per_type: dict[str, TypeScore] = {}
        n_sentences = 0
        for row in reader:
            n_sentences = int(row["n_sentences"])
            if row["type"] == "micro":
                continue
            per_type[row["type"]] = TypeScore(
                row["type"], int(row["tp"]), int(row["fp"]), int(row["fn"])
            )
        return cls(per_type=per_type, n_sentences=n_sentences)

    def to_markdown(self) -> str:
        lines = [
            "| type | tp | fp | fn | precision | recall | f1 |",
            "| --- | ---: | ---: | ---: | ---: | ---: | ---: |",
        ]
        for tid, s in sorted(self.per_type.items()):
            lines.append(
                f"| {tid} | {s.tp} | {s.fp} | {s.fn} | {s.precision:.4f} | {s.recall:.4f} | {s.f1:.4f} |"
            )
        tp, fp, fn = self.micro_counts
        lines.append(
            f"| **micro** | {tp} | {fp} | {fn} | {self.micro_precision:.4f} |"
            f" {self.micro_recall:.4f} | {self.micro_f1:.4f} |"
        )
        lines.append("")
        lines.append(f"macro F1: {self.macro_f1:.4f} over {len(self.per_type)} types,")
        lines.append(f"{self.n_sentences} sentences.")
        return "\n".join(lines)


def score(
    predictions: PredictionSet,
    gold_sentences: list[AnnotatedSentence],
    entity_types: list[str] | None = None,
) -> EvalReport:
    """Score predictions against gold sentences.

    entity_types fixes the scored type set (types without predictions or
    gold still get a zero row); by default it is every type seen in either
    side.  Predictions for unknown sentence ids are an error, not silently
    dropped.
    """
    by_id = {s.id: s for s in gold_sentences}
    unknown = [sid for sid in predictions.spans if sid not in by_id]
    if unknown:
        raise DataError(f"predictions reference unknown sentence ids: {sorted(unknown)}")
    if entity_types is None:
        seen: set[str] = set()
        for s in gold_sentences:
            seen.update(sp.type for sp in s.spans)
        for per_type in predictions.spans.values():
            seen.update(per_type)
        entity_types = sorted(seen)
    per_type: dict[str, TypeScore] = {}
    for tid in entity_types:
        tp = fp = fn = 0
        for s in gold_sentences:
            dtp, dfp, dfn = span_match_counts(
                predictions.spans_for(s.id, tid), s.spans_of(tid)
            )
            tp, fp, fn = tp + dtp, fp + dfp, fn + dfn
        per_type[tid] = TypeScore(tid, tp, fp, fn)
    return EvalReport(per_type=per_type, n_sentences=len(gold_sentences))


# ---------------------------------------------------------------------------
# Carbon accounting


@dataclass(frozen=True)
class HardwareProfile:
    """Power draw of the serving hardware."""

    device_power_w: float = 300.0
    usage_factor: float = 1.0
    memory_gb: float = 64.0
    memory_w_per_gb: float = 0.3725

    def mean_power_w(self) -> float:
        return self.device_power_w * self.usage_factor + self.memory_gb * self.memory_w_per_gb


@dataclass(frozen=True)
class GridProfile:
    """Data-center overhead and grid carbon intensity."""

    pue: float = 1.67
    carbon_intensity_g_per_kwh: float = 475.0


@dataclass(frozen=True)
class CarbonEstimate:
    runtime_h: float
    energy_kwh: float
    adjusted_energy_kwh: float
    co2e_g: float

    def to_dict(self) -> dict[str, float]:
        return {
            "runtime_h": self.runtime_h,
            "energy_kwh": self.energy_kwh,
            "adjusted_energy_kwh": self.adjusted_energy_kwh,
            "co2e_g": self.co2e_g,
        }


def estimate_carbon(
    runtime_h: float,
    hardware: HardwareProfile | None = None,
    grid: GridProfile | None = None,
) -> CarbonEstimate:
    """CO2-equivalent grams for a run of the given wall-clock duration.

    energy = hours * (device W * usage + memory GB * W/GB) / 1000, scaled by
    the data-center PUE, then multiplied by the grid intensity in g/kWh.
    """
    if runtime_h < 0:
        raise ValueError(f"runtime must be non-negative, got {runtime_h}")
    hardware = hardware or HardwareProfile()
    grid = grid or GridProfile()
    energy_kwh = runtime_h * hardware.mean_power_w() / 1000.0
    adjusted_kwh = energy_kwh * grid.pue
    co2e_g = adjusted_kwh * grid.carbon_intensity_g_per_kwh
    return CarbonEstimate(
        runtime_h=runtime_h,
        energy_kwh=energy_kwh,
        adjusted_energy_kwh=adjusted_kwh,
        co2e_g=co2e_g,
    )
