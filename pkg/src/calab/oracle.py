"""Simulated label sources: ground truth, uniform noise, confusion experts.

Every answer is drawn from a generator keyed by (oracle seed, row id,
cycle), so a full response stream replays bit-identically. Costs follow a
per-oracle scheme: base charge, per-class surcharge on the emitted label,
a boundary surcharge growing toward the decision boundary, and a
query-type charge (sample vs rule).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CostModel:
    base: float = 1.0
    per_class: tuple[float, ...] = ()
    boundary: float = 0.0
    query_type: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.base < 0 or self.boundary < 0:
            raise ValueError("cost components must be nonnegative")
        if any(v < 0 for v in self.per_class):
            raise ValueError("per-class surcharges must be nonnegative")
        if any(v < 0 for _, v in self.query_type):
            raise ValueError("query-type costs must be nonnegative")

    def _qt(self, query_type: str) -> float:
        return dict(self.query_type).get(query_type, 0.0)

    def cost(self, emitted_label: int, margin_norm: float, query_type: str) -> float:
        surcharge = (
            self.per_class[emitted_label]
            if emitted_label < len(self.per_class)
            else 0.0
        )
        return (
            self.base
            + surcharge
            + self.boundary * (1.0 - float(np.clip(margin_norm, 0.0, 1.0)))
            + self._qt(query_type)
        )

    def min_cost(self, query_type: str) -> float:
        surcharge = min(self.per_class) if self.per_class else 0.0
        return self.base + surcharge + self._qt(query_type)

    def expected_cost(self, predicted: int, margin_norm: float, query_type: str) -> float:
        return self.cost(predicted, margin_norm, query_type)

    def to_json(self) -> dict:
        return {
            "base": self.base,
            "per_class": list(self.per_class),
            "boundary": self.boundary,
            "query_type": dict(self.query_type),
        }

    @staticmethod
    def from_json(obj: dict) -> "CostModel":
        return CostModel(
            base=float(obj.get("base", 1.0)),
            per_class=tuple(obj.get("per_class", ())),
            boundary=float(obj.get("boundary", 0.0)),
            query_type=tuple(sorted(obj.get("query_type", {}).items())),
        )


@dataclass(frozen=True)
class OracleSpec:
    id: str
    kind: str  # "truth" | "uniform_noise" | "expert"
    p: float | None = None
    confusion: tuple[tuple[float, ...], ...] | None = None
    availability: float = 1.0
    cost: CostModel = field(default_factory=CostModel)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("truth", "uniform_noise", "expert"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "uniform_noise":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError("uniform_noise needs p in [0, 1]")
        if self.kind == "expert":
            if self.confusion is None:
                raise ValueError("expert needs a confusion matrix")
            for row in self.confusion:
                if abs(sum(row) - 1.0) > 1e-9 or any(v < 0 for v in row):
                    raise ValueError("confusion rows must be stochastic")
        if not 0.0 < self.availability <= 1.0:
            raise ValueError("availability must lie in (0, 1]")

    def reliability(self, cls: int) -> float:
        """Known probability of answering class `cls` correctly."""
        if self.kind == "truth":
            return 1.0
        if self.kind == "uniform_noise":
            return 1.0 - self.p
        return float(self.confusion[cls][cls])

    def to_json(self) -> dict:
        obj = {
            "id": self.id,
            "kind": self.kind,
            "availability": self.availability,
            "cost": self.cost.to_json(),
            "seed": self.seed,
        }
        if self.p is not None:
            obj["p"] = self.p
        if self.confusion is not None:
            obj["confusion"] = [list(r) for r in self.confusion]
        return obj

    @staticmethod
    def from_json(obj: dict) -> "OracleSpec":
        return OracleSpec(
            id=obj["id"],
            kind=obj["kind"],
            p=obj.get("p"),
            confusion=tuple(tuple(r) for r in obj["confusion"])
            if "confusion" in obj
            else None,
            availability=float(obj.get("availability", 1.0)),
            cost=CostModel.from_json(obj.get("cost", {})),
            seed=int(obj.get("seed", 0)),
        )


@dataclass(frozen=True)
class LabelResponse:
    oracle_id: str
    row_id: int
    label: int
    confidence: float
    cost: float
    answered: bool


def answer(
    spec: OracleSpec,
    row_id: int,
    true_label: int,
    n_classes: int,
    cycle: int = 0,
    margin_norm: float = 1.0,
    query_type: str = "sample",
) -> LabelResponse:
    """Draw one (deterministic) response for a query.

    Confidence is the oracle's own reliability estimate for the label it
    emitted: 1 for the truth oracle; the maximum of the implied confusion
    row for noisy oracles (the true label stays hidden from the oracle's
    self-report).
    """
    rng = np.random.default_rng(
        [max(spec.seed, 0), zlib.crc32(spec.id.encode("utf-8")), row_id, cycle]
    )
    if rng.random() >= spec.availability:
        return LabelResponse(spec.id, row_id, -1, 0.0, 0.0, answered=False)
    if spec.kind == "truth":
        label, conf = true_label, 1.0
    elif spec.kind == "uniform_noise":
        if rng.random() < spec.p and n_classes > 1:
            offset = int(rng.integers(1, n_classes))
            label = (true_label + offset) % n_classes
        else:
            label = true_label
        conf = max(1.0 - spec.p, spec.p / max(n_classes - 1, 1))
    else:
        row = np.asarray(spec.confusion[true_label], dtype=float)
        label = int(rng.choice(row.size, p=row / row.sum()))
        conf = float(np.max(spec.confusion[label]))
    cost = spec.cost.cost(label, margin_norm, query_type)
    return LabelResponse(spec.id, row_id, int(label), conf, cost, answered=True)


def choose_oracle(
    specs: list[OracleSpec],
    predicted_class: int,
    query_type: str = "sample",
    policy: str = "best-expertise",
    margin_norm: float = 1.0,
    adequacy_threshold: float = 0.8,
) -> tuple[OracleSpec, bool]:
    """Pick an oracle for the next query; returns (spec, fallback_warning).

    "best-expertise" maximizes the known reliability for the predicted
    class. "cheapest-adequate" minimizes expected cost among oracles whose
    reliability meets the threshold, falling back to best-expertise (with
    a warning flag) when none qualifies. Ties break toward the lowest id.
    """
    if not specs:
        raise ValueError("no oracles available")
    ordered = sorted(specs, key=lambda s: s.id)
    if policy == "best-expertise":
        best = max(ordered, key=lambda s: (s.reliability(predicted_class), ))
        return best, False
    if policy != "cheapest-adequate":
        raise ValueError(f"unknown oracle policy {policy!r}")
    adequate = [s for s in ordered if s.reliability(predicted_class) >= adequacy_threshold]
    if not adequate:
        best = max(ordered, key=lambda s: (s.reliability(predicted_class), ))
        return best, True
    cheapest = min(
        adequate, key=lambda s: s.cost.expected_cost(predicted_class, margin_norm, query_type)
    )
    return cheapest, False


def fuse(responses: list[LabelResponse]) -> tuple[int, float]:
    """Confidence-weighted vote; fused confidence = winning mass / total mass."""
    answered = [r for r in responses if r.answered]
    if not answered:
        raise ValueError("no label acquired")
    n_classes = max(r.label for r in answered) + 1
    mass = np.zeros(n_classes)
    for r in answered:
        mass[r.label] += r.confidence
    total = mass.sum()
    if total <= 0:  # all-zero confidences: plain majority
        for r in answered:
            mass[r.label] += 1.0
        total = mass.sum()
    winner = int(np.argmax(mass))
    return winner, float(mass[winner] / total)


@dataclass
class CostLedger:
    entries: list[tuple[int, str, str, float]] = field(default_factory=list)
    total: float = 0.0

    def charge(self, cycle: int, oracle_id: str, query_type: str, cost: float) -> None:
        if cost < 0:
            raise ValueError("cost must be nonnegative")
        self.entries.append((int(cycle), oracle_id, query_type, float(cost)))
        self.total += float(cost)

    def remaining(self, budget: float) -> float:
        return budget - self.total

    def to_json(self) -> dict:
        return {
            "entries": [
                {"cycle": c, "oracle": o, "type": t, "cost": v}
                for c, o, t, v in self.entries
            ],
            "total": self.total,
        }

    def export_csv(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cycle", "oracle", "type", "cost"])
            for c, o, t, v in self.entries:
                writer.writerow([c, o, t, v])


def load_roster(path) -> list[OracleSpec]:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        return [OracleSpec.from_json(obj) for obj in json.load(fh)]
