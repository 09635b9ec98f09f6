"""The pool-based active learning cycle: train, select, query, update, stop.

``ActiveLearner`` exposes the loop one pending query at a time so that a
simulated oracle driver (``run``) and an interactive session (the HTTP
server) share the exact same machinery. The mixture is fitted offline on
the unlabeled training rows before cycle 0; a CMM is refitted from the
acquired labels every cycle (it also backs the distribution criterion and
rule extraction when the main classifier is an SVM).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import strategy as strat
from .cmm import CmmClassifier, fit_assignments
from .data import Dataset, init_pool
from .mixture import MixtureModel, VIConfig, fit_vi
from .oracle import CostLedger, LabelResponse, OracleSpec, answer, fuse
from .rules import Rule, apply_conclusion, extract_rules, next_rule_query
from .svm import KernelSpec, SvmModel, heuristic_params, train_smo

RUN_FORMAT = "run-v1"


@dataclass
class LearnerConfig:
    model: str = "cmm"  # cmm | svm-rbf | svm-rwm
    strategy: str = "4ds"  # us | 3ds | 4ds
    q: int = 1
    n_init: int = 8
    budget: float | None = None
    max_cycles: int | None = None
    saturation_window: int = 0
    saturation_epsilon: float = 1e-3
    oracle_policy: str = "best-expertise"
    committee: int = 1
    rule_cadence: int = 0
    diversity_weight: float = 0.0
    seed: int = 0
    j_max: int = 10
    vi: dict = field(default_factory=dict)
    delta: float | None = None

    def __post_init__(self):
        if self.model not in ("cmm", "svm-rbf", "svm-rwm"):
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.strategy not in ("us", "3ds", "4ds"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.q < 1:
            raise ValueError("query size must be >= 1")
        if self.n_init < 0:
            raise ValueError("n_init must be >= 0")
        if self.budget is None and self.max_cycles is None:
            raise ValueError("at least one of budget/max_cycles must be bounded")
        if self.committee < 1:
            raise ValueError("committee size must be >= 1")

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "strategy": self.strategy,
            "q": self.q,
            "n_init": self.n_init,
            "budget": self.budget,
            "max_cycles": self.max_cycles,
            "saturation_window": self.saturation_window,
            "saturation_epsilon": self.saturation_epsilon,
            "oracle_policy": self.oracle_policy,
            "committee": self.committee,
            "rule_cadence": self.rule_cadence,
            "diversity_weight": self.diversity_weight,
            "seed": self.seed,
            "j_max": self.j_max,
            "vi": dict(self.vi),
            "delta": self.delta,
        }

    @staticmethod
    def from_json(obj: dict) -> "LearnerConfig":
        known = {f for f in LearnerConfig.__dataclass_fields__}
        return LearnerConfig(**{k: v for k, v in obj.items() if k in known})


def check_saturation(accuracies: list[float], window: int, epsilon: float) -> bool:
    """Best of the last `window` cycles improves on the best of the
    preceding `window` cycles by less than epsilon."""
    if window <= 0 or len(accuracies) < 2 * window:
        return False
    recent = max(accuracies[-window:])
    before = max(accuracies[-2 * window : -window])
    return (recent - before) < epsilon


@dataclass
class RunRecord:
    dataset_id: str
    method_id: str
    fold: int
    seed: int
    cycles: list[dict]
    stop_reason: str
    footer: dict

    def to_jsonl_lines(self) -> list[str]:
        import json

        lines = [json.dumps(c, sort_keys=True) for c in self.cycles]
        lines.append(json.dumps(self.footer, sort_keys=True))
        return lines

    @staticmethod
    def parse_jsonl(text: str) -> "RunRecord":
        import json

        cycles = []
        footer = None
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("footer"):
                footer = obj
            else:
                cycles.append(obj)
        if footer is None:
            raise ValueError("run record has no footer line")
        return RunRecord(
            dataset_id=footer["dataset"],
            method_id=footer["method"],
            fold=int(footer["fold"]),
            seed=int(footer["seed"]),
            cycles=cycles,
            stop_reason=footer["stop_reason"],
            footer=footer,
        )


class ActiveLearner:
    """Stateful PAL loop over one training/test fold."""

    def __init__(
        self,
        train: Dataset,
        test: Dataset,
        config: LearnerConfig,
        dataset_id: str = "dataset",
        method_id: str = "",
        fold: int = 0,
    ):
        self.train = train
        self.test = test
        self.config = config
        self.dataset_id = dataset_id
        self.method_id = method_id or f"{config.model}+{config.strategy}"
        self.fold = fold
        self.n_classes = train.n_classes

        cat = train.categorical if train.categorical_cardinalities() else None
        vi_kwargs = {"j_max": config.j_max, "seed": config.seed}
        vi_kwargs.update(config.vi)
        self.mixture: MixtureModel = fit_vi(
            train.continuous,
            VIConfig(**vi_kwargs),
            Xcat=cat,
            cat_cards=train.categorical_cardinalities(),
        )
        self._train_cat = cat
        self._test_cat = test.categorical if test.categorical_cardinalities() else None
        self.R_train = self.mixture.responsibilities_matrix(train.continuous, cat)
        self.density_train = self.mixture.density_matrix(train.continuous, cat)

        self.pool = init_pool(train, range(len(train)), config.n_init, self.mixture, config.seed)
        self.ledger = CostLedger()
        self.min_query_cost = {"sample": 1.0, "rule": 1.0}
        self.cycle = 0
        self.cycle_entries: list[dict] = []
        self.stop_reason: str | None = None
        self.conclusions: dict[int, tuple[int, float]] = {}
        self.cmm: CmmClassifier | None = None
        self.model = None
        self.rules: list[Rule] = []
        self._quantiles = np.percentile(train.continuous, [33, 67], axis=0)

        self._pending_samples: list[int] = list(self.pool.labeled_ids)
        self._pending_rule: Rule | None = None
        self._answered_rule: dict | None = None
        self._received: dict[int, int] = {}
        self._pending_margins: dict[int, float] = {i: 1.0 for i in self._pending_samples}
        self._weights_used: dict | None = None
        self._retry_used = False
        self._failed_ids: set[int] = set()
        self._initial_ids = list(self.pool.labeled_ids)
        if not self._pending_samples:  # n_init = 0: train cold and select
            self._finish_cycle()

    # -- interactive surface ------------------------------------------------

    @property
    def status(self) -> str:
        return "stopped" if self.stop_reason else "active"

    def pending_queries(self) -> list[dict]:
        out = []
        for rid in self._pending_samples:
            if rid not in self._received:
                out.append(
                    {
                        "type": "sample",
                        "row_id": int(rid),
                        "margin_norm": float(self._pending_margins.get(rid, 1.0)),
                    }
                )
        if self._pending_rule is not None:
            out.append({"type": "rule", "rule": self._pending_rule})
        return out

    def provide_sample_label(self, row_id: int, label: int) -> None:
        if self.stop_reason:
            raise RuntimeError("learner already stopped")
        if row_id not in self._pending_samples or row_id in self._received:
            raise KeyError(f"row {row_id} is not awaiting a label")
        if not 0 <= label < self.n_classes:
            raise ValueError(f"label {label} out of range")
        self._received[int(row_id)] = int(label)
        self._maybe_finish()

    def report_failed(self, row_id: int) -> None:
        """The oracle side could not produce any label for this row."""
        if row_id in self._pending_samples and row_id not in self._received:
            self._failed_ids.add(int(row_id))
            self._pending_samples.remove(row_id)
            if row_id in self._initial_ids:
                self._initial_ids.remove(row_id)
                # an unanswered initial id goes back to the pool
                self.pool.labeled_ids.remove(row_id)
                self.pool.unlabeled_ids.add(int(row_id))
            self._maybe_finish()

    def provide_rule_conclusion(self, component: int, cls: int, confidence: float) -> None:
        if self._pending_rule is None or self._pending_rule.component != component:
            raise KeyError(f"component {component} is not awaiting a conclusion")
        if not 0 <= cls < self.n_classes:
            raise ValueError(f"class {cls} out of range")
        self.conclusions[int(component)] = (int(cls), float(min(max(confidence, 1e-6), 1.0)))
        self._pending_rule = None
        self._maybe_finish()

    def dismiss_rule(self) -> None:
        if self._pending_rule is not None:
            self._pending_rule = None
            self._maybe_finish()

    # -- cycle machinery ------------------------------------------------------

    def _maybe_finish(self) -> None:
        outstanding = [r for r in self._pending_samples if r not in self._received]
        if not outstanding and self._pending_rule is None:
            self._finish_cycle()

    def _finish_cycle(self) -> None:
        if not self._received and self._pending_samples == [] and self.cycle > 0:
            # entire batch failed to acquire labels
            if not self._retry_used and len(self.pool.unlabeled_ids - self._failed_ids) > 0:
                self._retry_used = True
                self._prepare_selection(exclude=self._failed_ids)
                if self._pending_samples or self._pending_rule:
                    return
            self.stop_reason = "oracle_unavailable"
            self._record_cycle(acquired=[])
            return
        acquired = sorted(self._received)
        for rid, label in self._received.items():
            self.pool.acquire(rid, label)
        self._retrain()
        self._record_cycle(acquired=acquired)
        self._received = {}
        self._pending_samples = []
        self._pending_margins = {}
        self._failed_ids = set()
        self._retry_used = False
        self.cycle += 1
        self._prepare_next()

    def _retrain(self) -> None:
        ids = self.pool.labeled_with_labels()
        labels = np.array([self.pool.acquired_labels[i] for i in ids], dtype=int)
        X = self.train.continuous[ids] if ids else np.zeros((0, self.train.continuous.shape[1]))
        cat = self._train_cat[ids] if (self._train_cat is not None and ids) else None
        self.cmm = fit_assignments(
            self.mixture, X, labels, self.n_classes, delta=self.config.delta, Xcat_labeled=cat
        )
        for comp, (cls, conf) in self.conclusions.items():
            if comp < self.mixture.n_components:
                self.cmm = apply_conclusion(self.cmm, comp, cls, conf)
        if self.config.model == "cmm":
            self.model = self.cmm
        else:
            kind = "rbf" if self.config.model == "svm-rbf" else "rwm"
            mixture = self.mixture if kind == "rwm" else None
            if len(ids) >= 2 and np.unique(labels).size >= 1:
                C, gamma = heuristic_params(
                    self.train.continuous, X, labels, seed=self.config.seed,
                    kernel_kind=kind, mixture=mixture,
                )
                self.model = train_smo(
                    X, labels, C, KernelSpec(kind=kind, gamma=gamma, mixture=mixture)
                )
            else:
                self.model = train_smo(
                    X if len(ids) else np.zeros((1, self.train.continuous.shape[1])),
                    labels if len(ids) else np.array([0]),
                    1.0,
                    KernelSpec(kind=kind, gamma=1.0, mixture=mixture),
                )
        self.rules = self._extract_rules()

    def _extract_rules(self) -> list[Rule]:
        feats = self.train.schema.feature_columns
        cont_names = [c.name for c in feats if c.kind == "continuous"]
        cat_names = [c.name for c in feats if c.kind == "categorical"]
        cat_cats = [c.categories for c in feats if c.kind == "categorical"]
        return extract_rules(
            self.mixture, self.cmm, self._quantiles, cont_names, cat_names, cat_cats
        )

    def _predict_test(self) -> np.ndarray:
        if isinstance(self.model, CmmClassifier):
            return self.model.predict_matrix(self.test.continuous, self._test_cat)
        return self.model.predict_matrix(self.test.continuous)

    def test_accuracy(self) -> float:
        if len(self.test) == 0:
            return float("nan")
        return float(np.mean(self._predict_test() == self.test.labels))

    def _pool_margin_norm(self, pool_ids: np.ndarray) -> np.ndarray:
        if isinstance(self.model, CmmClassifier):
            margins = self.model.margin_matrix(
                self.train.continuous[pool_ids],
                self._train_cat[pool_ids] if self._train_cat is not None else None,
            )
            top = margins.max()
            return margins / top if top > 0 else np.zeros_like(margins)
        return self.model.margin_norm(self.train.continuous[pool_ids])

    def _record_cycle(self, acquired: list[int]) -> None:
        labeled_ids = self.pool.labeled_with_labels()
        counts = np.bincount(
            [self.pool.acquired_labels[i] for i in labeled_ids], minlength=self.n_classes
        ).astype(float)
        ref = self.reference_distribution()
        from .evaluation import cdm as _cdm

        cdm_val = (
            _cdm(counts / counts.sum(), ref) if counts.sum() > 0 else float("nan")
        )
        entry = {
            "cycle": self.cycle,
            "n_labeled": len(labeled_ids),
            "test_accuracy": self.test_accuracy() if self.model is not None else None,
            "pool_size": len(self.pool.unlabeled_ids),
            "weights": self._weights_used,
            "cost_spent": self.ledger.total,
            "queried_ids": [int(i) for i in acquired],
            "queried_points": [
                [float(v) for v in self.train.continuous[i]] for i in acquired
            ],
            "queried_labels": [int(self.pool.acquired_labels[i]) for i in acquired],
            "initial": self.cycle == 0,
            "rule": None if self._answered_rule is None else self._answered_rule,
            "cdm": cdm_val,
        }
        self.cycle_entries.append(entry)
        self._answered_rule = None

    def reference_distribution(self) -> np.ndarray:
        if self.cmm is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        pool_ids = self.pool.sorted_unlabeled()
        if pool_ids.size == 0:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return strat.reference_class_distribution(
            self.cmm.class_given_component, self.R_train[pool_ids]
        )

    def _planned_total_cycles(self) -> int:
        if self.config.max_cycles is not None:
            return max(self.config.max_cycles, 1)
        remaining = len(self.pool.unlabeled_ids) + len(self.pool.labeled_ids) - self.config.n_init
        return max(math.ceil(remaining / self.config.q), 1)

    def selection_weights(self) -> strat.SelectionWeights:
        cfg = self.config
        if cfg.strategy == "us":
            return strat.us_weights()
        w = strat.adapt_weights(
            cycle=max(self.cycle - 1, 0),
            total_budget=self._planned_total_cycles(),
            w_diversity_user=cfg.diversity_weight,
            query_size=cfg.q,
        )
        return strat.force_3ds(w) if cfg.strategy == "3ds" else w

    def criterion_scores(self, pool_ids: np.ndarray) -> dict[str, np.ndarray]:
        density = strat.score_density(self.density_train[pool_ids])
        distance = strat.score_distance(self._pool_margin_norm(pool_ids))
        ref = self.reference_distribution()
        labeled_ids = self.pool.labeled_with_labels()
        counts = np.bincount(
            [self.pool.acquired_labels[i] for i in labeled_ids], minlength=self.n_classes
        ).astype(float)
        candidate_mass = self.R_train[pool_ids] @ self.cmm.class_given_component.T
        distribution = strat.score_distribution(ref, counts, candidate_mass)
        return {"density": density, "distance": distance, "distribution": distribution}

    def _prepare_selection(self, exclude: set[int] = frozenset()) -> None:
        pool_ids = np.array(
            sorted(self.pool.unlabeled_ids - set(exclude)), dtype=int
        )
        if pool_ids.size == 0 and self._pending_rule is None:
            self.stop_reason = "pool_exhausted"
            return
        weights = self.selection_weights()
        self._weights_used = weights.as_dict()
        scores = self.criterion_scores(pool_ids)
        want_rule = (
            self.config.rule_cadence > 0
            and self.cycle % self.config.rule_cadence == 0
            and next_rule_query(self.rules) is not None
        )
        n_samples = min(self.config.q - (1 if want_rule else 0), pool_ids.size)
        if want_rule:
            self._pending_rule = next_rule_query(self.rules)
        if n_samples > 0:
            batch = strat.select_batch(
                pool_ids,
                self.train.continuous[pool_ids],
                scores["density"],
                scores["distance"],
                scores["distribution"],
                weights,
                n_samples,
            )
            margins = self._pool_margin_norm(pool_ids)
            lookup = {int(pid): float(m) for pid, m in zip(pool_ids, margins)}
            self._pending_samples = batch
            self._pending_margins = {rid: lookup[rid] for rid in batch}
        else:
            self._pending_samples = []
            self._pending_margins = {}

    def _prepare_next(self) -> None:
        if self.stop_reason:
            return
        cfg = self.config
        if len(self.pool.unlabeled_ids) == 0:
            self.stop_reason = "pool_exhausted"
            return
        if cfg.max_cycles is not None and self.cycle > cfg.max_cycles:
            self.stop_reason = "max_cycles"
            return
        accs = [
            e["test_accuracy"] for e in self.cycle_entries if e["test_accuracy"] is not None
        ]
        if check_saturation(accs, cfg.saturation_window, cfg.saturation_epsilon):
            self.stop_reason = "saturated"
            return
        if cfg.budget is not None:
            n_next = min(cfg.q, len(self.pool.unlabeled_ids))
            min_next = n_next * self.min_query_cost.get("sample", 1.0)
            if self.ledger.remaining(cfg.budget) < min_next:
                self.stop_reason = "budget"
                return
        self._prepare_selection()

    def stop(self, reason: str = "stopped") -> None:
        if not self.stop_reason:
            self.stop_reason = reason

    def note_rule_answered(self, rule: Rule, cls: int, confidence: float, oracle_id: str) -> None:
        self._answered_rule = {
            "component": rule.component,
            "premise": rule.premise_text(),
            "conclusion": int(cls),
            "confidence": float(confidence),
            "oracle": oracle_id,
        }

    def build_record(self) -> RunRecord:
        final_acc = None
        for e in reversed(self.cycle_entries):
            if e["test_accuracy"] is not None:
                final_acc = e["test_accuracy"]
                break
        cdms = [e["cdm"] for e in self.cycle_entries if e["cdm"] == e["cdm"]]
        model_json = None
        if self.model is not None:
            model_json = (
                self.model.to_json() if not isinstance(self.model, CmmClassifier)
                else self.model.to_json("inline")
            )
        footer = {
            "footer": True,
            "format": RUN_FORMAT,
            "dataset": self.dataset_id,
            "method": self.method_id,
            "fold": self.fold,
            "seed": self.config.seed,
            "stop_reason": self.stop_reason or "active",
            "final_accuracy": final_acc,
            "n_cycles": len(self.cycle_entries),
            "total_cost": self.ledger.total,
            "cdm_mean": float(np.mean(cdms)) if cdms else None,
            "config": self.config.to_json(),
            "class_names": list(self.train.class_names),
            "initial_ids": [int(i) for i in self._initial_ids],
            "reference_distribution": self.reference_distribution().tolist(),
            "mixture": self.mixture.to_json(),
            "model": model_json,
            "ledger": self.ledger.to_json(),
            "rules": [r.to_json() for r in self.rules],
        }
        return RunRecord(
            dataset_id=self.dataset_id,
            method_id=self.method_id,
            fold=self.fold,
            seed=self.config.seed,
            cycles=self.cycle_entries,
            stop_reason=self.stop_reason or "active",
            footer=footer,
        )


# -- batch driver ----------------------------------------------------------


def _rank_oracles(specs: list[OracleSpec], predicted: int, policy: str, margin: float):
    from .oracle import choose_oracle

    remaining = list(specs)
    order = []
    while remaining:
        pick, _ = choose_oracle(remaining, predicted, "sample", policy, margin)
        order.append(pick)
        remaining = [s for s in remaining if s.id != pick.id]
    return order


def _simulate_rule_conclusion(learner: ActiveLearner, rule: Rule) -> tuple[int, int]:
    """Majority true label among training rows owned by the component."""
    owners = np.argmax(learner.R_train, axis=1) == rule.component
    if not owners.any():
        owners = np.ones(len(learner.train), dtype=bool)
    counts = np.bincount(learner.train.labels[owners], minlength=learner.n_classes)
    return int(np.argmax(counts)), int(counts.sum())


def run(
    train: Dataset,
    test: Dataset,
    config: LearnerConfig,
    oracles: list[OracleSpec],
    dataset_id: str = "dataset",
    method_id: str = "",
    fold: int = 0,
) -> RunRecord:
    """Drive a full PAL run against simulated oracles."""
    if not oracles:
        raise ValueError("need at least one oracle")
    learner = ActiveLearner(train, test, config, dataset_id, method_id, fold)
    learner.min_query_cost = {
        "sample": min(o.cost.min_cost("sample") for o in oracles),
        "rule": min(o.cost.min_cost("rule") for o in oracles),
    }
    salt = config.seed

    while learner.status == "active":
        queries = learner.pending_queries()
        if not queries:
            learner.stop("pool_exhausted")
            break
        for query in queries:
            if query["type"] == "rule":
                rule = query["rule"]
                true_cls, _ = _simulate_rule_conclusion(learner, rule)
                predicted = true_cls
                order = _rank_oracles(oracles, predicted, config.oracle_policy, 1.0)
                resp = None
                for spec in order[: max(config.committee, 1)]:
                    r = answer(
                        replace(spec, seed=spec.seed + salt),
                        rule.component,
                        true_cls,
                        learner.n_classes,
                        cycle=learner.cycle,
                        margin_norm=1.0,
                        query_type="rule",
                    )
                    if r.answered:
                        learner.ledger.charge(learner.cycle, spec.id, "rule", r.cost)
                        resp = r
                        break
                if resp is None:
                    learner.dismiss_rule()
                else:
                    learner.note_rule_answered(rule, resp.label, resp.confidence, resp.oracle_id)
                    learner.provide_rule_conclusion(rule.component, resp.label, resp.confidence)
                continue

            rid = query["row_id"]
            true_label = int(train.labels[rid])
            if learner.model is not None:
                if isinstance(learner.model, CmmClassifier):
                    predicted = learner.model.predict(
                        train.continuous[rid],
                        None if learner._train_cat is None else learner._train_cat[rid],
                    )
                else:
                    predicted = learner.model.predict(train.continuous[rid])
            else:
                predicted = 0
            order = _rank_oracles(
                oracles, predicted, config.oracle_policy, query["margin_norm"]
            )
            responses: list[LabelResponse] = []
            for spec in order:
                r = answer(
                    replace(spec, seed=spec.seed + salt),
                    rid,
                    true_label,
                    learner.n_classes,
                    cycle=learner.cycle,
                    margin_norm=query["margin_norm"],
                    query_type="sample",
                )
                if r.answered:
                    responses.append(r)
                    learner.ledger.charge(learner.cycle, spec.id, "sample", r.cost)
                if len(responses) >= config.committee:
                    break
            if not responses:
                learner.report_failed(rid)
            else:
                label, _conf = fuse(responses)
                learner.provide_sample_label(rid, label)
    return learner.build_record()
