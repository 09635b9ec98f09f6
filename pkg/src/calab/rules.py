"""Readable rules from mixture components and rule-premise queries.

A component's premise describes where it lives: each continuous dimension
gets a linguistic term (low/medium/high from the component mean against
the training 33rd/67th percentiles), each categorical dimension keeps the
categories whose probability strictly exceeds the uniform average. The
conclusion is the component's dominant class when that assignment is
confident, otherwise the component is queryable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmm import CmmClassifier
from .mixture import MixtureModel

CONCLUSION_THRESHOLD = 0.5


@dataclass
class Rule:
    component: int
    continuous_terms: tuple[tuple[str, str], ...]  # (dim name, low|medium|high)
    categorical_terms: tuple[tuple[str, tuple[str, ...]], ...]  # (dim name, categories)
    conclusion: int | None  # class index, None = unlabeled
    confidence: float
    weight: float  # component weight pi_j

    def premise_text(self) -> str:
        parts = [f"{name} is {term}" for name, term in self.continuous_terms]
        for name, cats in self.categorical_terms:
            clauses = [f"{name} is {c}" for c in cats]
            parts.append(clauses[0] if len(clauses) == 1 else "(" + " or ".join(clauses) + ")")
        return " and ".join(parts)

    def text(self, class_names=None) -> str:
        if self.conclusion is None:
            concl = "?"
        elif class_names is not None:
            concl = str(class_names[self.conclusion])
        else:
            concl = str(self.conclusion)
        return f"if {self.premise_text()} then class = {concl}"

    def to_json(self) -> dict:
        return {
            "component": self.component,
            "continuous_terms": [list(t) for t in self.continuous_terms],
            "categorical_terms": [[n, list(c)] for n, c in self.categorical_terms],
            "conclusion": self.conclusion,
            "confidence": self.confidence,
            "weight": self.weight,
            "premise": self.premise_text(),
        }


def linguistic_term(value: float, q33: float, q67: float) -> str:
    if value < q33:
        return "low"
    if value > q67:
        return "high"
    return "medium"


def extract_rules(
    mixture: MixtureModel,
    cmm: CmmClassifier,
    quantiles: np.ndarray,
    continuous_names: list[str],
    categorical_names: list[str] | None = None,
    categorical_categories: list[tuple[str, ...]] | None = None,
) -> list[Rule]:
    """One rule per component.

    `quantiles` is (2, D): the 33rd and 67th percentile per continuous
    dimension of the training data.
    """
    quantiles = np.atleast_2d(np.asarray(quantiles, dtype=float))
    categorical_names = categorical_names or []
    categorical_categories = categorical_categories or []
    P = cmm.class_given_component
    rules = []
    for j in range(mixture.n_components):
        cont = tuple(
            (name, linguistic_term(mixture.means[j, d], quantiles[0, d], quantiles[1, d]))
            for d, name in enumerate(continuous_names)
        )
        cat_terms = []
        for dd, name in enumerate(categorical_names):
            table = mixture.cat_tables[dd][j]
            avg = 1.0 / table.size
            picked = tuple(
                categorical_categories[dd][v]
                for v in range(table.size)
                if table[v] > avg
            )
            if picked:
                cat_terms.append((name, picked))
        top = int(np.argmax(P[:, j]))
        conf = float(P[top, j])
        conclusion = top if conf > CONCLUSION_THRESHOLD else None
        rules.append(
            Rule(
                component=j,
                continuous_terms=cont,
                categorical_terms=tuple(cat_terms),
                conclusion=conclusion,
                confidence=conf,
                weight=float(mixture.weights[j]),
            )
        )
    return rules


def next_rule_query(rules: list[Rule]) -> Rule | None:
    """The heaviest still-unlabeled component's rule, if any."""
    open_rules = [r for r in rules if r.conclusion is None]
    if not open_rules:
        return None
    return max(open_rules, key=lambda r: (r.weight, -r.component))


def apply_conclusion(
    cmm: CmmClassifier, component: int, cls: int, confidence: float
) -> CmmClassifier:
    """Blend a one-hot class assignment into one component's column of P."""
    if not 0.0 < confidence <= 1.0:
        raise ValueError("confidence must lie in (0, 1]")
    P = cmm.class_given_component.copy()
    if not 0 <= component < P.shape[1]:
        raise ValueError(f"component {component} out of range")
    onehot = np.zeros(P.shape[0])
    onehot[cls] = 1.0
    col = confidence * onehot + (1.0 - confidence) * P[:, component]
    P[:, component] = col / col.sum()
    return CmmClassifier(mixture=cmm.mixture, class_given_component=P, delta=cmm.delta)
