"""Generative classifier on top of a mixture: components assigned to classes.

Each mixture component j carries a probability vector over classes,
estimated from responsibility-weighted label counts with a smoothing
pseudo-count. The class posterior of a sample composes these assignment
probabilities with the sample's responsibilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import MixtureModel


@dataclass
class CmmClassifier:
    mixture: MixtureModel
    class_given_component: np.ndarray  # (n_classes, J), columns sum to 1
    delta: float

    def __post_init__(self):
        self.class_given_component = np.asarray(
            self.class_given_component, dtype=np.float64
        )

    @property
    def n_classes(self) -> int:
        return self.class_given_component.shape[0]

    def posterior_matrix(self, X, Xcat=None) -> np.ndarray:
        """p(class | x) for each row; rows sum to 1."""
        R = self.mixture.responsibilities_matrix(X, Xcat)
        return R @ self.class_given_component.T

    def posterior(self, x, xcat=None) -> np.ndarray:
        xcat2 = None if xcat is None else np.atleast_2d(xcat)
        return self.posterior_matrix(np.atleast_2d(x), xcat2)[0]

    def predict_matrix(self, X, Xcat=None) -> np.ndarray:
        return np.argmax(self.posterior_matrix(X, Xcat), axis=1)

    def predict(self, x, xcat=None) -> int:
        return int(np.argmax(self.posterior(x, xcat)))

    def margin_matrix(self, X, Xcat=None) -> np.ndarray:
        """Top-1 minus top-2 posterior per row, in [0, 1]."""
        post = self.posterior_matrix(X, Xcat)
        part = np.partition(post, -2, axis=1)
        return part[:, -1] - part[:, -2]

    def margin(self, x, xcat=None) -> float:
        return float(self.margin_matrix(np.atleast_2d(x), None if xcat is None else np.atleast_2d(xcat))[0])

    def to_json(self, mixture_ref: str = "inline") -> dict:
        obj = {
            "format": "cmm-v1",
            "class_given_component": self.class_given_component.tolist(),
            "delta": self.delta,
            "mixture_ref": mixture_ref,
        }
        if mixture_ref == "inline":
            obj["mixture"] = self.mixture.to_json()
        return obj

    @staticmethod
    def from_json(obj: dict, mixture: MixtureModel | None = None) -> "CmmClassifier":
        if obj.get("format") != "cmm-v1":
            raise ValueError(f"unsupported cmm format {obj.get('format')!r}")
        if mixture is None:
            mixture = MixtureModel.from_json(obj["mixture"])
        return CmmClassifier(
            mixture=mixture,
            class_given_component=np.array(obj["class_given_component"]),
            delta=float(obj["delta"]),
        )


def fit_assignments(
    mixture: MixtureModel,
    X_labeled,
    labels,
    n_classes: int,
    delta: float | None = None,
    Xcat_labeled=None,
) -> CmmClassifier:
    """Estimate p(class | component) from responsibility-weighted label counts.

    P[c][j] is proportional to delta plus the summed responsibility mass of
    labeled samples of class c on component j. With no labeled rows every
    column is uniform. Default delta is 1/n_classes.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if delta is None:
        delta = 1.0 / n_classes
    if delta <= 0:
        raise ValueError("delta must be positive")
    J = mixture.n_components
    counts = np.full((n_classes, J), delta)
    labels = np.asarray(labels, dtype=int)
    if labels.size:
        R = mixture.responsibilities_matrix(X_labeled, Xcat_labeled)
        for c in range(n_classes):
            mask = labels == c
            if mask.any():
                counts[c] += R[mask].sum(axis=0)
    P = counts / counts.sum(axis=0, keepdims=True)
    return CmmClassifier(mixture=mixture, class_given_component=P, delta=delta)
