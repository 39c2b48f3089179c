"""Geometry on the unit hypersphere: distances, prototypes and the rejection threshold.

Distances are ``(1 - cos) / 2`` so they live in ``[0, 1]``. Known-class
indices are ``0..C-1``; ``UNKNOWN`` (-1) marks a rejected sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyInput,
    EmptyPrototypes,
    MissingPrototype,
    TooFewClasses,
    ZeroVector,
)

UNKNOWN = -1
NORM_EPS = 1e-12
PHI_FLOOR = 1e-6
DEFAULT_ALPHA_M = 0.5


def normalize(v):
    """Project ``v`` (a vector, or rows of a matrix) onto the unit sphere."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroVector("cannot normalize a (numerically) zero vector")
    return v / norms


def distance(a, b):
    """Rescaled cosine distance between unit vectors, in ``[0, 1]``."""
    cos = float(np.clip(np.dot(a, b), -1.0, 1.0))
    return (1.0 - cos) / 2.0


def distance_matrix(z, centers):
    """Pairwise distances between rows of ``z`` (n, d) and ``centers`` (c, d)."""
    cos = np.clip(np.asarray(z) @ np.asarray(centers).T, -1.0, 1.0)
    return (1.0 - cos) / 2.0


@dataclass(frozen=True)
class PrototypeSet:
    classes: tuple          # sorted class indices
    vectors: np.ndarray     # (len(classes), d), unit rows
    counts: tuple

    def __len__(self):
        return len(self.classes)

    def __getitem__(self, y):
        return self.vectors[self.classes.index(y)]

    def as_dict(self) -> Mapping[int, np.ndarray]:
        return {c: self.vectors[i] for i, c in enumerate(self.classes)}


@dataclass(frozen=True)
class ThresholdState:
    theta: float
    phi: float
    alpha: float
    alpha_m: float = DEFAULT_ALPHA_M

    @property
    def alpha_c(self) -> float:
        return self.alpha_m * self.alpha


@dataclass(frozen=True)
class Prediction:
    label: int
    min_distance: float
    nearest_class: int


def _split(embeddings, labels=None):
    if labels is None:
        pairs = list(embeddings)
        if not pairs:
            raise EmptyInput("no embeddings given")
        z = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
        y = np.array([int(p[1]) for p in pairs])
    else:
        z = np.asarray(embeddings, dtype=np.float64)
        y = np.asarray(labels).astype(int)
        if len(z) == 0:
            raise EmptyInput("no embeddings given")
    return z, y


def compute_prototypes(embeddings, labels=None) -> PrototypeSet:
    """Normalized per-class mean of the embeddings.

    Accepts either a list of ``(vector, label)`` pairs or an ``(n, d)`` array
    plus a label array.
    """
    z, y = _split(embeddings, labels)
    classes = np.unique(y)
    sums = np.zeros((len(classes), z.shape[1]))
    counts = np.zeros(len(classes), dtype=int)
    idx = np.searchsorted(classes, y)
    np.add.at(sums, idx, z)
    np.add.at(counts, idx, 1)
    means = sums / counts[:, None]
    vectors = normalize(means)
    return PrototypeSet(tuple(int(c) for c in classes), vectors, tuple(int(c) for c in counts))


def class_sparsity(protos: PrototypeSet) -> float:
    """Mean distance from each prototype to its nearest other prototype."""
    if len(protos) < 2:
        raise TooFewClasses("class sparsity needs at least two prototypes")
    d = distance_matrix(protos.vectors, protos.vectors)
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def class_compactness(embeddings, protos: PrototypeSet, labels=None) -> float:
    """Mean over classes of the mean member-to-prototype distance."""
    z, y = _split(embeddings, labels)
    lookup = {c: i for i, c in enumerate(protos.classes)}
    missing = set(np.unique(y).tolist()) - set(lookup)
    if missing:
        raise MissingPrototype(f"no prototype for classes {sorted(missing)}")
    rows = np.array([lookup[int(c)] for c in y])
    cos = np.clip(np.einsum("ij,ij->i", z, protos.vectors[rows]), -1.0, 1.0)
    d = (1.0 - cos) / 2.0
    per_class = [d[rows == i].mean() for i in np.unique(rows)]
    return float(np.mean(per_class))


def self_paced_threshold(theta: float, phi: float) -> float:
    """Rejection radius from sparsity and compactness, clamped to ``[0, 1]``."""
    phi = max(float(phi), PHI_FLOOR)
    if theta <= 0:
        return 0.0
    alpha = phi * (np.log(theta / (2.0 * phi)) + 1.0)
    return float(min(max(alpha, 0.0), 1.0))


def threshold_state(z, labels, alpha_m=DEFAULT_ALPHA_M):
    """Prototypes plus the full threshold record for labelled embeddings."""
    protos = compute_prototypes(z, labels)
    theta = class_sparsity(protos)
    phi = class_compactness(z, protos, labels)
    return protos, ThresholdState(theta, phi, self_paced_threshold(theta, phi), alpha_m)


def nearest(z, protos: PrototypeSet):
    """Nearest prototype class and distance for every row of ``z``.

    ``argmin`` returns the first minimum, and classes are sorted, so ties go to
    the lowest class index.
    """
    if len(protos) == 0:
        raise EmptyPrototypes("prototype set is empty")
    d = distance_matrix(np.atleast_2d(z), protos.vectors)
    j = d.argmin(axis=1)
    classes = np.asarray(protos.classes)
    return classes[j], d[np.arange(len(d)), j]


def classify_many(z, protos: PrototypeSet, alpha: float):
    """Vectorized :func:`classify`; returns ``(labels, min_distances, nearest)``."""
    near, dmin = nearest(z, protos)
    labels = np.where(dmin < alpha, near, UNKNOWN)
    return labels, dmin, near


def classify(z, protos: PrototypeSet, alpha: float) -> Prediction:
    labels, dmin, near = classify_many(z, protos, alpha)
    return Prediction(int(labels[0]), float(dmin[0]), int(near[0]))
