"""Label spaces, constraint maps, datasets, and finite verification distributions.

The central object is :class:`FiniteDistribution`: an exactly enumerable
population over which every expectation (risk, violation, noise rate) is a
finite weighted sum. All "population" quantities elsewhere in the package are
exact sums over such a support, computed with compensated summation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "LabelSpace",
    "Instance",
    "ConstraintMap",
    "LabeledSample",
    "Dataset",
    "FiniteDistribution",
    "violation_indicator",
    "oracle_noise_rate",
    "sample_dataset",
]

# 17 significant digits round-trip float64 exactly.
_FLOAT_FMT = ".17g"


def fmt_float(x) -> str:
    return format(float(x), _FLOAT_FMT)


@dataclass(frozen=True)
class LabelSpace:
    """A finite output space; labels are the indices 0..count-1."""

    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"label space needs at least 2 labels, got {self.count}")

    def labels(self) -> range:
        return range(self.count)


@dataclass(frozen=True)
class Instance:
    """A support point: an index into its distribution, plus optional features."""

    iid: int
    features: tuple[float, ...] | None = None

    def feature_array(self) -> np.ndarray:
        if self.features is None:
            raise ValueError(f"instance {self.iid} carries no feature vector")
        return np.asarray(self.features, dtype=float)


@dataclass(frozen=True)
class LabeledSample:
    instance: Instance
    label: int


class ConstraintMap:
    """Per-instance admissible label sets, stored as a read-only boolean mask.

    Every admissible set must be a nonempty subset of the label space; empty
    sets are rejected at construction time.
    """

    def __init__(self, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("constraint mask must be 2-d (instances x labels)")
        if mask.shape[1] < 2:
            raise ValueError("constraint mask needs at least 2 label columns")
        if not mask.any(axis=1).all():
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise ValueError(f"admissible set of instance {bad} is empty")
        mask = mask.copy()
        mask.setflags(write=False)
        self._mask = mask

    @classmethod
    def from_sets(cls, sets: Sequence[Iterable[int]], num_labels: int) -> "ConstraintMap":
        mask = np.zeros((len(sets), num_labels), dtype=bool)
        for i, admissible in enumerate(sets):
            for y in admissible:
                if not 0 <= int(y) < num_labels:
                    raise ValueError(f"label {y} out of range for c={num_labels}")
                mask[i, int(y)] = True
        return cls(mask)

    @classmethod
    def from_function(
        cls,
        instances: Sequence[Instance],
        num_labels: int,
        fn: Callable[[Instance], Iterable[int]],
    ) -> "ConstraintMap":
        """Evaluate a deterministic feature->labels rule once, at construction."""
        return cls.from_sets([tuple(fn(inst)) for inst in instances], num_labels)

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def num_instances(self) -> int:
        return self._mask.shape[0]

    @property
    def num_labels(self) -> int:
        return self._mask.shape[1]

    def _check_iid(self, iid: int) -> int:
        iid = int(iid)
        if not 0 <= iid < self.num_instances:
            raise KeyError(f"unknown instance id {iid}")
        return iid

    def admissible_mask(self, iid: int) -> np.ndarray:
        return self._mask[self._check_iid(iid)]

    def admissible_set(self, iid: int) -> frozenset[int]:
        return frozenset(int(y) for y in np.flatnonzero(self.admissible_mask(iid)))

    def admissible_count(self, iid: int) -> int:
        return int(self.admissible_mask(iid).sum())

    def bitmask(self, iid: int) -> int:
        """Admissible set packed as an integer; bit y set iff label y is admissible."""
        return int(sum(1 << y for y in np.flatnonzero(self.admissible_mask(iid))))

    @classmethod
    def from_bitmasks(cls, bits: Sequence[int], num_labels: int) -> "ConstraintMap":
        mask = np.zeros((len(bits), num_labels), dtype=bool)
        for i, b in enumerate(bits):
            b = int(b)
            if b < 0 or b >> num_labels:
                raise ValueError(f"bitmask {b} out of range for c={num_labels}")
            for y in range(num_labels):
                mask[i, y] = bool(b >> y & 1)
        return cls(mask)


def violation_indicator(cmap: ConstraintMap, instance_id: int, label: int) -> int:
    """1 iff `label` is not admissible at the instance, else 0."""
    row = cmap.admissible_mask(instance_id)
    label = int(label)
    if not 0 <= label < cmap.num_labels:
        raise ValueError(f"label {label} out of range for c={cmap.num_labels}")
    return int(not row[label])


@dataclass(frozen=True)
class Dataset:
    """A labeled split of size m_L plus an unlabeled split of size m_U."""

    labeled: tuple[LabeledSample, ...]
    unlabeled: tuple[Instance, ...]

    @property
    def m_labeled(self) -> int:
        return len(self.labeled)

    @property
    def m_unlabeled(self) -> int:
        return len(self.unlabeled)

    def to_text(self) -> str:
        p = _feature_dim(
            [s.instance for s in self.labeled] + list(self.unlabeled)
        )
        lines = [f"dataset 1 {self.m_labeled} {self.m_unlabeled} {p}"]
        for s in self.labeled:
            lines.append(" ".join(["L", str(s.instance.iid), str(s.label)] + _feat_cols(s.instance, p)))
        for inst in self.unlabeled:
            lines.append(" ".join(["U", str(inst.iid)] + _feat_cols(inst, p)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Dataset":
        rows = _data_rows(text)
        head = rows[0].split()
        if head[:2] != ["dataset", "1"]:
            raise ValueError("not a dataset table (expected 'dataset 1' header)")
        m_l, m_u, p = (int(v) for v in head[2:5])
        if len(rows) - 1 != m_l + m_u:
            raise ValueError(f"expected {m_l + m_u} rows, found {len(rows) - 1}")
        labeled, unlabeled = [], []
        for row in rows[1:]:
            cols = row.split()
            feats = tuple(float(v) for v in cols[-p:]) if p else None
            if cols[0] == "L":
                labeled.append(LabeledSample(Instance(int(cols[1]), feats), int(cols[2])))
            elif cols[0] == "U":
                unlabeled.append(Instance(int(cols[1]), feats))
            else:
                raise ValueError(f"unknown dataset row marker {cols[0]!r}")
        return cls(tuple(labeled), tuple(unlabeled))


class FiniteDistribution:
    """Enumerable instance space with point weights, oracle labels, and a constraint.

    Weights must be nonnegative and sum to 1 within 1e-12. The constraint map
    covers exactly the support, so every population quantity reduces to an
    exact finite sum.
    """

    def __init__(
        self,
        weights,
        oracle_labels,
        constraint: ConstraintMap,
        features=None,
    ):
        weights = np.asarray(weights, dtype=float)
        oracle = np.asarray(oracle_labels, dtype=int)
        if weights.ndim != 1 or weights.shape != oracle.shape:
            raise ValueError("weights and oracle labels must be 1-d and same length")
        if weights.size == 0:
            raise ValueError("distribution needs at least one support point")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        total = math.fsum(weights.tolist())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, not 1 within 1e-12")
        if constraint.num_instances != weights.size:
            raise ValueError("constraint map does not cover the support")
        c = constraint.num_labels
        if ((oracle < 0) | (oracle >= c)).any():
            raise ValueError(f"oracle labels out of range for c={c}")
        if features is not None:
            features = np.asarray(features, dtype=float)
            if features.ndim != 2 or features.shape[0] != weights.size:
                raise ValueError("features must be (num_points, dim)")
            if not np.isfinite(features).all():
                raise ValueError("features must be finite")
            features = features.copy()
            features.setflags(write=False)
        for arr in (weights, oracle):
            arr.setflags(write=False)
        self._weights = weights
        self._oracle = oracle
        self._constraint = constraint
        self._features = features
        self._instances = tuple(
            Instance(i, tuple(features[i]) if features is not None else None)
            for i in range(weights.size)
        )
        # Generator metadata (achieved noise rates, warnings); not serialized.
        self.info: dict = {}

    @property
    def num_points(self) -> int:
        return self._weights.size

    @property
    def num_labels(self) -> int:
        return self._constraint.num_labels

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def oracle(self) -> np.ndarray:
        return self._oracle

    @property
    def constraint(self) -> ConstraintMap:
        return self._constraint

    @property
    def features(self) -> np.ndarray | None:
        return self._features

    @property
    def instances(self) -> tuple[Instance, ...]:
        return self._instances

    def instance(self, iid: int) -> Instance:
        return self._instances[int(iid)]

    def to_text(self) -> str:
        """One row per point: weight, oracle label, admissible bitmask, features.

        Floats are written with 17 significant digits, which round-trips
        float64 bit-exactly.
        """
        p = 0 if self._features is None else self._features.shape[1]
        lines = [f"finite-distribution 1 {self.num_points} {self.num_labels} {p}"]
        for i in range(self.num_points):
            cols = [fmt_float(self._weights[i]), str(int(self._oracle[i])),
                    str(self._constraint.bitmask(i))]
            if p:
                cols += [fmt_float(v) for v in self._features[i]]
            lines.append(" ".join(cols))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FiniteDistribution":
        rows = _data_rows(text)
        head = rows[0].split()
        if head[:2] != ["finite-distribution", "1"]:
            raise ValueError("not a finite-distribution table")
        n, c, p = (int(v) for v in head[2:5])
        if len(rows) - 1 != n:
            raise ValueError(f"expected {n} rows, found {len(rows) - 1}")
        weights = np.empty(n)
        oracle = np.empty(n, dtype=int)
        bits = []
        feats = np.empty((n, p)) if p else None
        for i, row in enumerate(rows[1:]):
            cols = row.split()
            if len(cols) != 3 + p:
                raise ValueError(f"row {i}: expected {3 + p} columns, got {len(cols)}")
            weights[i] = float(cols[0])
            oracle[i] = int(cols[1])
            bits.append(int(cols[2]))
            if p:
                feats[i] = [float(v) for v in cols[3:]]
        cmap = ConstraintMap.from_bitmasks(bits, c)
        return cls(weights, oracle, cmap, features=feats)


def _feature_dim(instances: Sequence[Instance]) -> int:
    dims = {0 if inst.features is None else len(inst.features) for inst in instances}
    if len(dims) > 1:
        raise ValueError("mixed feature dimensions in dataset")
    return dims.pop() if dims else 0


def _feat_cols(inst: Instance, p: int) -> list[str]:
    if p == 0:
        return []
    return [fmt_float(v) for v in inst.features]


def _data_rows(text: str) -> list[str]:
    rows = [line.strip() for line in text.splitlines()]
    rows = [r for r in rows if r and not r.startswith("#")]
    if not rows:
        raise ValueError("empty table")
    return rows


def oracle_noise_rate(dist: FiniteDistribution, cmap: ConstraintMap | None = None) -> float:
    """Probability mass of support points whose oracle label is inadmissible."""
    cmap = dist.constraint if cmap is None else cmap
    mask = cmap.mask
    violated = ~mask[np.arange(dist.num_points), dist.oracle]
    return math.fsum(dist.weights[violated].tolist())


def sample_dataset(dist: FiniteDistribution, m_labeled: int, m_unlabeled: int, seed: int) -> Dataset:
    """Draw i.i.d. labeled and unlabeled splits from the same marginal.

    Deterministic given the seed; labeled samples carry the oracle label of
    their support point, unlabeled samples drop it.
    """
    if m_labeled < 0 or m_unlabeled < 0:
        raise ValueError("split sizes must be nonnegative")
    rng = np.random.default_rng(seed)
    n = dist.num_points
    idx_l = rng.choice(n, size=m_labeled, p=dist.weights)
    idx_u = rng.choice(n, size=m_unlabeled, p=dist.weights)
    labeled = tuple(
        LabeledSample(dist.instance(i), int(dist.oracle[i])) for i in idx_l
    )
    unlabeled = tuple(dist.instance(i) for i in idx_u)
    return Dataset(labeled, unlabeled)
