"""Discrete distributions, finite mixtures and expectations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-12


class DistributionError(ValueError):
    pass


class LossEvaluationError(ArithmeticError):
    """A loss oracle returned a non-finite value at a specific atom."""

    def __init__(self, index: int, value):
        super().__init__(f"loss is not finite at atom {index}: {value!r}")
        self.index = index
        self.value = value


@dataclass(frozen=True)
class SamplePoint:
    coords: tuple
    label: Optional[int] = None

    def __post_init__(self):
        coords = tuple(float(c) for c in np.atleast_1d(self.coords))
        object.__setattr__(self, "coords", coords)
        if self.label is not None:
            if self.label not in (-1, 1):
                raise DistributionError(f"label must be -1 or +1, got {self.label!r}")
            object.__setattr__(self, "label", int(self.label))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coords)

    def __repr__(self):
        tail = "" if self.label is None else f", label={self.label}"
        return f"SamplePoint({list(self.coords)}{tail})"


def point(*coords, label=None) -> SamplePoint:
    return SamplePoint(tuple(coords), label)


def _check_simplex(w: np.ndarray, what: str):
    if w.ndim != 1 or w.size == 0:
        raise DistributionError(f"{what} must be a nonempty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DistributionError(f"{what} must be finite and nonnegative")
    if abs(math.fsum(w) - 1.0) > SIMPLEX_TOL:
        raise DistributionError(f"{what} sum to {math.fsum(w)!r}, not 1")


@dataclass(frozen=True)
class DiscreteDistribution:
    atoms: tuple
    weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, SamplePoint) else SamplePoint(a) for a in self.atoms)
        w = np.array(self.weights, dtype=float)
        if len(atoms) != w.size:
            raise DistributionError(f"{len(atoms)} atoms but {w.size} weights")
        _check_simplex(w, "weights")
        dims = {a.dim for a in atoms}
        if len(dims) != 1:
            raise DistributionError(f"atoms have mixed dimensions {sorted(dims)}")
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def dim(self) -> int:
        return self.atoms[0].dim

    def coords(self) -> np.ndarray:
        """Atom coordinates as an (n, dim) array."""
        return np.array([a.coords for a in self.atoms])

    def is_uniform(self, tol: float = SIMPLEX_TOL) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= tol))


@dataclass(frozen=True)
class FiniteMixture:
    components: tuple
    mixing_weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.array(self.mixing_weights, dtype=float)
        if len(comps) != w.size:
            raise DistributionError(f"{len(comps)} components but {w.size} mixing weights")
        _check_simplex(w, "mixing weights")
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "mixing_weights", w)


def dirac(p: SamplePoint) -> DiscreteDistribution:
    return DiscreteDistribution((p,), [1.0])


def empirical_from_samples(samples: Sequence[SamplePoint]) -> DiscreteDistribution:
    """Uniform weights on the samples in order; duplicates stay separate atoms."""
    samples = list(samples)
    if not samples:
        raise DistributionError("cannot build an empirical distribution from no samples")
    n = len(samples)
    return DiscreteDistribution(tuple(samples), np.full(n, 1.0 / n))


def mean_distribution(mix: FiniteMixture) -> DiscreteDistribution:
    """Collapse a finite mixture onto the union of its atoms.

    Atoms are identified by exact coordinate and label equality.  Weights
    are accumulated with ``math.fsum`` so the result sums to one to within
    rounding of the inputs; nothing is renormalized.
    """
    order: list = []
    terms: dict = {}
    for wk, comp in zip(mix.mixing_weights, mix.components):
        for atom, mu in zip(comp.atoms, comp.weights):
            if atom not in terms:
                terms[atom] = []
                order.append(atom)
            terms[atom].append(float(wk) * float(mu))
    weights = np.array([math.fsum(terms[a]) for a in order])
    return DiscreteDistribution(tuple(order), weights)


def evaluate_losses(dist: DiscreteDistribution, h: Callable[[SamplePoint], float]) -> np.ndarray:
    vals = np.empty(dist.size)
    for j, atom in enumerate(dist.atoms):
        v = float(h(atom))
        if not math.isfinite(v):
            raise LossEvaluationError(j, v)
        vals[j] = v
    return vals


def expectation(dist: DiscreteDistribution, h: Callable[[SamplePoint], float]) -> float:
    """Weighted sum of ``h`` over the atoms (compensated summation)."""
    vals = evaluate_losses(dist, h)
    return math.fsum(dist.weights * vals)
