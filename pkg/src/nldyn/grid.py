"""Midpoint discretization of box domains and discrete Lp machinery.

Nodes are cell midpoints of a uniform tensor grid, so every node is
strictly interior and all quadrature weights equal ``measure / count``.
With uniform positive weights the discrete Hoelder and Young inequalities
hold exactly (up to rounding), which the operator-bound and dissipativity
checks downstream rely on.

Grids and state fields are immutable after construction; all functions
here are pure, and reductions run in a fixed sequential order, so results
are bit-reproducible and safe to evaluate concurrently on shared inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError, UsageError


def _as_bounds(dimension: int, bounds) -> tuple[tuple[float, float], ...]:
    seq = list(bounds)
    if len(seq) == 2 and not hasattr(seq[0], "__len__"):
        seq = [(seq[0], seq[1])]  # bare (lo, hi) shorthand in 1D
    pairs = []
    for axis, pair in enumerate(seq):
        lo, hi = float(pair[0]), float(pair[1])
        if not math.isfinite(lo) or not math.isfinite(hi) or lo >= hi:
            raise ConfigurationError(f"axis {axis}: degenerate interval [{lo}, {hi}]")
        pairs.append((lo, hi))
    if len(pairs) != dimension:
        raise ConfigurationError(f"expected {dimension} interval(s), got {len(pairs)}")
    return tuple(pairs)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform midpoint-rule grid over an axis-aligned box."""

    dimension: int
    bounds: tuple[tuple[float, float], ...]
    nodes_per_axis: int
    nodes: np.ndarray
    weights: np.ndarray
    measure: float

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dimension

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple((hi - lo) / self.nodes_per_axis for lo, hi in self.bounds)

    @property
    def key(self) -> tuple:
        return (self.dimension, self.bounds, self.nodes_per_axis)

    def matches(self, other: "Grid") -> bool:
        """True when both grids discretize the same box the same way."""
        return self is other or self.key == other.key


def build_grid(dimension: int, bounds, nodes_per_axis: int) -> Grid:
    """Build a tensor-product midpoint grid.

    ``bounds`` is one ``(lo, hi)`` pair per axis (a bare pair is accepted
    in 1D).  Each axis gets ``nodes_per_axis`` cell midpoints; every node
    carries the same weight and the weights sum to the box measure.
    """
    if dimension not in (1, 2):
        raise ConfigurationError(f"dimension must be 1 or 2, got {dimension}")
    if nodes_per_axis < 2:
        raise ConfigurationError(f"nodes_per_axis must be at least 2, got {nodes_per_axis}")
    box = _as_bounds(dimension, bounds)
    axes = []
    for lo, hi in box:
        step = (hi - lo) / nodes_per_axis
        axes.append(lo + step * (np.arange(nodes_per_axis) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    measure = 1.0
    for lo, hi in box:
        measure *= hi - lo
    weights = np.full(nodes.shape[0], measure / nodes.shape[0])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return Grid(dimension, box, nodes_per_axis, nodes, weights, measure)


@dataclass(frozen=True, eq=False)
class StateField:
    """A scalar field sampled at the grid nodes; values are always finite."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.node_count,):
            raise UsageError(
                f"state has {values.shape} values for a grid of {self.grid.node_count} nodes"
            )
        bad = ~np.isfinite(values)
        if bad.any():
            raise NumericalError(f"non-finite state value at node {int(np.flatnonzero(bad)[0])}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def _check_same_grid(self, other: "StateField") -> None:
        if not self.grid.matches(other.grid):
            raise UsageError("state fields live on different grids")

    def __add__(self, other: "StateField") -> "StateField":
        self._check_same_grid(other)
        return StateField(self.grid, self.values + other.values)

    def __sub__(self, other: "StateField") -> "StateField":
        self._check_same_grid(other)
        return StateField(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "StateField":
        return StateField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class LpSpace:
    """Lebesgue exponent ``p`` in [1, inf) with its conjugate exponent."""

    p: float
    p_conjugate: float = field(init=False)

    def __post_init__(self) -> None:
        p = float(self.p)
        if not math.isfinite(p) or p < 1.0:
            raise ConfigurationError(f"p must lie in [1, inf), got {self.p}")
        object.__setattr__(self, "p", p)
        conj = math.inf if p == 1.0 else p / (p - 1.0)
        object.__setattr__(self, "p_conjugate", conj)


def _exponent(space) -> float:
    p = space.p if isinstance(space, LpSpace) else float(space)
    if not math.isfinite(p) or p < 1.0:
        raise ConfigurationError(f"p must lie in [1, inf), got {space}")
    return p


def lp_norm(u: StateField, space) -> float:
    """Weighted discrete Lp norm ``(sum_j w_j |u_j|^p)^(1/p)``.

    ``space`` may be an :class:`LpSpace` or a bare exponent.  The sup norm
    is deliberately not reachable here; use :func:`sup_norm`.
    """
    p = _exponent(space)
    w = u.grid.weights
    a = np.abs(u.values)
    if p == 1.0:
        return float(w @ a)
    if p == 2.0:
        return float(math.sqrt(w @ (a * a)))
    return float((w @ a**p) ** (1.0 / p))


def sup_norm(u: StateField) -> float:
    """Max of |u| over the nodes; diagnostic counterpart of the Lp norms."""
    return float(np.max(np.abs(u.values)))


def discrete_gradient(u: StateField, axis: int = 0) -> StateField:
    """One-sided forward difference along ``axis``; the last node copies
    its backward difference.  First-order, exact on linear fields; used
    only as a smoothness monitor, never inside the dynamics."""
    grid = u.grid
    if not 0 <= axis < grid.dimension:
        raise UsageError(f"axis {axis} out of range for dimension {grid.dimension}")
    arr = u.values.reshape(grid.shape)
    diff = np.diff(arr, axis=axis) / grid.spacings[axis]
    last = np.take(diff, [-1], axis=axis)
    grad = np.concatenate([diff, last], axis=axis)
    return StateField(grid, grad.ravel())


def grad_lp_norm(u: StateField, space, axis: int = 0) -> float:
    """Lp norm of the one-sided gradient monitor along ``axis``."""
    return lp_norm(discrete_gradient(u, axis), space)


def random_state_field(grid: Grid, rng: np.random.Generator, amplitude: float) -> StateField:
    """Nodewise uniform draw in [-amplitude, amplitude]."""
    if amplitude < 0:
        raise UsageError(f"amplitude must be nonnegative, got {amplitude}")
    return StateField(grid, rng.uniform(-amplitude, amplitude, grid.node_count))


def scale_to_norm(u: StateField, space, target: float) -> StateField:
    """Rescale ``u`` so that its Lp norm equals ``target`` exactly."""
    if target < 0:
        raise UsageError(f"target norm must be nonnegative, got {target}")
    if target == 0.0:
        return StateField(u.grid, np.zeros(u.grid.node_count))
    current = lp_norm(u, space)
    if current == 0.0:
        raise UsageError("cannot rescale the zero field to a positive norm")
    return u * (target / current)
