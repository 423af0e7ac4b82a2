"""Problem data for the evolution law ``u' = -h u + g(K u) + f(x, u)``.

The decay coefficient ``h``, the reaction ``f`` and the gain ``g`` come
from closed registries of analytic families, each declared together with
linear growth constants: ``|f|, |df/du|, |df/dx| <= k_f |s| + c_f`` and
``|g|, |g'| <= k_g |s| + c_g``.  Declared constants are verified by dense
sampling, not trusted; a failed sample is a hard error carrying the
witness point.  From the verified constants the module derives the
absorbing radius, the norm decay rate, and the gradient-monitor constants
used by the long-time diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, HypothesisError, UsageError
from .grid import Grid, LpSpace, StateField
from .kernels import KernelMatrix, derivative_p_norm, p_norm

DECAY_FAMILIES = ("constant", "affine")
REACTION_FAMILIES = ("zero", "saturated_affine", "linear_saturated")
GAIN_FAMILIES = ("zero", "linear", "scaled_tanh")

#: Quadrature slack allowed when checking that the kernel's total
#: interaction mass does not exceed one.
KERNEL_MASS_TOLERANCE = 1e-3

_GROWTH_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class DecayField:
    """Pointwise decay coefficient with its analytic bounds.

    ``h0`` is the exact lower bound over the box, ``h1`` the (constant)
    slope of every partial derivative, and ``sup_norm`` the larger of
    ``sup |h|`` and ``h1`` (the W^{1,inf} size used by the gradient
    diagnostics).
    """

    family: str
    h0: float
    h1: float
    values: np.ndarray
    sup_norm: float


def make_decay(grid: Grid, family: str, base: float, slope: float = 0.0) -> DecayField:
    """Build ``h(x) = base`` or ``h(x) = base + slope * sum_i x_i``.

    The affine slope must be nonnegative so the analytic minimum sits at
    the lower corner of the box.
    """
    if family not in DECAY_FAMILIES:
        raise ConfigurationError(f"unknown decay family '{family}'")
    if family == "constant":
        if slope != 0.0:
            raise ConfigurationError("the constant decay family takes no slope")
        h0, h1 = float(base), 0.0
        values = np.full(grid.node_count, h0)
        largest = abs(h0)
    else:
        if slope < 0.0:
            raise ConfigurationError("the affine decay slope must be nonnegative")
        h1 = float(slope)
        h0 = float(base) + h1 * sum(lo for lo, _ in grid.bounds)
        values = base + h1 * grid.nodes.sum(axis=1)
        largest = float(base) + h1 * sum(hi for _, hi in grid.bounds)
    if not h0 > 0.0:
        raise HypothesisError(f"decay must be bounded below by a positive constant, got h0 = {h0}")
    values = np.asarray(values, dtype=float)
    values.setflags(write=False)
    return DecayField(family, h0, h1, values, max(largest, h1))


@dataclass(frozen=True)
class ReactionSpec:
    """Reaction term ``f(x, s)`` with declared growth constants.

    Families: ``zero``; ``saturated_affine`` ``alpha * tanh(s) + beta(x)``;
    ``linear_saturated`` ``scale * s / (1 + s^2) + beta(x)``.  The offset
    is affine in space: ``beta(x) = beta0 + beta1 * sum_i x_i``.
    """

    family: str
    k_f: float
    c_f: float
    alpha: float = 0.0
    scale: float = 0.0
    beta0: float = 0.0
    beta1: float = 0.0

    def __post_init__(self) -> None:
        if self.family not in REACTION_FAMILIES:
            raise ConfigurationError(f"unknown reaction family '{self.family}'")
        if not (self.k_f > 0 and self.c_f > 0):
            raise ConfigurationError("growth constants k_f and c_f must be positive")
        used = {
            "zero": (),
            "saturated_affine": ("alpha", "beta0", "beta1"),
            "linear_saturated": ("scale", "beta0", "beta1"),
        }[self.family]
        for name in ("alpha", "scale", "beta0", "beta1"):
            if name not in used and getattr(self, name) != 0.0:
                raise ConfigurationError(f"reaction family '{self.family}' does not use {name}")

    def offset(self, coord_sum: np.ndarray) -> np.ndarray:
        return self.beta0 + self.beta1 * coord_sum

    def value(self, coord_sum, s):
        if self.family == "zero":
            return np.zeros(np.broadcast(coord_sum, s).shape)
        if self.family == "saturated_affine":
            return self.alpha * np.tanh(s) + self.offset(coord_sum)
        return self.scale * s / (1.0 + s * s) + self.offset(coord_sum)

    def slope(self, s):
        """Derivative in the state argument."""
        if self.family == "zero":
            return np.zeros(np.shape(s))
        if self.family == "saturated_affine":
            t = np.tanh(s)
            return self.alpha * (1.0 - t * t)
        q = 1.0 + s * s
        return self.scale * (1.0 - s * s) / (q * q)

    def space_gradient_bound(self) -> float:
        """Largest per-axis spatial derivative (constant for these families)."""
        return abs(self.beta1)


@dataclass(frozen=True)
class GainSpec:
    """Gain ``g(s)`` applied to the nonlocal average, with growth constants.

    Families: ``zero``; ``linear`` ``gamma * s``; ``scaled_tanh``
    ``amplitude * tanh(slope_factor * s)``.
    """

    family: str
    k_g: float
    c_g: float
    gamma: float = 0.0
    amplitude: float = 0.0
    slope_factor: float = 0.0

    def __post_init__(self) -> None:
        if self.family not in GAIN_FAMILIES:
            raise ConfigurationError(f"unknown gain family '{self.family}'")
        if not (self.k_g > 0 and self.c_g > 0):
            raise ConfigurationError("growth constants k_g and c_g must be positive")
        used = {
            "zero": (),
            "linear": ("gamma",),
            "scaled_tanh": ("amplitude", "slope_factor"),
        }[self.family]
        for name in ("gamma", "amplitude", "slope_factor"):
            if name not in used and getattr(self, name) != 0.0:
                raise ConfigurationError(f"gain family '{self.family}' does not use {name}")

    def value(self, s):
        if self.family == "zero":
            return np.zeros(np.shape(s))
        if self.family == "linear":
            return self.gamma * np.asarray(s, dtype=float)
        return self.amplitude * np.tanh(self.slope_factor * s)

    def slope(self, s):
        if self.family == "zero":
            return np.zeros(np.shape(s))
        if self.family == "linear":
            return np.full(np.shape(s), self.gamma)
        t = np.tanh(self.slope_factor * s)
        return self.amplitude * self.slope_factor * (1.0 - t * t)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Complete problem data; immutable once built, validated separately."""

    kernel: KernelMatrix
    decay: DecayField
    reaction: ReactionSpec
    gain: GainSpec
    space: LpSpace
    delta: float
    mu: float
    require_gradient_hypotheses: bool = False

    def __post_init__(self) -> None:
        if self.decay.values.shape != (self.kernel.grid.node_count,):
            raise UsageError("decay field and kernel matrix live on different grids")
        if not self.delta > 0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}")
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")

    @property
    def grid(self) -> Grid:
        return self.kernel.grid


@dataclass(frozen=True)
class DerivedConstants:
    """Quantities computed from the verified hypotheses.

    ``r_delta`` is the absorbing-ball radius, ``epsilon`` the decay
    margin ``h0 - k_f - k_g``, and ``norm_decay_rate`` the guaranteed
    exponential rate of the Lp norm outside the ball.  The ``grad_*``
    fields describe the gradient monitor; they are None when the kernel
    carries no derivative matrices or the stronger gradient hypothesis
    fails.
    """

    r_delta: float
    epsilon: float
    norm_decay_rate: float
    grad_epsilon: float
    grad_bound_m: float | None
    grad_threshold: float | None
    grad_decay_rate: float | None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    slack: float
    passed: bool
    detail: str


def _growth_samples(span: float = 1e3, count: int = 50) -> np.ndarray:
    mags = np.logspace(-3, math.log10(span), count)
    return np.concatenate([-mags[::-1], [0.0], mags])


def _node_subset(grid: Grid, limit: int = 100) -> np.ndarray:
    stride = max(1, grid.node_count // limit)
    return grid.nodes[::stride]


def _check_reaction_growth(spec: ModelSpec) -> HypothesisCheck:
    reaction = spec.reaction
    nodes = _node_subset(spec.grid)
    coord_sum = nodes.sum(axis=1)[:, None]
    s = _growth_samples()[None, :]
    bound = reaction.k_f * np.abs(s) + reaction.c_f
    worst_slack = math.inf
    worst = ("", 0, 0)
    for label, sampled in (
        ("|f|", np.abs(reaction.value(coord_sum, s))),
        ("|df/du|", np.abs(np.broadcast_to(reaction.slope(s), bound.shape))),
        ("|df/dx|", np.full(bound.shape, reaction.space_gradient_bound())),
    ):
        slack = bound - sampled
        idx = np.unravel_index(np.argmin(slack), slack.shape)
        if slack[idx] < worst_slack:
            worst_slack = float(slack[idx])
            worst = (label, idx[0], idx[1])
    label, i, j = worst
    detail = (
        f"reaction growth bound violated: {label} exceeds k_f|s| + c_f by "
        f"{-worst_slack:.3e} at x = {nodes[i]}, s = {float(s[0, j]):.6g}"
    )
    passed = worst_slack >= -_GROWTH_TOLERANCE
    return HypothesisCheck("reaction_growth", worst_slack, passed, detail if not passed else "")


def _check_gain_growth(spec: ModelSpec) -> HypothesisCheck:
    gain = spec.gain
    s = _growth_samples(count=5000)
    bound = gain.k_g * np.abs(s) + gain.c_g
    worst_slack = math.inf
    worst = ("", 0)
    for label, sampled in (
        ("|g|", np.abs(gain.value(s))),
        ("|g'|", np.abs(gain.slope(s))),
    ):
        slack = bound - sampled
        idx = int(np.argmin(slack))
        if slack[idx] < worst_slack:
            worst_slack = float(slack[idx])
            worst = (label, idx)
    label, j = worst
    detail = (
        f"gain growth bound violated: {label} exceeds k_g|s| + c_g by "
        f"{-worst_slack:.3e} at s = {float(s[j]):.6g}"
    )
    passed = worst_slack >= -_GROWTH_TOLERANCE
    return HypothesisCheck("gain_growth", worst_slack, passed, detail if not passed else "")


def _epsilon(spec: ModelSpec) -> float:
    return spec.decay.h0 - spec.reaction.k_f - spec.gain.k_g


def _r_delta(spec: ModelSpec) -> float:
    eps = _epsilon(spec)
    return (
        (spec.reaction.c_f + spec.gain.c_g)
        * (1.0 + spec.delta)
        * max(1.0, spec.grid.measure)
        / eps
    )


def _collect_checks(spec: ModelSpec) -> list[HypothesisCheck]:
    checks: list[HypothesisCheck] = []
    decay = spec.decay

    slack = float(decay.values.min() - decay.h0)
    checks.append(
        HypothesisCheck(
            "decay_lower_bound",
            slack,
            slack >= -1e-12 * max(1.0, decay.h0),
            f"decay field dips {-slack:.3e} below its declared lower bound h0 = {decay.h0}",
        )
    )

    mass = p_norm(spec.kernel, 1.0)
    slack = 1.0 + KERNEL_MASS_TOLERANCE - mass
    checks.append(
        HypothesisCheck(
            "kernel_mass",
            slack,
            slack >= 0.0,
            f"kernel interaction mass {mass:.6g} exceeds 1 beyond quadrature tolerance",
        )
    )

    eps = _epsilon(spec)
    checks.append(
        HypothesisCheck(
            "growth_margin",
            eps,
            eps > 0.0,
            "hypothesis k_f + k_g < h_0 violated: "
            f"{spec.reaction.k_f} + {spec.gain.k_g} >= {decay.h0}",
        )
    )

    checks.append(_check_reaction_growth(spec))
    checks.append(_check_gain_growth(spec))

    if spec.require_gradient_hypotheses:
        checks.append(
            HypothesisCheck(
                "decay_gradient",
                decay.h1,
                decay.h1 > 0.0,
                "gradient diagnostics need a strictly increasing decay field (h1 > 0)",
            )
        )
        has_derivatives = spec.kernel.derivative_entries is not None
        checks.append(
            HypothesisCheck(
                "kernel_derivatives",
                1.0 if has_derivatives else -1.0,
                has_derivatives,
                "gradient diagnostics need a kernel assembled with derivative matrices",
            )
        )
        if eps > 0.0:
            grad_eps = decay.h0 - (spec.reaction.k_f * _r_delta(spec) + spec.reaction.c_f)
            checks.append(
                HypothesisCheck(
                    "gradient_margin",
                    grad_eps,
                    grad_eps > 0.0,
                    "gradient hypothesis h_0 > k_f r_delta + c_f violated: "
                    f"margin {grad_eps:.6g}",
                )
            )
    return checks


def _derive(spec: ModelSpec) -> DerivedConstants:
    eps = _epsilon(spec)
    r_delta = _r_delta(spec)
    rate = spec.delta / (1.0 + spec.delta) * eps
    grad_eps = spec.decay.h0 - (spec.reaction.k_f * r_delta + spec.reaction.c_f)
    grad_m = grad_threshold = grad_rate = None
    if spec.kernel.derivative_entries is not None and grad_eps > 0.0:
        p = spec.space.p
        p_conj = spec.space.p_conjugate
        measure_root = spec.grid.measure ** (1.0 / p)
        dj_norm = max(
            derivative_p_norm(spec.kernel, axis, p_conj) for axis in range(spec.grid.dimension)
        )
        grad_m = (
            r_delta * dj_norm * (spec.gain.k_g * r_delta + spec.gain.c_g * measure_root)
            + (spec.reaction.k_f * r_delta + spec.reaction.c_f * measure_root)
            + p * r_delta * spec.decay.sup_norm
        ) / p
        grad_threshold = grad_m * (1.0 + spec.mu) / grad_eps
        grad_rate = spec.mu / (1.0 + spec.mu) * grad_eps
    return DerivedConstants(
        r_delta=r_delta,
        epsilon=eps,
        norm_decay_rate=rate,
        grad_epsilon=grad_eps,
        grad_bound_m=grad_m,
        grad_threshold=grad_threshold,
        grad_decay_rate=grad_rate,
    )


def validate(spec: ModelSpec) -> DerivedConstants:
    """Verify every declared hypothesis and return the derived constants.

    Deterministic and idempotent: the sampling lattices are fixed, so two
    calls on the same spec produce identical results.  The first failing
    check raises :class:`HypothesisError` with the failing inequality and,
    for sampled bounds, the witness point.
    """
    for check in _collect_checks(spec):
        if not check.passed:
            raise HypothesisError(check.detail)
    return _derive(spec)


def hypothesis_report(spec: ModelSpec) -> dict:
    """Non-raising form of :func:`validate`: every checked inequality with
    its measured slack, plus the derived constants when all checks pass."""
    checks = _collect_checks(spec)
    passed = all(c.passed for c in checks)
    report = {
        "passed": passed,
        "checks": [
            {"name": c.name, "slack": c.slack, "passed": c.passed}
            for c in checks
        ],
    }
    if passed:
        report["constants"] = _derive(spec).as_dict()
    else:
        report["failures"] = [c.detail for c in checks if not c.passed]
    return report


def _coord_sum(spec: ModelSpec) -> np.ndarray:
    return spec.grid.nodes.sum(axis=1)


def _rhs_values(spec: ModelSpec, values: np.ndarray) -> np.ndarray:
    ku = spec.kernel.entries @ (spec.grid.weights * values)
    return (
        -spec.decay.values * values
        + spec.gain.value(ku)
        + spec.reaction.value(_coord_sum(spec), values)
    )


def eval_rhs(spec: ModelSpec, u: StateField) -> StateField:
    """Right-hand side ``-h u + g(K u) + f(x, u)`` at the nodes."""
    if not u.grid.matches(spec.grid):
        raise UsageError("state field lives on a different grid than the model")
    with np.errstate(over="ignore", invalid="ignore"):
        values = _rhs_values(spec, u.values)
    return StateField(spec.grid, values)


def apply_derivative(spec: ModelSpec, u: StateField, v: StateField) -> StateField:
    """Directional derivative of the right-hand side at ``u`` applied to ``v``:
    ``-h v + g'(K u) (K v) + (df/du)(x, u) v``."""
    if not u.grid.matches(spec.grid) or not v.grid.matches(spec.grid):
        raise UsageError("state fields live on a different grid than the model")
    weighted = spec.grid.weights
    ku = spec.kernel.entries @ (weighted * u.values)
    kv = spec.kernel.entries @ (weighted * v.values)
    values = (
        -spec.decay.values * v.values
        + spec.gain.slope(ku) * kv
        + spec.reaction.slope(u.values) * v.values
    )
    return StateField(spec.grid, values)


def lipschitz_estimate(spec: ModelSpec, radius: float) -> tuple[float, float]:
    """Lipschitz constants of the gain and the reaction on the range the
    state can visit when its sup norm stays below ``radius``.

    The gain argument runs through the nonlocal average, so its interval
    is stretched by the kernel's row mass; both intervals carry a 10%
    margin.  Sampled on 1e4-point lattices.
    """
    if not radius > 0:
        raise UsageError(f"radius must be positive, got {radius}")
    margin = 1.1
    gain_span = margin * radius * p_norm(spec.kernel, 1.0)
    gain_grid = np.linspace(-gain_span, gain_span, 10001)
    l_g = float(np.max(np.abs(spec.gain.slope(gain_grid)))) if gain_span > 0 else float(
        np.abs(spec.gain.slope(0.0))
    )
    state_grid = np.linspace(-margin * radius, margin * radius, 101)
    l_f = float(np.max(np.abs(spec.reaction.slope(state_grid))))
    return l_g, l_f


def lyapunov_derivative(spec: ModelSpec, u: StateField) -> float:
    """Time derivative of ``|u|_p^p`` along the flow at ``u``:
    ``p sum_j w_j |u_j|^(p-1) sgn(u_j) F(u)_j`` with ``sgn(0) = 0``."""
    p = spec.space.p
    w = u.grid.weights
    a = np.abs(u.values)
    signed = np.sign(u.values) if p == 1.0 else a ** (p - 1.0) * np.sign(u.values)
    return float(p * (w @ (signed * _rhs_values(spec, u.values))))
