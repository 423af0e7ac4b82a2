"""Long-time diagnostics: absorbing-ball entry, attractor sampling,
Hausdorff semidistances, and kernel-perturbation experiments.

The attracting set is approximated by its operative proxy: an ensemble of
trajectories is evolved past a burn-in horizon, then spaced snapshots are
retained.  All attractor-level statements are made at sample tolerance.
The perturbation experiments run twin trajectories under a base and a
perturbed kernel, measure the deviation against an exponential envelope
whose constant is fitted once on the smallest perturbation, and track
the one-sided Hausdorff semidistance between sampled attracting sets as
the perturbation shrinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DiagnosticError, UsageError
from .grid import LpSpace, StateField, lp_norm, sup_norm
from .integrator import (
    IntegratorConfig,
    advance,
    draw_initial_state,
    integrate,
    with_recorded_p,
)
from .kernels import KernelMatrix, l1_distance
from .model import DerivedConstants, ModelSpec, lipschitz_estimate, validate

#: Relative slack on the absorbing-ball membership of retained snapshots.
BALL_SLACK = 1e-6


@dataclass(eq=False)
class AttractorSample:
    """Finite set of states standing in for the attracting set."""

    kernel_id: str
    states: list[StateField]
    burn_in: float
    spacing: float


@dataclass(frozen=True)
class SamplingParams:
    """Ensemble protocol for :func:`sample_attractor`.

    ``initial_radius`` (default: the absorbing radius) bounds the random
    initial norms; burn-in must cover twice the analytic absorbing bound
    for that radius.
    """

    ensemble_size: int
    burn_in: float
    spacing: float
    snapshots_per_member: int
    dt: float
    scheme: str = "etd"
    initial_radius: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.ensemble_size < 1:
            raise ConfigurationError("ensemble_size must be at least 1")
        if self.burn_in < 0 or self.spacing <= 0 or self.dt <= 0:
            raise ConfigurationError("burn_in must be >= 0; spacing and dt positive")
        if self.snapshots_per_member < 1:
            raise ConfigurationError("snapshots_per_member must be at least 1")


def _entry_index(norms: np.ndarray, radius: float) -> int | None:
    hits = np.flatnonzero(norms <= radius)
    return int(hits[0]) if hits.size else None


def absorbing_bound(derived: DerivedConstants, initial_norm: float) -> float:
    """Analytic upper bound on the time to reach the absorbing ball from
    a state of the given norm; zero when already inside."""
    if initial_norm <= derived.r_delta:
        return 0.0
    return math.log(initial_norm / derived.r_delta) / derived.norm_decay_rate


def absorbing_time(
    spec: ModelSpec, u0: StateField, config: IntegratorConfig
) -> tuple[float, float]:
    """Measure when the trajectory enters the absorbing ball.

    Returns ``(measured_entry_time, analytic_bound)`` where the measured
    time is the first recorded time with Lp norm at most the absorbing
    radius; entering later than the bound plus one recording interval is
    a diagnostic failure upstream.  A trajectory that never enters within
    the horizon raises :class:`DiagnosticError` carrying the final norm.
    """
    derived = validate(spec)
    p = spec.space.p
    initial_norm = lp_norm(u0, p)
    if initial_norm <= derived.r_delta:
        raise UsageError(
            f"initial norm {initial_norm:.6g} is already inside the absorbing"
            f" ball of radius {derived.r_delta:.6g}"
        )
    record = integrate(spec, u0, with_recorded_p(config, p))
    idx = _entry_index(record.norms(p), derived.r_delta)
    if idx is None:
        raise DiagnosticError(
            f"trajectory never entered the absorbing ball by t = {record.times[-1]:.6g};"
            f" final norm {record.norms(p)[-1]:.6g} vs radius {derived.r_delta:.6g}"
        )
    return float(record.times[idx]), absorbing_bound(derived, initial_norm)


def sample_attractor(spec: ModelSpec, params: SamplingParams) -> AttractorSample:
    """Ensemble, burn-in, spaced snapshots.

    Every retained state must lie inside the absorbing ball (with a tiny
    relative slack); a member outside it after burn-in signals a
    hypothesis or step-size problem and raises :class:`DiagnosticError`.
    """
    derived = validate(spec)
    radius = params.initial_radius if params.initial_radius is not None else derived.r_delta
    bound = absorbing_bound(derived, radius)
    if params.burn_in < 2.0 * bound:
        raise UsageError(
            f"burn_in = {params.burn_in:.6g} is below twice the absorbing bound"
            f" {bound:.6g} for initial radius {radius:.6g}"
        )
    ball = derived.r_delta * (1.0 + BALL_SLACK)
    p = spec.space.p
    states: list[StateField] = []
    for member, seq in enumerate(np.random.SeedSequence(params.seed).spawn(params.ensemble_size)):
        u = draw_initial_state(spec, seq, radius)
        u = advance(spec, u, params.burn_in, params.dt, params.scheme)
        for snap in range(params.snapshots_per_member):
            if snap > 0:
                u = advance(spec, u, params.spacing, params.dt, params.scheme)
            norm = lp_norm(u, p)
            if norm > ball:
                raise DiagnosticError(
                    f"ensemble member {member} left the absorbing ball after burn-in:"
                    f" norm {norm:.6g} vs radius {derived.r_delta:.6g}"
                )
            states.append(u)
    return AttractorSample(
        kernel_id=spec.kernel.fingerprint,
        states=states,
        burn_in=params.burn_in,
        spacing=params.spacing,
    )


def _states_of(sample) -> list[StateField]:
    return sample.states if isinstance(sample, AttractorSample) else list(sample)


def hausdorff_semidistance(a, b, space) -> float:
    """One-sided Hausdorff semidistance ``max_{x in a} min_{y in b} |x - y|_p``.

    Accepts samples or bare state lists.  Exact pairwise norms; zero when
    ``a`` is contained in ``b``.
    """
    states_a, states_b = _states_of(a), _states_of(b)
    if not states_a or not states_b:
        raise UsageError("cannot measure the semidistance of an empty sample")
    grid = states_a[0].grid
    for state in states_a + states_b:
        if not state.grid.matches(grid):
            raise UsageError("samples live on different grids")
    p = space.p if isinstance(space, LpSpace) else float(space)
    arr_a = np.stack([s.values for s in states_a])
    arr_b = np.stack([s.values for s in states_b])
    diff = np.abs(arr_a[:, None, :] - arr_b[None, :, :])
    pair = (diff**p @ grid.weights) ** (1.0 / p)
    return float(pair.min(axis=1).max())


@dataclass(eq=False)
class DeviationReport:
    """Twin-trajectory deviation against its exponential envelope."""

    times: np.ndarray
    deviations: np.ndarray
    perturbation_size: float
    l_g: float
    l_f: float
    envelope_rate: float
    c0: float
    envelope: np.ndarray
    fitted: bool


def deviation_experiment(
    spec: ModelSpec,
    k_perturbed: KernelMatrix,
    u0: StateField,
    config: IntegratorConfig,
    c0: float | None = None,
    lipschitz_radius: float | None = None,
) -> DeviationReport:
    """Run twin trajectories from one initial state under the base and the
    perturbed kernel and compare their Lp distance with the envelope
    ``c0 * |dJ|_1 * exp((L_g + L_f - h0) t)``.

    With ``c0 = None`` the constant is fitted as the smallest value that
    makes the envelope hold for this run; passing a fitted ``c0`` checks
    the envelope instead and raises :class:`DiagnosticError` at the first
    violating time.
    """
    validate(spec)
    spec_perturbed = replace(spec, kernel=k_perturbed)
    validate(spec_perturbed)
    p = spec.space.p
    cfg = with_recorded_p(config, p)
    cfg = replace(cfg, snapshot_every=cfg.record_every)
    rec_base = integrate(spec, u0, cfg)
    rec_pert = integrate(spec_perturbed, u0, cfg)
    times = rec_base.snapshot_times
    deviations = np.array(
        [lp_norm(a - b, p) for a, b in zip(rec_pert.snapshots, rec_base.snapshots)]
    )
    size = l1_distance(spec.kernel, k_perturbed)
    radius = lipschitz_radius
    if radius is None:
        radius = max(validate(spec).r_delta, sup_norm(u0))
    l_g, l_f = lipschitz_estimate(spec, radius)
    rate = l_g + l_f - spec.decay.h0
    shape = size * np.exp(rate * times)
    fitted = c0 is None
    if fitted:
        c0 = float(np.max(deviations / shape)) if size > 0 else 0.0
    else:
        excess = deviations - c0 * shape
        bad = np.flatnonzero(excess > 1e-12 * np.maximum(1.0, c0 * shape))
        if bad.size:
            t_bad = float(times[bad[0]])
            raise DiagnosticError(
                f"deviation envelope violated at t = {t_bad:.6g}:"
                f" {deviations[bad[0]]:.6g} > {c0 * shape[bad[0]]:.6g}"
            )
    return DeviationReport(
        times=times,
        deviations=deviations,
        perturbation_size=size,
        l_g=l_g,
        l_f=l_f,
        envelope_rate=rate,
        c0=float(c0),
        envelope=c0 * shape,
        fitted=fitted,
    )


def deviation_sweep(
    spec: ModelSpec,
    perturbed_kernels: list[KernelMatrix],
    u0: StateField,
    config: IntegratorConfig,
    enforce: bool = True,
) -> list[DeviationReport]:
    """Deviation runs over a family of perturbations.

    The envelope constant is fitted on the smallest perturbation and then
    held fixed for all others, so larger levels can actually falsify the
    bound.  ``enforce=False`` evaluates without raising.
    """
    if not perturbed_kernels:
        raise UsageError("need at least one perturbed kernel")
    sizes = [l1_distance(spec.kernel, k) for k in perturbed_kernels]
    order = sorted(range(len(sizes)), key=lambda i: sizes[i])
    smallest = order[0]
    reports: dict[int, DeviationReport] = {}
    reports[smallest] = deviation_experiment(spec, perturbed_kernels[smallest], u0, config)
    c0 = reports[smallest].c0
    for i in order[1:]:
        if enforce:
            reports[i] = deviation_experiment(spec, perturbed_kernels[i], u0, config, c0=c0)
        else:
            report = deviation_experiment(spec, perturbed_kernels[i], u0, config)
            report.c0 = c0
            report.envelope = c0 * report.perturbation_size * np.exp(
                report.envelope_rate * report.times
            )
            report.fitted = False
            reports[i] = report
    return [reports[i] for i in range(len(perturbed_kernels))]


@dataclass(eq=False)
class ContinuityReport:
    """Semidistances and deviation diagnostics across perturbation levels."""

    perturbation_sizes: list[float]
    semidistances: list[float]
    deviation_ratios: list[float]
    gronwall_times: np.ndarray
    gronwall_envelope: np.ndarray
    c0: float
    envelope_rate: float
    r_delta: float
    deviations: list[DeviationReport]

    def as_dict(self) -> dict:
        return {
            "perturbation_sizes": self.perturbation_sizes,
            "semidistances": self.semidistances,
            "deviation_ratios": self.deviation_ratios,
            "c0": self.c0,
            "envelope_rate": self.envelope_rate,
            "r_delta": self.r_delta,
        }


def continuity_experiment(
    spec: ModelSpec,
    perturbed_kernels: list[KernelMatrix],
    sampling: SamplingParams,
    config: IntegratorConfig,
    deviation_u0: StateField | None = None,
    tolerance: float | None = None,
    final_threshold: float | None = None,
) -> ContinuityReport:
    """Sample the attracting set per perturbation level and check that the
    semidistance to the base sample shrinks with the perturbation.

    Contract: the semidistances are nonincreasing in the level index up
    to ``tolerance`` (default ``1e-3 r_delta``) and the last one is below
    ``final_threshold`` (default ``1e-2 r_delta``); violations raise
    :class:`DiagnosticError` naming the offending pair.  Twin-trajectory
    deviation ratios and the fitted envelope are reported alongside.
    """
    if len(perturbed_kernels) < 3:
        raise UsageError("need at least 3 perturbation levels")
    derived = validate(spec)
    sizes = [l1_distance(spec.kernel, k) for k in perturbed_kernels]
    for a, b in zip(sizes, sizes[1:]):
        if b > a:
            raise UsageError("perturbation sizes must be ordered largest to smallest")
    tol = tolerance if tolerance is not None else 1e-3 * derived.r_delta
    threshold = final_threshold if final_threshold is not None else 1e-2 * derived.r_delta

    base_sample = sample_attractor(spec, sampling)
    semidistances = []
    for kernel in perturbed_kernels:
        sample = sample_attractor(replace(spec, kernel=kernel), sampling)
        semidistances.append(hausdorff_semidistance(sample, base_sample, spec.space))

    if deviation_u0 is None:
        seq = np.random.SeedSequence(sampling.seed).spawn(sampling.ensemble_size + 1)[-1]
        radius = sampling.initial_radius if sampling.initial_radius is not None else derived.r_delta
        deviation_u0 = draw_initial_state(spec, seq, radius)
    reports = deviation_sweep(spec, perturbed_kernels, deviation_u0, config, enforce=False)
    ratios = [
        float(np.max(r.deviations) / r.perturbation_size) if r.perturbation_size > 0 else 0.0
        for r in reports
    ]
    smallest = min(range(len(reports)), key=lambda i: reports[i].perturbation_size)

    for k in range(len(semidistances) - 1):
        if semidistances[k + 1] > semidistances[k] + tol:
            raise DiagnosticError(
                f"semidistance grew between levels {k} and {k + 1}:"
                f" {semidistances[k]:.6g} -> {semidistances[k + 1]:.6g} (tolerance {tol:.3g})"
            )
    if semidistances[-1] > threshold:
        raise DiagnosticError(
            f"final semidistance {semidistances[-1]:.6g} exceeds threshold {threshold:.6g}"
        )
    return ContinuityReport(
        perturbation_sizes=sizes,
        semidistances=semidistances,
        deviation_ratios=ratios,
        gronwall_times=reports[smallest].times,
        gronwall_envelope=reports[smallest].c0
        * np.exp(reports[smallest].envelope_rate * reports[smallest].times),
        c0=reports[smallest].c0,
        envelope_rate=reports[smallest].envelope_rate,
        r_delta=derived.r_delta,
        deviations=reports,
    )


@dataclass(frozen=True)
class GradientCheckReport:
    """Outcome of the gradient-monitor contraction check."""

    passed: bool
    measured_rate: float | None
    required_rate: float
    threshold: float
    pairs_checked: int


def gradient_bound_check(
    spec: ModelSpec, u0: StateField, config: IntegratorConfig
) -> GradientCheckReport:
    """Check that the gradient monitor contracts at the guaranteed rate
    whenever it sits above its threshold.

    Only record pairs after twice the absorbing bound (the long-time
    regime) and above the threshold carry a claim; below the threshold
    nothing is asserted.  The allowed slack on the rate is ``10 dt``.
    """
    spec = replace(spec, require_gradient_hypotheses=True)
    derived = validate(spec)
    if derived.grad_threshold is None or derived.grad_decay_rate is None:
        raise UsageError("gradient constants are unavailable for this model")
    p = spec.space.p
    cfg = replace(with_recorded_p(config, p), record_gradients=True)
    record = integrate(spec, u0, cfg)
    t_min = 2.0 * absorbing_bound(derived, lp_norm(u0, p))
    tolerance = 10.0 * config.dt
    rates: list[float] = []
    times = record.times
    for axis in range(spec.grid.dimension):
        series = record.grad_lp_norms[(p, axis)]
        for k in range(len(times) - 1):
            if times[k] < t_min or series[k] <= derived.grad_threshold or series[k + 1] <= 0:
                continue
            rate = math.log(series[k] / series[k + 1]) / (times[k + 1] - times[k])
            rates.append(rate)
            if rate < derived.grad_decay_rate - tolerance:
                raise DiagnosticError(
                    f"gradient monitor contracted at rate {rate:.6g} < "
                    f"{derived.grad_decay_rate:.6g} - {tolerance:.3g}"
                    f" between t = {times[k]:.6g} and t = {times[k + 1]:.6g}"
                )
    return GradientCheckReport(
        passed=True,
        measured_rate=min(rates) if rates else None,
        required_rate=derived.grad_decay_rate,
        threshold=derived.grad_threshold,
        pairs_checked=len(rates),
    )
