"""Run configuration: strict key-value parsing and model assembly.

The format is INI-style with six required sections (``grid``, ``kernel``,
``model``, ``integrator``, ``experiment``, ``run``).  Parsing is strict:
unknown sections or keys are fatal, every error carries its key path, and
all errors in a file are reported together.  ``serialize_config`` writes
a canonical form whose parse round-trips exactly, which also makes the
configuration hash well defined.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError
from .grid import Grid, LpSpace, build_grid
from .integrator import IntegratorConfig
from .kernels import KernelMatrix, KernelSpec, assemble
from .model import GainSpec, ModelSpec, ReactionSpec, make_decay


@dataclass(frozen=True)
class GridSection:
    dimension: int
    bounds: tuple[tuple[float, float], ...]
    nodes_per_axis: int


@dataclass(frozen=True)
class KernelSection:
    family: str
    sigma: float | None = None
    radius: float | None = None
    amplitude: float = 1.0
    normalization: str = "global"
    with_derivatives: bool = False
    renormalize_rows: bool = False


@dataclass(frozen=True)
class ModelSection:
    h0: float
    k_f: float
    c_f: float
    k_g: float
    c_g: float
    delta: float
    decay_family: str = "constant"
    h1: float = 0.0
    reaction_family: str = "zero"
    alpha: float = 0.0
    scale: float = 0.0
    beta0: float = 0.0
    beta1: float = 0.0
    gain_family: str = "zero"
    gamma: float = 0.0
    gain_amplitude: float = 0.0
    gain_slope: float = 0.0
    p_values: tuple[float, ...] = (2.0,)
    mu: float = 1.0
    require_gradient_hypotheses: bool = False


@dataclass(frozen=True)
class IntegratorSection:
    dt: float
    t_end: float
    scheme: str = "etd"
    record_every: int = 1
    snapshot_every: int | None = None
    record_gradients: bool = False


@dataclass(frozen=True)
class ExperimentSection:
    name: str | None = None
    count: int = 4
    radius: float | None = None
    radius_factor: float = 10.0
    ensemble_size: int = 4
    burn_in: float = 10.0
    spacing: float = 1.0
    snapshots_per_member: int = 3
    initial_radius: float | None = None
    levels: int = 7
    perturbation_family: str = "width_scale"
    perturbation_scale: float = 1.0
    tolerance_factor: float = 1e-3
    threshold_factor: float = 1e-2


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection
    kernel: KernelSection
    model: ModelSection
    integrator: IntegratorSection
    experiment: ExperimentSection
    seed: int = 0
    output_dir: str = "out"


class _SectionReader:
    """Pulls typed values out of one section, collecting precise errors."""

    def __init__(self, section: str, raw: dict[str, str], errors: list[str]):
        self.section = section
        self.raw = dict(raw)
        self.errors = errors

    def _take(self, key: str) -> str | None:
        return self.raw.pop(key, None)

    def fail(self, key: str, message: str) -> None:
        self.errors.append(f"{self.section}.{key}: {message}")

    def string(self, key, default=None, required=False, choices=None):
        text = self._take(key)
        if text is None:
            if required:
                self.fail(key, "missing required key")
            return default
        if choices is not None and text not in choices:
            self.fail(key, f"expected one of {sorted(choices)}, got '{text}'")
            return default
        return text

    def floating(self, key, default=None, required=False, minimum=None, exclusive_minimum=None):
        text = self._take(key)
        if text is None:
            if required:
                self.fail(key, "missing required key")
            return default
        try:
            value = float(text)
        except ValueError:
            self.fail(key, f"expected a number, got '{text}'")
            return default
        if not math.isfinite(value):
            self.fail(key, f"expected a finite number, got '{text}'")
            return default
        if minimum is not None and value < minimum:
            self.fail(key, f"must be at least {minimum}, got {value}")
            return default
        if exclusive_minimum is not None and value <= exclusive_minimum:
            self.fail(key, f"must be greater than {exclusive_minimum}, got {value}")
            return default
        return value

    def integer(self, key, default=None, required=False, minimum=None):
        text = self._take(key)
        if text is None:
            if required:
                self.fail(key, "missing required key")
            return default
        try:
            value = int(text)
        except ValueError:
            self.fail(key, f"expected an integer, got '{text}'")
            return default
        if minimum is not None and value < minimum:
            self.fail(key, f"must be at least {minimum}, got {value}")
            return default
        return value

    def boolean(self, key, default=False):
        text = self._take(key)
        if text is None:
            return default
        lowered = text.strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        self.fail(key, f"expected a boolean, got '{text}'")
        return default

    def float_list(self, key, default=(), minimum=None):
        text = self._take(key)
        if text is None:
            return tuple(default)
        values = []
        for piece in text.split(","):
            piece = piece.strip()
            try:
                value = float(piece)
            except ValueError:
                self.fail(key, f"expected comma-separated numbers, got '{piece}'")
                return tuple(default)
            if minimum is not None and value < minimum:
                self.fail(key, f"every value must be at least {minimum}, got {value}")
                return tuple(default)
            values.append(value)
        if not values:
            self.fail(key, "expected at least one value")
            return tuple(default)
        return tuple(values)

    def bounds(self, key, required=True):
        text = self._take(key)
        if text is None:
            if required:
                self.fail(key, "missing required key")
            return None
        pairs = []
        for axis_text in text.split(";"):
            parts = [part.strip() for part in axis_text.split(",")]
            if len(parts) != 2:
                self.fail(key, f"each axis needs 'lo, hi', got '{axis_text.strip()}'")
                return None
            try:
                lo, hi = float(parts[0]), float(parts[1])
            except ValueError:
                self.fail(key, f"expected numbers in '{axis_text.strip()}'")
                return None
            if lo >= hi:
                self.fail(key, f"degenerate interval [{lo}, {hi}]")
                return None
            pairs.append((lo, hi))
        return tuple(pairs)

    def finish(self) -> None:
        for key in sorted(self.raw):
            self.fail(key, "unknown key")


_SECTIONS = ("grid", "kernel", "model", "integrator", "experiment", "run")

_KERNEL_FAMILIES = ("uniform", "tent", "truncated_gaussian")
_EXPERIMENTS = ("validate", "simulate", "absorb", "attractor", "continuity")
_PERTURBATIONS = ("width_scale", "mix", "bump")


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate configuration text.

    All problems (missing key, unknown key, out-of-range value) are
    raised together in one :class:`ConfigurationError`, one line per
    problem with its ``section.key`` path.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unparseable configuration: {exc}") from exc

    errors: list[str] = []
    present = set(parser.sections())
    for section in sorted(present - set(_SECTIONS)):
        errors.append(f"{section}: unknown section")
    for section in _SECTIONS:
        if section not in present:
            errors.append(f"{section}: missing section")
    if errors:
        raise ConfigurationError("\n".join(errors))

    grid_reader = _SectionReader("grid", dict(parser["grid"]), errors)
    dimension = grid_reader.integer("dimension", required=True)
    bounds = grid_reader.bounds("bounds")
    nodes_per_axis = grid_reader.integer("nodes_per_axis", required=True, minimum=2)
    if dimension is not None and dimension not in (1, 2):
        grid_reader.fail("dimension", f"must be 1 or 2, got {dimension}")
    if dimension in (1, 2) and bounds is not None and len(bounds) != dimension:
        grid_reader.fail("bounds", f"expected {dimension} axis interval(s), got {len(bounds)}")
    grid_reader.finish()

    kernel_reader = _SectionReader("kernel", dict(parser["kernel"]), errors)
    family = kernel_reader.string("family", required=True, choices=set(_KERNEL_FAMILIES))
    sigma = kernel_reader.floating("sigma", exclusive_minimum=0.0)
    radius = kernel_reader.floating("radius", exclusive_minimum=0.0)
    amplitude = kernel_reader.floating("amplitude", default=1.0, minimum=0.0)
    normalization = kernel_reader.string(
        "normalization", default="global", choices={"global", "none"}
    )
    with_derivatives = kernel_reader.boolean("with_derivatives")
    renormalize_rows = kernel_reader.boolean("renormalize_rows")
    if family == "tent" and radius is None:
        kernel_reader.fail("radius", "required by the tent family")
    if family == "tent" and sigma is not None:
        kernel_reader.fail("sigma", "not used by the tent family")
    if family == "truncated_gaussian" and sigma is None:
        kernel_reader.fail("sigma", "required by the truncated_gaussian family")
    if family == "uniform" and (sigma is not None or radius is not None):
        kernel_reader.fail("family", "the uniform family takes no shape parameters")
    kernel_reader.finish()

    model_reader = _SectionReader("model", dict(parser["model"]), errors)
    model = ModelSection(
        h0=model_reader.floating("h0", required=True, exclusive_minimum=0.0, default=1.0),
        k_f=model_reader.floating("k_f", required=True, exclusive_minimum=0.0, default=1.0),
        c_f=model_reader.floating("c_f", required=True, exclusive_minimum=0.0, default=1.0),
        k_g=model_reader.floating("k_g", required=True, exclusive_minimum=0.0, default=1.0),
        c_g=model_reader.floating("c_g", required=True, exclusive_minimum=0.0, default=1.0),
        delta=model_reader.floating("delta", required=True, exclusive_minimum=0.0, default=1.0),
        decay_family=model_reader.string(
            "decay_family", default="constant", choices={"constant", "affine"}
        ),
        h1=model_reader.floating("h1", default=0.0, minimum=0.0),
        reaction_family=model_reader.string(
            "reaction_family",
            default="zero",
            choices={"zero", "saturated_affine", "linear_saturated"},
        ),
        alpha=model_reader.floating("alpha", default=0.0),
        scale=model_reader.floating("scale", default=0.0),
        beta0=model_reader.floating("beta0", default=0.0),
        beta1=model_reader.floating("beta1", default=0.0),
        gain_family=model_reader.string(
            "gain_family", default="zero", choices={"zero", "linear", "scaled_tanh"}
        ),
        gamma=model_reader.floating("gamma", default=0.0),
        gain_amplitude=model_reader.floating("gain_amplitude", default=0.0),
        gain_slope=model_reader.floating("gain_slope", default=0.0),
        p_values=model_reader.float_list("p_values", default=(2.0,), minimum=1.0),
        mu=model_reader.floating("mu", default=1.0, exclusive_minimum=0.0),
        require_gradient_hypotheses=model_reader.boolean("require_gradient_hypotheses"),
    )
    model_reader.finish()

    integrator_reader = _SectionReader("integrator", dict(parser["integrator"]), errors)
    integrator = IntegratorSection(
        dt=integrator_reader.floating("dt", required=True, exclusive_minimum=0.0, default=1.0),
        t_end=integrator_reader.floating("t_end", required=True, minimum=0.0, default=1.0),
        scheme=integrator_reader.string("scheme", default="etd", choices={"etd", "rk4"}),
        record_every=integrator_reader.integer("record_every", default=1, minimum=1),
        snapshot_every=integrator_reader.integer("snapshot_every", default=None, minimum=1),
        record_gradients=integrator_reader.boolean("record_gradients"),
    )
    integrator_reader.finish()

    experiment_reader = _SectionReader("experiment", dict(parser["experiment"]), errors)
    experiment = ExperimentSection(
        name=experiment_reader.string("name", default=None, choices=set(_EXPERIMENTS)),
        count=experiment_reader.integer("count", default=4, minimum=1),
        radius=experiment_reader.floating("radius", default=None, minimum=0.0),
        radius_factor=experiment_reader.floating(
            "radius_factor", default=10.0, exclusive_minimum=1.0
        ),
        ensemble_size=experiment_reader.integer("ensemble_size", default=4, minimum=1),
        burn_in=experiment_reader.floating("burn_in", default=10.0, minimum=0.0),
        spacing=experiment_reader.floating("spacing", default=1.0, exclusive_minimum=0.0),
        snapshots_per_member=experiment_reader.integer(
            "snapshots_per_member", default=3, minimum=1
        ),
        initial_radius=experiment_reader.floating("initial_radius", default=None, minimum=0.0),
        levels=experiment_reader.integer("levels", default=7, minimum=1),
        perturbation_family=experiment_reader.string(
            "perturbation_family", default="width_scale", choices=set(_PERTURBATIONS)
        ),
        perturbation_scale=experiment_reader.floating(
            "perturbation_scale", default=1.0, exclusive_minimum=0.0
        ),
        tolerance_factor=experiment_reader.floating(
            "tolerance_factor", default=1e-3, exclusive_minimum=0.0
        ),
        threshold_factor=experiment_reader.floating(
            "threshold_factor", default=1e-2, exclusive_minimum=0.0
        ),
    )
    experiment_reader.finish()

    run_reader = _SectionReader("run", dict(parser["run"]), errors)
    seed = run_reader.integer("seed", default=0)
    output_dir = run_reader.string("output_dir", default="out")
    run_reader.finish()

    if errors:
        raise ConfigurationError("\n".join(errors))

    return RunConfig(
        grid=GridSection(dimension=dimension, bounds=bounds, nodes_per_axis=nodes_per_axis),
        kernel=KernelSection(
            family=family,
            sigma=sigma,
            radius=radius,
            amplitude=amplitude,
            normalization=normalization,
            with_derivatives=with_derivatives,
            renormalize_rows=renormalize_rows,
        ),
        model=model,
        integrator=integrator,
        experiment=experiment,
        seed=seed,
        output_dir=output_dir,
    )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(f"{repr(lo)}, {repr(hi)}" for lo, hi in value)
        return ", ".join(repr(v) for v in value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Canonical text form; ``parse_config`` round-trips it exactly."""
    lines: list[str] = []
    sections = (
        ("grid", config.grid),
        ("kernel", config.kernel),
        ("model", config.model),
        ("integrator", config.integrator),
        ("experiment", config.experiment),
    )
    for name, section in sections:
        lines.append(f"[{name}]")
        for spec_field in fields(section):
            value = getattr(section, spec_field.name)
            if value is None:
                continue
            lines.append(f"{spec_field.name} = {_format_value(value)}")
        lines.append("")
    lines.append("[run]")
    lines.append(f"seed = {config.seed}")
    lines.append(f"output_dir = {config.output_dir}")
    lines.append("")
    return "\n".join(lines)


def config_hash(config: RunConfig) -> str:
    """Hash of the canonical serialization; embedded in artifact names."""
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# assembly of runtime objects from a parsed configuration


def build_grid_from(config: RunConfig) -> Grid:
    section = config.grid
    return build_grid(section.dimension, section.bounds, section.nodes_per_axis)


def build_kernel_from(config: RunConfig, grid: Grid) -> KernelMatrix:
    section = config.kernel
    spec = KernelSpec(
        family=section.family,
        sigma=section.sigma,
        radius=section.radius,
        amplitude=section.amplitude,
        normalization=section.normalization,
    )
    return assemble(
        spec,
        grid,
        with_derivatives=section.with_derivatives,
        renormalize_rows=section.renormalize_rows,
    )


def build_model_from(config: RunConfig, grid: Grid | None = None) -> ModelSpec:
    if grid is None:
        grid = build_grid_from(config)
    kernel = build_kernel_from(config, grid)
    section = config.model
    decay = make_decay(grid, section.decay_family, section.h0, section.h1)
    reaction = ReactionSpec(
        family=section.reaction_family,
        k_f=section.k_f,
        c_f=section.c_f,
        alpha=section.alpha,
        scale=section.scale,
        beta0=section.beta0,
        beta1=section.beta1,
    )
    gain = GainSpec(
        family=section.gain_family,
        k_g=section.k_g,
        c_g=section.c_g,
        gamma=section.gamma,
        amplitude=section.gain_amplitude,
        slope_factor=section.gain_slope,
    )
    return ModelSpec(
        kernel=kernel,
        decay=decay,
        reaction=reaction,
        gain=gain,
        space=LpSpace(section.p_values[0]),
        delta=section.delta,
        mu=section.mu,
        require_gradient_hypotheses=section.require_gradient_hypotheses,
    )


def build_integrator_from(config: RunConfig) -> IntegratorConfig:
    section = config.integrator
    return IntegratorConfig(
        dt=section.dt,
        t_end=section.t_end,
        scheme=section.scheme,
        record_every=section.record_every,
        snapshot_every=section.snapshot_every,
        norm_ps=config.model.p_values,
        record_gradients=section.record_gradients,
    )
