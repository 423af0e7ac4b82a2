"""Symmetric interaction kernels and their dense quadrature operators.

Analytic families, written in terms of the per-axis displacement
``d = x - y``:

* ``uniform`` -- constant over the domain box: every point couples
  equally to every other.  Its normalizing integral is the box measure.
* ``tent`` -- product of per-axis hats ``max(0, 1 - |d_i|/R)``;
  normalizing integral ``R**dim``.
* ``truncated_gaussian`` -- ``exp(-|d|^2 / (2 sigma^2))`` cut off per
  axis at ``|d_i| <= R`` (``R`` may be infinite); normalizing integral
  ``(sqrt(2 pi) sigma erf(R / (sqrt(2) sigma)))**dim``.

Under ``normalization="global"`` the kernel integrates to one over the
whole space, so quadrature row sums over the domain never exceed one up
to quadrature error: interaction mass reaching outside the box is lost,
not folded back.  An optional per-row renormalization restores unit row
mass for no-flux style experiments.

Derivative matrices come from the analytic formula of each family, never
from numerical differencing.  Matrices are dense; at the supported grid
sizes a matrix-vector product is far below a millisecond, and assembly
refuses to allocate past a configurable byte cap.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ResourceError, UsageError
from .grid import Grid, LpSpace, StateField, lp_norm, sup_norm

FAMILIES = ("uniform", "tent", "truncated_gaussian")

#: Default allocation cap for one assembly call (entries + derivatives).
DEFAULT_MATRIX_BYTE_CAP = 2**27


@dataclass(frozen=True)
class KernelSpec:
    """Analytic description of a symmetric, nonnegative kernel."""

    family: str
    sigma: float | None = None
    radius: float | None = None
    amplitude: float = 1.0
    normalization: str = "global"

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown kernel family '{self.family}'")
        if self.normalization not in ("global", "none"):
            raise ConfigurationError(f"unknown normalization '{self.normalization}'")
        if self.amplitude < 0:
            raise ConfigurationError("kernel amplitude must be nonnegative")
        if self.normalization == "global" and self.amplitude == 0:
            raise ConfigurationError("global normalization needs a positive amplitude")
        if self.family == "uniform":
            if self.sigma is not None or self.radius is not None:
                raise ConfigurationError("the uniform family takes no shape parameters")
        elif self.family == "tent":
            if self.sigma is not None:
                raise ConfigurationError("the tent family has no sigma parameter")
            if self.radius is None or not (self.radius > 0) or math.isinf(self.radius):
                raise ConfigurationError("the tent family needs a finite radius > 0")
        else:  # truncated_gaussian
            if self.sigma is None or not (self.sigma > 0):
                raise ConfigurationError("the truncated_gaussian family needs sigma > 0")
            radius = math.inf if self.radius is None else self.radius
            if not (radius > 0):
                raise ConfigurationError("the truncation radius must be positive")
            object.__setattr__(self, "radius", radius)


def _shape_values(spec: KernelSpec, diffs: np.ndarray) -> np.ndarray:
    if spec.family == "uniform":
        return np.ones(diffs.shape[:-1])
    if spec.family == "tent":
        hats = np.clip(1.0 - np.abs(diffs) / spec.radius, 0.0, None)
        return np.prod(hats, axis=-1)
    inside = np.all(np.abs(diffs) <= spec.radius, axis=-1)
    return np.exp(-np.sum(diffs * diffs, axis=-1) / (2.0 * spec.sigma**2)) * inside


def _shape_derivative(spec: KernelSpec, diffs: np.ndarray, axis: int) -> np.ndarray:
    if spec.family == "uniform":
        return np.zeros(diffs.shape[:-1])
    if spec.family == "tent":
        hats = np.clip(1.0 - np.abs(diffs) / spec.radius, 0.0, None)
        others = np.prod(np.delete(hats, axis, axis=-1), axis=-1)
        d = diffs[..., axis]
        slope = np.where(hats[..., axis] > 0.0, -np.sign(d) / spec.radius, 0.0)
        return slope * others
    return -(diffs[..., axis] / spec.sigma**2) * _shape_values(spec, diffs)


def _shape_integral(spec: KernelSpec, dimension: int, domain_measure: float) -> float:
    """Integral of the unit-amplitude shape over the whole space."""
    if spec.family == "uniform":
        return domain_measure
    if spec.family == "tent":
        return spec.radius**dimension
    one_axis = math.sqrt(2.0 * math.pi) * spec.sigma * math.erf(
        spec.radius / (math.sqrt(2.0) * spec.sigma)
    )
    return one_axis**dimension


def _scale(spec: KernelSpec, dimension: int, domain_measure: float) -> float:
    if spec.normalization == "global":
        return 1.0 / _shape_integral(spec, dimension, domain_measure)
    return spec.amplitude


def kernel_values(spec: KernelSpec, diffs: np.ndarray, domain_measure: float) -> np.ndarray:
    """Evaluate the kernel on displacement vectors of shape ``(..., dim)``.

    The uniform family is only meaningful for points inside the domain
    box, which is the only place assembly and the quadrature oracles
    evaluate it.
    """
    dim = diffs.shape[-1]
    return _shape_values(spec, diffs) * _scale(spec, dim, domain_measure)


def kernel_derivative_values(
    spec: KernelSpec, diffs: np.ndarray, domain_measure: float, axis: int
) -> np.ndarray:
    """Analytic first-argument derivative along ``axis``, same broadcasting
    as :func:`kernel_values`.  At kinks and truncation edges the derivative
    is taken as its interior one-sided value (a measure-zero convention)."""
    dim = diffs.shape[-1]
    return _shape_derivative(spec, diffs, axis) * _scale(spec, dim, domain_measure)


@dataclass(eq=False)
class KernelMatrix:
    """Dense quadrature matrix of the integral operator, with cached norms."""

    grid: Grid
    entries: np.ndarray
    spec: KernelSpec | None = None
    derivative_entries: tuple[np.ndarray, ...] | None = None
    cached_norms: dict[float, float] = field(default_factory=dict)
    cached_derivative_norms: dict[tuple[int, float], float] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(repr(self.grid.key).encode())
        digest.update(self.entries.tobytes())
        return digest.hexdigest()[:12]


def assemble(
    spec: KernelSpec,
    grid: Grid,
    with_derivatives: bool = False,
    renormalize_rows: bool = False,
    max_bytes: int = DEFAULT_MATRIX_BYTE_CAP,
) -> KernelMatrix:
    """Evaluate the kernel on all node pairs.

    ``with_derivatives`` additionally stores one analytic derivative
    matrix per axis.  ``renormalize_rows`` rescales each row to unit
    quadrature mass (no-flux reading of the boundary); it is off by
    default because lost boundary mass is part of the model, and it has
    no analytic derivative matrices.
    """
    n = grid.node_count
    matrices = 1 + (grid.dimension if with_derivatives else 0)
    needed = 8 * n * n * matrices
    if needed > max_bytes:
        raise ResourceError(
            f"assembly of {matrices} {n}x{n} matrices needs {needed} bytes"
            f" (cap {max_bytes}); use a coarser grid or raise max_bytes"
        )
    diffs = grid.nodes[:, None, :] - grid.nodes[None, :, :]
    entries = kernel_values(spec, diffs, grid.measure)
    derivative_entries = None
    if renormalize_rows:
        if with_derivatives:
            raise UsageError("row renormalization has no analytic derivative matrices")
        row_mass = entries @ grid.weights
        if np.any(row_mass <= 0.0):
            raise ConfigurationError("cannot renormalize rows with zero interaction mass")
        entries = entries / row_mass[:, None]
    elif with_derivatives:
        mats = []
        for axis in range(grid.dimension):
            mat = kernel_derivative_values(spec, diffs, grid.measure, axis)
            mat.setflags(write=False)
            mats.append(mat)
        derivative_entries = tuple(mats)
    entries.setflags(write=False)
    return KernelMatrix(grid=grid, entries=entries, spec=spec, derivative_entries=derivative_entries)


def apply(kernel: KernelMatrix, u: StateField) -> StateField:
    """Weighted matrix-vector product: ``(K u)_i = sum_j w_j K_ij u_j``."""
    if not kernel.grid.matches(u.grid):
        raise UsageError("state field and kernel matrix live on different grids")
    return StateField(kernel.grid, kernel.entries @ (kernel.grid.weights * u.values))


def _weighted_row_norm(matrix: np.ndarray, weights: np.ndarray, p: float) -> float:
    a = np.abs(matrix)
    if math.isinf(p):
        return float(a.max())
    if p == 1.0:
        return float((a @ weights).max())
    return float(((a**p @ weights).max()) ** (1.0 / p))


def p_norm(kernel: KernelMatrix, p: float) -> float:
    """Largest weighted Lp norm over the rows (the sup over x of the
    p-norm of ``K(x, .)``); ``p = inf`` gives the largest entry."""
    p = float(p)
    if not p >= 1.0:
        raise ConfigurationError(f"p must lie in [1, inf], got {p}")
    if p not in kernel.cached_norms:
        kernel.cached_norms[p] = _weighted_row_norm(kernel.entries, kernel.grid.weights, p)
    return kernel.cached_norms[p]


def derivative_p_norm(kernel: KernelMatrix, axis: int, p: float) -> float:
    """Row-sup Lp norm of the derivative matrix along ``axis``."""
    if kernel.derivative_entries is None:
        raise UsageError("kernel was assembled without derivative matrices")
    if not 0 <= axis < len(kernel.derivative_entries):
        raise UsageError(f"axis {axis} out of range")
    p = float(p)
    if not p >= 1.0:
        raise ConfigurationError(f"p must lie in [1, inf], got {p}")
    key = (axis, p)
    if key not in kernel.cached_derivative_norms:
        kernel.cached_derivative_norms[key] = _weighted_row_norm(
            kernel.derivative_entries[axis], kernel.grid.weights, p
        )
    return kernel.cached_derivative_norms[key]


def row_quadrature_sums(kernel: KernelMatrix) -> np.ndarray:
    """Weighted row sums; at most one plus quadrature error under global
    normalization."""
    return kernel.entries @ kernel.grid.weights


def l1_distance(a: KernelMatrix, b: KernelMatrix) -> float:
    """Row-sup weighted L1 distance between two kernels on one grid."""
    if not a.grid.matches(b.grid):
        raise UsageError("kernel matrices live on different grids")
    return float((np.abs(a.entries - b.entries) @ a.grid.weights).max())


@dataclass(frozen=True)
class BoundCheck:
    """One evaluated inequality: holds iff ``rhs - lhs`` is not materially negative."""

    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-12


@dataclass(frozen=True)
class OperatorBoundsReport:
    pointwise: BoundCheck
    contraction: BoundCheck
    crossed: BoundCheck

    @property
    def checks(self) -> tuple[BoundCheck, ...]:
        return (self.pointwise, self.contraction, self.crossed)

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.checks)

    @property
    def min_slack(self) -> float:
        return min(c.slack for c in self.checks)


def verify_operator_bounds(kernel: KernelMatrix, u: StateField, p: float) -> OperatorBoundsReport:
    """Evaluate the three discrete operator bounds on concrete data.

    * pointwise: ``sup_x |K u(x)| <= |K|_{p'} |u|_p``
    * contraction: ``|K u|_p <= |K|_1 |u|_p``
    * crossed: ``|K u|_p <= |K|_p |u|_1``

    Returns measured left/right sides so callers can inspect the slack.
    """
    space = LpSpace(p)
    ku = apply(kernel, u)
    norm_u_p = lp_norm(u, space)
    norm_u_1 = lp_norm(u, 1.0)
    norm_ku_p = lp_norm(ku, space)
    return OperatorBoundsReport(
        pointwise=BoundCheck("pointwise", sup_norm(ku), p_norm(kernel, space.p_conjugate) * norm_u_p),
        contraction=BoundCheck("contraction", norm_ku_p, p_norm(kernel, 1.0) * norm_u_p),
        crossed=BoundCheck("crossed", norm_ku_p, p_norm(kernel, space.p) * norm_u_1),
    )


# ---------------------------------------------------------------------------
# perturbation helpers for the continuity experiments


def width_scaled(spec: KernelSpec, factor: float) -> KernelSpec:
    """Dilate the kernel support by ``factor`` (mass is preserved under
    global normalization)."""
    if not factor > 0:
        raise ConfigurationError(f"width factor must be positive, got {factor}")
    if spec.family == "tent":
        return KernelSpec(
            family=spec.family,
            radius=spec.radius * factor,
            amplitude=spec.amplitude,
            normalization=spec.normalization,
        )
    if spec.family == "truncated_gaussian":
        radius = spec.radius * factor if math.isfinite(spec.radius) else spec.radius
        return KernelSpec(
            family=spec.family,
            sigma=spec.sigma * factor,
            radius=radius,
            amplitude=spec.amplitude,
            normalization=spec.normalization,
        )
    raise ConfigurationError(f"the '{spec.family}' family has no width to scale")


def mix_kernels(a: KernelMatrix, b: KernelMatrix, theta: float) -> KernelMatrix:
    """Convex combination ``(1 - theta) a + theta b`` of two kernels."""
    if not a.grid.matches(b.grid):
        raise UsageError("kernel matrices live on different grids")
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError(f"mixing weight must lie in [0, 1], got {theta}")
    entries = (1.0 - theta) * a.entries + theta * b.entries
    entries.setflags(write=False)
    derivatives = None
    if a.derivative_entries is not None and b.derivative_entries is not None:
        mats = []
        for da, db in zip(a.derivative_entries, b.derivative_entries):
            mat = (1.0 - theta) * da + theta * db
            mat.setflags(write=False)
            mats.append(mat)
        derivatives = tuple(mats)
    return KernelMatrix(grid=a.grid, entries=entries, spec=None, derivative_entries=derivatives)


def bump_kernel(
    grid: Grid,
    center: tuple[float, ...] | None = None,
    width: float | None = None,
    with_derivatives: bool = False,
) -> KernelMatrix:
    """Rank-one kernel localized around ``center``, normalized to unit
    row-sup L1 norm so it can be mixed into a base kernel without pushing
    the total interaction mass past one."""
    if center is None:
        center = tuple(0.5 * (lo + hi) for lo, hi in grid.bounds)
    if width is None:
        width = min(hi - lo for lo, hi in grid.bounds) / 8.0
    if not width > 0:
        raise ConfigurationError(f"bump width must be positive, got {width}")
    offsets = grid.nodes - np.asarray(center)[None, :]
    hats = np.clip(1.0 - np.abs(offsets) / width, 0.0, None)
    profile = np.prod(hats, axis=-1)
    mass = float(profile.max() * (grid.weights @ profile))
    if mass <= 0.0:
        raise ConfigurationError("bump profile vanishes on every node")
    entries = np.outer(profile, profile) / mass
    entries.setflags(write=False)
    derivatives = None
    if with_derivatives:
        mats = []
        for axis in range(grid.dimension):
            others = np.prod(np.delete(hats, axis, axis=-1), axis=-1)
            slope = np.where(hats[:, axis] > 0.0, -np.sign(offsets[:, axis]) / width, 0.0)
            mat = np.outer(slope * others, profile) / mass
            mat.setflags(write=False)
            mats.append(mat)
        derivatives = tuple(mats)
    return KernelMatrix(grid=grid, entries=entries, spec=None, derivative_entries=derivatives)


def perturbation_family_levels(
    base: KernelMatrix, family: str, levels: int, scale: float = 1.0
) -> list[KernelMatrix]:
    """Geometrically shrinking kernel perturbations ``theta_k = scale 2^-k``.

    Families: ``width_scale`` dilates the base kernel's analytic spec,
    ``mix`` blends toward the uniform kernel, ``bump`` blends toward a
    localized rank-one kernel.  Ordered by decreasing perturbation size.
    """
    if levels < 1:
        raise ConfigurationError(f"need at least one level, got {levels}")
    if not scale > 0:
        raise ConfigurationError(f"perturbation scale must be positive, got {scale}")
    thetas = [scale * 2.0**-k for k in range(levels)]
    grid = base.grid
    with_derivatives = base.derivative_entries is not None
    if family == "width_scale":
        if base.spec is None:
            raise ConfigurationError("width_scale needs a kernel built from an analytic spec")
        return [
            assemble(width_scaled(base.spec, 1.0 + t), grid, with_derivatives=with_derivatives)
            for t in thetas
        ]
    if family in ("mix", "bump"):
        if max(thetas) > 1.0:
            raise ConfigurationError("mixing perturbations need scale <= 1")
        if family == "mix":
            partner = assemble(KernelSpec(family="uniform"), grid, with_derivatives=with_derivatives)
        else:
            partner = bump_kernel(grid, with_derivatives=with_derivatives)
        return [mix_kernels(base, partner, t) for t in thetas]
    raise ConfigurationError(f"unknown perturbation family '{family}'")


# ---------------------------------------------------------------------------
# flat binary dump for offline inspection

_HEADER_DTYPE = np.dtype("<i8")
_ENTRY_DTYPE = np.dtype("<f8")


def save_kernel_matrix(kernel: KernelMatrix, path) -> None:
    """Write two little-endian int64 dimensions followed by the row-major
    float64 entries."""
    with open(path, "wb") as handle:
        np.asarray(kernel.entries.shape, dtype=_HEADER_DTYPE).tofile(handle)
        np.ascontiguousarray(kernel.entries, dtype=_ENTRY_DTYPE).tofile(handle)


def load_kernel_entries(path) -> np.ndarray:
    """Read a matrix written by :func:`save_kernel_matrix`."""
    with open(path, "rb") as handle:
        dims = np.fromfile(handle, dtype=_HEADER_DTYPE, count=2)
        if dims.size != 2 or (dims < 0).any():
            raise UsageError(f"{path}: missing or invalid dimension header")
        rows, cols = (int(dims[0]), int(dims[1]))
        entries = np.fromfile(handle, dtype=_ENTRY_DTYPE, count=rows * cols)
    if entries.size != rows * cols:
        raise UsageError(f"{path}: truncated matrix body")
    return entries.reshape(rows, cols)
