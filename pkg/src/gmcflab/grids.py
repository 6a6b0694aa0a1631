"""Discrete differential geometry of an evolving graph on a regular grid.

A graph is a set of m height fields over the tensor grid of the cube
[-L, L]^n.  This module provides the per-node Jacobian field, the induced
Laplace-Beltrami operator in divergence form, squared surface gradients, the
gauge-corrected heat operator, and the cutoff fields used for localization.

All stencils are second-order central differences.  Differences are taken
with periodic rolls for speed; validity is tracked by boolean masks that
exclude the boundary ring(s), so wraparound garbage never enters a masked
reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .spectral import singular_spectrum_stack

SUPPORT_FLOOR = 1e-8   # positive-part factor below this counts as outside the support
STENCIL_RADIUS = 2     # Chebyshev radius of the full residual stencil


@dataclass(frozen=True)
class GridSpec:
    """Regular tensor grid on the cube [-extent, extent]^n.

    The point count is odd so the origin is a node.
    """

    n: int
    extent: float = 1.0
    points_per_axis: int = 33

    def __post_init__(self):
        if not (1 <= self.n <= 4):
            raise ValueError("domain dimension n must be 1..4 at desk scale")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        p = self.points_per_axis
        if p < 17 or p % 2 == 0:
            raise ValueError("points_per_axis must be an odd integer >= 17")

    @property
    def h(self) -> float:
        return 2.0 * self.extent / (self.points_per_axis - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.n

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.points_per_axis // 2,) * self.n

    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.points_per_axis)

    def mesh(self) -> np.ndarray:
        """Coordinate arrays stacked as shape (n, *shape)."""
        axes = np.meshgrid(*([self.axis()] * self.n), indexing="ij")
        return np.stack(axes)

    def radius_sq(self) -> np.ndarray:
        return (self.mesh() ** 2).sum(axis=0)

    def scaled(self, factor: float) -> "GridSpec":
        return GridSpec(self.n, self.extent * factor, self.points_per_axis)


@dataclass(frozen=True)
class GraphState:
    """m height fields over a grid at one time."""

    grid: GridSpec
    u: np.ndarray   # shape (m, *grid.shape)
    t: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.ndim != self.grid.n + 1 or u.shape[1:] != self.grid.shape:
            raise ValueError("height array must have shape (m, *grid.shape)")
        if not np.all(np.isfinite(u)):
            raise ValueError("height values must be finite")
        object.__setattr__(self, "u", u)

    @property
    def m(self) -> int:
        return self.u.shape[0]

    def with_u(self, u: np.ndarray, t: float | None = None) -> "GraphState":
        return GraphState(self.grid, u, self.t if t is None else t)


@dataclass
class ScalarField:
    """Grid field plus the mask of nodes where its value is trustworthy."""

    values: np.ndarray
    mask: np.ndarray

    def max_masked(self) -> float:
        return float(self.values[self.mask].max()) if self.mask.any() else -np.inf

    def max_abs(self) -> float:
        return float(np.abs(self.values[self.mask]).max()) if self.mask.any() else 0.0

    def max_positive(self) -> float:
        if not self.mask.any():
            return 0.0
        return float(max(self.values[self.mask].max(), 0.0))


def d1(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central first difference along one axis (wraps; mask the boundary)."""
    return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)


def d2(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Central second difference along one axis (wraps; mask the boundary)."""
    return (np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)) / (h * h)


def interior_mask(shape: tuple[int, ...], margin: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    core = tuple(slice(margin, s - margin) for s in shape)
    mask[core] = True
    return mask


def erode_mask(mask: np.ndarray, radius: int = STENCIL_RADIUS) -> np.ndarray:
    """Shrink a mask so every node keeps its full Chebyshev-radius stencil."""
    if radius <= 0:
        return mask.copy()
    structure = np.ones((2 * radius + 1,) * mask.ndim, dtype=bool)
    return ndimage.binary_erosion(mask, structure=structure, border_value=0)


@dataclass
class FrameGeometry:
    """Per-node geometry of one frame, shared by the field operators.

    Arrays carry trailing matrix axes: ``jac`` is (*shape, m, n), ``g`` and
    ``g_inv`` are (*shape, n, n).  Values on the outermost ring come from
    wrapped differences and are garbage; ``interior1``/``interior2`` mark the
    nodes with 1- and 2-node margins.
    """

    state: GraphState
    jac: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    chol_inv: np.ndarray
    v: np.ndarray
    w: np.ndarray
    interior1: np.ndarray
    interior2: np.ndarray
    _spectra: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def lambdas(self) -> np.ndarray:
        if self._spectra is None:
            self._spectra = singular_spectrum_stack(self.jac)
        return self._spectra[0]

    @property
    def qvecs(self) -> np.ndarray:
        if self._spectra is None:
            self._spectra = singular_spectrum_stack(self.jac)
        return self._spectra[1]


def frame_geometry(state: GraphState) -> FrameGeometry:
    grid = state.grid
    n, m, h = grid.n, state.m, grid.h
    jac = np.empty(grid.shape + (m, n))
    for a in range(m):
        for i in range(n):
            jac[..., a, i] = d1(state.u[a], i, h)
    g = np.einsum("...ai,...aj->...ij", jac, jac)
    g[..., range(n), range(n)] += 1.0
    g_inv = np.linalg.inv(g)
    # cholesky reads one triangle only, so roundoff asymmetry of inv is harmless
    chol_inv = np.linalg.cholesky(g_inv)
    v = np.sqrt(np.linalg.det(g))
    return FrameGeometry(
        state=state,
        jac=jac,
        g=g,
        g_inv=g_inv,
        chol_inv=chol_inv,
        v=v,
        w=v ** (1.0 / n),
        interior1=interior_mask(grid.shape, 1),
        interior2=interior_mask(grid.shape, 2),
    )


def jacobian_field(state: GraphState) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobian stack (*shape, m, n) and its validity mask."""
    geom = frame_geometry(state)
    return geom.jac, geom.interior1


def _mt_laplacian(geom: FrameGeometry, values: np.ndarray) -> np.ndarray:
    """Divergence-form Laplace-Beltrami (1/v) d_i(v g^ij d_j F).

    Diagonal fluxes use arithmetic face averages of v g^ii; cross terms are
    centered differences of centered differences.  Both choices keep the
    discrete operator exactly self-adjoint in the v-weighted inner product
    for fields supported away from the mask boundary.
    """
    grid = geom.state.grid
    n, h = grid.n, grid.h
    acc = np.zeros(grid.shape)
    for i in range(n):
        a = geom.v * geom.g_inv[..., i, i]
        a_plus = 0.5 * (a + np.roll(a, -1, i))
        a_minus = 0.5 * (a + np.roll(a, 1, i))
        acc += (a_plus * (np.roll(values, -1, i) - values)
                - a_minus * (values - np.roll(values, 1, i))) / (h * h)
        for j in range(n):
            if j == i:
                continue
            acc += d1(geom.v * geom.g_inv[..., i, j] * d1(values, j, h), i, h)
    return acc / geom.v


def mt_laplacian(state: GraphState, values: np.ndarray) -> ScalarField:
    geom = frame_geometry(state)
    return ScalarField(_mt_laplacian(geom, values), geom.interior2)


def _nondiv_laplacian(geom: FrameGeometry, values: np.ndarray) -> np.ndarray:
    """Non-divergence operator g^ij d_ij F (the flow's spatial operator)."""
    grid = geom.state.grid
    n, h = grid.n, grid.h
    acc = np.zeros(grid.shape)
    for i in range(n):
        acc += geom.g_inv[..., i, i] * d2(values, i, h)
        for j in range(i + 1, n):
            acc += 2.0 * geom.g_inv[..., i, j] * d1(d1(values, j, h), i, h)
    return acc


def _mt_grad(geom: FrameGeometry, values: np.ndarray) -> np.ndarray:
    grid = geom.state.grid
    return np.stack([d1(values, i, grid.h) for i in range(grid.n)], axis=-1)


def _mt_grad_sq(geom: FrameGeometry, values: np.ndarray) -> np.ndarray:
    """g^ij d_i F d_j F, evaluated as |L^T grad|^2 so it is >= 0 exactly."""
    grad = _mt_grad(geom, values)
    y = np.einsum("...ik,...i->...k", geom.chol_inv, grad)
    return (y * y).sum(axis=-1)


def mt_grad_sq(state: GraphState, values: np.ndarray) -> ScalarField:
    geom = frame_geometry(state)
    return ScalarField(_mt_grad_sq(geom, values), geom.interior2)


def _heat_operator(geoms3, fields3) -> np.ndarray:
    """(D_t - Laplacian) F on the middle frame of three consecutive ones.

    The solver evolves heights at fixed x, while the flowing surface carries
    its points with the mean curvature vector; the material time derivative
    therefore picks up a tangential drift,

        D_t F = d_t|_x F - g^{kl} (d_t u^a)(d_l u^a) d_k F,

    with the drift evaluated on the middle frame and d_t|_x by a centered
    difference across the outer frames.
    """
    prev, mid, nxt = geoms3
    f_prev, f_mid, f_next = fields3
    tau_f = nxt.state.t - mid.state.t
    tau_b = mid.state.t - prev.state.t
    if abs(tau_f - tau_b) > 1e-9 * max(abs(tau_f), abs(tau_b)) or tau_f <= 0:
        raise ValueError("frames must be equally spaced and increasing in time")
    grid = mid.state.grid
    df_dt = (f_next - f_prev) / (2.0 * tau_f)
    u_t = (nxt.state.u - prev.state.u) / (2.0 * tau_f)          # (m, *shape)
    u_t = np.moveaxis(u_t, 0, -1)                               # (*shape, m)
    grad_f = _mt_grad(mid, f_mid)                               # (*shape, n)
    tang = np.einsum("...kl,...al,...a->...k", mid.g_inv,
                     mid.jac, u_t)                              # g^{kl} u^a_l u^a_t
    drift = np.einsum("...k,...k->...", tang, grad_f)
    return df_dt - drift - _mt_laplacian(mid, f_mid)


def heat_operator(states3, fields3) -> ScalarField:
    """Public wrapper of the heat operator on three GraphStates.

    ``fields3`` holds the scalar field evaluated on each of the three frames.
    """
    prev, mid, nxt = states3
    if not (prev.grid == mid.grid == nxt.grid):
        raise ValueError("frames must share one grid")
    geoms = (frame_geometry(prev), frame_geometry(mid), frame_geometry(nxt))
    values = _heat_operator(geoms, tuple(np.asarray(f, dtype=float) for f in fields3))
    return ScalarField(values, geoms[1].interior2)


@dataclass(frozen=True)
class CutoffParams:
    """Parameters of the localization cutoffs.

    kind "varphi_sq":  (R^2 - |z|^2 - 2 n t)_+^2             (needs R)
    kind "cm":         eta * exp(-a |y|^2 / t) with
                       eta = (radius_const - |x|^2 - 2 n t)_+  (needs a, radius_const; t > 0)
    kind "korevaar":   ((1/(2 u0)) sum_a y^a + 1 - |x|^2)_+    (needs u0)
    """

    kind: str
    R: float | None = None
    a: float | None = None
    radius_const: float | None = None
    u0: float | None = None

    def __post_init__(self):
        if self.kind == "varphi_sq":
            if self.R is None or self.R <= 0:
                raise ValueError("varphi_sq cutoff needs a radius R > 0")
        elif self.kind == "cm":
            if self.a is None or self.a < 1:
                raise ValueError("cm cutoff needs exponent weight a >= 1")
            if self.radius_const is None or self.radius_const <= 0:
                raise ValueError("cm cutoff needs radius_const > 0")
        elif self.kind == "korevaar":
            if self.u0 is None or self.u0 < 1:
                raise ValueError("korevaar cutoff needs u0 >= 1")
        else:
            raise ValueError(f"unknown cutoff kind {self.kind!r}")


def cutoff_field(state: GraphState, params: CutoffParams) -> ScalarField:
    """Evaluate a cutoff on a frame, with its eroded support mask.

    The support mask keeps nodes whose positive-part *factor* exceeds
    SUPPORT_FLOOR and whose entire residual stencil stays inside that set
    (the exponential weight of the "cm" kind never vanishes and is excluded
    from the threshold on purpose: it underflows long before 1e-8).
    """
    grid = state.grid
    x_sq = grid.radius_sq()
    if params.kind == "varphi_sq":
        z_sq = x_sq + (state.u ** 2).sum(axis=0)
        base = params.R ** 2 - z_sq - 2.0 * grid.n * state.t
        values = np.where(base > 0.0, base, 0.0) ** 2
        positive = values > SUPPORT_FLOOR
    elif params.kind == "cm":
        if state.t <= 0.0:
            raise ValueError("cm cutoff is undefined at t <= 0")
        eta = params.radius_const - x_sq - 2.0 * grid.n * state.t
        eta = np.where(eta > 0.0, eta, 0.0)
        y_sq = (state.u ** 2).sum(axis=0)
        values = eta * np.exp(-params.a * y_sq / state.t)
        positive = eta > SUPPORT_FLOOR
    else:  # korevaar
        base = state.u.sum(axis=0) / (2.0 * params.u0) + 1.0 - x_sq
        values = np.where(base > 0.0, base, 0.0)
        positive = values > SUPPORT_FLOOR
    mask = erode_mask(positive) & interior_mask(grid.shape, STENCIL_RADIUS)
    return ScalarField(values, mask)


def cm_eta(state: GraphState, radius_const: float) -> np.ndarray:
    """The positive-part factor of the "cm" cutoff, on its own."""
    eta = radius_const - state.grid.radius_sq() - 2.0 * state.grid.n * state.t
    return np.where(eta > 0.0, eta, 0.0)
