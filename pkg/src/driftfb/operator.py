"""Monotone finite-difference discretisation of ``-L + b.grad`` on uniform grids.

The nonlocal part is the quadrature of the kernel ``mu(theta)/|y|^(n+1)``
against the nodal interpolant of ``u``: multilinear hat functions away from
the origin and the second-difference (Taylor) form inside the singular cell
``|y|_inf < h``.  The grid function is extended by zero outside the box; the
mass of the kernel over the exterior lands on the diagonal.  The drift is
upwinded per component so the assembled matrix is an M-matrix.

Application is matrix free: a convolution with the (translation invariant)
weight array evaluated by FFT, plus diagonal and drift terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from .kernel import KernelSpec
from .profiles import power_multiplier

NEAR_FIELD = 16  # offsets with |k|_inf <= NEAR_FIELD get exact 2-D weights
MAX_NODES = 2 ** 23


class MMatrixError(ValueError):
    """The assembled operator is not an M-matrix."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[-R, R]^n`` with spacing ``h``; the origin is a node."""

    dimension: int
    h: float
    R: float

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"unsupported grid dimension {self.dimension}")
        if not (self.h > 0 and self.R > 0):
            raise ValueError("grid needs h > 0 and R > 0")
        cells = self.R / self.h
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ValueError(f"R/h must be an integer, got {cells}")
        if self.R < 4:
            raise ValueError(f"truncation box too small: R = {self.R} < 4")
        if self.n_nodes > MAX_NODES:
            raise ValueError(f"grid of {self.n_nodes} nodes exceeds the 2^23 node guardrail")

    @property
    def n(self) -> int:
        """Nodes per axis."""
        return 2 * int(round(self.R / self.h)) + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def n_nodes(self) -> int:
        return self.n ** self.dimension

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.R + self.h * np.arange(self.n)

    def coords(self) -> tuple[np.ndarray, ...]:
        if self.dimension == 1:
            return (self.axis,)
        return tuple(np.meshgrid(self.axis, self.axis, indexing="ij"))

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.dimension, self.h / factor, self.R)

    def index_of(self, x) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return tuple(int(round((xi + self.R) / self.h)) for xi in x)


# -- weights -------------------------------------------------------------------

def _weights_1d(n: int, h: float, m: float) -> np.ndarray:
    """Weights for offsets 0..n-1 (entry 0 unused) of the 1-D stencil."""
    k = np.arange(n, dtype=float)
    w = np.zeros(n)
    if n > 1:
        w[1] = (2 - math.log(2)) * m / h
    if n > 2:
        w[2:] = -np.log1p(-1.0 / k[2:] ** 2) * m / h
    return w


def _tail_1d(j: np.ndarray, h: float, m: float) -> np.ndarray:
    """``sum_{k >= j} w_k`` in closed form (telescoping logarithms)."""
    j = np.asarray(j, dtype=float)
    out = np.empty_like(j)
    one = j == 1
    out[one] = 2.0
    out[~one] = -np.log1p(-1.0 / j[~one])
    return out * m / h


def _ray_hat_integral(k1: int, k2: int, theta: np.ndarray) -> np.ndarray:
    """``int_{r > r_Q} phi_k(r e_theta) r^-2 dr`` for the bilinear hat at ``k``.

    ``r_Q(theta)`` is the exit radius of the unit square ``[-1, 1]^2``.
    Along the ray the hat is piecewise quadratic in ``r``, so each piece is
    integrated exactly.
    """
    c, s = np.cos(theta), np.sin(theta)
    rq = 1.0 / np.maximum(np.abs(c), np.abs(s))
    cuts = [rq]
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in (-1, 0, 1):
            cuts.append(np.where(np.abs(c) > 1e-14, (k1 + j) / c, -1.0))
            cuts.append(np.where(np.abs(s) > 1e-14, (k2 + j) / s, -1.0))
    r = np.stack(cuts, axis=-1)
    r = np.where(r < rq[:, None], rq[:, None], r)
    r.sort(axis=-1)
    a, b = r[:, :-1], r[:, 1:]
    mid = 0.5 * (a + b)
    cc, ss = c[:, None], s[:, None]
    # f = 1 - |r c - k|, linear on each piece: alpha + beta r
    sg1 = np.sign(mid * cc - k1)
    sg2 = np.sign(mid * ss - k2)
    al1, be1 = 1 + sg1 * k1, -sg1 * cc
    al2, be2 = 1 + sg2 * k2, -sg2 * ss
    alive = ((al1 + be1 * mid) > 0) & ((al2 + be2 * mid) > 0) & (b > a)
    q0, q1, q2 = al1 * al2, al1 * be2 + al2 * be1, be1 * be2
    with np.errstate(divide="ignore", invalid="ignore"):
        piece = q0 * (1 / a - 1 / b) + q1 * np.log(b / a) + q2 * (b - a)
    return np.where(alive, piece, 0.0).sum(axis=-1)


def _angular_pieces(kernel: KernelSpec, vertices: np.ndarray) -> np.ndarray:
    kinks = [np.arctan2(vertices[:, 1], vertices[:, 0]),
             np.array([0.25, 0.75, 1.25, 1.75]) * np.pi, kernel.breakpoints()]
    pts = np.unique(np.mod(np.concatenate(kinks), 2 * np.pi))
    pts = np.concatenate([pts, [pts[0] + 2 * np.pi]])
    return pts[np.concatenate([np.diff(pts) > 1e-13, [True]])]


def _near_weight(kernel: KernelSpec, k1: int, k2: int, order: int = 12) -> float:
    """Exact-in-radius, Gauss-in-angle weight for offset ``k`` (unit spacing)."""
    off = np.array([(k1 + i, k2 + j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    off = off[np.any(off != 0, axis=1)]
    pts = _angular_pieces(kernel, off)
    x, wq = special.roots_legendre(order)
    a, b = pts[:-1], pts[1:]
    theta = ((a + b)[:, None] + (b - a)[:, None] * x) / 2
    wt = ((b - a)[:, None] * wq) / 2
    th = theta.ravel()
    return float(np.sum(wt.ravel() * kernel.density(th) * _ray_hat_integral(k1, k2, th)))


def _singular_moments(kernel: KernelSpec, order: int = 16) -> np.ndarray:
    """``M_ab = int_{[-1,1]^2} z_a z_b mu(theta) |z|^-3 dz``."""
    pts = _angular_pieces(kernel, np.zeros((0, 2)))
    x, wq = special.roots_legendre(order)
    a, b = pts[:-1], pts[1:]
    th = (((a + b)[:, None] + (b - a)[:, None] * x) / 2).ravel()
    wt = (((b - a)[:, None] * wq) / 2).ravel()
    c, s = np.cos(th), np.sin(th)
    rq = 1.0 / np.maximum(np.abs(c), np.abs(s))
    base = wt * kernel.density(th) * rq
    return np.array([[np.sum(base * c * c), np.sum(base * c * s)],
                     [np.sum(base * c * s), np.sum(base * s * s)]])


def _weights_2d(n: int, h: float, kernel: KernelSpec) -> np.ndarray:
    """Weight array indexed by offsets ``(k1, k2)`` in ``[-(n-1), n-1]^2``."""
    size = 2 * n - 1
    k = np.arange(size) - (n - 1)
    K1, K2 = np.meshgrid(k.astype(float), k.astype(float), indexing="ij")
    r2 = K1 ** 2 + K2 ** 2
    with np.errstate(divide="ignore"):
        r = np.sqrt(r2)
        mu = kernel.density(np.arctan2(K2, K1))
        # hat-averaged kernel: f + (1/12) Laplacian f, with Laplacian(r^-3) = 9 r^-5
        w = mu * (r ** -3 + 0.75 * r ** -5)
    w[n - 1, n - 1] = 0.0
    M = min(NEAR_FIELD, n - 1)
    mu_sym = kernel.values[0] if kernel.is_constant else None
    cache: dict[tuple[int, int], float] = {}
    for i in range(-M, M + 1):
        for j in range(-M, M + 1):
            if i == 0 and j == 0:
                continue
            key = (i, j)
            if mu_sym is not None:
                # square symmetry of the constant kernel
                key = tuple(sorted((abs(i), abs(j))))
            if key not in cache:
                cache[key] = _near_weight(kernel, *key) if mu_sym is None else \
                    mu_sym * _near_weight(KernelSpec.constant(1.0, 2), *key)
            w[i + n - 1, j + n - 1] = cache[key]
    mom = _singular_moments(kernel)
    m11, m12, m22 = mom[0, 0], mom[0, 1], mom[1, 1]
    if abs(m12) < 1e-14 * (m11 + m22):
        m12 = 0.0
    c_diag = abs(m12)
    c1, c2 = m11 - c_diag, m22 - c_diag
    if min(c1, c2) < 0:
        raise MMatrixError("kernel too anisotropic for a monotone singular-cell stencil")
    c0 = n - 1
    w[c0 + 1, c0] += c1 / 2
    w[c0 - 1, c0] += c1 / 2
    w[c0, c0 + 1] += c2 / 2
    w[c0, c0 - 1] += c2 / 2
    if m12 > 0:
        w[c0 + 1, c0 + 1] += c_diag / 2
        w[c0 - 1, c0 - 1] += c_diag / 2
    elif m12 < 0:
        w[c0 + 1, c0 - 1] += c_diag / 2
        w[c0 - 1, c0 + 1] += c_diag / 2
    return w / h


def _exterior_mass_2d(grid: Grid, kernel: KernelSpec, order: int = 48) -> np.ndarray:
    """``int mu(theta)/rho(x, theta) dtheta`` to the box widened by ``h/2``."""
    X1, X2 = grid.coords()
    edge = grid.R + grid.h / 2
    # (distance to side, tangential offsets of the side's corners, outward normal angle)
    sides = [
        (edge - X1, -edge - X2, edge - X2, 0.0),
        (edge - X2, -(edge - X1), edge + X1, np.pi / 2),
        (edge + X1, -(edge - X2), edge + X2, np.pi),
        (edge + X2, -edge - X1, edge - X1, 1.5 * np.pi),
    ]
    out = np.zeros(grid.shape)
    if kernel.is_constant:
        for d, ta, tb, _ in sides:
            out += (tb / np.hypot(tb, d) - ta / np.hypot(ta, d)) / d
        return kernel.values[0] * out
    x, wq = special.roots_legendre(order)
    for d, ta, tb, th_s in sides:
        pa, pb = np.arctan2(ta, d), np.arctan2(tb, d)
        for xi, wi in zip(x, wq):
            phi = (pa + pb) / 2 + (pb - pa) / 2 * xi
            out += wi * (pb - pa) / 2 * kernel.density(th_s + phi) * np.cos(phi) / d
    return out


def _box_sums(w: np.ndarray, n: int, dim: int) -> np.ndarray:
    """For every node, the sum of weights whose offset stays inside the box."""
    if dim == 1:
        csum = np.concatenate([[0.0], np.cumsum(w)])
        i = np.arange(n)
        # offsets k in [-i, n-1-i] map to array indices k + n - 1
        return csum[2 * n - 1 - i] - csum[n - 1 - i]
    S = np.zeros((2 * n, 2 * n))
    S[1:, 1:] = w.cumsum(0).cumsum(1)
    i = np.arange(n)
    lo, hi = n - 1 - i, 2 * n - 1 - i
    return (S[hi[:, None], hi[None, :]] - S[lo[:, None], hi[None, :]]
            - S[hi[:, None], lo[None, :]] + S[lo[:, None], lo[None, :]])


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Matrix-free ``A = -L_h + (b.grad)_h`` with zero exterior data.

    ``weights`` holds the nonlocal stencil over all offsets (centre entry
    zero); ``diag`` the full diagonal including exterior mass and drift;
    ``exterior`` the row sums of ``A`` (what ``A`` returns on the all-ones
    field).
    """

    grid: Grid
    kernel: KernelSpec
    b: np.ndarray
    scheme: str
    weights: np.ndarray
    diag: np.ndarray
    exterior: np.ndarray
    _fft: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def _kernel_hat(self):
        if "hat" not in self._fft:
            n, dim = self.grid.n, self.dimension
            L = sfft.next_fast_len(2 * n - 1, real=True)
            pad = np.zeros((L,) * dim)
            src = self.weights
            if dim == 1:
                pad[:n] = src[n - 1:]
                pad[L - (n - 1):] = src[:n - 1]
            else:
                c = n - 1
                for (ps, ss) in ((slice(0, n), slice(c, None)),
                                 (slice(L - c, L), slice(0, c))):
                    for (qs, ts) in ((slice(0, n), slice(c, None)),
                                     (slice(L - c, L), slice(0, c))):
                        pad[ps, qs] = src[ss, ts]
            self._fft["L"] = L
            self._fft["hat"] = sfft.rfftn(pad, workers=-1)
        return self._fft["hat"], self._fft["L"]

    def convolve(self, u: np.ndarray) -> np.ndarray:
        """``sum_k w_k u_{i+k}`` over in-box neighbours."""
        hat, L = self._kernel_hat()
        n, dim = self.grid.n, self.dimension
        uh = sfft.rfftn(u, s=(L,) * dim, workers=-1)
        out = sfft.irfftn(uh * hat, s=(L,) * dim, workers=-1)
        return out[(slice(0, n),) * dim]

    def drift_offdiag(self, u: np.ndarray) -> np.ndarray:
        """Off-diagonal part of the drift difference (zero exterior)."""
        h = self.grid.h
        out = np.zeros_like(u)
        for axis, bj in enumerate(self.b):
            if bj == 0.0:
                continue
            lo = [slice(None)] * u.ndim
            hi = [slice(None)] * u.ndim
            lo[axis], hi[axis] = slice(0, -1), slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            if self.scheme == "upwind":
                if bj > 0:
                    out[hi] -= bj / h * u[lo]  # b (u_i - u_{i-1}) / h
                else:
                    out[lo] += bj / h * u[hi]  # b (u_{i+1} - u_i) / h
            else:
                out[lo] += bj / (2 * h) * u[hi]
                out[hi] -= bj / (2 * h) * u[lo]
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.grid.shape:
            raise ValueError(f"field shape {u.shape} does not match grid {self.grid.shape}")
        return self.diag * u - self.convolve(u) + self.drift_offdiag(u)

    def nonlocal_apply(self, u: np.ndarray) -> np.ndarray:
        """``-L_h u`` alone (no drift)."""
        return (self.diag - self.drift_diag) * u - self.convolve(u)

    @property
    def drift_diag(self) -> np.ndarray:
        d = np.zeros(self.grid.shape)
        if self.scheme == "upwind":
            d += np.sum(np.abs(self.b)) / self.grid.h
        return d

    def row(self, i: int) -> np.ndarray:
        """Row ``i`` (flat index) of the assembled matrix."""
        e = np.zeros(self.grid.n_nodes)
        n, dim = self.grid.n, self.dimension
        idx = np.unravel_index(i, self.grid.shape)
        if dim == 1:
            k = np.arange(n) - idx[0] + n - 1
            r = -self.weights[k]
        else:
            k1 = np.arange(n) - idx[0] + n - 1
            k2 = np.arange(n) - idx[1] + n - 1
            r = -self.weights[np.ix_(k1, k2)].ravel()
        e[:] = r
        e[i] = self.diag.ravel()[i]
        h = self.grid.h
        strides = np.array([n ** (dim - 1 - a) for a in range(dim)])
        for axis, bj in enumerate(self.b):
            if bj == 0.0:
                continue
            pos = idx[axis]
            if self.scheme == "upwind":
                nb = pos - 1 if bj > 0 else pos + 1
                if 0 <= nb < n:
                    e[i + (nb - pos) * strides[axis]] -= abs(bj) / h
            else:
                for nb, sg in ((pos + 1, 1), (pos - 1, -1)):
                    if 0 <= nb < n:
                        e[i + (nb - pos) * strides[axis]] += sg * bj / (2 * h)
        return e

    def to_dense(self) -> np.ndarray:
        N = self.grid.n_nodes
        if N > 8192:
            raise ValueError(f"refusing to densify an operator with {N} unknowns")
        return np.stack([self.row(i) for i in range(N)])


def build_operator(grid: Grid, kernel: KernelSpec, b, drift_scheme: str = "upwind") -> DiscreteOperator:
    """Assemble the stencil of ``-L + b.grad`` on ``grid``."""
    if kernel.dimension != grid.dimension:
        raise ValueError("kernel and grid dimensions differ")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (grid.dimension,):
        raise ValueError(f"drift has shape {b.shape}, expected ({grid.dimension},)")
    if drift_scheme not in ("upwind", "central"):
        raise ValueError(f"unknown drift scheme {drift_scheme!r}")
    n, h = grid.n, grid.h
    if grid.dimension == 1:
        m = float(kernel.density(np.array([1.0]))[0])
        half = _weights_1d(n, h, m)
        w = np.concatenate([half[:0:-1], [0.0], half[1:]])
        i = np.arange(n)
        ext = _tail_1d(n - i, h, m) + _tail_1d(i + 1, h, m)
    else:
        w = _weights_2d(n, h, kernel)
        ext = _exterior_mass_2d(grid, kernel)
    inside = _box_sums(w, n, grid.dimension)
    diag = inside + ext
    drift_ext = np.zeros(grid.shape)
    if drift_scheme == "upwind":
        diag = diag + np.sum(np.abs(b)) / h
        for axis, bj in enumerate(b):
            if bj == 0.0:
                continue
            sl = [slice(None)] * grid.dimension
            sl[axis] = 0 if bj > 0 else -1
            drift_ext[tuple(sl)] += abs(bj) / h
    else:
        for axis, bj in enumerate(b):
            sl_lo = [slice(None)] * grid.dimension
            sl_hi = [slice(None)] * grid.dimension
            sl_lo[axis], sl_hi[axis] = 0, -1
            drift_ext[tuple(sl_lo)] += bj / (2 * h)
            drift_ext[tuple(sl_hi)] -= bj / (2 * h)
        # monotone only while the nearest nonlocal weight beats the drift
        centre = (n - 1,) * grid.dimension
        for axis, bj in enumerate(b):
            nb = list(centre)
            nb[axis] += 1
            if w[tuple(nb)] < abs(bj) / (2 * h):
                raise MMatrixError(
                    f"central drift b_{axis}={bj} breaks the M-matrix: neighbour weight "
                    f"{w[tuple(nb)]:.4g} < |b|/(2h) = {abs(bj) / (2 * h):.4g} (row of any "
                    f"interior node)")
    op = DiscreteOperator(grid, kernel, b, drift_scheme, w, diag, ext + drift_ext)
    if np.any(w < 0) or np.any(op.diag <= 0) or np.any(op.exterior < -1e-9 * op.diag):
        bad = int(np.argmin(op.exterior.ravel()))
        raise MMatrixError(f"M-matrix check failed at node {bad}")
    return op


def apply(op: DiscreteOperator, field) -> np.ndarray:
    return op.apply(field)


# -- consistency on power profiles ---------------------------------------------

@dataclass
class ConsistencyRow:
    h: float
    max_rel_error: float
    order: float | None


def half_laplacian_power_exact(beta: float) -> float:
    """Coefficient ``C`` in ``(-Delta)^{1/2} (x_+)^beta = C x^(beta-1)`` on x > 0."""
    return beta / math.tan(beta * math.pi) if beta != 0.5 else 0.0


def _truncation_correction(x: np.ndarray, beta: float, R: float, h: float, m: float) -> np.ndarray:
    """What the zero exterior removes from ``-L (x_+)^beta`` at points ``x < R``."""
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        far, _ = integrate.quad(lambda y: y ** beta / (y - xi) ** 2, R, np.inf,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        ramp, _ = integrate.quad(lambda y: R ** beta * (1 - (y - R) / h) / (y - xi) ** 2,
                                 R, R + h, epsabs=1e-15, epsrel=1e-12)
        out[i] = -m * (far - ramp)
    return out


def _profile_error(op: DiscreteOperator, beta: float, window) -> tuple[np.ndarray, np.ndarray]:
    x = op.grid.axis
    u = np.where(x > 0, np.abs(x) ** beta, 0.0)
    Au = op.apply(u)
    sel = (x >= window[0] - 1e-12) & (x <= window[1] + 1e-12)
    xs = x[sel]
    m = float(op.kernel.density(np.array([1.0]))[0])
    Au_full = Au[sel] + _truncation_correction(xs, beta, op.grid.R, op.grid.h, m)
    bj = float(op.b[0])
    exact = (m * math.pi * half_laplacian_power_exact(beta) + bj * beta) * xs ** (beta - 1)
    scale = beta * xs ** (beta - 1)
    return xs, np.abs(Au_full - exact) / scale


def consistency_report(op: DiscreteOperator, beta: float, eval_window=(0.25, 1.0),
                       levels: int = 3) -> list[ConsistencyRow]:
    """Error of ``A (x_+)^beta`` against the closed form on ``eval_window``.

    Errors are relative to ``beta x^(beta-1)``, the size of the derivative
    term.  The operator is rebuilt on ``levels`` successively halved grids and
    the observed order between consecutive levels is reported.
    """
    if op.dimension != 1:
        raise ValueError("consistency_report needs a 1-D operator")
    lo, hi = eval_window
    if not (0 < lo < hi) or hi >= op.grid.R / 2:
        raise ValueError(f"evaluation window {eval_window} must sit in (0, R/2)")
    power_multiplier(beta, float(op.b[0]))  # validates beta
    rows: list[ConsistencyRow] = []
    cur = op
    for level in range(levels):
        if level:
            cur = build_operator(cur.grid.refined(), cur.kernel, cur.b, cur.scheme)
        _, err = _profile_error(cur, beta, eval_window)
        e = float(err.max())
        order = None
        if rows and e > 0 and rows[-1].max_rel_error > 0:
            order = math.log2(rows[-1].max_rel_error / e)
        rows.append(ConsistencyRow(cur.grid.h, e, order))
    return rows
