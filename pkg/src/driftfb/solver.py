"""Discrete obstacle problem ``min{(Au)_i, u_i - phi_i} = 0`` with zero exterior data.

Three solvers share the same contract:

* ``psor``: projected SOR on the assembled matrix, lexicographic sweep.
  The reference method on coarse grids.
* ``howard``: policy iteration.  Each step fixes a guess of the contact set
  and solves the linear problem on the free nodes with GMRES, preconditioned
  by the circulant (FFT-diagonal) version of the operator.  Matrix-free, so
  it reaches the fine 1-D and 2-D grids.
* ``active_set_lcp``: the same active-set iteration with dense direct
  solves.  Used as an independent oracle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .kernel import KernelSpec
from .obstacles import make_obstacle, outer_radius
from .operator import DiscreteOperator, Grid, MMatrixError, build_operator

log = logging.getLogger(__name__)

DENSE_LIMIT = 8192


class SolverDivergence(RuntimeError):
    """The projected iteration stopped making progress or blew up."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: Grid
    obstacle: np.ndarray
    kernel: KernelSpec
    b: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = np.asarray(self.obstacle, dtype=float)
        if phi.shape != self.grid.shape:
            raise ValueError(f"obstacle shape {phi.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("obstacle has non-finite values")
        pos = phi > 0
        if pos.any():
            r = np.sqrt(sum(c ** 2 for c in self.grid.coords()))
            extent = float(r[pos].max())
            if extent > self.grid.R / 3 + 1e-12:
                raise ValueError(f"positive part of the obstacle reaches radius {extent:.4g}; "
                                 f"keep it within R/3 = {self.grid.R / 3:.4g}")
        object.__setattr__(self, "obstacle", phi)
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))

    @classmethod
    def bump(cls, grid: Grid, kernel: KernelSpec, b, family: str = "bump", a: float = 1.0,
             rho: float = 1.0, center=None) -> "ProblemSpec":
        """Sample a synthetic obstacle from :mod:`driftfb.obstacles`."""
        if center is None:
            center = np.zeros(grid.dimension)
        center = np.atleast_1d(np.asarray(center, dtype=float))
        phi = make_obstacle(family, grid.coords(), a, rho, center)
        meta = {"family": family, "a": a, "rho": rho, "center": center.tolist(),
                "support_radius": outer_radius(family, rho)}
        return cls(grid, phi, kernel, b, meta)


@dataclass(frozen=True, eq=False)
class SolverParams:
    omega: float = 1.5
    tol: float = 1e-10
    max_iter: int = 1_000_000
    method: str = "auto"  # auto | psor | howard | active-set
    initial: str = "obstacle"  # obstacle (phi_+) | supersolution (constant max phi)
    check_every: int = 10
    nested: bool = True
    gmres_restart: int = 60

    def __post_init__(self):
        if not 0 < self.omega < 2:
            raise ValueError(f"omega must lie in (0, 2), got {self.omega}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.method not in ("auto", "psor", "howard", "active-set"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.initial not in ("obstacle", "supersolution"):
            raise ValueError(f"unknown initial guess {self.initial!r}")


@dataclass(frozen=True, eq=False)
class SolutionField:
    u: np.ndarray
    contact_mask: np.ndarray
    pde_residual: np.ndarray
    complementarity_residual: float
    iterations: int
    converged: bool
    method: str
    contact_tol: float
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class ResidualReport:
    negative_au: float
    free_pde: float
    below_obstacle: float
    complementarity: float

    def max(self) -> float:
        return max(self.negative_au, self.free_pde, self.below_obstacle)


@dataclass(frozen=True)
class AprioriReport:
    max_u: float
    max_phi: float
    bound_margin: float  # max phi + tol - max u
    lip_u: float
    lip_phi: float
    lip_ratio: float
    min_second_difference: float
    c11_phi: float
    semiconvexity_margin: float  # min D2 u + c11 + slack
    slack: float
    bounded: bool
    lipschitz: bool
    semiconvex: bool

    @property
    def ok(self) -> bool:
        return self.bounded and self.lipschitz and self.semiconvex


def contact_tolerance(tol: float, h: float) -> float:
    return max(10 * tol, h * h)


def _check_operator(problem: ProblemSpec, op: DiscreteOperator) -> None:
    if op.grid != problem.grid:
        raise ValueError("operator and problem live on different grids")
    if op.scheme != "upwind":
        raise MMatrixError("solver requires the upwind (M-matrix) discretization")
    if not np.allclose(op.b, problem.b, rtol=0, atol=0):
        raise ValueError("operator drift differs from the problem drift")


def _finish(problem, op, u, iterations, method, tol, trace) -> SolutionField:
    phi = problem.obstacle
    Au = op.apply(u)
    comp = float(np.max(np.abs(np.minimum(Au, u - phi))))
    ctol = contact_tolerance(tol, problem.grid.h)
    # a zero-exterior solution is strictly positive, so contact needs phi > 0
    mask = ((u - phi) <= ctol) & (phi > 0)
    pde = np.where(mask, 0.0, Au)
    return SolutionField(u, mask, pde, comp, iterations, comp <= tol, method, ctol, trace)


# -- projected SOR -------------------------------------------------------------

@numba.njit(cache=True)
def _psor_sweeps(A, phi, u, omega, n_sweeps):
    n = u.shape[0]
    for _ in range(n_sweeps):
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += A[i, j] * u[j]
            v = u[i] - omega * s / A[i, i]
            u[i] = v if v > phi[i] else phi[i]
    return u


def psor_dense(A: np.ndarray, phi: np.ndarray, omega: float = 1.5, tol: float = 1e-10,
               max_iter: int = 1_000_000, u0=None, check_every: int = 10,
               snapshots: list | None = None):
    """Projected SOR on a dense M-matrix.  Returns ``(u, sweeps, trace)``.

    ``snapshots``, when given, receives a copy of the iterate after every
    sweep (for monotonicity diagnostics; only sensible for short runs).
    """
    A = np.ascontiguousarray(A, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float).ravel()
    u = np.maximum(phi, 0.0) if u0 is None else np.array(u0, dtype=float).ravel()
    if np.any(np.diag(A) <= 0):
        raise MMatrixError("nonpositive diagonal entry")
    trace: list[float] = []
    sweeps = 0
    best, stalled = math.inf, 0
    step = 1 if snapshots is not None else check_every
    while sweeps < max_iter:
        k = min(step, max_iter - sweeps)
        _psor_sweeps(A, phi, u, omega, k)
        sweeps += k
        if snapshots is not None:
            snapshots.append(u.copy())
        res = float(np.max(np.abs(np.minimum(A @ u, u - phi))))
        trace.append(res)
        if not math.isfinite(res):
            raise SolverDivergence(f"non-finite residual after {sweeps} sweeps", trace)
        if res <= tol:
            break
        if res < best:
            best, stalled = res, 0
        else:
            stalled += k
            if stalled >= 100:
                raise SolverDivergence(
                    f"residual has not decreased for {stalled} sweeps (best {best:.3e})", trace)
    return u, sweeps, trace


# -- dense active-set oracle ---------------------------------------------------

def active_set_dense(A: np.ndarray, phi: np.ndarray, max_iter: int = 500):
    """Active-set (policy) iteration with direct solves.  Returns ``(u, iterations)``.

    For an M-matrix started from the empty active set the iterates decrease
    monotonically and the method terminates after finitely many steps.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    N = phi.size
    contact = np.zeros(N, dtype=bool)
    u = np.linalg.solve(A, np.zeros(N))
    for it in range(1, max_iter + 1):
        new = (u - phi) <= A @ u
        if it > 1 and np.array_equal(new, contact):
            return u, it
        contact = new
        free = ~contact
        u = phi.copy()
        if free.any():
            rhs = -A[np.ix_(free, contact)] @ phi[contact]
            u[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
    raise SolverDivergence("active-set iteration did not terminate", [])


# -- policy iteration ----------------------------------------------------------

class _Circulant:
    """Inverse of the periodic (circulant) version of ``A`` on the padded box."""

    def __init__(self, op: DiscreteOperator):
        hat, L = op._kernel_hat()
        g = op.grid
        dim = g.dimension
        centre = (g.n // 2,) * dim
        sym = op.diag[centre] - hat
        h = g.h
        for axis, bj in enumerate(op.b):
            if bj == 0.0:
                continue
            size = hat.shape[axis]
            xi = 2 * np.pi * np.arange(size) / L
            shape = [1] * dim
            shape[axis] = size
            xi = xi.reshape(shape)
            if bj > 0:
                sym = sym - bj / h * np.exp(-1j * xi)
            else:
                sym = sym - abs(bj) / h * np.exp(1j * xi)
        self.inv_sym = 1.0 / sym
        self.L = L
        self.shape = g.shape
        self.dim = dim

    def __call__(self, r: np.ndarray) -> np.ndarray:
        s = (self.L,) * self.dim
        out = sfft.irfftn(sfft.rfftn(r, s=s, workers=-1) * self.inv_sym, s=s, workers=-1)
        return out[tuple(slice(0, n) for n in self.shape)]


def _solve_free(op, pre, phi, contact, u_guess, tol, restart=60, rounds=8):
    """Solve ``A_FF u_F = -A_FC phi_C`` and return the assembled field."""
    free = ~contact
    nF = int(free.sum())
    u = np.where(contact, phi, 0.0)
    if nF == 0:
        return u, 0
    rhs = -op.apply(u)[free]
    shape = op.grid.shape

    def mv(v):
        z = np.zeros(shape)
        z[free] = v
        return op.apply(z)[free]

    def pc(v):
        z = np.zeros(shape)
        z[free] = v
        return pre(z)[free]

    A = LinearOperator((nF, nF), matvec=mv, dtype=float)
    M = LinearOperator((nF, nF), matvec=pc, dtype=float)
    x = u_guess[free].copy()
    count = [0]

    def cb(_):
        count[0] += 1

    for _ in range(rounds):
        x, _info = gmres(A, rhs, x0=x, rtol=1e-15, atol=0.0, restart=min(restart, nF),
                         maxiter=1, M=M, callback=cb, callback_type="pr_norm")
        r = float(np.max(np.abs(mv(x) - rhs)))
        if r <= 0.01 * tol:
            break
    u[free] = x
    return u, count[0]


def _prolong(u_coarse: np.ndarray, dim: int) -> np.ndarray:
    """Linear interpolation from spacing 2h to h on nested grids."""
    out = u_coarse
    for axis in range(dim):
        n = out.shape[axis]
        shape = list(out.shape)
        shape[axis] = 2 * n - 1
        fine = np.empty(shape)
        even = [slice(None)] * out.ndim
        odd = [slice(None)] * out.ndim
        even[axis] = slice(0, None, 2)
        odd[axis] = slice(1, None, 2)
        lo = [slice(None)] * out.ndim
        hi = [slice(None)] * out.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        fine[tuple(even)] = out
        fine[tuple(odd)] = 0.5 * (out[tuple(lo)] + out[tuple(hi)])
        out = fine
    return out


def _nested_start(problem: ProblemSpec, params: SolverParams):
    g = problem.grid
    coarse_n = {1: 1025, 2: 129}[g.dimension]
    if not params.nested or g.n <= coarse_n or "family" not in problem.metadata:
        return None
    h2 = 2 * g.h
    if not (g.R / h2).is_integer() or g.R / h2 < 4:
        return None
    cg = Grid(g.dimension, h2, g.R)
    md = problem.metadata
    cp = ProblemSpec.bump(cg, problem.kernel, problem.b, md["family"], md["a"], md["rho"],
                          md["center"])
    cop = build_operator(cg, problem.kernel, problem.b)
    sol = _howard(cp, cop, params)
    return _prolong(sol.u, g.dimension)


def _howard(problem: ProblemSpec, op: DiscreteOperator, params: SolverParams) -> SolutionField:
    phi = problem.obstacle
    tol = params.tol
    start = _nested_start(problem, params)
    if start is None:
        u = _initial(phi, params)
    else:
        u = np.maximum(phi, start)
    pre = _Circulant(op)
    seen: set[bytes] = set()
    trace: list[float] = []
    contact = None
    it = 0
    for it in range(1, min(params.max_iter, 500) + 1):
        Au = op.apply(u)
        res = float(np.max(np.abs(np.minimum(Au, u - phi))))
        trace.append(res)
        new = (u - phi) <= Au
        key = np.packbits(new).tobytes()
        if contact is not None and (np.array_equal(new, contact) or key in seen):
            break
        seen.add(key)
        contact = new
        u, n_gm = _solve_free(op, pre, phi, contact, u, tol, restart=params.gmres_restart)
        log.debug("policy step %d: %d contact nodes, %d GMRES its, residual %.3e",
                  it, int(contact.sum()), n_gm, res)
    return _finish(problem, op, u, it, "howard", tol, trace)


def _initial(phi: np.ndarray, params: SolverParams) -> np.ndarray:
    if params.initial == "supersolution":
        return np.full_like(phi, max(float(phi.max()), 0.0))
    return np.maximum(phi, 0.0)


def solve(problem: ProblemSpec, op: DiscreteOperator | None = None,
          params: SolverParams | None = None) -> SolutionField:
    """Solve the obstacle problem on ``problem.grid``.

    ``method="auto"`` uses PSOR on grids with at most 513 nodes and policy
    iteration above that.
    """
    params = params or SolverParams()
    if op is None:
        op = build_operator(problem.grid, problem.kernel, problem.b)
    _check_operator(problem, op)
    phi = problem.obstacle
    if not np.any(phi > 0):
        log.info("no positive obstacle region; u = 0")
        u = np.zeros_like(phi)
        return _finish(problem, op, u, 0, "trivial", params.tol, [])
    method = params.method
    if method == "auto":
        method = "psor" if problem.grid.n_nodes <= 513 else "howard"
    if method == "howard":
        return _howard(problem, op, params)
    A = op.to_dense()
    if method == "active-set":
        u, its = active_set_dense(A, phi.ravel())
        return _finish(problem, op, u.reshape(phi.shape), its, method, params.tol, [])
    u0 = _initial(phi, params).ravel()
    u, sweeps, trace = psor_dense(A, phi.ravel(), params.omega, params.tol, params.max_iter,
                                  u0, params.check_every)
    return _finish(problem, op, u.reshape(phi.shape), sweeps, "psor", params.tol, trace)


# -- diagnostics ---------------------------------------------------------------

def residuals(solution: SolutionField, op: DiscreteOperator, problem: ProblemSpec) -> ResidualReport:
    u, phi = solution.u, problem.obstacle
    Au = op.apply(u)
    free = ~solution.contact_mask
    return ResidualReport(
        negative_au=float(np.max(np.maximum(-Au, 0.0))),
        free_pde=float(np.max(np.abs(Au[free]))) if free.any() else 0.0,
        below_obstacle=float(np.max(np.maximum(phi - u, 0.0))),
        complementarity=float(np.max(np.abs(np.minimum(Au, u - phi)))),
    )


def _directions(dim: int):
    if dim == 1:
        return [((1,), 1.0)]
    return [((1, 0), 1.0), ((0, 1), 1.0), ((1, 1), math.sqrt(2)), ((1, -1), math.sqrt(2))]


def _shifted(a: np.ndarray, k) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``(a[x], a[x + k])`` over nodes where both are in the box."""
    src, dst = [], []
    for kj, n in zip(k, a.shape):
        if kj >= 0:
            src.append(slice(0, n - kj))
            dst.append(slice(kj, n))
        else:
            src.append(slice(-kj, n))
            dst.append(slice(0, n + kj))
    return a[tuple(src)], a[tuple(dst)]


def lipschitz_seminorm(f: np.ndarray, h: float) -> float:
    best = 0.0
    for k, length in _directions(f.ndim):
        a, b = _shifted(f, k)
        best = max(best, float(np.max(np.abs(b - a))) / (length * h))
    return best


def second_differences(f: np.ndarray, h: float) -> list[np.ndarray]:
    """Centred second differences along axes and diagonals, interior nodes."""
    out = []
    for k, length in _directions(f.ndim):
        inner = tuple(slice(1, -1) for _ in range(f.ndim))
        fwd = np.roll(f, [-kj for kj in k], axis=tuple(range(f.ndim)))
        bwd = np.roll(f, list(k), axis=tuple(range(f.ndim)))
        d2 = (fwd - 2 * f + bwd) / (length * h) ** 2
        out.append(d2[inner])
    return out


def interior_window(grid: Grid, fraction: float = 2 / 3) -> tuple:
    """Index slices of the nodes with ``|x|_inf <= fraction * R``."""
    k = int(math.floor(fraction * grid.R / grid.h + 1e-9))
    c = grid.n // 2
    return tuple(slice(c - k, c + k + 1) for _ in range(grid.dimension))


def a_priori_checks(solution: SolutionField, problem: ProblemSpec, tol: float = 1e-8,
                    lip_slack: float = 0.05, c11_slack: float = 0.05,
                    interior: float = 2 / 3) -> AprioriReport:
    """Bound, Lipschitz and semiconvexity checks on a solved instance.

    The semiconvexity slack is ``c11_slack`` times the discrete C^{1,1}
    seminorm of the obstacle.  Derivative bounds on ``u`` are taken over
    ``|x|_inf <= interior * R``: next to the truncation boundary ``u`` drops
    to the zero exterior value in a layer a few cells wide, which has no
    whole-space counterpart.
    """
    u, phi, h = solution.u, problem.obstacle, problem.grid.h
    # the zero exterior datum is itself an obstacle from below
    max_u, max_phi = float(u.max()), max(float(phi.max()), 0.0)
    win = interior_window(problem.grid, interior)
    lip_u, lip_phi = lipschitz_seminorm(u[win], h), lipschitz_seminorm(phi, h)
    d2u = min(float(d.min()) for d in second_differences(u[win], h))
    c11 = max(float(np.abs(d).max()) for d in second_differences(phi, h))
    slack = c11_slack * c11
    ratio = lip_u / lip_phi if lip_phi > 0 else (0.0 if lip_u == 0 else math.inf)
    return AprioriReport(
        max_u=max_u, max_phi=max_phi, bound_margin=max_phi + tol - max_u,
        lip_u=lip_u, lip_phi=lip_phi, lip_ratio=ratio,
        min_second_difference=d2u, c11_phi=c11, semiconvexity_margin=d2u + c11 + slack,
        slack=slack, bounded=max_u <= max_phi + tol, lipschitz=ratio <= 1 + lip_slack,
        semiconvex=d2u >= -c11 - slack,
    )
