"""Admissible initial data for the flow.

The reference steady state comes from flowing the quadratic problem out of
an affine seed.  It is then carried to the target cost along the homotopy
``c_s = (1 - s) c0 + s c`` by Newton on

    Phi(c_s, u) = (Lap(u - u0), G(x, grad u) on the boundary) = 0

in the zero-mean class.  The discrete oblique problem has a one-dimensional
cokernel, so the interior equation carries one extra unknown ``kappa``
(``Lap(u - u0) = kappa``); it vanishes whenever the continuous problem is
compatible and is reported as a defect otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cost import BlendCost, CostModel, QuadraticCost, c_exp
from .errors import (
    ConfigurationError,
    ContinuationError,
    DegeneracyError,
    FlowVerdictError,
    ObliquenessError,
    SolverError,
)
from .flow import FlowConfig, FlowReport, Problem, assemble_state, enforce_boundary, run_flow
from .geometry import DomainSpec, GridDomain, signed_distance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationConfig:
    steps: int | None = None          # None: chosen from the cost distance
    newton_tol: float = 1e-10
    newton_max_iter: int = 20
    linear_tol: float = 1e-12
    zero_mean: bool = True
    step_scale: float = 0.05

    def __post_init__(self):
        if self.steps is not None and self.steps < 1:
            raise ConfigurationError("continuation needs at least one homotopy step")
        if not (self.newton_tol > 0 and self.linear_tol > 0 and self.step_scale > 0):
            raise ConfigurationError("continuation tolerances must be positive")


# ---------------------------------------------------------------------------
# affine seed


_BOXY = {"interval", "box"}
_ROUND = {"disc", "ellipse"}


def affine_map(source: DomainSpec, target: DomainSpec) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal D > 0 and b with ``T(x) = D x + b`` mapping source onto target."""
    if source.dim != target.dim:
        raise ConfigurationError("source and target dimensions differ")
    ok = (source.kind in _BOXY and target.kind in _BOXY) or (source.kind in _ROUND and target.kind in _ROUND)
    if not ok:
        raise ConfigurationError(f"no affine bijection from {source.kind} to {target.kind}")
    D = np.asarray(target.half_extents, float) / np.asarray(source.half_extents, float)
    b = np.asarray(target.center, float) - D * np.asarray(source.center, float)
    return D, b


def affine_seed(grid: GridDomain, target: DomainSpec) -> np.ndarray:
    """``u(x) = 1/2 x^T (D - I) x + b.x`` at every lattice node."""
    D, b = affine_map(grid.spec, target)
    X = grid.points
    return 0.5 * np.einsum("mi,i,mi->m", X, D - 1.0, X) + X @ b


# ---------------------------------------------------------------------------
# Phi and its derivative


@dataclass
class PhiValue:
    interior: np.ndarray
    boundary: np.ndarray
    beta: np.ndarray


def phi_value(problem: Problem, u, u0, kappa: float = 0.0) -> PhiValue:
    """``(Lap(u - u0) - kappa, G(x, grad u))`` on interior and boundary nodes."""
    S = problem.stencils
    grid = problem.source
    lap = S.laplacian @ (np.asarray(u) - np.asarray(u0)) - kappa
    Bd = grid.boundary
    p = S.boundary_gradient(np.asarray(u), projected=True)
    r = c_exp(problem.cost, grid.boundary_points[Bd], p)
    hs, gh = signed_distance(problem.target.spec, r.y)
    beta = np.einsum("mji,mj->mi", r.jacobian, gh)
    return PhiValue(lap, hs, beta)


def dphi_matrix(problem: Problem, beta) -> sp.csr_matrix:
    """Rows: interior Laplacian, then ``beta . grad`` at boundary nodes; columns: lattice nodes."""
    ops = problem.stencils.boundary_gradient_ops
    B = sum(sp.diags(beta[:, k]) @ ops[k] for k in range(len(ops)))
    return sp.vstack([problem.stencils.laplacian, B]).tocsr()


def apply_dphi(problem: Problem, u, phi) -> tuple[np.ndarray, np.ndarray]:
    beta = phi_value(problem, u, u).beta
    out = dphi_matrix(problem, beta) @ np.asarray(phi)
    ni = len(problem.source.interior)
    return out[:ni], out[ni:]


# ---------------------------------------------------------------------------
# continuation


def cost_distance(c0: CostModel, c: CostModel, source: GridDomain, target: GridDomain, cap: int = 48) -> float:
    """Sampled max-entry distance between second derivatives of two costs."""
    def sub(idx):
        return idx if len(idx) <= cap else idx[np.linspace(0, len(idx) - 1, cap).round().astype(int)]

    X = source.points[sub(source.active)]
    Y = target.points[sub(target.active)]
    Xr = np.repeat(X, len(Y), axis=0)
    Yr = np.tile(Y, (len(X), 1))
    d = 0.0
    for name in ("hess_xx", "hess_xy", "hess_yy"):
        diff = getattr(c, name)(Xr, Yr) - getattr(c0, name)(Xr, Yr)
        d = max(d, float(np.max(np.abs(diff))))
    return d


@dataclass
class ContinuationResult:
    u: np.ndarray
    kappa: float
    steps: int
    s_values: list
    newton_iterations: list
    boundary_residual: float
    harmonic_residual: float
    correction_means: list = field(default_factory=list)


def _weights(grid):
    act = grid.active
    w = grid.weights[act]
    return act, w / w.sum()


def continuation_initial_data(c0: CostModel, c: CostModel, u0, problem: Problem,
                              config: ContinuationConfig = ContinuationConfig()) -> ContinuationResult:
    """Carry the c0 steady state ``u0`` to admissible data for ``c``."""
    grid = problem.source
    act, wn = _weights(grid)
    I, Bd = grid.interior, grid.boundary
    ni, nb, na = len(I), len(Bd), len(act)
    u0 = np.asarray(u0, dtype=float)
    target_mean = float(np.dot(wn, u0[act])) if config.zero_mean else None
    row_scale = 1.0 / np.sum(2.0 / np.asarray(grid.spacing) ** 2)
    steps = config.steps or max(4, math.ceil(cost_distance(c0, c, grid, problem.target) / config.step_scale))

    u = u0.copy()
    kappa = 0.0
    s_done = 0.0
    iters, means, s_vals = [], [], []

    def F(prob, u, kappa):
        v = phi_value(prob, u, u0, kappa)
        m = float(np.dot(wn, u[act])) - target_mean if target_mean is not None else 0.0
        norm = max(row_scale * np.max(np.abs(v.interior), initial=0.0), np.max(np.abs(v.boundary), initial=0.0), abs(m))
        return v, m, norm

    for k in range(1, steps + 1):
        s = k / steps
        cs = c if s == 1.0 else BlendCost(c0, c, s)
        prob = problem.with_cost(cs)
        try:
            v, m, norm = F(prob, u, kappa)
        except (SolverError, DegeneracyError) as exc:
            raise ContinuationError(f"c-exponential failed entering s={s:.4g}: {exc}", s_done) from exc
        count = 0
        while norm > config.newton_tol:
            if count >= config.newton_max_iter:
                raise ContinuationError(f"Newton did not converge at s={s:.4g} (residual {norm:.3e})", s_done)
            obl = np.einsum("bi,bi->b", v.beta, grid.normals[Bd])
            if np.any(~(obl > 0)):
                raise ObliquenessError(f"beta.nu <= 0 at s={s:.4g}")
            J = dphi_matrix(prob, v.beta)[:, act]
            top = sp.hstack([J, sp.csr_matrix(np.r_[-np.ones(ni), np.zeros(nb)][:, None])])
            mrow = sp.csr_matrix(np.r_[wn, 0.0][None, :]) if target_mean is not None else None
            if mrow is None:
                # pin kappa instead of the mean
                mrow = sp.csr_matrix(np.r_[np.zeros(na), 1.0][None, :])
            A = sp.vstack([top, mrow]).tocsc()
            rhs = -np.r_[v.interior, v.boundary, m]
            Dr = sp.diags(np.r_[np.full(ni, row_scale), np.ones(nb + 1)])
            try:
                sol = spla.spsolve(Dr @ A, Dr @ rhs)
            except RuntimeError as exc:
                raise ObliquenessError(f"linear oblique problem is singular at s={s:.4g}") from exc
            if not np.all(np.isfinite(sol)):
                raise ObliquenessError(f"linear oblique problem is singular at s={s:.4g}")
            lin_res = np.max(np.abs(Dr @ (A @ sol - rhs)))
            if lin_res > max(config.linear_tol, 1e-8 * max(1.0, np.max(np.abs(Dr @ rhs)))):
                raise ObliquenessError(f"linear solve residual {lin_res:.3e} at s={s:.4g}")
            dphi = sol[:na]
            means.append(float(np.dot(wn, dphi)))
            t = 1.0
            for _ in range(25):
                trial = u.copy()
                trial[act] += t * dphi
                tk = kappa + t * sol[na]
                try:
                    v2, m2, n2 = F(prob, trial, tk)
                except (SolverError, DegeneracyError):
                    n2 = math.inf
                if n2 < norm or n2 <= config.newton_tol:
                    break
                t *= 0.5
            else:
                raise ContinuationError(f"Newton line search stalled at s={s:.4g} (residual {norm:.3e})", s_done)
            u, kappa, v, m, norm = trial, tk, v2, m2, n2
            count += 1
        iters.append(count)
        s_vals.append(s)
        s_done = s
        log.debug("continuation s=%.4g: %d Newton steps, residual %.3e", s, count, norm)
    v = phi_value(problem.with_cost(c), u, u0, kappa)
    harm = float(np.max(np.abs(problem.stencils.laplacian @ (u - u0)), initial=0.0))
    return ContinuationResult(u, kappa, steps, s_vals, iters, float(np.max(np.abs(v.boundary))), harm, means)


# ---------------------------------------------------------------------------
# steady state under the reference cost


def solve_steady(problem: Problem, config: FlowConfig = FlowConfig(),
                 continuation: ContinuationConfig = ContinuationConfig()) -> tuple[np.ndarray, FlowReport]:
    """Flow the reference problem from the affine seed; return the zero-mean steady state."""
    grid = problem.source
    u = affine_seed(grid, problem.target.spec)
    if problem.cost.kind != "quadratic":
        quad = problem.with_cost(QuadraticCost())
        u, _ = enforce_boundary(u, quad, config.boundary_tol, config.boundary_max_iter)
        u = continuation_initial_data(QuadraticCost(), problem.cost, u, quad, continuation).u
    u, _ = enforce_boundary(u, problem, config.boundary_tol, config.boundary_max_iter)
    state = assemble_state(u, problem)
    report = run_flow(state, config, problem)
    if report.verdict != "converged":
        raise FlowVerdictError(f"steady solve ended with verdict {report.verdict}: {report.message}", report)
    return report.final.normalized_u(), report


# ---------------------------------------------------------------------------
# admissibility report


@dataclass
class ICReport:
    boundary_residual: float
    min_eig: float
    containment: float
    strict_margin: float
    strict_pairs: int
    worst_pair: tuple | None
    passed: bool
    tolerances: dict


def check_IC(u, problem: Problem, boundary_tol: float = 1e-8, max_pairs: int = 20000, seed: int = 0) -> ICReport:
    state = assemble_state(u, problem)
    grid = problem.source
    act = grid.active
    cost = problem.cost
    hs, _ = signed_distance(problem.target.spec, state.T[act])
    cont = float(np.max(hs))
    cont_tol = 2.0 * float(np.max(problem.target.spacing))
    na = len(act)
    if na * (na - 1) <= max_pairs:
        i, j = np.nonzero(~np.eye(na, dtype=bool))
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, na, max_pairs)
        j = rng.integers(0, na - 1, max_pairs)
        j = j + (j >= i)
    X, U = grid.points[act], state.u[act]
    x, x0, y0 = X[i], X[j], state.T[act][j]
    margin = U[i] - (-cost.value(x, y0) + cost.value(x0, y0) + U[j])
    k = int(np.argmin(margin))
    worst = (int(act[i[k]]), int(act[j[k]]))
    strict = float(margin[k])
    br = state.boundary_residual
    me = state.min_eig
    ok = br <= boundary_tol and me > 0 and cont <= cont_tol and strict > 0
    tol = {"boundary": boundary_tol, "containment": cont_tol}
    return ICReport(br, me, cont, strict, len(margin), worst, bool(ok), tol)
