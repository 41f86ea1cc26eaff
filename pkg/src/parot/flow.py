"""Explicit time stepping of the parabolic transport flow.

    du/dt = log det W - log B    in the interior,
    G(x, grad u) = 0             on boundary nodes,

with ``W = D2u - A(x, grad u)``.  The flow is run unnormalized; zero-mean
normalization is applied only when potentials are reported.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .cost import CostModel, c_exp, c_exp_star
from .errors import (
    AssemblyError,
    BoundaryError,
    ConfigurationError,
    CoverageError,
    DegeneracyError,
    ObliquenessError,
    PositivityError,
    SolverError,
    StepFailure,
)
from .geometry import DefiningFunction, DensityField, GridDomain, signed_distance
from .stencil import Stencils

log = logging.getLogger(__name__)

VERDICTS = ("converged", "dichotomy_breach", "step_failure", "max_steps")


@dataclass(frozen=True)
class Problem:
    """Everything the flow needs besides the potential itself."""

    cost: CostModel
    source: GridDomain
    target: GridDomain
    rho: DensityField
    rho_star: DensityField
    stencils: Stencils | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.source.dim != self.target.dim:
            raise ConfigurationError("source and target dimensions differ")
        if self.stencils is None:
            object.__setattr__(self, "stencils", Stencils(self.source))

    @property
    def hstar(self) -> DefiningFunction:
        return DefiningFunction(self.target.spec)

    def with_cost(self, cost: CostModel) -> "Problem":
        return replace(self, cost=cost)


@dataclass(frozen=True)
class FlowConfig:
    dt_safety: float = 0.9
    residual_tol: float = 1e-8
    max_steps: int = 200_000
    boundary_tol: float = 1e-11
    boundary_max_iter: int = 50
    pd_floor: float = 1e-8
    cadence: int = 100
    max_rejections: int = 10
    max_seconds: float | None = None

    def __post_init__(self):
        if not (0.0 < self.dt_safety <= 1.0):
            raise ConfigurationError("dt safety factor must lie in (0, 1]")
        for name in ("residual_tol", "boundary_tol", "pd_floor"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.max_steps < 0 or self.cadence < 1 or self.boundary_max_iter < 1:
            raise ConfigurationError("step counts must be non-negative and cadence positive")


@dataclass
class PotentialState:
    """A potential plus every pointwise field the flow needs.

    Arrays are indexed by lattice node; entries outside the relevant node set
    (interior for ``hess``/``W``/``udot``, boundary for ``G``/``beta``) are NaN.
    """

    grid: GridDomain
    u: np.ndarray
    t: float
    grad: np.ndarray
    hess: np.ndarray
    T: np.ndarray
    jac: np.ndarray
    A: np.ndarray
    W: np.ndarray
    B: np.ndarray
    udot: np.ndarray
    G: np.ndarray
    beta: np.ndarray
    flagged: np.ndarray
    out_of_range: np.ndarray
    eig: np.ndarray

    @property
    def live(self) -> np.ndarray:
        """Interior nodes whose c-exponential converged."""
        I = self.grid.interior
        return I[~self.flagged[I]]

    @property
    def min_eig(self) -> float:
        return float(np.min(self.eig[self.live]))

    @property
    def positive(self) -> bool:
        return self.min_eig > 0

    @property
    def residual_sup(self) -> float:
        return float(np.max(np.abs(self.udot[self.grid.interior])))

    @property
    def drift(self) -> float:
        """Weighted interior mean of du/dt (the discrete compatibility constant)."""
        I = self.grid.interior
        w = self.grid.weights[I]
        return float(np.dot(w, self.udot[I]) / w.sum())

    @property
    def stationarity(self) -> float:
        I = self.grid.interior
        return float(np.max(np.abs(self.udot[I] - self.drift)))

    @property
    def W_norm(self) -> float:
        return float(np.max(np.abs(self.eig[self.live])))

    @property
    def mass_error(self) -> float:
        I = self.grid.interior
        w = self.grid.weights[I]
        return float(abs(np.dot(w, np.expm1(self.udot[I]))) / w.sum())

    @property
    def boundary_residual(self) -> float:
        Bd = self.grid.boundary
        return float(np.max(np.abs(self.G[Bd]))) if len(Bd) else 0.0

    @property
    def mean_u(self) -> float:
        act = self.grid.active
        w = self.grid.weights[act]
        return float(np.dot(w, self.u[act]) / w.sum())

    def normalized_u(self) -> np.ndarray:
        out = self.u.copy()
        out[self.grid.active] -= self.mean_u
        return out


def assemble_state(u, problem: Problem, t: float = 0.0, guess=None) -> PotentialState:
    grid = problem.source
    S = problem.stencils
    cost = problem.cost
    u = np.asarray(u, dtype=float).copy()
    if u.shape != (grid.size,):
        raise ConfigurationError(f"potential has shape {u.shape}, expected ({grid.size},)")
    act, I, Bd = grid.active, grid.interior, grid.boundary
    if not np.all(np.isfinite(u[act])):
        raise ConfigurationError("potential must be finite at interior and boundary nodes")
    n, size = grid.dim, grid.size
    X = grid.points

    grad = S.gradient(u)
    hess = S.hessian(u)
    g0 = None if guess is None or cost.exact_chart else guess[act]
    r = c_exp(cost, X[act], grad[act], guess=g0, target=problem.hstar, strict=False)
    flagged = np.zeros(size, dtype=bool)
    flagged[act] = ~r.converged
    if flagged.sum() > 0.01 * len(act):
        raise AssemblyError(f"c-exponential failed at {int(flagged.sum())} of {len(act)} nodes")
    oor = np.zeros(size, dtype=bool)
    oor[act] = r.out_of_range

    T = np.full((size, n), np.nan)
    T[act] = r.y
    jac = np.full((size, n, n), np.nan)
    jac[act] = r.jacobian

    A = np.full((size, n, n), np.nan)
    M = -cost.hess_xx(X[I], T[I])
    A[I] = 0.5 * (M + np.swapaxes(M, -1, -2))
    W = np.full((size, n, n), np.nan)
    Wi = hess[I] - A[I]
    W[I] = 0.5 * (Wi + np.swapaxes(Wi, -1, -2))

    B = np.full(size, np.nan)
    rs = problem.rho_star(T[I])
    B[I] = np.abs(np.linalg.det(cost.hess_xy(X[I], T[I]))) * problem.rho.values[I] / rs

    eig = np.full((size, n), np.nan)
    ok_i = ~flagged[I]
    ev = np.full((len(I), n), np.nan)
    ev[ok_i] = np.linalg.eigvalsh(W[I][ok_i])
    eig[I] = ev

    udot = np.full(size, np.nan)
    mins = ev.min(axis=1)
    good = ok_i & (mins > 0)
    vals = np.zeros(len(I))
    vals[good] = np.log(np.prod(ev[good], axis=1)) - np.log(B[I][good])
    vals[~good] = np.nan
    vals[~ok_i] = 0.0
    udot[I] = vals

    G = np.full(size, np.nan)
    beta = np.full((size, n), np.nan)
    if len(Bd):
        Tb, Jb = T[Bd], jac[Bd]
        if S.projected:
            rb = c_exp(cost, grid.boundary_points[Bd], S.boundary_gradient(u, projected=True),
                       target=problem.hstar, strict=False)
            Tb, Jb = rb.y, rb.jacobian
        hs, gh = signed_distance(problem.target.spec, Tb)
        G[Bd] = hs
        beta[Bd] = np.einsum("mji,mj->mi", Jb, gh)
    return PotentialState(grid, u, float(t), grad, hess, T, jac, A, W, B, udot, G, beta, flagged, oor, eig)


def residual(state: PotentialState) -> np.ndarray:
    """du/dt at interior nodes; raises if W is not positive definite somewhere."""
    I = state.grid.interior
    mins = np.where(state.flagged[I], np.inf, np.min(state.eig[I], axis=1))
    bad = np.flatnonzero(~(mins > 0))
    if bad.size:
        node = int(I[bad[0]])
        raise PositivityError(
            f"W not positive definite at node {node} (x={state.grid.points[node].tolist()}, "
            f"min eig {mins[bad[0]]:.3e})",
            node=node,
        )
    return state.udot[I].copy()


def enforce_boundary(u, problem: Problem, tol: float = 1e-11, max_iter: int = 50, guess=None):
    """Scalar Newton on each boundary value so that G(x, grad u) = 0 at the
    projected boundary point x.

    Boundary gradient stencils only touch interior nodes, so grad u there is
    affine in the node's own value, ``g0 + s * u_b``; the tangential part is
    frozen by the interior values.  Returns ``(u_new, iterations)``.
    """
    grid = problem.source
    S = problem.stencils
    Bd = grid.boundary
    u = np.asarray(u, dtype=float).copy()
    if len(Bd) == 0:
        return u, 0
    Xb = grid.boundary_points[Bd]
    nu = grid.normals[Bd]
    g0 = np.einsum("bkj,bj->bk", S.bp_cg, u[S.bn_idx])
    s = S.bp_self
    ub = u[Bd].copy()
    y = None if guess is None or problem.cost.exact_chart else np.asarray(guess)[Bd]
    spec = problem.target.spec

    def evaluate(vals, yg):
        p = g0 + s * vals[:, None]
        try:
            r = c_exp(problem.cost, Xb, p, guess=yg)
        except (SolverError, DegeneracyError) as exc:
            raise BoundaryError(f"c-exponential failed on the boundary: {exc}") from exc
        hs, gh = signed_distance(spec, r.y)
        beta = np.einsum("mji,mj->mi", r.jacobian, gh)
        return hs, beta, r.y

    G, beta, y = evaluate(ub, y)
    for it in range(max_iter + 1):
        if np.max(np.abs(G)) <= tol:
            u[Bd] = ub
            return u, it
        if it == max_iter:
            break
        obl = np.einsum("bi,bi->b", beta, nu)
        if np.any(~(obl > 0)):
            k = int(np.argmin(np.where(np.isfinite(obl), obl, -np.inf)))
            raise ObliquenessError(f"beta.nu = {obl[k]:.3e} <= 0 at boundary node {int(Bd[k])}")
        dG = np.einsum("bi,bi->b", beta, s)
        if np.any(~(dG > 0)):
            raise BoundaryError("boundary Newton derivative is not positive")
        step = -G / dG
        t = np.ones_like(ub)
        for _ in range(30):
            trial = ub + t * step
            G2, beta2, y2 = evaluate(trial, y)
            worse = np.abs(G2) > np.maximum(np.abs(G), tol)
            if not worse.any():
                break
            t = np.where(worse, 0.5 * t, t)
        ub, G, beta, y = trial, G2, beta2, y2
    raise BoundaryError(f"boundary Newton did not converge (max |G| = {np.max(np.abs(G)):.3e})")


def stable_dt(state: PotentialState, config: FlowConfig) -> float:
    """``kappa / (2 max_x sum_k (W^-1)_kk / h_k^2)``; for equal spacings this is
    ``kappa h^2 / (2 max tr W^-1)``."""
    I = state.grid.interior
    Wi = state.W[I][~state.flagged[I]]
    inv = np.linalg.inv(Wi)
    diag = np.diagonal(inv, axis1=-2, axis2=-1)
    rate = np.max(np.sum(diag / np.asarray(state.grid.spacing) ** 2, axis=-1))
    return config.dt_safety / (2.0 * rate)


@dataclass
class StepInfo:
    dt: float
    rejections: int
    boundary_iterations: int


_RECOVERABLE = (PositivityError, BoundaryError, AssemblyError, SolverError, DegeneracyError, ObliquenessError)


def step(state: PotentialState, config: FlowConfig, problem: Problem, info: list | None = None) -> PotentialState:
    residual(state)
    I = state.grid.interior
    dt = stable_dt(state, config)
    last = None
    for rej in range(config.max_rejections + 1):
        u = state.u.copy()
        u[I] += dt * state.udot[I]
        try:
            u, nb = enforce_boundary(u, problem, config.boundary_tol, config.boundary_max_iter, guess=state.T)
            new = assemble_state(u, problem, state.t + dt, guess=state.T)
            if not new.min_eig >= config.pd_floor:
                raise PositivityError(f"min eig W = {new.min_eig:.3e} below floor", node=None)
        except _RECOVERABLE as exc:
            last = exc
            dt *= 0.5
            continue
        if info is not None:
            info.append(StepInfo(dt, rej, nb))
        return new
    raise StepFailure(f"{config.max_rejections} consecutive step rejections at t={state.t:.6g}: {last}")


@dataclass
class FlowReport:
    verdict: str
    steps: int
    rows: list
    final: PotentialState
    omega: float
    rejections: int
    seconds: float = field(default=0.0, compare=False)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    def summary(self) -> dict:
        f = self.final
        return {
            "verdict": self.verdict,
            "steps": self.steps,
            "t": f.t,
            "residual": f.residual_sup,
            "stationarity": f.stationarity,
            "drift": f.drift,
            "omega": self.omega,
            "mass_err": f.mass_error,
            "min_eig": f.min_eig,
            "boundary_residual": f.boundary_residual,
            "mean_u": f.mean_u,
            "rejections": self.rejections,
            "message": self.message,
        }


def _row(state: PotentialState, omega: float, step_no: int) -> dict:
    return {
        "step": step_no,
        "t": state.t,
        "residual": state.residual_sup,
        "omega": omega,
        "mass_err": state.mass_error,
        "min_eig": state.min_eig,
        "mean_u": state.mean_u,
    }


def run_flow(initial: PotentialState, config: FlowConfig, problem: Problem, monitor=None) -> FlowReport:
    """Advance until stationary, breached, failed, or out of steps.

    Stationarity means ``max |du/dt - mean(du/dt)| < residual_tol``: the
    discrete second boundary problem fixes du/dt only up to a constant of
    size O(h^2), which is reported as ``drift``.

    ``monitor`` is an optional callable ``omega -> status`` returning
    ``"pass"``, ``"warn"`` or ``"breach"``.
    """
    residual(initial)
    state = initial
    omega = state.W_norm
    rows = [_row(state, omega, 0)]
    infos: list = []
    steps = 0
    verdict = None
    message = ""
    t0 = time.perf_counter()
    warned = False
    while True:
        if state.stationarity < config.residual_tol:
            verdict = "converged"
            break
        if monitor is not None:
            status = monitor(omega)
            if status == "breach":
                verdict = "dichotomy_breach"
                message = f"omega={omega:.6g} crossed the blow-up threshold"
                break
            if status == "warn" and not warned:
                log.warning("omega=%.6g above the safe threshold", omega)
                warned = True
        if steps >= config.max_steps:
            verdict = "max_steps"
            break
        if config.max_seconds is not None and time.perf_counter() - t0 > config.max_seconds:
            verdict = "max_steps"
            message = "wall-clock budget exhausted"
            break
        try:
            state = step(state, config, problem, infos)
        except StepFailure as exc:
            verdict = "step_failure"
            message = str(exc)
            break
        steps += 1
        omega = max(omega, state.W_norm)
        if steps % config.cadence == 0:
            rows.append(_row(state, omega, steps))
            log.debug("step %d t=%.5g res=%.3e osc=%.3e", steps, state.t, state.residual_sup, state.stationarity)
    if rows[-1]["step"] != steps:
        rows.append(_row(state, omega, steps))
    rej = sum(i.rejections for i in infos)
    log.info("flow %s after %d steps (osc %.3e, drift %.3e)", verdict, steps, state.stationarity, state.drift)
    return FlowReport(verdict, steps, rows, state, omega, rej, time.perf_counter() - t0, message)


# ---------------------------------------------------------------------------
# transport map and dual potential


@dataclass
class TransportMap:
    T: np.ndarray
    nodes: np.ndarray
    injective: bool
    collisions: list
    eps_inj: float
    containment: float
    contained: bool
    monotone: bool | None

    @property
    def passed(self) -> bool:
        return self.injective and self.contained and self.monotone is not False


def transport_map(state: PotentialState, problem: Problem, eps_inj: float | None = None) -> TransportMap:
    grid = state.grid
    act = grid.active
    Ta = state.T[act]
    ht = float(np.max(problem.target.spacing))
    eps = 0.1 * float(np.min(problem.target.spacing)) if eps_inj is None else float(eps_inj)
    multi = np.stack(np.unravel_index(act, grid.shape), axis=-1)
    pairs = cKDTree(Ta).query_pairs(eps, output_type="ndarray")
    collisions = []
    if len(pairs):
        cheb = np.max(np.abs(multi[pairs[:, 0]] - multi[pairs[:, 1]]), axis=1)
        for i, j in pairs[cheb > 1]:
            collisions.append((int(act[i]), int(act[j])))
    hs, _ = signed_distance(problem.target.spec, Ta)
    cont = float(np.max(hs))
    mono = None
    if grid.dim == 1:
        mono = bool(np.all(np.diff(Ta[:, 0]) > 0))
    return TransportMap(state.T.copy(), act.copy(), not collisions, collisions, eps, cont, cont <= 2 * ht, mono)


class DualPotential:
    """``u*(y) = -c(x, y) - u(x)`` with ``x = T^{-1}(y)``.

    The preimage is located through the nearest node image (lowest index on
    ties) and refined by Newton on the local quadratic model of u at that
    node, so u* stays smooth across each anchor's cell.
    """

    def __init__(self, state: PotentialState, problem: Problem, tol: float = 1e-13, max_iter: int = 30):
        self.state = state
        self.problem = problem
        self.tol = tol
        self.max_iter = max_iter
        act = state.grid.active
        self.nodes = act
        self.tree = cKDTree(state.T[act])
        self.x0 = state.grid.points[act]
        self.u0 = state.u[act]
        self.g0 = state.grad[act]
        self.H0 = state.hess[act]

    def anchors(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        d, _ = self.tree.query(Y, k=1)
        # lowest index among exact ties
        cand = self.tree.query_ball_point(Y, d * (1 + 1e-12) + 1e-300)
        return np.array([min(c) for c in cand], dtype=int)

    def evaluate(self, Y, anchor=None):
        """Return ``(u*, x, converged)``; ``anchor`` pins the local model (positions into the active list)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        a = self.anchors(Y) if anchor is None else np.broadcast_to(np.asarray(anchor, dtype=int), (len(Y),))
        cost = self.problem.cost
        xi, gi, Hi = self.x0[a], self.g0[a], self.H0[a]
        x = xi.copy()

        def F(x):
            return -cost.grad_x(x, Y) - gi - np.einsum("mij,mj->mi", Hi, x - xi)

        f = F(x)
        scale = np.maximum(1.0, np.linalg.norm(gi, axis=-1))
        for _ in range(self.max_iter):
            res = np.linalg.norm(f, axis=-1)
            if np.all(res <= self.tol * scale):
                break
            J = -cost.hess_xx(x, Y) - Hi
            dx = -np.linalg.solve(J, f[..., None])[..., 0]
            t = np.ones(len(x))
            for _h in range(20):
                xt = x + t[:, None] * dx
                ft = F(xt)
                worse = np.linalg.norm(ft, axis=-1) > np.maximum(res, self.tol * scale)
                if not worse.any():
                    break
                t = np.where(worse, 0.5 * t, t)
            x, f = xt, ft
        conv = np.linalg.norm(f, axis=-1) <= self.tol * scale * 10
        d = x - xi
        umod = self.u0[a] + np.einsum("mi,mi->m", gi, d) + 0.5 * np.einsum("mi,mij,mj->m", d, Hi, d)
        return -cost.value(x, Y) - umod, x, conv

    def __call__(self, Y):
        return self.evaluate(Y)[0]

    def on_target(self, reach: float = 2.0):
        """u* at target active nodes; unreachable nodes (preimage farther than
        ``reach`` source spacings outside the source, or no convergence) are NaN."""
        tgt = self.problem.target
        Y = tgt.points[tgt.active]
        vals, x, conv = self.evaluate(Y)
        hs, _ = signed_distance(self.state.grid.spec, x)
        ok = conv & (hs <= reach * float(np.max(self.state.grid.spacing)))
        out = np.full(tgt.size, np.nan)
        out[tgt.active[ok]] = vals[ok]
        return out, ok


def dual_potential(state: PotentialState, problem: Problem, coverage_tol: float = 0.05,
                   audit: TransportMap | None = None) -> tuple[DualPotential, np.ndarray]:
    """Build u* and evaluate it on the target lattice.

    Raises CoverageError when the transport map fails its injectivity audit or
    more than ``coverage_tol`` of target nodes have no admissible preimage.
    """
    audit = transport_map(state, problem) if audit is None else audit
    if not audit.injective:
        raise CoverageError(f"transport map not injective ({len(audit.collisions)} collisions)")
    dual = DualPotential(state, problem)
    vals, ok = dual.on_target()
    miss = 1.0 - ok.mean()
    if miss > coverage_tol:
        raise CoverageError(f"{miss:.1%} of target nodes unreachable (tolerance {coverage_tol:.1%})")
    return dual, vals


def duality_gap(state: PotentialState, problem: Problem, dual: DualPotential) -> float:
    """max |u(x) + u*(T x) + c(x, T x)| over source active nodes."""
    act = state.grid.active
    X, T = state.grid.points[act], state.T[act]
    return float(np.max(np.abs(state.u[act] + dual(T) + problem.cost.value(X, T))))


def dual_gradient_check(problem: Problem, dual: DualPotential, delta: float = 1e-5, Y=None) -> float:
    """Central-difference check of grad u*(y) = -grad_y c(T^{-1} y, y)."""
    tgt = problem.target
    if Y is None:
        Y = tgt.points[tgt.interior]
    Y = np.atleast_2d(Y)
    a = dual.anchors(Y)
    _, x, _ = dual.evaluate(Y, anchor=a)
    exact = -problem.cost.grad_y(x, Y)
    fd = np.empty_like(Y)
    for k in range(Y.shape[1]):
        e = np.zeros(Y.shape[1])
        e[k] = delta
        fd[:, k] = (dual.evaluate(Y + e, anchor=a)[0] - dual.evaluate(Y - e, anchor=a)[0]) / (2 * delta)
    return float(np.max(np.abs(fd - exact)))


def dual_residual(problem: Problem, ustar: np.ndarray) -> np.ndarray:
    """Residual of the dual flow equation at target interior nodes.

    ``W* = D2u* + D_yy c(x, y)`` with ``x = exp*_y(grad u*)`` and
    ``B* = |det D_xy c| rho*(y) / rho(x)``.
    """
    tgt = problem.target
    S = Stencils(tgt)
    I = tgt.interior
    g = S.gradient(ustar)[I]
    H = S.hessian(ustar)[I]
    Y = tgt.points[I]
    r = c_exp_star(problem.cost, Y, g)
    X = r.y
    Ws = H + problem.cost.hess_yy(X, Y)
    Ws = 0.5 * (Ws + np.swapaxes(Ws, -1, -2))
    sign, logdet = np.linalg.slogdet(Ws)
    Bs = np.abs(np.linalg.det(problem.cost.hess_xy(X, Y))) * problem.rho_star.values[I] / problem.rho(X)
    out = logdet - np.log(Bs)
    out[sign <= 0] = np.nan
    return out


# ---------------------------------------------------------------------------
# emitters


def write_rows_csv(report: FlowReport, path) -> None:
    cols = ["t", "residual", "omega", "mass_err", "min_eig", "mean_u"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in report.rows:
            w.writerow([repr(float(r[c])) for c in cols])


def write_potential_csv(state: PotentialState, path, normalize: bool = True) -> None:
    grid = state.grid
    n = grid.dim
    u = state.normalized_u() if normalize else state.u
    names = [f"x{k}" for k in range(n)] + ["u"] + [f"du{k}" for k in range(n)] + ["G"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in grid.active:
            g = state.G[i]
            row = list(grid.points[i]) + [u[i]] + list(state.grad[i]) + [0.0 if math.isnan(g) else g]
            w.writerow([repr(float(v)) for v in row])


def read_potential_csv(path, grid: GridDomain, tol: float = 1e-9) -> np.ndarray:
    """Load a potential written by ``write_potential_csv`` onto ``grid``.

    Rows must cover the active nodes of ``grid`` exactly; anything else is
    a configuration error.
    """
    n = grid.dim
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read potential {path}: {exc}") from exc
    if not rows or rows[0][: n + 1] != [f"x{k}" for k in range(n)] + ["u"]:
        raise ConfigurationError(f"{path}: header does not match a {n}D potential")
    try:
        data = np.array([[float(v) for v in r[: n + 1]] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    act = grid.active
    if data.shape != (len(act), n + 1) or not np.allclose(data[:, :n], grid.points[act], atol=tol, rtol=0):
        raise ConfigurationError(f"{path}: node coordinates do not match the configured grid")
    u = np.full(grid.size, np.nan)
    u[act] = data[:, n]
    return u


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
