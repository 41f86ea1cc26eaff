"""Structural diagnostics: MTW tensor, dichotomy thresholds, the scalar
polynomial behind the a-priori bound, and the linearized operator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .cost import CostModel, c_exp
from .errors import DimensionError, RangeError, SamplingError
from .geometry import DefiningFunction, GridDomain, signed_distance

ORTHO_TOL = 1e-12


# ---------------------------------------------------------------------------
# MTW tensor


def _unit(v):
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(nv == 0):
        raise ValueError("direction vectors must be non-zero")
    return v / nv, nv[..., 0]


def _A_along(cost, x, p, V, eta, shifts, target=None):
    """eta^T A(x, p + t V) eta for each shift t; rows of x, p, V, eta are batched."""
    m, n = x.shape
    k = len(shifts)
    P = (p[None] + np.asarray(shifts)[:, None, None] * V[None]).reshape(-1, n)
    X = np.broadcast_to(x[None], (k, m, n)).reshape(-1, n)
    r = c_exp(cost, X, P, tol=1e-14, strict=False)
    bad = ~r.converged
    if target is not None:
        hs, _ = signed_distance(target.spec, r.y)
        bad |= hs > target.spec.r0 + 1e-12
    if bad.any():
        raise RangeError("finite-difference stencil leaves the admissible p-range")
    M = -cost.hess_xx(X, r.y)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    E = np.broadcast_to(eta[None], (k, m, n)).reshape(-1, n)
    return np.einsum("mi,mij,mj->m", E, M, E).reshape(k, m)


def _mtw_batch(cost, x, p, V, eta, delta, target=None):
    f = _A_along(cost, x, p, V, eta, [-delta, -0.5 * delta, 0.0, 0.5 * delta, delta], target)
    d1 = (f[4] - 2 * f[2] + f[0]) / delta**2
    d2 = (f[3] - 2 * f[2] + f[1]) / (0.5 * delta) ** 2
    return (4 * d2 - d1) / 3


def mtw_tensor(cost: CostModel, x, p, V, eta, delta: float = 1e-3, target: DefiningFunction | None = None) -> float:
    """``D^2_{p_i p_j} A_{kl}(x, p) V^i V^j eta^k eta^l``.

    V pairs with the p-derivatives and eta with the matrix indices.  Computed
    as a Richardson-extrapolated second difference of ``eta^T A eta`` along V,
    using unit directions internally and rescaling by ``|V|^2 |eta|^2``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[-1]
    if n < 2:
        raise DimensionError("the MTW tensor needs n >= 2")
    p = np.atleast_2d(np.asarray(p, dtype=float))
    Vu, nv = _unit(np.atleast_2d(V))
    Eu, ne = _unit(np.atleast_2d(eta))
    val = _mtw_batch(cost, x, p, Vu, Eu, delta, target)
    return float(val[0] * nv[0] ** 2 * ne[0] ** 2)


@dataclass
class MTWEstimate:
    sigma: float
    min_value: float
    witness: dict
    samples: int
    delta: float


def _direction_pairs(n, count, rng):
    if n == 2:
        th = np.pi * np.arange(count) / count
        V = np.stack([np.cos(th), np.sin(th)], axis=1)
        E = np.stack([-np.sin(th), np.cos(th)], axis=1)
        return V, E, th
    V, E = [], []
    for _ in range(count):
        q, _ = np.linalg.qr(rng.standard_normal((n, 2)))
        V.append(q[:, 0])
        E.append(q[:, 1])
    return np.array(V), np.array(E), None


def _subsample(a, cap):
    if len(a) <= cap:
        return a
    return a[np.unique(np.linspace(0, len(a) - 1, cap).round().astype(int))]


def estimate_sigma_mtw(cost: CostModel, source_grid: GridDomain, target_grid: GridDomain,
                       directions: int = 16, max_x: int = 16, max_y: int = 16,
                       refine: int = 16, seed: int = 0) -> MTWEstimate:
    """Sampled lower-bound estimate ``sigma = max(0, -min tensor)``.

    x runs over source nodes, p over ``-grad_x c(x, y)`` for target nodes y,
    and (V, eta) over orthonormal pairs (an angular sweep in 2D), followed by
    a finer sweep around the minimizing angle.
    """
    n = source_grid.dim
    if n < 2:
        raise DimensionError("the MTW tensor needs n >= 2")
    xs = source_grid.points[_subsample(source_grid.active, max_x)]
    ys = target_grid.points[_subsample(target_grid.interior, max_y)]
    if len(xs) == 0 or len(ys) == 0:
        raise SamplingError("no admissible (x, p) samples")
    rng = np.random.default_rng(seed)
    V, E, th = _direction_pairs(n, directions, rng)
    if np.max(np.abs(np.einsum("ki,ki->k", V, E))) > ORTHO_TOL:
        raise AssertionError("non-orthogonal direction pair")
    X = np.repeat(xs, len(ys), axis=0)
    Y = np.tile(ys, (len(xs), 1))
    P = -cost.grad_x(X, Y)
    diam = float(np.max(np.ptp(P, axis=0))) if len(P) > 1 else 1.0
    delta = 1e-3 * max(diam, 1e-3)
    target = DefiningFunction(target_grid.spec)

    nd = len(V)
    Xb = np.repeat(X, nd, axis=0)
    Pb = np.repeat(P, nd, axis=0)
    Vb = np.tile(V, (len(X), 1))
    Eb = np.tile(E, (len(X), 1))
    vals = _mtw_batch(cost, Xb, Pb, Vb, Eb, delta, target)
    samples = len(vals)
    k = int(np.argmin(vals))
    best = (float(vals[k]), Xb[k], Pb[k], Vb[k], Eb[k])
    if refine and th is not None:
        t0 = th[k % nd]
        tt = t0 + (np.arange(-refine, refine + 1) / refine) * (np.pi / nd)
        Vr = np.stack([np.cos(tt), np.sin(tt)], axis=1)
        Er = np.stack([-np.sin(tt), np.cos(tt)], axis=1)
        m = len(tt)
        vr = _mtw_batch(cost, np.repeat(Xb[k][None], m, 0), np.repeat(Pb[k][None], m, 0), Vr, Er, delta, target)
        samples += m
        j = int(np.argmin(vr))
        if vr[j] < best[0]:
            best = (float(vr[j]), Xb[k], Pb[k], Vr[j], Er[j])
    mv, x, p, v, e = best
    witness = {"x": x.tolist(), "p": p.tolist(), "V": v.tolist(), "eta": e.tolist()}
    return MTWEstimate(max(0.0, -mv), mv, witness, samples, delta)


# ---------------------------------------------------------------------------
# dichotomy


@dataclass(frozen=True)
class DichotomyThresholds:
    n: int
    sigma: float
    safe_bound: float
    blowup_bound: float


def _base(n, sigma):
    if n < 2:
        raise DimensionError("dichotomy thresholds need n >= 2 (exponent 1/(n-1))")
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError("sigma must be finite and non-negative")
    if sigma == 0:
        return math.inf
    return (1.0 / (n * sigma)) ** (1.0 / (n - 1))


def dichotomy_thresholds(n: int, sigma: float) -> DichotomyThresholds:
    b = _base(n, sigma)
    blow = b / n
    return DichotomyThresholds(n, float(sigma), blow / 2, blow)


def classify_omega(omega: float, th: DichotomyThresholds) -> str:
    if omega <= th.safe_bound:
        return "pass"
    if omega >= th.blowup_bound:
        return "breach"
    return "warn"


def monitor_dichotomy(state, thresholds: DichotomyThresholds, omega: float = 0.0) -> tuple[float, str]:
    """Update the running max of the operator norm of W and classify it."""
    w = max(omega, state.W_norm)
    if not math.isfinite(thresholds.safe_bound):
        return w, "pass"
    return w, classify_omega(w, thresholds)


def make_monitor(thresholds: DichotomyThresholds | None):
    """Callable ``omega -> status`` for run_flow; None disables monitoring."""
    if thresholds is None or not math.isfinite(thresholds.safe_bound):
        return None
    return lambda omega: classify_omega(omega, thresholds)


@dataclass(frozen=True)
class OmegaPredicate:
    value: float
    bound: float | None
    holds: bool | None


def initial_omega_predicate(state, sigma: float) -> OmegaPredicate:
    """max ||W|| <= (1/(4n)) (1/(n sigma))^(1/(n-1)) for the initial data; n/a in 1D."""
    n = state.grid.dim
    value = state.W_norm
    if n < 2:
        return OmegaPredicate(value, None, None)
    bound = _base(n, sigma) / (4 * n)
    return OmegaPredicate(value, bound, value <= bound)


# ---------------------------------------------------------------------------
# polynomial


@dataclass
class PolyAnalysis:
    n: int
    sigma: float
    C: float
    s_hat: float
    p_hat: float
    s1: float | None
    s2: float | None
    flag: bool
    certificates: dict
    bounds: dict | None

    @property
    def has_roots(self) -> bool:
        return self.s1 is not None


def poly_value(n, sigma, C, s):
    return s - sigma * s**n - C


def analyze_polynomial(n: int, sigma: float, C: float) -> PolyAnalysis:
    """Roots of ``s - sigma s^n - C`` on either side of its critical point."""
    if n < 2:
        raise DimensionError("need n >= 2")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if C < 0:
        raise ValueError("C must be non-negative")
    s_hat = (1.0 / (n * sigma)) ** (1.0 / (n - 1))
    upper = (1.0 / sigma) ** (1.0 / (n - 1))
    p_hat = s_hat * (n - 1) / n - C
    flag = 1.0 / (n * sigma) >= (2.0 * n * n * C / (n - 1)) ** (n - 1)
    f = lambda s: poly_value(n, sigma, C, s)  # noqa: E731
    certs = {"p0": -float(C), "p_hat": p_hat, "p_upper": float(f(upper)), "upper": upper}
    s1 = s2 = None
    if p_hat > 0:
        if C == 0:
            s1, s2 = 0.0, upper
        else:
            s1 = brentq(f, 0.0, s_hat, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            s2 = brentq(f, s_hat, upper, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    bounds = None
    if flag and s1 is not None:
        b1 = n * C / (n - 1)
        bounds = {
            "s1_below": s1 < b1 or (C == 0 and s1 == 0.0),
            "s2_above": s2 >= s_hat,
            "p_hat_margin": p_hat >= (2 * n - 1) * C,
        }
    return PolyAnalysis(n, float(sigma), float(C), s_hat, p_hat, s1, s2, bool(flag), certs, bounds)


# ---------------------------------------------------------------------------
# linearization


@dataclass
class Linearization:
    nodes: np.ndarray
    w: np.ndarray          # W^{-1}, (m, n, n)
    DpA: np.ndarray        # d A_ij / d p_k, (m, k, i, j)
    drift: np.ndarray      # w^{ij} D_{p_k} A_ij, (m, k)
    DplogB: np.ndarray     # (m, k)


def linearized_coeffs(state, problem, delta: float = 1e-6) -> Linearization:
    from .flow import residual

    residual(state)
    cost = problem.cost
    I = state.live
    X, Pg = state.grid.points[I], state.grad[I]
    m, n = X.shape
    w = np.linalg.inv(state.W[I])
    scale = delta * max(1.0, float(np.max(np.abs(Pg))))

    def AB(P):
        r = c_exp(cost, X, P, tol=1e-14)
        M = -cost.hess_xx(X, r.y)
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
        B = np.abs(np.linalg.det(cost.hess_xy(X, r.y))) * problem.rho.values[I] / problem.rho_star(r.y)
        return M, np.log(B)

    DpA = np.empty((m, n, n, n))
    DlB = np.empty((m, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = scale
        Ap, Bp = AB(Pg + e)
        Am, Bm = AB(Pg - e)
        DpA[:, k] = (Ap - Am) / (2 * scale)
        DlB[:, k] = (Bp - Bm) / (2 * scale)
    drift = np.einsum("mij,mkij->mk", w, DpA)
    return Linearization(I, w, DpA, drift, DlB)


def apply_linearized(lin: Linearization, state, theta) -> np.ndarray:
    """``w^{ij}(theta_ij - D_{p_k}A_ij theta_k) - D_{p_k} log B theta_k`` at live interior nodes."""
    from .stencil import Stencils

    S = Stencils(state.grid)
    g = S.gradient(theta)[lin.nodes]
    H = S.hessian(theta)[lin.nodes]
    return (np.einsum("mij,mij->m", lin.w, H) - np.einsum("mk,mk->m", lin.drift, g)
            - np.einsum("mk,mk->m", lin.DplogB, g))


def operator_norm(W) -> np.ndarray:
    """Largest eigenvalue magnitude of symmetric 1x1 / 2x2 (or general) matrices."""
    W = np.asarray(W, dtype=float)
    n = W.shape[-1]
    if n == 1:
        return np.abs(W[..., 0, 0])
    if n == 2:
        a, b, d = W[..., 0, 0], W[..., 0, 1], W[..., 1, 1]
        mid = 0.5 * (a + d)
        rad = np.hypot(0.5 * (a - d), b)
        return np.maximum(np.abs(mid + rad), np.abs(mid - rad))
    return np.max(np.abs(np.linalg.eigvalsh(W)), axis=-1)


__all__ = [
    "MTWEstimate", "mtw_tensor", "estimate_sigma_mtw", "DichotomyThresholds", "dichotomy_thresholds",
    "classify_omega", "monitor_dichotomy", "make_monitor", "OmegaPredicate", "initial_omega_predicate",
    "PolyAnalysis", "analyze_polynomial", "poly_value", "Linearization", "linearized_coeffs",
    "apply_linearized", "operator_norm",
]
