"""Ground-truth transport solvers used to audit converged flows."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cost import CostModel
from .errors import ConfigurationError, OracleInapplicableError, SizeError
from .geometry import DensityField, GridDomain


# ---------------------------------------------------------------------------
# 1D monotone rearrangement


def _cdf(grid: GridDomain, values):
    """Node CDF of the piecewise-linear density (trapezoid sums), normalized to 1."""
    x = grid.points[:, 0]
    seg = 0.5 * (values[1:] + values[:-1]) * np.diff(x)
    F = np.concatenate([[0.0], np.cumsum(seg)])
    return x, F / F[-1], values / F[-1]


def submodular(cost: CostModel, source: GridDomain, target: GridDomain, cap: int = 64) -> bool:
    def sub(a):
        return a if len(a) <= cap else a[np.linspace(0, len(a) - 1, cap).round().astype(int)]

    X = source.points[sub(source.active)]
    Y = target.points[sub(target.active)]
    Xr = np.repeat(X, len(Y), axis=0)
    Yr = np.tile(Y, (len(X), 1))
    return bool(np.all(cost.hess_xy(Xr, Yr)[:, 0, 0] < 0))


def monotone_rearrangement_1d(rho: DensityField, rho_star: DensityField, cost: CostModel | None = None) -> np.ndarray:
    """``T = F*^{-1} o F`` at the source nodes.

    Both densities are taken piecewise linear between nodes, so the CDFs are
    piecewise quadratic and the inverse is solved exactly per cell.
    """
    src, tgt = rho.grid, rho_star.grid
    if src.dim != 1 or tgt.dim != 1:
        raise OracleInapplicableError("monotone rearrangement is one-dimensional")
    if cost is not None and not submodular(cost, src, tgt):
        raise OracleInapplicableError("cost is not submodular (D_xy c >= 0 somewhere)")
    if len(src.active) != src.size or len(tgt.active) != tgt.size:
        raise ConfigurationError("1D grids are expected to have no exterior nodes")
    _, F, _ = _cdf(src, rho.values)
    y, Fs, dens = _cdf(tgt, rho_star.values)
    j = np.clip(np.searchsorted(Fs, F, side="right") - 1, 0, len(y) - 2)
    h = y[j + 1] - y[j]
    a = dens[j]
    b = (dens[j + 1] - dens[j]) / h
    r = np.maximum(F - Fs[j], 0.0)
    # a t + b t^2 / 2 = r, in the cancellation-free form
    t = 2.0 * r / (a + np.sqrt(np.maximum(a * a + 2.0 * b * r, 0.0)))
    T = y[j] + np.minimum(t, h)
    T[F >= 1.0] = y[-1]
    T[F <= 0.0] = y[0]
    return T


# ---------------------------------------------------------------------------
# discrete Kantorovich via the transportation simplex


@dataclass
class CouplingPlan:
    plan: sp.csr_matrix
    source_mass: np.ndarray
    target_mass: np.ndarray
    cost: float
    u: np.ndarray
    v: np.ndarray
    pivots: int

    def marginal_error(self) -> float:
        r = np.asarray(self.plan.sum(axis=1)).ravel() - self.source_mass
        c = np.asarray(self.plan.sum(axis=0)).ravel() - self.target_mass
        return float(max(np.max(np.abs(r)), np.max(np.abs(c))))

    def support(self) -> np.ndarray:
        coo = self.plan.tocoo()
        keep = coo.data > 0
        return np.stack([coo.row[keep], coo.col[keep]], axis=1)


def _northwest(a, b):
    m, n = len(a), len(b)
    ra, rb = a.copy(), b.copy()
    x = np.zeros((m, n))
    basis = []
    i = j = 0
    while i < m and j < n:
        q = min(ra[i], rb[j])
        x[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= 0.0:
            i += 1
        else:
            j += 1
    return x, basis


def _potentials(C, basis, m, n):
    adj_r = [[] for _ in range(m)]
    adj_c = [[] for _ in range(n)]
    for i, j in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    dq = deque([("r", 0)])
    while dq:
        kind, k = dq.popleft()
        if kind == "r":
            for j in adj_r[k]:
                if math.isnan(v[j]):
                    v[j] = C[k, j] - u[k]
                    dq.append(("c", j))
        else:
            for i in adj_c[k]:
                if math.isnan(u[i]):
                    u[i] = C[i, k] - v[k]
                    dq.append(("r", i))
    return u, v, adj_r, adj_c


def _tree_path(adj_r, adj_c, p, q):
    """Cells on the tree path from row p to column q."""
    prev = {("r", p): None}
    dq = deque([("r", p)])
    while dq:
        node = dq.popleft()
        if node == ("c", q):
            break
        kind, k = node
        nbrs = [("c", j) for j in adj_r[k]] if kind == "r" else [("r", i) for i in adj_c[k]]
        for nb in nbrs:
            if nb not in prev:
                prev[nb] = node
                dq.append(nb)
    cells = []
    node = ("c", q)
    while prev[node] is not None:
        par = prev[node]
        cells.append((par[1], node[1]) if par[0] == "r" else (node[1], par[1]))
        node = par
    return cells[::-1]


def transportation_simplex(C, a, b, max_pivots: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    x, basis = _northwest(np.asarray(a, float), np.asarray(b, float))
    basis_set = set(basis)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(C))))
    max_pivots = max_pivots or 50 * (m + n) * max(m, n)
    degenerate_run = 0
    for pivots in range(max_pivots):
        u, v, adj_r, adj_c = _potentials(C, basis, m, n)
        red = C - u[:, None] - v[None, :]
        for i, j in basis:
            red[i, j] = 0.0
        if red.min() >= -tol:
            return x, u, v, pivots
        if degenerate_run > m + n:
            # Bland's rule: first improving cell in index order
            flat = int(np.flatnonzero(red.ravel() < -tol)[0])
        else:
            flat = int(np.argmin(red))
        p, q = divmod(flat, n)
        path = _tree_path(adj_r, adj_c, p, q)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leave = min((c for c in minus if x[c] == theta))
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[p, q] += theta
        x[leave] = 0.0
        basis_set.discard(leave)
        basis_set.add((p, q))
        basis = sorted(basis_set)
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
    raise RuntimeError("transportation simplex exceeded its pivot budget")


def discrete_kantorovich(mu, nu, X, Y, cost: CostModel, cap: int = 64) -> CouplingPlan:
    """Exact optimal coupling between node masses ``mu`` at X and ``nu`` at Y."""
    mu = np.asarray(mu, dtype=float).ravel()
    nu = np.asarray(nu, dtype=float).ravel()
    X = np.asarray(X, dtype=float).reshape(len(mu), -1)
    Y = np.asarray(Y, dtype=float).reshape(len(nu), -1)
    if len(mu) > cap or len(nu) > cap:
        raise SizeError(f"discrete Kantorovich is capped at {cap}x{cap} nodes (got {len(mu)}x{len(nu)})")
    if np.any(mu < 0) or np.any(nu < 0) or mu.sum() <= 0:
        raise ConfigurationError("masses must be non-negative with positive total")
    if abs(mu.sum() - nu.sum()) > 1e-12 * mu.sum():
        raise ConfigurationError("source and target masses differ")
    C = cost.value(np.repeat(X, len(Y), axis=0), np.tile(Y, (len(X), 1))).reshape(len(X), len(Y))
    x, u, v, piv = transportation_simplex(C, mu, nu)
    plan = sp.csr_matrix(np.where(x > 0, x, 0.0))
    return CouplingPlan(plan, mu, nu, float(np.sum(x * C)), u, v, piv)


def kantorovich_from_densities(rho: DensityField, rho_star: DensityField, cost: CostModel, cap: int = 64) -> CouplingPlan:
    s, t = rho.grid, rho_star.grid
    mu = s.weights[s.active] * rho.values[s.active]
    nu = t.weights[t.active] * rho_star.values[t.active]
    nu = nu * (mu.sum() / nu.sum())
    return discrete_kantorovich(mu, nu, s.points[s.active], t.points[t.active], cost, cap)


def two_swap_violations(plan: CouplingPlan, X, Y, cost: CostModel, tol: float = 1e-10) -> list:
    """Support pairs (i,j), (k,l) with c_ij + c_kl > c_il + c_kj + tol."""
    S = plan.support()
    if len(S) < 2:
        return []
    Xs, Ys = np.asarray(X)[S[:, 0]], np.asarray(Y)[S[:, 1]]
    a, b = np.triu_indices(len(S), k=1)
    cur = cost.value(Xs[a], Ys[a]) + cost.value(Xs[b], Ys[b])
    swp = cost.value(Xs[a], Ys[b]) + cost.value(Xs[b], Ys[a])
    bad = np.flatnonzero(cur > swp + tol * max(1.0, float(np.max(np.abs(cur)))))
    return [(tuple(S[a[k]]), tuple(S[b[k]])) for k in bad]


# ---------------------------------------------------------------------------
# comparison


@dataclass
class OracleComparison:
    map_deviation: float | None
    flow_cost: float
    oracle_cost: float | None
    cost_gap: float | None
    duality_min: float | None
    support_max: float | None
    tolerances: dict
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def transport_cost(T, rho: DensityField, cost: CostModel) -> float:
    g = rho.grid
    act = g.active
    X = g.points[act]
    return float(np.sum(g.weights[act] * rho.values[act] * cost.value(X, np.asarray(T).reshape(len(act), -1))))


def compare_to_oracle(T_flow, rho: DensityField, rho_star: DensityField, cost: CostModel,
                      T_oracle=None, plan: CouplingPlan | None = None, u=None, ustar=None,
                      map_tol: float | None = None, gap_tol: float | None = None,
                      dual_tol: float | None = None) -> OracleComparison:
    """Map deviation, relative cost gap and a c-duality audit.

    ``T_flow`` is given at source active nodes; ``u`` at source active nodes
    and ``ustar`` at target active nodes.
    """
    s, t = rho.grid, rho_star.grid
    h = float(max(np.max(s.spacing), np.max(t.spacing)))
    map_tol = 2 * h if map_tol is None else map_tol
    gap_tol = 5 * h if gap_tol is None else gap_tol
    T_flow = np.asarray(T_flow, dtype=float).reshape(len(s.active), -1)
    dev = None
    if T_oracle is not None:
        dev = float(np.max(np.abs(T_flow - np.asarray(T_oracle).reshape(T_flow.shape))))
    fc = transport_cost(T_flow, rho, cost)
    oc = gap = None
    if plan is not None:
        oc = plan.cost
        gap = abs(fc - oc) / max(abs(oc), 1e-300)
    dmin = smax = None
    if u is not None and ustar is not None:
        X, Y = s.points[s.active], t.points[t.active]
        ok = np.isfinite(ustar)
        Yk, us = Y[ok], np.asarray(ustar)[ok]
        M = (np.asarray(u)[:, None] + us[None, :]
             + cost.value(np.repeat(X, len(Yk), 0), np.tile(Yk, (len(X), 1))).reshape(len(X), len(Yk)))
        dmin = float(M.min())
        if plan is not None:
            idx = np.full(len(Y), -1)
            idx[np.flatnonzero(ok)] = np.arange(ok.sum())
            S = plan.support()
            S = S[idx[S[:, 1]] >= 0]
            smax = float(np.max(np.abs(M[S[:, 0], idx[S[:, 1]]]))) if len(S) else None
    dual_tol = 10 * h * h if dual_tol is None else dual_tol
    passed = True
    if dev is not None:
        passed &= dev <= map_tol
    if gap is not None:
        passed &= gap <= gap_tol
    if dmin is not None:
        passed &= dmin >= -dual_tol
    tol = {"map": map_tol, "gap": gap_tol, "dual": dual_tol}
    return OracleComparison(dev, fc, oc, gap, dmin, smax, tol, bool(passed))
