"""Cost families, c-exponential maps and the pointwise fields A, B, G, beta.

All evaluators are vectorized over a leading batch axis: points are arrays of
shape ``(m, n)`` and Hessian blocks come back as ``(m, n, n)``.  The mixed
Hessian is indexed ``hess_xy[..., i, j] = d/dx_i d/dy_j c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import ConfigurationError, DegeneracyError, DensityError, SolverError
from .geometry import DefiningFunction, DensityField, DomainSpec, GridDomain, signed_distance

FD_THIRD_STEP = 1e-4


def _batch(a, n=None):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1) if n is None or a.shape[0] == n else a.reshape(-1, 1)
    return a


class CostModel:
    """Base class; subclasses supply value and derivatives through order 2.

    Third derivatives default to central differences of the analytic
    Hessians with step ``FD_THIRD_STEP``.
    """

    kind = "custom"
    # True when exp_guess already solves the chart equation in closed form
    exact_chart = False

    def value(self, x, y):
        raise NotImplementedError

    def grad_x(self, x, y):
        raise NotImplementedError

    def grad_y(self, x, y):
        raise NotImplementedError

    def hess_xx(self, x, y):
        raise NotImplementedError

    def hess_xy(self, x, y):
        raise NotImplementedError

    def hess_yy(self, x, y):
        raise NotImplementedError

    def d3_xxy(self, x, y):
        """``[..., i, j, l] = d/dx_i d/dx_j d/dy_l c``."""
        n = x.shape[-1]
        out = np.empty(x.shape[:-1] + (n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = FD_THIRD_STEP
            out[..., l] = (self.hess_xx(x, y + e) - self.hess_xx(x, y - e)) / (2 * FD_THIRD_STEP)
        return out

    def d3_xyy(self, x, y):
        """``[..., l, i, j] = d/dx_l d/dy_i d/dy_j c``."""
        n = x.shape[-1]
        out = np.empty(x.shape[:-1] + (n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = FD_THIRD_STEP
            out[..., l, :, :] = (self.hess_yy(x + e, y) - self.hess_yy(x - e, y)) / (2 * FD_THIRD_STEP)
        return out

    def exp_guess(self, x, p):
        return x + p

    def exp_star_guess(self, y, q):
        return y + q

    def params(self) -> dict:
        return {"kind": self.kind}


class QuadraticCost(CostModel):
    kind = "quadratic"
    exact_chart = True

    def value(self, x, y):
        return 0.5 * np.sum((x - y) ** 2, axis=-1)

    def grad_x(self, x, y):
        return x - y

    def grad_y(self, x, y):
        return y - x

    @staticmethod
    def _eye(x):
        return np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy()

    # subclasses add perturbations, so never route through self.hess_xx
    def hess_xx(self, x, y):
        return QuadraticCost._eye(x)

    def hess_xy(self, x, y):
        return -QuadraticCost._eye(x)

    def hess_yy(self, x, y):
        return QuadraticCost._eye(x)

    def d3_xxy(self, x, y):
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n, n, n))

    d3_xyy = d3_xxy


class PowerCost(CostModel):
    """``c(x, y) = |x - y|^p / p``; needs the domains separated (|x - y| >= M1 > 0)."""

    kind = "power_p"

    exact_chart = True

    def __init__(self, p: float, m1: float = 1e-3):
        if p == 0 or p == 1:
            raise ConfigurationError("power cost needs p not in {0, 1}")
        self.p = float(p)
        self.m1 = float(m1)

    def params(self):
        return {"kind": self.kind, "p": self.p, "m1": self.m1}

    def _zr(self, x, y):
        z = x - y
        r = np.linalg.norm(z, axis=-1)
        return z, r

    def value(self, x, y):
        _, r = self._zr(x, y)
        return r**self.p / self.p

    def grad_x(self, x, y):
        z, r = self._zr(x, y)
        return (r ** (self.p - 2))[..., None] * z

    def grad_y(self, x, y):
        return -self.grad_x(x, y)

    def hess_xx(self, x, y):
        z, r = self._zr(x, y)
        n = x.shape[-1]
        p = self.p
        eye = np.eye(n)
        return (r ** (p - 2))[..., None, None] * eye + ((p - 2) * r ** (p - 4))[..., None, None] * (
            z[..., :, None] * z[..., None, :]
        )

    def hess_xy(self, x, y):
        return -self.hess_xx(x, y)

    def hess_yy(self, x, y):
        return self.hess_xx(x, y)

    def _t3(self, x, y):
        z, r = self._zr(x, y)
        n = x.shape[-1]
        p = self.p
        eye = np.eye(n)
        a = ((p - 2) * r ** (p - 4))[..., None, None, None]
        b = ((p - 2) * (p - 4) * r ** (p - 6))[..., None, None, None]
        zi = z[..., :, None, None]
        zj = z[..., None, :, None]
        zk = z[..., None, None, :]
        sym = zk * eye[:, :, None] + zi * eye[None, :, :] + zj * eye[:, None, :]
        return a * sym + b * zi * zj * zk

    def d3_xxy(self, x, y):
        return -self._t3(x, y)

    def d3_xyy(self, x, y):
        return self._t3(x, y)

    def exp_guess(self, x, p):
        # exact inverse of -grad_x c(x, .) = |y - x|^(p-2) (y - x)
        pn = np.linalg.norm(p, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = pn ** (1.0 / (self.p - 1.0))
            y = x + np.where(pn > 0, r * p / pn, 0.0)
        return y

    def exp_star_guess(self, y, q):
        return self.exp_guess(y, q)


# ---------------------------------------------------------------------------
# perturbations for c = |x - y|^2 / 2 + eta


class Perturbation:
    name = "zero"

    def __init__(self, coef: float = 0.0):
        self.coef = float(coef)

    def _zeros(self, x, order):
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n,) * order)

    def value(self, x, y):
        return np.zeros(x.shape[:-1])

    def grad_x(self, x, y):
        return self._zeros(x, 1)

    def grad_y(self, x, y):
        return self._zeros(x, 1)

    def hess_xx(self, x, y):
        return self._zeros(x, 2)

    def hess_xy(self, x, y):
        return self._zeros(x, 2)

    def hess_yy(self, x, y):
        return self._zeros(x, 2)

    def d3_xxy(self, x, y):
        return self._zeros(x, 3)

    def d3_xyy(self, x, y):
        return self._zeros(x, 3)

    def params(self):
        return {"eta": self.name, "coef": self.coef}


class SinSin(Perturbation):
    """``coef * sum_k sin(x_k) sin(y_k)``."""

    name = "sinsin"

    def value(self, x, y):
        return self.coef * np.sum(np.sin(x) * np.sin(y), axis=-1)

    def grad_x(self, x, y):
        return self.coef * np.cos(x) * np.sin(y)

    def grad_y(self, x, y):
        return self.coef * np.sin(x) * np.cos(y)

    def _diag(self, v):
        n = v.shape[-1]
        return v[..., :, None] * np.eye(n)

    def hess_xx(self, x, y):
        return self._diag(-self.coef * np.sin(x) * np.sin(y))

    def hess_xy(self, x, y):
        return self._diag(self.coef * np.cos(x) * np.cos(y))

    def hess_yy(self, x, y):
        return self.hess_xx(x, y)

    def _diag3(self, v):
        n = v.shape[-1]
        out = np.zeros(v.shape[:-1] + (n, n, n))
        for k in range(n):
            out[..., k, k, k] = v[..., k]
        return out

    def d3_xxy(self, x, y):
        return self._diag3(-self.coef * np.sin(x) * np.cos(y))

    def d3_xyy(self, x, y):
        return self._diag3(-self.coef * np.cos(x) * np.sin(y))


class QuadraticY(Perturbation):
    """``coef * |y|^2``."""

    name = "quadratic_y"

    def value(self, x, y):
        return self.coef * np.sum(y * y, axis=-1)

    def grad_y(self, x, y):
        return 2.0 * self.coef * y

    def hess_yy(self, x, y):
        n = x.shape[-1]
        return np.broadcast_to(2.0 * self.coef * np.eye(n), x.shape + (n,)).copy()


class Bilinear(Perturbation):
    """``coef * <x, y>``."""

    name = "bilinear"

    def value(self, x, y):
        return self.coef * np.sum(x * y, axis=-1)

    def grad_x(self, x, y):
        return self.coef * y

    def grad_y(self, x, y):
        return self.coef * x

    def hess_xy(self, x, y):
        n = x.shape[-1]
        return np.broadcast_to(self.coef * np.eye(n), x.shape + (n,)).copy()


PERTURBATIONS = {"zero": Perturbation, "sinsin": SinSin, "quadratic_y": QuadraticY, "bilinear": Bilinear}


class PerturbedQuadraticCost(QuadraticCost):
    kind = "perturbed_quadratic"

    exact_chart = False

    def __init__(self, eta: Perturbation):
        self.eta = eta

    def params(self):
        return {"kind": self.kind, **self.eta.params()}

    def value(self, x, y):
        return super().value(x, y) + self.eta.value(x, y)

    def grad_x(self, x, y):
        return super().grad_x(x, y) + self.eta.grad_x(x, y)

    def grad_y(self, x, y):
        return super().grad_y(x, y) + self.eta.grad_y(x, y)

    def hess_xx(self, x, y):
        return super().hess_xx(x, y) + self.eta.hess_xx(x, y)

    def hess_xy(self, x, y):
        return super().hess_xy(x, y) + self.eta.hess_xy(x, y)

    def hess_yy(self, x, y):
        return super().hess_yy(x, y) + self.eta.hess_yy(x, y)

    def d3_xxy(self, x, y):
        return self.eta.d3_xxy(x, y)

    def d3_xyy(self, x, y):
        return self.eta.d3_xyy(x, y)


class BlendCost(CostModel):
    """The homotopy ``(1 - s) c0 + s c1``."""

    kind = "blend"

    def __init__(self, c0: CostModel, c1: CostModel, s: float):
        self.c0, self.c1, self.s = c0, c1, float(s)

    def params(self):
        return {"kind": self.kind, "s": self.s, "c0": self.c0.params(), "c1": self.c1.params()}

    def _mix(self, name, *args):
        a = getattr(self.c0, name)(*args)
        if self.s == 0.0:
            return a
        b = getattr(self.c1, name)(*args)
        if self.s == 1.0:
            return b
        return (1.0 - self.s) * a + self.s * b

    def value(self, x, y):
        return self._mix("value", x, y)

    def grad_x(self, x, y):
        return self._mix("grad_x", x, y)

    def grad_y(self, x, y):
        return self._mix("grad_y", x, y)

    def hess_xx(self, x, y):
        return self._mix("hess_xx", x, y)

    def hess_xy(self, x, y):
        return self._mix("hess_xy", x, y)

    def hess_yy(self, x, y):
        return self._mix("hess_yy", x, y)

    def d3_xxy(self, x, y):
        return self._mix("d3_xxy", x, y)

    def d3_xyy(self, x, y):
        return self._mix("d3_xyy", x, y)

    def _best(self, guesses, resid):
        r = np.stack([np.linalg.norm(resid(g), axis=-1) for g in guesses])
        pick = np.argmin(r, axis=0)
        return np.where(pick[:, None] == 0, guesses[0], guesses[1])

    def exp_guess(self, x, p):
        gs = [self.c0.exp_guess(x, p), self.c1.exp_guess(x, p)]
        return self._best(gs, lambda y: -self.grad_x(x, y) - p)

    def exp_star_guess(self, y, q):
        gs = [self.c0.exp_star_guess(y, q), self.c1.exp_star_guess(y, q)]
        return self._best(gs, lambda x: -self.grad_y(x, y) - q)


def make_cost(kind: str, p: float = 2.0, eta: str = "zero", eta_coef: float = 0.0, m1: float = 1e-3) -> CostModel:
    if kind == "quadratic":
        return QuadraticCost()
    if kind == "power_p":
        return PowerCost(p, m1=m1)
    if kind == "perturbed_quadratic":
        if eta not in PERTURBATIONS:
            raise ConfigurationError(f"unknown perturbation {eta!r}")
        return PerturbedQuadraticCost(PERTURBATIONS[eta](eta_coef))
    raise ConfigurationError(f"unknown cost kind {kind!r}")


def domain_separation(a: DomainSpec, b: DomainSpec) -> float:
    """Lower bound on |x - y| over the two closed domains (sampled for non-circular shapes)."""
    if a.kind == "interval" and b.kind == "interval":
        lo_a, hi_a = a.center[0] - a.half_extents[0], a.center[0] + a.half_extents[0]
        lo_b, hi_b = b.center[0] - b.half_extents[0], b.center[0] + b.half_extents[0]
        return max(lo_b - hi_a, lo_a - hi_b, 0.0)
    if a.kind == "disc" and b.kind == "disc":
        d = float(np.linalg.norm(np.subtract(a.center, b.center)))
        return max(d - a.half_extents[0] - b.half_extents[0], 0.0)
    from .geometry import build_grid

    ga, gb = build_grid(a, 48), build_grid(b, 48)
    pa = ga.points[ga.active]
    pb = gb.points[gb.active]
    d = np.linalg.norm(pa[:, None, :] - pb[None], axis=-1).min()
    return max(float(d) - ga.h - gb.h, 0.0)


def check_separation(cost: CostModel, source: DomainSpec, target: DomainSpec) -> float:
    """Enforce the power-cost guard inf |x - y| >= M1 over source x N_r0(target)."""
    sep = domain_separation(source, target) - target.r0
    if isinstance(cost, PowerCost) and sep < cost.m1:
        raise ConfigurationError(f"power cost needs separated domains: inf|x-y| ~ {sep:.3g} < M1={cost.m1}")
    return sep


# ---------------------------------------------------------------------------
# c-exponential maps


@dataclass
class DerivativeBundle:
    value: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray
    hess_xx: np.ndarray
    hess_xy: np.ndarray
    hess_yy: np.ndarray
    _cost: CostModel = field(repr=False)
    _x: np.ndarray = field(repr=False)
    _y: np.ndarray = field(repr=False)

    def d3_xxy(self):
        return self._cost.d3_xxy(self._x, self._y)

    def d3_xyy(self):
        return self._cost.d3_xyy(self._x, self._y)


def derivatives(cost: CostModel, x, y) -> DerivativeBundle:
    x = _batch(x)
    y = _batch(y, x.shape[-1])
    return DerivativeBundle(
        cost.value(x, y), cost.grad_x(x, y), cost.grad_y(x, y),
        cost.hess_xx(x, y), cost.hess_xy(x, y), cost.hess_yy(x, y), cost, x, y,
    )


@dataclass
class CExpResult:
    y: np.ndarray
    jacobian: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    out_of_range: np.ndarray
    converged: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.out_of_range))


def _threshold(tol, rhs):
    # absolute tolerance, floored at a few ulps of the right-hand side
    return np.maximum(tol, 8.0 * np.finfo(float).eps * np.sqrt(np.einsum("ij,ij->i", rhs, rhs)))


def _newton_rows(F, J, xfix, z0, rhs, tol, max_iter, strict=True):
    """Damped Newton on rows; ``J(x_rows, z_rows)`` gives row Jacobians dF/dz.

    With ``strict=False`` failing rows are dropped instead of raising; the
    caller detects them from the returned residuals.
    """
    z = z0.copy()
    f = F(z)
    res = np.sqrt(np.einsum("ij,ij->i", f, f))
    its = np.zeros(len(z), dtype=int)
    thresh = _threshold(tol, rhs)
    if np.all(res <= thresh):
        return z, its, res
    dead = np.zeros(len(z), dtype=bool)
    for _ in range(max_iter):
        act = np.flatnonzero(~(res <= thresh) & ~dead)
        if act.size == 0:
            break
        Jm = J(xfix[act], z[act])
        det = np.linalg.det(Jm)
        sing = ~np.isfinite(det) | (np.abs(det) < 1e-14 * np.abs(Jm).max(axis=(-1, -2)) ** Jm.shape[-1])
        if sing.any():
            if strict:
                raise DegeneracyError("singular mixed Hessian along the Newton path")
            dead[act[sing]] = True
            act, Jm = act[~sing], Jm[~sing]
            if act.size == 0:
                break
        step = -np.linalg.solve(Jm, f[act][..., None])[..., 0]
        za = z[act]
        ra = res[act]
        t = np.ones(len(act))
        for _h in range(30):
            trial = za + t[:, None] * step
            full = z.copy()
            full[act] = trial
            fa = F(full)[act]
            rn = np.linalg.norm(fa, axis=-1)
            bad = ~(rn < ra) & ~(rn <= thresh[act])
            if not bad.any():
                break
            t = np.where(bad, 0.5 * t, t)
        z[act] = trial
        f[act] = fa
        res[act] = rn
        its[act] += 1
    if strict and not np.all(res <= thresh):
        raise SolverError(f"Newton did not converge (max residual {np.nanmax(res):.3e})", best=z)
    return z, its, res


def c_exp(cost: CostModel, x, p, guess=None, target: DefiningFunction | None = None,
          r0: float | None = None, tol: float = 1e-12, max_iter: int = 50, strict: bool = True) -> CExpResult:
    """Solve ``-grad_x c(x, y) = p`` for y, batched over rows of ``x`` and ``p``.

    ``jacobian`` is dy/dp = -(D_xy c)^{-1}.  Roots landing outside the
    r0-neighbourhood of the target are re-seeded once from the target centre
    and flagged in ``out_of_range`` if they stay outside.
    """
    x = _batch(x)
    p = _batch(p, x.shape[-1])
    if x.shape != p.shape:
        x, p = np.broadcast_arrays(x, p)
        x, p = x.copy(), p.copy()
    y0 = cost.exp_guess(x, p) if guess is None else np.broadcast_to(_batch(guess, x.shape[-1]), x.shape).copy()

    def F(y):
        return -cost.grad_x(x, y) - p

    y, its, res = _newton_rows(F, lambda xs, ys: -cost.hess_xy(xs, ys), x, y0, p, tol, max_iter, strict)
    oor = np.zeros(len(y), dtype=bool)
    if target is not None:
        margin = target.spec.r0 if r0 is None else r0
        hs, _ = signed_distance(target.spec, y)
        oor = hs > margin + 1e-12
        if oor.any():
            idx = np.flatnonzero(oor)
            seed = np.broadcast_to(np.asarray(target.spec.center), (len(idx), x.shape[-1])).copy()
            try:
                y2, its2, res2 = _newton_rows(
                    lambda z: -cost.grad_x(x[idx], z) - p[idx],
                    lambda xs, ys: -cost.hess_xy(xs, ys), x[idx], seed, p[idx], tol, max_iter,
                )
                h2, _ = signed_distance(target.spec, y2)
                fix = h2 <= margin + 1e-12
                y[idx[fix]] = y2[fix]
                its[idx[fix]] += its2[fix]
                res[idx[fix]] = res2[fix]
                oor[idx[fix]] = False
            except (SolverError, DegeneracyError):
                pass
    conv = res <= _threshold(tol, p)
    Cm = cost.hess_xy(x, y)
    if conv.all():
        jac = -(1.0 / Cm) if Cm.shape[-1] == 1 else -np.linalg.inv(Cm)
    else:
        jac = np.full_like(Cm, np.nan)
        jac[conv] = -np.linalg.inv(Cm[conv])
    return CExpResult(y, jac, its, res, oor, conv)


def c_exp_star(cost: CostModel, y, q, guess=None, source: DefiningFunction | None = None,
               r0: float | None = None, tol: float = 1e-12, max_iter: int = 50) -> CExpResult:
    """Solve ``-grad_y c(x, y) = q`` for x; ``jacobian`` is dx/dq = -(D_xy c)^{-T}.

    The returned ``CExpResult.y`` field holds the source point x.
    """
    y = _batch(y)
    q = _batch(q, y.shape[-1])
    if y.shape != q.shape:
        y, q = np.broadcast_arrays(y, q)
        y, q = y.copy(), q.copy()
    x0 = cost.exp_star_guess(y, q) if guess is None else np.broadcast_to(_batch(guess, y.shape[-1]), y.shape).copy()

    def F(x):
        return -cost.grad_y(x, y) - q

    x, its, res = _newton_rows(
        F, lambda ys, xs: -np.swapaxes(cost.hess_xy(xs, ys), -1, -2), y, x0, q, tol, max_iter
    )
    oor = np.zeros(len(x), dtype=bool)
    if source is not None:
        margin = source.spec.r0 if r0 is None else r0
        hs, _ = signed_distance(source.spec, x)
        oor = hs > margin + 1e-12
    jac = -np.linalg.inv(np.swapaxes(cost.hess_xy(x, y), -1, -2))
    return CExpResult(x, jac, its, res, oor, np.ones(len(x), dtype=bool))


def A_matrix(cost: CostModel, x, p, exp: CExpResult | None = None) -> np.ndarray:
    """``A(x, p) = -D_xx c(x, exp_x(p))``, symmetrized exactly."""
    x = _batch(x)
    r = exp if exp is not None else c_exp(cost, x, p)
    M = -cost.hess_xx(np.broadcast_to(x, r.y.shape), r.y)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def B_value(cost: CostModel, rho: DensityField, rho_star: DensityField, x, p,
            exp: CExpResult | None = None) -> np.ndarray:
    x = _batch(x)
    r = exp if exp is not None else c_exp(cost, x, p)
    xb = np.broadcast_to(x, r.y.shape)
    det = np.abs(np.linalg.det(cost.hess_xy(xb, r.y)))
    rs = rho_star(r.y)
    if np.any(~np.isfinite(rs)) or np.any(rs <= 0):
        raise DensityError("target density not positive at the c-exponential image")
    return det * rho(xb) / rs


def G_and_beta(cost: CostModel, target: DefiningFunction, x, p,
               exp: CExpResult | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``G = h*(exp_x(p))`` and ``beta = grad_p G = (dy/dp)^T grad h*``."""
    r = exp if exp is not None else c_exp(cost, x, p)
    hs, gh = signed_distance(target.spec, r.y)
    beta = np.einsum("mji,mj->mi", r.jacobian, gh)
    return hs, beta


# ---------------------------------------------------------------------------
# structural checks


def _subsample(idx, cap):
    idx = np.asarray(idx)
    if len(idx) <= cap:
        return idx
    return idx[np.unique(np.linspace(0, len(idx) - 1, cap).round().astype(int))]


@dataclass
class BitwistReport:
    margin_x: float
    margin_y: float
    violations: list
    samples: int

    @property
    def margin(self) -> float:
        return min(self.margin_x, self.margin_y)

    @property
    def passed(self) -> bool:
        return not self.violations


def check_bitwist(cost: CostModel, source_grid: GridDomain, target_grid: GridDomain,
                  max_points: int = 400, max_anchors: int = 64, tol: float = 1e-10) -> BitwistReport:
    """Scan injectivity of y -> -grad_x c(x, y) and x -> -grad_y c(x, y) on node sets.

    The margin is the smallest distance between images of distinct nodes.
    """
    X = source_grid.points[_subsample(source_grid.active, max_points)]
    Y = target_grid.points[_subsample(target_grid.active, max_points)]
    scale = max(source_grid.spec.diameter, target_grid.spec.diameter, 1.0)
    violations = []
    mx = math.inf
    for x in X[_subsample(np.arange(len(X)), max_anchors)]:
        P = -cost.grad_x(np.broadcast_to(x, Y.shape), Y)
        d = pdist(P)
        m = float(d.min()) if d.size else math.inf
        mx = min(mx, m)
        if m <= tol * scale:
            violations.append(("x", x.tolist(), m))
    my = math.inf
    for y in Y[_subsample(np.arange(len(Y)), max_anchors)]:
        Q = -cost.grad_y(X, np.broadcast_to(y, X.shape))
        d = pdist(Q)
        m = float(d.min()) if d.size else math.inf
        my = min(my, m)
        if m <= tol * scale:
            violations.append(("y", y.tolist(), m))
    return BitwistReport(mx, my, violations, len(X) * len(Y))


@dataclass
class AntiMonotoneReport:
    worst_x: float
    worst_y: float
    tol: float

    @property
    def worst(self) -> float:
        return min(self.worst_x, self.worst_y)

    @property
    def passed(self) -> bool:
        return self.worst >= -self.tol


def _pair_values(G, Z):
    # <G_j - G_i, Z_j - Z_i> over all i < j
    i, j = np.triu_indices(len(Z), k=1)
    return np.einsum("pk,pk->p", G[j] - G[i], Z[j] - Z[i])


def check_anti_monotone(eta, source_grid: GridDomain, target_grid: GridDomain,
                        max_points: int = 200, max_anchors: int = 32, tol: float = 1e-12) -> AntiMonotoneReport:
    """Monotonicity of y -> -grad_x eta(x, y) and of x -> -grad_y eta(x, y).

    ``eta`` is a Perturbation or a PerturbedQuadraticCost (its perturbation is used).
    """
    if isinstance(eta, PerturbedQuadraticCost):
        eta = eta.eta
    elif isinstance(eta, CostModel):
        raise ConfigurationError("anti-monotonicity is defined for perturbed_quadratic costs")
    X = source_grid.points[_subsample(source_grid.active, max_points)]
    Y = target_grid.points[_subsample(target_grid.active, max_points)]
    wx = math.inf
    for x in X[_subsample(np.arange(len(X)), max_anchors)]:
        G = -eta.grad_x(np.broadcast_to(x, Y.shape), Y)
        v = _pair_values(G, Y)
        if v.size:
            wx = min(wx, float(v.min()))
    wy = math.inf
    for y in Y[_subsample(np.arange(len(Y)), max_anchors)]:
        G = -eta.grad_y(X, np.broadcast_to(y, X.shape))
        v = _pair_values(G, X)
        if v.size:
            wy = min(wy, float(v.min()))
    return AntiMonotoneReport(wx, wy, tol)


def _convexity_form(cost, bpts, normals, kappa_mats, others, d3name, transpose):
    n = bpts.shape[-1]
    tang = np.stack([-normals[:, 1], normals[:, 0]], axis=-1)
    worst = math.inf
    for b, nu, K, tau in zip(bpts, normals, kappa_mats, tang):
        if transpose:
            xs, ys = others, np.broadcast_to(b, others.shape)
        else:
            xs, ys = np.broadcast_to(b, others.shape), others
        C = cost.hess_xy(xs, ys)
        if transpose:
            w = np.linalg.solve(np.swapaxes(C, -1, -2), np.broadcast_to(nu, others.shape)[..., None])[..., 0]
            T3 = cost.d3_xyy(xs, ys)  # [l, i, j]
            M = np.einsum("mlij,ml->mij", T3, w)
        else:
            w = np.linalg.solve(C, np.broadcast_to(nu, others.shape)[..., None])[..., 0]
            T3 = cost.d3_xxy(xs, ys)  # [i, j, l]
            M = np.einsum("mijl,ml->mij", T3, w)
        vals = tau @ K @ tau - np.einsum("i,mij,j->m", tau, M, tau)
        worst = min(worst, float(vals.min()))
    return worst


def check_domain_convexity(cost: CostModel, source: GridDomain, target: GridDomain,
                           max_points: int = 200) -> tuple[float, float]:
    """Minimum of the c-convexity quadratic forms over sampled boundary points.

    Returns (delta, delta_star); +inf when the tangent space is trivial (n = 1).
    """
    if source.dim == 1:
        return math.inf, math.inf
    if source.dim != 2:
        raise ConfigurationError("domain convexity check implemented for n = 2")
    out = []
    for here, there, transpose in ((source, target, False), (target, source, True)):
        df = DefiningFunction(here.spec)
        bidx = _subsample(here.boundary, max_points)
        bpts = np.unique(np.round(here.boundary_points[bidx], 13), axis=0)
        _, nu = signed_distance(here.spec, bpts)
        K = df.shape_operator(bpts)
        others = there.points[_subsample(there.active, max_points)]
        out.append(_convexity_form(cost, bpts, nu, K, others, None, transpose))
    return out[0], out[1]
