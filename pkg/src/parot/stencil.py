"""Finite-difference stencils on a GridDomain.

Interior nodes use centred differences (mixed second derivatives through the
diagonal neighbours).  Boundary nodes get gradient and Hessian weights from a
least-squares quadratic fit through nearby interior nodes, anchored at the
boundary value itself, so that

    grad u(b) = sum_k cg[b, :, k] * (u[nbr[b, k]] - u[b]).

Because the fits only involve interior nodes, boundary nodes are decoupled
from each other.  The same fit also gives the gradient at the projection of
a boundary node onto the true boundary, which is where the boundary
condition is imposed.
"""

from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .geometry import INTERIOR, GridDomain


def _offsets(n, radius):
    r = int(np.ceil(radius))
    out = []
    for off in itertools.product(range(-r, r + 1), repeat=n):
        if any(off) and np.dot(off, off) <= radius * radius + 1e-9:
            out.append(off)
    return np.array(out, dtype=int)


class Stencils:
    def __init__(self, grid: GridDomain):
        self.grid = grid
        n = grid.dim
        self.n = n
        self.I = grid.interior
        self.Bd = grid.boundary
        self.act = grid.active
        shape = np.array(grid.shape)
        self._multi = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=-1)
        strides = np.array(grid.strides)
        self.plus = np.stack([self.I + strides[k] for k in range(n)])
        self.minus = np.stack([self.I - strides[k] for k in range(n)])
        self.pairs = [(k, l) for k in range(n) for l in range(k + 1, n)]
        self.diag = {}
        for k, l in self.pairs:
            s = lambda a, b: self.I + a * strides[k] + b * strides[l]  # noqa: E731
            self.diag[(k, l)] = (s(1, 1), s(1, -1), s(-1, 1), s(-1, -1))
        cls = grid.node_class
        for arr in [*self.plus, *self.minus]:
            if np.any(cls[arr] == 2):
                raise ConfigurationError("interior stencil reaches an exterior node")

        nq = n * (n + 1) // 2
        fits = []
        for b in self.Bd:
            mb = self._multi[b]
            for radius, quad in ((2.0, True), (3.0, True), (4.0, True), (2.0, False), (3.0, False)):
                offs = _offsets(n, radius)
                cand = mb + offs
                ok = np.all((cand >= 0) & (cand < shape), axis=1)
                cand = cand[ok]
                flat = np.ravel_multi_index(cand.T, grid.shape)
                flat = flat[cls[flat] == INTERIOR]
                need = n + (nq if quad else 0)
                if len(flat) < need:
                    continue
                d = grid.points[flat] - grid.points[b]
                cols = [d[:, i] for i in range(n)]
                if quad:
                    for i in range(n):
                        for j in range(i, n):
                            cols.append(0.5 * d[:, i] ** 2 if i == j else d[:, i] * d[:, j])
                D = np.stack(cols, axis=1)
                if np.linalg.matrix_rank(D) < need:
                    continue
                fits.append((flat, np.linalg.pinv(D), quad))
                break
            else:
                raise ConfigurationError(f"no usable boundary stencil at node {b}")
        K = max((len(f[0]) for f in fits), default=1)
        nb = len(self.Bd)
        self.bn_idx = np.zeros((nb, K), dtype=int)
        self.bn_cg = np.zeros((nb, n, K))
        self.bn_ch = np.zeros((nb, n, n, K))
        for r, (flat, pinv, quad) in enumerate(fits):
            k = len(flat)
            self.bn_idx[r, :k] = flat
            self.bn_idx[r, k:] = flat[0]
            self.bn_cg[r, :, :k] = pinv[:n]
            if quad:
                q = n
                for i in range(n):
                    for j in range(i, n):
                        self.bn_ch[r, i, j, :k] = pinv[q]
                        self.bn_ch[r, j, i, :k] = pinv[q]
                        q += 1
        # d(grad u_b)/d(u_b)
        self.bn_self = -self.bn_cg.sum(axis=-1)
        # gradient of the local quadratic model at the projected boundary point
        e = grid.boundary_points[self.Bd] - grid.points[self.Bd] if nb else np.zeros((0, n))
        self.bn_offset = e
        self.bp_cg = self.bn_cg + np.einsum("bijk,bj->bik", self.bn_ch, e)
        self.bp_self = -self.bp_cg.sum(axis=-1)
        self.projected = bool(nb and np.any(np.abs(e) > 0))

    # -- evaluation ---------------------------------------------------------

    def boundary_gradient(self, u, ub=None, projected=False):
        ub = u[self.Bd] if ub is None else ub
        diff = u[self.bn_idx] - ub[:, None]
        return np.einsum("bkj,bj->bk", self.bp_cg if projected else self.bn_cg, diff)

    def gradient(self, u) -> np.ndarray:
        g = self.grid
        out = np.full((g.size, self.n), np.nan)
        for k in range(self.n):
            out[self.I, k] = (u[self.plus[k]] - u[self.minus[k]]) / (2.0 * g.spacing[k])
        out[self.Bd] = self.boundary_gradient(u)
        return out

    def hessian(self, u) -> np.ndarray:
        g = self.grid
        n = self.n
        out = np.full((g.size, n, n), np.nan)
        H = np.empty((len(self.I), n, n))
        for k in range(n):
            H[:, k, k] = (u[self.plus[k]] - 2.0 * u[self.I] + u[self.minus[k]]) / g.spacing[k] ** 2
        for k, l in self.pairs:
            pp, pm, mp, mm = self.diag[(k, l)]
            v = (u[pp] - u[pm] - u[mp] + u[mm]) / (4.0 * g.spacing[k] * g.spacing[l])
            H[:, k, l] = v
            H[:, l, k] = v
        out[self.I] = H
        diff = u[self.bn_idx] - u[self.Bd][:, None]
        out[self.Bd] = np.einsum("bijk,bk->bij", self.bn_ch, diff)
        return out

    # -- sparse operators -----------------------------------------------------

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Rows: interior nodes; columns: all lattice nodes."""
        g = self.grid
        rows, cols, vals = [], [], []
        r = np.arange(len(self.I))
        for k in range(self.n):
            w = 1.0 / g.spacing[k] ** 2
            rows += [r, r, r]
            cols += [self.plus[k], self.minus[k], self.I]
            vals += [np.full(len(r), w), np.full(len(r), w), np.full(len(r), -2.0 * w)]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(self.I), g.size)
        )

    @cached_property
    def boundary_gradient_ops(self) -> list:
        """Per axis k, sparse (n_boundary x size) map u -> d_k u at the
        projected boundary points."""
        nb, K = self.bn_idx.shape
        r = np.repeat(np.arange(nb), K)
        ops = []
        for k in range(self.n):
            rows = np.concatenate([r, np.arange(nb)])
            cols = np.concatenate([self.bn_idx.ravel(), self.Bd])
            vals = np.concatenate([self.bp_cg[:, k, :].ravel(), self.bp_self[:, k]])
            ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(nb, self.grid.size)))
        return ops
