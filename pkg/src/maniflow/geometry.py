"""Discrete Riemannian calculus on a periodic structured grid.

A chart is the unit torus [0,1)^d (d = 1 or 2) sampled on n points per
axis.  A metric is an SPD matrix field g_ij sampled on the nodes; its
inverse, volume density sqrt|g| and Christoffel symbols are derived once
and reused by every differential operator.

Array shape conventions:
    ScalarField   : grid
    VectorField   : (d,) + grid          components X^k
    OneFormField  : (d,) + grid          components w_i
    Tensor11Field : (d, d) + grid        components T[k, i] = T^k_i

All first derivatives are second-order central differences with periodic
wrap; the Laplace-Beltrami operator alone uses a conservative face-flux
form so that its integral against the volume density telescopes to zero
exactly.
"""

from __future__ import annotations

import numpy as np

from .exprparse import compile_expr


class GeometryError(ValueError):
    pass


class ChartGrid:
    """Periodic grid on [0,1)^d with spacing h = 1/n."""

    def __init__(self, d, n):
        if d not in (1, 2):
            raise GeometryError(f"dimension must be 1 or 2, got {d}")
        if n < 16 or (n & (n - 1)) != 0:
            raise GeometryError(f"points-per-axis must be a power of two >= 16, got {n}")
        self.d = int(d)
        self.n = int(n)
        self.h = 1.0 / n
        self.shape = (n,) * d

    def axis_coords(self):
        return np.arange(self.n) * self.h

    def coords(self):
        """d arrays of node coordinates, each shaped like a scalar field."""
        x = self.axis_coords()
        if self.d == 1:
            return [x]
        return list(np.meshgrid(x, x, indexing="ij"))

    def eval_expr(self, expr, **extra):
        """Evaluate an expression (text/AST/callable/number) on the nodes."""
        fn = compile_expr(expr)
        xs = self.coords()
        bindings = {"x1": xs[0]}
        if self.d == 2:
            bindings["x2"] = xs[1]
        bindings.update(extra)
        out = fn(**bindings)
        return np.broadcast_to(np.asarray(out, dtype=float), self.shape).copy()

    def __repr__(self):
        return f"ChartGrid(d={self.d}, n={self.n})"


# --- stencils ---------------------------------------------------------------

def ddx(f, axis, h):
    """Central first derivative along an array axis, periodic wrap."""
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def d2dx(f, ax1, ax2, h):
    """Second derivative: 3-point stencil if repeated, central cross otherwise."""
    if ax1 == ax2:
        return (np.roll(f, -1, ax1) - 2.0 * f + np.roll(f, 1, ax1)) / (h * h)
    return ddx(ddx(f, ax1, h), ax2, h)


# --- metric -----------------------------------------------------------------

class MetricField:
    """Sampled metric with derived inverse, density and Christoffel symbols."""

    def __init__(self, grid, g, lam_min=1e-6):
        self.grid = grid
        d, shape = grid.d, grid.shape
        g = np.asarray(g, dtype=float)
        if g.shape != (d, d) + shape:
            raise GeometryError(f"metric shape {g.shape} != {(d, d) + shape}")
        if not np.array_equal(g, np.swapaxes(g, 0, 1)):
            raise GeometryError("metric entries are not symmetric")
        self.g = g
        self._check_spd(lam_min)
        self.ginv, self.det = self._invert()
        self.sqrt_det = np.sqrt(self.det)
        self.gamma = self._christoffel()
        # Gamma^j_{kj} contracted over the repeated slot, indexed by k
        self.gamma_trace = np.einsum("jkj...->k...", self.gamma)
        self._dgamma = None

    def _check_spd(self, lam_min):
        if self.grid.d == 1:
            lam = self.g[0, 0]
        else:
            tr = self.g[0, 0] + self.g[1, 1]
            det = self.g[0, 0] * self.g[1, 1] - self.g[0, 1] * self.g[1, 0]
            disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
            lam = 0.5 * (tr - disc)
        if np.any(lam < lam_min):
            idx = tuple(int(i) for i in np.unravel_index(int(np.argmin(lam)), self.grid.shape))
            raise GeometryError(
                f"metric not SPD at node {idx}: min eigenvalue "
                f"{float(lam[idx]):.3e} < {lam_min:.1e}")

    def _invert(self):
        if self.grid.d == 1:
            det = self.g[0, 0].copy()
            ginv = np.empty_like(self.g)
            ginv[0, 0] = 1.0 / det
            return ginv, det
        a, b, c = self.g[0, 0], self.g[0, 1], self.g[1, 1]
        det = a * c - b * b
        ginv = np.empty_like(self.g)
        ginv[0, 0] = c / det
        ginv[1, 1] = a / det
        ginv[0, 1] = -b / det
        ginv[1, 0] = ginv[0, 1]
        return ginv, det

    def _christoffel(self):
        # Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij), FD of g
        d, h, shape = self.grid.d, self.grid.h, self.grid.shape
        dg = np.empty((d, d, d) + shape)  # dg[l, i, j] = d_l g_ij
        for l in range(d):
            dg[l] = ddx(self.g, 2 + l, h)
        gamma = np.zeros((d, d, d) + shape)
        for k in range(d):
            for i in range(d):
                for j in range(d):
                    acc = np.zeros(shape)
                    for l in range(d):
                        acc += self.ginv[k, l] * (dg[i][j, l] + dg[j][i, l] - dg[l][i, j])
                    gamma[k, i, j] = 0.5 * acc
        return gamma

    @property
    def dgamma(self):
        """dgamma[i, k, l, j] = d_i Gamma^k_{lj} (central FD, cached)."""
        if self._dgamma is None:
            d, h = self.grid.d, self.grid.h
            out = np.empty((d, d, d, d) + self.grid.shape)
            for i in range(d):
                out[i] = ddx(self.gamma, 3 + i, h)
            self._dgamma = out
        return self._dgamma

    def volume(self):
        return float(np.sum(self.sqrt_det) * self.grid.h ** self.grid.d)


def build_metric(entries, grid, lam_min=1e-6):
    """Sample a symmetric d x d expression table into a MetricField."""
    d = grid.d
    g = np.empty((d, d) + grid.shape)
    for i in range(d):
        for j in range(d):
            g[i, j] = grid.eval_expr(entries[i][j])
    g = 0.5 * (g + np.swapaxes(g, 0, 1))  # kill roundoff asymmetry from eval
    return MetricField(grid, g, lam_min=lam_min)


def euclidean_metric(grid):
    g = np.zeros((grid.d, grid.d) + grid.shape)
    for i in range(grid.d):
        g[i, i] = 1.0
    return MetricField(grid, g)


# --- first-order operators --------------------------------------------------

def gradient(v, M):
    """(grad v)^j = g^{ji} d_i v."""
    grid = M.grid
    dv = np.stack([ddx(v, i, grid.h) for i in range(grid.d)])
    return np.einsum("ji...,i...->j...", M.ginv, dv)


def div_vector(X, M):
    """div X = d_k X^k + Gamma^j_{kj} X^k."""
    grid = M.grid
    out = np.zeros(grid.shape)
    for k in range(grid.d):
        out += ddx(X[k], k, grid.h)
    out += np.einsum("k...,k...->...", M.gamma_trace, X)
    return out


def div_oneform(w, M):
    """div w = g^{ij} d_i w_j - Gamma^k_{il} g^{il} w_k."""
    grid = M.grid
    dw = np.stack([ddx(w, 1 + i, grid.h) for i in range(grid.d)])  # dw[i, j] = d_i w_j
    out = np.einsum("ij...,ij...->...", M.ginv, dw)
    contr = np.einsum("kil...,il...->k...", M.gamma, M.ginv)
    out -= np.einsum("k...,k...->...", contr, w)
    return out


def div_tensor11(T, M):
    """(div T)_i = d_j T^j_i + Gamma^j_{jl} T^l_i - Gamma^l_{ji} T^j_l."""
    grid = M.grid
    dT = np.stack([ddx(T, 2 + j, grid.h) for j in range(grid.d)])  # dT[j, k, i] = d_j T^k_i
    out = np.einsum("jji...->i...", dT)
    out += np.einsum("l...,li...->i...", M.gamma_trace, T)
    out -= np.einsum("lji...,jl...->i...", M.gamma, T)
    return out


def divdiv_tensor11(T, M):
    """Scalar double divergence of a (1,1) tensor field (full bracket form)."""
    grid = M.grid
    d, h = grid.d, grid.h
    dT = np.stack([ddx(T, 2 + l, h) for l in range(d)])  # dT[l, k, i] = d_l T^k_i
    ddT = np.empty((d, d, d, d) + grid.shape)  # ddT[i, k, a, b] = d_i d_k T^a_b
    for i in range(d):
        for k in range(i, d):
            ddT[i, k] = d2dx(T, 2 + i, 2 + k, h)
            ddT[k, i] = ddT[i, k]
    G, dG, gi = M.gamma, M.dgamma, M.ginv

    out = np.einsum("ij...,ikkj...->...", gi, ddT)
    out += np.einsum("ij...,l...,ilj...->...", gi, M.gamma_trace, dT)
    out -= np.einsum("ij...,lkj...,ikl...->...", gi, G, dT)
    out -= np.einsum("ij...,kij...,llk...->...", gi, G, dT)
    out += np.einsum("ij...,il...,lj...->...", gi, np.einsum("ikkl...->il...", dG), T)
    out -= np.einsum("ij...,ilkj...,kl...->...", gi, dG, T)
    out -= np.einsum("ij...,kij...,r...,rk...->...", gi, G, M.gamma_trace, T)
    out += np.einsum("ij...,kij...,rkl...,lr...->...", gi, G, G, T)
    return out


def laplace_beltrami(v, M):
    """Conservative-form Laplace-Beltrami operator.

    Diagonal terms use compact face fluxes, off-diagonal terms central
    differences of central differences; every term telescopes under the
    full-grid sum and the associated quadratic form is symmetric.
    """
    grid = M.grid
    d, h = grid.d, grid.h
    s = M.sqrt_det
    acc = np.zeros(grid.shape)
    for a in range(d):
        kappa = s * M.ginv[a, a]
        face_kappa = 0.5 * (kappa + np.roll(kappa, -1, a))
        flux = face_kappa * (np.roll(v, -1, a) - v) / h
        acc += (flux - np.roll(flux, 1, a)) / h
        for b in range(d):
            if b != a:
                acc += ddx(s * M.ginv[a, b] * ddx(v, b, h), a, h)
    return acc / s


# --- algebraic operators ----------------------------------------------------

def transpose11(T, M):
    """Metric transpose: (T^t)^k_i = g^{kl} T^m_l g_{mi}."""
    return np.einsum("kl...,ml...,mi...->ki...", M.ginv, T, M.g)


def sharp(w, M):
    """Raise an index: (w#)^j = g^{ji} w_i."""
    return np.einsum("ji...,i...->j...", M.ginv, w)


def flat(X, M):
    """Lower an index: (Xb)_i = g_{ij} X^j."""
    return np.einsum("ij...,j...->i...", M.g, X)


def oneform_norm_sq(w, M):
    """|w|_g^2 = g^{ij} w_i w_j (nonnegative)."""
    return np.einsum("ij...,i...,j...->...", M.ginv, w, w)


def vector_norm_sq(X, M):
    return np.einsum("ij...,i...,j...->...", M.g, X, X)


def integrate(v, M):
    """Integral against the volume density: sum of v * sqrt|g| * h^d."""
    return float(np.sum(v * M.sqrt_det) * M.grid.h ** M.grid.d)


def norm_l1(v, M):
    return integrate(np.abs(v), M)


def norm_l2(v, M):
    return np.sqrt(max(integrate(v * v, M), 0.0))
