"""Coefficient fields: flux, diffusion tensor, antiderivative tensors.

Every state-dependent coefficient is tabulated once on grid x xi-edges and
evaluated afterwards by linear interpolation in xi.  The same tabulate /
cumulative-trapezoid / interpolate path is shared by the solver, the
entropy integrals and the measure deposits, so quantities that coincide
analytically coincide here up to one quadrature convention.
"""

from __future__ import annotations

import numpy as np

from .exprparse import compile_expr
from . import geometry as geo


class ModelError(ValueError):
    pass


class XiGrid:
    """State interval [0,1] split into n_xi bins.

    Coefficient tables live on the bin edges b/n_xi (so xi = 0 and 1 are
    sampled exactly); the kinetic function and the dissipation ledger live
    on the bin centers.
    """

    def __init__(self, n_xi):
        if n_xi < 16:
            raise ModelError(f"xi bin count must be >= 16, got {n_xi}")
        self.n = int(n_xi)
        self.dxi = 1.0 / n_xi
        self.edges = np.arange(n_xi + 1) * self.dxi
        self.centers = (np.arange(n_xi) + 0.5) * self.dxi

    def __repr__(self):
        return f"XiGrid(n_xi={self.n})"


def cumtrapz_edges(table, dxi):
    """Cumulative trapezoid along the last (xi-edge) axis, zero at xi=0."""
    out = np.zeros_like(table)
    steps = 0.5 * dxi * (table[..., 1:] + table[..., :-1])
    out[..., 1:] = np.cumsum(steps, axis=-1)
    return out


def xi_interp(table, u, xi):
    """Linear interpolation of an edge table at state values u.

    `table` has shape comps + grid + (n_edges,), `u` has the grid shape.
    Values outside [0,1] are extrapolated linearly from the end cells.
    """
    table = np.asarray(table)
    dxi = xi.dxi if isinstance(xi, XiGrid) else float(xi)
    nbins = table.shape[-1] - 1
    pos = np.asarray(u) / dxi
    i0 = np.clip(np.floor(pos).astype(int), 0, nbins - 1)
    w = pos - i0
    if table.ndim == 1:  # pure state table: broadcast over the value array
        return table[i0] * (1.0 - w) + table[i0 + 1] * w
    comp_ndim = table.ndim - 1 - np.asarray(u).ndim
    idx = i0.reshape((1,) * comp_ndim + i0.shape)
    lo = np.take_along_axis(table, np.broadcast_to(idx[..., None], table.shape[:-1] + (1,)), -1)[..., 0]
    hi = np.take_along_axis(table, np.broadcast_to(idx[..., None] + 1, table.shape[:-1] + (1,)), -1)[..., 0]
    return lo * (1.0 - w) + hi * w


def _tabulate(expr, grid, edges):
    """Sample an expression of (x, xi) on grid x edges -> grid + (n_edges,)."""
    fn = compile_expr(expr)
    xs = grid.coords()
    bindings = {"x1": xs[0][..., None]}
    if grid.d == 2:
        bindings["x2"] = xs[1][..., None]
    bindings["xi"] = edges.reshape((1,) * grid.d + (-1,))
    out = fn(**bindings)
    return np.broadcast_to(np.asarray(out, dtype=float), grid.shape + (len(edges),)).copy()


def _xi_fd(table, dxi):
    """Centered xi-derivative of an edge table, one-sided at the ends."""
    out = np.empty_like(table)
    out[..., 1:-1] = (table[..., 2:] - table[..., :-2]) / (2.0 * dxi)
    out[..., 0] = (table[..., 1] - table[..., 0]) / dxi
    out[..., -1] = (table[..., -1] - table[..., -2]) / dxi
    return out


class FluxModel:
    """Convection coefficients: vector field f(x, xi) and its xi-derivative."""

    def __init__(self, grid, xi, f_table, fprime_table=None):
        self.grid = grid
        self.xi = xi
        expected = (grid.d,) + grid.shape + (xi.n + 1,)
        f_table = np.asarray(f_table, dtype=float)
        if f_table.shape != expected:
            raise ModelError(f"flux table shape {f_table.shape} != {expected}")
        if not np.all(np.isfinite(f_table)):
            raise ModelError("flux table contains non-finite entries")
        self.f = f_table
        self.fprime = np.asarray(fprime_table, dtype=float) if fprime_table is not None \
            else _xi_fd(f_table, xi.dxi)

    @classmethod
    def from_exprs(cls, exprs, grid, xi, prime_exprs=None):
        f = np.stack([_tabulate(e, grid, xi.edges) for e in exprs])
        fp = None
        if prime_exprs is not None:
            fp = np.stack([_tabulate(e, grid, xi.edges) for e in prime_exprs])
        return cls(grid, xi, f, fp)

    @classmethod
    def zero(cls, grid, xi):
        return cls(grid, xi, np.zeros((grid.d,) + grid.shape + (xi.n + 1,)))

    def at(self, u):
        """Vector field x -> f(x, u(x))."""
        return xi_interp(self.f, u, self.xi)

    def at_xi(self, b):
        return self.f[..., b]

    def prime_at_xi_value(self, value):
        """f'(x, xi) at an off-table xi value (linear interp of the table)."""
        const = np.full(self.grid.shape, float(value))
        return xi_interp(self.fprime, const, self.xi)

    def max_prime_gnorm(self, M):
        norms = np.einsum("ij...,i...b,j...b->...b", M.g, self.fprime, self.fprime)
        return float(np.sqrt(max(np.max(norms), 0.0)))


class DiffusionModel:
    """Diffusion coefficients derived from the tensor square root sigma.

    Tables (all on grid x xi-edges): sigma, its metric transpose, the
    diffusivity a' = sigma^t sigma, and the antiderivative A with A(x,0)=0.
    """

    def __init__(self, grid, xi, M, sigma_table):
        self.grid = grid
        self.xi = xi
        expected = (grid.d, grid.d) + grid.shape + (xi.n + 1,)
        sigma_table = np.asarray(sigma_table, dtype=float)
        if sigma_table.shape != expected:
            raise ModelError(f"sigma table shape {sigma_table.shape} != {expected}")
        if not np.all(np.isfinite(sigma_table)):
            raise ModelError("sigma table contains non-finite entries")
        self.sigma = sigma_table
        self.sigmaT = np.einsum("kl...,ml...z,mi...->ki...z", M.ginv, sigma_table, M.g)
        self.aprime = np.einsum("km...z,mi...z->ki...z", self.sigmaT, sigma_table)
        self.A = cumtrapz_edges(self.aprime, xi.dxi)

    @classmethod
    def from_exprs(cls, entries, grid, xi, M):
        d = grid.d
        sig = np.empty((d, d) + grid.shape + (xi.n + 1,))
        for k in range(d):
            for i in range(d):
                sig[k, i] = _tabulate(entries[k][i], grid, xi.edges)
        return cls(grid, xi, M, sig)

    @classmethod
    def zero(cls, grid, xi, M):
        return cls(grid, xi, M, np.zeros((grid.d, grid.d) + grid.shape + (xi.n + 1,)))

    def a_prime_at(self, u):
        """Tensor field x -> a'(x, u(x)) = (sigma^t sigma)(x, u(x))."""
        return xi_interp(self.aprime, u, self.xi)

    def a_prime_at_xi(self, b):
        return self.aprime[..., b]

    def A_at(self, u):
        """Tensor field x -> A(x, u(x)), the discrete antiderivative of a'."""
        return xi_interp(self.A, u, self.xi)

    def A_at_xi(self, b):
        return self.A[..., b]

    def A_at_xi_value(self, value):
        const = np.full(self.grid.shape, float(value))
        return xi_interp(self.A, const, self.xi)

    def sigmaT_at(self, u):
        return xi_interp(self.sigmaT, u, self.xi)

    def max_aprime_opnorm(self):
        a = self.aprime
        if self.grid.d == 1:
            return float(np.max(np.abs(a[0, 0])))
        tr = a[0, 0] + a[1, 1]
        disc = np.sqrt(np.maximum((a[0, 0] - a[1, 1]) ** 2 + 4.0 * a[0, 1] * a[1, 0], 0.0))
        return float(np.max(np.maximum(np.abs(0.5 * (tr + disc)), np.abs(0.5 * (tr - disc)))))


class BetaFamily:
    """Antiderivatives of the transposed square root, plain and psi-weighted."""

    def __init__(self, dm):
        self.dm = dm
        self.xi = dm.xi
        self.plain = cumtrapz_edges(dm.sigmaT, dm.xi.dxi)

    def weighted(self, psi):
        """Table of the sqrt(psi)-weighted antiderivative; psi >= 0 on [0,1]."""
        w = np.asarray(compile_expr(psi)(xi=self.xi.edges), dtype=float)
        w = np.broadcast_to(w, self.xi.edges.shape)
        if np.any(w < 0):
            raise ModelError("psi must be nonnegative on [0,1]")
        return cumtrapz_edges(self.dm.sigmaT * np.sqrt(w), self.xi.dxi)

    def at(self, u, table=None):
        return xi_interp(self.plain if table is None else table, u, self.xi)


def beta_at(bf, u):
    return bf.at(u)


def beta_psi_at(bf, psi, u):
    return bf.at(u, table=bf.weighted(psi))


# --- geometry compatibility -------------------------------------------------

def compat_residual(fm, dm, M, xi_value):
    """Pointwise residual div f(., xi) - divdiv A(., xi) at one state value."""
    const = np.full(fm.grid.shape, float(xi_value))
    f_slice = xi_interp(fm.f, const, fm.xi)
    A_slice = dm.A_at_xi_value(xi_value)
    return geo.div_vector(f_slice, M) - geo.divdiv_tensor11(A_slice, M)


def compat_norms(fm, dm, M, xi_value):
    r = compat_residual(fm, dm, M, xi_value)
    return {"max": float(np.max(np.abs(r))), "l1": geo.norm_l1(r, M)}


def stream_vector(stream, M):
    """Divergence-free vector from a stream function: W^i = eps^{ij} d_j psi / sqrt|g|."""
    grid = M.grid
    if grid.d != 2:
        raise ModelError("stream functions require d = 2")
    psi = grid.eval_expr(stream)
    W = np.empty((2,) + grid.shape)
    W[0] = geo.ddx(psi, 1, grid.h) / M.sqrt_det
    W[1] = -geo.ddx(psi, 0, grid.h) / M.sqrt_det
    return W


def make_compatible_flux(dm, M, stream=None):
    """Manufacture a flux satisfying the compatibility condition.

    f(., xi) = (div A(., xi))# + W with W divergence-free; the two sides of
    the compatibility residual then agree analytically, so the audit sees
    pure stencil truncation.
    """
    grid, xi = dm.grid, dm.xi
    if stream is not None and grid.d != 2:
        raise ModelError("stream functions require d = 2")
    f = np.zeros((grid.d,) + grid.shape + (xi.n + 1,))
    for b in range(xi.n + 1):
        f[..., b] = geo.sharp(geo.div_tensor11(dm.A_at_xi(b), M), M)
    if stream is not None:
        f += stream_vector(stream, M)[..., None]
    return FluxModel(grid, xi, f)


def psd_audit(dm, M, n_dirs=8, seed=0):
    """Minimum of <a' v, v>_g over nodes, xi-samples and random directions."""
    rng = np.random.default_rng(seed)
    d = dm.grid.d
    worst = np.inf
    g_a = np.einsum("ij...,jk...z->ik...z", M.g, dm.aprime)
    for _ in range(n_dirs):
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        quad = np.einsum("i,ik...z,k->...z", v, g_a, v)
        worst = min(worst, float(np.min(quad)))
    return {"min_quadratic_form": worst, "n_dirs": n_dirs, "seed": seed}
