"""Kinetic function machinery: level-set fields, mollification, residuals.

The kinetic function of a state field u is the indicator chi(x, b) = 1
where the xi-bin center lies at or below u(x).  Mollification kernels are
polynomial bumps; the xi and t kernels are one-sided (support in (-1,0)),
the spatial kernel symmetric.  Delta distributions in xi are realized by
the same two-bin hat deposition the dissipation ledger uses.
"""

from __future__ import annotations

import numpy as np

from . import geometry as geo
from .entropy import dissipation_densities
from .exprparse import compile_expr


class KineticError(ValueError):
    pass


# --- kinetic function ---------------------------------------------------------

def chi_from_u(u, xi):
    """Binary kinetic function on grid x bin-centers (bin-center rule)."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0):
        raise KineticError("kinetic function requires nonnegative states")
    return (xi.centers <= u[..., None]).astype(float)


def u_from_chi(chi, xi):
    """Reconstruct the state: dxi * sum of chi over bins."""
    return xi.dxi * np.sum(chi, axis=-1)


def reconstruct(hprime, chi, xi):
    """Evaluate h(x, u(x)) for h(x,0)=0 from h' sampled on the bin centers."""
    hprime = np.asarray(hprime, dtype=float)
    return xi.dxi * np.sum(hprime * chi, axis=-1)


def contraction(chi_a, chi_b, M, xi):
    """Ordering functional: integral of chi_a (1 - chi_b) over chart x state."""
    per_node = xi.dxi * np.sum(chi_a * (1.0 - chi_b), axis=-1)
    return geo.integrate(per_node, M)


# --- mollifier ----------------------------------------------------------------

def _bump(s):
    """C^3 polynomial bump on (-1,1), unnormalized."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    out = np.zeros_like(s)
    out[inside] = (1.0 - s[inside] ** 2) ** 4
    return out


def bump_symmetric(s):
    """Unit-mass bump supported in (-1,1)."""
    return _bump(s) * (315.0 / 256.0)


def bump_left(s):
    """Unit-mass bump supported in (-1,0): shifted, squeezed symmetric bump."""
    return 2.0 * bump_symmetric(2.0 * s + 1.0)


class Mollifier:
    """Scales and discrete kernels for (t, x, xi) smoothing."""

    KINDS = {"x": ("sym", "wrap"), "t": ("left", "clamp"), "xi": ("left", "zero")}

    def __init__(self, eps, delta):
        if eps <= 0 or delta <= 0:
            raise KineticError("mollifier scales must be positive")
        self.eps = float(eps)
        self.delta = float(delta)

    def scale_for(self, kind):
        return self.delta if kind == "xi" else self.eps

    def kernel(self, kind, spacing):
        """Discrete unit-mass weights w[m], m = -R..R, for one axis."""
        profile, _ = self.KINDS[kind]
        scale = self.scale_for(kind)
        if scale < 2.0 * spacing:
            raise KineticError(
                f"{kind}-kernel narrower than 2 cells (scale {scale:.3g}, spacing {spacing:.3g})")
        R = int(np.floor(scale / spacing + 1e-12))
        m = np.arange(-R, R + 1)
        s = m * spacing / scale
        w = bump_symmetric(s) if profile == "sym" else bump_left(s)
        total = w.sum()
        if total <= 0:
            raise KineticError(f"degenerate {kind}-kernel")
        return m, w / total


def _convolve_axis(F, offsets, weights, axis, mode):
    """out[i] = sum_m F[i - m] w[m] along one axis, with wrap/clamp/zero edges."""
    if mode == "wrap":
        out = np.zeros_like(F)
        for m, w in zip(offsets, weights):
            if w != 0.0:
                out += w * np.roll(F, m, axis)
        return out
    R = int(np.max(np.abs(offsets)))
    pad = [(0, 0)] * F.ndim
    pad[axis] = (R, R)
    Fp = np.pad(F, pad, mode="edge" if mode == "clamp" else "constant")
    out = np.zeros_like(Fp)
    for m, w in zip(offsets, weights):
        if w != 0.0:
            out += w * np.roll(Fp, m, axis)
    sl = [slice(None)] * F.ndim
    sl[axis] = slice(R, R + F.shape[axis])
    return out[tuple(sl)]


def mollify(F, moll, axes):
    """Smooth an array along the given axes.

    axes: sequence of (axis_index, kind, spacing) with kind in {x, t, xi}.
    x-axes wrap periodically; the t-axis clamps at the ends; the xi-axis is
    zero-extended (kinetic functions have compact state support).
    """
    out = np.asarray(F, dtype=float)
    for axis, kind, spacing in axes:
        offsets, weights = moll.kernel(kind, spacing)
        _, mode = Mollifier.KINDS[kind]
        out = _convolve_axis(out, offsets, weights, axis, mode)
    return out


# --- hat-deposited delta distributions ----------------------------------------

def hat_delta_density(values, centers_start, n_centers, dxi):
    """Density of delta(xi - value) on a center lattice via two-bin hats.

    centers_start: value of the first center.  Returns shape
    values.shape + (n_centers,); rows sum to 1/dxi * dxi = unit mass.
    """
    values = np.asarray(values, dtype=float)
    pos = (values - centers_start) / dxi
    i0 = np.floor(pos).astype(int)
    w = pos - i0
    out = np.zeros(values.shape + (n_centers,))
    j0 = np.clip(i0, 0, n_centers - 1)
    j1 = np.clip(i0 + 1, 0, n_centers - 1)
    np.put_along_axis(out, j0[..., None], ((1.0 - w) / dxi)[..., None], -1)
    extra = np.take_along_axis(out, j1[..., None], -1)[..., 0] + w / dxi
    np.put_along_axis(out, j1[..., None], extra[..., None], -1)
    return out


def dchi_identity_check(u, phi, moll, xi, grid):
    """Consistency of the state-derivative identity for mollified kinetics.

    Compares the xi-derivative of the mollified (phi * chi) against the
    difference of hat-deposited deltas at 0 and at u, both smoothed by the
    same kernels.  Returns the max-norm discrepancy on an extended state
    axis that covers the boundary layer below 0.
    """
    u = np.asarray(u, dtype=float)
    n_ext = int(np.ceil(moll.delta / xi.dxi)) + 4
    centers_start = -(n_ext - 0.5) * xi.dxi
    n_total = n_ext + xi.n
    centers = centers_start + np.arange(n_total) * xi.dxi

    chi = ((centers >= 0.0) & (centers <= u[..., None])).astype(float)
    axes = [(i, "x", grid.h) for i in range(grid.d)] + [(grid.d, "xi", xi.dxi)]

    smoothed = mollify(phi[..., None] * chi, moll, axes)
    lhs = np.zeros_like(smoothed)
    lhs[..., 1:-1] = (smoothed[..., 2:] - smoothed[..., :-2]) / (2.0 * xi.dxi)

    d0 = hat_delta_density(np.zeros(grid.shape), centers_start, n_total, xi.dxi)
    du = hat_delta_density(u, centers_start, n_total, xi.dxi)
    rhs = mollify(phi[..., None] * (d0 - du), moll, axes)
    return float(np.max(np.abs(lhs[..., 1:-1] - rhs[..., 1:-1])))


# --- kinetic test battery ------------------------------------------------------

class KineticTestFn:
    """Separable space-time-state test function with coded derivatives."""

    def __init__(self, grid, xi, x_profile, t_coeffs, xi_center, xi_radius):
        self.x_profile = x_profile  # ScalarField
        a, b, omega = t_coeffs
        self._t = lambda t: a + b * np.cos(omega * t)
        self._dt = lambda t: -b * omega * np.sin(omega * t)
        s = (xi.centers - xi_center) / xi_radius
        inside = np.abs(s) < 1.0
        prof = np.zeros_like(s)
        prof[inside] = (1.0 - s[inside] ** 2) ** 2
        dprof = np.zeros_like(s)
        dprof[inside] = -4.0 * s[inside] * (1.0 - s[inside] ** 2) / xi_radius
        self.xi_profile = prof
        self.dxi_profile = dprof
        self.xi_center = xi_center
        self.xi_radius = xi_radius

    def value(self, t):
        return self._t(t) * self.x_profile[..., None] * self.xi_profile

    def dt(self, t):
        return self._dt(t) * self.x_profile[..., None] * self.xi_profile

    def dxi(self, t):
        return self._t(t) * self.x_profile[..., None] * self.dxi_profile

    def dxi_at_values(self, t, values):
        """d_xi psi evaluated at off-lattice state values (exact profile)."""
        s = (np.asarray(values) - self.xi_center) / self.xi_radius
        dprof = np.where(np.abs(s) < 1.0, -4.0 * s * (1.0 - s ** 2) / self.xi_radius, 0.0)
        return self._t(t) * self.x_profile * dprof


def kinetic_battery(grid, xi, seed=0, count=5, t_scale=1.0):
    """Deterministic battery of smooth test functions, compact in state."""
    rng = np.random.default_rng(seed)
    xs = grid.coords()
    battery = []
    for _ in range(count):
        prof = np.ones(grid.shape)
        for x in xs:
            k = int(rng.integers(1, 3))
            shift = rng.uniform(0.0, 1.0)
            amp = rng.uniform(0.3, 0.8)
            prof = prof * (1.0 + amp * np.sin(2.0 * np.pi * k * (x + shift)))
        t_coeffs = (rng.uniform(0.6, 1.2), rng.uniform(0.2, 0.6),
                    rng.uniform(0.5, 2.0) * np.pi / max(t_scale, 1e-12))
        center = rng.uniform(0.4, 0.6)
        radius = rng.uniform(0.25, 0.34)
        battery.append(KineticTestFn(grid, xi, prof, t_coeffs, center, radius))
    return battery


# --- weak residual of the kinetic equation -------------------------------------

def kinetic_residual(traj, fm, dm, M, xi, battery, include_measures=True):
    """Max weak residual of the kinetic equation over a test battery.

    Time integrals use the trapezoid rule on the stored snapshots; space
    operators are the discrete geometry operators applied per state bin;
    the measure term pairs per-node dissipation densities with the exact
    state derivative of the test function at u(x).
    """
    grid = M.grid
    eta = traj.eta
    times = np.asarray(traj.times)
    n_snap = len(times)
    w_t = np.zeros(n_snap)
    w_t[1:] += 0.5 * np.diff(times)
    w_t[:-1] += 0.5 * np.diff(times)

    fprime_centers = 0.5 * (fm.fprime[..., 1:] + fm.fprime[..., :-1])
    aprime_centers = 0.5 * (dm.aprime[..., 1:] + dm.aprime[..., :-1])
    cell = M.sqrt_det * grid.h ** grid.d

    residuals = np.zeros(len(battery))
    chi0 = chi_from_u(traj.snapshots[0], xi)
    chiT = chi_from_u(traj.u_final, xi)
    for i, psi in enumerate(battery):
        residuals[i] = (np.sum(chiT * psi.value(times[-1]) * cell[..., None]) -
                        np.sum(chi0 * psi.value(times[0]) * cell[..., None])) * xi.dxi

    for k, (t, u) in enumerate(zip(times, traj.snapshots)):
        chi = chi_from_u(u, xi)
        transport = np.empty(grid.shape + (xi.n,))
        diffusion = np.empty(grid.shape + (xi.n,))
        for b in range(xi.n):
            transport[..., b] = geo.div_vector(chi[..., b] * fprime_centers[..., b], M)
            diffusion[..., b] = geo.divdiv_tensor11(chi[..., b] * aprime_centers[..., b], M)
        if include_measures:
            m_density, n_density = dissipation_densities(u, dm, M, eta)
            total_density = m_density + n_density
        for i, psi in enumerate(battery):
            val = psi.value(t)
            term = -np.sum(chi * psi.dt(t) * cell[..., None]) * xi.dxi
            term += np.sum(transport * val * cell[..., None]) * xi.dxi
            term -= np.sum(diffusion * val * cell[..., None]) * xi.dxi
            if include_measures:
                term += np.sum(total_density * psi.dxi_at_values(t, u) * cell)
            residuals[i] += w_t[k] * term

    return float(np.max(np.abs(residuals)))


# --- Friedrichs commutator demo -------------------------------------------------

def friedrichs_commutator(a, v, eps_list, grid):
    """Commutator decay table for smoothing vs. multiplication.

    For each scale: the coefficient commutator (a dv)*k - a (dv*k) and the
    product-rule commutator d(av)*k - d(a (v*k)), both in the flat L1 norm.
    Derivatives are central differences along the first axis; kernels are
    the symmetric bump, periodic wrap.
    """
    a_field = grid.eval_expr(a) if not isinstance(a, np.ndarray) else a
    v = np.asarray(v, dtype=float)
    h = grid.h
    cellvol = h ** grid.d
    dv = geo.ddx(v, 0, h)
    table = []
    for eps in eps_list:
        moll = Mollifier(eps=eps, delta=1.0)
        offsets, weights = moll.kernel("x", h)

        def smooth(F):
            out = F
            for axis in range(grid.d):
                out = _convolve_axis(out, offsets, weights, axis, "wrap")
            return out

        coef = smooth(a_field * dv) - a_field * smooth(dv)
        prod = smooth(geo.ddx(a_field * v, 0, h)) - geo.ddx(a_field * smooth(v), 0, h)
        table.append({
            "eps": float(eps),
            "l1_coefficient": float(np.sum(np.abs(coef)) * cellvol),
            "l1_product_rule": float(np.sum(np.abs(prod)) * cellvol),
        })
    return table
