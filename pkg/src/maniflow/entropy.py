"""Entropy identity residuals, dissipation bookkeeping and balance checks.

Two dissipation densities are tracked per time step:

    viscous:    eta * |grad u|_g^2
    degenerate: |w|_g^2  with  w_i = (sigma^t(x, u(x)))^j_i d_j u(x)

Each node deposits its weight (density * sqrt|g| * h^d * dt) into the two
xi-bins nearest to u(x) with linear hat weights, which conserves the total
deposited mass exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .model import cumtrapz_edges, xi_interp
from .exprparse import compile_expr


@dataclass
class EntropyFn:
    """Twice-differentiable state functional with S(0) = 0."""
    s: object
    ds: object
    d2s: object
    name: str = "entropy"
    convex: bool = True

    def __post_init__(self):
        if abs(float(self.s(0.0))) > 1e-12:
            raise ValueError(f"{self.name}: S(0) must vanish")

    def on(self, values):
        return np.asarray(self.s(np.asarray(values, dtype=float)))


def square_entropy():
    return EntropyFn(lambda v: 0.5 * v * v, lambda v: v, lambda v: np.ones_like(np.asarray(v, dtype=float)),
                     name="half-square")


def identity_entropy():
    return EntropyFn(lambda v: v, lambda v: np.ones_like(np.asarray(v, dtype=float)),
                     lambda v: np.zeros_like(np.asarray(v, dtype=float)),
                     name="identity", convex=False)


def quartic_entropy():
    return EntropyFn(lambda v: 0.25 * v ** 4, lambda v: v ** 3, lambda v: 3.0 * v * v,
                     name="quarter-quartic")


class DissipationLedger:
    """xi-binned accumulators for the viscous and degenerate dissipation."""

    def __init__(self, xi):
        self.xi = xi
        self.bins_m = np.zeros(xi.n)
        self.bins_n = np.zeros(xi.n)

    def hat_weights(self, values):
        """Two-bin linear deposition indices/weights for an array of states."""
        xi = self.xi
        pos = np.asarray(values) / xi.dxi - 0.5
        i0 = np.floor(pos).astype(int)
        w1 = pos - i0
        # edge bins absorb out-of-range deposits so total mass is conserved
        j0 = np.clip(i0, 0, xi.n - 1)
        j1 = np.clip(i0 + 1, 0, xi.n - 1)
        return j0, j1, w1

    def add(self, values, weights_m, weights_n):
        j0, j1, w1 = self.hat_weights(values)
        np.add.at(self.bins_m, j0.ravel(), ((1.0 - w1) * weights_m).ravel())
        np.add.at(self.bins_m, j1.ravel(), (w1 * weights_m).ravel())
        np.add.at(self.bins_n, j0.ravel(), ((1.0 - w1) * weights_n).ravel())
        np.add.at(self.bins_n, j1.ravel(), (w1 * weights_n).ravel())

    @property
    def total_m(self):
        return float(np.sum(self.bins_m))

    @property
    def total_n(self):
        return float(np.sum(self.bins_n))


def dissipation_densities(u, dm, M, eta):
    """Per-node viscous and degenerate dissipation densities at state u."""
    grid = M.grid
    du = np.stack([geo.ddx(u, i, grid.h) for i in range(grid.d)])
    m_density = eta * geo.oneform_norm_sq(du, M)
    sT = dm.sigmaT_at(u)
    w = np.einsum("ji...,j...->i...", sT, du)
    n_density = geo.oneform_norm_sq(w, M)
    return m_density, n_density


def deposit(u, dm, M, eta, dt, ledger):
    """One accepted step: bin the dissipation weights at the state values."""
    grid = M.grid
    m_density, n_density = dissipation_densities(u, dm, M, eta)
    cell = M.sqrt_det * grid.h ** grid.d * dt
    ledger.add(u, m_density * cell, n_density * cell)


# --- entropy flux fields and the weak residual ------------------------------

def entropy_flux_fields(u, S, fm, dm, M):
    """Integrals of f' S' and a' S' from 0 to u(x), one consistent path.

    Returns (VectorField, Tensor11Field).  Both use the cumulative
    trapezoid on the xi edges followed by linear interpolation at u, the
    same convention as the coefficient tables themselves.
    """
    xi = fm.xi
    sp = np.asarray(S.ds(xi.edges), dtype=float)
    flux_table = cumtrapz_edges(fm.fprime * sp, xi.dxi)
    diff_table = cumtrapz_edges(dm.aprime * sp, xi.dxi)
    return xi_interp(flux_table, u, xi), xi_interp(diff_table, u, xi)


def _binned_s2_dissipation(u, S, dm, M, eta, xi):
    """integral of S''(xi) (n+m)(., xi) dxi realized through the hat bins."""
    m_density, n_density = dissipation_densities(u, dm, M, eta)
    total = m_density + n_density
    ledger = DissipationLedger(xi)
    j0, j1, w1 = ledger.hat_weights(u)
    s2 = np.asarray(S.d2s(xi.centers), dtype=float)
    return total * ((1.0 - w1) * s2[j0] + w1 * s2[j1])


def entropy_residual(u_prev, u_next, dt, S, fm, dm, M, eta, battery):
    """Weak residual of the entropy identity on one snapshot pair.

    battery: iterable of spatial test profiles (ScalarFields).  Returns the
    max absolute residual over the battery.
    """
    xi = fm.xi
    u_mid = 0.5 * (u_prev + u_next)
    dS_dt = (S.on(u_next) - S.on(u_prev)) / dt
    flux_field, diff_field = entropy_flux_fields(u_mid, S, fm, dm, M)
    strong = (dS_dt
              + geo.div_vector(flux_field, M)
              - geo.divdiv_tensor11(diff_field, M)
              - eta * geo.laplace_beltrami(S.on(u_mid), M)
              + _binned_s2_dissipation(u_mid, S, dm, M, eta, xi))
    worst = 0.0
    for phi in battery:
        worst = max(worst, abs(geo.integrate(phi * strong, M)))
    return worst


def spatial_battery(grid, seed=0, count=5):
    """Deterministic battery of smooth periodic test profiles."""
    rng = np.random.default_rng(seed)
    xs = grid.coords()
    battery = []
    for _ in range(count):
        phi = np.ones(grid.shape)
        for x in xs:
            k = int(rng.integers(1, 3))
            shift = rng.uniform(0.0, 1.0)
            amp = rng.uniform(0.3, 0.9)
            phi = phi * (1.0 + amp * np.sin(2.0 * np.pi * k * (x + shift)))
        battery.append(phi)
    return battery


# --- energy balance ----------------------------------------------------------

def energy_balance(traj, M):
    """Finite-horizon balance: dissipated totals vs. half-square energy drop.

    residual = total(m) + total(n) + E(T) - E(0) with E = integral of u^2/2.
    The infinite-horizon statement has no terminal term; on a closed domain
    with conserved mass the terminal energy does not vanish, so the report
    keeps it and the residual measures the finite-horizon identity.
    """
    e0 = geo.integrate(0.5 * traj.snapshots[0] ** 2, M)
    eT = geo.integrate(0.5 * traj.u_final ** 2, M)
    dissipated = traj.ledger.total_m + traj.ledger.total_n
    residual = dissipated + eT - e0
    return {
        "initial_energy": e0,
        "final_energy": eT,
        "total_viscous": traj.ledger.total_m,
        "total_degenerate": traj.ledger.total_n,
        "residual": residual,
        "relative_residual": abs(residual) / e0 if e0 > 0 else 0.0,
    }


# --- chain rule ---------------------------------------------------------------

def chain_rule_residual(u, psi, dm, M, bf=None):
    """L2 norm of the chain-rule defect for a weight psi >= 0.

    lhs = div(B^psi(., u)) - [div B^psi(., xi)] interpolated at xi = u
    rhs = sqrt(psi(u)) * (same construction with the unweighted table)
    """
    from .model import BetaFamily

    xi = dm.xi
    if bf is None:
        bf = BetaFamily(dm)
    psi_fn = compile_expr(psi)
    table_w = bf.weighted(psi)
    table_p = bf.plain

    def defect(table):
        composite = geo.div_tensor11(xi_interp(table, u, xi), M)
        slices = np.empty((M.grid.d,) + M.grid.shape + (xi.n + 1,))
        for b in range(xi.n + 1):
            slices[..., b] = geo.div_tensor11(table[..., b], M)
        frozen = xi_interp(slices, u, xi)
        return composite - frozen

    lhs = defect(table_w)
    root = np.sqrt(np.maximum(np.asarray(psi_fn(xi=u), dtype=float), 0.0))
    rhs = root * defect(table_p)
    diff = lhs - rhs
    sq = geo.oneform_norm_sq(diff, M)
    return float(np.sqrt(max(geo.integrate(sq, M), 0.0)))


# --- measure bound ------------------------------------------------------------

def nu_profile(u0, M, xi):
    """nu(xi_b) = integral of (u0 - xi_b)_+ over the chart."""
    return np.array([geo.integrate(np.maximum(u0 - c, 0.0), M) for c in xi.centers])


def nu_bound_check(ledger, u0, M, safety=1.1, margin_bins=2.0):
    """Per-bin check of binned deposits against the initial-data profile.

    Passes when (M_b + N_b)/dxi <= safety * nu(xi_b) + margin, where the
    additive margin margin_bins * dxi * Vol(M) absorbs the hat-deposition
    smearing of at most one bin width.
    """
    xi = ledger.xi
    nu = nu_profile(u0, M, xi)
    density = (ledger.bins_m + ledger.bins_n) / xi.dxi
    margin = margin_bins * xi.dxi * M.volume()
    bound = safety * nu + margin
    ok = density <= bound
    return {
        "nu": nu,
        "density": density,
        "bound": bound,
        "pass": bool(np.all(ok)),
        "worst_bin": int(np.argmax(density - bound)),
        "worst_excess": float(np.max(density - bound)),
    }
