"""Batch front door: scenario configs in, runs and reports out.

Config files are flat INI-style text: [section] headers, key = value lines,
expression values quoted.  Commands:

    maniflow run          <config> [--out DIR] [--override sec.key=value ...]
    maniflow audit-compat <config> ...
    maniflow study-eta    <config> ...
    maniflow uniqueness   <config> ...

Exit codes: 0 success, 1 runtime failure or flagged invariant violation,
2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, catalog, entropy, fieldio, kinetic
from .geometry import ChartGrid, GeometryError, build_metric, norm_l1
from .model import (BetaFamily, DiffusionModel, FluxModel, ModelError, XiGrid,
                    compat_norms, make_compatible_flux, psd_audit)
from .solver import SolverConfig, SolverError, run, total_variation


class ConfigError(ValueError):
    pass


# --- config parsing -----------------------------------------------------------

def _strip_comment(line):
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch in "#;" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def _parse_value(text):
    text = text.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config(text):
    """Parse INI-like text into {section: {key: value}}."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw!r}")
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        sections[current][key.strip()] = _parse_value(value)
    return sections


def load_config(path, overrides=()):
    try:
        with open(path) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        cfg.setdefault(section, {})[key.strip()] = _parse_value(value)
    return cfg


def _need(cfg, section, key, kind=None, default=None):
    try:
        value = cfg[section][key]
    except KeyError:
        if default is not None:
            return default
        raise ConfigError(f"missing [{section}] {key}") from None
    if kind is not None and not isinstance(value, kind):
        if kind is float and isinstance(value, int):
            return float(value)
        raise ConfigError(f"[{section}] {key} must be {kind.__name__}, got {value!r}")
    return value


def _listify(value, conv=float):
    if isinstance(value, (int, float)):
        return [conv(value)]
    return [conv(_parse_value(part)) for part in str(value).split(",") if part.strip()]


# --- pipeline -----------------------------------------------------------------

class Pipeline:
    """Everything built from a validated config, ready to run."""

    def __init__(self, cfg):
        d = _need(cfg, "grid", "d", int)
        n = _need(cfg, "grid", "n", int)
        if d not in (1, 2):
            raise ConfigError(f"[grid] d must be 1 or 2, got {d}")
        if n < 16 or n & (n - 1):
            raise ConfigError(f"[grid] n must be a power of two >= 16, got {n}")
        n_xi = _need(cfg, "xi", "n", int, default=64)
        if n_xi < 16:
            raise ConfigError(f"[xi] n must be >= 16, got {n_xi}")

        metric_cfg = cfg.get("metric", {})
        if "name" in metric_cfg:
            entry = catalog.METRICS.get(metric_cfg["name"])
            if entry is None:
                raise ConfigError(f"[metric] unknown catalog name {metric_cfg['name']!r}")
            if entry["d"] != d:
                raise ConfigError(
                    f"[metric] catalog metric {metric_cfg['name']!r} is {entry['d']}d, grid is {d}d")
            entries = entry["entries"]
        else:
            entries = [[None] * d for _ in range(d)]
            for i in range(d):
                for j in range(d):
                    key = f"g{i + 1}{j + 1}"
                    alt = f"g{j + 1}{i + 1}"
                    entries[i][j] = metric_cfg.get(key, metric_cfg.get(alt))
                    if entries[i][j] is None:
                        raise ConfigError(f"[metric] missing entry {key}")

        sc = cfg.get("scenario", {})
        sigma = [[sc.get(f"sigma{k + 1}{i + 1}", "0") for i in range(d)] for k in range(d)]
        u0_expr = sc.get("u0")
        if u0_expr is None:
            raise ConfigError("[scenario] missing u0")

        eta = float(_need(cfg, "solver", "eta", float))
        if eta <= 0:
            raise ConfigError(f"[solver] eta must be positive, got {eta}")
        t_end = float(_need(cfg, "solver", "t_end", float))
        cfl = float(_need(cfg, "solver", "cfl", float, default=0.4))
        if not 0 < cfl <= 1:
            raise ConfigError(f"[solver] cfl must be in (0,1], got {cfl}")
        scheme = _need(cfg, "solver", "scheme", str, default="heun")
        if scheme not in ("euler", "heun"):
            raise ConfigError(f"[solver] unknown scheme {scheme!r}")
        n_snapshots = _need(cfg, "solver", "snapshots", int, default=10)

        self.cfg = cfg
        self.grid = ChartGrid(d, n)
        try:
            self.M = build_metric(entries, self.grid)
        except GeometryError as exc:
            raise ConfigError(f"[metric] {exc}") from exc
        self.xi = XiGrid(n_xi)
        try:
            self.dm = DiffusionModel.from_exprs(sigma, self.grid, self.xi, self.M)
            if sc.get("compatible", False):
                stream = sc.get("stream")
                if stream is not None and d != 2:
                    raise ConfigError("[scenario] stream functions require d = 2")
                self.fm = make_compatible_flux(self.dm, self.M, stream=stream)
            else:
                flux = [sc.get(f"flux{k + 1}", "0") for k in range(d)]
                prime = None
                if any(f"flux_prime{k + 1}" in sc for k in range(d)):
                    prime = [sc.get(f"flux_prime{k + 1}", "0") for k in range(d)]
                self.fm = FluxModel.from_exprs(flux, self.grid, self.xi, prime_exprs=prime)
        except ModelError as exc:
            raise ConfigError(f"[scenario] {exc}") from exc
        self.u0 = self.grid.eval_expr(u0_expr)
        if np.any(self.u0 < 0) or np.any(self.u0 > 1):
            raise ConfigError("[scenario] u0 must take values in [0,1]")
        self.solver_cfg = SolverConfig(eta=eta, t_end=t_end, cfl=cfl, scheme=scheme,
                                       n_snapshots=n_snapshots)
        diag = cfg.get("diagnostics", {})
        self.battery_seed = int(diag.get("battery_seed", 0))
        self.battery_count = int(diag.get("battery_count", 5))
        self.psi_list = [p.strip() for p in str(diag.get("psi", "1, xi")).split(",")]
        self.eps = float(diag.get("eps", 8 * self.grid.h))
        self.delta = float(diag.get("delta", 8 * self.xi.dxi))

    def run(self, record_dissipation=True):
        return run(self.solver_cfg, self.fm, self.dm, self.M, self.u0, self.xi,
                   record_dissipation=record_dissipation)


def build_pipeline(cfg):
    return Pipeline(cfg)


# --- report helpers -------------------------------------------------------------

def _json_dump(obj, path):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(f"not JSON-serializable: {type(o)}")

    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=default)
        fh.write("\n")


def _write_monitors(traj, path):
    with open(path, "w") as fh:
        fh.write("t,mass,min,max,energy\n")
        for k in range(len(traj.monitor_t)):
            fh.write(",".join(format(v, ".17g") for v in (
                traj.monitor_t[k], traj.mass[k], traj.u_min[k],
                traj.u_max[k], traj.energy[k])) + "\n")


def _write_ledger(traj, u0, M, path):
    nu = entropy.nu_profile(u0, M, traj.ledger.xi)
    with open(path, "w") as fh:
        fh.write("xi_bin_center,M_b,N_b,nu\n")
        for b, c in enumerate(traj.ledger.xi.centers):
            fh.write(",".join(format(v, ".17g") for v in (
                c, traj.ledger.bins_m[b], traj.ledger.bins_n[b], nu[b])) + "\n")


# --- commands --------------------------------------------------------------------

def cmd_run(cfg, out_dir):
    pipe = build_pipeline(cfg)
    traj = pipe.run()

    report = {"version": __version__, "command": "run"}
    violations = []

    balance = entropy.energy_balance(traj, pipe.M)
    report["energy_balance"] = balance

    battery = entropy.spatial_battery(pipe.grid, seed=pipe.battery_seed,
                                      count=pipe.battery_count)
    ent_res = {}
    for S in (entropy.identity_entropy(), entropy.square_entropy()):
        ent_res[S.name] = entropy.entropy_residual(
            traj.snapshots[-2], traj.snapshots[-1],
            traj.times[-1] - traj.times[-2], S,
            pipe.fm, pipe.dm, pipe.M, traj.eta, battery)
    report["entropy_residuals"] = ent_res

    bf = BetaFamily(pipe.dm)
    report["chain_rule_residuals"] = {
        p: entropy.chain_rule_residual(traj.u_final, p, pipe.dm, pipe.M, bf=bf)
        for p in pipe.psi_list}

    nu_check = entropy.nu_bound_check(traj.ledger, pipe.u0, pipe.M)
    report["nu_bound"] = {k: nu_check[k] for k in ("pass", "worst_bin", "worst_excess")}
    if not nu_check["pass"]:
        violations.append("nu_bound")

    audit = psd_audit(pipe.dm, pipe.M)
    report["psd_audit"] = audit
    if audit["min_quadratic_form"] < -1e-10:
        violations.append("psd")

    if np.any(traj.ledger.bins_m < 0) or np.any(traj.ledger.bins_n < 0):
        violations.append("ledger_negative")

    kin_battery = kinetic.kinetic_battery(pipe.grid, pipe.xi, seed=pipe.battery_seed,
                                          count=pipe.battery_count,
                                          t_scale=pipe.solver_cfg.t_end)
    kin_res = kinetic.kinetic_residual(traj, pipe.fm, pipe.dm, pipe.M, pipe.xi, kin_battery)
    report["kinetic_residual"] = kin_res
    report["violations"] = violations

    if out_dir:
        fieldio.ensure_dir(out_dir)
        _write_monitors(traj, f"{out_dir}/monitors.csv")
        _write_ledger(traj, pipe.u0, pipe.M, f"{out_dir}/ledger.csv")
        fieldio.write_csv(traj.u_final, pipe.grid, f"{out_dir}/u_final.csv")
        fieldio.write_raw(traj.u_final, pipe.grid, f"{out_dir}/u_final.f64")
        _json_dump(report, f"{out_dir}/report.json")
        xs = pipe.grid.coords()[0]
        jump = ((xs >= 0.25) & (xs < 0.75)).astype(float)
        decay = kinetic.friedrichs_commutator(
            "1 + 0.5*sin(2*pi*x1)", jump,
            [32 * pipe.grid.h, 16 * pipe.grid.h, 8 * pipe.grid.h, 4 * pipe.grid.h],
            pipe.grid)
        _json_dump({"version": __version__,
                    "max_residual": kin_res,
                    "friedrichs": decay}, f"{out_dir}/kinetic_report.json")

    print(json.dumps(report, sort_keys=True, default=str))
    return 1 if violations else 0


def cmd_audit_compat(cfg, out_dir):
    pipe = build_pipeline(cfg)
    audit_cfg = cfg.get("audit", {})
    samples = _listify(audit_cfg.get("xi_samples", "0, 0.5, 1"))
    tol_factor = float(audit_cfg.get("tol_factor", 10.0))
    scale = float(audit_cfg.get("scale", 1.0))
    threshold = tol_factor * pipe.grid.h ** 2 * scale

    rows = []
    ok = True
    for s in samples:
        norms = compat_norms(pipe.fm, pipe.dm, pipe.M, s)
        passed = norms["max"] <= threshold
        ok = ok and passed
        rows.append({"xi": s, "max": norms["max"], "l1": norms["l1"], "pass": passed})
        print(f"xi={s:6.3f}  max={norms['max']:.6e}  l1={norms['l1']:.6e}  "
              f"{'pass' if passed else 'FAIL'}")
    print(f"threshold {threshold:.6e}")
    report = {"version": __version__, "command": "audit-compat",
              "threshold": threshold, "rows": rows, "pass": ok}
    if out_dir:
        fieldio.ensure_dir(out_dir)
        _json_dump(report, f"{out_dir}/report.json")
    return 0 if ok else 1


def cmd_study_eta(cfg, out_dir):
    pipe_cfg = cfg
    etas = _listify(_need(cfg, "study", "eta_list", default="0.04, 0.02, 0.01"))
    finals = []
    monitors = {}
    M = None
    for eta in etas:
        sub = {k: dict(v) for k, v in pipe_cfg.items()}
        sub.setdefault("solver", {})["eta"] = eta
        pipe = build_pipeline(sub)
        traj = pipe.run(record_dissipation=False)
        finals.append(traj.u_final)
        monitors[f"eta={eta:g}"] = {
            "tv_final": total_variation(traj.u_final),
            "mass_drift": float(traj.mass[-1] - traj.mass[0]),
            "min": float(np.min(traj.u_min)), "max": float(np.max(traj.u_max)),
        }
        M = pipe.M
    diffs = []
    for a in range(len(etas) - 1):
        diffs.append({"eta_hi": etas[a], "eta_lo": etas[a + 1],
                      "l1_diff": norm_l1(finals[a] - finals[a + 1], M)})
    for row in diffs:
        print(f"|u({row['eta_hi']:g}) - u({row['eta_lo']:g})|_L1 = {row['l1_diff']:.6e}")
    report = {"version": __version__, "command": "study-eta",
              "etas": etas, "pairwise_l1": diffs, "monitors": monitors}
    if out_dir:
        fieldio.ensure_dir(out_dir)
        _json_dump(report, f"{out_dir}/report.json")
    return 0


def cmd_uniqueness(cfg, out_dir):
    cfls = _listify(_need(cfg, "uniqueness", "cfl_list", default="0.4, 0.2"))
    if len(cfls) < 2:
        raise ConfigError("[uniqueness] cfl_list needs at least two entries")
    trajectories = []
    pipe = None
    for c in cfls:
        sub = {k: dict(v) for k, v in cfg.items()}
        sub.setdefault("solver", {})["cfl"] = c
        pipe = build_pipeline(sub)
        trajectories.append(pipe.run(record_dissipation=False))
    series = []
    base = trajectories[0]
    for other_idx in range(1, len(trajectories)):
        other = trajectories[other_idx]
        k_max = min(len(base.snapshots), len(other.snapshots))
        rows = []
        for k in range(k_max):
            chi_a = kinetic.chi_from_u(base.snapshots[k], pipe.xi)
            chi_b = kinetic.chi_from_u(other.snapshots[k], pipe.xi)
            rows.append({
                "t": base.times[k],
                "forward": kinetic.contraction(chi_a, chi_b, pipe.M, pipe.xi),
                "backward": kinetic.contraction(chi_b, chi_a, pipe.M, pipe.xi),
            })
        series.append({"cfl_pair": [cfls[0], cfls[other_idx]],
                       "dt_pair": [base.dt, other.dt], "rows": rows})
        for row in rows:
            print(f"t={row['t']:.4f}  contraction forward {row['forward']:.6e}  "
                  f"backward {row['backward']:.6e}")
    report = {"version": __version__, "command": "uniqueness", "series": series}
    if out_dir:
        fieldio.ensure_dir(out_dir)
        _json_dump(report, f"{out_dir}/kinetic_report.json")
    return 0


# --- entry point ------------------------------------------------------------------

def main(argv=None):
    parser = argparse.ArgumentParser(prog="maniflow", description=__doc__)
    parser.add_argument("command",
                        choices=["run", "audit-compat", "study-eta", "uniqueness"])
    parser.add_argument("config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--override", action="append", default=[],
                        metavar="SEC.KEY=VALUE")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, overrides=args.override)
        handler = {"run": cmd_run, "audit-compat": cmd_audit_compat,
                   "study-eta": cmd_study_eta, "uniqueness": cmd_uniqueness}[args.command]
        return handler(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, ModelError, GeometryError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
