"""Configuration, subcommands, parameter sweeps, and structured output.

Config files are flat ``key = value`` text with dotted section prefixes
(blank lines and ``#`` comments allowed).  Every output file embeds the fully
resolved configuration and the package version, and identical configurations
produce bit-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass
from multiprocessing import Pool

import numpy as np

from . import __version__
from .cavity import Trajectory, builtin_gauge, couplings_for, export_couplings_csv
from .dynamics import (
    BogoliubovPair,
    evolve,
    extract_bogoliubov,
    initial_state,
    particle_number,
    particle_numbers,
    per_k_contributions,
)
from .errors import (
    BracketingError,
    ConfigError,
    DivergenceError,
    DomainError,
    InvariantError,
    PreconditionError,
    StiffnessError,
)
from .fock import build_out_vacuum, coefficient_C, verify_singlet
from .msa import detect_resonances, fit_loglog_slope, growth_rate, msa_closed_form, msa_evolve_reduced
from .specfun import Spectrum, default_table, normalize_bc

SUBCOMMANDS = ("spectrum", "couplings", "evolve", "msa", "compare", "singlet", "sweep")

_NUMERICAL_ERRORS = (DivergenceError, StiffnessError, BracketingError,
                     InvariantError, PreconditionError)


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------

@dataclass
class RunConfig:
    a0: float = 1.0
    epsilon: float = 0.01
    bc: str = "TE"
    ell: int = 1
    k0: int = 1
    P: int = 12
    t_f_periods: int = 40
    drive_omega: float | None = None
    drive_resonance: tuple | None = None        # (bc, L, N)
    integrator_tol: float = 1e-10
    gauge: str = "parabola"
    window_periods: int = 0
    resonance_tol: float | None = None
    msa_tau_f: float = 2.0
    msa_samples: int = 121
    fock_n_max: int = 24
    output_format: str = "csv"
    output_path: str = "-"
    output_stride: int = 16
    sweep_field: str | None = None
    sweep_start: float | None = None
    sweep_stop: float | None = None
    sweep_count: int = 5


_KEYMAP = {
    "a0": ("a0", float),
    "epsilon": ("epsilon", float),
    "bc": ("bc", str),
    "ell": ("ell", int),
    "k0": ("k0", int),
    "P": ("P", int),
    "t_f_periods": ("t_f_periods", int),
    "drive.omega": ("drive_omega", float),
    "drive.resonance": ("drive_resonance", "resonance"),
    "integrator.tol": ("integrator_tol", float),
    "gauge": ("gauge", str),
    "window_periods": ("window_periods", int),
    "resonance.tol": ("resonance_tol", float),
    "msa.tau_f": ("msa_tau_f", float),
    "msa.samples": ("msa_samples", int),
    "fock.n_max": ("fock_n_max", int),
    "output.format": ("output_format", str),
    "output.path": ("output_path", str),
    "output.stride": ("output_stride", int),
    "sweep.field": ("sweep_field", str),
    "sweep.start": ("sweep_start", float),
    "sweep.stop": ("sweep_stop", float),
    "sweep.count": ("sweep_count", int),
}

_SWEEPABLE = {"epsilon", "a0", "t_f_periods", "P", "k0", "ell",
              "drive.omega", "integrator.tol", "window_periods"}


def _parse_value(key: str, raw: str, kind, lineno: int):
    raw = raw.strip()
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind is str:
            return raw
        if kind == "resonance":
            parts = [p for chunk in raw.replace("{", " ").replace("}", " ").split(",")
                     for p in chunk.split()]
            if len(parts) != 3:
                raise ValueError
            return (normalize_bc(parts[0]), int(parts[1]), int(parts[2]))
    except (ValueError, DomainError):
        raise ConfigError(f"line {lineno}: bad value {raw!r} for key {key!r}") from None
    raise ConfigError(f"line {lineno}: unhandled type for {key!r}")


def parse_config(text: str) -> RunConfig:
    """Parse flat dotted-key config text; unknown keys are rejected with their line."""
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEYMAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, kind = _KEYMAP[key]
        setattr(cfg, attr, _parse_value(key, raw, kind, lineno))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig):
    positive = [("a0", cfg.a0), ("P", cfg.P), ("t_f_periods", cfg.t_f_periods),
                ("integrator.tol", cfg.integrator_tol), ("k0", cfg.k0),
                ("msa.tau_f", cfg.msa_tau_f), ("output.stride", cfg.output_stride)]
    for name, val in positive:
        if val is None or val <= 0:
            raise ConfigError(f"field {name!r} must be positive (got {val!r})")
    if cfg.epsilon < 0:
        raise ConfigError("field 'epsilon' must be non-negative")
    if cfg.ell < 0:
        raise ConfigError("field 'ell' must be >= 0")
    if cfg.window_periods < 0:
        raise ConfigError("field 'window_periods' must be >= 0")
    if cfg.drive_omega is not None and cfg.drive_omega <= 0:
        raise ConfigError("field 'drive.omega' must be positive")
    if cfg.drive_omega is not None and cfg.drive_resonance is not None:
        raise ConfigError("set either 'drive.omega' or 'drive.resonance', not both")
    if cfg.output_format not in ("csv", "json"):
        raise ConfigError(f"field 'output.format' must be csv or json (got {cfg.output_format!r})")
    if cfg.k0 > cfg.P:
        raise ConfigError(f"field 'k0' ({cfg.k0}) exceeds truncation P ({cfg.P})")
    if cfg.fock_n_max < 2:
        raise ConfigError("field 'fock.n_max' must be >= 2")
    if cfg.sweep_field is not None and cfg.sweep_field not in _SWEEPABLE:
        raise ConfigError(f"field 'sweep.field' must be one of {sorted(_SWEEPABLE)}")
    normalize_bc(cfg.bc)
    builtin_gauge(cfg.gauge)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(parse(x))) == parse(x)."""
    lines = []
    for key, (attr, kind) in _KEYMAP.items():
        val = getattr(cfg, attr)
        if val is None:
            continue
        if kind == "resonance":
            val = f"{val[0]},{val[1]},{val[2]}"
        elif kind is float:
            val = repr(float(val))
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def resolve_omega(cfg: RunConfig) -> float:
    """Drive frequency: explicit, else 2 w_{LN} of the resonance target,
    else 2 w at (bc, ell, k0)."""
    if cfg.drive_omega is not None:
        return cfg.drive_omega
    if cfg.drive_resonance is not None:
        bc, L, N = cfg.drive_resonance
        return 2.0 * Spectrum(bc, cfg.a0).omega(L, N)
    return 2.0 * Spectrum(cfg.bc, cfg.a0).omega(cfg.ell, cfg.k0)


def build_trajectory(cfg: RunConfig, Omega: float) -> Trajectory:
    t_flat = cfg.t_f_periods * 2.0 * math.pi / Omega
    if cfg.window_periods > 0:
        return Trajectory.windowed_sine(cfg.a0, cfg.epsilon, Omega, t_flat,
                                        cfg.window_periods)
    return Trajectory.pure_sine(cfg.a0, cfg.epsilon, Omega, t_flat)


# ----------------------------------------------------------------------
# output plumbing
# ----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return "" if x is None else str(x)


def _header_lines(cfg: RunConfig, extra: dict | None = None) -> list[str]:
    lines = [f"# casimir-sphere {__version__}"]
    for line in serialize_config(cfg).strip().splitlines():
        lines.append(f"# {line}")
    for k, v in (extra or {}).items():
        lines.append(f"# {k} = {v}")
    return lines


def write_output(cfg: RunConfig, columns: list[str], rows: list[tuple],
                 out_path: str | None = None, extra_meta: dict | None = None):
    path = out_path or cfg.output_path
    if cfg.output_format == "json":
        doc = {
            "meta": {"generator": f"casimir-sphere {__version__}",
                     "config": {k: getattr(cfg, a) for k, (a, _) in _KEYMAP.items()
                                if getattr(cfg, a) is not None},
                     **(extra_meta or {})},
            "columns": columns,
            "rows": [[(r if not isinstance(r, float) else r) for r in row] for row in rows],
        }
        payload = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    else:
        lines = _header_lines(cfg, extra_meta)
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_fmt(x) for x in row))
        payload = "\n".join(lines) + "\n"
    if path in ("-", ""):
        sys.stdout.write(payload)
    else:
        with open(path, "w") as fh:
            fh.write(payload)


def _maybe_save_cache():
    path = os.environ.get("CASIMIR_CACHE")
    if path:
        default_table().save(path)


# ----------------------------------------------------------------------
# subcommand pipelines
# ----------------------------------------------------------------------

def _evolve_pipeline(cfg: RunConfig) -> tuple[BogoliubovPair, Trajectory, float]:
    Omega = resolve_omega(cfg)
    traj = build_trajectory(cfg, Omega)
    gauge = builtin_gauge(cfg.gauge)
    cpl = couplings_for(cfg.bc, cfg.ell, cfg.P, gauge)
    state0 = initial_state(cfg.bc, cfg.ell, cfg.P, k0=None, a0=cfg.a0)
    final = evolve(state0, traj, cpl, tol=cfg.integrator_tol)
    bog = extract_bogoliubov(final, Spectrum(cfg.bc, cfg.a0), traj)
    return bog, traj, Omega


def cmd_spectrum(cfg: RunConfig, args) -> int:
    spec = Spectrum(cfg.bc, cfg.a0)
    rows = [(normalize_bc(cfg.bc), cfg.ell, k, spec.omega(cfg.ell, k))
            for k in range(1, cfg.P + 1)]
    write_output(cfg, ["bc", "ell", "k", "omega"], rows)
    _maybe_save_cache()
    return 0


def cmd_couplings(cfg: RunConfig, args) -> int:
    cpl = couplings_for(cfg.bc, cfg.ell, cfg.P, builtin_gauge(cfg.gauge))
    if cfg.output_format == "json":
        rows = []
        mats = [("g", cpl.g)] + ([("s", cpl.s), ("eta", cpl.eta)] if cpl.s is not None else [])
        for name, m in mats:
            for p in range(cfg.P):
                for n in range(cfg.P):
                    rows.append((cpl.bc, cpl.ell, cpl.P, name, p + 1, n + 1, m[p, n]))
        write_output(cfg, ["bc", "ell", "P", "matrix", "p", "n", "value"], rows)
    else:
        path = cfg.output_path
        header = "\n".join(_header_lines(cfg)) + "\n"
        if path in ("-", ""):
            sys.stdout.write(header)
            export_couplings_csv(cpl, sys.stdout)
        else:
            with open(path, "w") as fh:
                fh.write(header)
                export_couplings_csv(cpl, fh)
    _maybe_save_cache()
    return 0


def _evolve_rows(cfg: RunConfig, bog: BogoliubovPair):
    per_mode = particle_numbers(bog)
    drift = np.max(np.abs(bog.normalization() - 1.0))
    rows = []
    for n in range(1, cfg.P + 1):
        contrib = per_k_contributions(bog, n)
        lead = int(np.argmax(contrib)) + 1
        frac = float(contrib[lead - 1] / per_mode[n - 1]) if per_mode[n - 1] > 0 else 1.0
        rows.append((n, bog.omega[n - 1], per_mode[n - 1],
                     (2 * cfg.ell + 1) * per_mode[n - 1], lead, frac))
    return rows, float(drift)


def cmd_evolve(cfg: RunConfig, args) -> int:
    bog, traj, Omega = _evolve_pipeline(cfg)
    rows, drift = _evolve_rows(cfg, bog)
    extra = {"Omega": _fmt(Omega), "t_f": _fmt(traj.t_f),
             "norm_drift": _fmt(drift), "m_degenerate": "per-m values identical by construction"}
    if getattr(args, "converge", False):
        cfg2 = dataclasses.replace(cfg, P=2 * cfg.P)
        bog2, _, _ = _evolve_pipeline(cfg2)
        n_ref = particle_number(bog, cfg.k0)
        n_2p = particle_number(bog2, cfg.k0)
        extra["converge_P"] = str(2 * cfg.P)
        extra["converge_rel_change"] = _fmt(abs(n_2p - n_ref) / max(n_ref, 1e-300))
    write_output(cfg, ["n", "omega", "N_per_m", "N_level", "leading_k", "leading_k_fraction"],
                 rows, extra_meta=extra)
    if getattr(args, "dump_timeseries", False):
        _dump_timeseries(cfg, traj, Omega)
    return 0


def _dump_timeseries(cfg: RunConfig, traj: Trajectory, Omega: float):
    cpl = couplings_for(cfg.bc, cfg.ell, cfg.P, builtin_gauge(cfg.gauge))
    state0 = initial_state(cfg.bc, cfg.ell, cfg.P, k0=cfg.k0, a0=cfg.a0)
    n_samp = cfg.output_stride * max(1, round(traj.t_f / traj.period))
    times = np.linspace(0.0, traj.t_f, n_samp + 1)
    _, samples = evolve(state0, traj, cpl, tol=cfg.integrator_tol, sample_times=times)
    rows = []
    for st in samples:
        for p in range(cfg.P):
            q, qd = st.Q[p], st.Qdot[p]
            rows.append((st.t, p + 1, q.real, q.imag, qd.real, qd.imag))
    base = cfg.output_path
    ts_path = "-" if base in ("-", "") else base + ".timeseries.csv"
    ts_cfg = dataclasses.replace(cfg, output_format="csv")
    write_output(ts_cfg, ["t", "p", "re_Q", "im_Q", "re_Qdot", "im_Qdot"], rows,
                 out_path=ts_path)


def cmd_msa(cfg: RunConfig, args) -> int:
    Omega = resolve_omega(cfg)
    spec = Spectrum(cfg.bc, cfg.a0)
    tol = cfg.resonance_tol if cfg.resonance_tol is not None else 1e-9 * Omega
    report = detect_resonances(spec, Omega, tol, ell_range=(cfg.ell, cfg.ell), k_max=cfg.P)
    extra = {"Omega": _fmt(Omega), "resonances": report.to_json()}
    if report.couplings:
        red = msa_evolve_reduced(cfg.ell, cfg.bc, Omega, cfg.P, cfg.msa_tau_f,
                                 a0=cfg.a0, n_samples=cfg.msa_samples, tol=tol)
        totals = red.totals()
        energies = red.energies()
        rows = [(float(t), float(N), float(E))
                for t, N, E in zip(red.taus, totals, energies)]
        extra["late_loglog_slope"] = _fmt(fit_loglog_slope(red.taus, totals))
        write_output(cfg, ["tau", "N_total", "E_total"], rows, extra_meta=extra)
    else:
        traj = build_trajectory(cfg, Omega)
        rows = []
        hits = {n for (l, n) in report.parametric if l == cfg.ell}
        for n in range(1, cfg.P + 1):
            w = spec.omega(cfg.ell, n)
            if n in hits:
                gam = growth_rate(cfg.bc, cfg.ell, n, cfg.a0)
                A, B = msa_closed_form(w, cfg.epsilon, traj.t_f, gamma=gam)
                N = 2.0 * w * abs(A) ** 2
            else:
                gam, N = 0.0, 0.0
            rows.append((n, w, gam, N, (2 * cfg.ell + 1) * N))
        write_output(cfg, ["n", "omega", "gamma", "N_per_m", "N_level"], rows,
                     extra_meta=extra)
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    Omega = resolve_omega(cfg)
    spec = Spectrum(cfg.bc, cfg.a0)
    tol = cfg.resonance_tol if cfg.resonance_tol is not None else 1e-9 * Omega
    report = detect_resonances(spec, Omega, tol, ell_range=(cfg.ell, cfg.ell), k_max=cfg.P)
    if not report.parametric:
        raise ConfigError("compare requires a parametric resonance; none detected")
    bog, traj, _ = _evolve_pipeline(cfg)
    rows = []
    for (l, n) in report.parametric:
        w = spec.omega(l, n)
        gam = growth_rate(cfg.bc, l, n, cfg.a0)
        n_msa = math.sinh(gam * cfg.epsilon * traj.t_f) ** 2
        n_ode = particle_number(bog, n)
        rows.append((l, n, w, gam, n_ode, n_msa,
                     abs(n_ode - n_msa) / max(n_msa, 1e-300)))
    drift = float(np.max(np.abs(bog.normalization() - 1.0)))
    write_output(cfg, ["ell", "n", "omega", "gamma", "N_ode", "N_msa", "rel_err"],
                 rows, extra_meta={"Omega": _fmt(Omega), "norm_drift": _fmt(drift)})
    return 0


def cmd_singlet(cfg: RunConfig, args) -> int:
    Omega = resolve_omega(cfg)
    traj = build_trajectory(cfg, Omega)
    target = cfg.drive_resonance or (normalize_bc(cfg.bc), cfg.ell, cfg.k0)
    bc, L, N = target
    if L < 1:
        raise ConfigError("singlet construction requires ell >= 1")
    gam = growth_rate(bc, L, N, cfg.a0)
    C = coefficient_C(gam, cfg.epsilon, traj.t_f)
    state = build_out_vacuum(C, cfg.fock_n_max)
    rep = verify_singlet(state)
    expected = 3.0 * math.sinh(gam * cfg.epsilon * traj.t_f) ** 2
    rows = [
        ("C", C),
        ("gamma", gam),
        ("norm_constant", state.norm_constant),
        ("residual_a_in", state.residual),
        ("norm_Lz", rep.norm_Lz),
        ("norm_L2_guarded", rep.norm_L2_guarded),
        ("n_total", rep.n_total),
        ("n_total_expected", expected),
        ("occupancy_plus", rep.occupancy[0]),
        ("occupancy_zero", rep.occupancy[1]),
        ("occupancy_minus", rep.occupancy[2]),
    ]
    write_output(cfg, ["quantity", "value"], rows, extra_meta={"Omega": _fmt(Omega)})
    return 0


def _sweep_point(payload):
    cfg_text, field, value = payload
    cfg = parse_config(cfg_text)
    attr, kind = _KEYMAP[field]
    setattr(cfg, attr, int(round(value)) if kind is int else value)
    validate_config(cfg)
    bog, traj, Omega = _evolve_pipeline(cfg)
    n_res = particle_number(bog, cfg.k0)
    drift = float(np.max(np.abs(bog.normalization() - 1.0)))
    return (value, Omega, n_res, (2 * cfg.ell + 1) * n_res, drift)


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.sweep_field is None or cfg.sweep_start is None or cfg.sweep_stop is None:
        raise ConfigError("sweep requires sweep.field, sweep.start, sweep.stop")
    if cfg.sweep_count < 2:
        raise ConfigError("sweep.count must be >= 2")
    values = np.linspace(cfg.sweep_start, cfg.sweep_stop, cfg.sweep_count)
    base_text = serialize_config(cfg)
    payloads = [(base_text, cfg.sweep_field, float(v)) for v in values]
    jobs = max(1, getattr(args, "jobs", 1))
    if jobs > 1:
        with Pool(jobs) as pool:
            results = pool.map(_sweep_point, payloads)  # order-preserving
    else:
        results = [_sweep_point(p) for p in payloads]
    rows = [(cfg.sweep_field, *r) for r in results]
    write_output(cfg, ["field", "value", "Omega", "N_per_m", "N_level", "norm_drift"], rows)
    return 0


_RUNNERS = {
    "spectrum": cmd_spectrum,
    "couplings": cmd_couplings,
    "evolve": cmd_evolve,
    "msa": cmd_msa,
    "compare": cmd_compare,
    "singlet": cmd_singlet,
    "sweep": cmd_sweep,
}


def run(subcommand: str, cfg: RunConfig, args=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    if subcommand not in _RUNNERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    args = args or argparse.Namespace(jobs=1, converge=False, dump_timeseries=False)
    try:
        return _RUNNERS[subcommand](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="casimir-sphere",
        description="Photon creation in a spherical oscillating cavity",
        epilog=(
            "CSV columns per subcommand -- spectrum: bc,ell,k,omega | "
            "couplings: bc,ell,P,matrix,p,n,value | "
            "evolve: n,omega,N_per_m,N_level,leading_k,leading_k_fraction | "
            "msa (cascade): tau,N_total,E_total; (isolated): n,omega,gamma,N_per_m,N_level | "
            "compare: ell,n,omega,gamma,N_ode,N_msa,rel_err | "
            "singlet: quantity,value | "
            "sweep: field,value,Omega,N_per_m,N_level,norm_drift. "
            "Floats are printed with 17 significant digits; outputs embed the resolved config."
        ),
    )
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="path to a key = value config file")
    ap.add_argument("--out", help="output path (default: config output.path or stdout)")
    ap.add_argument("--format", choices=("csv", "json"), help="output format override")
    ap.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep")
    ap.add_argument("--converge", action="store_true",
                    help="re-run at doubled truncation and report the relative change")
    ap.add_argument("--dump-timeseries", action="store_true", dest="dump_timeseries",
                    help="also write the sampled k0-column amplitude time series")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config) as fh:
                cfg = parse_config(fh.read())
        else:
            cfg = RunConfig()
            validate_config(cfg)
        if args.out:
            cfg.output_path = args.out
        if args.format:
            cfg.output_format = args.format
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(args.subcommand, cfg, args)


if __name__ == "__main__":
    raise SystemExit(main())
