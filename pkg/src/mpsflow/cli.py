"""Command-line experiment runner.

Each subcommand reads a flat YAML config, runs one seeded experiment and writes
``<out>/<subcommand>*.csv`` tables plus a ``<subcommand>.manifest.json`` sidecar.
CSV bodies depend only on the config and seed; timestamps live in the manifest.

Exit codes: 0 success, 2 config error, 3 resource cap, 4 numerical consistency,
1 anything else. Failures print a JSON error record to stderr and, when the
output directory is known, write it to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import (
    IllConditionedEnvironment,
    MpsflowError,
    NumericalConsistencyError,
    ResourceError,
)

THREADS_ENV = "MPSFLOW_THREADS"

EXIT_CONFIG, EXIT_RESOURCE, EXIT_NUMERICAL, EXIT_OTHER = 2, 3, 4, 1


class ConfigError(MpsflowError, ValueError):
    """The experiment configuration is malformed or incomplete."""


# key -> (type, default). A default of REQUIRED marks a physics/size parameter.
REQUIRED = object()
_POS_INT = "pos_int"
_NONNEG_INT = "nonneg_int"
_POS_FLOAT = "pos_float"
_NONNEG_FLOAT = "nonneg_float"
_FLOAT = "float"
_STR = "str"
_INT_LIST = "int_list"

SCHEMA = {
    "experiment": (_STR, None),
    "preset": (_STR, REQUIRED),
    "J": (_FLOAT, REQUIRED),
    "g": (_FLOAT, REQUIRED),
    "h": (_FLOAT, REQUIRED),
    "N": (_POS_INT, REQUIRED),
    "d": (_POS_INT, REQUIRED),
    "D": ("bond", REQUIRED),
    "segment_first": (_NONNEG_INT, REQUIRED),
    "segment_last": (_NONNEG_INT, REQUIRED),
    "D_eL": (_POS_INT, REQUIRED),
    "D_eR": (_POS_INT, REQUIRED),
    "dt": (_POS_FLOAT, REQUIRED),
    "t_total": (_POS_FLOAT, REQUIRED),
    "t_quench": (_POS_FLOAT, REQUIRED),
    "t_window": (_POS_FLOAT, REQUIRED),
    "qr_interval": (_POS_INT, 10),
    "fd_step": (_POS_FLOAT, 1e-5),
    "warmup": (_NONNEG_FLOAT, 0.0),
    "record_every": (_POS_INT, 1),
    "samples": (_POS_INT, REQUIRED),
    "batches": (_POS_INT, 100),
    "states": (_POS_INT, REQUIRED),
    "j_max": (_POS_INT, REQUIRED),
    "variant": (_STR, "exact"),
    "model": (_STR, REQUIRED),
    "rate": (_POS_FLOAT, REQUIRED),
    "modes": (_POS_INT, REQUIRED),
    "subset": (_INT_LIST, REQUIRED),
    "models": (_POS_INT, REQUIRED),
    "hopping_scale": (_NONNEG_FLOAT, 0.3),
    "pairing_scale": (_NONNEG_FLOAT, 0.5),
    "points": (_POS_INT, 81),
    "seed": (_NONNEG_INT, REQUIRED),
    "out": (_STR, "results"),
}

_HAMILTONIAN_KEYS = ("preset",)
NEEDS = {
    "gen": ("N", "d", "D"),
    "evolve": _HAMILTONIAN_KEYS + ("N", "D", "dt", "t_total"),
    "lyapunov": _HAMILTONIAN_KEYS + ("N", "D", "dt", "t_total"),
    "husimi-bound": _HAMILTONIAN_KEYS
    + ("N", "D", "segment_first", "segment_last", "D_eL", "D_eR", "samples", "states", "t_quench"),
    "haar-verify": ("d", "D", "samples"),
    "dos": ("d", "D", "j_max"),
    "bosonic": ("model", "t_window", "subset"),
    "oracle-compare": _HAMILTONIAN_KEYS + ("N", "D", "dt", "t_total"),
}
_SEEDLESS = ("dos",)
_BOSONIC_MODEL_KEYS = {"squeezer": ("rate",), "random": ("modes", "models")}


def _coerce(key: str, kind: str, value):
    def bad(msg):
        return ConfigError(f"config key {key!r}: {msg} (got {value!r})")

    if kind == _STR:
        if not isinstance(value, str):
            raise bad("expected a string")
        return value
    if kind == "bond":
        if value == "full":
            return "full"
        kind = _POS_INT
    if kind in (_POS_INT, _NONNEG_INT):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("expected an integer")
        if value < (1 if kind == _POS_INT else 0):
            raise bad("must be positive" if kind == _POS_INT else "must be non-negative")
        return value
    if kind in (_POS_FLOAT, _NONNEG_FLOAT, _FLOAT):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("expected a number")
        value = float(value)
        if not np.isfinite(value):
            raise bad("must be finite")
        if kind == _POS_FLOAT and value <= 0 or kind == _NONNEG_FLOAT and value < 0:
            raise bad("out of range")
        return value
    if kind == _INT_LIST:
        if not isinstance(value, list) or not value or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in value):
            raise bad("expected a non-empty list of non-negative integers")
        return list(value)
    raise AssertionError(kind)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def out(self) -> Path:
        return Path(self.values["out"])


def parse_config(command: str, raw: dict | None, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a flat mapping against the schema; unknown keys are rejected."""
    if command not in NEEDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config must be a flat mapping of keys to values")
    merged = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    unknown = sorted(set(merged) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for k, v in merged.items():
        if isinstance(v, dict):
            raise ConfigError(f"config key {k!r}: nested mappings are not allowed")

    needed = list(NEEDS[command]) + ([] if command in _SEEDLESS else ["seed"])
    if "preset" in needed and merged.get("preset") == "ising":
        needed += ["J", "g", "h"]
    if command == "bosonic":
        model = merged.get("model")
        if model not in _BOSONIC_MODEL_KEYS:
            raise ConfigError(f"config key 'model': choose from {sorted(_BOSONIC_MODEL_KEYS)} (got {model!r})")
        needed += list(_BOSONIC_MODEL_KEYS[model])
    missing = [k for k in needed if k not in merged]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")

    values = {}
    for key, (kind, default) in SCHEMA.items():
        if key in merged:
            values[key] = _coerce(key, kind, merged[key])
        elif default is not REQUIRED:
            values[key] = default
    return ExperimentConfig(command, values)


def load_config(command: str, path: str | os.PathLike | None, overrides: dict | None = None) -> ExperimentConfig:
    raw = None
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(command, raw, overrides)


# ------------------------------------------------------------------ output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


@dataclass
class Table:
    name: str
    header: list
    rows: list
    provenance: str


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def write_results(cfg: ExperimentConfig, tables: list[Table], started: str, notes: dict | None = None) -> list[Path]:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    files = {}
    for t in tables:
        p = out / f"{t.name}.csv"
        write_csv(p, t.header, t.rows)
        paths.append(p)
        files[p.name] = {"rows": len(t.rows), "columns": t.header, "provenance": t.provenance}
    manifest = {
        "command": cfg.command,
        "config": cfg.values,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "files": files,
        "notes": notes or {},
    }
    mp = out / f"{cfg.command}.manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    paths.append(mp)
    return paths


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# ------------------------------------------------------------- experiments


def _hamiltonian(cfg: ExperimentConfig, N: int):
    from .hamiltonian import ising, preset

    if cfg["preset"] == "ising":
        return ising(N, cfg["J"], cfg["g"], cfg["h"])
    try:
        return preset(cfg["preset"], N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _chain(cfg: ExperimentConfig, d: int, seed):
    from .mps import full_bond_profile, random_mps

    N, D = cfg["N"], cfg["D"]
    profile = full_bond_profile(N, d) if D == "full" else D
    return random_mps(N, d, profile, seed)


def _seeds(cfg: ExperimentConfig, count: int):
    from ._rng import spawn_seeds

    return spawn_seeds(cfg["seed"], count)


def run_gen(cfg):
    from .mps import canonical_residuals, cut_entropy

    chain = _chain(cfg, cfg["d"], cfg["seed"])
    res = canonical_residuals(chain.sites)
    rows = [(k, chain.bond_profile[k], cut_entropy(chain, k)) for k in range(1, chain.N)]
    summary = [("N", chain.N), ("d", chain.d), ("max_canonical_residual", max(res))]
    return [
        Table("gen", ["bond", "dimension", "entropy"], rows, "random left-canonical MPS; entropies from the right environments"),
        Table("gen_summary", ["quantity", "value"], summary, "random MPS"),
    ]


def run_evolve(cfg):
    from .dynamics import tdvp_evolve

    H = _hamiltonian(cfg, cfg["N"])
    chain = _chain(cfg, H.d, cfg["seed"])
    traj = tdvp_evolve(chain, H, cfg["t_total"], cfg["dt"], cfg["record_every"])
    nb = traj.entropies.shape[1]
    rows = [(t, e, *s) for t, e, s in zip(traj.times, traj.energies, traj.entropies)]
    header = ["t", "energy"] + [f"entropy_{k}" for k in range(1, nb + 1)]
    return [Table("evolve", header, rows, "TDVP (RK4 with re-canonicalization)")], {"energy_drift": traj.energy_drift}


def run_lyapunov(cfg):
    from .dynamics import full_segment, lyapunov_spectrum
    from .mps import Segment

    H = _hamiltonian(cfg, cfg["N"])
    chain = _chain(cfg, H.d, cfg["seed"])
    segs = [full_segment(chain)]
    if "segment_first" in cfg.values and "segment_last" in cfg.values:
        segs.append(Segment(cfg["segment_first"], cfg["segment_last"]))
    res = lyapunov_spectrum(
        chain,
        H,
        cfg["t_total"],
        cfg["dt"],
        qr_interval=cfg["qr_interval"],
        fd_step=cfg["fd_step"],
        seed=cfg["seed"],
        segments=segs,
        warmup=cfg["warmup"],
    )
    rows = [(k, lam) for k, lam in enumerate(res.exponents)]
    summary = [
        ("ks_entropy", res.ks_entropy),
        ("exponent_sum", res.exponent_sum),
        ("pairing_mismatch", res.pairing_mismatch),
        ("largest_exponent", res.exponents[0]),
        ("converged", res.converged),
    ]
    for seg, val in res.subsystem_exponents.items():
        summary.append((f"subsystem_{seg[0]}_{seg[1]}", val))
    return [
        Table("lyapunov", ["index", "exponent"], rows, "Benettin QR on finite-difference flow maps"),
        Table("lyapunov_summary", ["quantity", "value"], summary, "derived from the spectrum and frame volumes"),
    ], {"convergence": res.convergence_detail, "volume_convention": res.volume_convention}


def _husimi_states(cfg, H, seeds):
    """Cycle through on-manifold MPS, Haar-random dense states and mid-quench states."""
    from ._rng import haar_unitary, make_rng
    from .dynamics import exact_evolve
    from .mps import DenseState, product_state, random_mps, to_dense

    N, d = cfg["N"], H.d
    out = []
    for k, ss in enumerate(seeds):
        kind = ("mps", "haar", "quench")[k % 3]
        rng = make_rng(ss)
        if kind == "mps":
            D = cfg["D"]
            st = to_dense(random_mps(N, d, D if D != "full" else min(d ** (N // 2), 64), rng))
        elif kind == "haar":
            v = rng.standard_normal(d**N) + 1j * rng.standard_normal(d**N)
            st = DenseState(v / np.linalg.norm(v), (d,) * N)
        else:
            local = haar_unitary(d, rng)[:, 0]
            st = exact_evolve(to_dense(product_state([local] * N)), H, cfg["t_quench"])
        out.append((kind, st))
    return out


def run_husimi_bound(cfg):
    from .husimi import entropy_bound_report
    from .mps import Segment

    H = _hamiltonian(cfg, cfg["N"])
    seg = Segment(cfg["segment_first"], cfg["segment_last"], cfg["D_eL"], cfg["D_eR"])
    root = _seeds(cfg, 2 * cfg["states"])
    states = _husimi_states(cfg, H, root[: cfg["states"]])
    rows = []
    for k, ((kind, st), ss) in enumerate(zip(states, root[cfg["states"] :])):
        sub = int(ss.generate_state(1)[0])
        rep = entropy_bound_report(st, seg, cfg["samples"], sub, cfg["batches"])
        rows.append(
            (
                k,
                kind,
                rep.exact_entropy,
                rep.mean_intrinsic.value,
                rep.wehrl.value,
                rep.bound,
                rep.bound_error,
                rep.slack,
                rep.slack_sigma,
                rep.normalization.value,
                rep.normalization.std_error,
            )
        )
    header = [
        "state", "kind", "entropy", "mean_intrinsic_entropy", "wehrl", "bound",
        "bound_std_error", "slack", "slack_sigma", "normalization", "normalization_std_error",
    ]
    return [Table("husimi_bound", header, rows, "Haar segment-MPS Monte Carlo; exact entropy from dense reduced density")]


def run_haar_verify(cfg):
    from .haar import mc_verify_reduced

    rep = mc_verify_reduced(cfg["d"], cfg["D"], cfg["samples"], cfg["seed"], cfg["batches"])
    rows = []
    for name in sorted(rep.closed_forms):
        cf = np.atleast_1d(np.asarray(rep.closed_forms[name], float))
        est = np.atleast_1d(np.asarray(rep.estimates[name], float))
        err = np.atleast_1d(np.asarray(rep.std_errors[name], float))
        z = np.atleast_1d(np.asarray(rep.z_scores[name], float))
        shape = np.shape(rep.closed_forms[name])
        for flat in range(cf.size):
            idx = "".join(f"[{i}]" for i in np.unravel_index(flat, shape)) if shape else ""
            rows.append((f"{name}{idx}", cf.flat[flat], est.flat[flat], err.flat[flat], z.flat[flat]))
    return [
        Table("haar_verify", ["quantity", "closed_form", "mc", "std_error", "z"], rows, "closed forms vs Haar Monte Carlo")
    ], {"fixed_point_max_error": rep.fixed_point_max_error, "candidate_z": rep.candidate_z}


def run_dos(cfg):
    from .haar import overlap_moments, solve_density_of_states, tail_fit

    mom = overlap_moments(cfg["d"], cfg["D"], cfg["j_max"], cfg["variant"])
    dos = solve_density_of_states(mom)
    row_res = mom.I @ (1.0 / dos.rho) - 1.0
    rows = [(j + 1, dos.rho[j], row_res[j]) for j in range(dos.j_max)]
    fit = tail_fit(dos, hi=min(20, dos.j_max))
    notes = {
        "residual": dos.residual,
        "truncation_drift": dos.truncation_drift,
        "condition_number": dos.condition_number,
        "rho_inf": dos.rho_inf,
        "rho_inf_large_D_limit": dos.diagnostics["rho_inf_large_D"],
        "tail_fit": fit,
    }
    return [Table("dos", ["j", "rho", "residual"], rows, f"truncated linear solve, {cfg['variant']} moments")], notes


def run_bosonic(cfg):
    from .bosonic import classical_subsystem_exponent, entropy_growth_rate, random_model, two_mode_squeezer

    if cfg["model"] == "squeezer":
        models = [("squeezer", two_mode_squeezer(cfg["rate"]))]
    else:
        seeds = _seeds(cfg, cfg["models"])
        models = [
            (f"random_{k}", random_model(cfg["modes"], ss, cfg["hopping_scale"], cfg["pairing_scale"]))
            for k, ss in enumerate(seeds)
        ]
    rows = []
    for name, m in models:
        e = entropy_growth_rate(m, cfg["subset"], cfg["t_window"], cfg["points"])
        c = classical_subsystem_exponent(m, cfg["subset"], cfg["t_window"], cfg["points"])
        rel = abs(e.rate - c.rate) / abs(c.rate) if c.rate != 0 else float("nan")
        rows.append((name, e.rate, c.rate, rel, e.r_squared, c.r_squared))
    header = ["model", "entropy_rate", "classical_rate", "relative_difference", "entropy_r2", "classical_r2"]
    return [Table("bosonic", header, rows, "Gaussian covariance evolution via the symplectic propagator")]


def run_oracle_compare(cfg):
    from .dynamics import ExactPropagator, tdvp_evolve
    from .mps import to_dense

    H = _hamiltonian(cfg, cfg["N"])
    chain = _chain(cfg, H.d, cfg["seed"])
    psi0 = to_dense(chain).amplitudes
    prop = ExactPropagator(H)
    traj = tdvp_evolve(chain, H, cfg["t_total"], cfg["dt"], cfg["record_every"], keep_chains=True)
    Hd = H.to_dense()
    rows = []
    for t, e, ch in zip(traj.times, traj.energies, traj.chains):
        ex = prop(psi0, t)
        v = to_dense(ch).amplitudes
        fid = abs(np.vdot(ex, v)) ** 2
        rows.append((t, fid, e, float(np.real(np.vdot(ex, Hd @ ex)))))
    return [Table("oracle_compare", ["t", "fidelity", "energy_tdvp", "energy_exact"], rows, "TDVP vs exact diagonalization")]


RUNNERS = {
    "gen": run_gen,
    "evolve": run_evolve,
    "lyapunov": run_lyapunov,
    "husimi-bound": run_husimi_bound,
    "haar-verify": run_haar_verify,
    "dos": run_dos,
    "bosonic": run_bosonic,
    "oracle-compare": run_oracle_compare,
}


def run(cfg: ExperimentConfig) -> list[Path]:
    started = _now()
    result = RUNNERS[cfg.command](cfg)
    tables, notes = result if isinstance(result, tuple) else (result, {})
    return write_results(cfg, tables, started, notes)


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpsflow", description="Seeded MPS-manifold experiments.")
    p.add_argument("--version", action="version", version=f"mpsflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="flat YAML config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--samples", type=int, help="overrides the config sample count")
        sp.add_argument("--quiet", action="store_true")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ResourceError, MemoryError)):
        return EXIT_RESOURCE
    if isinstance(exc, (NumericalConsistencyError, IllConditionedEnvironment)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, MpsflowError)):
        return EXIT_CONFIG
    return EXIT_OTHER


def _limit_threads():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    from threadpoolctl import threadpool_limits

    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer (got {raw!r})") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be positive")
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        limiter = _limit_threads()
        overrides = {"seed": args.seed, "out": args.out, "samples": args.samples}
        cfg = load_config(args.command, args.config, overrides)
        out_dir = cfg.out
        try:
            paths = run(cfg)
        finally:
            if limiter is not None:
                limiter.unregister()
    except Exception as exc:  # noqa: BLE001 - converted into an error record
        code = _exit_code(exc)
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        if out_dir is not None:
            try:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                (Path(out_dir) / "error.json").write_text(json.dumps(record, indent=2) + "\n")
            except OSError:
                pass
        return code
    if not args.quiet:
        for p in paths:
            print(p)
    return 0
