"""Pipeline orchestration: config parsing, run directories, stage artifacts.

Subcommands: wave, front, tail, mc, compare, all.  Every stage writes CSV
files (versioned header comment, deterministic bytes for fixed config and
seed) plus a ``<stage>.manifest.json`` recording the config hash, the shared
constants (N, c*, lambda*, gamma*, C_U, xbar0) with their hash, package and
library versions, and wall time.  Downstream stages verify upstream manifest
hashes, so a ``compare`` can never mix constants from different laws.

Exit codes: 0 ok, 2 config error, 3 upstream-artifact error, 4 numerical
quality error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

try:
    import tomllib
except ImportError:          # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .asym import Constants, compare_report, report_to_json
from .bbm import estimate_gap_tail_mc
from .errors import QualityError, UpstreamArtifactError
from .gap import GapConfig, corrector_diagnostics, required_horizon, solve_gap
from .kpp import (InitialData, PdeConfig, build_potential,
                  estimate_bramson_shift_refined, front_decay_envelope,
                  solve_front)
from .reaction import parse_offspring, build_reaction
from .wave import WaveSolverConfig, build_adjoint, solve_wave, wave_ode_residual

CSV_VERSION = "bbmgap-csv v1"

DEFAULT_CONFIG = {
    "model": {
        "offspring": [[2, 1.0]],
        "exponent_mode": "derivation",
    },
    "wave": {
        "dx": 0.02,
        "rtol": 1e-12,
    },
    "pde": {
        "dx": 0.05,
        "dt": 0.0,               # 0 -> min(0.25 dx, 0.01)
        "front_t_final": 0.0,    # 0 -> planned from the gap horizon
        "bramson_t_final": 400.0,
        "dump_every": 0,
    },
    "gap": {
        "a_list": [2.0, 3.0, 4.0, 5.0, 6.0],
        "t0": 0.01,
        "t_final": 0.0,          # 0 -> auto horizon + flatness extensions
        "flatness_tol": 1e-4,
        "emit_fields": False,
    },
    "mc": {
        "a_list": [],            # empty -> gap a_list
        "t_end": 4.0,
        "replicates": 100000,
        "seed": 20240801,
        "workers": 1,
    },
    "output": {
        "root": "",              # empty -> $BBMGAP_OUT or ./runs
    },
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling


def load_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        try:
            with open(path, "rb") as f:
                user = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config parse error: {e}")
        for section, values in user.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ConfigError(f"section [{section}] must be a table")
            for key, val in values.items():
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = val
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        law = parse_offspring(cfg["model"]["offspring"])
        build_reaction(law)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad offspring law: {e}")
    if cfg["model"]["exponent_mode"] not in ("derivation", "theorem"):
        raise ConfigError("model.exponent_mode must be 'derivation' or 'theorem'")
    if not (0.005 <= cfg["pde"]["dx"] <= 0.5):
        raise ConfigError("pde.dx outside [0.005, 0.5]")
    if not (0.002 <= cfg["wave"]["dx"] <= 0.1):
        raise ConfigError("wave.dx outside [0.002, 0.1]")
    a_list = cfg["gap"]["a_list"]
    if not a_list or any(a < 0.5 for a in a_list):
        raise ConfigError("gap.a_list must be nonempty with all a >= 0.5")
    if cfg["mc"]["replicates"] < 1000:
        raise ConfigError("mc.replicates must be >= 1000")
    if not (0.0 < cfg["mc"]["t_end"] <= 15.0):
        raise ConfigError("mc.t_end must be in (0, 15]")
    if not (0.0005 <= cfg["gap"]["t0"] <= 0.1):
        raise ConfigError("gap.t0 outside [0.0005, 0.1]")


def dumps_config(cfg: dict) -> str:
    """Serialize the config as TOML (round-trips losslessly for our schema)."""
    lines = []
    for section, values in cfg.items():
        lines.append(f"[{section}]")
        for key, val in values.items():
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return repr(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# artifacts


def write_csv(path: Path, name: str, header: list[str], rows,
              comments: list[str] | None = None) -> None:
    with open(path, "w") as f:
        f.write(f"# {CSV_VERSION} {name}\n")
        for line in comments or []:
            f.write(f"# {line}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_csv(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """Returns (schema line, header, rows); raises UpstreamArtifactError."""
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise UpstreamArtifactError(f"missing artifact: {path}")
    if not lines or not lines[0].startswith("# "):
        raise UpstreamArtifactError(f"artifact {path} lacks a version header")
    schema = lines[0][2:]
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    header = body[0].split(",")
    rows = [ln.split(",") for ln in body[1:] if ln]
    return schema, header, rows


def constants_dict(r, C_U: float, xbar0: float) -> dict:
    return {
        "N": r.N, "c_star": r.c_star, "lambda_star": r.lambda_star,
        "gamma_star": r.gamma_star, "C_U": C_U, "xbar0": xbar0,
    }


def constants_hash(consts: dict) -> str:
    canon = {k: round(float(v), 12) for k, v in sorted(consts.items())}
    return hashlib.sha256(json.dumps(canon).encode()).hexdigest()[:16]


def write_manifest(rundir: Path, stage: str, cfg: dict, consts: dict | None,
                   wall: float, extra: dict | None = None) -> None:
    manifest = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "law": cfg["model"]["offspring"],
        "versions": {
            "bbmgap": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": round(wall, 3),
    }
    try:
        import scipy
        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    if consts is not None:
        manifest["constants"] = consts
        manifest["constants_hash"] = constants_hash(consts)
    if extra:
        manifest.update(extra)
    with open(rundir / f"{stage}.manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def read_manifest(rundir: Path, stage: str) -> dict:
    path = rundir / f"{stage}.manifest.json"
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise UpstreamArtifactError(f"missing upstream manifest: {path}")


# ---------------------------------------------------------------------------
# stages


def _reaction(cfg):
    return build_reaction(parse_offspring(cfg["model"]["offspring"]))


def _pde_config(cfg, t_final: float, a_max: float) -> PdeConfig:
    dt = cfg["pde"]["dt"] or None
    return PdeConfig(dx=cfg["pde"]["dx"], dt=dt, t_final=t_final,
                     L_left=a_max + 50.0)


def _gap_config(cfg) -> GapConfig:
    return GapConfig(dx=cfg["pde"]["dx"],
                     dt=cfg["pde"]["dt"] or None,
                     t0=cfg["gap"]["t0"],
                     t_final=cfg["gap"]["t_final"] or None,
                     flatness_tol=cfg["gap"]["flatness_tol"])


def stage_wave(cfg: dict, rundir: Path, ctx: dict) -> None:
    t0 = time.time()
    r = _reaction(cfg)
    wcfg = WaveSolverConfig(dx=cfg["wave"]["dx"], rtol=cfg["wave"]["rtol"])
    wave = solve_wave(r, wcfg)
    xbar0, xbar0_err = estimate_bramson_shift_refined(
        r, wave, PdeConfig(dx=cfg["pde"]["dx"], dt=cfg["pde"]["dt"] or None,
                           t_final=cfg["pde"]["bramson_t_final"]))
    adjoint = build_adjoint(wave, xbar0)
    consts = constants_dict(r, wave.C_U, xbar0)

    x = wave.grid.x
    rows = zip(x, wave.u, wave.u_prime, adjoint.psi, adjoint.psi_prime)
    write_csv(
        rundir / "wave.csv", "wave",
        ["x", "U", "U_prime", "psi", "psi_prime"],
        rows,
        comments=[
            "constants: " + json.dumps({k: repr(v) for k, v in consts.items()}, sort_keys=True),
        ],
    )
    write_manifest(rundir, "wave", cfg, consts, time.time() - t0, extra={
        "residual_sup": float(np.max(wave_ode_residual(wave))),
        "xbar0_err": xbar0_err,
        "applied_shift": wave.applied_shift,
    })
    ctx.update(reaction=r, wave=wave, adjoint=adjoint, xbar0=xbar0, consts=consts)


def _require_wave(cfg, rundir, ctx):
    if "wave" not in ctx:
        man = read_manifest(rundir, "wave")
        if man["config_hash"] != config_hash(cfg):
            raise UpstreamArtifactError(
                f"wave manifest config hash {man['config_hash']} does not match "
                f"current config {config_hash(cfg)}"
            )
        r = _reaction(cfg)
        wave = solve_wave(r, WaveSolverConfig(dx=cfg["wave"]["dx"],
                                              rtol=cfg["wave"]["rtol"]))
        xbar0 = man["constants"]["xbar0"]
        ctx.update(reaction=r, wave=wave, adjoint=build_adjoint(wave, xbar0),
                   xbar0=xbar0, consts=man["constants"])


def stage_front(cfg: dict, rundir: Path, ctx: dict) -> None:
    t0 = time.time()
    _require_wave(cfg, rundir, ctx)
    r, wave, xbar0 = ctx["reaction"], ctx["wave"], ctx["xbar0"]
    a_max = max(cfg["gap"]["a_list"])
    t_final = cfg["pde"]["front_t_final"] or max(
        required_horizon(a, r, _gap_config(cfg)) for a in cfg["gap"]["a_list"])
    pcfg = _pde_config(cfg, t_final, a_max)
    fs = solve_front(r, InitialData(), pcfg, wave=wave)
    pot = build_potential(fs, r, xbar0, wave)
    envelope = front_decay_envelope(pot, r)

    rows = []
    for i, t in enumerate(fs.shift_times):
        s = fs.shift_series[i]
        j = int(np.argmin(np.abs(fs.times - t)))
        sup_err = float(np.max(np.abs(fs.H[j] - wave.u_at(fs.grid.x - s))))
        sup_E = float(np.max(np.abs(pot.e_at(t))))
        rows.append((t, s, sup_err, sup_E))
    write_csv(rundir / "front.csv", "front", ["t", "s_fit", "sup_error", "sup_E"], rows)

    dump_every = int(cfg["pde"]["dump_every"])
    if dump_every > 0:
        for j in range(0, len(fs.times), dump_every):
            write_csv(rundir / f"front_field_{j:04d}.csv", "front_field",
                      ["x", "H"], zip(fs.grid.x, fs.H[j]),
                      comments=[f"t = {fs.times[j]!r}"])
    write_manifest(rundir, "front", cfg, ctx["consts"], time.time() - t0, extra={
        "t_final": t_final, "envelope": envelope, "clamp_excess": fs.clamp_excess,
    })
    ctx.update(front=fs, potential=pot)


def stage_tail(cfg: dict, rundir: Path, ctx: dict) -> None:
    t0 = time.time()
    _require_wave(cfg, rundir, ctx)
    if "potential" not in ctx:
        stage_front(cfg, rundir, ctx)
    r, adjoint, pot = ctx["reaction"], ctx["adjoint"], ctx["potential"]
    gcfg = _gap_config(cfg)
    emit_fields = bool(cfg["gap"]["emit_fields"])

    rows = []
    gaps = {}
    for i, a in enumerate(cfg["gap"]["a_list"]):
        gs = solve_gap(float(a), pot, adjoint, gcfg)
        rep = corrector_diagnostics(gs, adjoint)
        gaps[float(a)] = gs
        rows.append((a, gs.I_limit, gs.tail_prob, rep["crossover"],
                     gs.flatness_residual))
        write_csv(rundir / f"tail_I_{i:02d}.csv", "tail_series",
                  ["t", "I", "dIdt_analytic", "dIdt_fd", "mass"],
                  zip(gs.I_times, gs.I_series, gs.dIdt_analytic, gs.dIdt_fd,
                      gs.mass_series),
                  comments=[f"a = {float(a)!r}"])
        if emit_fields:
            write_csv(rundir / f"tail_fields_{i:02d}.csv", "tail_fields",
                      ["x"] + [f"t={t!r}" for t in gs.times[::10]],
                      np.column_stack([gs.grid.x] + [f for f in gs.r_fields[::10]]),
                      comments=[f"a = {float(a)!r}"])
    write_csv(rundir / "tail.csv", "tail",
              ["a", "I_final", "tail_prob", "crossover", "flatness_residual"], rows)
    write_manifest(rundir, "tail", cfg, ctx["consts"], time.time() - t0)
    ctx["gaps"] = gaps


def stage_mc(cfg: dict, rundir: Path, ctx: dict) -> None:
    t0 = time.time()
    law = parse_offspring(cfg["model"]["offspring"])
    a_list = cfg["mc"]["a_list"] or cfg["gap"]["a_list"]
    ests = estimate_gap_tail_mc(law, cfg["mc"]["t_end"], a_list,
                                cfg["mc"]["replicates"], cfg["mc"]["seed"],
                                workers=cfg["mc"]["workers"])
    rows = [(e.a, e.value, e.stderr, e.replicates) for e in ests]
    write_csv(rundir / "mc.csv", "mc", ["a", "estimate", "stderr", "replicates"], rows)
    write_manifest(rundir, "mc", cfg, None, time.time() - t0, extra={
        "t_end": cfg["mc"]["t_end"], "seed": cfg["mc"]["seed"],
    })
    ctx["mc"] = ests


def stage_compare(cfg: dict, rundir: Path, ctx: dict) -> None:
    t0 = time.time()
    man_wave = read_manifest(rundir, "wave")
    man_tail = read_manifest(rundir, "tail")
    man_mc = read_manifest(rundir, "mc")
    if man_wave["constants_hash"] != man_tail["constants_hash"]:
        raise UpstreamArtifactError(
            f"constants hash mismatch: wave {man_wave['constants_hash']} vs "
            f"tail {man_tail['constants_hash']}"
        )
    if man_mc["law"] != man_wave["law"]:
        raise UpstreamArtifactError(
            f"offspring law mismatch: mc ran {man_mc['law']}, wave ran {man_wave['law']}"
        )

    _, _, tail_rows = read_csv(rundir / "tail.csv")
    pde = {float(r_[0]): {"tail_prob": float(r_[2]), "I_final": float(r_[1]),
                          "flatness_residual": float(r_[4])} for r_ in tail_rows}
    mc = {}
    try:
        _, _, mc_rows = read_csv(rundir / "mc.csv")
        mc = {float(r_[0]): {"value": float(r_[1]), "stderr": float(r_[2]),
                             "replicates": int(r_[3])} for r_ in mc_rows}
    except UpstreamArtifactError:
        pass  # MC side is optional in the report

    consts = man_wave["constants"]
    c = Constants(N=consts["N"], lambda_star=consts["lambda_star"],
                  gamma_star=consts["gamma_star"], C_U=consts["C_U"],
                  xbar0=consts["xbar0"],
                  exponent_mode=cfg["model"]["exponent_mode"])
    a_list = sorted(set(pde) | set(mc))
    report = compare_report(a_list, pde, mc, c)

    with open(rundir / "report.json", "w") as f:
        f.write(report_to_json(report))
    cols = ["a", "pde_tail", "mc_tail", "mc_stderr", "theorem1",
            "theorem1_derivation", "theorem1_theorem",
            "ratio_pde_theorem1", "ratio_mc_pde"]
    write_csv(rundir / "report.csv", "report", cols,
              [[row[k] for k in cols] for row in report["rows"]],
              comments=(["exponent ambiguity: N != 2, derivation and theorem "
                         "powers differ"] if report["exponent_ambiguity"] else []))
    write_manifest(rundir, "compare", cfg, consts, time.time() - t0,
                   extra={"fits": report["fits"]})


STAGES = {
    "wave": stage_wave,
    "front": stage_front,
    "tail": stage_tail,
    "mc": stage_mc,
    "compare": stage_compare,
}


def run(subcommand: str, cfg: dict, rundir: Path) -> int:
    rundir.mkdir(parents=True, exist_ok=True)
    ctx: dict = {}
    names = ["wave", "front", "tail", "mc", "compare"] if subcommand == "all" \
        else [subcommand]
    for name in names:
        STAGES[name](cfg, rundir, ctx)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bbmgap",
        description="Tail of the gap between the two rightmost BBM particles: "
                    "PDE pipeline, Monte-Carlo, and closed-form asymptotics.")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--out", help="run directory (default: $BBMGAP_OUT or ./runs)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ["wave", "front", "mc", "compare", "all"]:
        sub.add_parser(name)
    p_tail = sub.add_parser("tail")
    p_tail.add_argument("--a-list", type=str, default=None,
                        help="comma-separated thresholds, overrides config")
    p_tail.add_argument("--offspring", type=str, default=None,
                        help="offspring law as k:p pairs, e.g. '2:0.5,3:0.5'")
    p_tail.add_argument("--dx", type=float, default=None)
    p_tail.add_argument("--t-final", type=float, default=None)
    p_tail.add_argument("--emit-fields", action="store_true")
    p_mc = sub.choices["mc"]
    p_mc.add_argument("--a-list", type=str, default=None)
    p_mc.add_argument("--offspring", type=str, default=None)
    p_mc.add_argument("--t-end", type=float, default=None)
    p_mc.add_argument("--replicates", type=int, default=None)
    p_mc.add_argument("--seed", type=int, default=None)
    p_mc.add_argument("--workers", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    root = args.out or os.environ.get("BBMGAP_OUT") or "runs"
    rundir = Path(root)
    try:
        if args.command == "tail":
            return run("tail", cfg, rundir)
        return run(args.command, cfg, rundir)
    except UpstreamArtifactError as e:
        print(f"upstream artifact error: {e}", file=sys.stderr)
        return 3
    except QualityError as e:
        print(f"numerical quality error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


def _apply_overrides(cfg: dict, args) -> None:
    def parse_a_list(s):
        try:
            return [float(x) for x in s.split(",") if x]
        except ValueError:
            raise ConfigError(f"bad a-list {s!r}")

    if getattr(args, "offspring", None):
        try:
            pairs = [kv.split(":") for kv in args.offspring.split(",")]
            cfg["model"]["offspring"] = [[int(k), float(p)] for k, p in pairs]
        except (ValueError, TypeError):
            raise ConfigError(f"bad offspring spec {args.offspring!r}")
    if getattr(args, "a_list", None):
        lst = parse_a_list(args.a_list)
        if args.command == "mc":
            cfg["mc"]["a_list"] = lst
        else:
            cfg["gap"]["a_list"] = lst
    if getattr(args, "dx", None):
        cfg["pde"]["dx"] = args.dx
    if getattr(args, "t_final", None):
        cfg["gap"]["t_final"] = args.t_final
    if getattr(args, "emit_fields", False):
        cfg["gap"]["emit_fields"] = True
    if getattr(args, "t_end", None):
        cfg["mc"]["t_end"] = args.t_end
    if getattr(args, "replicates", None):
        cfg["mc"]["replicates"] = args.replicates
    if getattr(args, "seed", None) is not None:
        cfg["mc"]["seed"] = args.seed
    if getattr(args, "workers", None):
        cfg["mc"]["workers"] = args.workers
    validate_config(cfg)


if __name__ == "__main__":
    sys.exit(main())
