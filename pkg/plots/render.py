#!/usr/bin/env python3
"""Diagnostic figures from a completed pipeline run directory.

Reads the CSV artifacts written by the ``bbmgap`` CLI (versioned header
``bbmgap-csv v1``) plus the stage manifests, and renders up to four panels:

* tail   - P(d12 > a) from the PDE pipeline, the Monte-Carlo estimates and
           the closed-form curve, on a log scale;
* moment - I(t) growth per threshold with the (t+1)^{3 sqrt(N)/(2 lambda*)}
           guide;
* ratio  - dI/dt / I against the 3 sqrt(N)/(2 lambda* (t+1)) law, with the
           transition time t* = a/(2 sqrt(N)) marked;
* front  - the front shift s(t) approaching xbar0.

Guide curves are computed from the manifest constants, never re-derived
from fields.  Files whose version header does not match are refused.

Usage: plots/render.py --run-dir <dir> --panels tail,moment,ratio,front
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EXPECTED_SCHEMA = "bbmgap-csv v1"
PANELS = ("tail", "moment", "ratio", "front")


class SchemaError(RuntimeError):
    pass


class FigureSpec:
    """Inputs, output location and panel selection for one render call."""

    def __init__(self, run_dir: Path, panels: tuple[str, ...],
                 out_dir: Path | None = None, dpi: int = 150):
        self.run_dir = Path(run_dir)
        self.panels = panels
        self.out_dir = Path(out_dir) if out_dir else self.run_dir
        self.dpi = dpi
        unknown = set(panels) - set(PANELS)
        if unknown:
            raise ValueError(f"unknown panels: {sorted(unknown)}")
        if not self.run_dir.is_dir():
            raise FileNotFoundError(f"run directory not found: {self.run_dir}")


def read_versioned_csv(path: Path):
    """Parse a pipeline CSV; refuse on schema-version mismatch."""
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise SchemaError(f"{path.name}: missing version header, expected '{EXPECTED_SCHEMA}'")
    found = " ".join(lines[0][2:].split()[:2])
    if found != EXPECTED_SCHEMA:
        raise SchemaError(
            f"{path.name}: schema version mismatch: expected '{EXPECTED_SCHEMA}', "
            f"found '{found}'")
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    header = body[0].split(",")
    rows = [ln.split(",") for ln in body[1:]]
    cols = {name: np.array([_cell(row[i]) for row in rows])
            for i, name in enumerate(header)}
    meta = [ln[2:] for ln in lines[1:] if ln.startswith("#")]
    return cols, meta


def _cell(s: str):
    return float(s) if s else math.nan


def load_constants(run_dir: Path) -> dict:
    path = run_dir / "wave.manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"missing manifest: {path}")
    return json.loads(path.read_text())["constants"]


def series_files(run_dir: Path) -> list[Path]:
    return sorted(run_dir.glob("tail_I_*.csv"))


def _series_threshold(meta: list[str]) -> float:
    for line in meta:
        if line.startswith("a = "):
            return float(line[4:])
    return math.nan


def panel_tail(spec: FigureSpec, consts: dict) -> Path:
    tail, _ = read_versioned_csv(spec.run_dir / "tail.csv")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogy(tail["a"], tail["tail_prob"], "o-", label="PDE pipeline")

    note = None
    mc_path = spec.run_dir / "mc.csv"
    if mc_path.exists():
        mc, _ = read_versioned_csv(mc_path)
        ax.errorbar(mc["a"], mc["estimate"], yerr=mc["stderr"], fmt="s",
                    capsize=3, label="Monte-Carlo (finite t)")
    else:
        note = "Monte-Carlo series missing"

    # closed-form curve from manifest constants only
    N, lam, gam = consts["N"], consts["lambda_star"], consts["gamma_star"]
    C_U, xb = consts["C_U"], consts["xbar0"]
    a_grid = np.linspace(min(tail["a"]), max(tail["a"]), 200)
    power = 3.0 * math.sqrt(N) / (2.0 * lam)
    pref = C_U * gam / (2.0 * lam**2 * math.sqrt(math.pi))
    rate = math.sqrt(N) + lam
    curve = pref * (a_grid / (2.0 * math.sqrt(N))) ** power * np.exp(-rate * (a_grid + xb))
    ax.semilogy(a_grid, curve, "--", label="closed-form asymptotic")

    ax.set_xlabel("a")
    ax.set_ylabel("P(d12 > a)")
    ax.legend()
    title = "Gap tail: three pipelines"
    if note:
        title += f"  ({note})"
    ax.set_title(title)
    return _save(fig, spec, "tail")


def panel_moment(spec: FigureSpec, consts: dict) -> Path:
    files = series_files(spec.run_dir)
    if not files:
        raise FileNotFoundError(f"no tail_I_*.csv series in {spec.run_dir}")
    N, lam = consts["N"], consts["lambda_star"]
    power = 3.0 * math.sqrt(N) / (2.0 * lam)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for f in files:
        cols, meta = read_versioned_csv(f)
        a = _series_threshold(meta)
        ax.loglog(cols["t"] + 1.0, cols["I"] / cols["I"][0], label=f"a = {a:g}")
    tg = np.geomspace(1.0, max(cols["t"]) + 1.0, 100)
    ax.loglog(tg, tg**power, "k--", label=rf"$(t+1)^{{{power:.3f}}}$ guide")
    ax.set_xlabel("t + 1")
    ax.set_ylabel("I(t) / I(t0)")
    ax.legend()
    ax.set_title("Adjoint moment growth")
    return _save(fig, spec, "moment")


def panel_ratio(spec: FigureSpec, consts: dict) -> Path:
    files = series_files(spec.run_dir)
    if not files:
        raise FileNotFoundError(f"no tail_I_*.csv series in {spec.run_dir}")
    N, lam = consts["N"], consts["lambda_star"]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    t_max = 0.0
    for f in files:
        cols, meta = read_versioned_csv(f)
        a = _series_threshold(meta)
        t = cols["t"]
        keep = t >= 0.2
        ax.semilogx(t[keep] + 1.0, cols["dIdt_analytic"][keep] / cols["I"][keep],
                    label=f"a = {a:g}")
        t_star = a / (2.0 * math.sqrt(N))
        ax.axvline(t_star + 1.0, color="gray", lw=0.8, ls=":")
        t_max = max(t_max, float(t[-1]))
    tg = np.geomspace(1.0, t_max + 1.0, 200)
    ax.semilogx(tg, 3.0 * math.sqrt(N) / (2.0 * lam * tg), "k--",
                label=r"$3\sqrt{N}/(2\lambda_* (t+1))$")
    ax.set_xlabel("t + 1")
    ax.set_ylabel("(dI/dt) / I")
    ax.set_ylim(bottom=0)
    ax.legend()
    ax.set_title("Moment growth rate vs the early-time law (dotted: t*)")
    return _save(fig, spec, "ratio")


def panel_front(spec: FigureSpec, consts: dict) -> Path:
    cols, _ = read_versioned_csv(spec.run_dir / "front.csv")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogx(cols["t"], cols["s_fit"], "-", label="s(t) fit")
    ax.axhline(consts["xbar0"], color="k", ls="--",
               label=f"xbar0 = {consts['xbar0']:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("front shift")
    ax.legend()
    ax.set_title("Front convergence in the moving frame")
    return _save(fig, spec, "front")


def _save(fig, spec: FigureSpec, name: str) -> Path:
    out = spec.out_dir / f"panel_{name}.png"
    fig.tight_layout()
    fig.savefig(out, dpi=spec.dpi)
    plt.close(fig)
    return out


RENDERERS = {
    "tail": panel_tail,
    "moment": panel_moment,
    "ratio": panel_ratio,
    "front": panel_front,
}


def render(spec: FigureSpec) -> list[Path]:
    consts = load_constants(spec.run_dir)
    return [RENDERERS[name](spec, consts) for name in spec.panels]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run-dir", required=True)
    ap.add_argument("--panels", default="tail,moment,ratio,front",
                    help="comma-separated subset of: " + ",".join(PANELS))
    ap.add_argument("--out-dir", default=None)
    ap.add_argument("--dpi", type=int, default=150)
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(Path(args.run_dir),
                          tuple(p for p in args.panels.split(",") if p),
                          out_dir=args.out_dir, dpi=args.dpi)
        outputs = render(spec)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for p in outputs:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
