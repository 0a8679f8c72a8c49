"""Secondary component: panels render from a completed run directory.

The run directory is produced through the primary's external interface (the
``bbmgap`` CLI) only; these tests never import the primary package.
"""
import json
import subprocess
import sys
from pathlib import Path

import pytest

RENDER = Path(__file__).parent / "render.py"

MINI_CONFIG = """\
[model]
offspring = [[2, 1.0]]

[wave]
dx = 0.04

[pde]
dx = 0.1
front_t_final = 25.0
bramson_t_final = 120.0

[gap]
a_list = [1.0, 2.0]
t_final = 20.0

[mc]
replicates = 2000
t_end = 2.0
seed = 7
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("plotrun")
    cfg = base / "mini.toml"
    cfg.write_text(MINI_CONFIG)
    out = base / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "bbmgap.cli", "--config", str(cfg),
         "--out", str(out), "all"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out


def _render(*args):
    return subprocess.run([sys.executable, str(RENDER), *args],
                          capture_output=True, text=True)


def test_renders_all_four_panels(run_dir):
    proc = _render("--run-dir", str(run_dir),
                   "--panels", "tail,moment,ratio,front")
    assert proc.returncode == 0, proc.stderr
    for name in ("tail", "moment", "ratio", "front"):
        out = run_dir / f"panel_{name}.png"
        assert out.exists()
        assert out.stat().st_size > 5000


def test_missing_mc_renders_with_note(run_dir, tmp_path):
    import shutil

    partial = tmp_path / "partial"
    shutil.copytree(run_dir, partial)
    (partial / "mc.csv").unlink()
    proc = _render("--run-dir", str(partial), "--panels", "tail")
    assert proc.returncode == 0, proc.stderr
    assert (partial / "panel_tail.png").exists()


def test_refuses_mismatched_schema(run_dir, tmp_path):
    import shutil

    stale = tmp_path / "stale"
    shutil.copytree(run_dir, stale)
    text = (stale / "tail.csv").read_text()
    (stale / "tail.csv").write_text(text.replace("bbmgap-csv v1", "bbmgap-csv v9"))
    proc = _render("--run-dir", str(stale), "--panels", "tail")
    assert proc.returncode == 2
    assert "v1" in proc.stderr and "v9" in proc.stderr


def test_unknown_panel_rejected(run_dir):
    proc = _render("--run-dir", str(run_dir), "--panels", "sparkline")
    assert proc.returncode == 1


def test_missing_run_dir_rejected(tmp_path):
    proc = _render("--run-dir", str(tmp_path / "nope"), "--panels", "tail")
    assert proc.returncode == 1


def test_acceptance_11_secondary(run_dir):
    """All four panels from a completed `all` run, exit 0; stale schema refused."""
    proc = _render("--run-dir", str(run_dir))
    ok = proc.returncode == 0 and all(
        (run_dir / f"panel_{n}.png").exists() for n in ("tail", "moment", "ratio", "front"))
    print(f"\nACCEPTANCE 11 (plots): {'PASS' if ok else 'FAIL'} - four panels, exit 0")
    assert ok
