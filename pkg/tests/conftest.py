"""Shared fixtures.

The eight-schools experiment (10 seeds x 25k epochs) is the single most
expensive thing the suite runs, and two different modules assert against
it, so it runs once per session.
"""

import json
from pathlib import Path

import pytest

from lcvi.config import load_config, with_overrides
from lcvi.pipeline import run_pipeline

PRESET_DIR = Path(__file__).resolve().parents[1] / "src" / "lcvi" / "presets"


@pytest.fixture(scope="session")
def schools_experiment(tmp_path_factory):
    """Full preset run: tilted q=0.2, linearized, M at the 90th percentile,
    lr 0.01, 20000 calibrated epochs, seeds 0..9.  Returns the summary dict,
    the artifact directory, and the parsed per-seed reports."""
    outdir = tmp_path_factory.mktemp("schools_tilted02")
    config = load_config(PRESET_DIR / "eight_schools_tilted02.cfg")
    summary = run_pipeline(with_overrides(config, output_dir=str(outdir)))
    reports = {
        seed: json.loads((outdir / f"report_seed{seed}.json").read_text())
        for seed in config.seeds
    }
    return {"summary": summary, "outdir": outdir, "reports": reports, "config": config}
