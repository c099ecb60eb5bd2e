"""End-to-end experiment pipeline: warm-start VI, calibrate, refit, score.

Per seed: run plain VI, score its decisions on the evaluation targets, set
the robust maximum from the quantile of realized training losses, run the
calibrated regime warm-started from VI, score again with the *same*
evaluation draws (paired streams, so risk differences are not drowned in
evaluation noise), and persist a trace CSV plus a JSON report.  A summary
over seeds aggregates the risk-reduction statistic.

Trace CSVs are fully deterministic: the wall-seconds column is written as
0.0 so reruns are byte-identical; real stage timings live in the reports.
"""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_echo, build_model, with_overrides
from .decisions import NativeExpSquared, calibrate_M
from .evaluate import (
    empirical_risk,
    per_target_losses,
    posterior_decisions,
    risk_reduction,
    write_trace_csv,
)
from .optimize import build_objective, run_em, run_joint_lcvi, run_standard_vi
from .reparam import seed_rng

# stream tags for the run phases; in-loop lanes are documented in optimize
_PHASE_VI = 1
_PHASE_CALIBRATE = 2
_PHASE_LCVI = 3
_PHASE_EVAL = 4


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage and seed."""


@contextmanager
def _stage(name: str, seed=None):
    try:
        yield
    except PipelineError:
        raise
    except Exception as e:
        where = f"stage '{name}'" + (f", seed {seed}" if seed is not None else "")
        raise PipelineError(f"{where}: {type(e).__name__}: {e}") from e


def _decision_pieces(config: ExperimentConfig):
    """(loss_spec, eval_loss, utility) for the config's decision block."""
    if config.transform == "native":
        objective = build_objective("naive", utility=NativeExpSquared())
        return None, objective.eval_loss, objective.utility
    loss = config.loss_spec()
    return loss, loss, None


def _run_seed(model, data, config: ExperimentConfig, seed: int) -> dict:
    loss_spec, eval_loss, utility = _decision_pieces(config)
    root = seed_rng(seed)
    eval_batch = model.make_eval_batch(data)
    walls = {}

    with _stage("standard-vi", seed):
        t0 = time.perf_counter()
        vi = run_standard_vi(
            model, data, config.optimizer_config("warmstart"),
            root.fork(_PHASE_VI), trace_loss=eval_loss,
        )
        walls["vi"] = time.perf_counter() - t0

    with _stage("evaluate-vi", seed):
        dec_vi = posterior_decisions(
            model, eval_batch, vi.params.means, vi.params.log_scales,
            eval_loss, config.final_s_theta, config.final_s_y,
            root.fork(_PHASE_EVAL),
        )
        losses_vi = per_target_losses(eval_loss, dec_vi, eval_batch.observed)
        er_vi = float(losses_vi.mean())

    if config.regime == "standard_vi":
        # no calibration phase: the comparison degenerates to itself
        return {
            "seed": seed,
            "m": None,
            "er_vi": er_vi,
            "er_lcvi": er_vi,
            "improvement": 0.0,
            "losses_vi": losses_vi,
            "losses_lcvi": losses_vi,
            "params_vi": vi.params,
            "params_lcvi": vi.params,
            "trace": vi.trace,
            "walls": walls,
        }

    m_value = None
    if utility is None:
        with _stage("calibrate-m", seed):
            t0 = time.perf_counter()
            m_value = calibrate_M(
                model, data, vi.params.means, vi.params.log_scales,
                loss_spec, config.quantile,
                config.final_s_theta, config.final_s_y,
                root.fork(_PHASE_CALIBRATE),
            ) * config.m_scale
            walls["calibrate"] = time.perf_counter() - t0
        objective = build_objective(config.estimator_kind(), loss=loss_spec, m=m_value)
    else:
        objective = build_objective("naive", utility=utility)

    with _stage(f"lcvi-{config.regime}", seed):
        t0 = time.perf_counter()
        lc_cfg = config.optimizer_config("calibrated")
        if config.regime == "joint":
            res = run_joint_lcvi(
                model, data, lc_cfg, objective, root.fork(_PHASE_LCVI),
                init=vi.params, trace_loss=eval_loss,
            )
        else:
            res = run_em(
                model, data, lc_cfg, loss_spec, m_value, root.fork(_PHASE_LCVI),
                init=vi.params, trace_loss=eval_loss,
            )
        walls["lcvi"] = time.perf_counter() - t0

    with _stage("evaluate-lcvi", seed):
        dec_lc = posterior_decisions(
            model, eval_batch, res.params.means, res.params.log_scales,
            eval_loss, config.final_s_theta, config.final_s_y,
            root.fork(_PHASE_EVAL),  # same phase stream as VI: paired draws
        )
        losses_lc = per_target_losses(eval_loss, dec_lc, eval_batch.observed)
        er_lc = float(losses_lc.mean())

    return {
        "seed": seed,
        "m": m_value,
        "er_vi": er_vi,
        "er_lcvi": er_lc,
        "improvement": risk_reduction(er_vi, er_lc),
        "losses_vi": losses_vi,
        "losses_lcvi": losses_lc,
        "params_vi": vi.params,
        "params_lcvi": res.params,
        "trace": vi.trace.extend_shifted(res.trace, config.warmstart_epochs),
        "walls": walls,
    }


def run_pipeline(config: ExperimentConfig, output_dir=None) -> dict:
    """Run every seed, write artifacts, and return the summary dict."""
    outdir = Path(output_dir if output_dir is not None else config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    echo = config_echo(config)
    comments = (f"lcvi trace v{__version__}", f"config: {echo}")

    with _stage("build-model"):
        model, data = build_model(config)

    per_seed = []
    for seed in config.seeds:
        result = _run_seed(model, data, config, seed)
        with _stage("write-artifacts", seed):
            write_trace_csv(
                result["trace"],
                outdir / f"trace_seed{seed}.csv",
                comments=comments + (f"seed: {seed}",),
                zero_wall=True,
            )
            report = {
                "version": __version__,
                "config": echo,
                "seed": seed,
                "seeds": list(config.seeds),
                "seed_count": len(config.seeds),
                "m": result["m"],
                "er_vi": result["er_vi"],
                "er_lcvi": result["er_lcvi"],
                "improvement": result["improvement"],
                "per_target_losses_vi": [float(v) for v in result["losses_vi"]],
                "per_target_losses_lcvi": [float(v) for v in result["losses_lcvi"]],
                "lambda_vi": {
                    "means": result["params_vi"].means.tolist(),
                    "log_scales": result["params_vi"].log_scales.tolist(),
                },
                "lambda_lcvi": {
                    "means": result["params_lcvi"].means.tolist(),
                    "log_scales": result["params_lcvi"].log_scales.tolist(),
                },
                "wall_seconds": result["walls"],
            }
            with open(outdir / f"report_seed{seed}.json", "w") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
                fh.write("\n")
        per_seed.append(result)

    improvements = np.array([r["improvement"] for r in per_seed])
    walls = [sum(r["walls"].values()) for r in per_seed]
    summary = {
        "version": __version__,
        "config": echo,
        "seeds": list(config.seeds),
        "improvement_mean": float(improvements.mean()),
        "improvement_std": float(improvements.std(ddof=1)) if improvements.size > 1 else 0.0,
        "wall_seconds_mean": float(np.mean(walls)),
        "per_seed": [
            {
                "seed": r["seed"],
                "m": r["m"],
                "er_vi": r["er_vi"],
                "er_lcvi": r["er_lcvi"],
                "improvement": r["improvement"],
                "wall_seconds": sum(r["walls"].values()),
            }
            for r in per_seed
        ],
    }
    with _stage("write-artifacts"):
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(outdir / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "m", "er_vi", "er_lcvi", "improvement"])
            for r in per_seed:
                writer.writerow(
                    [
                        r["seed"],
                        "" if r["m"] is None else repr(r["m"]),
                        repr(r["er_vi"]),
                        repr(r["er_lcvi"]),
                        repr(r["improvement"]),
                    ]
                )
    return summary


_SWEEP_AXES = ("quantile", "sample_budget", "regime")


def apply_axis(config: ExperimentConfig, axis: str, value) -> tuple[ExperimentConfig, str]:
    """One sweep cell: a config override plus a label for file naming.

    Quantile values accept "q" or "q*scale" — the latter multiplies the
    calibrated M after the quantile lookup, which is how an M far above the
    loss range is simulated (e.g. "0.999*10").
    """
    if axis == "quantile":
        raw = str(value)
        if "*" in raw:
            q_part, scale_part = raw.split("*", 1)
            cfg = with_overrides(config, quantile=float(q_part), m_scale=float(scale_part))
        else:
            cfg = with_overrides(config, quantile=float(raw), m_scale=1.0)
        return cfg, raw
    if axis == "sample_budget":
        budget = int(value)
        if budget < 1:
            raise ValueError(f"sample budget must be positive, got {budget}")
        s_y = min(10, budget)
        return with_overrides(config, s_y=s_y, s_theta=max(1, budget // s_y)), str(budget)
    if axis == "regime":
        return with_overrides(config, regime=str(value)), str(value)
    raise ValueError(f"unknown sweep axis {axis!r}, expected one of {_SWEEP_AXES}")


def sweep(config: ExperimentConfig, axis: str, values, output_dir=None) -> list:
    """Run the pipeline once per axis value; emit a combined summary CSV.

    Rows are flushed after every completed cell, so a failing cell aborts
    with all previous cells' results preserved on disk.
    """
    base = Path(output_dir if output_dir is not None else config.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    summary_path = base / "sweep_summary.csv"
    rows = []

    def _flush():
        with open(summary_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["axis", "value", "mean_improvement", "std_improvement", "mean_wall_seconds"]
            )
            for row in rows:
                writer.writerow(row)

    _flush()
    for value in values:
        cell_config, label = apply_axis(config, axis, value)
        cell_dir = base / f"{axis}_{label.replace('*', 'x')}"
        cell_config = with_overrides(cell_config, output_dir=str(cell_dir))
        summary = run_pipeline(cell_config)
        rows.append(
            [
                axis,
                label,
                repr(summary["improvement_mean"]),
                repr(summary["improvement_std"]),
                repr(summary["wall_seconds_mean"]),
            ]
        )
        _flush()
    return rows
