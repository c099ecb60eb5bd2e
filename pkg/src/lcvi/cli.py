"""Command-line front end: ``lcvi fit``, ``lcvi sweep``, ``lcvi ingest``.

``fit`` runs the full pipeline for a config file (or a bundled preset name
like ``eight_schools_tilted02``); ``sweep`` repeats it along one axis;
``ingest`` turns a user,item,count CSV into the dense log1p matrix cache
that a ``[model] kind = pmf`` config points at.
"""

from __future__ import annotations

import argparse
import csv
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, with_overrides
from .models.pmf import MatrixData
from .pipeline import PipelineError, run_pipeline, sweep
from .reparam import seed_rng

_SPLIT_TAG = 0xDA7A  # ingestion's train/test split stream


def ingest_count_matrix(path, top_items=None, seed: int = 0):
    """Parse user,item,count triples into a dense log1p matrix with a seeded
    50/50 train/test split over all cells.

    Cells absent from the file are counts of zero.  Returns
    (MatrixData, user_ids, item_ids) with ids in the matrix's row/column
    order (sorted; items optionally restricted to the top ``top_items`` by
    total count, ties broken by id).
    """
    counts = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if [c.strip() for c in header] != ["user", "item", "count"]:
            raise ValueError(f"{path}: expected header 'user,item,count', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            user, item, raw = (c.strip() for c in row)
            try:
                count = int(raw)
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: count must be an integer, got {raw!r}"
                ) from None
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count {count} for ({user}, {item})")
            if (user, item) in counts:
                raise ValueError(f"{path}:{lineno}: duplicate entry for ({user}, {item})")
            counts[(user, item)] = count
    if not counts:
        raise ValueError(f"{path}: no data rows")

    users = sorted({u for u, _ in counts})
    if top_items is not None:
        if top_items < 1:
            raise ValueError(f"top_items must be positive, got {top_items}")
        totals = {}
        for (_, item), c in counts.items():
            totals[item] = totals.get(item, 0) + c
        ranked = sorted(totals, key=lambda it: (-totals[it], it))
        items = sorted(ranked[:top_items])
    else:
        items = sorted({i for _, i in counts})

    raw = np.zeros((len(users), len(items)))
    item_index = {it: j for j, it in enumerate(items)}
    user_index = {u: i for i, u in enumerate(users)}
    for (user, item), c in counts.items():
        j = item_index.get(item)
        if j is not None:
            raw[user_index[user], j] = c
    values = np.log1p(raw)

    gen = seed_rng(seed).fork(_SPLIT_TAG).generator()
    train_mask = gen.random(values.shape) < 0.5
    return MatrixData(values=values, train_mask=train_mask, test_mask=~train_mask), users, items


def write_matrix_cache(matrix: MatrixData, users, items, path):
    """Dense values CSV plus a .mask.csv sidecar labeling cells train/test."""
    path = Path(path)
    header = ["user"] + list(items)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, user in enumerate(users):
            writer.writerow([user] + [repr(v) for v in matrix.values[i]])
    with open(_mask_path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, user in enumerate(users):
            labels = np.where(matrix.train_mask[i], "train", "test")
            writer.writerow([user] + list(labels))


def _mask_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".mask.csv")


def load_matrix_cache(path) -> MatrixData:
    path = Path(path)
    values, _, _ = _read_grid(path, float)
    labels, users, items = _read_grid(_mask_path(path), str)
    if values.shape != labels.shape:
        raise ValueError(
            f"{path}: values {values.shape} and mask {labels.shape} shapes disagree"
        )
    del users, items
    train = labels == "train"
    test = labels == "test"
    if not np.all(train | test):
        bad = np.argwhere(~(train | test))[0]
        raise ValueError(
            f"{_mask_path(path)}: cell {tuple(bad)} is neither 'train' nor 'test'"
        )
    return MatrixData(values=values, train_mask=train, test_mask=test)


def _read_grid(path, conv):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["user"]:
        raise ValueError(f"{path}: expected a matrix cache with a 'user,...' header")
    items = rows[0][1:]
    users = [r[0] for r in rows[1:]]
    width = len(items)
    body = []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != width + 1:
            raise ValueError(f"{path}:{lineno}: expected {width + 1} fields, got {len(r)}")
        body.append([conv(c) for c in r[1:]])
    if not body:
        raise ValueError(f"{path}: no data rows")
    dtype = float if conv is float else object
    return np.array(body, dtype=dtype), users, items


def _resolve_config(name: str) -> ExperimentConfig:
    p = Path(name)
    if p.exists():
        return load_config(p)
    preset = resources.files("lcvi").joinpath("presets", f"{name}.cfg")
    if preset.is_file():
        with preset.open() as fh:
            return load_config(fh)
    raise FileNotFoundError(f"no config file or bundled preset named {name!r}")


def _apply_common_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed_override:
        seeds = tuple(int(s) for s in args.seed_override.split(",") if s.strip() != "")
        config = with_overrides(config, seeds=seeds)
    if args.output_dir:
        config = with_overrides(config, output_dir=args.output_dir)
    return config


def _cmd_fit(args) -> int:
    config = _apply_common_overrides(_resolve_config(args.config), args)
    summary = run_pipeline(config)
    for row in summary["per_seed"]:
        print(
            f"seed {row['seed']}: er_vi={row['er_vi']:.6g} er_lcvi={row['er_lcvi']:.6g} "
            f"improvement={100 * row['improvement']:+.3f}%"
        )
    print(
        f"mean improvement {100 * summary['improvement_mean']:+.3f}% "
        f"± {100 * summary['improvement_std']:.3f}% over {len(summary['seeds'])} seed(s)"
    )
    print(f"artifacts in {config.output_dir}")
    return 0


def _cmd_sweep(args) -> int:
    config = _apply_common_overrides(_resolve_config(args.config), args)
    values = [v for v in args.values.split(",") if v.strip() != ""]
    if not values:
        raise ValueError("--values is empty")
    rows = sweep(config, args.axis, values)
    for _, label, mean_i, std_i, wall in rows:
        print(
            f"{args.axis}={label}: improvement {100 * float(mean_i):+.3f}% "
            f"± {100 * float(std_i):.3f}%, wall {float(wall):.1f}s"
        )
    print(f"sweep summary in {config.output_dir}/sweep_summary.csv")
    return 0


def _cmd_ingest(args) -> int:
    matrix, users, items = ingest_count_matrix(args.csv, top_items=args.top_items, seed=args.seed)
    write_matrix_cache(matrix, users, items, args.output)
    n_train = int(matrix.train_mask.sum())
    print(
        f"ingested {len(users)} users x {len(items)} items "
        f"({n_train} train / {matrix.values.size - n_train} test cells) -> {args.output}"
    )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lcvi",
        description="Loss-calibrated mean-field variational inference with learned decisions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run VI -> calibrate -> calibrated refit for a config")
    fit.add_argument("config", help="config file path or bundled preset name")
    fit.add_argument("--output-dir", help="override the config's output directory")
    fit.add_argument("--seed-override", help="comma-separated seeds replacing the config's")
    fit.set_defaults(func=_cmd_fit)

    sw = sub.add_parser("sweep", help="run the pipeline along one axis of values")
    sw.add_argument("config", help="config file path or bundled preset name")
    sw.add_argument("--axis", required=True, choices=("quantile", "sample_budget", "regime"))
    sw.add_argument("--values", required=True, help="comma-separated axis values")
    sw.add_argument("--output-dir", help="override the config's output directory")
    sw.add_argument("--seed-override", help="comma-separated seeds replacing the config's")
    sw.set_defaults(func=_cmd_sweep)

    ing = sub.add_parser("ingest", help="build a dense log1p matrix cache from count triples")
    ing.add_argument("csv", help="CSV of user,item,count rows")
    ing.add_argument("-o", "--output", required=True, help="where to write the matrix cache")
    ing.add_argument("--top-items", type=int, default=None, help="keep only the N busiest items")
    ing.add_argument("--seed", type=int, default=0, help="train/test split seed")
    ing.set_defaults(func=_cmd_ingest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
