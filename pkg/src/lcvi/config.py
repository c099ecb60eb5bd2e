"""Flat INI experiment configs: parsing, validation, and object construction.

A config has four sections — [model], [decision], [optimizer], [run] — and
round-trips exactly: ``load_config(save_config(c)) == c``.  Everything the
pipeline does is a pure function of one of these plus the seeds inside it.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from typing import Optional

from .decisions import LossSpec, absolute, linex, squared, tilted
from .optimize import OptimizerConfig

_MODEL_KINDS = ("eight_schools", "pmf", "synthetic_pmf")
_LOSS_KINDS = ("squared", "absolute", "tilted", "linex", "native_exp_squared")
_TRANSFORMS = ("linearized", "exp", "native")
_REGIMES = ("standard_vi", "joint", "em_closed_form", "em_numerical")


@dataclass(frozen=True)
class ExperimentConfig:
    # [model]
    model_kind: str = "eight_schools"
    data_path: Optional[str] = None
    n_users: int = 50
    n_items: int = 20
    k: int = 5
    k_true: int = 5
    sigma_y: float = 10.0
    sigma_z: float = 10.0
    sigma_w: float = 10.0
    data_seed: int = 2024
    # [decision]
    loss_kind: str = "squared"
    loss_q: float = 0.5
    loss_c: float = 1.0
    transform: str = "linearized"
    quantile: float = 0.9
    m_scale: float = 1.0
    # [optimizer]
    regime: str = "joint"
    epochs: int = 1000
    warmstart_epochs: int = 1000
    batch_rows: Optional[int] = None
    learning_rate: float = 0.01
    s_theta: int = 30
    s_y: int = 10
    trace_every: int = 100
    eval_s_theta: int = 100
    eval_s_y: int = 10
    final_s_theta: int = 1000
    final_s_y: int = 10
    em_inner_steps: int = 25
    # [run]
    seeds: tuple = (0,)
    output_dir: str = "runs/out"

    def __post_init__(self):
        if self.model_kind not in _MODEL_KINDS:
            raise ValueError(f"model kind must be one of {_MODEL_KINDS}, got {self.model_kind!r}")
        if self.model_kind == "pmf" and not self.data_path:
            raise ValueError("model kind 'pmf' needs data_path pointing at an ingested matrix")
        if self.loss_kind not in _LOSS_KINDS:
            raise ValueError(f"loss must be one of {_LOSS_KINDS}, got {self.loss_kind!r}")
        if self.transform not in _TRANSFORMS:
            raise ValueError(f"transform must be one of {_TRANSFORMS}, got {self.transform!r}")
        if (self.loss_kind == "native_exp_squared") != (self.transform == "native"):
            raise ValueError(
                "loss 'native_exp_squared' and transform 'native' go together; "
                f"got loss={self.loss_kind!r} transform={self.transform!r}"
            )
        if self.regime not in _REGIMES:
            raise ValueError(f"regime must be one of {_REGIMES}, got {self.regime!r}")
        if self.transform == "native" and self.regime.startswith("em_"):
            raise ValueError(
                "the native-utility problem has no plain loss to drive an EM decision "
                "refit; use regime 'joint'"
            )
        if not (0.0 < self.quantile <= 1.0):
            raise ValueError(f"quantile must be in (0, 1], got {self.quantile}")
        if self.m_scale <= 0:
            raise ValueError(f"m_scale must be positive, got {self.m_scale}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")

    # -- derived pieces ---------------------------------------------------

    def loss_spec(self) -> Optional[LossSpec]:
        """The plain loss named by the decision block, or None for the
        native-utility problem (whose evaluation loss is 1 - u)."""
        if self.loss_kind == "squared":
            return squared()
        if self.loss_kind == "absolute":
            return absolute()
        if self.loss_kind == "tilted":
            return tilted(self.loss_q)
        if self.loss_kind == "linex":
            return linex(self.loss_c)
        return None

    def estimator_kind(self) -> str:
        return "linearized" if self.transform == "linearized" else "naive"

    def optimizer_config(self, phase: str) -> OptimizerConfig:
        """Optimizer knobs for the 'warmstart' (plain VI) or 'calibrated' phase."""
        if phase not in ("warmstart", "calibrated"):
            raise ValueError(f"unknown phase {phase!r}")
        epochs = self.warmstart_epochs if phase == "warmstart" else self.epochs
        regime = "standard_vi" if phase == "warmstart" else self.regime
        return OptimizerConfig(
            regime=regime,
            epochs=epochs,
            warmstart_epochs=self.warmstart_epochs,
            batch_rows=self.batch_rows,
            learning_rate=self.learning_rate,
            s_theta=self.s_theta,
            s_y=self.s_y,
            estimator_kind=self.estimator_kind(),
            trace_every=self.trace_every,
            eval_s_theta=self.eval_s_theta,
            eval_s_y=self.eval_s_y,
            em_inner_steps=self.em_inner_steps,
        )


_SCHEMA = {
    "model": (
        ("kind", "model_kind", str),
        ("data_path", "data_path", str),
        ("n_users", "n_users", int),
        ("n_items", "n_items", int),
        ("k", "k", int),
        ("k_true", "k_true", int),
        ("sigma_y", "sigma_y", float),
        ("sigma_z", "sigma_z", float),
        ("sigma_w", "sigma_w", float),
        ("data_seed", "data_seed", int),
    ),
    "decision": (
        ("loss", "loss_kind", str),
        ("q", "loss_q", float),
        ("c", "loss_c", float),
        ("transform", "transform", str),
        ("quantile", "quantile", float),
        ("m_scale", "m_scale", float),
    ),
    "optimizer": (
        ("regime", "regime", str),
        ("epochs", "epochs", int),
        ("warmstart_epochs", "warmstart_epochs", int),
        ("batch_rows", "batch_rows", int),
        ("learning_rate", "learning_rate", float),
        ("s_theta", "s_theta", int),
        ("s_y", "s_y", int),
        ("trace_every", "trace_every", int),
        ("eval_s_theta", "eval_s_theta", int),
        ("eval_s_y", "eval_s_y", int),
        ("final_s_theta", "final_s_theta", int),
        ("final_s_y", "final_s_y", int),
        ("em_inner_steps", "em_inner_steps", int),
    ),
    "run": (
        ("seeds", "seeds", "seeds"),
        ("output_dir", "output_dir", str),
    ),
}

_OPTIONAL_NONE = ("data_path", "batch_rows")


def _parse_value(raw: str, conv, key: str):
    raw = raw.strip()
    if conv == "seeds":
        try:
            return tuple(int(s) for s in raw.split(",") if s.strip() != "")
        except ValueError as e:
            raise ValueError(f"bad seeds list {raw!r}: {e}") from None
    try:
        return conv(raw)
    except ValueError:
        raise ValueError(f"bad value for {key}: {raw!r} (expected {conv.__name__})") from None


def load_config(path_or_file) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if hasattr(path_or_file, "read"):
        parser.read_file(path_or_file)
    else:
        read = parser.read(str(path_or_file))
        if not read:
            raise FileNotFoundError(f"config file not found: {path_or_file}")
    kwargs = {}
    for section, entries in _SCHEMA.items():
        if not parser.has_section(section):
            continue
        known = {key for key, _, _ in entries}
        stray = set(parser.options(section)) - known
        if stray:
            raise ValueError(f"unknown key(s) in [{section}]: {sorted(stray)}")
        for key, field, conv in entries:
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key)
            if field in _OPTIONAL_NONE and raw.strip().lower() in ("", "none"):
                kwargs[field] = None
            else:
                kwargs[field] = _parse_value(raw, conv, f"[{section}] {key}")
    return ExperimentConfig(**kwargs)


def save_config(config: ExperimentConfig, path_or_file):
    parser = configparser.ConfigParser()
    for section, entries in _SCHEMA.items():
        parser.add_section(section)
        for key, field, conv in entries:
            value = getattr(config, field)
            if value is None:
                parser.set(section, key, "none")
            elif conv == "seeds":
                parser.set(section, key, ",".join(str(s) for s in value))
            else:
                parser.set(section, key, repr(value) if isinstance(value, float) else str(value))
    if hasattr(path_or_file, "write"):
        parser.write(path_or_file)
    else:
        with open(path_or_file, "w") as fh:
            parser.write(fh)


def config_echo(config: ExperimentConfig) -> str:
    """One-line canonical rendering, embedded in every artifact."""
    buf = io.StringIO()
    save_config(config, buf)
    parts = []
    section = ""
    for line in buf.getvalue().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]")
        else:
            key, _, val = line.partition("=")
            parts.append(f"{section}.{key.strip()}={val.strip()}")
    return " ".join(parts)


def build_model(config: ExperimentConfig):
    """Instantiate (model, data) for the config.  Data depends only on the
    model block, never on the run seeds, so every seed sees the same data."""
    from .models import (
        EightSchoolsModel,
        PmfModel,
        generate_synthetic_matrix,
        load_eight_schools,
    )

    if config.model_kind == "eight_schools":
        data = load_eight_schools(config.data_path)
        return EightSchoolsModel(data), data
    if config.model_kind == "synthetic_pmf":
        data = generate_synthetic_matrix(
            config.n_users,
            config.n_items,
            config.k_true,
            sigma_y=config.sigma_y,
            seed=config.data_seed,
            sigma_z=config.sigma_z,
            sigma_w=config.sigma_w,
        )
    else:  # ingested matrix
        from .cli import load_matrix_cache

        data = load_matrix_cache(config.data_path)
    model = PmfModel(
        n_users=data.values.shape[0],
        n_items=data.values.shape[1],
        k=config.k,
        sigma_y=config.sigma_y,
        sigma_z=config.sigma_z,
        sigma_w=config.sigma_w,
    )
    return model, data


def with_overrides(config: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return replace(config, **kwargs)
