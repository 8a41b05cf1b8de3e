"""Run configuration: defaults, normalization, and exhaustive validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class Config:
    data: str | None = None
    out: str | None = None
    report: str | None = None
    k: int | list[int] = 600
    seed: int = 0
    rare_classes: list[str] | None = None
    rare_threshold: float = 0.05
    misc_labels: list[str] = field(default_factory=lambda: ["miscellaneous"])
    paste_only: list[str] = field(default_factory=list)
    patch_size: int = 224
    center_size: int = 112
    pca_dim: int = 16
    background_rate: float = 5e-4
    clearance_radius: float = 16.0
    overlap_tol: int = 0
    reg_eps: float | None = None
    gmm_components: int = 1
    initial_weight: float = 1.0
    embedding: str = "random"
    embedding_file: str | None = None
    embedding_seed: int = 0
    fill_method: str = "harmonic"
    inpainter: str = "classical"
    checkpoint: str | None = None
    ddim_steps: int = 250
    guidance_scale: float = 1.0
    hard_consistency: bool = True
    replay_targets: str | None = None

    @property
    def k_values(self) -> list[int]:
        return list(self.k) if isinstance(self.k, list) else [self.k]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}
_INT = {"seed", "patch_size", "center_size", "pca_dim", "overlap_tol", "gmm_components", "ddim_steps", "embedding_seed"}
_FLOAT = {"rare_threshold", "background_rate", "clearance_radius", "guidance_scale", "initial_weight"}
_STR_LIST = {"misc_labels", "paste_only"}
_CHOICES = {"embedding": {"random", "sidecar"}, "inpainter": {"classical", "diffusion"},
            "fill_method": {"harmonic", "navier-stokes"}}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _as_list(v):
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    return v


def validate_config(config: dict | Config | None = None) -> Config:
    """Fill defaults and check every key; all problems are reported together."""
    if isinstance(config, Config):
        raw = config.to_dict()
    else:
        raw = dict(config or {})
    raw = {key.replace("-", "_"): v for key, v in raw.items()}
    problems = [f"unknown key {key!r}" for key in sorted(set(raw) - set(_FIELDS))]
    vals = {key: v for key, v in raw.items() if key in _FIELDS}

    for key in _STR_LIST | {"rare_classes"}:
        if key in vals and vals[key] is not None:
            vals[key] = _as_list(vals[key])
            if not isinstance(vals[key], list) or not all(isinstance(s, str) for s in vals[key]):
                problems.append(f"{key} must be a list of strings")
    if "k" in vals:
        k = vals["k"]
        if isinstance(k, str):
            try:
                k = [int(s) for s in k.split(",")]
            except ValueError:
                k = None
            if k is not None and len(k) == 1:
                k = k[0]
        vals["k"] = k
        ks = k if isinstance(k, list) else [k]
        if not ks or not all(_is_int(x) and x >= 0 for x in ks):
            problems.append("k must be a non-negative integer or a list of them")
    for key in _INT & set(vals):
        if not _is_int(vals[key]):
            problems.append(f"{key} must be an integer, got {vals[key]!r}")
    for key in _FLOAT & set(vals):
        v = vals[key]
        if _is_int(v):
            vals[key] = v = float(v)
        if not isinstance(v, float):
            problems.append(f"{key} must be a number, got {v!r}")
    if "hard_consistency" in vals and not isinstance(vals["hard_consistency"], bool):
        problems.append("hard_consistency must be a boolean")
    for key, choices in _CHOICES.items():
        if key in vals and vals[key] not in choices:
            problems.append(f"{key} must be one of {sorted(choices)}, got {vals[key]!r}")
    if problems:
        raise ConfigError(problems)

    cfg = Config(**vals)
    if not 0.0 < cfg.rare_threshold < 1.0:
        problems.append("rare_threshold must be in (0, 1)")
    if cfg.background_rate < 0:
        problems.append("background_rate must be >= 0")
    if cfg.clearance_radius < 0:
        problems.append("clearance_radius must be >= 0")
    if cfg.patch_size < 8:
        problems.append("patch_size must be >= 8")
    if not 0 <= cfg.center_size <= cfg.patch_size:
        problems.append("center_size must be in [0, patch_size]")
    if cfg.pca_dim < 1:
        problems.append("pca_dim must be >= 1")
    if cfg.overlap_tol < 0:
        problems.append("overlap_tol must be >= 0")
    if cfg.gmm_components < 1:
        problems.append("gmm_components must be >= 1")
    if cfg.ddim_steps < 1:
        problems.append("ddim_steps must be >= 1")
    if cfg.initial_weight <= 0:
        problems.append("initial_weight must be > 0")
    if cfg.reg_eps is not None and (not isinstance(cfg.reg_eps, (int, float)) or cfg.reg_eps < 0):
        problems.append("reg_eps must be a non-negative number")
    if cfg.embedding == "sidecar" and not cfg.embedding_file:
        problems.append("embedding 'sidecar' needs embedding_file")
    if cfg.inpainter == "diffusion" and not cfg.checkpoint:
        problems.append("inpainter 'diffusion' needs checkpoint")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config_file(path: str | Path) -> dict:
    """YAML or JSON mapping mirroring the CLI flags (dashes or underscores)."""
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: config must be a mapping"])
    return data
