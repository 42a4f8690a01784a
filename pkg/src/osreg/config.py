"""Flat key=value run configuration covering every tunable default.

A config file holds one ``key = value`` pair per line with ``#``
comments; CLI flags override file values.  Unknown keys are rejected
and validation reports every problem at once, not just the first.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .backbone import BackboneConfig
from .enhance import EnhanceConfig
from .geometry import PerturbConfig
from .losses import LossConfig
from .matching import MatchConfig

VOCABULARIES = ("basic", "expanded")
ESTIMATORS = ("lsq", "ransac")
PRECISIONS = ("f32", "f64")


class ConfigError(ValueError):
    """Invalid configuration; the message lists every violation."""


@dataclass
class RunConfig:
    # run
    seed: int = 0
    precision: str = "f32"
    threads: int = 1
    # backbone
    d_f: int = 32
    d_c: int = 64
    stem_width: int = 16
    mid_width: int = 32
    shared_weights: bool = True
    # text library and enhancement
    d_text: int = 64
    heads: int = 4
    n_tafe: int = 2
    ffn_mult: int = 2
    text_stage: str = "coarse"
    vocabulary: str = "expanded"
    # matching
    theta_c: float = 0.2
    temperature: float = 0.1
    fine_window: int = 3
    pe_stage: str = "post_tafe"
    # losses
    alpha_f: float = 0.25
    gamma: float = 2.0
    lambda_c_pos: float = 1.0
    lambda_c_neg: float = 1.0
    lambda_c: float = 1.0
    lambda_f: float = 1.0
    neg_subsample: int = 8
    # optimizer and schedule
    lr: float = 8e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 4
    epochs: int = 30
    warmup_frac: float = 0.05
    milestone_fracs: tuple = (0.6, 0.8)
    val_pairs: int = 8
    # perturbation protocol
    scale_min: float = 0.7
    scale_max: float = 1.3
    rot_deg: float = 35.0
    trans_frac: float = 0.10
    # synthetic data
    image_size: int = 64
    noise_octaves: int = 4
    speckle_looks: float = 4.0
    gamma_min: float = 0.7
    gamma_max: float = 1.4
    # evaluation
    estimator: str = "ransac"
    ransac_iters: int = 1000
    ransac_radius: float = 3.0
    check_grid: int = 8

    # ----- sub-config views -------------------------------------------------

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            d_f=self.d_f,
            d_c=self.d_c,
            stem_width=self.stem_width,
            mid_width=self.mid_width,
            shared_weights=self.shared_weights,
        )

    def enhance(self) -> EnhanceConfig:
        return EnhanceConfig(
            d_c=self.d_c,
            d_text=self.d_text,
            heads=self.heads,
            n_tafe=self.n_tafe,
            ffn_mult=self.ffn_mult,
            text_stage=self.text_stage,
        )

    def matching(self) -> MatchConfig:
        return MatchConfig(
            theta_c=self.theta_c,
            temperature=self.temperature,
            fine_window=self.fine_window,
            pe_stage=self.pe_stage,
        )

    def losses(self) -> LossConfig:
        return LossConfig(
            alpha_f=self.alpha_f,
            gamma=self.gamma,
            lambda_c_pos=self.lambda_c_pos,
            lambda_c_neg=self.lambda_c_neg,
            lambda_c=self.lambda_c,
            lambda_f=self.lambda_f,
            neg_subsample=self.neg_subsample,
        )

    def perturb(self) -> PerturbConfig:
        return PerturbConfig(
            scale_min=self.scale_min,
            scale_max=self.scale_max,
            rot_deg=self.rot_deg,
            trans_frac=self.trans_frac,
        )

    # ----- validation -------------------------------------------------------

    def validate(self) -> list[str]:
        problems = []
        problems += self.backbone().validate()
        problems += self.enhance().validate()
        problems += self.matching().validate()
        problems += self.losses().validate()
        problems += self.perturb().validate()
        if self.precision not in PRECISIONS:
            problems.append(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.vocabulary not in VOCABULARIES:
            problems.append(f"vocabulary must be one of {VOCABULARIES}, got {self.vocabulary!r}")
        if self.estimator not in ESTIMATORS:
            problems.append(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.threads < 1:
            problems.append(f"threads must be >= 1, got {self.threads}")
        if self.d_c % 4:
            problems.append(f"d_c must be divisible by 4 for positional encoding, got {self.d_c}")
        if self.d_f % self.heads:
            problems.append(f"d_f ({self.d_f}) must be divisible by heads ({self.heads})")
        if self.d_text < 8:
            problems.append(f"d_text must be >= 8, got {self.d_text}")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if not (0 < self.beta1 < 1) or not (0 < self.beta2 < 1):
            problems.append(f"adam betas must be in (0,1), got {self.beta1}, {self.beta2}")
        if self.adam_eps <= 0:
            problems.append(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.batch < 1:
            problems.append(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if not (0 <= self.warmup_frac < 1):
            problems.append(f"warmup_frac must be in [0,1), got {self.warmup_frac}")
        if list(self.milestone_fracs) != sorted(self.milestone_fracs):
            problems.append(f"milestone_fracs must be sorted, got {self.milestone_fracs}")
        if any(not (0 < m <= 1) for m in self.milestone_fracs):
            problems.append(f"milestone_fracs must lie in (0,1], got {self.milestone_fracs}")
        if self.val_pairs < 1:
            problems.append(f"val_pairs must be >= 1, got {self.val_pairs}")
        if self.image_size % 8 or self.image_size < 16:
            problems.append(f"image_size must be >= 16 and divisible by 8, got {self.image_size}")
        if self.noise_octaves < 1:
            problems.append(f"noise_octaves must be >= 1, got {self.noise_octaves}")
        if self.speckle_looks < 1:
            problems.append(f"speckle_looks must be >= 1, got {self.speckle_looks}")
        if not (0 < self.gamma_min <= self.gamma_max):
            problems.append(f"gamma range [{self.gamma_min}, {self.gamma_max}] invalid")
        if self.ransac_iters < 1:
            problems.append(f"ransac_iters must be >= 1, got {self.ransac_iters}")
        if self.ransac_radius <= 0:
            problems.append(f"ransac_radius must be > 0, got {self.ransac_radius}")
        if self.check_grid < 2:
            problems.append(f"check_grid must be >= 2, got {self.check_grid}")
        return problems

    # ----- serialization ----------------------------------------------------

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name, value in self.as_dict().items():
                fh.write(f"{name} = {_format_value(value)}\n")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(name: str, raw: str, target_type, problems: list) :
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip()) if raw else ()
        return raw
    except ValueError:
        problems.append(f"key {name!r}: cannot parse {raw!r} as {target_type.__name__}")
        return None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``key = value`` lines to a base config; rejects unknown keys."""
    cfg = base or RunConfig()
    types = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    problems = []
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            problems.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in types:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        value = _parse_value(key, raw, types[key], problems)
        if value is not None:
            updates[key] = value
    if problems:
        raise ConfigError("; ".join(problems))
    for key, value in updates.items():
        setattr(cfg, key, value)
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``key=value`` strings (CLI --set flags) on top of a config."""
    return parse_config_text("\n".join(pairs), cfg)


def require_valid(cfg: RunConfig) -> RunConfig:
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg
