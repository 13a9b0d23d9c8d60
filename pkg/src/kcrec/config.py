"""Flat run configuration.

Config files are UTF-8 ``key=value`` lines (``#`` starts a comment). Values
given on the command line override the file, which overrides defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields

from kcrec.errors import ConfigError

# Ablation variants in reporting order; "full" last.
VARIANTS = ("w/-er", "w/-ir", "w/o-cl", "w/o-att:⊕", "w/o-att:+", "full")
VARIANT_ALIASES = {
    "w/o-att:concat": "w/o-att:⊕",
    "w/o-att:add": "w/o-att:+",
    "only-er": "w/-er",
    "only-ir": "w/-ir",
    "no-cl": "w/o-cl",
}


@dataclass
class RunConfig:
    # representation sizes
    d0: int = 64
    d1: int = 64
    d_fused: int = 64
    er_layers: int = 2
    ir_layers: int = 1
    hops: int = 4
    channels: int = 2
    bases: int = 10
    # contrastive learning
    protos_user: int = 10
    protos_concept: int = 10
    tau: float = 0.5
    alpha_u: float = 0.5
    alpha_k: float = 0.5
    cl_sub_batch: int = 0
    # objective and optimizer
    beta: float = 0.25
    l2: float = 1e-4
    lr: float = 0.001
    batch: int = 1024
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    # ablation flags
    only_er: bool = False
    only_ir: bool = False
    no_cl: bool = False
    fusion: str = "attention"
    # data handling
    interaction: str = "click"
    user_type: str = "user"
    item_type: str = "concept"
    split: str = "leave-one-out"
    split_ratio: float = 0.8
    split_cutoff: int = 0
    eval_negatives: int = 99
    ks: str = "5,10,20"

    def validate(self) -> "RunConfig":
        positive = ("d0", "d1", "d_fused", "er_layers", "ir_layers", "hops", "bases",
                    "protos_user", "protos_concept", "batch", "eval_negatives")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 1 <= self.channels <= 8:
            raise ConfigError("channels must lie in [1, 8]")
        if self.epochs < 0 or self.patience < 0 or self.cl_sub_batch < 0:
            raise ConfigError("epochs, patience and cl_sub_batch must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        for name in ("alpha_u", "alpha_k", "beta", "l2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.only_er and self.only_ir:
            raise ConfigError("only_er and only_ir are mutually exclusive")
        if self.fusion not in ("attention", "concat", "add"):
            raise ConfigError(f"fusion must be attention, concat or add, got {self.fusion!r}")
        if self.split not in ("ratio", "leave-one-out", "temporal"):
            raise ConfigError(f"unknown split policy {self.split!r}")
        try:
            ks = self.k_list
        except ValueError:
            raise ConfigError(f"ks must be a comma-separated list of integers, got {self.ks!r}") from None
        if not ks or min(ks) < 1:
            raise ConfigError("ks must list positive cutoffs")
        return self

    # -- derived views -------------------------------------------------
    @property
    def k_list(self) -> list:
        return [int(k) for k in self.ks.split(",") if k.strip()]

    @property
    def views(self) -> tuple:
        if self.only_er:
            return ("er",)
        if self.only_ir:
            return ("ir",)
        return ("er", "ir")

    @property
    def contrastive(self) -> bool:
        return not self.no_cl

    @property
    def cross_view_cl(self) -> bool:
        return self.contrastive and len(self.views) == 2 and self.beta > 0

    def resolved(self) -> "RunConfig":
        cfg = dataclasses.replace(self)
        if cfg.no_cl:
            cfg.beta = 0.0
        return cfg.validate()

    def with_variant(self, variant: str) -> "RunConfig":
        variant = VARIANT_ALIASES.get(variant, variant)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")
        cfg = dataclasses.replace(self, only_er=False, only_ir=False, no_cl=False, fusion="attention")
        if variant == "w/-er":
            cfg.only_er = True
        elif variant == "w/-ir":
            cfg.only_ir = True
        elif variant == "w/o-cl":
            cfg.no_cl = True
        elif variant == "w/o-att:⊕":
            cfg.fusion = "concat"
        elif variant == "w/o-att:+":
            cfg.fusion = "add"
        return cfg.resolved()

    # -- text form -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_mapping(parse_key_values(text), base)

    @classmethod
    def from_mapping(cls, mapping: dict, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = dataclasses.replace(base) if base is not None else cls()
        types = {f.name: f.type for f in fields(cls)}
        defaults = {f.name: f.default for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, coerce(key, raw, type(defaults[key])))
        return cfg


def coerce(key, raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
