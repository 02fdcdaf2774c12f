"""Training configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

ABLATIONS = {
    # name in reports -> flags switched on
    "FairSR": {},
    "-FS": {"random_sampling": True},
    "-RA": {"no_ra": True},
    "-Conv": {"no_conv": True},
    "-PFG": {"no_pfg": True},
    "-FPGE": {"no_fpge": True},
    "-PFG&FPGE": {"no_pfg_and_fpge": True},
}

# fields that change parameter shapes; checkpoints must agree on these
_SHAPE_FIELDS = (
    "d", "t", "n_h", "n_v", "filter_width", "cipl_layers", "tail_layers",
    "user_mlp_layers", "relation_layers", "shared_attention", "precision",
)


@dataclass
class TrainConfig:
    d: int = 32
    t: int = 5
    g: int = 3
    n_h: int = 16
    n_v: int = 16
    filter_width: int = 2
    lambda1: float = 1.0
    lambda2: float = 1e-6
    epsilon: int = 3
    cipl_layers: int = 2
    tail_layers: int = 1
    user_mlp_layers: int = 2
    relation_layers: int = 2
    lr: float = 1e-3
    batch_size: int = 256
    fpge_batch_size: int = 256
    epochs: int = 50
    patience: int = 10
    eval_k: int = 10
    seed: int = 0
    protected: tuple[str, ...] = ("gender",)
    precision: str = "float64"
    init_scale: float = 0.5
    shared_attention: bool = False
    no_fpge: bool = False
    no_pfg: bool = False
    no_conv: bool = False
    no_ra: bool = False
    random_sampling: bool = False
    no_pfg_and_fpge: bool = False
    data_dir: str = ""
    graph_path: str = ""

    def __post_init__(self):
        if isinstance(self.protected, str):
            self.protected = tuple(p for p in self.protected.split(",") if p)
        self.protected = tuple(self.protected)
        self.validate()

    def validate(self):
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        if self.epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        if self.n_h + self.n_v != self.d:
            raise ValueError(f"n_h + n_v must equal d ({self.n_h} + {self.n_v} != {self.d})")
        if not 1 <= self.filter_width <= self.t:
            raise ValueError(f"filter width {self.filter_width} must be within 1..t={self.t}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if min(self.cipl_layers, self.tail_layers, self.user_mlp_layers, self.relation_layers) < 1:
            raise ValueError("layer counts must be >= 1")

    # effective switches, folding the combined ablation into its parts
    @property
    def use_fpge(self) -> bool:
        return not (self.no_fpge or self.no_pfg_and_fpge)

    @property
    def use_gate(self) -> bool:
        return not (self.no_pfg or self.no_pfg_and_fpge)

    @property
    def sampling_mode(self) -> str:
        return "random" if self.random_sampling else "fair"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def shape_hash(self) -> str:
        payload = {k: getattr(self, k) for k in _SHAPE_FIELDS}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    # -- key=value files

    def dumps(self) -> str:
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, tuple):
                value = ",".join(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], raw)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def _coerce(type_name, raw):
    if type_name == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    if type_name.startswith("tuple"):
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    return raw
