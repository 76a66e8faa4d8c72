"""Run configuration: sectioned key-value files, hashing and seed streams."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .charts import LITERAL, PRACTICAL, ChartConstants
from .errors import ConfigError

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "system": {"name": (str, "pcat2"), "delta": (float, 0.01)},
    "charts": {"chi": (float, 0.5), "epsilon": (float, 0.1), "beta": (float, 1.0),
               "mode": (str, "practical"), "window": (int, 64)},
    "manifold": {"grid_res": (int, 33), "iters": (int, 20), "steps": (int, 20)},
    "truncation": {"n_orbits": (int, 2), "orbit_len": (int, 64), "delta_x": (float, 1e-8),
                   "delta_c": (float, 1e-8), "coded_per_orbit": (int, 2), "chain_half": (int, 22)},
    "cover": {"translations": (int, 2), "markov_samples": (int, 33), "iters": (int, 24)},
    "tolerances": {"exponent": (float, 1e-9), "off_block": (float, 1e-5), "equivariance": (float, 1e-6),
                   "markov": (float, 1e-5), "commuting": (float, 1e-6), "idempotence": (float, 1e-10),
                   "leaf": (float, 1e-6), "markov_rate": (float, 0.99), "same_point": (float, 1e-8)},
    "run": {"seed": (int, 0), "output_dir": (str, "out")},
}

STREAMS = ("orbits", "alphabet", "alphabet2", "net", "multistart", "splice")

LINEAR = ("cat2", "plastic3")


@dataclass(frozen=True)
class RunConfig:
    system: str = "pcat2"
    delta: float = 0.01
    chi: float = 0.5
    epsilon: float = 0.1
    beta: float = 1.0
    mode: str = "practical"
    window: int = 64
    grid_res: int = 33
    iters: int = 20
    steps: int = 20
    n_orbits: int = 2
    orbit_len: int = 64
    delta_x: float = 1e-8
    delta_c: float = 1e-8
    coded_per_orbit: int = 2
    chain_half: int = 22
    translations: int = 2
    markov_samples: int = 33
    cover_iters: int = 24
    tolerances: dict = field(default_factory=lambda: {k: v for k, (_, v) in SCHEMA["tolerances"].items()})
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.chi <= 0:
            raise ConfigError("chi must be positive")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.mode not in ("literal", "practical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.system not in LINEAR + ("pcat2",):
            raise ConfigError(f"unknown system {self.system!r}")
        if not 0 < self.beta <= 1:
            raise ConfigError("beta must lie in (0, 1]")
        if self.window < 8:
            raise ConfigError("window must be at least 8")
        if self.grid_res < 5 or self.grid_res % 2 == 0:
            raise ConfigError("grid_res must be odd and at least 5")
        if self.chain_half < self.iters + 1:
            raise ConfigError("chain_half must exceed iters")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def system_label(self) -> str:
        return f"pcat2({self.delta})" if self.system == "pcat2" else self.system

    @property
    def constants(self) -> ChartConstants:
        return PRACTICAL if self.mode == "practical" else LITERAL

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw) if kw else self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """sha256 over the canonical JSON of everything except the output directory."""
        body = self.to_dict()
        body.pop("output_dir")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def header(self) -> dict:
        return {"config_hash": self.config_hash(), "mode": self.mode, "system": self.system_label,
                "seed": self.seed, "constants": self.constants.header()}

    def rng(self, stream: str) -> np.random.Generator:
        """Independent generator per named stream, spawned from the run seed."""
        if stream not in STREAMS:
            raise KeyError(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(STREAMS.index(stream),))
        return np.random.default_rng(ss)


_FIELD_OF = {("system", "name"): "system", ("cover", "iters"): "cover_iters"}


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    kw: dict = {}
    tols = dict(RunConfig().tolerances)
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            typ = SCHEMA[section][key][0]
            try:
                val = typ(raw) if typ is not int else int(raw, 0)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from exc
            if section == "tolerances":
                tols[key] = val
            else:
                kw[_FIELD_OF.get((section, key), key)] = val
    return RunConfig(**kw, tolerances=tols)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    """Inverse of parse_config."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            if section == "tolerances":
                val = cfg.tolerances[key]
            else:
                val = getattr(cfg, _FIELD_OF.get((section, key), key))
            lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)
