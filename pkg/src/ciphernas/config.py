"""Run configuration: one JSON document wiring the whole engine.

Loaded with field-precise validation; every error names the offending
path so a bad config exits with a pointed diagnostic rather than a
traceback.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .model import CalibrationProfile
from .pce import ScoreWeights
from .pie import DEFAULT_N_CANDIDATES, PieConfig
from .policy import ConvSlot, FcSlot, PolicyConfig, PoolSlot, SearchSpace
from .search import ShapingConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


_REQUIRED = object()


def _get(doc: dict, path: str, key: str, types, default=_REQUIRED):
    if key not in doc:
        if default is not _REQUIRED:
            return default
        raise ConfigError(f"{path}.{key}", "missing required field")
    v = doc[key]
    if types is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if types is int and isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", "expected an integer, got a boolean")
    if not isinstance(v, types):
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}.{key}", f"expected {tn}, got {type(v).__name__}")
    return v


def _int_list(doc, path, key, default=None):
    v = _get(doc, path, key, list, default=default)
    if v is default:
        return default
    out = []
    for i, x in enumerate(v):
        if not isinstance(x, int) or isinstance(x, bool):
            raise ConfigError(f"{path}.{key}[{i}]", "expected an integer")
        out.append(x)
    return out


@dataclass
class RunConfig:
    seed: int = 1
    episodes: int = 200
    sw_n: int = 5
    jobs: int = 1
    dataset: str = "surrogate"
    trainer_cmd: Optional[list] = None
    trainer_timeout: float = 600.0
    output_dir: str = "out"
    quant_range: tuple = (2, 16)
    space: Optional[SearchSpace] = None
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    pie: PieConfig = field(default_factory=PieConfig)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    profile_ref: str = "reference"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(str(path), f"cannot read config: {e}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f"invalid JSON at line {e.lineno}: {e.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(str(path), "top-level document must be an object")
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        cfg = cls()
        cfg.seed = _get(doc, "config", "seed", int, default=1)
        cfg.episodes = _get(doc, "config", "episodes", int, default=200)
        if cfg.episodes < 0:
            raise ConfigError("config.episodes", "must be >= 0")
        cfg.sw_n = _get(doc, "config", "sw_n", int, default=5)
        if cfg.sw_n < 1:
            raise ConfigError("config.sw_n", "must be >= 1")
        cfg.jobs = _get(doc, "config", "jobs", int, default=1)
        cfg.dataset = _get(doc, "config", "dataset", str, default="surrogate")
        tc = _get(doc, "config", "trainer_cmd", (list, type(None)), default=None)
        cfg.trainer_cmd = list(tc) if tc else None
        cfg.trainer_timeout = _get(doc, "config", "trainer_timeout", float, default=600.0)
        cfg.output_dir = _get(doc, "config", "output_dir", str, default="out")
        qr = _int_list(doc, "config", "quant_range", default=[2, 16])
        if len(qr) != 2 or qr[0] < 1 or qr[1] < qr[0]:
            raise ConfigError("config.quant_range", "expected [lo, hi] with 1 <= lo <= hi")
        cfg.quant_range = tuple(qr)
        cfg.profile_ref = _get(doc, "config", "profile", str, default="reference")

        if "input" in doc or "template" in doc:
            cfg.space = _parse_space(doc)

        c = _get(doc, "config", "controller", dict, default={})
        cfg.policy = PolicyConfig(
            lr=_get(c, "controller", "lr", float, default=0.05),
            gamma=_get(c, "controller", "gamma", float, default=1.0),
            ema_decay=_get(c, "controller", "ema_decay", float, default=0.9),
            batch=_get(c, "controller", "batch", int, default=5),
            baseline_mode=_get(c, "controller", "baseline", str, default="ema"))
        bad = cfg.policy.check()
        if bad:
            raise ConfigError("config.controller", "; ".join(bad))

        p = _get(doc, "config", "pie", dict, default={})
        cfg.pie = PieConfig(
            delta=_get(p, "pie", "delta", float, default=1e-3),
            security_level=_get(p, "pie", "lambda", int, default=128),
            mc_trials=_get(p, "pie", "mc_trials", int, default=10_000),
            n_candidates=tuple(_int_list(p, "pie", "n_candidates",
                                         default=list(DEFAULT_N_CANDIDATES))),
            congruence_mode=_get(p, "pie", "congruence", str, default="2n"),
            mc_seed=_get(p, "pie", "mc_seed", int, default=0xC0FFEE))
        bad = cfg.pie.check()
        if bad:
            raise ConfigError("config.pie", "; ".join(bad))

        s = _get(doc, "config", "score", dict, default={})
        try:
            cfg.weights = ScoreWeights(
                beta=_get(s, "score", "beta", float, default=0.5),
                time_scale=_get(s, "score", "time_scale", float, default=1.0),
                bw_scale=_get(s, "score", "bw_scale", float, default=1.0))
        except ValueError as e:
            raise ConfigError("config.score", str(e)) from None
        mode = _get(s, "score", "reward_mode", str, default="shaped")
        if mode not in ("shaped", "raw"):
            raise ConfigError("config.score.reward_mode", f"unknown mode {mode!r}")
        cfg.shaping = ShapingConfig(
            xi_max=_get(s, "score", "xi_max", float, default=2.0), mode=mode)
        return cfg


def _parse_space(doc: dict) -> SearchSpace:
    inp = _get(doc, "config", "input", dict)
    h = _get(inp, "config.input", "height", int)
    w = _get(inp, "config.input", "width", int)
    ch = _get(inp, "config.input", "channels", int, default=1)
    classes = _get(inp, "config.input", "classes", int, default=10)
    template = _get(doc, "config", "template", list)
    slots = []
    for i, slot in enumerate(template):
        where = f"config.template[{i}]"
        if not isinstance(slot, dict):
            raise ConfigError(where, "expected an object")
        kind = _get(slot, where, "type", str)
        if kind == "conv_relu":
            kernels = _get(slot, where, "kernels", list)
            pairs = []
            for j, k in enumerate(kernels):
                if (not isinstance(k, list) or len(k) != 2
                        or not all(isinstance(x, int) for x in k)):
                    raise ConfigError(f"{where}.kernels[{j}]", "expected [f_h, f_w]")
                pairs.append((k[0], k[1]))
            slots.append(ConvSlot(
                filters=tuple(_int_list(slot, where, "filters")),
                kernels=tuple(pairs),
                l_i=tuple(_int_list(slot, where, "l_i")),
                l_f=tuple(_int_list(slot, where, "l_f"))))
        elif kind == "pool":
            slots.append(PoolSlot(window=_get(slot, where, "window", int, default=2)))
        elif kind == "fc":
            slots.append(FcSlot(l_i=tuple(_int_list(slot, where, "l_i")),
                                l_f=tuple(_int_list(slot, where, "l_f"))))
        else:
            raise ConfigError(f"{where}.type", f"unknown slot type {kind!r}")
    return SearchSpace(slots=tuple(slots), input_hw=(h, w),
                       input_channels=ch, classes=classes)


def load_profile(ref: str) -> CalibrationProfile:
    """Resolve a profile reference: the bundled name or a file path."""
    if ref == "reference":
        text = resources.files("ciphernas.data").joinpath(
            "reference_profile.json").read_text()
    else:
        text = Path(ref).read_text()
    return CalibrationProfile.from_json(text)


def bundled_network(name: str) -> str:
    return resources.files("ciphernas.data").joinpath(name).read_text()
