"""Shared data model: layers, networks, crypto parameters, cost reports.

Every other module consumes these types; the canonical JSON forms defined
here are also the wire/file formats used by the CLI and the external
trainer protocol.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

LINEAR_KINDS = ("Conv", "FC")
NONLINEAR_KINDS = ("ReLU", "Square", "AvgPool")

# Canonical key order of the serialized layer objects.  Fixed; parsers
# reject anything else.
LINEAR_KEYS = ("kind", "n_i", "n_o", "f_w", "f_h", "l_i", "l_f", "c_i", "c_o", "stride", "pad")
NONLINEAR_KEYS = ("kind", "n_i", "n_o", "l_i", "l_o", "c_i", "window")

DEFAULT_QUANT_RANGE = (2, 16)


class ParseError(ValueError):
    """Malformed network document.  `location` names the offending field."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class LinearLayer:
    """A Conv or FC layer.

    Spatial sizes are flattened (n_i = H*W per channel); conv geometry
    assumes square feature maps, H = W = sqrt(n_i).  An FC layer is a
    single n_o x n_i matrix: c_i = c_o = 1, f_w = n_i, f_h = 1.
    `pad` is either an explicit integer or "same".
    """

    kind: str
    n_i: int
    n_o: int
    f_w: int
    f_h: int
    l_i: int
    l_f: int
    c_i: int
    c_o: int
    stride: int = 1
    pad: Union[int, str] = "same"

    @property
    def is_fc(self) -> bool:
        return self.kind == "FC"

    def with_quantizers(self, l_i: int, l_f: int) -> "LinearLayer":
        return replace(self, l_i=l_i, l_f=l_f)

    def fingerprint(self) -> tuple:
        """Identity of the layer for caching: every field that affects
        crypto parameters or op counts."""
        return (self.kind, self.n_i, self.n_o, self.f_w, self.f_h,
                self.l_i, self.l_f, self.c_i, self.c_o, self.stride, self.pad)


@dataclass(frozen=True)
class NonLinearLayer:
    """ReLU / Square / AvgPool.  Channel count never changes; `window`
    is the pooling window edge (0 for ReLU/Square)."""

    kind: str
    n_i: int
    n_o: int
    l_i: int
    l_o: int
    c_i: int
    window: int = 0


Layer = Union[LinearLayer, NonLinearLayer]


@dataclass(frozen=True)
class Network:
    layers: tuple
    episode_id: int = 0
    sw_flag: bool = True

    def linear_layers(self) -> list:
        return [l for l in self.layers if isinstance(l, LinearLayer)]


def conv_output_size(layer: LinearLayer) -> Optional[int]:
    """Flattened output size implied by n_i, filter, stride and padding.

    Returns None when n_i is not a perfect square (geometry unknown).
    """
    h = math.isqrt(layer.n_i)
    if h * h != layer.n_i:
        return None
    if layer.pad == "same":
        out = -(-h // layer.stride)  # ceil
        return out * out
    out_h = (h + 2 * layer.pad - layer.f_h) // layer.stride + 1
    out_w = (h + 2 * layer.pad - layer.f_w) // layer.stride + 1
    if out_h < 1 or out_w < 1:
        return -1
    return out_h * out_w


def _layer_units(layer: Layer) -> tuple:
    """(units_in, channels_in, units_out, channels_out)."""
    if isinstance(layer, LinearLayer):
        return layer.n_i, layer.c_i, layer.n_o, layer.c_o
    return layer.n_i, layer.c_i, layer.n_o, layer.c_i


def validate_network(net: Network, quant_range: tuple = DEFAULT_QUANT_RANGE) -> list:
    """Check every type invariant; returns a list of violation strings.

    Pure and deterministic; an empty list means the network is valid.
    `quant_range` is the (configurable) search-space bound on quantizers.
    """
    lo, hi = quant_range
    out = []

    def bad(i, msg):
        out.append(f"layer {i}: {msg}")

    for i, layer in enumerate(net.layers):
        if isinstance(layer, LinearLayer):
            if layer.kind not in LINEAR_KINDS:
                bad(i, f"unknown linear kind {layer.kind!r}")
                continue
            for name in ("n_i", "n_o", "f_w", "f_h", "l_i", "l_f", "c_i", "c_o", "stride"):
                if getattr(layer, name) < 1:
                    bad(i, f"{name} must be >= 1, got {getattr(layer, name)}")
            if not (isinstance(layer.pad, int) and layer.pad >= 0) and layer.pad != "same":
                bad(i, f"pad must be a non-negative integer or 'same', got {layer.pad!r}")
            for name in ("l_i", "l_f"):
                v = getattr(layer, name)
                if not lo <= v <= hi:
                    bad(i, f"{name}={v} outside quantizer range [{lo}, {hi}]")
            if layer.is_fc:
                if layer.c_i != 1:
                    bad(i, "FC requires c_i=1")
                if layer.c_o != 1:
                    bad(i, "FC requires c_o=1")
                if layer.f_w != layer.n_i:
                    bad(i, f"FC requires f_w=n_i ({layer.n_i}), got {layer.f_w}")
                if layer.f_h != 1:
                    bad(i, "FC requires f_h=1")
            else:
                expect = conv_output_size(layer)
                if expect is None:
                    bad(i, f"Conv n_i={layer.n_i} is not a perfect square; geometry unknown")
                elif expect == -1:
                    bad(i, "Conv filter larger than padded feature map")
                elif expect != layer.n_o:
                    bad(i, f"Conv n_o={layer.n_o} inconsistent with geometry (expected {expect})")
        elif isinstance(layer, NonLinearLayer):
            if layer.kind not in NONLINEAR_KINDS:
                bad(i, f"unknown non-linear kind {layer.kind!r}")
                continue
            for name in ("n_i", "n_o", "l_i", "l_o", "c_i"):
                if getattr(layer, name) < 1:
                    bad(i, f"{name} must be >= 1, got {getattr(layer, name)}")
            if layer.kind in ("ReLU", "Square"):
                if layer.n_o != layer.n_i:
                    bad(i, f"{layer.kind} requires n_o=n_i")
                if layer.window != 0:
                    bad(i, f"{layer.kind} must have window=0")
            else:  # AvgPool
                if layer.window < 2:
                    bad(i, f"AvgPool window must be >= 2, got {layer.window}")
                else:
                    area = layer.window * layer.window
                    if layer.n_i % area != 0 or layer.n_o != layer.n_i // area:
                        bad(i, f"AvgPool requires n_o = n_i/{area} exactly")
        else:
            bad(i, f"unknown layer object {type(layer).__name__}")

    # Adjacency: channel-wise where channels survive, flattened into FC.
    for i in range(len(net.layers) - 1):
        a, b = net.layers[i], net.layers[i + 1]
        _, _, a_units, a_ch = _layer_units(a)
        b_units, b_ch, _, _ = _layer_units(b)
        if isinstance(b, LinearLayer) and b.is_fc:
            if a_units * a_ch != b_units * b_ch:
                bad(i + 1, f"FC input {b_units * b_ch} != previous output {a_units * a_ch}")
        else:
            if a_ch != b_ch:
                bad(i + 1, f"channel mismatch: previous c_o={a_ch}, c_i={b_ch}")
            if a_units != b_units:
                bad(i + 1, f"size mismatch: previous n_o={a_units}, n_i={b_units}")
    return out


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def _layer_to_dict(layer: Layer) -> dict:
    if isinstance(layer, LinearLayer):
        return {k: getattr(layer, k) for k in LINEAR_KEYS}
    return {k: getattr(layer, k) for k in NONLINEAR_KEYS}


def network_to_dict(net: Network) -> dict:
    return {
        "layers": [_layer_to_dict(l) for l in net.layers],
        "episode_id": net.episode_id,
        "sw_flag": net.sw_flag,
    }


def serialize_network(net: Network) -> str:
    """Canonical text form; `parse_network` round-trips it exactly."""
    return json.dumps(network_to_dict(net), separators=(", ", ": ")) + "\n"


def _require(obj: dict, key: str, types, where: str):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", where)
    v = obj[key]
    if types is int and isinstance(v, bool):  # bool is an int subclass
        raise ParseError(f"field {key!r} must be an integer", where)
    if not isinstance(v, types):
        raise ParseError(f"field {key!r} has wrong type {type(v).__name__}", where)
    return v


def layer_from_dict(obj: dict, where: str = "layer") -> Layer:
    kind = _require(obj, "kind", str, where)
    if kind in LINEAR_KINDS:
        keys = LINEAR_KEYS
    elif kind in NONLINEAR_KINDS:
        keys = NONLINEAR_KEYS
    else:
        raise ParseError(f"unknown layer kind {kind!r}", where)
    extra = set(obj) - set(keys)
    if extra:
        raise ParseError(f"unexpected field(s) {sorted(extra)}", where)
    vals = {}
    for k in keys:
        if k == "kind":
            vals[k] = kind
        elif k == "pad":
            v = _require(obj, k, (int, str), where)
            if isinstance(v, str) and v != "same":
                raise ParseError(f"field 'pad' must be an integer or 'same'", where)
            vals[k] = v
        else:
            vals[k] = _require(obj, k, int, where)
    return LinearLayer(**vals) if kind in LINEAR_KINDS else NonLinearLayer(**vals)


def network_from_dict(doc: dict) -> Network:
    layers_raw = _require(doc, "layers", list, "network")
    episode_id = _require(doc, "episode_id", int, "network")
    sw_flag = _require(doc, "sw_flag", bool, "network")
    extra = set(doc) - {"layers", "episode_id", "sw_flag"}
    if extra:
        raise ParseError(f"unexpected field(s) {sorted(extra)}", "network")
    layers = []
    for i, obj in enumerate(layers_raw):
        if not isinstance(obj, dict):
            raise ParseError("layer entry is not an object", f"layers[{i}]")
        layers.append(layer_from_dict(obj, f"layers[{i}]"))
    return Network(layers=tuple(layers), episode_id=episode_id, sw_flag=sw_flag)


def parse_network(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top-level document must be an object")
    return network_from_dict(doc)


# ---------------------------------------------------------------------------
# Crypto parameters and cost reporting
# ---------------------------------------------------------------------------

VALID_RING_DIMS = (1024, 2048, 4096, 8192, 16384)


@dataclass(frozen=True)
class CryptoParams:
    """One instantiated RLWE parameter set for a linear layer."""

    n: int
    p: int
    q: int
    sigma: float = 3.2
    security_bits: int = 128

    @property
    def bits_p(self) -> int:
        return self.p.bit_length()

    @property
    def bits_q(self) -> int:
        return self.q.bit_length()

    @property
    def delta(self) -> int:
        """Plaintext scaling factor floor(q/p)."""
        return self.q // self.p

    def check(self, congruence_base: Optional[int] = None) -> list:
        out = []
        if self.n not in VALID_RING_DIMS:
            out.append(f"n={self.n} not a supported power of two")
        base = congruence_base if congruence_base is not None else 2 * self.n
        if self.p % base != 1:
            out.append(f"p !== 1 (mod {base})")
        if self.q % base != 1:
            out.append(f"q !== 1 (mod {base})")
        return out


@dataclass(frozen=True)
class LayerCost:
    """Per-layer slice of a CostReport."""

    index: int
    kind: str
    t: float
    b: float
    n_mult: int = 0
    n_rot: int = 0
    n_add: int = 0
    n_ciphertexts: int = 0
    n_elements: int = 0
    crypto: Optional[CryptoParams] = None


@dataclass(frozen=True)
class CostReport:
    per_layer: tuple
    t_pahe: float = 0.0
    t_gc: float = 0.0

    @property
    def T(self) -> float:
        return sum(row.t for row in self.per_layer)

    @property
    def B(self) -> float:
        return sum(row.b for row in self.per_layer)

    def csv_rows(self) -> list:
        rows = [("index", "kind", "n", "bits_p", "bits_q", "n_mult", "n_rot",
                 "n_add", "t_layer_s", "b_layer_bytes")]
        for r in self.per_layer:
            c = r.crypto
            rows.append((r.index, r.kind,
                         c.n if c else 0, c.bits_p if c else 0, c.bits_q if c else 0,
                         r.n_mult, r.n_rot, r.n_add, repr(r.t), repr(r.b)))
        return rows

    def text_summary(self) -> str:
        lines = []
        for r in self.per_layer:
            if r.crypto:
                crypto = f"n={r.crypto.n} p={r.crypto.bits_p}b q={r.crypto.bits_q}b"
                ops = f"mult={r.n_mult} rot={r.n_rot} add={r.n_add} ct={r.n_ciphertexts}"
            else:
                crypto = "-"
                ops = f"elements={r.n_elements}"
            lines.append(f"  [{r.index:2d}] {r.kind:<8s} {crypto:<28s} {ops:<40s} "
                         f"t={r.t:.6f}s b={r.b:.0f}B")
        lines.append(f"PAHE time:  {self.t_pahe:.4f} s")
        lines.append(f"GC time:    {self.t_gc:.4f} s")
        lines.append(f"Total time: {self.T:.4f} s")
        lines.append(f"Bandwidth:  {self.B:.0f} bytes ({self.B / 1e9:.4f} GB)")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Calibration profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearOpCost:
    t_mult: float
    t_rot: float
    t_add: float
    ct_bytes: int


@dataclass(frozen=True)
class NonLinearCost:
    t_per_element: float
    b_per_element: float


@dataclass
class CalibrationProfile:
    """Unit costs of primitive operations.

    `rows` is keyed by (n, words); `nonlinear` by kind, with optional
    per-bitwidth overrides in `nonlinear_per_l[(kind, l)]`.
    """

    rows: dict
    nonlinear: dict
    profile_name: str = "unnamed"
    source: str = "reference"
    nonlinear_per_l: dict = field(default_factory=dict)

    def row(self, n: int, words: int) -> LinearOpCost:
        try:
            return self.rows[(n, words)]
        except KeyError:
            raise KeyError(f"profile {self.profile_name!r} has no row for n={n}, words={words}") from None

    def nl_cost(self, kind: str, l: int) -> NonLinearCost:
        if (kind, l) in self.nonlinear_per_l:
            return self.nonlinear_per_l[(kind, l)]
        try:
            return self.nonlinear[kind]
        except KeyError:
            raise KeyError(f"profile {self.profile_name!r} has no entry for non-linear kind {kind!r}") from None

    def check(self) -> list:
        out = []
        for (n, w), row in self.rows.items():
            for f_name in ("t_mult", "t_rot", "t_add"):
                if getattr(row, f_name) <= 0:
                    out.append(f"({n},{w}).{f_name} must be > 0")
            if row.ct_bytes <= 0:
                out.append(f"({n},{w}).ct_bytes must be > 0")
        # Cost non-decreasing in n and in words, per op.
        for (n, w), row in self.rows.items():
            for (n2, w2), row2 in self.rows.items():
                if (n2 > n and w2 == w) or (n2 == n and w2 > w):
                    for f_name in ("t_mult", "t_rot", "t_add", "ct_bytes"):
                        if getattr(row2, f_name) < getattr(row, f_name):
                            out.append(f"{f_name} decreases from (n={n},w={w}) to (n={n2},w={w2})")
        for kind, nl in self.nonlinear.items():
            if nl.t_per_element < 0 or nl.b_per_element < 0:
                out.append(f"nonlinear {kind!r} costs must be >= 0")
        return out

    def to_json(self) -> str:
        doc = {
            "profile_name": self.profile_name,
            "source": self.source,
            "linear": {
                f"n{n}_w{w}": {"t_mult": r.t_mult, "t_rot": r.t_rot,
                               "t_add": r.t_add, "ct_bytes": r.ct_bytes}
                for (n, w), r in sorted(self.rows.items())
            },
            "nonlinear": {
                kind: {"t_per_element": c.t_per_element, "b_per_element": c.b_per_element}
                for kind, c in sorted(self.nonlinear.items())
            },
        }
        if self.nonlinear_per_l:
            doc["nonlinear_per_l"] = {
                f"{kind}_l{l}": {"t_per_element": c.t_per_element, "b_per_element": c.b_per_element}
                for (kind, l), c in sorted(self.nonlinear_per_l.items())
            }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProfile":
        doc = json.loads(text)
        rows = {}
        for key, r in doc["linear"].items():
            n_s, w_s = key.split("_")
            rows[(int(n_s[1:]), int(w_s[1:]))] = LinearOpCost(
                t_mult=float(r["t_mult"]), t_rot=float(r["t_rot"]),
                t_add=float(r["t_add"]), ct_bytes=int(r["ct_bytes"]))
        nonlinear = {kind: NonLinearCost(float(c["t_per_element"]), float(c["b_per_element"]))
                     for kind, c in doc.get("nonlinear", {}).items()}
        per_l = {}
        for key, c in doc.get("nonlinear_per_l", {}).items():
            kind, l_s = key.rsplit("_l", 1)
            per_l[(kind, int(l_s))] = NonLinearCost(float(c["t_per_element"]), float(c["b_per_element"]))
        return cls(rows=rows, nonlinear=nonlinear,
                   profile_name=doc.get("profile_name", "unnamed"),
                   source=doc.get("source", "reference"),
                   nonlinear_per_l=per_l)
