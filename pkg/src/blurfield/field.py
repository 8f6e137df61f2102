"""The blur-field MLP: evaluation, exact gradients, Adam updates, checkpoints.

The field maps raw coordinates (x, y, f[, d], u, v) to per-channel PSF
values. Coordinates are affinely normalized to [-1, 1] (no positional
encoding) and the normalized vector is zero-padded to a multiple of 8 input
lanes; rectifier hidden layers feed a logistic-sigmoid output, so values are
confined to (0, gain)^C and the nonnegativity constraint holds by
construction.

Everything here is plain numpy. Forward and reverse passes are pure
functions of (field, coords); updates return new field/state objects, so a
field instance can be shared read-only across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.special import expit

from .errors import DivergenceError, FormatError
from .images import ChannelLayout, Kernel2D, SensorDescriptor
from .validation import check_finite, check_odd

CHECKPOINT_MAGIC = b"BFLD"
CHECKPOINT_VERSION = 1
_INPUT_LANE_MULTIPLE = 8


@dataclass(frozen=True)
class FieldArchitecture:
    """MLP shape. ``input_dim`` is 5 for (x, y, f, u, v), 6 with target distance."""

    input_dim: int = 5
    hidden_layers: int = 7
    hidden_width: int = 512
    output_dim: int = 4
    output_gain: float = 1.0

    def __post_init__(self):
        if self.input_dim not in (5, 6):
            raise ValueError(f"input_dim must be 5 or 6, got {self.input_dim}")
        if self.hidden_layers < 1 or self.hidden_width < 1 or self.output_dim < 1:
            raise ValueError("hidden_layers, hidden_width, output_dim must be >= 1")
        if not self.output_gain > 0:
            raise ValueError("output_gain must be > 0")

    @property
    def input_width(self) -> int:
        """Input lanes after zero padding to a multiple of 8."""
        m = _INPUT_LANE_MULTIPLE
        return ((self.input_dim + m - 1) // m) * m

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every weight matrix, input to output."""
        shapes = [(self.input_width, self.hidden_width)]
        shapes += [(self.hidden_width, self.hidden_width)] * (self.hidden_layers - 1)
        shapes.append((self.hidden_width, self.output_dim))
        return shapes

    def parameter_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine coordinate ranges mapped onto [-1, 1] per input dimension.

    ``d_range`` present means a 6D field; its column sits between f and u.
    Degenerate ranges (hi == lo) map to 0.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    f_range: tuple[float, float]
    u_range: tuple[float, float]
    v_range: tuple[float, float]
    d_range: tuple[float, float] | None = None

    @property
    def input_dim(self) -> int:
        return 5 if self.d_range is None else 6

    def ranges(self) -> list[tuple[float, float]]:
        out = [self.x_range, self.y_range, self.f_range]
        if self.d_range is not None:
            out.append(self.d_range)
        out += [self.u_range, self.v_range]
        return out

    def normalize(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != self.input_dim:
            raise ValueError(
                f"coords must have shape (N, {self.input_dim}), got {coords.shape}"
            )
        lohi = np.array(self.ranges(), dtype=np.float64)
        center = (lohi[:, 0] + lohi[:, 1]) / 2.0
        half = (lohi[:, 1] - lohi[:, 0]) / 2.0
        inv = np.where(half > 0, 1.0 / np.where(half > 0, half, 1.0), 0.0)
        return (coords - center) * inv


@dataclass(frozen=True)
class BlurField:
    arch: FieldArchitecture
    norm: NormalizationSpec
    sensor: SensorDescriptor
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.norm.input_dim != self.arch.input_dim:
            raise ValueError("normalization input_dim does not match architecture")
        if self.arch.output_dim != self.sensor.channels:
            raise ValueError(
                f"output_dim {self.arch.output_dim} != sensor channels "
                f"{self.sensor.channels}"
            )
        shapes = self.arch.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ValueError("layer count mismatch")
        frozen_w, frozen_b = [], []
        for (fi, fo), W, b in zip(shapes, self.weights, self.biases):
            if W.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"layer shape mismatch: {W.shape} vs ({fi}, {fo})")
            W = np.ascontiguousarray(W)
            b = np.ascontiguousarray(b)
            W.setflags(write=False)
            b.setflags(write=False)
            frozen_w.append(W)
            frozen_b.append(b)
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def astype(self, dtype) -> "BlurField":
        return replace(
            self,
            weights=tuple(W.astype(dtype) for W in self.weights),
            biases=tuple(b.astype(dtype) for b in self.biases),
        )


def init_field(arch: FieldArchitecture, norm: NormalizationSpec,
               sensor: SensorDescriptor, seed: int = 0,
               dtype=np.float32) -> BlurField:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights, biases = [], []
    for fi, fo in arch.layer_shapes():
        limit = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-limit, limit, size=(fi, fo)).astype(dtype))
        biases.append(np.zeros(fo, dtype=dtype))
    return BlurField(arch=arch, norm=norm, sensor=sensor,
                     weights=tuple(weights), biases=tuple(biases))


def _padded_input(field: BlurField, coords: np.ndarray) -> np.ndarray:
    z = field.norm.normalize(coords).astype(field.dtype)
    pad = field.arch.input_width - field.arch.input_dim
    if pad:
        z = np.concatenate([z, np.zeros((z.shape[0], pad), dtype=field.dtype)], axis=1)
    return z


def _forward_cached(field: BlurField, coords: np.ndarray):
    """Forward pass keeping the activations needed for the reverse pass."""
    a = _padded_input(field, coords)
    acts = [a]
    n_hidden = field.arch.hidden_layers
    for l in range(n_hidden):
        a = np.maximum(a @ field.weights[l] + field.biases[l], 0)
        acts.append(a)
    logits = a @ field.weights[-1] + field.biases[-1]
    sig = expit(logits)
    y = sig if field.arch.output_gain == 1.0 else sig * field.dtype.type(field.arch.output_gain)
    return y, (acts, sig)


def _backward(field: BlurField, cache, upstream: np.ndarray):
    """Parameter gradients of sum(upstream * output) given a forward cache."""
    acts, sig = cache
    n_hidden = field.arch.hidden_layers
    gain = field.arch.output_gain
    d = upstream.astype(field.dtype) * (sig * (1.0 - sig))
    if gain != 1.0:
        d = d * field.dtype.type(gain)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * (n_hidden + 1)
    grads[n_hidden] = (acts[n_hidden].T @ d, d.sum(axis=0))
    g = d @ field.weights[n_hidden].T
    for l in range(n_hidden - 1, -1, -1):
        g = np.where(acts[l + 1] > 0, g, 0)
        grads[l] = (acts[l].T @ g, g.sum(axis=0))
        if l > 0:
            g = g @ field.weights[l].T
    return grads


def eval_batch(field: BlurField, coords: np.ndarray) -> np.ndarray:
    """Evaluate the field at raw coordinates; returns (N, C) values in (0, gain)."""
    coords = np.asarray(coords, dtype=np.float64)
    check_finite("coords", coords)
    y, _ = _forward_cached(field, coords)
    return y


def grad_batch(field: BlurField, coords: np.ndarray, upstream: np.ndarray):
    """Exact reverse-mode parameter gradients of sum(upstream * eval_batch).

    ``upstream`` has shape (N, C). Returns one (dW, db) pair per layer, in
    layer order, with a fixed accumulation order.
    """
    coords = np.asarray(coords, dtype=np.float64)
    check_finite("coords", coords)
    upstream = np.asarray(upstream)
    y, cache = _forward_cached(field, coords)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream shape {upstream.shape} != output shape {y.shape}")
    return _backward(field, cache, upstream)


def kernel_grid_coords(x: float, y: float, f: float, ku: int, kv: int,
                       d: float | None = None, pixel_pitch: float = 1.0) -> np.ndarray:
    """Raw field coordinates of a (kv x ku) displacement grid at one point.

    Rows are ordered v-major (v outer, u inner) to line up with
    ``Kernel2D.samples[c].reshape(-1)``.
    """
    check_odd("ku", ku)
    check_odd("kv", kv)
    u = (np.arange(ku) - (ku - 1) / 2.0) * pixel_pitch
    v = (np.arange(kv) - (kv - 1) / 2.0) * pixel_pitch
    vv, uu = np.meshgrid(v, u, indexing="ij")
    n = ku * kv
    cols = [np.full(n, x), np.full(n, y), np.full(n, f)]
    if d is not None:
        cols.append(np.full(n, d))
    cols += [uu.ravel(), vv.ravel()]
    return np.stack(cols, axis=1)


def sample_kernel(field: BlurField, x: float, y: float, f: float,
                  ku: int, kv: int, d: float | None = None,
                  pixel_pitch: float = 1.0) -> Kernel2D:
    """Slice the field into a discrete kernel at one (x, y, f[, d]) location."""
    if (d is None) != (field.arch.input_dim == 5):
        raise ValueError("d must be given exactly when the field is 6D")
    coords = kernel_grid_coords(x, y, f, ku, kv, d=d, pixel_pitch=pixel_pitch)
    values = eval_batch(field, coords)  # (kv*ku, C)
    samples = values.reshape(kv, ku, field.arch.output_dim).transpose(2, 0, 1)
    return Kernel2D.from_array(samples.astype(np.float32), pixel_pitch=pixel_pitch)


# ---------------------------------------------------------------------------
# Adam

@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam with decoupled weight decay and stepped lr decay."""

    step: int
    m: tuple[tuple[np.ndarray, np.ndarray], ...]
    v: tuple[tuple[np.ndarray, np.ndarray], ...]
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-15
    weight_decay: float = 1e-6
    lr_decay: float = 0.98
    lr_decay_every: int = 10000

    def effective_lr(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        return self.lr * self.lr_decay ** (s // self.lr_decay_every)


def init_adam(field: BlurField, **hyper) -> AdamState:
    zeros = tuple(
        (np.zeros_like(W), np.zeros_like(b))
        for W, b in zip(field.weights, field.biases)
    )
    return AdamState(step=0, m=zeros, v=zeros, **hyper)


def adam_step(field: BlurField, state: AdamState, grads) -> tuple[BlurField, AdamState]:
    """One optimizer step; returns the updated field and state."""
    if len(grads) != len(field.weights):
        raise ValueError("gradient layer count mismatch")
    t = state.step + 1
    lr_t = state.effective_lr(t)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_w, new_b, new_m, new_v = [], [], [], []
    for (W, b), (mW, mb), (vW, vb), (gW, gb) in zip(
            zip(field.weights, field.biases), state.m, state.v, grads):
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise DivergenceError("non-finite gradients in adam_step")
        mW2 = state.beta1 * mW + (1 - state.beta1) * gW
        mb2 = state.beta1 * mb + (1 - state.beta1) * gb
        vW2 = state.beta2 * vW + (1 - state.beta2) * gW * gW
        vb2 = state.beta2 * vb + (1 - state.beta2) * gb * gb
        W2 = W - lr_t * state.weight_decay * W - lr_t * (mW2 / c1) / (np.sqrt(vW2 / c2) + state.eps)
        b2 = b - lr_t * state.weight_decay * b - lr_t * (mb2 / c1) / (np.sqrt(vb2 / c2) + state.eps)
        new_w.append(W2.astype(W.dtype))
        new_b.append(b2.astype(b.dtype))
        new_m.append((mW2.astype(W.dtype), mb2.astype(b.dtype)))
        new_v.append((vW2.astype(W.dtype), vb2.astype(b.dtype)))
    field2 = replace(field, weights=tuple(new_w), biases=tuple(new_b))
    state2 = replace(state, step=t, m=tuple(new_m), v=tuple(new_v))
    return field2, state2


# ---------------------------------------------------------------------------
# Checkpoint I/O
#
# Layout: magic "BFLD", u32 version, u32 header length, JSON header, raw
# little-endian float32 parameters (per layer: weights row-major, then bias),
# u8 optimizer-present flag, then (u64 step, first moments, second moments).

def _header_dict(field: BlurField) -> dict:
    norm = {
        "x": list(field.norm.x_range),
        "y": list(field.norm.y_range),
        "f": list(field.norm.f_range),
        "u": list(field.norm.u_range),
        "v": list(field.norm.v_range),
    }
    if field.norm.d_range is not None:
        norm["d"] = list(field.norm.d_range)
    return {
        "architecture": {
            "input_dim": field.arch.input_dim,
            "input_width": field.arch.input_width,
            "hidden_layers": field.arch.hidden_layers,
            "hidden_width": field.arch.hidden_width,
            "output_dim": field.arch.output_dim,
            "output_gain": field.arch.output_gain,
            "hidden_interpretation": "hidden_layers",
        },
        "normalization": norm,
        "sensor": {
            "width": field.sensor.width,
            "height": field.sensor.height,
            "layout": field.sensor.layout.value,
            "black_level": field.sensor.black_level,
            "white_level": field.sensor.white_level,
        },
        "dtype": "float32",
        "weight_layout": "per layer: weights (fan_in x fan_out) row-major, then bias",
        "metadata": field.metadata,
    }


def _pack_params(field: BlurField) -> bytes:
    parts = []
    for W, b in zip(field.weights, field.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(field: BlurField, path, state: AdamState | None = None) -> None:
    header = json.dumps(_header_dict(field)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(_pack_params(field))
        if state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", state.step))
            for group in (state.m, state.v):
                for mW, mb in group:
                    fh.write(np.ascontiguousarray(mW, dtype="<f4").tobytes())
                    fh.write(np.ascontiguousarray(mb, dtype="<f4").tobytes())
            fh.write(json.dumps({
                "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                "eps": state.eps, "weight_decay": state.weight_decay,
                "lr_decay": state.lr_decay, "lr_decay_every": state.lr_decay_every,
            }).encode("utf-8"))


def _unpack_layers(arch: FieldArchitecture, buf: bytes, offset: int):
    weights, biases = [], []
    for fi, fo in arch.layer_shapes():
        nw, nb = fi * fo * 4, fo * 4
        if offset + nw + nb > len(buf):
            raise FormatError("checkpoint truncated inside parameter blob")
        W = np.frombuffer(buf, dtype="<f4", count=fi * fo, offset=offset).reshape(fi, fo)
        offset += nw
        b = np.frombuffer(buf, dtype="<f4", count=fo, offset=offset)
        offset += nb
        weights.append(W.copy())
        biases.append(b.copy())
    return tuple(weights), tuple(biases), offset


def load_checkpoint(path) -> tuple[BlurField, AdamState | None]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}") from e
    a = header["architecture"]
    arch = FieldArchitecture(
        input_dim=a["input_dim"], hidden_layers=a["hidden_layers"],
        hidden_width=a["hidden_width"], output_dim=a["output_dim"],
        output_gain=a.get("output_gain", 1.0),
    )
    if a.get("input_width", arch.input_width) != arch.input_width:
        raise FormatError("checkpoint input_width inconsistent with architecture")
    n = header["normalization"]
    norm = NormalizationSpec(
        x_range=tuple(n["x"]), y_range=tuple(n["y"]), f_range=tuple(n["f"]),
        u_range=tuple(n["u"]), v_range=tuple(n["v"]),
        d_range=tuple(n["d"]) if "d" in n else None,
    )
    s = header["sensor"]
    sensor = SensorDescriptor(
        width=s["width"], height=s["height"], layout=ChannelLayout(s["layout"]),
        black_level=s["black_level"], white_level=s["white_level"],
    )
    weights, biases, offset = _unpack_layers(arch, buf, 12 + hlen)
    field = BlurField(arch=arch, norm=norm, sensor=sensor, weights=weights,
                      biases=biases, metadata=header.get("metadata", {}))
    if offset >= len(buf):
        raise FormatError("checkpoint truncated before optimizer flag")
    flag = buf[offset]
    offset += 1
    if flag == 0:
        if offset != len(buf):
            raise FormatError("trailing bytes after checkpoint payload")
        return field, None
    (step,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    m_w, m_b, offset = _unpack_layers(arch, buf, offset)
    v_w, v_b, offset = _unpack_layers(arch, buf, offset)
    hyper = json.loads(buf[offset:].decode("utf-8"))
    state = AdamState(
        step=step,
        m=tuple(zip(m_w, m_b)),
        v=tuple(zip(v_w, v_b)),
        **hyper,
    )
    return field, state
