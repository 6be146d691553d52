"""Minimal 3-D CNN engine with activation recording.

A model is a declarative trunk (pooling / convolution / ReLU / flatten /
dense layers) feeding two fixed heads: a 2-unit softmax pose head and a
1-unit scalar affinity head.  Everything runs in float64; convolutions are
stride-1 with zero padding, pooling is window=stride max pooling with ties
broken toward the lowest flat index inside the window.

The forward pass can record an :class:`ActivationTape` holding every layer
input/output and the pooling argmax routes, which is what both the input
backward pass and relevance propagation consume.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .gridder import DensityGrid, GridSpec, RigidTransform, random_transform, voxelize
from .molio import Complex

# Index of the low-RMSD ("good pose") class in the pose logit pair.
LOW_RMSD_CLASS = 1

FORMAT_MAGIC = b"VOXMODEL"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file cannot be decoded (bad magic, version, shapes, or sizes)."""


class StaleTapeError(RuntimeError):
    """Tape weights changed between recording and replay."""


class TrainingDiverged(RuntimeError):
    """Toy trainer hit a non-finite loss."""


@dataclass(frozen=True)
class MaxPool3D:
    window: int = 2
    stride: int = 2


@dataclass(frozen=True)
class Conv3D:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pad: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    out_units: int


Layer = Union[MaxPool3D, Conv3D, ReLU, Flatten, Dense]


@dataclass(frozen=True)
class ModelSpec:
    """Trunk layer list plus the input geometry it expects."""

    input_channels: int
    input_size: int
    trunk: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(self.trunk))
        self.layer_shapes()  # validates chain compatibility

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every trunk layer, starting from the input grid."""
        shape: tuple[int, ...] = (
            self.input_channels,
            self.input_size,
            self.input_size,
            self.input_size,
        )
        shapes = []
        for i, layer in enumerate(self.trunk):
            if isinstance(layer, MaxPool3D):
                if len(shape) != 4:
                    raise ValueError(f"layer {i}: pooling needs a 4-D input")
                if layer.window < 1 or layer.stride != layer.window:
                    raise ValueError(f"layer {i}: pooling requires stride == window >= 1")
                if min(shape[1:]) < layer.window:
                    raise ValueError(f"layer {i}: input {shape} smaller than pool window")
                n = (shape[1] - layer.window) // layer.stride + 1
                shape = (shape[0], n, n, n)
            elif isinstance(layer, Conv3D):
                if len(shape) != 4:
                    raise ValueError(f"layer {i}: convolution needs a 4-D input")
                if layer.stride != 1:
                    raise ValueError(f"layer {i}: only stride-1 convolution is supported")
                if not 0 <= layer.pad <= layer.kernel - 1:
                    raise ValueError(f"layer {i}: pad must be in [0, kernel-1]")
                n = shape[1] + 2 * layer.pad - layer.kernel + 1
                if n < 1:
                    raise ValueError(f"layer {i}: kernel {layer.kernel} too large for {shape}")
                shape = (layer.out_channels, n, n, n)
            elif isinstance(layer, ReLU):
                pass
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: dense needs a flat input (add Flatten)")
                shape = (layer.out_units,)
            else:
                raise ValueError(f"layer {i}: unknown layer {layer!r}")
            shapes.append(shape)
        if len(shape) != 1:
            raise ValueError("trunk must end with a flat feature vector")
        return shapes

    @property
    def feature_size(self) -> int:
        return self.layer_shapes()[-1][0] if self.trunk else self.input_channels * self.input_size**3

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return (self.input_channels, self.input_size, self.input_size, self.input_size)


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class ModelWeights:
    """Parameters aligned with a ModelSpec: one entry per trunk layer plus heads."""

    trunk: list[LayerParams | None]
    pose: LayerParams
    affinity: LayerParams

    def all_params(self) -> list[LayerParams]:
        return [p for p in self.trunk if p is not None] + [self.pose, self.affinity]

    def fingerprint(self) -> int:
        crc = 0
        for p in self.all_params():
            crc = zlib.crc32(np.ascontiguousarray(p.weight).tobytes(), crc)
            crc = zlib.crc32(np.ascontiguousarray(p.bias).tobytes(), crc)
        return crc

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            trunk=[None if p is None else LayerParams(p.weight.copy(), p.bias.copy()) for p in self.trunk],
            pose=LayerParams(self.pose.weight.copy(), self.pose.bias.copy()),
            affinity=LayerParams(self.affinity.weight.copy(), self.affinity.bias.copy()),
        )


class Model(NamedTuple):
    """Spec/weights pair; unpacks as a plain (spec, weights) tuple."""

    spec: ModelSpec
    weights: ModelWeights


def _param_shapes(spec: ModelSpec) -> list[tuple[tuple[int, ...], tuple[int, ...]] | None]:
    shapes: list[tuple[tuple[int, ...], tuple[int, ...]] | None] = []
    in_shape: tuple[int, ...] = spec.input_shape
    for layer, out_shape in zip(spec.trunk, spec.layer_shapes()):
        if isinstance(layer, Conv3D):
            shapes.append(
                (
                    (layer.out_channels, in_shape[0], layer.kernel, layer.kernel, layer.kernel),
                    (layer.out_channels,),
                )
            )
        elif isinstance(layer, Dense):
            shapes.append(((layer.out_units, in_shape[0]), (layer.out_units,)))
        else:
            shapes.append(None)
        in_shape = out_shape
    return shapes


def validate_weights(spec: ModelSpec, weights: ModelWeights):
    expected = _param_shapes(spec)
    if len(weights.trunk) != len(expected):
        raise ValueError(
            f"weights cover {len(weights.trunk)} layers but the model declares {len(expected)}"
        )
    for i, (want, got) in enumerate(zip(expected, weights.trunk)):
        if want is None:
            if got is not None:
                raise ValueError(f"layer {i} takes no parameters")
            continue
        if got is None:
            raise ValueError(f"layer {i} is missing parameters")
        if got.weight.shape != want[0] or got.bias.shape != want[1]:
            raise ValueError(
                f"layer {i}: parameter shapes {got.weight.shape}/{got.bias.shape} "
                f"do not match {want[0]}/{want[1]}"
            )
    f = spec.feature_size
    if weights.pose.weight.shape != (2, f) or weights.pose.bias.shape != (2,):
        raise ValueError("pose head shapes do not match the trunk output")
    if weights.affinity.weight.shape != (1, f) or weights.affinity.bias.shape != (1,):
        raise ValueError("affinity head shapes do not match the trunk output")


def zero_weights(spec: ModelSpec) -> ModelWeights:
    trunk = [
        None if s is None else LayerParams(np.zeros(s[0]), np.zeros(s[1]))
        for s in _param_shapes(spec)
    ]
    f = spec.feature_size
    return ModelWeights(
        trunk=trunk,
        pose=LayerParams(np.zeros((2, f)), np.zeros(2)),
        affinity=LayerParams(np.zeros((1, f)), np.zeros(1)),
    )


def init_weights(spec: ModelSpec, seed: int) -> ModelWeights:
    """He-style random init, deterministic per seed; biases start at zero."""
    rng = np.random.default_rng(seed)
    trunk: list[LayerParams | None] = []
    for s in _param_shapes(spec):
        if s is None:
            trunk.append(None)
            continue
        fan_in = int(np.prod(s[0][1:]))
        trunk.append(LayerParams(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=s[0]), np.zeros(s[1])))
    f = spec.feature_size
    scale = np.sqrt(1.0 / f)
    return ModelWeights(
        trunk=trunk,
        pose=LayerParams(rng.normal(0.0, scale, size=(2, f)), np.zeros(2)),
        affinity=LayerParams(rng.normal(0.0, scale, size=(1, f)), np.zeros(1)),
    )


# ---------------------------------------------------------------------------
# layer primitives


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    out_ch, in_ch, k, _, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))  # (C, ox, oy, oz, k, k, k)
    ox, oy, oz = win.shape[1:4]
    cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(ox * oy * oz, in_ch * k**3)
    y = cols @ w.reshape(out_ch, -1).T + b
    return y.T.reshape(out_ch, ox, oy, oz)


def conv3d_backward_input(gy: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Gradient to the convolution input (stride 1): flipped-kernel convolution."""
    k = w.shape[2]
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    return conv3d_forward(gy, wt, np.zeros(wt.shape[0]), pad=k - 1 - pad)


def conv3d_param_grads(x: np.ndarray, gy: np.ndarray, w_shape: tuple, pad: int):
    out_ch, in_ch, k, _, _ = w_shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    ox, oy, oz = win.shape[1:4]
    cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(ox * oy * oz, in_ch * k**3)
    gyf = gy.reshape(out_ch, -1)
    dw = (gyf @ cols).reshape(w_shape)
    db = gyf.sum(axis=1)
    return dw, db


def maxpool_forward(x: np.ndarray, window: int):
    c = x.shape[0]
    n_out = (x.shape[1] - window) // window + 1
    cut = n_out * window
    xc = x[:, :cut, :cut, :cut]
    r = (
        xc.reshape(c, n_out, window, n_out, window, n_out, window)
        .transpose(0, 1, 3, 5, 2, 4, 6)
        .reshape(c, n_out, n_out, n_out, window**3)
    )
    arg = r.argmax(axis=-1)  # first max wins: lowest flat index in the window
    y = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool_backward(gy: np.ndarray, arg: np.ndarray, window: int, in_shape: tuple) -> np.ndarray:
    c, n_out = gy.shape[0], gy.shape[1]
    scattered = np.zeros((c, n_out, n_out, n_out, window**3))
    np.put_along_axis(scattered, arg[..., None], gy[..., None], axis=-1)
    cut = n_out * window
    block = scattered.reshape(c, n_out, n_out, n_out, window, window, window).transpose(
        0, 1, 4, 2, 5, 3, 6
    )
    out = np.zeros(in_shape)
    out[:, :cut, :cut, :cut] = block.reshape(c, cut, cut, cut)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class LayerTrace:
    layer: Layer
    inputs: np.ndarray
    output: np.ndarray
    pool_argmax: np.ndarray | None = None


@dataclass(frozen=True)
class HeadOutputs:
    pose_logits: np.ndarray  # (2,)
    pose_probability: float  # probability of the low-RMSD class
    affinity: float


@dataclass
class ActivationTape:
    spec: ModelSpec
    weights: ModelWeights
    weights_fingerprint: int
    grid_values: np.ndarray
    traces: list[LayerTrace]
    features: np.ndarray
    outputs: HeadOutputs

    def check_fresh(self):
        if self.weights.fingerprint() != self.weights_fingerprint:
            raise StaleTapeError("model weights changed since this tape was recorded")


def forward(
    grid: DensityGrid | np.ndarray,
    spec: ModelSpec,
    weights: ModelWeights,
    record: bool = False,
) -> tuple[HeadOutputs, ActivationTape | None]:
    """Evaluate the network; optionally keep every intermediate tensor."""
    x = grid.values if isinstance(grid, DensityGrid) else np.asarray(grid, dtype=np.float64)
    if x.shape != spec.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model input {spec.input_shape}")
    validate_weights(spec, weights)
    for p in weights.all_params():
        if not (np.all(np.isfinite(p.weight)) and np.all(np.isfinite(p.bias))):
            raise ValueError("model weights contain non-finite values")

    traces: list[LayerTrace] = []
    grid_values = x
    for layer, params in zip(spec.trunk, weights.trunk):
        arg = None
        if isinstance(layer, MaxPool3D):
            y, arg = maxpool_forward(x, layer.window)
        elif isinstance(layer, Conv3D):
            y = conv3d_forward(x, params.weight, params.bias, layer.pad)
        elif isinstance(layer, ReLU):
            y = np.maximum(x, 0.0)
        elif isinstance(layer, Flatten):
            y = x.reshape(-1)
        else:  # Dense
            y = params.weight @ x + params.bias
        if record:
            traces.append(LayerTrace(layer=layer, inputs=x, output=y, pool_argmax=arg))
        x = y

    features = x
    pose_logits = weights.pose.weight @ features + weights.pose.bias
    affinity = float((weights.affinity.weight @ features + weights.affinity.bias)[0])
    probs = softmax(pose_logits)
    outputs = HeadOutputs(
        pose_logits=pose_logits,
        pose_probability=float(probs[LOW_RMSD_CLASS]),
        affinity=affinity,
    )
    tape = None
    if record:
        tape = ActivationTape(
            spec=spec,
            weights=weights,
            weights_fingerprint=weights.fingerprint(),
            grid_values=grid_values,
            traces=traces,
            features=features,
            outputs=outputs,
        )
    return outputs, tape


@dataclass
class ParamGrads:
    trunk: list[LayerParams | None]
    pose: LayerParams
    affinity: LayerParams


def backward_trunk(
    tape: ActivationTape,
    grad_features: np.ndarray,
    need_param_grads: bool = False,
) -> tuple[np.ndarray, list[LayerParams | None] | None]:
    """Propagate a feature-vector gradient back to the input grid."""
    g = grad_features
    param_grads: list[LayerParams | None] | None = None
    if need_param_grads:
        param_grads = [None] * len(tape.traces)
    for idx in range(len(tape.traces) - 1, -1, -1):
        trace = tape.traces[idx]
        layer = trace.layer
        params = tape.weights.trunk[idx]
        if isinstance(layer, Dense):
            if need_param_grads:
                param_grads[idx] = LayerParams(np.outer(g, trace.inputs), g.copy())
            g = params.weight.T @ g
        elif isinstance(layer, Flatten):
            g = g.reshape(trace.inputs.shape)
        elif isinstance(layer, ReLU):
            g = g * (trace.inputs > 0)
        elif isinstance(layer, Conv3D):
            if need_param_grads:
                dw, db = conv3d_param_grads(trace.inputs, g, params.weight.shape, layer.pad)
                param_grads[idx] = LayerParams(dw, db)
            g = conv3d_backward_input(g, params.weight, layer.pad)
        else:  # MaxPool3D
            g = maxpool_backward(g, trace.pool_argmax, layer.window, trace.inputs.shape)
    return g, param_grads


def backward_from_logit_seeds(
    tape: ActivationTape,
    pose_seed: np.ndarray | None = None,
    affinity_seed: float = 0.0,
) -> np.ndarray:
    """Input-grid gradient of pose_seed . logits + affinity_seed * affinity."""
    tape.check_fresh()
    g = np.zeros_like(tape.features)
    if pose_seed is not None and np.any(pose_seed != 0):
        g = g + tape.weights.pose.weight.T @ np.asarray(pose_seed, dtype=np.float64)
    if affinity_seed != 0.0:
        g = g + tape.weights.affinity.weight[0] * affinity_seed
    grad, _ = backward_trunk(tape, g)
    return grad


def backward_to_input(
    tape: ActivationTape,
    head: str,
    seed: float = 1.0,
    target: str = "logit",
) -> np.ndarray:
    """Gradient of seed * head scalar with respect to every input voxel.

    The pose head scalar is the low-RMSD logit by default; target="prob"
    differentiates the softmax probability instead.
    """
    if head == "affinity":
        return backward_from_logit_seeds(tape, affinity_seed=seed)
    if head != "pose":
        raise ValueError(f"unknown head {head!r}")
    if target == "logit":
        pose_seed = np.zeros(2)
        pose_seed[LOW_RMSD_CLASS] = seed
    elif target == "prob":
        p = softmax(tape.outputs.pose_logits)
        onehot = np.zeros(2)
        onehot[LOW_RMSD_CLASS] = 1.0
        pose_seed = seed * p[LOW_RMSD_CLASS] * (onehot - p)
    else:
        raise ValueError(f"unknown target {target!r}")
    return backward_from_logit_seeds(tape, pose_seed=pose_seed)


# ---------------------------------------------------------------------------
# losses


def affinity_loss(y: float, yhat: float, delta: float, is_good_pose: bool) -> float:
    """Smooth L2/L1 interpolation; for bad poses only over-predictions count."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not is_good_pose and yhat <= y:
        return 0.0
    u = (y - yhat) / delta
    return float(delta**2 * np.sqrt(1.0 + u * u) - delta**2)


def affinity_loss_grad(y: float, yhat: float, delta: float, is_good_pose: bool) -> float:
    """d(affinity_loss)/d(yhat)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not is_good_pose and yhat <= y:
        return 0.0
    u = (y - yhat) / delta
    return float((yhat - y) / np.sqrt(1.0 + u * u))


def pose_loss(logits: np.ndarray, label: int) -> float:
    """Negative log softmax probability of the given class."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def pose_loss_grad(logits: np.ndarray, label: int) -> np.ndarray:
    """d(pose_loss)/d(logits) = softmax - onehot."""
    g = softmax(np.asarray(logits, dtype=np.float64))
    g[label] -= 1.0
    return g


# ---------------------------------------------------------------------------
# serialization

_LAYER_TAGS = {MaxPool3D: "maxpool3d", Conv3D: "conv3d", ReLU: "relu", Flatten: "flatten", Dense: "dense"}


def _layer_to_json(layer: Layer) -> dict:
    tag = _LAYER_TAGS[type(layer)]
    d = {"kind": tag}
    if isinstance(layer, MaxPool3D):
        d.update(window=layer.window, stride=layer.stride)
    elif isinstance(layer, Conv3D):
        d.update(out_channels=layer.out_channels, kernel=layer.kernel, stride=layer.stride, pad=layer.pad)
    elif isinstance(layer, Dense):
        d.update(out_units=layer.out_units)
    return d


def _layer_from_json(d: dict) -> Layer:
    kind = d.get("kind")
    if kind == "maxpool3d":
        return MaxPool3D(window=d["window"], stride=d["stride"])
    if kind == "conv3d":
        return Conv3D(out_channels=d["out_channels"], kernel=d["kernel"], stride=d["stride"], pad=d["pad"])
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        return Dense(out_units=d["out_units"])
    raise ModelFormatError(f"unknown layer kind {kind!r}")


def _tensor_entries(spec: ModelSpec, weights: ModelWeights):
    """Named tensors in serialization order, with conv spatial axes reversed
    so the blob runs out-major, then in, then z, y, x (x fastest)."""
    entries = []
    for i, (layer, params) in enumerate(zip(spec.trunk, weights.trunk)):
        if params is None:
            continue
        w = params.weight
        if isinstance(layer, Conv3D):
            w = np.ascontiguousarray(w.transpose(0, 1, 4, 3, 2))
        entries.append((f"trunk.{i}.weight", w, params.weight.shape))
        entries.append((f"trunk.{i}.bias", params.bias, params.bias.shape))
    entries.append(("pose.weight", weights.pose.weight, weights.pose.weight.shape))
    entries.append(("pose.bias", weights.pose.bias, weights.pose.bias.shape))
    entries.append(("affinity.weight", weights.affinity.weight, weights.affinity.weight.shape))
    entries.append(("affinity.bias", weights.affinity.bias, weights.affinity.bias.shape))
    return entries


def save_model(spec: ModelSpec, weights: ModelWeights, path: str):
    """Write magic + JSON manifest + little-endian float64 blob."""
    validate_weights(spec, weights)
    entries = _tensor_entries(spec, weights)
    manifest_tensors = []
    blob = bytearray()
    for name, arr, logical_shape in entries:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest_tensors.append(
            {
                "name": name,
                "shape": list(logical_shape),
                "offset": len(blob),
                "nbytes": len(data),
            }
        )
        blob.extend(data)
    manifest = {
        "version": FORMAT_VERSION,
        "model": {
            "input_channels": spec.input_channels,
            "input_size": spec.input_size,
            "trunk": [_layer_to_json(l) for l in spec.trunk],
            "heads": {"pose": 2, "affinity": 1},
        },
        "tensors": manifest_tensors,
        "blob_nbytes": len(blob),
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(len(payload).to_bytes(8, "little"))
        fh.write(payload)
        fh.write(bytes(blob))


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(FORMAT_MAGIC)] != FORMAT_MAGIC:
        raise ModelFormatError(f"{path}: bad magic bytes")
    cursor = len(FORMAT_MAGIC)
    if len(raw) < cursor + 8:
        raise ModelFormatError(f"{path}: truncated header")
    manifest_len = int.from_bytes(raw[cursor : cursor + 8], "little")
    cursor += 8
    if len(raw) < cursor + manifest_len:
        raise ModelFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[cursor : cursor + manifest_len])
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: manifest is not valid JSON") from exc
    cursor += manifest_len
    if manifest.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: format version {manifest.get('version')} unsupported (expected {FORMAT_VERSION})"
        )
    blob = raw[cursor:]
    if len(blob) != manifest["blob_nbytes"]:
        raise ModelFormatError(
            f"{path}: blob holds {len(blob)} bytes, manifest says {manifest['blob_nbytes']}"
        )
    m = manifest["model"]
    spec = ModelSpec(
        input_channels=m["input_channels"],
        input_size=m["input_size"],
        trunk=tuple(_layer_from_json(d) for d in m["trunk"]),
    )
    tensors: dict[str, np.ndarray] = {}
    for t in manifest["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(blob):
            raise ModelFormatError(f"{path}: tensor {t['name']} overruns the blob")
        arr = np.frombuffer(blob[t["offset"] : end], dtype="<f8")
        if arr.size != int(np.prod(t["shape"])):
            raise ModelFormatError(f"{path}: tensor {t['name']} size does not match its shape")
        tensors[t["name"]] = arr
    trunk: list[LayerParams | None] = []
    for i, layer in enumerate(spec.trunk):
        if not isinstance(layer, (Conv3D, Dense)):
            trunk.append(None)
            continue
        try:
            w = tensors[f"trunk.{i}.weight"]
            b = tensors[f"trunk.{i}.bias"]
        except KeyError as exc:
            raise ModelFormatError(f"{path}: missing tensor for trunk layer {i}") from exc
        shape = next(t["shape"] for t in manifest["tensors"] if t["name"] == f"trunk.{i}.weight")
        w = w.reshape(shape)
        if isinstance(layer, Conv3D):
            # stored z,y,x-fastest; restore in-memory x,y,z axes
            w = np.ascontiguousarray(w.transpose(0, 1, 4, 3, 2))
        trunk.append(LayerParams(w.copy(), b.copy()))
    f = spec.feature_size
    try:
        weights = ModelWeights(
            trunk=trunk,
            pose=LayerParams(tensors["pose.weight"].reshape(2, f).copy(), tensors["pose.bias"].copy()),
            affinity=LayerParams(
                tensors["affinity.weight"].reshape(1, f).copy(), tensors["affinity.bias"].copy()
            ),
        )
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path}: head tensors missing or misshapen") from exc
    try:
        validate_weights(spec, weights)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    return Model(spec, weights)


# ---------------------------------------------------------------------------
# toy trainer


@dataclass
class TrainConfig:
    lr: float = 0.01
    iters: int = 500
    seed: int = 0
    augment: bool = False
    delta: float = 1.0
    max_translate: float = 2.0
    grid_dimension: float = 24.0
    grid_resolution: float = 0.5
    log_every: int = 0  # 0 disables progress lines

    def grid_spec_for(self, cplx: Complex) -> GridSpec:
        return GridSpec(
            center=cplx.center,
            dimension=self.grid_dimension,
            resolution=self.grid_resolution,
            channels=len(cplx.types),
        )


def mean_losses(
    dataset: list[tuple[Complex, int, float]],
    spec: ModelSpec,
    weights: ModelWeights,
    config: TrainConfig,
) -> tuple[float, float]:
    """Mean pose and affinity loss over the dataset with no augmentation."""
    pose_total = 0.0
    aff_total = 0.0
    for cplx, label, y in dataset:
        grid = voxelize(cplx, config.grid_spec_for(cplx))
        out, _ = forward(grid, spec, weights)
        pose_total += pose_loss(out.pose_logits, label)
        aff_total += affinity_loss(y, out.affinity, config.delta, label == 1)
    return pose_total / len(dataset), aff_total / len(dataset)


def train_toy(
    dataset: list[tuple[Complex, int, float]],
    spec: ModelSpec,
    config: TrainConfig,
    initial: ModelWeights | None = None,
    progress=None,
) -> ModelWeights:
    """Plain per-example SGD on pose loss + affinity loss.

    Examples are visited round-robin; with augment=True each visit draws a
    fresh random rotation and translation from the seeded stream.  Raises
    TrainingDiverged on a non-finite loss.
    """
    if not dataset:
        raise ValueError("dataset must not be empty")
    rng = np.random.default_rng(config.seed)
    weights = initial.copy() if initial is not None else init_weights(spec, config.seed)
    validate_weights(spec, weights)
    for it in range(config.iters):
        cplx, label, y = dataset[it % len(dataset)]
        transform: RigidTransform | None = None
        if config.augment:
            transform = random_transform(int(rng.integers(2**31 - 1)), config.max_translate)
        grid = voxelize(cplx, config.grid_spec_for(cplx), transform)
        out, tape = forward(grid, spec, weights, record=True)
        if not (np.all(np.isfinite(out.pose_logits)) and np.isfinite(out.affinity)):
            raise TrainingDiverged(f"non-finite network output at iteration {it}")
        loss = pose_loss(out.pose_logits, label) + affinity_loss(
            y, out.affinity, config.delta, label == 1
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at iteration {it}")
        if progress is not None and config.log_every and it % config.log_every == 0:
            progress(it, loss)
        g_logits = pose_loss_grad(out.pose_logits, label)
        g_aff = affinity_loss_grad(y, out.affinity, config.delta, label == 1)
        g_features = tape.weights.pose.weight.T @ g_logits + tape.weights.affinity.weight[0] * g_aff
        _, param_grads = backward_trunk(tape, g_features, need_param_grads=True)
        lr = config.lr
        for params, grads in zip(weights.trunk, param_grads):
            if params is None:
                continue
            params.weight -= lr * grads.weight
            params.bias -= lr * grads.bias
        weights.pose.weight -= lr * np.outer(g_logits, tape.features)
        weights.pose.bias -= lr * g_logits
        weights.affinity.weight -= lr * (g_aff * tape.features)[None, :]
        weights.affinity.bias -= lr * np.array([g_aff])
    return weights


def default_trunk(first_filters: int = 32, second_filters: int = 64, third_filters: int = 128) -> tuple[Layer, ...]:
    """Three pool/conv/ReLU units, then flatten; filter counts configurable."""
    return (
        MaxPool3D(),
        Conv3D(first_filters),
        ReLU(),
        MaxPool3D(),
        Conv3D(second_filters),
        ReLU(),
        MaxPool3D(),
        Conv3D(third_filters),
        ReLU(),
        Flatten(),
    )
