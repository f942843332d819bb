"""Non-causal dilated residual CNN for I/Q window classification.

Each residual block computes ``relu(conv2(relu(conv1(x)))) + shortcut(x)``
where both convolutions share the block's dilation and ``shortcut`` is a 1x1
convolution present in every block. The trunk is followed by global average
pooling, a dense ReLU layer and a softmax output layer. Gradients are
computed by hand; every function works in whatever float dtype the
parameters carry (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from mcsloc.errors import ConfigError, DomainError, FormatError, ShapeError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    kernel_size: int = 5
    n_filters: int = 64
    n_blocks: int = 8
    dilations: tuple[int, ...] | None = None  # None -> 2, 4, ..., 2**n_blocks
    in_channels: int = 2
    hidden_width: int = 256
    n_classes: int = 9

    def __post_init__(self):
        if self.dilations is None:
            object.__setattr__(self, "dilations", tuple(2 ** (i + 1) for i in range(self.n_blocks)))
        else:
            object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if len(self.dilations) != self.n_blocks:
            raise ConfigError(f"{self.n_blocks} blocks but {len(self.dilations)} dilations")
        if any(d < 1 for d in self.dilations):
            raise ConfigError("dilations must be positive")
        for name in ("n_filters", "n_blocks", "in_channels", "hidden_width", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


def parameter_count(config: NetworkConfig, head: bool = True) -> int:
    """Closed-form count of trainable scalars."""
    k, n, c_in = config.kernel_size, config.n_filters, config.in_channels
    total = 0
    for i in range(config.n_blocks):
        cin = c_in if i == 0 else n
        total += (cin * n * k + n) + (n * n * k + n) + (cin * n + n)
    if head:
        h = config.hidden_width
        total += (n * h + h) + (h * config.n_classes + config.n_classes)
    return total


def receptive_field(config: NetworkConfig) -> int:
    return 1 + 2 * (config.kernel_size - 1) * sum(config.dilations)


def param_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    k, n = config.kernel_size, config.n_filters
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(config.n_blocks):
        cin = config.in_channels if i == 0 else n
        shapes[f"block{i}.conv1.weight"] = (n, cin, k)
        shapes[f"block{i}.conv1.bias"] = (n,)
        shapes[f"block{i}.conv2.weight"] = (n, n, k)
        shapes[f"block{i}.conv2.bias"] = (n,)
        shapes[f"block{i}.shortcut.weight"] = (n, cin, 1)
        shapes[f"block{i}.shortcut.bias"] = (n,)
    shapes["head.hidden.weight"] = (config.hidden_width, n)
    shapes["head.hidden.bias"] = (config.hidden_width,)
    shapes["head.out.weight"] = (config.n_classes, config.hidden_width)
    shapes["head.out.bias"] = (config.n_classes,)
    return shapes


@dataclass
class Network:
    config: NetworkConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.params):
            raise ShapeError(f"parameter names do not match the config: "
                             f"{sorted(set(shapes) ^ set(self.params))}")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape}, expected {shape}")

    @property
    def dtype(self) -> np.dtype:
        return self.params["head.out.bias"].dtype

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "Network":
        return Network(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    def block(self, i: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        p = self.params
        return {part: (p[f"block{i}.{part}.weight"], p[f"block{i}.{part}.bias"])
                for part in ("conv1", "conv2", "shortcut")}


def init_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for every weight and bias."""
    rng = np.random.default_rng(seed)
    params = {}
    shapes = param_shapes(config)
    for name, shape in shapes.items():
        wshape = shapes[name.rsplit(".", 1)[0] + ".weight"]
        fan_in = int(np.prod(wshape[1:]))
        bound = np.sqrt(1.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Network(config, params)


# -- layers ------------------------------------------------------------------

def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (C, L) or (B, C, L) input, got shape {x.shape}")
    return x, False


# Internally activations are laid out (C, B, L) so each convolution is one GEMM
# over all batch positions: (C_out, C_in*k) @ (C_in*k, B*L).

def _im2col(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    c, b, length = x.shape
    if k == 1:
        return x.reshape(c, b * length)
    pad = dilation * (k - 1) // 2
    xp = np.zeros((c, b, length + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + length] = x
    cols = np.empty((c, k, b, length), dtype=x.dtype)
    for j in range(k):
        cols[:, j] = xp[:, :, j * dilation:j * dilation + length]
    return cols.reshape(c * k, b * length)


def _col2im(dcols: np.ndarray, c: int, k: int, dilation: int, b: int, length: int) -> np.ndarray:
    if k == 1:
        return dcols.reshape(c, b, length)
    pad = dilation * (k - 1) // 2
    dcols = dcols.reshape(c, k, b, length)
    dxp = np.zeros((c, b, length + 2 * pad), dtype=dcols.dtype)
    for j in range(k):
        dxp[:, :, j * dilation:j * dilation + length] += dcols[:, j]
    return dxp[:, :, pad:pad + length]


def _conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int) -> np.ndarray:
    c_out, c_in, k = weight.shape
    _, b, length = x.shape
    out = weight.reshape(c_out, c_in * k) @ _im2col(x, k, dilation)
    out += bias[:, None]
    return out.reshape(c_out, b, length)


def _conv_backward(dout, x, weight, dilation):
    c_out, c_in, k = weight.shape
    _, b, length = x.shape
    d2 = dout.reshape(c_out, b * length)
    cols = _im2col(x, k, dilation)
    dw = (d2 @ cols.T).reshape(weight.shape)
    db = d2.sum(axis=1)
    dcols = weight.reshape(c_out, c_in * k).T @ d2
    return _col2im(dcols, c_in, k, dilation, b, length), dw, db


def conv1d_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Centered dilated cross-correlation, zero padded so the length is preserved.

    ``x`` is (C_in, L) or (B, C_in, L); ``weight`` is (C_out, C_in, k) with k odd.
    """
    xb, single = _as_batch(np.asarray(x))
    c_out, c_in, k = weight.shape
    if xb.shape[1] != c_in:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {c_in}")
    if k % 2 == 0:
        raise ShapeError("kernel size must be odd for symmetric padding")
    out = _conv(np.ascontiguousarray(xb.transpose(1, 0, 2)), weight, bias, dilation).transpose(1, 0, 2)
    return out[0] if single else out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def residual_block_forward(x: np.ndarray, block: dict, dilation: int) -> np.ndarray:
    """``block`` maps conv1/conv2/shortcut to (weight, bias) pairs."""
    h = relu(conv1d_same(x, *block["conv1"], dilation))
    h = relu(conv1d_same(h, *block["conv2"], dilation))
    return h + conv1d_same(x, *block["shortcut"], 1)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] < 1:
        raise ShapeError("cannot pool an empty sequence")
    return x.mean(axis=-1)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- whole network --------------------------------------------------------------

@dataclass
class ForwardCache:
    block_inputs: list[np.ndarray]
    pre1: list[np.ndarray]
    pre2: list[np.ndarray]
    pooled: np.ndarray
    hidden_pre: np.ndarray
    probs: np.ndarray


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != net.config.in_channels:
        raise ShapeError(f"expected (B, {net.config.in_channels}, L) batch, got {x.shape}")
    return x.astype(net.dtype, copy=False)


def forward_cached(net: Network, x: np.ndarray) -> ForwardCache:
    x = _check_input(net, x)
    p = net.params
    inputs, pre1, pre2 = [], [], []
    h = np.ascontiguousarray(x.transpose(1, 0, 2))
    for i, d in enumerate(net.config.dilations):
        blk = net.block(i)
        inputs.append(h)
        z1 = _conv(h, *blk["conv1"], d)
        z2 = _conv(relu(z1), *blk["conv2"], d)
        pre1.append(z1)
        pre2.append(z2)
        h = relu(z2) + _conv(h, *blk["shortcut"], 1)
    pooled = global_avg_pool(h).T
    hidden_pre = pooled @ p["head.hidden.weight"].T + p["head.hidden.bias"]
    logits = relu(hidden_pre) @ p["head.out.weight"].T + p["head.out.bias"]
    return ForwardCache(inputs, pre1, pre2, pooled, hidden_pre, softmax(logits))


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (B, n_classes)."""
    return forward_cached(net, x).probs


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    n_classes = probs.shape[-1]
    if labels.shape != probs.shape[:1]:
        raise ShapeError(f"{probs.shape[0]} predictions but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes - 1}]")
    picked = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def backward(net: Network, x: np.ndarray, labels: np.ndarray,
             cache: ForwardCache | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy of the batch and its exact gradient for every parameter."""
    if cache is None:
        cache = forward_cached(net, x)
    labels = np.asarray(labels)
    loss = cross_entropy(cache.probs, labels)
    p = net.params
    b = len(labels)
    grads: dict[str, np.ndarray] = {}

    dlogits = cache.probs.copy()
    dlogits[np.arange(b), labels] -= 1
    dlogits /= b
    hidden = relu(cache.hidden_pre)
    grads["head.out.weight"] = dlogits.T @ hidden
    grads["head.out.bias"] = dlogits.sum(axis=0)
    dhidden = (dlogits @ p["head.out.weight"]) * (cache.hidden_pre > 0)
    grads["head.hidden.weight"] = dhidden.T @ cache.pooled
    grads["head.hidden.bias"] = dhidden.sum(axis=0)
    dpooled = dhidden @ p["head.hidden.weight"]

    length = cache.block_inputs[0].shape[-1]
    dh = np.broadcast_to((dpooled.T / length)[:, :, None], dpooled.T.shape + (length,))
    for i in reversed(range(net.config.n_blocks)):
        d = net.config.dilations[i]
        blk = net.block(i)
        xin, z1, z2 = cache.block_inputs[i], cache.pre1[i], cache.pre2[i]
        dxs, grads[f"block{i}.shortcut.weight"], grads[f"block{i}.shortcut.bias"] = \
            _conv_backward(dh, xin, blk["shortcut"][0], 1)
        dz2 = dh * (z2 > 0)
        da1, grads[f"block{i}.conv2.weight"], grads[f"block{i}.conv2.bias"] = \
            _conv_backward(dz2, relu(z1), blk["conv2"][0], d)
        dz1 = da1 * (z1 > 0)
        dx1, grads[f"block{i}.conv1.weight"], grads[f"block{i}.conv1.bias"] = \
            _conv_backward(dz1, xin, blk["conv1"][0], d)
        dh = dx1 + dxs
    return loss, {k: grads[k].astype(p[k].dtype, copy=False) for k in p}


def iter_batches(n: int, batch_size: int) -> Iterator[slice]:
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def predict_proba(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    if len(x) == 0:
        return np.zeros((0, net.config.n_classes), dtype=net.dtype)
    return np.concatenate([forward(net, x[s]) for s in iter_batches(len(x), batch_size)])


def predict(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    return predict_proba(net, x, batch_size).argmax(axis=1)


# -- checkpoint container -----------------------------------------------------------
#
# bytes 0-7   magic b"MCSTCN\x00\x01"
# bytes 8-11  header length H, uint32 little-endian
# next H      UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape", "offset", "nbytes"}]}
# remainder   tensor payloads, little-endian binary32, C order, offsets relative to this point

CHECKPOINT_MAGIC = b"MCSTCN\x00\x01"


def save_checkpoint(net: Network, path: str | Path) -> None:
    tensors, blobs, offset = [], [], 0
    for name in param_shapes(net.config):
        data = np.ascontiguousarray(net.params[name], dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(net.params[name].shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"config": net.config.to_dict(), "tensors": tensors},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Network:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint {path} not found")
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC or len(raw) < 12:
        raise FormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        cfg = dict(header["config"])
        config = NetworkConfig(**cfg)
        base = 12 + hlen
        params = {}
        for t in header["tensors"]:
            chunk = raw[base + t["offset"]:base + t["offset"] + t["nbytes"]]
            arr = np.frombuffer(chunk, dtype="<f4").astype(np.float32)
            params[t["name"]] = arr.reshape(t["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from None
    return Network(config, params)
