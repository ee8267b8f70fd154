"""Reverse-mode automatic differentiation over dense numpy-backed tensors.

Deliberately minimal: only the primitives needed by the odometry correction
models are provided. Operations record themselves on a :class:`Tape` in
execution order; :meth:`Tape.backward` replays the records in exact reverse
order, accumulating gradients.

Tensors default to 32-bit precision to match the deployed model; pass
``dtype=np.float64`` everywhere for tight gradient checking. A tape and the
tensors recorded on it form a single-writer context and must not be shared
across threads; independent model copies may run concurrently.

Convolutional feature maps are laid out ``(T, C, F)`` = (time, sensor
channel, filter), optionally with a leading batch axis. Convolutions slide
over the time axis only with 'same' zero padding, so a stride-1 layer
preserves ``T`` and a stride-2 layer produces ``ceil(T / 2)`` steps.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_BLOB_MAGIC = b"TBLOB1\n"


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(ValueError):
    """The loss tensor is not reachable from the tape's records."""


class Tensor:
    """Dense n-dimensional value, optionally carrying a gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...],
                 backward: Callable[[np.ndarray], tuple]):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._records: list[_Record] = []
        self._watched: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._records)

    def watch(self, *tensors: Tensor) -> None:
        """Register parameters that must receive a gradient on backward."""
        for t in tensors:
            self._watched.append(t)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...],
               backward: Callable[[np.ndarray], tuple]) -> Tensor:
        self._records.append(_Record(out, inputs, backward))
        return out

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every watched tensor with d(loss)/d(tensor).

        Watched tensors that do not participate in the loss get an all-zero
        gradient. Raises :class:`GraphError` if ``loss`` is not a scalar
        produced by an operation recorded on this tape.
        """
        if loss.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.shape}")
        if not any(rec.out is loss for rec in self._records):
            raise GraphError("loss tensor was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self._records):
            gout = grads.pop(id(rec.out), None)
            if gout is None:
                continue
            gins = rec.backward(gout)
            for t, g in zip(rec.inputs, gins):
                if g is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g if acc is None else acc + g
        for t in self._watched:
            g = grads.get(id(t))
            if g is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad = g if t.grad is None else t.grad + g


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatchError(msg)


def _as_batched(arr: np.ndarray, feature_ndim: int) -> tuple[np.ndarray, bool]:
    """View ``arr`` with an explicit leading batch axis."""
    if arr.ndim == feature_ndim:
        return arr[None], False
    if arr.ndim == feature_ndim + 1:
        return arr, True
    raise ShapeMismatchError(
        f"expected {feature_ndim}-d or {feature_ndim + 1}-d input, got shape {arr.shape}"
    )


def conv2d(tape: Tape, x: Tensor, kernel: Tensor, bias: Tensor,
           stride_t: int = 1) -> Tensor:
    """Convolution over the time axis with a ``(K, 1)`` kernel.

    ``x`` is ``(T, C, F_in)`` or ``(B, T, C, F_in)``; ``kernel`` is
    ``(K, 1, F_in, F_out)``; output time length is ``ceil(T / stride_t)``
    under 'same' zero padding.
    """
    _check(stride_t in (1, 2), f"stride_t must be 1 or 2, got {stride_t}")
    _check(kernel.ndim == 4 and kernel.shape[1] == 1,
           f"kernel must be (K, 1, F_in, F_out), got {kernel.shape}")
    xb, batched = _as_batched(x.data, 3)
    k_len, _, f_in, f_out = kernel.shape
    b_n, t_len, c_len, xf = xb.shape
    _check(xf == f_in, f"input has {xf} filters, kernel expects {f_in}")
    _check(k_len <= t_len, f"kernel extent {k_len} exceeds time length {t_len}")
    _check(bias.shape == (f_out,), f"bias must be ({f_out},), got {bias.shape}")

    t_out = -(-t_len // stride_t)
    total_pad = max((t_out - 1) * stride_t + k_len - t_len, 0)
    front = total_pad // 2
    xpad = np.zeros((b_n, t_len + total_pad, c_len, f_in), dtype=xb.dtype)
    xpad[:, front:front + t_len] = xb

    span = stride_t * (t_out - 1) + 1
    out_data = np.broadcast_to(bias.data, (b_n, t_out, c_len, f_out)).copy()
    for k in range(k_len):
        out_data += xpad[:, k:k + span:stride_t] @ kernel.data[k, 0]
    out = Tensor(out_data if batched else out_data[0])

    def backward(gout: np.ndarray):
        gb = gout if batched else gout[None]
        d_bias = gb.sum(axis=(0, 1, 2))
        d_kernel = np.zeros_like(kernel.data)
        d_xpad = np.zeros_like(xpad)
        for k in range(k_len):
            xs = xpad[:, k:k + span:stride_t]
            d_kernel[k, 0] = np.einsum("btcf,btcg->fg", xs, gb)
            d_xpad[:, k:k + span:stride_t] += gb @ kernel.data[k, 0].T
        d_x = d_xpad[:, front:front + t_len]
        return (d_x if batched else d_x[0]), d_kernel, d_bias

    return tape.record(out, (x, kernel, bias), backward)


def dense(tape: Tape, x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for ``(D,)`` or ``(B, D)`` inputs."""
    _check(weights.ndim == 2, f"weights must be 2-d, got shape {weights.shape}")
    d_in, d_out = weights.shape
    xb, batched = _as_batched(x.data, 1)
    _check(xb.shape[1] == d_in, f"input dim {xb.shape[1]} vs weights ({d_in}, {d_out})")
    _check(bias.shape == (d_out,), f"bias must be ({d_out},), got {bias.shape}")
    out_data = xb @ weights.data + bias.data
    out = Tensor(out_data if batched else out_data[0])

    def backward(gout: np.ndarray):
        gb = gout if batched else gout[None]
        d_w = xb.T @ gb
        d_b = gb.sum(axis=0)
        d_x = gb @ weights.data.T
        return (d_x if batched else d_x[0]), d_w, d_b

    return tape.record(out, (x, weights, bias), backward)


def mean_pool_tc(tape: Tape, x: Tensor) -> Tensor:
    """Average a ``(T, C, F)`` map over time and channel, keeping filters."""
    xb, batched = _as_batched(x.data, 3)
    _, t_len, c_len, _ = xb.shape
    out_data = xb.mean(axis=(1, 2))
    out = Tensor(out_data if batched else out_data[0])
    inv = 1.0 / (t_len * c_len)

    def backward(gout: np.ndarray):
        gb = gout if batched else gout[None]
        d_x = np.broadcast_to(gb[:, None, None, :] * inv, xb.shape).astype(xb.dtype)
        return (d_x if batched else d_x[0]),

    return tape.record(out, (x,), backward)


def relu(tape: Tape, x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))

    def backward(gout: np.ndarray):
        return (gout * mask,)

    return tape.record(out, (x,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    out = Tensor(s)

    def backward(gout: np.ndarray):
        return (gout * s * (1.0 - s),)

    return tape.record(out, (x,), backward)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward(gout: np.ndarray):
        return gout, gout

    return tape.record(out, (a, b), backward)


def subtract(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"subtract shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def backward(gout: np.ndarray):
        return gout, -gout

    return tape.record(out, (a, b), backward)


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def backward(gout: np.ndarray):
        return gout * b.data, gout * a.data

    return tape.record(out, (a, b), backward)


def scale_broadcast(tape: Tape, x: Tensor, s: Tensor) -> Tensor:
    """Multiply a ``(T, C, F)`` map by a per-filter ``(F,)`` vector."""
    xb, batched = _as_batched(x.data, 3)
    sb, s_batched = _as_batched(s.data, 1)
    _check(batched == s_batched,
           f"scale_broadcast batching mismatch: {x.shape} vs {s.shape}")
    _check(xb.shape[0] == sb.shape[0] and xb.shape[3] == sb.shape[1],
           f"scale_broadcast shapes incompatible: {x.shape} vs {s.shape}")
    s_exp = sb[:, None, None, :]
    out_data = xb * s_exp
    out = Tensor(out_data if batched else out_data[0])

    def backward(gout: np.ndarray):
        gb = gout if batched else gout[None]
        d_x = gb * s_exp
        d_s = (gb * xb).sum(axis=(1, 2))
        return (d_x if batched else d_x[0]), (d_s if batched else d_s[0])

    return tape.record(out, (x, s), backward)


def scale(tape: Tape, x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * factor)

    def backward(gout: np.ndarray):
        return (gout * factor,)

    return tape.record(out, (x,), backward)


def flatten(tape: Tape, x: Tensor) -> Tensor:
    """Collapse a ``(T, C, F)`` map to a vector (per batch row if batched)."""
    xb, batched = _as_batched(x.data, 3)
    out_data = xb.reshape(xb.shape[0], -1)
    out = Tensor(out_data if batched else out_data[0])

    def backward(gout: np.ndarray):
        gb = gout if batched else gout[None]
        d_x = gb.reshape(xb.shape)
        return (d_x if batched else d_x[0]),

    return tape.record(out, (x,), backward)


def dropout(tape: Tape, x: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout; the identity map when ``training`` is off."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep)

    def backward(gout: np.ndarray):
        return (gout * keep,)

    return tape.record(out, (x,), backward)


def sum_all(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))

    def backward(gout: np.ndarray):
        return (np.broadcast_to(gout, x.shape).astype(x.data.dtype),)

    return tape.record(out, (x,), backward)


def mean_all(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))
    inv = 1.0 / x.size

    def backward(gout: np.ndarray):
        return (np.broadcast_to(gout * inv, x.shape).astype(x.data.dtype),)

    return tape.record(out, (x,), backward)


def absolute(tape: Tape, x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    out = Tensor(np.abs(x.data))

    def backward(gout: np.ndarray):
        return (gout * sign,)

    return tape.record(out, (x,), backward)


_ELEMENTWISE = {"relu": relu, "sigmoid": sigmoid, "add": add, "mul": mul,
                "scale_broadcast": scale_broadcast}


def elementwise(tape: Tape, kind: str, *operands: Tensor) -> Tensor:
    """Dispatch to a named elementwise primitive."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(tape, *operands)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
               dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Fan-in-scaled uniform initialization."""
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def write_tensor_blob(tensors: Sequence[tuple[str, np.ndarray]]) -> bytes:
    """Serialize named tensors: versioned JSON header + raw ``<f4`` payload."""
    header = {
        "version": 1,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    parts = [_BLOB_MAGIC, json.dumps(header, sort_keys=True).encode(), b"\n"]
    for _, arr in tensors:
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def read_tensor_blob(blob: bytes) -> list[tuple[str, np.ndarray]]:
    """Inverse of :func:`write_tensor_blob`."""
    if not blob.startswith(_BLOB_MAGIC):
        raise ValueError("not a tensor blob: bad magic")
    body = blob[len(_BLOB_MAGIC):]
    newline = body.index(b"\n")
    header = json.loads(body[:newline].decode())
    if header.get("version") != 1:
        raise ValueError(f"unsupported tensor blob version {header.get('version')}")
    payload = body[newline + 1:]
    out = []
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        out.append((entry["name"], arr.reshape(shape).astype(np.float32)))
        offset += count * 4
    if offset != len(payload):
        raise ValueError("tensor blob payload length mismatch")
    return out
