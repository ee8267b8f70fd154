"""Odometry correction models built on the autodiff primitives.

Two variants share one input contract (a normalized ``(T, C)`` sensor window
reshaped to ``(T, C, 1)``) and one output contract (a 3-vector pose
increment):

* ``remnet2d`` -- convolutional stem, a stack of residual reduction stages
  with squeeze-and-excitation channel attention, temporal halving between
  stages, then a dense head over the flattened features.
* ``ffnn`` -- a plain feed-forward baseline over the flattened window.

The head layer starts at zero in both variants so an untrained model
predicts a zero increment; everything upstream uses fan-in-scaled uniform
initialization.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from odolearn import autodiff as ad
from odolearn.types import MeasurementWindow, RelativePose

if TYPE_CHECKING:
    from odolearn.training import Normalizer

VARIANTS = ("remnet2d", "ffnn")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; defaults are the tuned configuration."""

    T: int = 10
    C: int = 8
    F: int = 64
    n_rrm: int = 2
    R: int = 4
    K: int = 3
    dropout_rate: float = 0.1
    output_dim: int = 3
    variant: str = "remnet2d"
    ffnn_hidden: tuple[int, ...] = (128, 128)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.T < 1 or self.C < 1 or self.F < 1 or self.K < 1:
            raise ValueError("T, C, F, K must all be >= 1")
        if self.F % self.R != 0:
            raise ValueError(f"F={self.F} must be divisible by R={self.R}")
        if self.n_rrm < 0:
            raise ValueError("n_rrm must be >= 0")
        if self.T < 2 ** self.n_rrm:
            raise ValueError(f"T={self.T} too short for {self.n_rrm} reduction stages")
        if self.output_dim != 3:
            raise ValueError("output_dim must be 3 (dx, dy, dtheta)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        object.__setattr__(self, "ffnn_hidden", tuple(int(h) for h in self.ffnn_hidden))

    def temporal_trace(self) -> list[int]:
        """Time lengths entering each stage: ``[T, ceil(T/2), ...]``."""
        trace = [self.T]
        for _ in range(self.n_rrm):
            trace.append(-(-trace[-1] // 2))
        return trace

    def flatten_size(self) -> int:
        if self.variant == "ffnn":
            return self.T * self.C
        return self.temporal_trace()[-1] * self.C * self.F

    def to_dict(self) -> dict:
        return {
            "T": self.T, "C": self.C, "F": self.F, "n_rrm": self.n_rrm,
            "R": self.R, "K": self.K, "dropout_rate": self.dropout_rate,
            "output_dim": self.output_dim, "variant": self.variant,
            "ffnn_hidden": list(self.ffnn_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if "ffnn_hidden" in d:
            d["ffnn_hidden"] = tuple(d["ffnn_hidden"])
        return cls(**d)


@dataclass
class ModelState:
    """Learned parameters plus the training-mode flag and dropout stream."""

    spec: ModelSpec
    params: dict[str, ad.Tensor]
    training: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    dtype: type = np.float32

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        return list(self.params.items())

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.params.values())

    def clone(self) -> "ModelState":
        clone_params = {
            name: ad.Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)
            for name, t in self.params.items()
        }
        return ModelState(spec=self.spec, params=clone_params, training=self.training,
                          rng=copy.deepcopy(self.rng), dtype=self.dtype)


def _param(params: dict, name: str, data: np.ndarray) -> None:
    params[name] = ad.Tensor(data, requires_grad=True, name=name)


def build(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> ModelState:
    """Allocate and initialize all parameters for ``spec``."""
    rng = np.random.default_rng(seed)
    params: dict[str, ad.Tensor] = {}
    if spec.variant == "remnet2d":
        k, f, r = spec.K, spec.F, spec.R
        _param(params, "stem.kernel", ad.he_uniform(rng, (k, 1, 1, f), fan_in=k, dtype=dtype))
        _param(params, "stem.bias", np.zeros(f, dtype=dtype))
        for i in range(spec.n_rrm):
            p = f"rrm{i}"
            _param(params, f"{p}.res.kernel",
                   ad.he_uniform(rng, (k, 1, f, f), fan_in=k * f, dtype=dtype))
            _param(params, f"{p}.res.bias", np.zeros(f, dtype=dtype))
            _param(params, f"{p}.se.reduce.w",
                   ad.he_uniform(rng, (f, f // r), fan_in=f, dtype=dtype))
            _param(params, f"{p}.se.reduce.b", np.zeros(f // r, dtype=dtype))
            _param(params, f"{p}.se.expand.w",
                   ad.he_uniform(rng, (f // r, f), fan_in=f // r, dtype=dtype))
            _param(params, f"{p}.se.expand.b", np.zeros(f, dtype=dtype))
            _param(params, f"{p}.red.wide.kernel",
                   ad.he_uniform(rng, (k, 1, f, f), fan_in=k * f, dtype=dtype))
            _param(params, f"{p}.red.wide.bias", np.zeros(f, dtype=dtype))
            _param(params, f"{p}.red.point.kernel",
                   ad.he_uniform(rng, (1, 1, f, f), fan_in=f, dtype=dtype))
            _param(params, f"{p}.red.point.bias", np.zeros(f, dtype=dtype))
    else:
        d_in = spec.T * spec.C
        for j, width in enumerate(spec.ffnn_hidden):
            _param(params, f"fc{j}.w", ad.he_uniform(rng, (d_in, width), fan_in=d_in, dtype=dtype))
            _param(params, f"fc{j}.b", np.zeros(width, dtype=dtype))
            d_in = width
    _param(params, "head.w", np.zeros((spec.flatten_size() if spec.variant == "remnet2d"
                                       else d_in, spec.output_dim), dtype=dtype))
    _param(params, "head.b", np.zeros(spec.output_dim, dtype=dtype))
    return ModelState(spec=spec, params=params, rng=np.random.default_rng(seed), dtype=dtype)


def se_block(tape: ad.Tape, features: ad.Tensor, reduce_w: ad.Tensor, reduce_b: ad.Tensor,
             expand_w: ad.Tensor, expand_b: ad.Tensor) -> ad.Tensor:
    """Channel attention: pooled bottleneck produces per-filter weights in
    (0, 1) that rescale the feature map."""
    pooled = ad.mean_pool_tc(tape, features)
    squeezed = ad.relu(tape, ad.dense(tape, pooled, reduce_w, reduce_b))
    weights = ad.sigmoid(tape, ad.dense(tape, squeezed, expand_w, expand_b))
    return ad.scale_broadcast(tape, features, weights)


def _residual_stage(tape: ad.Tape, x: ad.Tensor, params: dict, prefix: str) -> ad.Tensor:
    y = ad.relu(tape, ad.conv2d(tape, x, params[f"{prefix}.res.kernel"],
                                params[f"{prefix}.res.bias"], stride_t=1))
    scaled = se_block(tape, y,
                      params[f"{prefix}.se.reduce.w"], params[f"{prefix}.se.reduce.b"],
                      params[f"{prefix}.se.expand.w"], params[f"{prefix}.se.expand.b"])
    return ad.add(tape, x, scaled)


def _reduction_stage(tape: ad.Tape, x: ad.Tensor, params: dict, prefix: str) -> ad.Tensor:
    wide = ad.conv2d(tape, x, params[f"{prefix}.red.wide.kernel"],
                     params[f"{prefix}.red.wide.bias"], stride_t=2)
    point = ad.conv2d(tape, x, params[f"{prefix}.red.point.kernel"],
                      params[f"{prefix}.red.point.bias"], stride_t=2)
    return ad.add(tape, wide, point)


def run_model(tape: ad.Tape, state: ModelState, x: ad.Tensor) -> ad.Tensor:
    """Model graph over an input of shape ``(T, C, 1)`` or ``(B, T, C, 1)``.

    Returns the predicted increments, shape ``(3,)`` or ``(B, 3)``.
    """
    params = state.params
    spec = state.spec
    tape.watch(*params.values())
    if spec.variant == "remnet2d":
        h = ad.relu(tape, ad.conv2d(tape, x, params["stem.kernel"], params["stem.bias"],
                                    stride_t=1))
        for i in range(spec.n_rrm):
            h = _residual_stage(tape, h, params, f"rrm{i}")
            h = _reduction_stage(tape, h, params, f"rrm{i}")
        flat = ad.flatten(tape, h)
    else:
        flat = ad.flatten(tape, x)
        for j in range(len(spec.ffnn_hidden)):
            flat = ad.relu(tape, ad.dense(tape, flat, params[f"fc{j}.w"], params[f"fc{j}.b"]))
    flat = ad.dropout(tape, flat, spec.dropout_rate, state.rng, state.training)
    return ad.dense(tape, flat, params["head.w"], params["head.b"])


def forward(state: ModelState, window: MeasurementWindow,
            norm: "Normalizer") -> RelativePose:
    """Predict the pose increment for one measurement window."""
    if len(window) != state.spec.T:
        raise ad.ShapeMismatchError(
            f"window length {len(window)} does not match model T={state.spec.T}"
        )
    x = norm.normalize(window.as_array()).astype(state.dtype)
    tape = ad.Tape()
    out = run_model(tape, state, ad.Tensor(x[:, :, None], dtype=state.dtype))
    dx, dy, dtheta = (float(v) for v in out.data)
    return RelativePose(dx, dy, dtheta)


def predict_batch(state: ModelState, windows: np.ndarray, norm: "Normalizer") -> np.ndarray:
    """Predict increments for ``(N, T, C)`` stacked windows; returns ``(N, 3)``.

    Inference-only convenience used by evaluation; processes the whole stack
    as one batched graph without recording gradients for reuse.
    """
    if windows.ndim != 3 or windows.shape[1] != state.spec.T:
        raise ad.ShapeMismatchError(
            f"expected (N, {state.spec.T}, {state.spec.C}) windows, got {windows.shape}"
        )
    x = norm.normalize(windows).astype(state.dtype)
    tape = ad.Tape()
    out = run_model(tape, state, ad.Tensor(x[:, :, :, None], dtype=state.dtype))
    return np.asarray(out.data, dtype=float)
