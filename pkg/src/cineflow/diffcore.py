"""Minimal dense-network engine: feed-forward layers, explicit reverse-mode
gradients (with respect to weights, biases, and the network input), Adam, and
a finite-difference gradient checker.

The architecture set is closed (fixed feed-forward stacks with optional
concat skips from earlier layer outputs), so gradients are hand-written
per-layer backward passes rather than a general tape. Everything is float64
and reductions run in a fixed order, which keeps training bit-reproducible
for a fixed seed at thread count 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, NonFiniteGradientError, ShapeMismatchError

ACTIVATIONS = ("relu", "tanh", "identity")


def as_f64(x, name: str = "array") -> np.ndarray:
    """Coerce external input to a float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


@dataclass
class DenseLayer:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeMismatchError("weight must be 2-D and bias 1-D")
        if self.weight.shape[1] != self.bias.shape[0]:
            raise ShapeMismatchError(
                f"bias length {self.bias.shape[0]} != weight columns {self.weight.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad_from_output(out: np.ndarray, kind: str) -> np.ndarray:
    # relu/tanh derivatives are recoverable from the activation output alone.
    if kind == "relu":
        return (out > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    return np.ones_like(out)


class DenseNet:
    """Feed-forward stack with optional concatenation skips.

    A skip (s, t) concatenates the output of stage ``s`` onto the input of
    layer ``t``; stage 0 is the network input, stage i > 0 the output of
    layer i-1. Layer t's weight rows must account for the widened input.
    """

    def __init__(self, layers: list[DenseLayer], skips: tuple[tuple[int, int], ...] = ()):
        if not layers:
            raise ValueError("DenseNet needs at least one layer")
        self.layers = list(layers)
        self.skips = tuple((int(s), int(t)) for s, t in skips)
        for s, t in self.skips:
            if not (0 <= s <= t and t < len(self.layers)):
                raise ValueError(f"skip ({s}, {t}) out of range for {len(self.layers)} layers")
        self._skip_into: dict[int, list[int]] = {}
        for s, t in self.skips:
            self._skip_into.setdefault(t, []).append(s)
        self._validate_dims()

    # -- structure ---------------------------------------------------------

    def _stage_width(self, stage: int) -> int:
        if stage == 0:
            return self.in_dim
        return self.layers[stage - 1].bias.shape[0]

    def _validate_dims(self):
        self.in_dim = self.layers[0].weight.shape[0]
        for src in self._skip_into.get(0, []):
            # skip into layer 0 would concat the input with itself; disallow
            raise ValueError("skip into layer 0 is not supported")
        width = self.in_dim
        for i, layer in enumerate(self.layers):
            expected = width + sum(self._stage_width(s) for s in self._skip_into.get(i, []))
            if layer.weight.shape[0] != expected:
                raise ShapeMismatchError(
                    f"layer {i} expects input width {layer.weight.shape[0]}, "
                    f"got {expected} from previous stage plus skips"
                )
            width = layer.weight.shape[1]
        self.out_dim = width

    @classmethod
    def create(
        cls,
        dims: list[int],
        rng: np.random.Generator,
        activation: str = "relu",
        out_activation: str = "identity",
        skips: tuple[tuple[int, int], ...] = (),
        zero_init_last: bool = False,
        geometric_init_last: float | None = None,
    ) -> "DenseNet":
        """He-initialized stack with dims [d_in, h1, ..., d_out].

        ``zero_init_last`` zeroes the final layer (identity map when composed
        as x + f(x)); ``geometric_init_last`` biases the final layer toward
        the SDF of a sphere with that radius.
        """
        skip_into: dict[int, list[int]] = {}
        for s, t in skips:
            skip_into.setdefault(t, []).append(s)
        layers = []
        n_layers = len(dims) - 1
        for i in range(n_layers):
            d_in = dims[i] + sum(dims[s] for s in skip_into.get(i, []))
            d_out = dims[i + 1]
            last = i == n_layers - 1
            if last and zero_init_last:
                w = np.zeros((d_in, d_out))
                b = np.zeros(d_out)
            elif last and geometric_init_last is not None:
                w = rng.normal(np.sqrt(np.pi) / np.sqrt(d_in), 1e-4, size=(d_in, d_out))
                b = np.full(d_out, -float(geometric_init_last))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out))
                b = np.zeros(d_out)
            layers.append(DenseLayer(w, b, out_activation if last else activation))
        return cls(layers, skips=tuple(skips))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def set_parameters(self, params: list[np.ndarray]):
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatchError("parameter count mismatch")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeMismatchError(f"layer {i} parameter shape mismatch")
            layer.weight = w
            layer.bias = b

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "DenseNet":
        layers = [DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return DenseNet(layers, skips=self.skips)

    # -- evaluation --------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self._run(x, keep_cache=False)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass returning (output, cache) for a later backward()."""
        return self._run(x, keep_cache=True)

    def _run(self, x: np.ndarray, keep_cache: bool):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatchError(
                f"input shape {x.shape} incompatible with first layer width {self.in_dim}"
            )
        stages = [x]  # stage outputs; stages[0] is the network input
        inputs = []  # concatenated input actually fed to each layer
        h = x
        for i, layer in enumerate(self.layers):
            srcs = self._skip_into.get(i, [])
            if srcs:
                h = np.concatenate([h] + [stages[s] for s in srcs], axis=1)
            inputs.append(h if keep_cache else None)
            z = h @ layer.weight + layer.bias
            h = _apply_activation(z, layer.activation)
            stages.append(h)
        y = h[0] if squeeze else h
        cache = (stages, inputs, squeeze) if keep_cache else None
        return y, cache

    def backward(self, cache, upstream: np.ndarray, with_param_grads: bool = True):
        """Gradients of <upstream, output> w.r.t. parameters and the input.

        Returns (param_grads, input_grad); param_grads is None when
        with_param_grads is False (used when weights are frozen).
        """
        stages, inputs, squeeze = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if squeeze and upstream.ndim == 1:
            upstream = upstream[None, :]
        if upstream.shape != stages[-1].shape:
            raise ShapeMismatchError(
                f"upstream shape {upstream.shape} != output shape {stages[-1].shape}"
            )
        grad_stage = [None] * len(stages)
        grad_stage[-1] = upstream
        param_grads: list[np.ndarray | None] = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g_out = grad_stage[i + 1]
            dz = g_out * _activation_grad_from_output(stages[i + 1], layer.activation)
            if with_param_grads:
                param_grads[2 * i] = inputs[i].T @ dz
                param_grads[2 * i + 1] = dz.sum(axis=0)
            d_in = dz @ layer.weight.T
            # peel skip contributions off the widened input gradient
            srcs = self._skip_into.get(i, [])
            base_w = stages[i].shape[1]
            d_base = d_in[:, :base_w]
            offset = base_w
            for s in srcs:
                w_s = stages[s].shape[1]
                d_skip = d_in[:, offset : offset + w_s]
                grad_stage[s] = d_skip if grad_stage[s] is None else grad_stage[s] + d_skip
                offset += w_s
            grad_stage[i] = d_base if grad_stage[i] is None else grad_stage[i] + d_base
        input_grad = grad_stage[0]
        if squeeze:
            input_grad = input_grad[0]
        if with_param_grads:
            return param_grads, input_grad
        return None, input_grad


# -- Adam -------------------------------------------------------------------


class AdamState:
    """Per-parameter first/second moments with step count."""

    def __init__(self, params: list[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
) -> list[np.ndarray]:
    """One bias-corrected Adam update, in place. Returns params.

    Raises NonFiniteGradientError (with the parameter index) on NaN/Inf
    gradients, leaving parameters untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError("params/grads/state length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"parameter {i}: grad shape {g.shape} != param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(i)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# -- finite-difference gradient checking -------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    rel_errors: np.ndarray
    excluded: np.ndarray  # mask of coordinates skipped as activation kinks
    worst_index: int = -1

    @property
    def n_excluded(self) -> int:
        return int(self.excluded.sum())


def grad_check(
    f,
    point: np.ndarray,
    h: float = 1e-5,
    f_batch=None,
    kink_tol: float = 2e-8,
) -> GradCheckResult:
    """Compare f's reverse-mode gradient against central differences.

    ``f(x) -> (value, grad)`` evaluates the scalar function and its gradient
    at a flat point. ``f_batch(X) -> values`` (optional) evaluates many
    points at once, which makes the 2-D finite-difference sweep one batched
    call instead of 2*D scalar calls.

    A coordinate whose one-sided slopes disagree beyond roundoff has an
    activation kink inside the stencil, where central differences are not
    comparable; such coordinates are flagged and excluded from the maximum.
    The tolerance is tuned for piecewise-linear (relu) functions, whose
    slope disagreement away from kinks is pure roundoff; visibly curved
    smooth functions will also exclude coordinates, which only shrinks the
    comparison set. Per-coordinate relative errors are floored by the
    gradient vector's overall scale, since components far below it carry
    more finite-difference noise than signal.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=np.float64).ravel()
    dim = point.size
    value, grad = f(point)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.size != dim:
        raise ShapeMismatchError(f"gradient size {grad.size} != point size {dim}")

    probes = np.repeat(point[None, :], 2 * dim, axis=0)
    idx = np.arange(dim)
    probes[2 * idx, idx] += h
    probes[2 * idx + 1, idx] -= h
    if f_batch is not None:
        vals = np.asarray(f_batch(probes), dtype=np.float64).ravel()
    else:
        vals = np.array([f(p)[0] for p in probes], dtype=np.float64)
    f_plus = vals[0::2]
    f_minus = vals[1::2]

    fd = (f_plus - f_minus) / (2.0 * h)
    slope_plus = (f_plus - value) / h
    slope_minus = (value - f_minus) / h
    scale = 1.0 + np.maximum(np.abs(slope_plus), np.abs(slope_minus))
    excluded = np.abs(slope_plus - slope_minus) > kink_tol * scale

    gscale = max(np.abs(grad).max(initial=0.0), np.abs(fd).max(initial=0.0))
    denom = np.maximum.reduce(
        [np.abs(grad), np.abs(fd), np.full(dim, max(3e-3 * gscale, 1e-8))]
    )
    rel = np.abs(grad - fd) / denom
    rel_masked = np.where(excluded, 0.0, rel)
    worst = int(np.argmax(rel_masked)) if dim else -1
    max_rel = float(rel_masked[worst]) if dim else 0.0
    return GradCheckResult(max_rel, rel, excluded, worst)
