"""Differentiable layers used by the fusion network.

Image tensors are channels-last: ``[H, W, C]`` or batched ``[B, H, W, C]``.
Convolution, affine, normalization and the LSTM cell are fused primitives
with hand-written backward passes; each is cross-checked against plain
loops and finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import DimensionError
from .tensor import DTYPE, Parameter, Tensor, _make, _sigmoid, as_tensor, getitem, stack

LN_EPS = 1e-5


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a channels-last image with a ``[k, k, Cin, Cout]`` kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects [B,H,W,C] input and 4-d kernel, got {x.shape}, {kernel.shape}")
    k, k2, cin, cout = kernel.shape
    if k != k2 or xd.shape[-1] != cin:
        raise DimensionError(f"conv2d channel/kernel mismatch: input {x.shape}, kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    batch, height, width, _ = xd.shape
    ho = conv_output_size(height, k, stride, padding)
    wo = conv_output_size(width, k, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {x.shape} smaller than kernel {k} after padding {padding}")
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xd
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # windows: [B, Ho, Wo, Cin, k, k] -> cols [B*Ho*Wo, k*k*Cin] ordered like the kernel
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(batch * ho * wo, k * k * cin)
    kmat = kernel.data.reshape(k * k * cin, cout)
    out = (cols @ kmat).reshape(batch, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(batch * ho * wo, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ kmat.T).reshape(batch, ho, wo, k, k, cin)
            gxp = np.zeros_like(xp)
            span_h = stride * (ho - 1) + 1
            span_w = stride * (wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + span_h:stride, j:j + span_w:stride, :] += gcols[:, :, :, i, j, :]
            if padding:
                gxp = gxp[:, padding:padding + height, padding:padding + width, :]
            gx = gxp[0] if squeeze else gxp
        return (gx, gk)

    return _make(out[0] if squeeze else out, (x, kernel), backward, "conv2d")


def dense(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"dense shape mismatch: input {x.shape}, weight {weight.shape}")
    parents = (x, weight)
    out = x.data @ weight.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"bias shape {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)
    n_in, n_out = weight.shape

    def backward(g):
        g2 = g.reshape(-1, n_out)
        grads = [g @ weight.data.T, x.data.reshape(-1, n_in).T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward, "dense")


def global_avg_pool(x) -> Tensor:
    """Per-channel mean over the two spatial axes preceding the channel axis."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"global_avg_pool expects [..., H, W, C], got {x.shape}")
    h, w = x.shape[-3], x.shape[-2]
    scale = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to(g[..., None, None, :] * scale, x.shape).copy(),)

    return _make(x.data.mean(axis=(-3, -2)), (x,), backward, "global_avg_pool")


def normalize_layer(x, gain, shift, eps: float = LN_EPS) -> Tensor:
    """Standardize over the last (feature) axis, then scale by ``gain`` and add ``shift``."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    n = x.shape[-1]
    if gain.shape != (n,) or shift.shape != (n,):
        raise DimensionError(f"gain/shift must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def backward(g):
        flat_g = g.reshape(-1, n)
        ggain = (flat_g * xhat.reshape(-1, n)).sum(axis=0)
        gshift = flat_g.sum(axis=0)
        dxhat = g * gain.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (gx, ggain, gshift)

    return _make(out, (x, gain, shift), backward, "normalize_layer")


@dataclass(frozen=True)
class LstmState:
    hidden: Tensor
    cell: Tensor

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))

    def detach(self) -> "LstmState":
        return LstmState(Tensor(self.hidden.data.copy()), Tensor(self.cell.data.copy()))


@dataclass
class LstmParams:
    """Weights for one LSTM cell; gate column blocks ordered input, forget, candidate, output."""

    w_input: Parameter
    w_hidden: Parameter
    bias: Parameter

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_input.shape[0]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             name: str = "lstm", forget_bias: float = 1.0) -> "LstmParams":
        bound = np.sqrt(1.0 / (input_size + hidden_size))
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = forget_bias
        return cls(
            Parameter(rng.uniform(-bound, bound, (input_size, 4 * hidden_size)), f"{name}.w_input"),
            Parameter(rng.uniform(-bound, bound, (hidden_size, 4 * hidden_size)), f"{name}.w_hidden"),
            Parameter(bias, f"{name}.bias"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.w_input, self.w_hidden, self.bias]


def _lstm_cell(x, h, c, w_input, w_hidden, bias) -> Tensor:
    """Fused LSTM cell; returns ``stack([h_new, c_new])``."""
    hs = w_hidden.shape[0]
    if x.shape[-1] != w_input.shape[0] or h.shape[-1] != hs or c.shape != h.shape:
        raise DimensionError(
            f"lstm shape mismatch: input {x.shape}, hidden {h.shape}, cell {c.shape}, "
            f"w_input {w_input.shape}, w_hidden {w_hidden.shape}")
    z = x.data @ w_input.data + h.data @ w_hidden.data + bias.data
    ig = _sigmoid(z[..., :hs])
    fg = _sigmoid(z[..., hs:2 * hs])
    cand = np.tanh(z[..., 2 * hs:3 * hs])
    og = _sigmoid(z[..., 3 * hs:])
    c_new = fg * c.data + ig * cand
    tc = np.tanh(c_new)
    h_new = og * tc

    def backward(g):
        gh, gc = g[0], g[1]
        dc = gc + gh * og * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * cand * ig * (1.0 - ig),
            dc * c.data * fg * (1.0 - fg),
            dc * ig * (1.0 - cand * cand),
            gh * tc * og * (1.0 - og),
        ], axis=-1)
        flat = dz.reshape(-1, 4 * hs)
        return (
            dz @ w_input.data.T,
            dz @ w_hidden.data.T,
            dc * fg,
            x.data.reshape(-1, x.shape[-1]).T @ flat,
            h.data.reshape(-1, hs).T @ flat,
            flat.sum(axis=0),
        )

    return _make(np.stack([h_new, c_new]), (x, h, c, w_input, w_hidden, bias), backward, "lstm_cell")


def lstm_step(x, state: LstmState, params: LstmParams) -> tuple[Tensor, LstmState]:
    """One LSTM step; the output is the new hidden vector."""
    x = as_tensor(x)
    hc = _lstm_cell(x, state.hidden, state.cell, params.w_input, params.w_hidden, params.bias)
    h_new, c_new = getitem(hc, 0), getitem(hc, 1)
    return h_new, LstmState(h_new, c_new)


def lstm_sequence(inputs, state: LstmState, params: LstmParams) -> tuple[Tensor, LstmState]:
    """Run ``inputs[..., t, :]`` through the cell step by step.

    ``inputs`` is ``[T, I]`` or batched ``[B, T, I]``; returns the stacked
    hidden outputs (time on the same axis) and the final state.
    """
    inputs = as_tensor(inputs)
    axis = inputs.ndim - 2
    outputs = []
    for t in range(inputs.shape[axis]):
        idx = (slice(None),) * axis + (t,)
        h, state = lstm_step(getitem(inputs, idx), state, params)
        outputs.append(h)
    return stack(outputs, axis=axis), state


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str) -> Parameter:
    bound = np.sqrt(1.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, shape).astype(DTYPE), name)
