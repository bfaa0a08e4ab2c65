"""Small tanh MLPs with hand-written reverse-mode gradients and Adam.

Parameters are plain lists of ``(W, b)`` pairs with ``W`` shaped
``(fan_in, fan_out)``; everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Params = list  # list[tuple[np.ndarray, np.ndarray]]


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_mlp(sizes, rng: np.random.Generator, out_gain: float = 1.0, hidden_gain: float = np.sqrt(2)) -> Params:
    params = []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        params.append((orthogonal(rng, fi, fo, gain), np.zeros(fo)))
    return params


def zeros_like(params: Params) -> Params:
    return [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]


def check_params(params: Params) -> None:
    for i, (W, b) in enumerate(params):
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
        if i and params[i - 1][0].shape[1] != W.shape[0]:
            raise ValueError(f"layer {i} input {W.shape[0]} != previous output {params[i - 1][0].shape[1]}")
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise ValueError(f"layer {i} has non-finite values")


def input_dim(params: Params) -> int:
    return params[0][0].shape[0]


def forward(params: Params, x: np.ndarray, cache: list | None = None) -> np.ndarray:
    """tanh hidden layers, identity output. ``x`` is (dim,) or (batch, dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != input_dim(params):
        raise ValueError(f"input dimension {x.shape[-1]} != network input {input_dim(params)}")
    h = x
    last = len(params) - 1
    for i, (W, b) in enumerate(params):
        if cache is not None:
            cache.append(h)
        h = h @ W + b
        if i < last:
            h = np.tanh(h)
    return h


def backward(params: Params, cache: list, grad_out: np.ndarray) -> Params:
    """Gradients of a scalar loss given dL/d(output) and a filled forward cache."""
    grads = [None] * len(params)
    g = grad_out
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        h_in = cache[i]
        if h_in.ndim == 1:
            grads[i] = (np.outer(h_in, g), g.copy())
        else:
            grads[i] = (h_in.T @ g, g.sum(axis=0))
        if i:
            # cache[i] is tanh output of layer i-1
            g = (g @ W.T) * (1.0 - h_in * h_in)
    return grads


def policy_forward(params: Params, obs: np.ndarray) -> np.ndarray:
    return forward(params, obs)


def value_forward(params: Params, obs: np.ndarray):
    out = forward(params, obs)
    return out[..., 0] if out.ndim > 1 else float(out[0])


def loss_gradients(params: Params, loss_fn: Callable, batch: np.ndarray):
    """Return ``(loss, grads)``.

    ``loss_fn(outputs) -> (loss, dloss_doutputs)`` defines the scalar loss on
    the network outputs for ``batch``.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise ValueError("empty batch")
    cache: list = []
    out = forward(params, batch, cache)
    loss, g = loss_fn(out)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != out.shape:
        raise ValueError(f"loss gradient shape {g.shape} != output shape {out.shape}")
    return float(loss), backward(params, cache, g)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    logp = log_softmax(logits)
    p = np.exp(logp)
    a = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    a = min(a, len(p) - 1)
    return a, float(logp[a])


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise categorical sampling for a (batch, n) logit matrix."""
    logp = log_softmax(logits)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(len(logits)) * cdf[:, -1]
    a = np.minimum((cdf <= u[:, None]).sum(axis=1), logits.shape[1] - 1)
    return a, logp[np.arange(len(a)), a]


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum((W * W).sum() + (b * b).sum() for W, b in grads)))


def clip_by_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        grads = [(W * s, b * s) for W, b in grads]
    return grads, norm


@dataclass
class OptimizerState:
    m: Params
    v: Params
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Params, **kw) -> "OptimizerState":
        return cls(zeros_like(params), zeros_like(params), **kw)


def _same_shapes(a: Params, b: Params) -> bool:
    return len(a) == len(b) and all(x[0].shape == y[0].shape and x[1].shape == y[1].shape for x, y in zip(a, b))


def adam_update(params: Params, grads: Params, state: OptimizerState) -> tuple[Params, OptimizerState]:
    if not (_same_shapes(params, grads) and _same_shapes(params, state.m)):
        raise ValueError("params, gradients and optimizer moments must have identical shapes")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new_params, new_m, new_v = [], [], []
    for (W, b), (gW, gb), (mW, mb), (vW, vb) in zip(params, grads, state.m, state.v):
        layer = []
        for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            layer.append((p, m, v))
        new_params.append((layer[0][0], layer[1][0]))
        new_m.append((layer[0][1], layer[1][1]))
        new_v.append((layer[0][2], layer[1][2]))
    return new_params, OptimizerState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def params_to_json(params: Params) -> list:
    return [{"W": W.tolist(), "b": b.tolist()} for W, b in params]


def params_from_json(doc) -> Params:
    params = [(np.array(layer["W"], dtype=np.float64), np.array(layer["b"], dtype=np.float64)) for layer in doc]
    check_params(params)
    return params


def optimizer_to_json(state: OptimizerState) -> dict:
    return {
        "m": params_to_json(state.m),
        "v": params_to_json(state.v),
        "step": state.step,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
    }


def optimizer_from_json(doc) -> OptimizerState:
    return OptimizerState(
        params_from_json(doc["m"]),
        params_from_json(doc["v"]),
        int(doc["step"]),
        float(doc["lr"]),
        float(doc["beta1"]),
        float(doc["beta2"]),
        float(doc["eps"]),
    )
