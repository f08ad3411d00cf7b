"""Parameterised building blocks on top of :mod:`trajgraph.autodiff`."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NEG_INF = -np.inf


class Module:
    """Walks attributes (in definition order) to collect named parameters."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for k, m in enumerate(val):
                    out.update(m.named_parameters(f"{name}.{k}."))
        return out


def _param(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng.uniform(-bound, bound, (d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = _param(np.ones(d))
        self.beta = _param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """linear -> layer_norm -> relu -> linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.norm = LayerNorm(d_hidden)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.norm(self.fc1(x))))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., D] -> [..., heads, D/heads]."""
    return x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads))


def additive_mask(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, NEG_INF)


class CrossAttention(Module):
    """Multi-head cross-attention from one query to K keys, with a sigmoid gate.

    ``x`` is ``[..., D]``, ``kv`` is ``[..., K, D_kv]``, ``mask`` is ``[..., K]``.
    Per head the weights are ``softmax(q.k / sqrt(d_k) + extra)`` over unmasked
    keys; the concatenated message ``m`` is blended with ``W_self x`` through
    ``g = sigmoid(W_gate [x, m])``.  A residual MLP follows.  Layer norm is
    applied to the query before attention and before the MLP.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, d_kv: int | None = None):
        if d % heads:
            raise ValueError(f"hidden size {d} not divisible by {heads} heads")
        d_kv = d if d_kv is None else d_kv
        self.heads = heads
        self.norm_q = LayerNorm(d)
        self.w_q = Linear(d, d, rng, bias=False)
        self.w_k = Linear(d_kv, d, rng, bias=False)
        self.w_v = Linear(d_kv, d, rng, bias=False)
        self.w_gate = Linear(2 * d, d, rng)
        self.w_self = Linear(d, d, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = MLP(d, d, d, rng)

    def scores(self, xn: Tensor, kv: Tensor, mask: np.ndarray, extra: Tensor | None = None) -> Tensor:
        """Attention weights ``[..., heads, 1, K]`` for a normalised query."""
        H = self.heads
        q = split_heads(self.w_q(xn), H)  # [..., H, dk]
        k = split_heads(self.w_k(kv), H)  # [..., K, H, dk]
        lead = q.ndim - 2
        q = q.reshape(q.shape[:-1] + (1, q.shape[-1]))  # [..., H, 1, dk]
        kt = ad.transpose(k, tuple(range(lead)) + (lead + 1, lead + 2, lead))  # [..., H, dk, K]
        logits = ad.matmul(q, kt) * (1.0 / math.sqrt(q.shape[-1]))
        if extra is not None:
            logits = logits + extra
        return ad.softmax(logits, axis=-1, mask=additive_mask(mask)[..., None, None, :])

    def message(self, alpha: Tensor, kv: Tensor) -> Tensor:
        H = self.heads
        v = split_heads(self.w_v(kv), H)  # [..., K, H, dk]
        lead = v.ndim - 3
        v = ad.transpose(v, tuple(range(lead)) + (lead + 1, lead, lead + 2))  # [..., H, K, dk]
        m = ad.matmul(alpha, v)  # [..., H, 1, dk]
        return m.reshape(m.shape[:-3] + (m.shape[-3] * m.shape[-1],))

    def gate(self, xn: Tensor, m: Tensor) -> Tensor:
        g = ad.sigmoid(self.w_gate(ad.concat([xn, m], axis=-1)))
        return g * self.w_self(xn) + (1.0 - g) * m

    def __call__(self, x: Tensor, kv: Tensor, mask: np.ndarray, extra: Tensor | None = None) -> Tensor:
        xn = self.norm_q(x)
        alpha = self.scores(xn, kv, mask, extra)
        x = x + self.gate(xn, self.message(alpha, kv))
        return x + self.ff(self.norm_ff(x))


class LaneletScorer(Module):
    """Attention-score half of a cross-attention block (no values, no update)."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.norm_q = LayerNorm(d)
        self.w_q = Linear(d, d, rng, bias=False)
        self.w_k = Linear(d, d, rng, bias=False)

    scores = CrossAttention.scores

    def __call__(self, x: Tensor, kv: Tensor, mask: np.ndarray) -> Tensor:
        return self.scores(self.norm_q(x), kv, mask)


def causal_mask(length: int) -> np.ndarray:
    """Additive mask with -inf where query u would attend a later key v (u < v)."""
    u = np.arange(length)[:, None]
    v = np.arange(length)[None, :]
    return np.where(u < v, NEG_INF, 0.0)


class TemporalLayer(Module):
    """Pre-norm masked self-attention followed by a residual MLP."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.norm_attn = LayerNorm(d)
        self.w_q = Linear(d, d, rng, bias=False)
        self.w_k = Linear(d, d, rng, bias=False)
        self.w_v = Linear(d, d, rng, bias=False)
        self.norm_ff = LayerNorm(d)
        self.ff = MLP(d, d, d, rng)

    def attention(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """x: [B, L, D]; mask: additive, broadcastable to [B, H, L, L]."""
        H = self.heads
        xn = self.norm_attn(x)

        def heads_first(t):
            return ad.transpose(split_heads(t, H), (0, 2, 1, 3))  # [B, H, L, dk]

        q, k, v = heads_first(self.w_q(xn)), heads_first(self.w_k(xn)), heads_first(self.w_v(xn))
        logits = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1]))
        alpha = ad.softmax(logits, axis=-1, mask=mask)
        out = ad.transpose(ad.matmul(alpha, v), (0, 2, 1, 3))  # [B, L, H, dk]
        return out.reshape(out.shape[:2] + (-1,)), alpha

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        out, _ = self.attention(x, mask)
        x = x + out
        return x + self.ff(self.norm_ff(x))


class GRU(Module):
    """Single-layer gated recurrent unit (reset, update, candidate gates)."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_hidden)
        self.d = d_hidden
        self.w_x = _param(rng.uniform(-bound, bound, (d_in, 3 * d_hidden)))
        self.w_h = _param(rng.uniform(-bound, bound, (d_hidden, 3 * d_hidden)))
        self.b_x = _param(np.zeros(3 * d_hidden))
        self.b_h = _param(np.zeros(3 * d_hidden))

    def step(self, gx: Tensor, h: Tensor) -> Tensor:
        D = self.d
        gh = ad.matmul(h, self.w_h) + self.b_h
        r = ad.sigmoid(gx[..., :D] + gh[..., :D])
        z = ad.sigmoid(gx[..., D:2 * D] + gh[..., D:2 * D])
        n = ad.tanh(gx[..., 2 * D:] + r * gh[..., 2 * D:])
        return (1.0 - z) * n + z * h

    def __call__(self, x: Tensor, h0: Tensor, steps: int) -> list[Tensor]:
        """Feed the same input ``x`` for ``steps`` steps; returns every hidden state."""
        gx = ad.matmul(x, self.w_x) + self.b_x
        h, out = h0, []
        for _ in range(steps):
            h = self.step(gx, h)
            out.append(h)
        return out
