"""Laplace mixture decoder, winner-take-all losses and displacement metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import GRU, MLP, Module


@dataclass
class PredictionSet:
    """Mixture output in each agent's local frame (origin at its current position)."""

    mu: Tensor  # [F, N, H, 2]
    b: Tensor  # [F, N, H, 2]
    pi: Tensor  # [N, F]

    @property
    def modes(self) -> int:
        return self.mu.shape[0]

    def numpy(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.mu.data, self.b.data, self.pi.data


class MixtureDecoder(Module):
    def __init__(self, hidden: int, horizon: int, rng: np.random.Generator, loc_scale: float = 10.0):
        self.horizon = horizon
        self.loc_scale = loc_scale
        self.gru = GRU(hidden, hidden, rng)
        self.loc = MLP(hidden, hidden, 2, rng)
        self.unc = MLP(hidden, hidden, 2, rng)
        self.prob = MLP(2 * hidden, hidden, 1, rng)

    def __call__(self, h: Tensor, h_tilde: Tensor) -> PredictionSet:
        F, N, D = h_tilde.shape
        H = self.horizon
        h0 = ad.broadcast_to(h, (F, N, D))
        if H:
            o = ad.stack(self.gru(h_tilde, h0, H), axis=2)  # [F, N, H, D]
            mu = self.loc(o) * self.loc_scale
            b = ad.exp(self.unc(o))
        else:
            mu = b = Tensor(np.zeros((F, N, 0, 2)))
        logits = self.prob(ad.concat([h_tilde, h0], axis=-1)).reshape((F, N))
        pi = ad.softmax(ad.transpose(logits, (1, 0)), axis=-1)
        if not (np.isfinite(mu.data).all() and np.isfinite(b.data).all() and np.isfinite(pi.data).all()):
            raise FloatingPointError("decoder produced non-finite output")
        return PredictionSet(mu, b, pi)


# ------------------------------------------------------------------- losses

def laplace_logpdf(x, mu, b):
    """Sum over the last axis of ``-log(2 b) - |x - mu| / b``; works on arrays or Tensors."""
    if isinstance(mu, Tensor) or isinstance(b, Tensor):
        bd = b.data if isinstance(b, Tensor) else np.asarray(b)
        if np.any(bd <= 0):
            raise ValueError("Laplace scale must be positive")
        b, mu = ad.as_tensor(b), ad.as_tensor(mu)
        return (-ad.log(b * 2.0) - ad.tabs(ad.as_tensor(x) - mu) / b).sum(axis=-1)
    x, mu, b = (np.asarray(v, dtype=float) for v in (x, mu, b))
    if np.any(b <= 0):
        raise ValueError("Laplace scale must be positive")
    return (-np.log(2.0 * b) - np.abs(x - mu) / b).sum(axis=-1)


def best_modes(mu: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per agent, the mode with the smallest error at its last supervised future step."""
    F, N, H, _ = mu.shape
    last = np.where(mask.any(1), H - 1 - np.argmax(mask[:, ::-1], axis=1), 0)
    err = np.linalg.norm(mu[:, np.arange(N), last] - target[np.arange(N), last], axis=-1)
    return np.argmin(err, axis=0)


def regression_loss(pred: PredictionSet, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Winner-take-all Laplace NLL averaged over supervised (agent, step) pairs.

    ``target`` is [N, H, 2] in each agent's local frame, ``mask`` is [N, H].
    """
    if not mask.any():
        raise ValueError("no supervised future samples")
    N = target.shape[0]
    best = best_modes(pred.mu.data, target, mask)
    mu = pred.mu[best, np.arange(N)]  # [N, H, 2]
    b = pred.b[best, np.arange(N)]
    logp = laplace_logpdf(target, mu, b)  # [N, H]
    return -(logp * mask.astype(float)).sum() / float(mask.sum())


def soft_targets(mu: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """softmax over modes of minus the summed displacement to ground truth ([N, F])."""
    dist = np.linalg.norm(mu - target[None], axis=-1)  # [F, N, H]
    z = -(dist * mask[None]).sum(-1).T
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def classification_loss(pred: PredictionSet, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Cross-entropy against detached soft targets, averaged over agents with a future."""
    rows = mask.any(1)
    if not rows.any():
        raise ValueError("no supervised future samples")
    pbar = soft_targets(pred.mu.data, target, mask)
    ce = -(ad.log(pred.pi) * pbar).sum(axis=-1)  # [N]
    return (ce * rows.astype(float)).sum() / float(rows.sum())


def total_loss(pred: PredictionSet, target: np.ndarray, mask: np.ndarray) -> Tensor:
    return regression_loss(pred, target, mask) + classification_loss(pred, target, mask)


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class Metrics:
    min_ade: float
    min_fde: float
    miss_rate: float
    count: int

    def to_dict(self) -> dict:
        return {"minADE": self.min_ade, "minFDE": self.min_fde, "MR": self.miss_rate,
                "count": self.count}


def to_world(mu_local: np.ndarray, rot: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Local-frame positions [F, N, H, 2] -> world frame using R_i and p_i."""
    c, s = rot[:, 0][None, :, None], rot[:, 1][None, :, None]
    x, y = mu_local[..., 0], mu_local[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1) + origin[None, :, None, :]


def displacement_errors(traj: np.ndarray, pi: np.ndarray, truth: np.ndarray, k: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent (minADE, minFDE) over the ``k`` most probable modes.

    ``traj`` [F, A, H, 2], ``pi`` [A, F], ``truth`` [A, H, 2], all fully observed.
    """
    F = traj.shape[0]
    if k > F:
        raise ValueError(f"K={k} exceeds the {F} predicted modes")
    if k < 1:
        raise ValueError("K must be >= 1")
    top = np.argsort(-pi, axis=1, kind="stable")[:, :k]  # [A, k]
    A = traj.shape[1]
    sel = traj[top.T, np.arange(A)[None]]  # [k, A, H, 2]
    err = np.linalg.norm(sel - truth[None], axis=-1)  # [k, A, H]
    return err.mean(-1).min(0), err[..., -1].min(0)


def metrics(traj: np.ndarray, pi: np.ndarray, truth: np.ndarray, k: int = 6,
            miss_threshold: float = 2.0) -> Metrics:
    ade, fde = displacement_errors(traj, pi, truth, k)
    if len(ade) == 0:
        return Metrics(float("nan"), float("nan"), float("nan"), 0)
    return Metrics(float(ade.mean()), float(fde.mean()), float((fde > miss_threshold).mean()), len(ade))


def aggregate(parts: list[tuple[np.ndarray, np.ndarray]], miss_threshold: float = 2.0) -> Metrics:
    """Combine per-agent (ADE, FDE) arrays from several scenes."""
    ade = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    fde = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    if len(ade) == 0:
        return Metrics(float("nan"), float("nan"), float("nan"), 0)
    return Metrics(float(ade.mean()), float(fde.mean()), float((fde > miss_threshold).mean()), len(ade))
