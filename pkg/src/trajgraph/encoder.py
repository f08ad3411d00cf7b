"""Two-stage local encoder, hierarchical lanelet filter and global interaction module."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import AA_DIM, AL_DIM, CENTER_DIM, GLOBAL_DIM, LANELET_DIM, EdgeSet, SceneFeatures
from .nn import MLP, CrossAttention, LaneletScorer, Module, TemporalLayer, causal_mask

NEG_INF = -np.inf


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    heads: int = 8
    aa_layers: int = 1
    al_layers: int = 1
    lanelet_layers: int = 1
    temporal_layers: int = 4
    global_layers: int = 3
    modes: int = 6
    radius1: float = 20.0
    radius2: float = 50.0
    lanelet_threshold: float = 0.75
    t_obs: int = 20
    horizon: int = 30
    hierarchical: bool = True
    loc_scale: float = 10.0  # metres per unit of the location head output

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        for name in ("hidden", "heads", "aa_layers", "al_layers", "lanelet_layers",
                     "temporal_layers", "global_layers", "modes", "t_obs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not self.loc_scale > 0:
            raise ValueError("loc_scale must be positive")
        if not 0 < self.radius1 <= self.radius2:
            raise ValueError("need 0 < radius1 <= radius2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LaneUsage:
    """Agent-lane edge counts of the first-stage lane attention."""

    total: int = 0
    selected: int = 0

    @property
    def rate(self) -> float:
        return 1.0 if self.total == 0 else self.selected / self.total


@dataclass
class EncoderOutput:
    h: Tensor  # [N, D]
    h_tilde: Tensor  # [F, N, D]
    rot: np.ndarray  # [N, 2]
    s_hat: Tensor  # [N, T, D] stage-1 output
    usage: LaneUsage


def _normal(rng, shape, std=0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, shape), requires_grad=True)


def embed_edges(mlp: MLP, feat: np.ndarray, mask: np.ndarray, width: int) -> Tensor:
    """Run ``mlp`` on the unmasked rows only and scatter back into a zero-padded grid."""
    flat = feat[mask]
    if len(flat) == 0:
        return Tensor(np.zeros(mask.shape + (width,)))
    emb = mlp(Tensor(flat))
    padded = ad.concat([emb, Tensor(np.zeros((1, width)))], axis=0)
    idx = np.full(mask.shape, len(flat))
    idx[mask] = np.arange(len(flat))
    return ad.take(padded, idx, axis=0)


def refresh_edges(mlp: MLP, query: Tensor, edges: Tensor, mask: np.ndarray) -> Tensor:
    """``mlp([query, edge])`` on unmasked edges; ``query`` is [..., D], edges [..., K, D]."""
    D = edges.shape[-1]
    lead = mask.shape[:-1]
    rows, _ = np.nonzero(mask.reshape(-1, mask.shape[-1]))
    if len(rows) == 0:
        return Tensor(np.zeros(edges.shape))
    q = ad.take(query.reshape((-1, D)), rows, axis=0)
    e = ad.take(edges.reshape((-1, D)), np.flatnonzero(mask), axis=0)
    out = mlp(ad.concat([q, e], axis=-1))
    padded = ad.concat([out, Tensor(np.zeros((1, D)))], axis=0)
    idx = np.full(mask.shape, len(rows))
    idx[mask] = np.arange(len(rows))
    return ad.take(padded, idx.reshape(lead + mask.shape[-1:]), axis=0)


def temporal_mask(valid: np.ndarray, with_cls: bool) -> np.ndarray:
    """Additive mask [N, 1, L, L]: causal plus invalid-key masking (CLS key always valid)."""
    keys = np.concatenate([valid, np.ones((valid.shape[0], 1), bool)], axis=1) if with_cls else valid
    L = keys.shape[1]
    return causal_mask(L)[None, None] + np.where(keys, 0.0, NEG_INF)[:, None, None, :]


def select_lanelets(scores: np.ndarray, mask: np.ndarray, factor: float) -> np.ndarray:
    """Keep lanelets whose score exceeds ``factor`` times the mean candidate score."""
    n = mask.sum(-1, keepdims=True)
    mean = np.where(mask, scores, 0.0).sum(-1, keepdims=True) / np.maximum(n, 1)
    return mask & (scores > factor * mean)


def compact(keep: np.ndarray) -> np.ndarray:
    """Per row, indices that move kept entries to the front; width = max kept count."""
    order = np.argsort(~keep, axis=-1, kind="stable")
    width = max(1, int(keep.sum(-1).max(initial=0)))
    return order[..., :width]


class SceneEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D, H = cfg.hidden, cfg.heads
        self.cfg = cfg
        self.center_embed = MLP(CENTER_DIM, D, D, rng)
        self.nbr_embed = MLP(AA_DIM, D, D, rng)
        self.lane_embed = MLP(AL_DIM, D, D, rng)
        self.aa1 = [CrossAttention(D, H, rng) for _ in range(cfg.aa_layers)]
        if cfg.hierarchical:
            self.lanelet_embed = MLP(LANELET_DIM, D, D, rng)
            self.lanelet_blocks = [CrossAttention(D, H, rng) for _ in range(cfg.lanelet_layers - 1)]
            self.lanelet_scorer = LaneletScorer(D, H, rng)
        self.al1 = [CrossAttention(D, H, rng) for _ in range(cfg.al_layers)]
        self.pos1 = _normal(rng, (cfg.t_obs + 1, D))
        self.temporal1 = [TemporalLayer(D, H, rng) for _ in range(cfg.temporal_layers)]

        self.nbr2_embed = MLP(2 * D, D, D, rng)
        self.aa2 = [CrossAttention(D, H, rng) for _ in range(cfg.aa_layers)]
        self.pos2 = _normal(rng, (cfg.t_obs + 1, D))
        self.cls = _normal(rng, (D,))
        self.temporal2 = [TemporalLayer(D, H, rng) for _ in range(cfg.temporal_layers)]
        self.lane2_embed = MLP(2 * D, D, D, rng)
        self.al2 = [CrossAttention(D, H, rng) for _ in range(cfg.al_layers)]

        self.rel_embed = MLP(GLOBAL_DIM, D, D, rng)
        self.global_blocks = [CrossAttention(D, H, rng, d_kv=2 * D) for _ in range(cfg.global_layers)]
        self.global_out = MLP(D, D, cfg.modes * D, rng)

    # ----------------------------------------------------------- stage one
    def embed_center(self, f: SceneFeatures) -> Tensor:
        z = self.center_embed(Tensor(f.center))
        return z * f.valid[..., None].astype(float)

    def lane_attention(self, query: Tensor, al: EdgeSet, ll: EdgeSet, select: bool = True
                       ) -> tuple[Tensor, LaneUsage]:
        """Agent-lane attention; with the hierarchical filter, segment logits are offset by
        the log of their lanelet's score and only segments of kept lanelets are attended."""
        cfg = self.cfg
        usage = LaneUsage(total=al.count)
        if not cfg.hierarchical:
            kv = embed_edges(self.lane_embed, al.feat, al.mask, cfg.hidden)
            for blk in self.al1:
                query = blk(query, kv, al.mask)
            usage.selected = usage.total
            return query, usage

        kv_ll = embed_edges(self.lanelet_embed, ll.feat, ll.mask, cfg.hidden)
        q = query
        for blk in self.lanelet_blocks:
            q = blk(q, kv_ll, ll.mask)
        alpha = self.lanelet_scorer(q, kv_ll, ll.mask)  # [N, T, H, 1, L]
        if select:
            keep_ll = select_lanelets(alpha.data.mean(axis=-3)[..., 0, :], ll.mask, cfg.lanelet_threshold)
            keep = al.mask & np.take_along_axis(keep_ll, al.slot, axis=-1)
        else:
            keep = al.mask
        order = compact(keep)
        mask = np.take_along_axis(keep, order, axis=-1)
        feat = np.take_along_axis(al.feat, order[..., None], axis=-2)
        slot = np.take_along_axis(al.slot, order, axis=-1)
        usage.selected = int(mask.sum())

        kv = embed_edges(self.lane_embed, feat, mask, cfg.hidden)
        seg_alpha = ad.take_along_axis(alpha, slot[..., None, None, :], axis=-1)  # [N, T, H, 1, W]
        log_alpha = ad.log(seg_alpha + (~mask)[..., None, None, :].astype(float))
        for blk in self.al1:
            query = blk(query, kv, mask, extra=log_alpha)
        return query, usage

    def stage1(self, f: SceneFeatures, select: bool = True) -> tuple[Tensor, LaneUsage]:
        T = f.num_steps
        valid = f.valid[..., None].astype(float)
        z = self.embed_center(f)
        kv = embed_edges(self.nbr_embed, f.aa1.feat, f.aa1.mask, self.cfg.hidden)
        for blk in self.aa1:
            z = blk(z, kv, f.aa1.mask) * valid
        s, usage = self.lane_attention(z, f.al1, f.ll1, select)
        x = s * valid + self.pos1[:T]
        mask = temporal_mask(f.valid, with_cls=False)
        for layer in self.temporal1:
            x = layer(x, mask)
        return x * valid, usage

    # ----------------------------------------------------------- stage two
    def stage2(self, f: SceneFeatures, s_hat: Tensor) -> Tensor:
        T = f.num_steps
        D = self.cfg.hidden
        valid = f.valid[..., None].astype(float)
        z_ij = embed_edges(self.nbr_embed, f.aa2.feat, f.aa2.mask, D)
        z_ij2 = refresh_edges(self.nbr2_embed, s_hat, z_ij, f.aa2.mask)
        x = s_hat
        for blk in self.aa2:
            x = blk(x, z_ij2, f.aa2.mask) * valid
        N = f.num_agents
        cls = ad.broadcast_to(self.cls + self.pos2[T], (N, 1, D))
        seq = ad.concat([x + self.pos2[:T], cls], axis=1)
        mask = temporal_mask(f.valid, with_cls=True)
        for layer in self.temporal2:
            seq = layer(seq, mask)
        s_bar = seq[:, T]
        z_lane = embed_edges(self.lane_embed, f.al2.feat, f.al2.mask, D)
        z_lane2 = refresh_edges(self.lane2_embed, s_bar, z_lane, f.al2.mask)
        h = s_bar
        for blk in self.al2:
            h = blk(h, z_lane2, f.al2.mask)
        return h

    # -------------------------------------------------------------- global
    def global_module(self, f: SceneFeatures, h: Tensor) -> Tensor:
        D, F = self.cfg.hidden, self.cfg.modes
        N = f.num_agents
        g = embed_edges(self.rel_embed, f.glob.feat, f.glob.mask, D)
        x = h
        for blk in self.global_blocks:
            kv = ad.concat([ad.take(x, f.glob.idx, axis=0), g], axis=-1)
            x = blk(x, kv, f.glob.mask)
        out = self.global_out(x).reshape((N, F, D))
        return ad.transpose(out, (1, 0, 2))

    def __call__(self, f: SceneFeatures, select: bool = True) -> EncoderOutput:
        s_hat, usage = self.stage1(f, select)
        h = self.stage2(f, s_hat)
        return EncoderOutput(h, self.global_module(f, h), f.rot, s_hat, usage)
