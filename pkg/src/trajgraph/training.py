"""Training loop, evaluation runner and the lanelet-filter benchmark."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .decoder import Metrics, aggregate, displacement_errors, to_world, total_loss
from .encoder import ModelConfig, embed_edges
from .features import SceneFeatures
from .model import TrajectoryModel, scene_features
from .optim import OptimizerState, adamw_step, cosine_lr
from .scene import Scene

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 64
    batch_scenes: int = 1
    seed: int = 0
    base_lr: float = 5e-4
    weight_decay: float = 1e-4
    schedule_steps: int | None = None  # defaults to epochs * batches per epoch
    checkpoint_every: int = 0  # steps; 0 disables intermediate checkpoints

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_scenes < 1:
            raise ValueError("batch_scenes must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: TrajectoryModel
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)


def _supervised(f: SceneFeatures) -> bool:
    return bool(f.fut_mask.any())


def scene_loss(model: TrajectoryModel, f: SceneFeatures):
    pred, _ = model(f)
    return total_loss(pred, f.fut_local, f.fut_mask)


def train(scenes: list[Scene], model_cfg: ModelConfig, cfg: TrainConfig,
          checkpoint_path=None) -> TrainResult:
    """AdamW with cosine decay over whole-scene batches; the gradient is the batch mean."""
    feats = [f for f in (scene_features(model_cfg, s) for s in scenes) if _supervised(f)]
    if not feats:
        raise TrainingError("no scene has a supervisable future")
    model = TrajectoryModel(model_cfg, seed=cfg.seed)
    params = model.parameters()
    state = OptimizerState(base_lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    per_epoch = math.ceil(len(feats) / cfg.batch_scenes)
    total = cfg.schedule_steps or cfg.epochs * per_epoch
    result = TrainResult(model)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(feats))
        for start in range(0, len(feats), cfg.batch_scenes):
            batch = [feats[k] for k in order[start:start + cfg.batch_scenes]]
            loss = sum((scene_loss(model, f) for f in batch[1:]), scene_loss(model, batch[0]))
            loss = loss * (1.0 / len(batch))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}")
            for p in params.values():
                p.grad = None
            loss.backward()
            lr = cosine_lr(min(step, total), total, cfg.base_lr)
            adamw_step(params, state, lr)
            result.losses.append(value)
            result.lrs.append(lr)
            step += 1
            if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                model.save(checkpoint_path)
        log.info("epoch %d  loss %.4f", epoch + 1, result.losses[-1])
    if checkpoint_path:
        model.save(checkpoint_path)
    return result


# --------------------------------------------------------------- evaluation

@dataclass
class ScenePrediction:
    scene_id: str
    agent_ids: tuple[str, ...]
    target: int
    mu_world: np.ndarray  # [F, N, H, 2]
    mu_local: np.ndarray
    b: np.ndarray
    pi: np.ndarray  # [N, F]


def predict(model: TrajectoryModel, scene: Scene, select: bool = True) -> ScenePrediction:
    f = model.featurize(scene)
    with ad.no_grad():
        pred, _ = model(f, select)
    mu, b, pi = pred.numpy()
    return ScenePrediction(scene.scene_id, f.agent_ids, f.target, to_world(mu, f.rot, f.origin), mu, b, pi)


def target_errors(p: ScenePrediction, scene: Scene, k: int | None = None
                  ) -> tuple[np.ndarray, np.ndarray] | None:
    """(ADE, FDE) of the target agent, or None when its future is not fully observed.

    ``k=None`` uses every predicted mode.
    """
    agent = scene.agents[p.target]
    fut = slice(scene.t_obs, scene.t_obs + scene.horizon)
    if scene.horizon == 0 or not agent.present[fut].all():
        return None
    t = p.target
    k = p.pi.shape[1] if k is None else k
    return displacement_errors(p.mu_world[:, t:t + 1], p.pi[t:t + 1], agent.xy[fut][None], k)


@dataclass
class EvalReport:
    overall: Metrics
    per_scene: list[dict]

    def to_dict(self) -> dict:
        return {**self.overall.to_dict(), "per_scene": self.per_scene}


def evaluate_predictions(preds: list[ScenePrediction], scenes: list[Scene], k: int | None = None,
                         miss_threshold: float = 2.0) -> EvalReport:
    parts, rows = [], []
    for p, s in zip(preds, scenes):
        e = target_errors(p, s, k)
        if e is None:
            continue
        parts.append(e)
        rows.append({"scene_id": s.scene_id, "minADE": float(e[0][0]), "minFDE": float(e[1][0]),
                     "miss": bool(e[1][0] > miss_threshold)})
    return EvalReport(aggregate(parts, miss_threshold), rows)


def evaluate(model: TrajectoryModel, scenes: list[Scene], k: int | None = None,
             select: bool = True) -> EvalReport:
    return evaluate_predictions([predict(model, s, select) for s in scenes], scenes, k)


# ---------------------------------------------------------------- benchmark

@dataclass
class BenchReport:
    scenes: int
    total_edges: int
    selected_edges: int
    usage_rate: float
    ms_filtered: float  # mean first-stage lane attention time per scene
    ms_unfiltered: float
    min_ade_filtered: float
    min_ade_unfiltered: float

    @property
    def min_ade_delta(self) -> float:
        return self.min_ade_filtered - self.min_ade_unfiltered

    def to_dict(self) -> dict:
        d = asdict(self)
        d["min_ade_delta"] = self.min_ade_delta
        return d


def _lane_query(model: TrajectoryModel, f: SceneFeatures):
    enc = model.encoder
    valid = f.valid[..., None].astype(float)
    z = enc.embed_center(f)
    kv = embed_edges(enc.nbr_embed, f.aa1.feat, f.aa1.mask, model.cfg.hidden)
    for blk in enc.aa1:
        z = blk(z, kv, f.aa1.mask) * valid
    return z


def bench_lane_filter(model: TrajectoryModel, scenes: list[Scene], repeats: int = 3) -> BenchReport:
    """Time the first-stage lane attention with and without lanelet selection on identical inputs."""
    total = selected = 0
    t_on = t_off = 0.0
    preds_on, preds_off = [], []
    with ad.no_grad():
        for s in scenes:
            f = model.featurize(s)
            q = _lane_query(model, f)
            best = {True: math.inf, False: math.inf}
            for _ in range(repeats):
                for sel in (True, False):
                    t0 = time.perf_counter()
                    _, usage = model.encoder.lane_attention(q, f.al1, f.ll1, select=sel)
                    best[sel] = min(best[sel], time.perf_counter() - t0)
                    if sel:
                        sel_usage = usage
            total += sel_usage.total
            selected += sel_usage.selected
            t_on += best[True]
            t_off += best[False]
            preds_on.append(predict(model, s, True))
            preds_off.append(predict(model, s, False))
    on = evaluate_predictions(preds_on, scenes).overall
    off = evaluate_predictions(preds_off, scenes).overall
    n = max(len(scenes), 1)
    return BenchReport(len(scenes), total, selected, 1.0 if total == 0 else selected / total,
                       1e3 * t_on / n, 1e3 * t_off / n, on.min_ade, off.min_ade)
