"""Full predictor: scene encoder followed by the mixture decoder."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .decoder import MixtureDecoder, PredictionSet
from .encoder import EncoderOutput, ModelConfig, SceneEncoder
from .features import SceneFeatures, featurize
from .nn import Module
from .scene import Scene


def scene_features(cfg: ModelConfig, scene: Scene) -> SceneFeatures:
    if scene.t_obs != cfg.t_obs or scene.horizon != cfg.horizon:
        raise ValueError(
            f"scene {scene.scene_id} has t_obs={scene.t_obs}, horizon={scene.horizon}; "
            f"model expects {cfg.t_obs}, {cfg.horizon}")
    return featurize(scene, cfg.radius1, cfg.radius2)


class TrajectoryModel(Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = SceneEncoder(cfg, rng)
        self.decoder = MixtureDecoder(cfg.hidden, cfg.horizon, rng, cfg.loc_scale)

    def featurize(self, scene: Scene) -> SceneFeatures:
        return scene_features(self.cfg, scene)

    def encode(self, f: SceneFeatures, select: bool = True) -> EncoderOutput:
        return self.encoder(f, select)

    def __call__(self, f: SceneFeatures, select: bool = True) -> tuple[PredictionSet, EncoderOutput]:
        enc = self.encoder(f, select)
        return self.decoder(enc.h, enc.h_tilde), enc

    def parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(), self.cfg.to_dict())

    @classmethod
    def load(cls, path) -> "TrajectoryModel":
        state, cfg = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(cfg))
        model.load_state_dict(state)
        return model
