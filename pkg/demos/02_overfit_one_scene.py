"""Fit the full-size model to a single scene until it reproduces the future.

This is the smallest useful sanity check of the whole pipeline: features,
two-stage encoder, mixture decoder, winner-take-all loss and AdamW all have to
work together for the error to reach centimetres. Takes about two minutes.

Run:  python demos/02_overfit_one_scene.py [out_dir]
"""

import sys
from pathlib import Path

from trajgraph.encoder import ModelConfig
from trajgraph.plot import save_svg
from trajgraph.scene import SynthConfig, synth_scene
from trajgraph.training import TrainConfig, evaluate, predict, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

scene = synth_scene(1, SynthConfig(n_agents=3, template="intersection"))
cfg = ModelConfig()
print(f"model: hidden {cfg.hidden}, {cfg.heads} heads, {cfg.modes} modes, horizon {cfg.horizon}")

# %% Untrained predictions are a small blob around the current position.
r0 = train([scene], cfg, TrainConfig(epochs=1, base_lr=3e-3))
print(f"after 1 step   minADE {evaluate(r0.model, [scene]).overall.min_ade:7.3f} m")

# %% 500 steps of AdamW with cosine decay.
r = train([scene], cfg, TrainConfig(epochs=500, base_lr=3e-3))
for step in (0, 50, 100, 200, 300, 400, 499):
    print(f"step {step:>3}  loss {r.losses[step]:8.3f}  lr {r.lrs[step]:.2e}")

rep = evaluate(r.model, [scene]).overall
print(f"after 500 steps minADE {rep.min_ade:.4f} m, minFDE {rep.min_fde:.4f} m")

# %% The most probable mode should now sit on top of the ground truth.
p = predict(r.model, scene)
save_svg(out / "overfit.svg", scene, p.mu_world[:, p.target], p.pi[p.target])
print(f"wrote {out / 'overfit.svg'}")
