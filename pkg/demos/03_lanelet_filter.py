"""How much of the lane graph does the hierarchical lanelet filter throw away, and what does it cost?

A micro model is trained briefly on twenty intersection scenes so the lanelet
scores are no longer uniform. The first-stage agent-lane attention is then
timed with and without filtering on identical inputs.

Run:  python demos/03_lanelet_filter.py [out_dir]
"""

import json
import sys
from pathlib import Path

from trajgraph.encoder import ModelConfig
from trajgraph.scene import SynthConfig, synth_scene
from trajgraph.training import TrainConfig, bench_lane_filter, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

micro = ModelConfig(hidden=16, heads=2, modes=2, t_obs=5, horizon=4, temporal_layers=2, global_layers=2)
scenes = [synth_scene(100 + k, SynthConfig(n_agents=3, template="intersection", t_obs=5, horizon=4))
          for k in range(20)]

# %% With random weights every lanelet scores about the same, so nothing is dropped.
untrained = bench_lane_filter(train(scenes, micro, TrainConfig(epochs=1, base_lr=3e-3)).model, scenes)
print(f"after 1 epoch:   usage {untrained.usage_rate:.1%}")

# %% After some training the scores spread out and the threshold starts to bite.
model = train(scenes, micro, TrainConfig(epochs=60, base_lr=3e-3)).model
rep = bench_lane_filter(model, scenes, repeats=5)
print(f"after 60 epochs: usage {rep.usage_rate:.1%} "
      f"({rep.selected_edges} of {rep.total_edges} agent-lane edges)")
print(f"lane attention  {rep.ms_filtered:.2f} ms/scene filtered vs {rep.ms_unfiltered:.2f} unfiltered")
print(f"minADE          {rep.min_ade_filtered:.4f} filtered vs {rep.min_ade_unfiltered:.4f} unfiltered")

(out / "bench.json").write_text(json.dumps(rep.to_dict(), indent=2))
print(f"wrote {out / 'bench.json'}")
