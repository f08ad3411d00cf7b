"""A synthetic intersection scene, its graph features, and why they don't care where the scene is.

Run:  python demos/01_scene_features.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from trajgraph.features import featurize
from trajgraph.geometry import build_local_regions, rigid_transform_scene
from trajgraph.plot import save_svg
from trajgraph.scene import SynthConfig, synth_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %% A scene: four agents on a four-arm intersection, 20 observed steps, 30 future steps.
scene = synth_scene(3, SynthConfig(n_agents=4, template="intersection", noise=0.1))
print(f"scene {scene.scene_id}: {len(scene.agents)} agents, {len(scene.lanelets)} lanelets, "
      f"{len(scene.segments())} lane segments, target = {scene.agents[scene.target_index].agent_id}")
save_svg(out / "scene.svg", scene)

# %% Local regions. Each agent sees neighbors and lane segments within a radius, per step.
cur = scene.t_obs - 1
for radius in (20.0, 50.0):
    regions = build_local_regions(scene, radius)
    counts = [(len(g.neighbors[cur]), len(g.segments[cur])) for g in regions]
    print(f"radius {radius:>4.0f} m, (neighbors, segments) at the current step: {counts}")

# %% Features. Everything is expressed in each agent's own frame at the current step.
f = featurize(scene)
print("centre features", f.center.shape, " agent-agent edges", f.aa1.feat.shape,
      " agent-lane edges", f.al1.feat.shape, " lanelet edges", f.ll1.feat.shape)

# %% Move the whole scene: rotate by 2 rad about an arbitrary point, then shift 1 km east.
moved = rigid_transform_scene(scene, 2.0, offset=(1000.0, 0.0), pivot=(7.0, -3.0))
g = featurize(moved)
worst = max(np.abs(getattr(f, k) - getattr(g, k)).max() for k in ("center", "fut_local"))
worst = max([worst] + [np.abs(getattr(f, k).feat - getattr(g, k).feat).max()
                       for k in ("aa1", "aa2", "al1", "ll1", "al2", "glob")])
print(f"largest feature change after the rigid motion: {worst:.2e}")
save_svg(out / "scene_moved.svg", moved)
print(f"wrote {out / 'scene.svg'} and {out / 'scene_moved.svg'}")
