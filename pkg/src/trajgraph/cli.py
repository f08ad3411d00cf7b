"""Command-line entry point: synth, featurize, train, predict, eval, bench, plot.

Exit codes: 0 success, 1 validation/input error, 2 usage error.
Machine-readable JSON goes to stdout; logs go to stderr (verbosity from
the ``TRAJGRAPH_LOG`` environment variable, default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .encoder import ModelConfig
from .features import feature_dump
from .model import TrajectoryModel
from .plot import save_svg
from .scene import (TEMPLATES, SceneFormatError, SceneValidationError, SynthConfig, _dump,
                    drop_static_agents, load_scene, save_scene, synth_scene)
from .training import (ScenePrediction, TrainConfig, TrainingError, bench_lane_filter,
                       evaluate_predictions, predict, train)

log = logging.getLogger("trajgraph")


class UsageError(Exception):
    pass


def _scene_files(data: str) -> list[Path]:
    p = Path(data)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise FileNotFoundError(f"{data}: no such file or directory")
    files = sorted(p.glob("*.json"))
    if not files:
        raise SceneValidationError(f"{data}: no scene files (*.json)")
    return files


def _load_scenes(data: str, drop_static: bool = False):
    scenes = [load_scene(f) for f in _scene_files(data)]
    return [drop_static_agents(s) for s in scenes] if drop_static else scenes


# ----------------------------------------------------------- prediction I/O

def predictions_to_dict(preds: list[ScenePrediction]) -> dict:
    out = []
    for p in preds:
        agents = []
        for i, aid in enumerate(p.agent_ids):
            agents.append({"id": aid, "modes": [
                {"prob": float(p.pi[i, k]), "xy": p.mu_world[k, i].tolist()}
                for k in range(p.pi.shape[1])]})
        out.append({"scene_id": p.scene_id, "target": p.agent_ids[p.target], "agents": agents})
    return {"predictions": out}


def predictions_from_dict(d: dict) -> dict[str, ScenePrediction]:
    res = {}
    try:
        for s in d["predictions"]:
            ids = tuple(a["id"] for a in s["agents"])
            mu = np.array([[m["xy"] for m in a["modes"]] for a in s["agents"]], dtype=float)  # [N, F, H, 2]
            pi = np.array([[m["prob"] for m in a["modes"]] for a in s["agents"]], dtype=float)
            mu = mu.reshape(mu.shape[:2] + (-1, 2)).transpose(1, 0, 2, 3)
            res[s["scene_id"]] = ScenePrediction(s["scene_id"], ids, ids.index(s["target"]), mu,
                                                 np.full_like(mu, np.nan), np.full_like(mu, np.nan), pi)
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"malformed prediction file: {exc}") from exc
    return res


# ------------------------------------------------------------- subcommands

def cmd_synth(a) -> int:
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(n_agents=a.agents, template=a.template, noise=a.noise, gap_prob=a.gap_prob)
    for k in range(a.count):
        scene = synth_scene(a.seed + k, cfg)
        save_scene(scene, out / f"{scene.scene_id}.json")
    log.info("wrote %d scenes to %s", a.count, out)
    return 0


def cmd_featurize(a) -> int:
    text = feature_dump(load_scene(a.scene), a.radius1, a.radius2)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(a) -> int:
    model_cfg = ModelConfig.load(a.config) if a.config else ModelConfig()
    scenes = _load_scenes(a.data, drop_static=True)
    cfg = TrainConfig(epochs=a.epochs, batch_scenes=a.batch, seed=a.seed, base_lr=a.lr)
    result = train(scenes, model_cfg, cfg, checkpoint_path=a.out)
    log.info("final loss %.6f", result.losses[-1])
    if a.history:
        Path(a.history).write_text(_dump({"loss": result.losses, "lr": result.lrs}) + "\n", encoding="utf-8")
    return 0


def cmd_predict(a) -> int:
    model = TrajectoryModel.load(a.ckpt)
    preds = [predict(model, s) for s in _load_scenes(a.data)]
    text = _dump(predictions_to_dict(preds)) + "\n"
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(a) -> int:
    if bool(a.ckpt) == bool(a.pred):
        raise UsageError("eval needs exactly one of --ckpt or --pred")
    scenes = _load_scenes(a.data)
    if a.ckpt:
        model = TrajectoryModel.load(a.ckpt)
        preds = [predict(model, s) for s in scenes]
    else:
        table = predictions_from_dict(json.loads(Path(a.pred).read_text(encoding="utf-8")))
        missing = [s.scene_id for s in scenes if s.scene_id not in table]
        if missing:
            raise SceneValidationError(f"no predictions for scenes {missing[:5]}")
        preds = [table[s.scene_id] for s in scenes]
    report = evaluate_predictions(preds, scenes, k=a.k, miss_threshold=a.miss_threshold)
    sys.stdout.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    return 0


def cmd_bench(a) -> int:
    model = TrajectoryModel.load(a.ckpt)
    report = bench_lane_filter(model, _load_scenes(a.data), repeats=a.repeats).to_dict()
    text = json.dumps(report, sort_keys=True)
    if a.report:
        Path(a.report).write_text(text + "\n", encoding="utf-8")
    sys.stdout.write(text + "\n")
    return 0


def cmd_plot(a) -> int:
    scene = load_scene(a.scene)
    mu = pi = None
    if a.ckpt and a.pred:
        raise UsageError("plot takes at most one of --ckpt or --pred")
    if a.ckpt:
        p = predict(TrajectoryModel.load(a.ckpt), scene)
    elif a.pred:
        table = predictions_from_dict(json.loads(Path(a.pred).read_text(encoding="utf-8")))
        if scene.scene_id not in table:
            raise SceneValidationError(f"no predictions for scene {scene.scene_id}")
        p = table[scene.scene_id]
    else:
        p = None
    if p is not None:
        mu, pi = p.mu_world[:, p.target], p.pi[p.target]
    save_svg(a.out, scene, mu, pi)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajgraph", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--template", choices=TEMPLATES, default="intersection")
    p.add_argument("--agents", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--gap-prob", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="dump node and edge features of a scene")
    p.add_argument("scene")
    p.add_argument("--out")
    p.add_argument("--radius1", type=float, default=20.0)
    p.add_argument("--radius2", type=float, default=50.0)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=64)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="optional JSON file for the loss/lr history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict trajectories for scenes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="minADE / minFDE / MR of the target agents")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--pred")
    p.add_argument("--k", type=int, default=None, help="top-K modes (default: all predicted modes)")
    p.add_argument("--miss-threshold", type=float, default=2.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="lanelet-selection benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="render a scene (and predictions) as SVG")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--pred")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("TRAJGRAPH_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"trajgraph: error: {exc}", file=sys.stderr)
        return 2
    except (SceneFormatError, SceneValidationError, CheckpointError, TrainingError, ValueError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"trajgraph: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
