"""Traffic scene types, the JSON scenario format, and a synthetic scene generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

OBJECT_TYPES = ("vehicle", "pedestrian", "other")
TURN_DIRECTIONS = ("none", "left", "right")
LANELET_POINTS = 10
TEMPLATES = ("straight", "curve", "intersection")


class SceneFormatError(ValueError):
    """Malformed scenario file."""


class SceneValidationError(ValueError):
    """Scenario parsed but violates a scene invariant."""


@dataclass(frozen=True)
class SemanticAttributes:
    turn_direction: str = "none"
    traffic_control: bool = False
    is_intersection: bool = False

    def vector(self) -> np.ndarray:
        """Width-5 encoding: turn one-hot (none, left, right), traffic control, intersection."""
        out = np.zeros(5)
        out[TURN_DIRECTIONS.index(self.turn_direction)] = 1.0
        out[3] = float(self.traffic_control)
        out[4] = float(self.is_intersection)
        return out


def object_type_vector(object_type: str) -> np.ndarray:
    out = np.zeros(len(OBJECT_TYPES))
    out[OBJECT_TYPES.index(object_type)] = 1.0
    return out


@dataclass(frozen=True)
class LaneSegment:
    segment_id: str
    start: np.ndarray
    end: np.ndarray
    parent_lanelet: str
    semantics: SemanticAttributes


@dataclass(frozen=True, eq=False)
class Lanelet:
    lanelet_id: str
    centerline: np.ndarray  # [10, 2]
    semantics: SemanticAttributes = field(default_factory=SemanticAttributes)

    @property
    def segments(self) -> list[LaneSegment]:
        c = self.centerline
        return [
            LaneSegment(f"{self.lanelet_id}/{k}", c[k], c[k + 1], self.lanelet_id, self.semantics)
            for k in range(len(c) - 1)
        ]


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """One agent's samples on the scene's step grid.

    ``times`` and ``xy`` hold NaN where ``present`` is false.
    """

    agent_id: str
    object_type: str
    is_target: bool
    times: np.ndarray  # [L]
    xy: np.ndarray  # [L, 2]
    present: np.ndarray  # [L] bool

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return [(float(t), float(p[0]), float(p[1]))
                for t, p, ok in zip(self.times, self.xy, self.present) if ok]

    def observed_path_length(self, t_obs: int) -> float:
        pts = self.xy[:t_obs][self.present[:t_obs]]
        if len(pts) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    agents: tuple[AgentTrack, ...]
    lanelets: tuple[Lanelet, ...]
    t_obs: int = 20
    horizon: int = 30

    @property
    def current_index(self) -> int:
        return self.t_obs - 1

    @property
    def num_steps(self) -> int:
        return self.t_obs + self.horizon

    @property
    def target_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.is_target)

    def segments(self) -> list[LaneSegment]:
        return [s for ll in self.lanelets for s in ll.segments]

    def validate(self) -> "Scene":
        if self.t_obs < 2 or self.horizon < 0:
            raise SceneValidationError(f"bad t_obs/horizon {self.t_obs}/{self.horizon}")
        if not self.agents:
            raise SceneValidationError("scene has no agents")
        targets = sum(a.is_target for a in self.agents)
        if targets != 1:
            raise SceneValidationError(f"expected exactly one target agent, found {targets}")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise SceneValidationError("duplicate agent ids")
        for a in self.agents:
            if a.object_type not in OBJECT_TYPES:
                raise SceneValidationError(f"agent {a.agent_id}: unknown type {a.object_type!r}")
            if len(a.times) != self.num_steps:
                raise SceneValidationError(f"agent {a.agent_id}: track length {len(a.times)}")
            ts = a.times[a.present]
            if not np.all(np.isfinite(ts)) or not np.all(np.isfinite(a.xy[a.present])):
                raise SceneValidationError(f"agent {a.agent_id}: non-finite sample")
            if np.any(np.diff(ts) <= 0):
                raise SceneValidationError(f"agent {a.agent_id}: timestamps not strictly increasing")
            if not a.present[self.current_index]:
                raise SceneValidationError(f"agent {a.agent_id}: absent at current timestamp")
            if a.present[: self.t_obs].sum() < 2:
                raise SceneValidationError(f"agent {a.agent_id}: fewer than 2 observed samples")
        lids = [ll.lanelet_id for ll in self.lanelets]
        if len(set(lids)) != len(lids):
            raise SceneValidationError("duplicate lanelet ids")
        for ll in self.lanelets:
            if ll.centerline.shape != (LANELET_POINTS, 2):
                raise SceneValidationError(
                    f"lanelet {ll.lanelet_id}: centerline shape {ll.centerline.shape}")
            if not np.all(np.isfinite(ll.centerline)):
                raise SceneValidationError(f"lanelet {ll.lanelet_id}: non-finite point")
            if np.any(np.linalg.norm(np.diff(ll.centerline, axis=0), axis=1) == 0):
                raise SceneValidationError(f"lanelet {ll.lanelet_id}: zero-length segment")
            if ll.semantics.turn_direction not in TURN_DIRECTIONS:
                raise SceneValidationError(f"lanelet {ll.lanelet_id}: bad turn direction")
        return self


def make_track(agent_id: str, object_type: str, is_target: bool,
               samples: Sequence[tuple[float, float, float] | None], length: int) -> AgentTrack:
    """Build a track from per-step ``(t, x, y)`` samples (``None`` = missing)."""
    if len(samples) > length:
        raise SceneValidationError(f"agent {agent_id}: {len(samples)} samples > {length} steps")
    times = np.full(length, np.nan)
    xy = np.full((length, 2), np.nan)
    present = np.zeros(length, dtype=bool)
    for k, s in enumerate(samples):
        if s is None:
            continue
        times[k], xy[k, 0], xy[k, 1] = s
        present[k] = True
    return AgentTrack(agent_id, object_type, is_target, times, xy, present)


# ------------------------------------------------------------------ file format

def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise SceneValidationError("cannot serialise non-finite value")
    s = format(float(x), ".9g")
    return "0" if s == "-0" else s


def _dump(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(k) + ":" + _dump(obj[k]) for k in sorted(obj)) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dump(v) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return _fmt(obj)


def scene_to_dict(scene: Scene) -> dict:
    agents = []
    for a in scene.agents:
        samples: list = []
        for t, p, ok in zip(a.times, a.xy, a.present):
            samples.append([float(t), float(p[0]), float(p[1])] if ok else None)
        while samples and samples[-1] is None:
            samples.pop()
        agents.append({"id": a.agent_id, "type": a.object_type,
                       "is_target": bool(a.is_target), "samples": samples})
    lanelets = [{"id": ll.lanelet_id,
                 "centerline": [[float(x), float(y)] for x, y in ll.centerline],
                 "turn": ll.semantics.turn_direction,
                 "traffic_control": bool(ll.semantics.traffic_control),
                 "intersection": bool(ll.semantics.is_intersection)}
                for ll in scene.lanelets]
    return {"scene_id": scene.scene_id, "t_obs": scene.t_obs, "horizon": scene.horizon,
            "agents": agents, "lanelets": lanelets}


def dumps_scene(scene: Scene) -> str:
    return _dump(scene_to_dict(scene)) + "\n"


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps_scene(scene), encoding="utf-8")


def _require(d: dict, key: str, kind, where: str):
    if key not in d:
        raise SceneFormatError(f"{where}: missing key {key!r}")
    v = d[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SceneFormatError(f"{where}: {key!r} must be a number")
        return float(v)
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise SceneFormatError(f"{where}: {key!r} must be an integer")
    if kind is not int and not isinstance(v, kind):
        raise SceneFormatError(f"{where}: {key!r} has wrong type")
    return v


def _point(v, where: str, width: int) -> tuple[float, ...]:
    if not isinstance(v, list) or len(v) != width:
        raise SceneFormatError(f"{where}: expected a list of {width} numbers")
    if any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise SceneFormatError(f"{where}: non-numeric entry")
    return tuple(float(x) for x in v)


def scene_from_dict(d: dict) -> Scene:
    if not isinstance(d, dict):
        raise SceneFormatError("top level must be an object")
    scene_id = _require(d, "scene_id", str, "scene")
    t_obs = _require(d, "t_obs", int, "scene")
    horizon = _require(d, "horizon", int, "scene")
    length = t_obs + horizon
    agents = []
    for k, a in enumerate(_require(d, "agents", list, "scene")):
        where = f"agents[{k}]"
        if not isinstance(a, dict):
            raise SceneFormatError(f"{where}: must be an object")
        raw = _require(a, "samples", list, where)
        samples = [None if s is None else _point(s, f"{where}.samples[{j}]", 3)
                   for j, s in enumerate(raw)]
        agents.append(make_track(_require(a, "id", str, where), _require(a, "type", str, where),
                                 _require(a, "is_target", bool, where), samples, length))
    lanelets = []
    for k, ll in enumerate(_require(d, "lanelets", list, "scene")):
        where = f"lanelets[{k}]"
        if not isinstance(ll, dict):
            raise SceneFormatError(f"{where}: must be an object")
        pts = [_point(p, f"{where}.centerline", 2) for p in _require(ll, "centerline", list, where)]
        sem = SemanticAttributes(_require(ll, "turn", str, where),
                                 _require(ll, "traffic_control", bool, where),
                                 _require(ll, "intersection", bool, where))
        lanelets.append(Lanelet(_require(ll, "id", str, where),
                                np.array(pts, dtype=float).reshape(-1, 2), sem))
    return Scene(scene_id, tuple(agents), tuple(lanelets), t_obs, horizon).validate()


def loads_scene(text: str) -> Scene:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON: {exc}") from exc
    return scene_from_dict(d)


def load_scene(path) -> Scene:
    return loads_scene(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- preprocessing

def drop_static_agents(scene: Scene, min_path_length: float = 6.0) -> Scene:
    """Remove non-target agents whose observed path length is below ``min_path_length`` metres."""
    kept = tuple(a for a in scene.agents
                 if a.is_target or a.observed_path_length(scene.t_obs) >= min_path_length)
    return replace(scene, agents=kept)


@dataclass(frozen=True, eq=False)
class TrackView:
    """Per-agent slice of the step grid; arrays are [N, L] / [N, L, 2]."""

    times: np.ndarray
    xy: np.ndarray
    present: np.ndarray

    @property
    def length(self) -> int:
        return self.present.shape[1]

    @property
    def has_samples(self) -> np.ndarray:
        return self.present.any(axis=1)


def split_observed_future(scene: Scene) -> tuple[TrackView, TrackView]:
    """Split the step grid into observed ``[0, t_obs)`` and future ``[t_obs, t_obs+H)`` views.

    Agents with no future sample have ``future.has_samples`` false; the loss masks them out.
    """
    times = np.stack([a.times for a in scene.agents])
    xy = np.stack([a.xy for a in scene.agents])
    present = np.stack([a.present for a in scene.agents])
    T = scene.t_obs
    obs = TrackView(times[:, :T], xy[:, :T], present[:, :T])
    fut = TrackView(times[:, T:], xy[:, T:], present[:, T:])
    return obs, fut


# -------------------------------------------------------------------- templates

def _resample(poly: np.ndarray, n: int = LANELET_POINTS) -> np.ndarray:
    """n points evenly spaced by arc length along a dense polyline."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    q = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(q, s, poly[:, 0]), np.interp(q, s, poly[:, 1])], axis=1)


def _split_lanelets(points: np.ndarray, count: int) -> list[np.ndarray]:
    """Split a polyline of ``count*9 + 1`` points into ``count`` 10-point lanelets."""
    step = LANELET_POINTS - 1
    assert len(points) == count * step + 1
    return [points[k * step:(k + 1) * step + 1].copy() for k in range(count)]


def _line(a, b, n) -> np.ndarray:
    return np.linspace(np.asarray(a, float), np.asarray(b, float), n)


def straight_template() -> tuple[list[Lanelet], list[list[str]]]:
    """Four parallel 108 m lanes (two eastbound, two westbound), six lanelets each."""
    lanelets, routes = [], []
    n = 6
    for name, y, sign in (("e0", -1.75, 1), ("e1", -5.25, 1), ("w0", 1.75, -1), ("w1", 5.25, -1)):
        xs = np.linspace(0.0, 108.0, n * 9 + 1)[::sign]
        pts = np.stack([xs, np.full_like(xs, y)], axis=1)
        route = []
        for k, c in enumerate(_split_lanelets(pts, n)):
            lid = f"{name}_{k}"
            lanelets.append(Lanelet(lid, c))
            route.append(lid)
        routes.append(route)
    return lanelets, routes


def curve_template(radius: float = 30.0) -> tuple[list[Lanelet], list[list[str]]]:
    """Straight approach, 90 degree left bend, straight exit; two lanes each way."""
    lanelets, routes = [], []
    for name, r in (("a0", 1.75), ("a1", 5.25), ("b0", -1.75), ("b1", -5.25)):
        approach = _line((-36.0, -r), (0.0, -r), 19)
        th = np.linspace(-math.pi / 2, 0.0, 28)
        arc = np.stack([(radius + r) * np.cos(th), radius + (radius + r) * np.sin(th)], axis=1)
        exit_ = _line((radius + r, radius), (radius + r, radius + 36.0), 19)
        pts = np.concatenate([approach, arc[1:], exit_[1:]])
        if r < 0:
            pts = pts[::-1]
        route = []
        for k, c in enumerate(_split_lanelets(pts, 7)):
            lid = f"{name}_{k}"
            turn = "none"
            if 2 <= k <= 4:
                turn = "left" if r > 0 else "right"
            lanelets.append(Lanelet(lid, c, SemanticAttributes(turn_direction=turn)))
            route.append(lid)
        routes.append(route)
    return lanelets, routes


ARMS = {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}


def intersection_template(box: float = 10.0, width: float = 1.75,
                          arm_lanelets: int = 3, arm_length: float = 54.0
                          ) -> tuple[list[Lanelet], list[list[str]]]:
    """Four-way intersection with one inbound and one outbound lane per arm.

    Lanelets: ``{arm}_in_{k}`` (k=0 farthest out), ``{arm}_out_{k}`` (k=0 at the box),
    and one connector ``{a}_to_{b}`` per ordered arm pair, 36 in total.
    """
    lanelets: dict[str, Lanelet] = {}
    n = arm_lanelets * 9 + 1
    for arm, u in ARMS.items():
        u = np.array(u)
        nrm = np.array([-u[1], u[0]])
        inbound = _line(u * (box + arm_length) + width * nrm, u * box + width * nrm, n)
        outbound = _line(u * box - width * nrm, u * (box + arm_length) - width * nrm, n)
        for k, c in enumerate(_split_lanelets(inbound, arm_lanelets)):
            sem = SemanticAttributes(traffic_control=(k == arm_lanelets - 1))
            lanelets[f"{arm}_in_{k}"] = Lanelet(f"{arm}_in_{k}", c, sem)
        for k, c in enumerate(_split_lanelets(outbound, arm_lanelets)):
            lanelets[f"{arm}_out_{k}"] = Lanelet(f"{arm}_out_{k}", c)
    routes = []
    for a, ua in ARMS.items():
        for b, ub in ARMS.items():
            if a == b:
                continue
            ua_, ub_ = np.array(ua), np.array(ub)
            p0 = ua_ * box + width * np.array([-ua_[1], ua_[0]])
            p2 = ub_ * box - width * np.array([-ub_[1], ub_[0]])
            h0, h2 = -ua_, ub_
            cross = h0[0] * h2[1] - h0[1] * h2[0]
            if abs(cross) < 1e-12:
                turn = "none"
                dense = _line(p0, p2, 64)
            else:
                turn = "left" if cross > 0 else "right"
                # control point: intersection of the entry and exit heading lines
                A = np.stack([h0, -h2], axis=1)
                s = np.linalg.solve(A, p2 - p0)
                p1 = p0 + s[0] * h0
                tt = np.linspace(0.0, 1.0, 256)[:, None]
                dense = (1 - tt) ** 2 * p0 + 2 * (1 - tt) * tt * p1 + tt ** 2 * p2
            c = _resample(dense)
            c[0], c[-1] = p0, p2
            lid = f"{a}_to_{b}"
            lanelets[lid] = Lanelet(lid, c, SemanticAttributes(turn, False, True))
            routes.append([f"{a}_in_{k}" for k in range(arm_lanelets)] + [lid]
                          + [f"{b}_out_{k}" for k in range(arm_lanelets)])
    return list(lanelets.values()), routes


def build_template(name: str) -> tuple[list[Lanelet], list[list[str]]]:
    if name == "straight":
        return straight_template()
    if name == "curve":
        return curve_template()
    if name == "intersection":
        return intersection_template()
    raise ValueError(f"unknown road template {name!r}; expected one of {TEMPLATES}")


def route_polyline(lanelets: Iterable[Lanelet], route: Sequence[str]) -> np.ndarray:
    by_id = {ll.lanelet_id: ll for ll in lanelets}
    pts = [by_id[route[0]].centerline]
    for lid in route[1:]:
        pts.append(by_id[lid].centerline[1:])
    return np.concatenate(pts)


def point_at(poly: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Points at arc lengths ``s`` along a polyline (linear within each segment)."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.clip(s, 0.0, cum[-1])
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / seg[k]
    return poly[k] + frac[:, None] * (poly[k + 1] - poly[k])


# -------------------------------------------------------------------- generator

@dataclass(frozen=True)
class SynthConfig:
    n_agents: int = 6
    template: str = "intersection"
    noise: float = 0.0
    t_obs: int = 20
    horizon: int = 30
    dt: float = 0.1
    dt_jitter: float = 0.004
    gap_prob: float = 0.0
    speed_range: tuple[float, float] = (4.0, 12.0)

    def __post_init__(self):
        if not 1 <= self.n_agents <= 16:
            raise ValueError(f"n_agents must be in [1, 16], got {self.n_agents}")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.t_obs < 2 or self.horizon < 0:
            raise ValueError("t_obs must be >= 2 and horizon >= 0")
        if not 0 <= self.dt_jitter < self.dt / 2:
            raise ValueError("dt_jitter must be in [0, dt/2)")
        if not 0 <= self.gap_prob < 1:
            raise ValueError("gap_prob must be in [0, 1)")


def synth_scene(seed: int, config: SynthConfig = SynthConfig()) -> Scene:
    """Deterministic synthetic scene: agents drive along template routes.

    Each agent moves along its route polyline with a constant-acceleration speed
    profile, sampled at jittered timestamps, plus isotropic Gaussian position noise.
    Agent 0 is the target.
    """
    rng = np.random.default_rng(seed)
    lanelets, routes = build_template(config.template)
    L = config.t_obs + config.horizon
    duration = (L - 1) * config.dt
    agents = []
    for i in range(config.n_agents):
        route = routes[rng.integers(len(routes))]
        poly = route_polyline(lanelets, route)
        total = float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())
        v0 = rng.uniform(*config.speed_range)
        acc = rng.uniform(-1.0, 1.0)
        acc = max(acc, (1.5 - v0) / duration)
        travel = v0 * duration + 0.5 * acc * duration ** 2
        s0 = rng.uniform(0.0, max(total - travel, 0.0))
        k = np.arange(L)
        times = k * config.dt + rng.uniform(-config.dt_jitter, config.dt_jitter, L)
        times[0] = 0.0
        s = s0 + v0 * times + 0.5 * acc * times ** 2
        xy = point_at(poly, s)
        if config.noise > 0:
            xy = xy + rng.normal(0.0, config.noise, xy.shape)
        present = np.ones(L, dtype=bool)
        if config.gap_prob > 0 and config.t_obs > 3:
            drop = rng.random(config.t_obs - 3) < config.gap_prob
            present[1:config.t_obs - 2][drop] = False
        times = np.where(present, times, np.nan)
        xy = np.where(present[:, None], xy, np.nan)
        agents.append(AgentTrack(f"agent{i}", "vehicle", i == 0, times, xy, present))
    scene = Scene(f"{config.template}-{seed}", tuple(agents), tuple(lanelets),
                  config.t_obs, config.horizon)
    return scene.validate()
