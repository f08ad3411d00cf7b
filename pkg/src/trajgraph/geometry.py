"""Rotation/translation-invariant node and edge features for traffic scenes.

All functions broadcast over leading dimensions: a "2-vector" argument may be
any array with a trailing axis of length 2.

Sign convention for agent-agent edges is neighbour minus centre throughout:
``d_ij = p_j - p_i``, ``v_ij = v_j - v_i``, ``alpha_ij = alpha_j - alpha_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scene import AgentTrack, Lanelet, LaneSegment, Scene, object_type_vector


@dataclass(frozen=True)
class Rotation2:
    cos: np.ndarray | float
    sin: np.ndarray | float

    @classmethod
    def from_angle(cls, alpha) -> "Rotation2":
        alpha = np.asarray(alpha, dtype=float)
        return cls(np.cos(alpha), np.sin(alpha))

    @classmethod
    def from_heading(cls, a: np.ndarray) -> "Rotation2":
        a = np.asarray(a, dtype=float)
        return cls(a[..., 0], a[..., 1])

    @property
    def angle(self):
        return np.arctan2(self.sin, self.cos)

    def matrix(self) -> np.ndarray:
        c, s = np.asarray(self.cos), np.asarray(self.sin)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rotate_into(r: Rotation2, x: np.ndarray) -> np.ndarray:
    """R^T x: express ``x`` in the frame whose x-axis points along ``r``."""
    x = np.asarray(x, dtype=float)
    c, s = np.asarray(r.cos)[..., None], np.asarray(r.sin)[..., None]
    return np.concatenate([c * x[..., :1] + s * x[..., 1:],
                           -s * x[..., :1] + c * x[..., 1:]], axis=-1)


def rotate_by(r: Rotation2, x: np.ndarray) -> np.ndarray:
    """R x (inverse of :func:`rotate_into`)."""
    return rotate_into(Rotation2(r.cos, -np.asarray(r.sin)), x)


def heading_vector(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)


def heading_of(d, prior: float | None = None) -> tuple[float, np.ndarray, bool]:
    """Heading angle and unit vector of a displacement.

    A zero displacement keeps ``prior`` when given; otherwise returns
    ``(0, (1, 0), False)``.
    """
    d = np.asarray(d, dtype=float)
    if d[0] == 0.0 and d[1] == 0.0:
        if prior is None:
            return 0.0, np.array([1.0, 0.0]), False
        return float(prior), heading_vector(prior), True
    alpha = float(np.arctan2(d[1], d[0]))
    return alpha, heading_vector(alpha), True


# ------------------------------------------------------------------------ nodes

@dataclass(frozen=True, eq=False)
class AgentNodeFeatures:
    """Per-step agent node features; arrays indexed by step."""

    d: np.ndarray  # [T, 2]
    v: np.ndarray  # [T, 2]
    s: np.ndarray  # [T]
    a: np.ndarray  # [T, 2]
    alpha: np.ndarray  # [T]
    dt: np.ndarray  # [T]
    b: np.ndarray  # [3]
    valid: np.ndarray  # [T] bool: both t-1 and t observed
    heading_known: np.ndarray  # [T] bool


def agent_node_features(track: AgentTrack, steps: int | None = None) -> AgentNodeFeatures:
    steps = len(track.times) if steps is None else steps
    xy, tt, present = track.xy[:steps], track.times[:steps], track.present[:steps]
    if present.sum() < 2:
        raise ValueError(f"agent {track.agent_id}: need at least 2 observed samples")
    valid = np.zeros(steps, dtype=bool)
    valid[1:] = present[1:] & present[:-1]
    d = np.zeros((steps, 2))
    dt = np.zeros(steps)
    d[1:][valid[1:]] = (xy[1:] - xy[:-1])[valid[1:]]
    dt[1:][valid[1:]] = (tt[1:] - tt[:-1])[valid[1:]]
    v = np.zeros((steps, 2))
    v[valid] = d[valid] / dt[valid, None]
    alpha = np.zeros(steps)
    known = np.zeros(steps, dtype=bool)
    prior = None
    for t in range(steps):
        if valid[t]:
            al, _, ok = heading_of(d[t], prior)
            if ok:
                prior = al
        if prior is not None:
            alpha[t], known[t] = prior, True
    a = heading_vector(alpha)
    return AgentNodeFeatures(d, v, np.linalg.norm(v, axis=-1), a, alpha, dt,
                             object_type_vector(track.object_type), valid, known)


@dataclass(frozen=True, eq=False)
class LaneNodeFeatures:
    d: np.ndarray
    a: np.ndarray
    l: np.ndarray
    b: np.ndarray


def lane_node_features(seg: LaneSegment) -> LaneNodeFeatures:
    return lane_node_arrays(seg.start, seg.end, seg.semantics.vector())


def lane_node_arrays(start, end, b) -> LaneNodeFeatures:
    d = np.asarray(end, float) - np.asarray(start, float)
    return LaneNodeFeatures(d, heading_vector(np.arctan2(d[..., 1], d[..., 0])),
                            np.linalg.norm(d, axis=-1), np.asarray(b, float))


# ------------------------------------------------------------------------ edges

@dataclass(frozen=True, eq=False)
class AgentState:
    """Agent position, velocity and heading angle at one step (broadcastable arrays)."""

    p: np.ndarray
    v: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True, eq=False)
class AgentAgentEdge:
    d_ij: np.ndarray
    l_ij: np.ndarray
    v_ij: np.ndarray
    s_ij: np.ndarray
    d_j2i: np.ndarray
    v_j2i: np.ndarray
    a_j2i: np.ndarray


def agent_agent_edge(i: AgentState, j: AgentState) -> AgentAgentEdge:
    d_ij = np.asarray(j.p, float) - np.asarray(i.p, float)
    v_ij = np.asarray(j.v, float) - np.asarray(i.v, float)
    r = Rotation2.from_angle(i.alpha)
    return AgentAgentEdge(d_ij, np.linalg.norm(d_ij, axis=-1), v_ij, np.linalg.norm(v_ij, axis=-1),
                          rotate_into(r, d_ij), rotate_into(r, v_ij),
                          heading_vector(np.asarray(j.alpha) - np.asarray(i.alpha)))


@dataclass(frozen=True, eq=False)
class AgentLaneEdge:
    d_ixi: np.ndarray
    l_ixi: np.ndarray
    d_i2xi: np.ndarray
    v_i2xi: np.ndarray
    a_i2xi: np.ndarray


def agent_lane_edge(i: AgentState, anchor, lane_alpha) -> AgentLaneEdge:
    """Edge from agent ``i`` to a lane element anchored at ``anchor`` with heading ``lane_alpha``."""
    d = np.asarray(anchor, float) - np.asarray(i.p, float)
    r = Rotation2.from_angle(lane_alpha)
    return AgentLaneEdge(d, np.linalg.norm(d, axis=-1), rotate_into(r, d),
                         rotate_into(r, np.asarray(i.v, float)),
                         heading_vector(np.asarray(lane_alpha) - np.asarray(i.alpha)))


def segment_edge(i: AgentState, seg: LaneSegment) -> AgentLaneEdge:
    d = np.asarray(seg.end) - np.asarray(seg.start)
    return agent_lane_edge(i, seg.start, np.arctan2(d[1], d[0]))


@dataclass(frozen=True, eq=False)
class LaneletFeatures:
    p: np.ndarray  # mean of segment midpoints
    d: np.ndarray  # mean of segment displacements
    a: np.ndarray
    b: np.ndarray
    edge: AgentLaneEdge | None = None


def lanelet_geometry(centerline: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(centerline, float)
    mids = 0.5 * (c[..., 1:, :] + c[..., :-1, :])
    return mids.mean(axis=-2), np.diff(c, axis=-2).mean(axis=-2)


def lanelet_features(lanelet: Lanelet, i: AgentState | None = None) -> LaneletFeatures:
    p, d = lanelet_geometry(lanelet.centerline)
    alpha = np.arctan2(d[1], d[0])
    edge = None if i is None else agent_lane_edge(i, p, alpha)
    return LaneletFeatures(p, d, heading_vector(alpha), lanelet.semantics.vector(), edge)


# ----------------------------------------------------------------- scene arrays

@dataclass(frozen=True, eq=False)
class SceneGeometry:
    """Dense per-scene arrays shared by region building and featurisation."""

    pos: np.ndarray  # [N, T, 2] (zero where absent)
    present: np.ndarray  # [N, T]
    nodes: list[AgentNodeFeatures]
    seg_start: np.ndarray  # [M, 2]
    seg_end: np.ndarray
    seg_lanelet: np.ndarray  # [M] lanelet index
    seg_b: np.ndarray  # [M, 5]
    lanelet_p: np.ndarray  # [Lz, 2]
    lanelet_d: np.ndarray
    lanelet_b: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return np.stack([n.valid for n in self.nodes])

    @property
    def vel(self) -> np.ndarray:
        return np.stack([n.v for n in self.nodes])

    @property
    def alpha(self) -> np.ndarray:
        return np.stack([n.alpha for n in self.nodes])


def scene_geometry(scene: Scene, steps: int | None = None) -> SceneGeometry:
    steps = scene.t_obs if steps is None else steps
    nodes = [agent_node_features(a, steps) for a in scene.agents]
    present = np.stack([a.present[:steps] for a in scene.agents])
    pos = np.where(present[..., None], np.stack([a.xy[:steps] for a in scene.agents]), 0.0)
    starts, ends, parent, seg_b = [], [], [], []
    for k, ll in enumerate(scene.lanelets):
        starts.append(ll.centerline[:-1])
        ends.append(ll.centerline[1:])
        parent.append(np.full(len(ll.centerline) - 1, k))
        seg_b.append(np.repeat(ll.semantics.vector()[None], len(ll.centerline) - 1, 0))
    if scene.lanelets:
        centers = np.stack([ll.centerline for ll in scene.lanelets])
        lp, ld = lanelet_geometry(centers)
        lb = np.stack([ll.semantics.vector() for ll in scene.lanelets])
        cat = np.concatenate
        starts, ends, parent, seg_b = cat(starts), cat(ends), cat(parent), cat(seg_b)
    else:
        lp = ld = np.zeros((0, 2))
        lb = seg_b = np.zeros((0, 5))
        starts = ends = np.zeros((0, 2))
        parent = np.zeros(0, dtype=int)
    return SceneGeometry(pos, present, nodes, starts, ends, parent.astype(int), seg_b, lp, ld, lb)


# ---------------------------------------------------------------- local regions

@dataclass(frozen=True, eq=False)
class LocalRegionGraph:
    """Entities within ``radius`` of one centre agent, per step.

    ``neighbors[t]``/``segments[t]``/``lanelets[t]`` hold scene indices; the
    matching edge features are in ``aa_edges[t]`` / ``al_edges[t]`` /
    ``lanelet_edges[t]``.  ``lanelets[t]`` are the parents of the in-radius
    segments, so the filtered segment set is always a subset of ``segments[t]``.
    """

    center: int
    center_id: str
    radius: float
    steps: tuple[int, ...]
    neighbors: dict[int, np.ndarray]
    segments: dict[int, np.ndarray]
    lanelets: dict[int, np.ndarray]
    aa_edges: dict[int, AgentAgentEdge]
    al_edges: dict[int, AgentLaneEdge]
    lanelet_edges: dict[int, AgentLaneEdge]

    def num_edges(self) -> tuple[int, int, int]:
        return (sum(len(v) for v in self.neighbors.values()),
                sum(len(v) for v in self.segments.values()),
                sum(len(v) for v in self.lanelets.values()))


def build_local_regions(scene: Scene, radius: float, t_range=None,
                        geom: SceneGeometry | None = None) -> list[LocalRegionGraph]:
    """One :class:`LocalRegionGraph` per agent; membership is ``distance <= radius``.

    Neighbour distance uses agent positions; segment distance uses the
    segment start point.  Only steps where the centre node is valid carry edges.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    geom = scene_geometry(scene) if geom is None else geom
    N, T = geom.present.shape
    steps = tuple(range(T)) if t_range is None else tuple(t_range)
    valid, vel, alpha = geom.valid, geom.vel, geom.alpha
    seg_d = geom.seg_end - geom.seg_start
    seg_alpha = np.arctan2(seg_d[:, 1], seg_d[:, 0])
    lz_alpha = np.arctan2(geom.lanelet_d[:, 1], geom.lanelet_d[:, 0])
    out = []
    for i in range(N):
        nb, sg, lz, aa, al, le = {}, {}, {}, {}, {}, {}
        for t in steps:
            if not valid[i, t]:
                nb[t] = sg[t] = lz[t] = np.zeros(0, dtype=int)
                continue
            st = AgentState(geom.pos[i, t], vel[i, t], alpha[i, t])
            dist = np.linalg.norm(geom.pos[:, t] - geom.pos[i, t], axis=-1)
            js = np.nonzero(valid[:, t] & (dist <= radius) & (np.arange(N) != i))[0]
            nb[t] = js
            aa[t] = agent_agent_edge(st, AgentState(geom.pos[js, t], vel[js, t], alpha[js, t]))
            sdist = np.linalg.norm(geom.seg_start - geom.pos[i, t], axis=-1)
            ss = np.nonzero(sdist <= radius)[0]
            sg[t] = ss
            al[t] = agent_lane_edge(st, geom.seg_start[ss], seg_alpha[ss])
            ls = np.unique(geom.seg_lanelet[ss])
            lz[t] = ls
            le[t] = agent_lane_edge(st, geom.lanelet_p[ls], lz_alpha[ls])
        out.append(LocalRegionGraph(i, scene.agents[i].agent_id, float(radius), steps,
                                    nb, sg, lz, aa, al, le))
    return out


def rigid_transform_scene(scene: Scene, angle: float, offset=(0.0, 0.0),
                          pivot=(0.0, 0.0)) -> Scene:
    """Rotate every coordinate by ``angle`` about ``pivot`` then translate by ``offset``."""
    r = Rotation2.from_angle(angle)
    pivot = np.asarray(pivot, float)
    offset = np.asarray(offset, float)

    def tf(x):
        return rotate_by(r, np.asarray(x) - pivot) + pivot + offset

    agents = tuple(replace(a, xy=np.where(a.present[:, None], tf(np.nan_to_num(a.xy)), np.nan))
                   for a in scene.agents)
    lanelets = tuple(replace(ll, centerline=tf(ll.centerline)) for ll in scene.lanelets)
    return replace(scene, agents=agents, lanelets=lanelets)
