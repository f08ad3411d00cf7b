"""Padded per-scene feature tensors consumed by the encoder.

Edge sets are stored densely as ``[..., K]`` index/mask arrays and
``[..., K, F]`` feature arrays; padded slots have ``mask == False`` and
zero features.  Every vector-valued feature is expressed in the centre
agent's frame at the current step, so the arrays are invariant to rigid
motions of the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import geometry as G
from .scene import Scene, _dump

CENTER_DIM = 11
AA_DIM = 17
AL_DIM = 16
LANELET_DIM = 18
GLOBAL_DIM = 12


@dataclass(frozen=True, eq=False)
class EdgeSet:
    idx: np.ndarray
    mask: np.ndarray
    feat: np.ndarray
    slot: np.ndarray | None = None  # segment -> lanelet slot (agent-lane sets only)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def slice_time(self, t_end: int) -> "EdgeSet":
        return EdgeSet(self.idx[:, :t_end], self.mask[:, :t_end], self.feat[:, :t_end],
                       None if self.slot is None else self.slot[:, :t_end])


@dataclass(frozen=True, eq=False)
class SceneFeatures:
    scene_id: str
    agent_ids: tuple[str, ...]
    target: int
    center: np.ndarray  # [N, T, CENTER_DIM]
    valid: np.ndarray  # [N, T]
    aa1: EdgeSet  # [N, T, K]
    aa2: EdgeSet
    al1: EdgeSet  # [N, T, S]
    ll1: EdgeSet  # [N, T, L]
    al2: EdgeSet  # [N, S2]
    glob: EdgeSet  # [N, N-1 (>=1)]
    rot: np.ndarray  # [N, 2] heading (cos, sin) at the current step
    origin: np.ndarray  # [N, 2] position at the current step
    fut_local: np.ndarray  # [N, H, 2]
    fut_world: np.ndarray  # [N, H, 2]
    fut_mask: np.ndarray  # [N, H]

    @property
    def num_agents(self) -> int:
        return self.center.shape[0]

    @property
    def num_steps(self) -> int:
        return self.center.shape[1]

    def truncate(self, t0: int) -> "SceneFeatures":
        """Keep observed steps ``0..t0`` only (frames stay those of the full history)."""
        e = t0 + 1
        return replace(self, center=self.center[:, :e], valid=self.valid[:, :e],
                       aa1=self.aa1.slice_time(e), aa2=self.aa2.slice_time(e),
                       al1=self.al1.slice_time(e), ll1=self.ll1.slice_time(e))

    def permute(self, order) -> "SceneFeatures":
        """Reorder agents; neighbour indices are remapped accordingly."""
        order = np.asarray(order)
        inv = np.argsort(order)

        def remap(es: EdgeSet, agent_idx: bool) -> EdgeSet:
            idx = inv[es.idx] if agent_idx else es.idx
            return EdgeSet(idx[order], es.mask[order], es.feat[order],
                           None if es.slot is None else es.slot[order])

        return replace(self, agent_ids=tuple(self.agent_ids[k] for k in order),
                       target=int(inv[self.target]), center=self.center[order],
                       valid=self.valid[order], aa1=remap(self.aa1, True),
                       aa2=remap(self.aa2, True), al1=remap(self.al1, False),
                       ll1=remap(self.ll1, False), al2=remap(self.al2, False),
                       glob=remap(self.glob, True), rot=self.rot[order],
                       origin=self.origin[order], fut_local=self.fut_local[order],
                       fut_world=self.fut_world[order], fut_mask=self.fut_mask[order])


def _pad(rows: list[tuple[np.ndarray, np.ndarray, np.ndarray | None]], lead: tuple[int, ...],
         dim: int) -> EdgeSet:
    width = max([1] + [len(r[0]) for r in rows])
    idx = np.zeros(lead + (width,), dtype=int)
    mask = np.zeros(lead + (width,), dtype=bool)
    feat = np.zeros(lead + (width, dim))
    has_slot = any(r[2] is not None for r in rows)
    slot = np.zeros(lead + (width,), dtype=int) if has_slot else None
    for flat, (ix, ft, sl) in enumerate(rows):
        pos = np.unravel_index(flat, lead)
        n = len(ix)
        idx[pos][:n] = ix
        mask[pos][:n] = True
        feat[pos][:n] = ft
        if has_slot and sl is not None:
            slot[pos][:n] = sl
    return EdgeSet(idx, mask, feat, slot)


def _rot(rot: G.Rotation2, x):
    return G.rotate_into(rot, x)


def aa_features(rot: G.Rotation2, d_j: np.ndarray, e: G.AgentAgentEdge, b_j: np.ndarray) -> np.ndarray:
    return np.concatenate([_rot(rot, d_j), _rot(rot, e.d_ij), _rot(rot, e.v_ij),
                           e.l_ij[..., None], e.s_ij[..., None], e.d_j2i, e.v_j2i, e.a_j2i, b_j],
                          axis=-1)


def al_features(rot: G.Rotation2, d_xi: np.ndarray, e: G.AgentLaneEdge, b_xi: np.ndarray) -> np.ndarray:
    return np.concatenate([_rot(rot, d_xi), _rot(rot, e.d_ixi), e.d_i2xi, e.l_ixi[..., None],
                           e.v_i2xi, e.a_i2xi, b_xi], axis=-1)


def lanelet_edge_features(rot: G.Rotation2, d_lz: np.ndarray, e: G.AgentLaneEdge,
                          b_lz: np.ndarray) -> np.ndarray:
    a_lz = d_lz / np.linalg.norm(d_lz, axis=-1, keepdims=True)
    return np.concatenate([_rot(rot, d_lz), _rot(rot, e.d_ixi), e.d_i2xi, e.l_ixi[..., None],
                           e.v_i2xi, e.a_i2xi, _rot(rot, a_lz), b_lz], axis=-1)


def global_features(rot: G.Rotation2, e: G.AgentAgentEdge) -> np.ndarray:
    return np.concatenate([_rot(rot, e.d_ij), _rot(rot, e.v_ij), e.l_ij[..., None],
                           e.s_ij[..., None], e.d_j2i, e.v_j2i, e.a_j2i], axis=-1)


def featurize(scene: Scene, radius1: float = 20.0, radius2: float = 50.0) -> SceneFeatures:
    T = scene.t_obs
    cur = T - 1
    geom = G.scene_geometry(scene, T)
    N = len(scene.agents)
    nodes = geom.nodes
    alpha_T = np.array([n.alpha[cur] for n in nodes])
    rots = [G.Rotation2.from_angle(a) for a in alpha_T]
    b_agents = np.stack([n.b for n in nodes])
    seg_d = geom.seg_end - geom.seg_start

    center = np.zeros((N, T, CENTER_DIM))
    for i, n in enumerate(nodes):
        c = np.concatenate([_rot(rots[i], n.d), _rot(rots[i], n.v), _rot(rots[i], n.a),
                            n.s[:, None], n.dt[:, None], np.repeat(n.b[None], T, 0)], axis=-1)
        center[i] = np.where(n.valid[:, None], c, 0.0)

    d_nodes = np.stack([n.d for n in nodes])
    regions1 = G.build_local_regions(scene, radius1, geom=geom)
    regions2 = G.build_local_regions(scene, radius2, geom=geom)

    def aa_rows(regions):
        rows = []
        for g in regions:
            i = g.center
            for t in range(T):
                js = g.neighbors[t]
                if len(js) == 0:
                    rows.append((js, np.zeros((0, AA_DIM)), None))
                    continue
                rows.append((js, aa_features(rots[i], d_nodes[js, t], g.aa_edges[t], b_agents[js]), None))
        return rows

    al_rows, ll_rows = [], []
    for g in regions1:
        i = g.center
        for t in range(T):
            ss, ls = g.segments[t], g.lanelets[t]
            if len(ss) == 0:
                al_rows.append((ss, np.zeros((0, AL_DIM)), ss))
                ll_rows.append((ls, np.zeros((0, LANELET_DIM)), None))
                continue
            slot = np.searchsorted(ls, geom.seg_lanelet[ss])
            al_rows.append((ss, al_features(rots[i], seg_d[ss], g.al_edges[t], geom.seg_b[ss]), slot))
            ll_rows.append((ls, lanelet_edge_features(rots[i], geom.lanelet_d[ls], g.lanelet_edges[t],
                                                      geom.lanelet_b[ls]), None))

    al2_rows = []
    for g in regions2:
        i = g.center
        ss = g.segments[cur]
        if len(ss) == 0:
            al2_rows.append((ss, np.zeros((0, AL_DIM)), None))
        else:
            al2_rows.append((ss, al_features(rots[i], seg_d[ss], g.al_edges[cur], geom.seg_b[ss]), None))

    vel_T = np.stack([n.v[cur] for n in nodes])
    pos_T = geom.pos[:, cur]
    glob_rows = []
    for i in range(N):
        js = np.array([j for j in range(N) if j != i], dtype=int)
        if len(js) == 0:
            glob_rows.append((js, np.zeros((0, GLOBAL_DIM)), None))
            continue
        e = G.agent_agent_edge(G.AgentState(pos_T[i], vel_T[i], alpha_T[i]),
                               G.AgentState(pos_T[js], vel_T[js], alpha_T[js]))
        glob_rows.append((js, global_features(rots[i], e), None))

    H = scene.horizon
    fut_world = np.zeros((N, H, 2))
    fut_mask = np.zeros((N, H), dtype=bool)
    fut_local = np.zeros((N, H, 2))
    for i, a in enumerate(scene.agents):
        pres = a.present[T:T + H]
        fut_mask[i] = pres
        fut_world[i][pres] = a.xy[T:T + H][pres]
        fut_local[i][pres] = _rot(rots[i], a.xy[T:T + H][pres] - pos_T[i])

    return SceneFeatures(
        scene.scene_id, tuple(a.agent_id for a in scene.agents), scene.target_index,
        center, geom.valid,
        _pad(aa_rows(regions1), (N, T), AA_DIM), _pad(aa_rows(regions2), (N, T), AA_DIM),
        _pad(al_rows, (N, T), AL_DIM), _pad(ll_rows, (N, T), LANELET_DIM),
        _pad(al2_rows, (N,), AL_DIM), _pad(glob_rows, (N,), GLOBAL_DIM),
        G.heading_vector(alpha_T), pos_T, fut_local, fut_world, fut_mask)


def feature_dump(scene: Scene, radius1: float = 20.0, radius2: float = 50.0) -> str:
    """JSON dump of node features and stage-1/stage-2 edge sets for inspection."""
    geom = G.scene_geometry(scene)
    f = featurize(scene, radius1, radius2)
    agents = []
    for i, (a, n) in enumerate(zip(scene.agents, geom.nodes)):
        agents.append({
            "id": a.agent_id,
            "heading": f.rot[i].tolist(),
            "origin": f.origin[i].tolist(),
            "nodes": {"d": n.d.tolist(), "v": n.v.tolist(), "s": n.s.tolist(),
                      "a": n.a.tolist(), "dt": n.dt.tolist(), "valid": n.valid.tolist()},
            "stage1": {"neighbors": [[f.agent_ids[j] for j in f.aa1.idx[i, t][f.aa1.mask[i, t]]]
                                     for t in range(f.num_steps)],
                       "segments": [int(m) for m in f.al1.mask[i].sum(-1)],
                       "lanelets": [int(m) for m in f.ll1.mask[i].sum(-1)]},
            "stage2": {"neighbors": [int(m) for m in f.aa2.mask[i].sum(-1)],
                       "segments_current": int(f.al2.mask[i].sum())},
        })
    seg_d = geom.seg_end - geom.seg_start
    lanes = {"d": seg_d.tolist(), "l": np.linalg.norm(seg_d, axis=-1).tolist(),
             "lanelet": [scene.lanelets[k].lanelet_id for k in geom.seg_lanelet]}
    return _dump({"scene_id": scene.scene_id, "radius1": radius1, "radius2": radius2,
                  "agents": agents, "lane_segments": lanes}) + "\n"
