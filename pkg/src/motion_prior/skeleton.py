"""Skeleton topology and the skeleton-aware convolution / pooling operators.

Feature channels live on *edges* of the kinematic tree. A skeleton with J
joints exposes J channels: one per non-root joint (the bone ending at that
joint) plus a virtual edge ending at the root, which carries the global
rotation. Edges are written ``(a, b)`` with ``a == -1`` for the virtual edge.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tc
from .tensor import Tensor


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "offsets", offsets)
        n = len(self.parents)
        if len(self.names) != n or offsets.shape[0] != n:
            raise ValueError("names, parents and offsets must have one entry per joint")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"skeleton needs exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parents):
            if p >= n:
                raise ValueError(f"joint {i} has out-of-range parent {p}")
        # every joint must reach the root without revisiting a joint
        for i in range(n):
            seen, j = set(), i
            while j >= 0:
                if j in seen:
                    raise ValueError(f"parent cycle through joint {i}")
                seen.add(j)
                j = self.parents[j]
        if not np.all(np.isfinite(offsets)):
            raise ValueError("offsets must be finite")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    def children(self, j: int) -> list[int]:
        return [i for i, p in enumerate(self.parents) if p == j]

    def topological_order(self) -> list[int]:
        order, queue = [], deque([self.root])
        while queue:
            j = queue.popleft()
            order.append(j)
            queue.extend(self.children(j))
        return order

    def ancestors(self, j: int) -> list[int]:
        out = []
        while self.parents[j] >= 0:
            j = self.parents[j]
            out.append(j)
        return out

    def topology(self) -> "Topology":
        return Topology(tuple((p, i) for i, p in enumerate(self.parents)))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "parents": list(self.parents),
                "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Skeleton":
        return cls(d["names"], d["parents"], np.asarray(d["offsets"], dtype=np.float64))


@dataclass(frozen=True)
class Topology:
    """Edge list of a (possibly pooled) skeleton; one feature channel per edge."""

    edges: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.edges)

    def joint_degrees(self) -> dict[int, int]:
        deg: dict[int, int] = {}
        for a, b in self.edges:
            for v in (a, b):
                if v >= 0:
                    deg[v] = deg.get(v, 0) + 1
        return deg

    def adjacency(self) -> list[list[int]]:
        by_joint: dict[int, list[int]] = {}
        for e, (a, b) in enumerate(self.edges):
            for v in (a, b):
                if v >= 0:
                    by_joint.setdefault(v, []).append(e)
        adj = [set() for _ in self.edges]
        for members in by_joint.values():
            for e in members:
                adj[e].update(m for m in members if m != e)
        return [sorted(s) for s in adj]

    @classmethod
    def chain(cls, n_bones: int) -> "Topology":
        return cls(tuple((i, i + 1) for i in range(n_bones)))


@dataclass(frozen=True)
class NeighborTable:
    sets: tuple[tuple[int, ...], ...]
    distance: int

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.sets[i]

    def __len__(self) -> int:
        return len(self.sets)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) index arrays for every bone i and neighbour j, in row-major order."""
        ii = [i for i, s in enumerate(self.sets) for _ in s]
        jj = [j for s in self.sets for j in s]
        return np.asarray(ii, dtype=np.int64), np.asarray(jj, dtype=np.int64)

    @property
    def n_pairs(self) -> int:
        return sum(len(s) for s in self.sets)


@dataclass(frozen=True)
class PoolingPlan:
    groups: tuple[tuple[int, ...], ...]
    source: Topology
    pooled: Topology

    @property
    def n_source(self) -> int:
        return len(self.source)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def pool_matrix(self, dtype=np.float32) -> np.ndarray:
        m = np.zeros((self.n_groups, self.n_source), dtype=dtype)
        for g, members in enumerate(self.groups):
            m[g, list(members)] = 1.0 / len(members)
        return m

    def unpool_matrix(self, dtype=np.float32) -> np.ndarray:
        m = np.zeros((self.n_source, self.n_groups), dtype=dtype)
        for g, members in enumerate(self.groups):
            m[list(members), g] = 1.0
        return m


def _as_topology(s: Skeleton | Topology) -> Topology:
    return s.topology() if isinstance(s, Skeleton) else s


def neighbors_within(skeleton: Skeleton | Topology, d: int) -> NeighborTable:
    """Bones reachable by crossing at most ``d`` bones (self included)."""
    if d < 0:
        raise ValueError(f"neighbour distance must be >= 0, got {d}")
    topo = _as_topology(skeleton)
    adj = topo.adjacency()
    sets = []
    for start in range(len(topo)):
        dist = {start: 0}
        queue = deque([start])
        while queue:
            e = queue.popleft()
            if dist[e] == d:
                continue
            for n in adj[e]:
                if n not in dist:
                    dist[n] = dist[e] + 1
                    queue.append(n)
        sets.append(tuple(sorted(dist)))
    return NeighborTable(tuple(sets), d)


def build_pooling_plan(skeleton: Skeleton | Topology) -> PoolingPlan:
    """Merge parent/child edge pairs that meet at a degree-2 joint, searching from the root."""
    topo = _as_topology(skeleton)
    deg = topo.joint_degrees()
    outgoing: dict[int, list[int]] = {}
    heads = set()
    for e, (a, b) in enumerate(topo.edges):
        outgoing.setdefault(a, []).append(e)
        heads.add(b)
    starts = [e for e, (a, _) in enumerate(topo.edges) if a < 0 or a not in heads]

    partner: dict[int, int] = {}
    stack = list(reversed(starts))
    while stack:
        e = stack.pop()
        child_joint = topo.edges[e][1]
        kids = outgoing.get(child_joint, [])
        if e not in partner and deg.get(child_joint, 0) == 2 and len(kids) == 1 and kids[0] not in partner:
            partner[e] = kids[0]
            partner[kids[0]] = e
        stack.extend(reversed(kids))

    groups, done = [], set()
    for e in range(len(topo)):
        if e in done:
            continue
        g = (e, partner[e]) if e in partner else (e,)
        groups.append(tuple(sorted(g)))
        done.update(g)
    pooled = []
    for g in groups:
        if len(g) == 1:
            pooled.append(topo.edges[g[0]])
        else:
            first, second = g
            pooled.append((topo.edges[first][0], topo.edges[second][1]))
    return PoolingPlan(tuple(groups), topo, Topology(tuple(pooled)))


def pack_pair_weights(pair_weights: Mapping[tuple[int, int], np.ndarray],
                      pair_biases: Mapping[tuple[int, int], np.ndarray],
                      neighbors: NeighborTable) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-(i, j) filters into the ``[n_pairs, ...]`` layout ``skeleton_conv`` takes."""
    ws, bs = [], []
    for i, j in zip(*neighbors.pairs()):
        key = (int(i), int(j))
        if key not in pair_weights or key not in pair_biases:
            raise KeyError(f"missing weight or bias for neighbour pair {key}")
        ws.append(np.asarray(pair_weights[key]))
        bs.append(np.asarray(pair_biases[key]))
    return np.stack(ws), np.stack(bs)


def _pair_scale(neighbors: NeighborTable, dtype) -> np.ndarray:
    return np.asarray([1.0 / len(neighbors[i]) for i in neighbors.pairs()[0]], dtype=dtype)


def init_pair_weights(rng: np.random.Generator, neighbors: NeighborTable, k: int, D: int, Dout: int,
                      dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Uniform init matching a dense layer of fan-in ``|N_i| * k * D``.

    The convolution averages over the neighbours of bone i, so the per-pair
    weights are drawn ``|N_i|`` times wider than the dense equivalent.
    """
    ii, _ = neighbors.pairs()
    sizes = np.asarray([len(neighbors[i]) for i in ii], dtype=np.float64)
    bound = np.sqrt(sizes / (k * D))
    w = rng.uniform(-1.0, 1.0, (len(ii), k, D, Dout)) * bound[:, None, None, None]
    b = rng.uniform(-1.0, 1.0, (len(ii), Dout)) * bound[:, None]
    return w.astype(dtype), b.astype(dtype)


def skeleton_conv(x: Tensor, weight: Tensor, bias: Tensor, neighbors: NeighborTable,
                  stride: int = 1) -> Tensor:
    """Neighbour-averaged temporal convolution.

    ``x`` is ``[..., T, J, D]``; ``weight`` is ``[n_pairs, k, D, D']`` and
    ``bias`` is ``[n_pairs, D']`` with pairs ordered as ``neighbors.pairs()``.
    Bone i receives the mean over its neighbours j of ``x_j * W_j^i + b_j^i``.
    """
    J = len(neighbors)
    P, k, D, Dout = weight.shape
    if P != neighbors.n_pairs:
        raise ValueError(f"expected weights for {neighbors.n_pairs} neighbour pairs, got {P}")
    if x.shape[-2] != J or x.shape[-1] != D:
        raise ValueError(f"input joints/channels {x.shape[-2:]} do not match ({J}, {D})")
    ii, jj = neighbors.pairs()
    scale = _pair_scale(neighbors, weight.dtype)

    w = weight * scale[:, None, None, None]
    dense = tc.scatter(w, ii * J + jj, J * J)                  # [J_out*J_in, k, D, D']
    dense = dense.reshape(J, J, k, D, Dout).transpose(2, 1, 3, 0, 4)
    dense = dense.reshape(k, J * D, J * Dout)
    b = tc.scatter(bias * scale[:, None], ii * J + jj, J * J).reshape(J, J, Dout).sum(axis=1)

    lead = x.shape[:-2]
    flat = x.reshape(lead + (J * D,))
    y = tc.conv1d_temporal(flat, dense, b.reshape(J * Dout), stride=stride, padding="same")
    return y.reshape(y.shape[:-1] + (J, Dout))


def skeleton_pool(F: Tensor, plan: PoolingPlan) -> Tensor:
    """Average features over each pooling group: ``[..., J, D] -> [..., m, D]``."""
    if F.shape[-2] != plan.n_source:
        raise ValueError(f"feature has {F.shape[-2]} bones, plan expects {plan.n_source}")
    return tc.matmul(Tensor(plan.pool_matrix(F.dtype)), F)


def skeleton_unpool(F: Tensor, plan: PoolingPlan) -> Tensor:
    """Copy each group's feature to all of its member bones: ``[..., m, D] -> [..., J, D]``."""
    if F.shape[-2] != plan.n_groups:
        raise ValueError(f"feature has {F.shape[-2]} groups, plan expects {plan.n_groups}")
    return tc.matmul(Tensor(plan.unpool_matrix(F.dtype)), F)


def pooling_hierarchy(skeleton: Skeleton | Topology, levels: int) -> list[PoolingPlan]:
    plans, topo = [], _as_topology(skeleton)
    for _ in range(levels):
        plan = build_pooling_plan(topo)
        plans.append(plan)
        topo = plan.pooled
    return plans


# -- presets ---------------------------------------------------------------------

SMPL_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
# approximate neutral-body offsets, metres
SMPL_OFFSETS = (
    (0.0, 0.0, 0.0), (0.07, -0.09, 0.0), (-0.07, -0.09, 0.0), (0.0, 0.11, -0.02),
    (0.04, -0.38, 0.0), (-0.04, -0.38, 0.0), (0.0, 0.13, 0.0), (-0.01, -0.40, -0.04),
    (0.01, -0.40, -0.04), (0.0, 0.05, 0.02), (0.04, -0.06, 0.12), (-0.04, -0.06, 0.12),
    (0.0, 0.21, -0.03), (0.08, 0.12, -0.02), (-0.08, 0.12, -0.02), (0.01, 0.09, 0.05),
    (0.12, 0.05, -0.01), (-0.12, 0.05, -0.01), (0.26, -0.01, -0.02), (-0.26, -0.01, -0.02),
    (0.25, 0.01, 0.0), (-0.25, 0.01, 0.0), (0.08, -0.01, -0.01), (-0.08, -0.01, -0.01),
)

TOY7_NAMES = ("root", "spine", "head", "left_upper_arm", "left_forearm", "right_upper_arm", "right_forearm")
TOY7_PARENTS = (-1, 0, 1, 1, 3, 1, 5)
TOY7_OFFSETS = (
    (0.0, 0.0, 0.0), (0.0, 0.3, 0.0), (0.0, 0.25, 0.0), (0.2, 0.2, 0.0),
    (0.28, 0.0, 0.0), (-0.2, 0.2, 0.0), (-0.28, 0.0, 0.0),
)


def smpl24() -> Skeleton:
    return Skeleton(SMPL_NAMES, SMPL_PARENTS, np.asarray(SMPL_OFFSETS))


def toy7() -> Skeleton:
    return Skeleton(TOY7_NAMES, TOY7_PARENTS, np.asarray(TOY7_OFFSETS))


def preset(name: str) -> Skeleton:
    presets = {"toy-7": toy7, "smpl-24": smpl24, "smpl-24-like": smpl24}
    if name not in presets:
        raise ValueError(f"unknown skeleton preset {name!r}; choose from {sorted(presets)}")
    return presets[name]()


def random_tree(n: int, rng: np.random.Generator) -> Skeleton:
    parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    return Skeleton([f"j{i}" for i in range(n)], parents, rng.normal(size=(n, 3)))

