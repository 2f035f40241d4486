"""Matching-based reconfiguration of robots inside axis-aligned boxes.

Labeled routing in a box uses the column scheme: pick the shortest axis A,
view the box as columns (lines along A), decompose the column-to-column
multigraph into perfect matchings, send matching i to layer i, route every
layer recursively in parallel, then permute along A once more.  A k-D box
therefore needs 2k-1 line phases.  An unlabeled group shuffle first assigns
goals in scan order and then routes the resulting permutation.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .grid_core import GridSpec, Plan, Step
from .line_primitives import UnsupportedRegion, sort_strips
from .matching import BipartiteMultigraph, matching_labels
from .schedule import Timeline


@dataclass(frozen=True)
class Box:
    lo: tuple[int, ...]
    shape: tuple[int, ...]

    @classmethod
    def whole(cls, grid: GridSpec) -> "Box":
        return cls((0,) * grid.k, tuple(grid.dims))

    @property
    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(l, l + s) for l, s in zip(self.lo, self.shape))

    @property
    def size(self) -> int:
        return prod(self.shape)

    def vertices(self, grid: GridSpec) -> np.ndarray:
        return grid.index_array[self.slices].astype(np.int64)

    def contains(self, coords) -> np.ndarray:
        c = np.asarray(coords)
        lo = np.asarray(self.lo)
        return ((c >= lo) & (c < lo + np.asarray(self.shape))).all(axis=-1)


def is_routable(shape) -> bool:
    """Whether arbitrary permutations of a box can be routed by line phases."""
    eff = [m for m in shape if m >= 2]
    return len(eff) >= 2 and max(eff) >= 3


# ------------------------------------------------------------ phase executor

def _partner_axis(shape, a: int, need: int) -> int:
    cands = [b for b in range(len(shape)) if b != a and shape[b] >= need]
    if not cands:
        raise UnsupportedRegion(f"box {tuple(shape)} has no helper axis for axis {a}")
    return min(cands, key=lambda b: (shape[b] % 2, -shape[b], b))


def phase_waves(G: np.ndarray, dest: np.ndarray, a: int):
    """Strip jobs permuting every line along axis ``a`` of a batch of boxes.

    ``G`` and ``dest`` have shape (batch, *box_shape); ``dest`` holds the
    coordinate along ``a`` that the robot on each cell must reach.
    Returns a list of waves; each wave is ``(verts, keys)`` for sort_strips.
    """
    shape = G.shape[1:]
    la = shape[a]
    coord = np.arange(la).reshape([1] + [la if i == a else 1 for i in range(len(shape))])
    if la == 1 or np.array_equal(dest, np.broadcast_to(coord, dest.shape)):
        return []
    if la >= 3:
        b = _partner_axis(shape, a, 2)
        lb = shape[b]
        Gm = np.moveaxis(G, [b + 1, a + 1], [-2, -1]).reshape(-1, lb, la)
        Dm = np.moveaxis(dest, [b + 1, a + 1], [-2, -1]).reshape(-1, lb, la)
        p = lb // 2
        V1 = Gm[:, : 2 * p].reshape(-1, p, 2, la).transpose(0, 1, 3, 2).reshape(-1, la, 2)
        D1 = Dm[:, : 2 * p].reshape(-1, p, 2, la).transpose(0, 1, 3, 2).reshape(-1, la, 2)
        waves = [(V1, 2 * D1 + np.array([0, 1]))]
        if lb % 2:
            V2 = np.stack([Gm[:, lb - 1], Gm[:, lb - 2]], axis=-1)
            ident = np.broadcast_to(2 * np.arange(la) + 1, (len(Gm), la))
            waves.append((V2, np.stack([2 * Dm[:, lb - 1], ident], axis=-1)))
        return waves
    b = _partner_axis(shape, a, 3)
    lb = shape[b]
    Gm = np.moveaxis(G, [b + 1, a + 1], [-2, -1]).reshape(-1, lb, 2)
    Dm = np.moveaxis(dest, [b + 1, a + 1], [-2, -1]).reshape(-1, lb, 2)
    return [(Gm, 2 * np.arange(lb)[None, :, None] + Dm)]


def run_waves(wave_lists, tl: Timeline, offset: int = 0) -> None:
    """Issue concurrent jobs; wave i of every job is issued before wave i+1."""
    depth = max((len(w) for w in wave_lists), default=0)
    for i in range(depth):
        by_len: dict[int, list] = {}
        for w in wave_lists:
            if i < len(w):
                V, K = w[i]
                if len(V):
                    by_len.setdefault(V.shape[1], []).append((V, K))
        for L, jobs in by_len.items():
            V = np.concatenate([j[0] for j in jobs])
            K = np.concatenate([j[1] for j in jobs])
            live = ~(K.reshape(len(K), -1) == np.arange(2 * L)).all(axis=1)
            if live.any():
                sort_strips(V[live], K[live], tl, offset=offset)


# ------------------------------------------------------------ labeled routing

def plan_phases(targets: np.ndarray, first: int | None = None) -> list[tuple[int, np.ndarray]]:
    """Line phases routing a batch of box permutations.

    ``targets`` has shape (batch, *box_shape, k): the box-local target
    coordinates of the robot on each cell.  Returns ``(axis, dest)`` pairs,
    where ``dest`` (batch, *box_shape) gives the coordinate along ``axis``
    for the robot occupying each cell when the phase starts.  ``first``
    overrides the outer axis A (default: the shortest side).
    """
    T = np.asarray(targets, dtype=np.int64)
    B = T.shape[0]
    dims = T.shape[1:-1]
    kd = len(dims)
    eff = [i for i in range(kd) if dims[i] >= 2]
    if not eff:
        return []
    if len(eff) == 1:
        return [(eff[0], T[..., eff[0]])]
    A = first if first in eff else min(eff, key=lambda i: (dims[i], i))
    la = dims[A]
    other = [i for i in range(kd) if i != A]
    odims = tuple(dims[i] for i in other)
    ncol = prod(odims)
    Tm = np.moveaxis(T, 1 + A, 1).reshape(B, la, ncol, kd)
    tgt_col = np.ravel_multi_index(tuple(np.moveaxis(Tm[..., other], -1, 0)), odims)
    src_col = np.broadcast_to(np.arange(ncol), (la, ncol)).ravel()
    # one block-diagonal multigraph: its perfect matchings restrict to every box
    off = (np.arange(B) * ncol)[:, None]
    edges = np.stack([(src_col[None, :] + off).ravel(), (tgt_col.reshape(B, -1) + off).ravel()], axis=1)
    layer = matching_labels(BipartiteMultigraph(B * ncol, B * ncol, edges)).reshape(B, la, ncol)

    def unflat(x):  # (B, la, ncol) -> (B, *dims)
        return np.moveaxis(x.reshape((B, la) + odims), 1, 1 + A)

    phases = [(A, unflat(layer))]
    T1 = np.empty_like(Tm)
    np.put_along_axis(T1, np.repeat(layer[..., None], kd, axis=-1), Tm, axis=1)
    sub_t = T1[..., other].reshape((B * la,) + odims + (kd - 1,))
    for ax, dest in plan_phases(sub_t):
        phases.append((other[ax], unflat(dest.reshape(B, la, ncol))))
    tcol1 = np.ravel_multi_index(tuple(np.moveaxis(T1[..., other], -1, 0)), odims)
    T2 = np.empty_like(T1)
    np.put_along_axis(T2, np.repeat(tcol1[..., None], kd, axis=-1), T1, axis=2)
    phases.append((A, unflat(T2[..., A])))
    return phases


def trim_box(grid: GridSpec, box: Box, moving) -> Box:
    """Smallest routable sub-box of ``box`` holding the ``moving`` vertices.

    Sides are grown to even length where the box allows, since odd sides
    need an extra wave per line phase.
    """
    c = grid.coords(np.asarray(moving, dtype=np.int64).ravel())
    lo = c.min(axis=0)
    hi = c.max(axis=0) + 1
    blo = np.asarray(box.lo)
    bhi = blo + np.asarray(box.shape)

    def grow(a: int) -> bool:
        if hi[a] < bhi[a]:
            hi[a] += 1
        elif lo[a] > blo[a]:
            lo[a] -= 1
        else:
            return False
        return True

    for a in range(grid.k):
        if hi[a] - lo[a] < 2:
            grow(a)
    while not is_routable(tuple(hi - lo)):
        a = max(range(grid.k), key=lambda i: (bhi[i] - blo[i] > hi[i] - lo[i], hi[i] - lo[i]))
        if not grow(a):
            return box
    for a in range(grid.k):
        if (hi[a] - lo[a]) % 2:
            grow(a)
    return Box(tuple(int(x) for x in lo), tuple(int(x) for x in hi - lo))


def route_boxes(grid: GridSpec, items, tl: Timeline | None = None,
                variants: bool = False) -> list[Step] | None:
    """Route permutations inside disjoint boxes.

    ``items`` is a list of ``(box, target_vertex)`` where ``target_vertex``
    (box.shape) names the global target vertex of the robot on each cell.
    Each box is first trimmed to the part that actually moves.  Boxes of
    equal shape share vectorized phase execution.  With ``variants`` every
    box is dry-run under each choice of outer axis and first tiling, and
    the variant finishing earliest is kept.  Moves go to ``tl``; without a
    timeline the compacted steps are returned.
    """
    own = tl is None
    if own:
        tl = Timeline(grid.vertex_count)
    groups: dict[tuple, list] = {}
    for box, tv in items:
        tv = np.asarray(tv, dtype=np.int64)
        if tv.size == 0:
            continue
        V = box.vertices(grid)
        moving = tv != V
        if not moving.any():
            continue
        if not is_routable(box.shape):
            raise UnsupportedRegion(f"box shape {box.shape} cannot route permutations")
        sub = trim_box(grid, box, V[moving])
        if sub != box:
            tv = tv[tuple(slice(l - b0, l - b0 + n) for l, b0, n in zip(sub.lo, box.lo, sub.shape))]
            box = sub
        groups.setdefault(box.shape, []).append((box, tv))
    for shape, members in groups.items():
        G = np.stack([b.vertices(grid) for b, _ in members])
        T = np.stack([grid.coords(tv) - np.asarray(b.lo) for b, tv in members])
        if not variants:
            _route_group(G, plan_phases(T), tl, 0)
            continue
        eff = [i for i in range(len(shape)) if shape[i] >= 2]
        opts = [(plan_phases(T, a), off) for a in eff for off in (0, 1)]
        ends = []
        for phases, offset in opts:
            trial = Timeline(0)
            trial.ready = tl.ready.copy()
            _route_group(G, phases, trial, offset)
            ends.append(trial.ready[G.reshape(len(G), -1)].max(axis=1))
        pick = np.argmin(np.stack(ends), axis=0)
        for j, (phases, offset) in enumerate(opts):
            sel = np.flatnonzero(pick == j)
            if sel.size:
                _route_group(G[sel], [(ax, d[sel]) for ax, d in phases], tl, offset)
    return tl.steps() if own else None


def _route_group(G, phases, tl: Timeline, offset: int) -> None:
    for axis, dest in phases:
        run_waves([phase_waves(G, dest, axis)], tl, offset)


def route_permutation(grid: GridSpec, box: Box, target_vertex) -> Plan:
    """Plan routing the robots of one box to the given target vertices."""
    return Plan(route_boxes(grid, [(box, target_vertex)]))


# ------------------------------------------------------------ unlabeled shuffle

@dataclass(frozen=True)
class GroupReconfigTask:
    grid: GridSpec
    region: Box
    sources: tuple[int, ...]
    targets: tuple[int, ...]

    def __post_init__(self):
        if len(self.sources) != len(self.targets):
            raise ValueError("sources and targets differ in size")
        if len(set(self.sources)) != len(self.sources) or len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate vertices in task")
        for v in tuple(self.sources) + tuple(self.targets):
            if not self.region.contains(self.grid.coords(v)):
                raise ValueError(f"vertex {v} outside the region")


def assign_group_targets(task: GroupReconfigTask) -> np.ndarray:
    """Target vertex per region cell: group and complement each matched in scan order."""
    V = task.region.vertices(task.grid).ravel()
    group = np.zeros(task.grid.vertex_count, dtype=bool)
    dest_mark = np.zeros(task.grid.vertex_count, dtype=bool)
    group[list(task.sources)] = True
    dest_mark[list(task.targets)] = True
    src_in = V[group[V]]
    tgt_in = V[dest_mark[V]]
    src_out = V[~group[V]]
    tgt_out = V[~dest_mark[V]]
    tv = np.empty(task.grid.vertex_count, dtype=np.int64)
    tv[src_in] = tgt_in
    tv[src_out] = tgt_out
    return tv[V].reshape(task.region.shape)


def build_column_bipartite(task: GroupReconfigTask, axis: int | None = None,
                           group_only: bool = False) -> BipartiteMultigraph:
    """Source-column to target-column multigraph of the scan-order assignment.

    Columns are lines along ``axis`` (default: the shortest side).  With
    ``group_only`` the complement edges are omitted.
    """
    shape = task.region.shape
    if axis is None:
        eff = [i for i in range(len(shape)) if shape[i] >= 2] or [0]
        axis = min(eff, key=lambda i: (shape[i], i))
    other = [i for i in range(len(shape)) if i != axis]
    odims = tuple(shape[i] for i in other)
    tv = assign_group_targets(task)
    lo = np.asarray(task.region.lo)
    src_c = np.indices(shape).reshape(len(shape), -1).T
    tgt_c = task.grid.coords(tv.ravel()) - lo
    keep = np.ones(len(src_c), dtype=bool)
    if group_only:
        V = task.region.vertices(task.grid).ravel()
        keep = np.isin(V, np.asarray(task.sources))
    col = lambda c: np.ravel_multi_index(tuple(c[:, other].T), odims)
    edges = np.stack([col(src_c[keep]), col(tgt_c[keep])], axis=1)
    n = prod(odims)
    return BipartiteMultigraph(n, n, edges)


def shuffle_kd(task: GroupReconfigTask) -> Plan:
    """Move an unlabeled group onto its targets inside the region."""
    if set(task.sources) == set(task.targets):
        return Plan()
    eff = [m for m in task.region.shape if m >= 2]
    if len(eff) < 2:
        raise UnsupportedRegion("one-dimensional regions need rearrange_on_line")
    return route_permutation(task.grid, task.region, assign_group_targets(task))


def shuffle_2d(task: GroupReconfigTask) -> Plan:
    if task.grid.k != 2:
        raise ValueError("shuffle_2d needs a 2-D grid")
    return shuffle_kd(task)
