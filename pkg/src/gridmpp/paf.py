"""Partition-and-flow routing with makespan proportional to the distance gap.

Pipeline for a grid whose sides are large compared to d_g:

1. cut the grid into cells of side at least ``2 d_g`` (wider on retry);
2. orient the flow (diagonal rerouting, then cancellation on each face);
3. decompose the skeleton circulation into unit circulations;
4. push the units through the cells in batches.  Every face owns a bundle
   of *lanes*, straight corridors of depth D perpendicular to the face.  A
   batch is one synchronous step: each active departure lane shifts toward
   its face, its front robot crosses into the aligned arrival lane of the
   neighbouring cell, and the robot leaving the inner end of an arrival lane
   walks a vertex-disjoint path (from a max-flow) through the cell interior
   to the inner end of a departure lane.  Up to D batches share one staging
   shuffle that parks the designated crossers at the front of their lanes;
5. finish every cell locally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import prod

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .flow import (
    CellPartition,
    OrientationError,
    UnitCirculation,
    decompose_circulation,
    diagonal_reroute,
    extract_circulation,
    fit_partition,
    flow_cancellation,
)
from .grid_core import GridSpec, Instance, Plan, Step
from .isag import Board, UnsolvableRegion, _table_steps, isag_solve, solve_leaves
from .oracle import MAX_ORACLE_VERTICES, block_table_or_none, bounded_search, perm_rank, pull_to_step
from .schedule import Timeline
from .shuffle import Box, route_boxes

MIN_CELL_FACTOR = 2


class CapacityError(AssertionError):
    """A batch could not be routed through some cell."""


@dataclass
class PafReport:
    branch: str = ""
    cell_side: int = 0
    units: int = 0
    batches: int = 0
    multibatches: int = 0
    stage_ends: dict = field(default_factory=dict)


# ------------------------------------------------------------ max-flow

def find_disjoint_paths_maxflow(shape, sources, sinks, blocked=()) -> list[list[int]]:
    """Vertex-disjoint paths joining ``sources`` to ``sinks`` inside a box.

    Vertices are local linear indices of ``GridSpec(shape)``.  Every vertex
    is split into an in-node and an out-node joined by a unit arc, and the
    flow comes from scipy's Dinic max-flow.  The number of returned paths is
    the max-flow value, so it may be smaller than ``len(sources)``.
    """
    grid = GridSpec(tuple(shape))
    V = grid.vertex_count
    srcs = [int(v) for v in sources]
    snks = [int(v) for v in sinks]
    if len(set(srcs)) != len(srcs) or len(set(snks)) != len(snks):
        raise ValueError("duplicate terminals")
    ok = np.ones(V, dtype=bool)
    ok[np.asarray(list(blocked), dtype=np.int64)] = False
    S, T = 2 * V, 2 * V + 1
    tails, heads = [], []
    for v in np.flatnonzero(ok):
        v = int(v)
        tails.append(2 * v)
        heads.append(2 * v + 1)
        for w in grid.neighbors(v):
            if ok[w]:
                tails.append(2 * v + 1)
                heads.append(2 * w)
    srcs = [v for v in srcs if ok[v]]
    snks = [v for v in snks if ok[v]]
    tails += [S] * len(srcs) + [2 * t + 1 for t in snks]
    heads += [2 * s for s in srcs] + [T] * len(snks)
    n = 2 * V + 2
    cap = csr_matrix((np.ones(len(tails), dtype=np.int32), (tails, heads)), shape=(n, n))
    res = maximum_flow(cap, S, T, method="dinic")
    used = res.flow.tocoo()
    succ = {}
    for u, w, f in zip(used.row, used.col, used.data):
        if f > 0 and u % 2 == 1 and u < 2 * V:
            succ[int(u) // 2] = T if w == T else int(w) // 2
    paths = []
    for s in srcs:
        if res.flow[S, 2 * s] <= 0:
            continue
        path = [s]
        while succ[path[-1]] != T:
            path.append(succ[path[-1]])
        paths.append(path)
    assert len(paths) == res.flow_value
    return paths


# ------------------------------------------------------------ d_g <= 1

# tiers of planar window sides: 2x3; tables up to nine vertices; searched up to twelve
WINDOW_TIERS = (((2, 3), (3, 2)),
                ((2, 4), (4, 2), (3, 3)),
                ((3, 4), (4, 3), (2, 5), (5, 2), (2, 6), (6, 2)))
DG1_BUDGET = 4


def _window_shapes(grid: GridSpec, tier: int) -> list[tuple[int, ...]]:
    """Window shapes of one tier; the cube 2x2x2 joins the table tier."""
    sides = WINDOW_TIERS[tier]
    out = []
    for a in range(grid.k):
        for b in range(a + 1, grid.k):
            for sa, sb in sides:
                if sa <= grid.dims[a] and sb <= grid.dims[b]:
                    shape = [1] * grid.k
                    shape[a], shape[b] = sa, sb
                    out.append(tuple(shape))
    if grid.k >= 3 and tier == 1:
        for axes in [(a, b, c) for a in range(grid.k) for b in range(a + 1, grid.k)
                     for c in range(b + 1, grid.k)]:
            if all(grid.dims[x] >= 2 for x in axes):
                shape = [1] * grid.k
                for x in axes:
                    shape[x] = 2
                out.append(tuple(shape))
    return out


def _windows_holding(grid: GridSpec, u: int, v: int, shapes) -> list[Box]:
    """Every in-bounds box of the given shapes that contains both u and v."""
    cu, cv = grid.coords(u), grid.coords(v)
    lo_pair, hi_pair = np.minimum(cu, cv), np.maximum(cu, cv)
    dims = np.asarray(grid.dims)
    out = []
    for shape in shapes:
        sh = np.asarray(shape)
        first = np.maximum(hi_pair - sh + 1, 0)
        last = np.minimum(lo_pair, dims - sh)
        if (first > last).any():
            continue
        for lo in np.ndindex(*(last - first + 1)):
            out.append(Box(tuple(int(x) for x in first + np.asarray(lo)), shape))
    return out


def _squeezed(shape) -> tuple[int, ...]:
    return tuple(s for s in shape if s > 1)


@dataclass(frozen=True)
class _Window:
    box: Box
    cells: np.ndarray
    swaps: frozenset
    absorbed: frozenset
    cost: int
    after_rotation: bool
    pulls: tuple = ()

    def target(self, comp_of, goal_at) -> np.ndarray:
        tv = self.cells.copy()
        for i, x in enumerate(self.cells):
            if comp_of[x] in self.swaps or comp_of[x] in self.absorbed:
                tv[i] = goal_at[x]
        return tv


def _evaluate_window(grid, box, comp_of, comps, goal_at) -> _Window | None:
    """Local cost of finishing every component that lies wholly inside ``box``.

    Components cut by the box are rotations that run first; their vertices
    are already settled when the window starts, so the window must then fit
    in one step less.  A cut swap disqualifies the box.
    """
    cells = box.vertices(grid).ravel()
    inside = set(cells.tolist())
    ids = {int(c) for c in comp_of[cells] if c >= 0}
    swaps, absorbed, cut = set(), set(), False
    for c in ids:
        whole = all(x in inside for x in comps[c])
        if len(comps[c]) == 2:
            if not whole:
                return None
            swaps.add(c)
        elif whole:
            absorbed.add(c)
        else:
            cut = True
    w = _Window(box, cells, frozenset(swaps), frozenset(absorbed), 0, cut)
    local = np.searchsorted(cells, w.target(comp_of, goal_at))
    shape = _squeezed(box.shape)
    limit = DG1_BUDGET - int(cut)
    if box.size <= MAX_ORACLE_VERTICES:
        tb = block_table_or_none(shape)
        if tb is None:
            return None
        cost = int(tb.dist[perm_rank(local[None])[0]])
        if cost > limit:
            return None
        return replace(w, cost=cost)
    pulls = bounded_search(shape, local, limit)
    if pulls is None:
        return None
    return replace(w, cost=len(pulls), pulls=tuple(pulls))


def _cover_cluster(swaps: list[int], cands: dict, limit: int = 20000) -> list[_Window] | None:
    """Disjoint windows covering every swap of a cluster exactly once (depth-first)."""
    order = sorted(swaps, key=lambda s: len(cands[s]))
    chosen: list[_Window] = []
    covered: set = set()
    used: set = set()
    budget = [limit]

    def dfs(i):
        while i < len(order) and order[i] in covered:
            i += 1
        if i == len(order):
            return True
        s = order[i]
        for w in cands[s]:
            budget[0] -= 1
            if budget[0] < 0:
                return False
            if w.swaps & covered or used & set(w.cells.tolist()):
                continue
            chosen.append(w)
            covered.update(w.swaps)
            used.update(w.cells.tolist())
            if dfs(i + 1):
                return True
            chosen.pop()
            covered.difference_update(w.swaps)
            used.difference_update(w.cells.tolist())
        return False

    return list(chosen) if dfs(0) else None


def _swap_clusters(grid: GridSpec, swaps, comps, reach: int = 3) -> list[list[int]]:
    """Group swaps whose windows could collide (endpoints within ``reach``)."""
    pts = np.array([grid.coords(comps[s][0]) for s in swaps]).reshape(len(swaps), grid.k)
    parent = list(range(len(swaps)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(swaps)):
        near = np.flatnonzero(np.abs(pts[i + 1:] - pts[i]).max(axis=1) <= reach) + i + 1
        for j in near:
            parent[find(int(j))] = find(i)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(swaps):
        groups.setdefault(find(i), []).append(s)
    return list(groups.values())


def solve_dg1(instance: Instance) -> Plan:
    """Plans for distance gap at most one, normally within four steps.

    Displacement cycles of length three or more are single rotations.  Every
    adjacent transposition is placed in a small window whose optimal local
    plan comes from a table (up to nine vertices) or from a depth-bounded
    search (up to twelve, tried only for crowded clusters); nearby swaps may
    share a window, and rotations lying wholly inside a window are folded
    into its local permutation.  Windows are vertex-disjoint and run in
    parallel with the remaining rotations.  When no such covering exists the
    swaps fall back to rounds of 2x3 windows.
    """
    if instance.distance_gap > 1:
        raise ValueError("solve_dg1 needs distance gap <= 1")
    grid = instance.grid
    if not instance.is_full():
        raise ValueError("solve_dg1 needs a fully occupied instance")
    V = grid.vertex_count
    goal_at = instance.goal_of_vertex()
    comps = _displacement_cycles(goal_at)
    comp_of = np.full(V, -1, dtype=np.int64)
    for i, c in enumerate(comps):
        comp_of[c] = i
    swaps = [i for i, c in enumerate(comps) if len(c) == 2]
    windows: list[_Window] = []
    if swaps:
        for cluster in _swap_clusters(grid, swaps, comps):
            found = None
            for tier in range(len(WINDOW_TIERS)):
                shapes = _window_shapes(grid, tier)
                cands = {}
                for s in cluster:
                    ws = [_evaluate_window(grid, b, comp_of, comps, goal_at)
                          for b in _windows_holding(grid, *comps[s], shapes)]
                    cands[s] = sorted((w for w in ws if w is not None),
                                      key=lambda w: (w.cost + w.after_rotation, w.cells.size))
                if all(cands.values()):
                    found = _cover_cluster(cluster, cands)
                if found is not None:
                    break
            if found is None:
                return _dg1_rounds(instance, comps)
            windows.extend(found)
    absorbed = {c for w in windows for c in w.absorbed}
    tl = Timeline(V)
    rotations = [comps[i] for i, c in enumerate(comps) if len(c) > 2 and i not in absorbed]
    if rotations:
        tl.add_steps([Step.from_cycles(rotations)])
    groups: dict[tuple, list] = {}
    for w in windows:
        if w.pulls:
            tl.add_steps([pull_to_step(p, w.cells) for p in w.pulls], w.cells)
        else:
            groups.setdefault(_squeezed(w.box.shape), []).append(
                (w.cells, w.target(comp_of, goal_at)))
    for shape, members in groups.items():
        _table_steps(shape, members, tl)
    return tl.plan()


def _displacement_cycles(goal_at: np.ndarray) -> list[list[int]]:
    V = goal_at.size
    seen = np.zeros(V, dtype=bool)
    out = []
    for v in range(V):
        if seen[v] or goal_at[v] == v:
            seen[v] = True
            continue
        cyc = [v]
        seen[v] = True
        w = int(goal_at[v])
        while w != v:
            cyc.append(w)
            seen[w] = True
            w = int(goal_at[w])
        out.append(cyc)
    return out


def _dg1_rounds(instance: Instance, comps) -> Plan:
    """Rotations in one step, then rounds of disjoint three-step 2x3 windows."""
    grid = instance.grid
    V = grid.vertex_count
    shapes = _window_shapes(grid, 0)
    pending = [tuple(c) for c in comps if len(c) == 2]
    cycles = [c for c in comps if len(c) > 2]
    rounds = []
    while pending:
        used = np.zeros(V, dtype=bool)
        chosen, left = [], []
        cands = {i: [b for b in _windows_holding(grid, *sw, shapes)
                     if _swap_cost(grid, b, *sw) <= 3] for i, sw in enumerate(pending)}
        if any(not c for c in cands.values()):
            return _fallback(instance)
        order = sorted(range(len(pending)), key=lambda i: (len(cands[i]), i))
        for i in order:
            pick = None
            for b in cands[i]:
                cells = b.vertices(grid).ravel()
                if not used[cells].any():
                    pick = b
                    break
            if pick is None:
                left.append(pending[i])
                continue
            used[pick.vertices(grid).ravel()] = True
            chosen.append((pick, pending[i]))
        rounds.append(chosen)
        pending = left
    tl = Timeline(V)
    if cycles:
        tl.add_steps([Step.from_cycles(cycles)])
    for chosen in rounds:
        groups: dict[tuple, list] = {}
        for box, (u, v) in chosen:
            cells = box.vertices(grid).ravel()
            tv = cells.copy()
            iu, iv = np.searchsorted(cells, [u, v])
            tv[iu], tv[iv] = v, u
            groups.setdefault(_squeezed(box.shape), []).append((cells, tv))
        for shape, members in groups.items():
            _table_steps(shape, members, tl)
    return tl.plan()


def _swap_cost(grid: GridSpec, box: Box, u: int, v: int) -> int:
    tb = block_table_or_none(_squeezed(box.shape))
    cells = box.vertices(grid).ravel()
    lab = np.arange(cells.size)
    iu, iv = np.searchsorted(cells, [u, v])
    lab[iu], lab[iv] = iv, iu
    return int(tb.dist[perm_rank(lab[None])[0]])


def _fallback(instance: Instance) -> Plan:
    return isag_solve(instance)


# ------------------------------------------------------------ slab case

def _slab_cuts(m: int, width: int) -> list[int]:
    q = max(1, m // max(1, width))
    return [int(round(i * m / q)) for i in range(q + 1)]


def solve_special(instance: Instance, axis: int | None = None, report: PafReport | None = None) -> Plan:
    """Slabs of width >= d_g along the longest axis; two rounds of pair solves.

    Round one solves slab pairs (0,1), (2,3), ...: robots finishing in the pair
    get exact goals, robots bound for a slab outside keep to their own slab.
    Round two solves pairs (1,2), (3,4), ... exactly.
    """
    grid = instance.grid
    dg = max(1, instance.distance_gap)
    if axis is None:
        axis = int(np.argmax(grid.dims))
    cuts = _slab_cuts(grid.dims[axis], dg)
    q = len(cuts) - 1
    board = Board.from_instance(instance)
    tl = Timeline(grid.vertex_count)

    def union(i, j):
        lo = [0] * grid.k
        shape = list(grid.dims)
        lo[axis] = cuts[i]
        shape[axis] = cuts[j + 1] - cuts[i]
        return Box(tuple(lo), tuple(shape))

    slab_of = np.searchsorted(np.asarray(cuts), np.arange(grid.dims[axis]), side="right") - 1
    # crossing symmetry on every cut
    pos = np.empty(grid.vertex_count, dtype=np.int64)
    pos[board.occ] = np.arange(grid.vertex_count)
    sp = slab_of[grid.coords(pos)[:, axis]]
    sg = slab_of[grid.coords(board.goal)[:, axis]]
    if np.abs(sp - sg).max(initial=0) > 1:
        raise OrientationError("slab narrower than the distance gap")
    for c in range(q - 1):
        up = int(((sp == c) & (sg == c + 1)).sum())
        down = int(((sp == c + 1) & (sg == c)).sum())
        assert up == down, "crossing counts differ on a slab cut"

    items = []
    for i in range(0, q - 1, 2):
        box = union(i, i + 1)
        V = box.vertices(grid)
        robots = board.occ[V.ravel()]
        goals = board.goal[robots]
        gs = slab_of[grid.coords(goals)[:, axis]]
        inside = (gs == i) | (gs == i + 1)
        tv = np.empty(V.size, dtype=np.int64)
        tv[inside] = goals[inside]
        free = np.setdiff1d(V.ravel(), goals[inside])
        free_slab = slab_of[grid.coords(free)[:, axis]]
        cur_slab = slab_of[grid.coords(V.ravel())[:, axis]]
        for s in (i, i + 1):
            who = np.flatnonzero(~inside & (cur_slab == s))
            spots = free[free_slab == s]
            assert len(who) == len(spots)
            tv[who] = spots
        items.append((box, tv.reshape(V.shape)))
    _solve_boxes(board, items, tl)
    boxes = [union(0, 0)] + [union(i, min(i + 1, q - 1)) for i in range(1, q, 2)]
    solve_leaves(board, _disjoint(boxes, grid), tl)
    if report is not None:
        report.branch = "special"
    return tl.plan()


def _disjoint(boxes, grid):
    seen = np.zeros(grid.vertex_count, dtype=bool)
    out = []
    for b in boxes:
        cells = b.vertices(grid).ravel()
        if seen[cells].any():
            continue
        seen[cells] = True
        out.append(b)
    return out


def _solve_boxes(board: Board, items, tl: Timeline) -> None:
    """Route explicit target maps inside disjoint boxes (tables for tiny boxes)."""
    grid = board.grid
    routed, tables = [], {}
    for box, tv in items:
        V = box.vertices(grid)
        if np.array_equal(V, tv):
            continue
        if box.size <= 9 and block_table_or_none(box.shape) is not None:
            tables.setdefault(box.shape, []).append((V, tv))
        else:
            routed.append((box, tv))
    route_boxes(grid, routed, tl, variants=True)
    for s, m in tables.items():
        _table_steps(s, m, tl)
    for box, tv in items:
        board.move(box.vertices(grid), tv)


# ------------------------------------------------------------ lanes

@dataclass(frozen=True)
class CellGeometry:
    """Lanes of one cell shape.

    ``lanes[f]`` is an array (w_f, D) of local vertices for face ``f`` (index
    2*axis + side), depth 0 at the face; ``entry[f]`` (w_f,) is the interior
    vertex next to each lane's inner end.
    """

    shape: tuple[int, ...]
    depth: int
    faces: tuple[int, ...]
    lanes: dict
    entry: dict
    blocked: frozenset


@lru_cache(maxsize=None)
def cell_geometry(shape: tuple[int, ...], depth: int, cut_axes: tuple[int, ...]) -> CellGeometry:
    k = len(shape)
    g = GridSpec(shape)
    lanes, entry = {}, {}
    blocked = set()
    faces = []
    for a in cut_axes:
        others = [b for b in range(k) if b != a]
        ranges = []
        for b in others:
            m = depth if b in cut_axes else 0
            ranges.append(range(m, shape[b] - m))
        lateral = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(others), -1).T
        # central lanes first: edge lanes share entry cells with perpendicular faces
        mid = np.array([(shape[b] - 1) / 2 for b in others])
        spread = np.abs(lateral - mid).max(axis=1) if lateral.size else np.zeros(0)
        lateral = lateral[np.lexsort(tuple(lateral.T[::-1]) + (spread,))]
        if lateral.size == 0 or shape[a] <= 2 * depth + 1:
            raise CapacityError(f"cell {shape} too small for lanes of depth {depth}")
        for side in (0, 1):
            f = 2 * a + side
            faces.append(f)
            n = len(lateral)
            c = np.zeros((n, depth + 1, k), dtype=np.int64)
            for j, b in enumerate(others):
                c[:, :, b] = lateral[:, j][:, None]
            d = np.arange(depth + 1)
            c[:, :, a] = d if side == 0 else shape[a] - 1 - d
            idx = np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), shape)
            lanes[f] = idx[:, :depth]
            entry[f] = idx[:, depth]
            blocked.update(idx[:, :depth].ravel().tolist())
    del g
    return CellGeometry(tuple(shape), depth, tuple(faces), lanes, entry, frozenset(blocked))


@lru_cache(maxsize=None)
def _center_paths(shape, depth, cut_axes, counts):
    """Cached interior paths for signed per-face lane counts (+arrive, -depart)."""
    geo = cell_geometry(shape, depth, cut_axes)
    srcs, snks = [], []
    for f, n in zip(geo.faces, counts):
        if n > 0:
            srcs.extend(geo.entry[f][:n].tolist())
        elif n < 0:
            snks.extend(geo.entry[f][:-n].tolist())
    if len(srcs) != len(snks) or len(set(srcs)) < len(srcs) or len(set(snks)) < len(snks):
        return None
    if not srcs:
        return ()
    paths = find_disjoint_paths_maxflow(shape, srcs, snks, geo.blocked)
    if len(paths) < len(srcs):
        return None
    return tuple(tuple(p) for p in paths)


class Conveyor:
    """Batch packing and step generation for one partition."""

    def __init__(self, part: CellPartition, depth: int):
        self.part = part
        self.grid = part.grid
        self.depth = depth
        self.sk = part.skeleton_dims
        self.cut_axes = tuple(a for a in range(self.grid.k) if self.sk[a] >= 2)
        self.cells = part.cells()
        self.boxes = {c: part.cell_box(c) for c in self.cells}
        self.geo = {c: cell_geometry(self.boxes[c].shape, depth, self.cut_axes) for c in self.cells}

    def face_between(self, a_cell, b_cell) -> tuple[int, int]:
        """Face index on a's side and on b's side of the shared face."""
        d = np.asarray(b_cell) - np.asarray(a_cell)
        ax = int(np.flatnonzero(d)[0])
        if d[ax] > 0:
            return 2 * ax + 1, 2 * ax
        return 2 * ax, 2 * ax + 1

    def unit_usage(self, unit):
        """Per-cell signed face deltas of one unit circulation."""
        use: dict[tuple, dict[int, int]] = {}
        for u, v in unit.edges():
            A = tuple(int(x) for x in np.unravel_index(u, self.sk))
            B = tuple(int(x) for x in np.unravel_index(v, self.sk))
            fa, fb = self.face_between(A, B)
            use.setdefault(A, {})[fa] = -1
            use.setdefault(B, {})[fb] = 1
        return use

    def counts_key(self, cell, faces: dict[int, int]):
        geo = self.geo[cell]
        return tuple(faces.get(f, 0) for f in geo.faces)

    def feasible(self, cell, faces) -> bool:
        geo = self.geo[cell]
        for f, n in faces.items():
            if abs(n) > len(geo.lanes[f]):
                return False
        return _center_paths(self.boxes[cell].shape, self.depth, self.cut_axes,
                             self.counts_key(cell, faces)) is not None

    def pack(self, units, tries: int = 6) -> list[dict]:
        """Fewest batches found by first-fit over several unit orders.

        Orders tried: as given, largest first, smallest first, then seeded
        shuffles.
        """
        # cycles of one unit are independent items: batches only add face counts
        units = [UnitCirculation((tuple(cyc),)) for u in units for cyc in u.cycles]
        sizes = [len(u.edges()) for u in units]
        orders = [list(range(len(units))),
                  sorted(range(len(units)), key=lambda i: (-sizes[i], i)),
                  sorted(range(len(units)), key=lambda i: (sizes[i], i))]
        rng = np.random.default_rng(0)
        while len(orders) < tries:
            orders.append(rng.permutation(len(units)).tolist())
        best = None
        for order in orders:
            batches = self._first_fit([units[i] for i in order])
            if best is None or len(batches) < len(best):
                best = batches
        return best if best is not None else []

    def _first_fit(self, units) -> list[dict]:
        batches: list[dict] = []
        for unit in units:
            use = self.unit_usage(unit)
            placed = False
            for bt in batches:
                trial = {}
                ok = True
                for cell, fd in use.items():
                    cur = dict(bt.get(cell, {}))
                    for f, s in fd.items():
                        cur[f] = cur.get(f, 0) + s
                    if not self.feasible(cell, cur):
                        ok = False
                        break
                    trial[cell] = cur
                if ok:
                    bt.update(trial)
                    placed = True
                    break
            if not placed:
                fresh = {cell: dict(fd) for cell, fd in use.items()}
                if not all(self.feasible(c, fd) for c, fd in fresh.items()):
                    raise CapacityError("a single unit circulation does not fit a cell")
                batches.append(fresh)
        return batches

    # -------------------------------------------------------- staging

    def stage(self, board: Board, batches, tl: Timeline) -> None:
        """Park designated crossers at the front of their departure lanes."""
        grid = self.grid
        pos = np.empty(grid.vertex_count, dtype=np.int64)
        pos[board.occ] = np.arange(grid.vertex_count)
        items = []
        for cell in self.cells:
            geo = self.geo[cell]
            box = self.boxes[cell]
            V = box.vertices(grid).ravel()
            robots = board.occ[V]
            gcell = self.part.cell_coords(grid.coords(board.goal[robots]))
            depart = [f for f in geo.faces
                      if any(bt.get(cell, {}).get(f, 0) < 0 for bt in batches)]
            if not depart:
                continue
            slot_cells, slot_robots = [], []
            for f in depart:
                ax, side = divmod(f, 2)
                nb = list(cell)
                nb[ax] += 1 if side else -1
                n_j = [-bt.get(cell, {}).get(f, 0) for bt in batches]
                usage = [sum(1 for n in n_j if n > lane) for lane in range(len(geo.lanes[f]))]
                slots = [(d, lane) for lane, u in enumerate(usage) for d in range(u)]
                slots.sort()
                cand = np.flatnonzero((gcell == np.asarray(nb)).all(axis=1))
                coords = grid.coords(V[cand]) - np.asarray(box.lo)
                dist = coords[:, ax] if side == 0 else box.shape[ax] - 1 - coords[:, ax]
                order = cand[np.lexsort((cand, dist))]
                if len(order) < len(slots):
                    raise CapacityError("not enough crossers for the staged lanes")
                for (d, lane), li in zip(slots, order):
                    slot_cells.append(int(geo.lanes[f][lane, d]))
                    slot_robots.append(int(li))
            tv_local = np.arange(V.size)
            chosen = np.zeros(V.size, dtype=bool)
            chosen[slot_robots] = True
            is_slot = np.zeros(V.size, dtype=bool)
            is_slot[slot_cells] = True
            tv_local[slot_robots] = slot_cells
            stay = ~chosen & ~is_slot
            movers = np.flatnonzero(~chosen & is_slot)
            holes = np.setdiff1d(np.arange(V.size), np.concatenate(
                [np.asarray(slot_cells, dtype=np.int64), np.flatnonzero(stay)]))
            tv_local[movers] = holes
            tv = V[tv_local].reshape(box.shape)
            items.append((box, tv))
        del pos
        _solve_boxes(board, items, tl)

    def batch_step(self, board: Board, bt) -> Step:
        """One synchronous step realizing a packed batch."""
        grid = self.grid
        srcs, dsts = [], []
        for cell, faces in bt.items():
            geo = self.geo[cell]
            box = self.boxes[cell]
            V = box.vertices(grid).ravel()
            key = self.counts_key(cell, faces)
            paths = _center_paths(box.shape, self.depth, self.cut_axes, key)
            end_of = {}
            start_of = {}
            for p in paths:
                start_of[p[0]] = p
                end_of[p[-1]] = p
            for f, n in faces.items():
                lanes = geo.lanes[f]
                for lane in range(abs(n)):
                    cells_l = lanes[lane]
                    ent = int(geo.entry[f][lane])
                    if n < 0:
                        # departure: entry -> inner end -> ... -> face -> neighbour
                        chain = [ent] + cells_l[::-1].tolist()
                        for x, y in zip(chain[:-1], chain[1:]):
                            srcs.append(V[x])
                            dsts.append(V[y])
                        ax, side = divmod(f, 2)
                        nb = list(cell)
                        nb[ax] += 1 if side else -1
                        nb = tuple(nb)
                        nbox = self.boxes[nb]
                        nV = nbox.vertices(grid).ravel()
                        ngeo = self.geo[nb]
                        nf = f ^ 1
                        srcs.append(V[cells_l[0]])
                        dsts.append(nV[ngeo.lanes[nf][lane, 0]])
                    else:
                        chain = cells_l.tolist() + [ent]
                        for x, y in zip(chain[:-1], chain[1:]):
                            srcs.append(V[x])
                            dsts.append(V[y])
            for p in paths:
                for x, y in zip(p[:-1], p[1:]):
                    srcs.append(V[x])
                    dsts.append(V[y])
        step = Step(np.asarray(srcs), np.asarray(dsts))
        board.move(step.src, step.dst)
        return step

    def run(self, board: Board, units, tl: Timeline, report: PafReport | None = None) -> None:
        batches = self.pack(units)
        groups = [batches[i:i + self.depth] for i in range(0, len(batches), self.depth)]
        for grp in groups:
            self.stage(board, grp, tl)
            for bt in grp:
                # each robot cycle of the batch starts once its own vertices are free
                for cyc in self.batch_step(board, bt).cycles():
                    tl.add_steps([Step.from_cycles([cyc])], cyc)
        if report is not None:
            report.batches = len(batches)
            report.multibatches = len(groups)


# ------------------------------------------------------------ main pipeline

def _main_case(instance: Instance, min_side: int, report: PafReport) -> Plan:
    grid = instance.grid
    dg = max(1, instance.distance_gap)
    cut = [a for a in range(grid.k) if grid.dims[a] >= 2 * min_side]
    part = fit_partition(grid, min_side, axes=cut)
    board = Board.from_instance(instance)
    tl = Timeline(grid.vertex_count)
    s = part.cell_side
    depth = max(1, s // (2 * grid.k))
    ends = {}
    diagonal_reroute(board, part, dg, tl)
    ends["reroute"] = tl.horizon
    flow_cancellation(board, part, dg, tl)
    ends["cancel"] = tl.horizon
    circ = extract_circulation(board, part)
    if not circ.is_oriented():
        raise OrientationError("flow is still bidirectional")
    units = decompose_circulation(circ)
    conv = Conveyor(part, depth)
    conv.run(board, units, tl, report)
    ends["route"] = tl.horizon
    solve_leaves(board, [part.cell_box(c) for c in part.cells()], tl, variants=True)
    ends["finish"] = tl.horizon
    if not np.array_equal(board.goal[board.occ], np.arange(grid.vertex_count)):
        raise AssertionError("robots not on goals after partition-and-flow")
    report.branch = "main"
    report.cell_side = s
    report.units = len(units)
    report.stage_ends = ends
    return tl.plan()


def paf_branch(dims, dg: int) -> str:
    """Which strategy paf_solve uses for a grid shape and distance gap."""
    if dg <= 1:
        return "dg1"
    if len(dims) not in (2, 3):
        return "isag"
    ms = sorted(dims, reverse=True)
    s = MIN_CELL_FACTOR * dg
    if ms[0] < 2 * s:
        return "isag"
    if ms[1] < 2 * s:
        return "special"
    return "main"


def paf_solve(instance: Instance, report: PafReport | None = None) -> Plan:
    """Partition-and-flow for 2-D and 3-D grids, with the small-case dispatch."""
    report = report if report is not None else PafReport()
    dg = instance.distance_gap
    branch = paf_branch(instance.grid.dims, dg)
    if branch == "dg1":
        report.branch = "dg1"
        return solve_dg1(instance)
    if branch == "isag":
        report.branch = "isag"
        return isag_solve(instance)
    if branch == "special":
        try:
            return solve_special(instance, report=report)
        except (OrientationError, CapacityError, UnsolvableRegion):
            report.branch = "isag"
            return isag_solve(instance)
    for factor in (MIN_CELL_FACTOR, 3, 4, 6):
        if max(instance.grid.dims) < 2 * factor * dg:
            break
        try:
            return _main_case(instance, factor * dg, report)
        except (OrientationError, CapacityError, UnsolvableRegion):
            continue
    report.branch = "isag"
    return isag_solve(instance)


def paf_solve_2d(instance: Instance, report: PafReport | None = None) -> Plan:
    if instance.grid.k != 2:
        raise ValueError("paf_solve_2d needs a 2-D grid")
    return paf_solve(instance, report)


def paf_solve_3d(instance: Instance, report: PafReport | None = None) -> Plan:
    if instance.grid.k != 3:
        raise ValueError("paf_solve_3d needs a 3-D grid")
    return paf_solve(instance, report)
