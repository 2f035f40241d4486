"""Divide-and-conquer labeled routing (improved split-and-group).

The grid is split in half along one axis at a time.  Grouping moves every
robot into the half holding its goal: a balancing shuffle in each half
brings the crossing robots next to the boundary, evenly spread over the
lines perpendicular to it, and one exchange phase along the split axis
trades them across.  All regions of a recursion level work in parallel.
Small leaves are finished from exact BFS tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_core import GridSpec, Instance, Plan, Step, permutation_instance
from .line_primitives import UnsupportedRegion
from .oracle import MAX_ORACLE_VERTICES, bfs_optimal_makespan, block_table_or_none, perm_rank
from .schedule import Timeline
from .shuffle import Box, is_routable, phase_waves, route_boxes, run_waves


class UnsolvableRegion(ValueError):
    """A region whose robots cannot be permuted as required."""


@dataclass
class Board:
    """Occupancy of a full grid: ``occ[v]`` is the robot on v, ``goal[r]`` its goal."""

    grid: GridSpec
    occ: np.ndarray
    goal: np.ndarray

    @classmethod
    def from_instance(cls, instance: Instance) -> "Board":
        if not instance.is_full():
            raise ValueError("board needs a fully occupied instance")
        occ = instance.start.occupancy(instance.grid.vertex_count).astype(np.int64)
        return cls(instance.grid, occ, instance.goal.assignment.astype(np.int64))

    def target_of_cells(self, box: Box) -> np.ndarray:
        return self.goal[self.occ[box.vertices(self.grid)]]

    def move(self, sources: np.ndarray, targets: np.ndarray) -> None:
        s = np.asarray(sources).ravel()
        robots = self.occ[s]
        self.occ[np.asarray(targets).ravel()] = robots


def split_axis_order(dims) -> list[int]:
    return sorted(range(len(dims)), key=lambda a: (-dims[a], a))


def choose_split(shape, order, pointer: int):
    """First splittable axis in round-robin order from ``pointer``; None at a leaf."""
    k = len(order)
    for i in range(k):
        idx = (pointer + i) % k
        a = order[idx]
        m = shape[a]
        if m < 4:
            continue
        lo = list(shape)
        hi = list(shape)
        lo[a] = m // 2
        hi[a] = m - m // 2
        if is_routable(lo) and is_routable(hi):
            return a, (idx + 1) % k
    return None


# ------------------------------------------------------------ grouping

def _halves(box: Box, a: int) -> tuple[Box, Box, int]:
    bd = box.shape[a] // 2
    s1 = list(box.shape)
    s1[a] = bd
    s2 = list(box.shape)
    s2[a] = box.shape[a] - bd
    lo2 = list(box.lo)
    lo2[a] += bd
    return Box(box.lo, tuple(s1)), Box(tuple(lo2), tuple(s2)), bd


def _balancing_targets(board: Board, half: Box, a: int, crossing: np.ndarray, near_high: bool):
    """Target vertex per cell of ``half``: crossers packed against the boundary.

    Crossers are spread over the lines along ``a`` as evenly as possible
    (line order: ascending linear index of the remaining coordinates).
    """
    V = half.vertices(board.grid)
    la = half.shape[a]
    Vl = np.moveaxis(V, a, -1).reshape(-1, la)
    cross_l = np.moveaxis(crossing, a, -1).reshape(-1, la)
    nlines = Vl.shape[0]
    N = int(cross_l.sum())
    per = np.full(nlines, N // nlines)
    per[: N % nlines] += 1
    pos = np.arange(la)
    if near_high:
        slot = pos[None, :] >= (la - per)[:, None]
    else:
        slot = pos[None, :] < per[:, None]
    # robots in scan order (line-major) meet slots in the same order
    src = Vl.ravel()
    flat_c = cross_l.ravel()
    flat_s = slot.ravel()
    tv = np.empty(board.grid.vertex_count, dtype=np.int64)
    tv[src[flat_c]] = src[flat_s]
    tv[src[~flat_c]] = src[~flat_s]
    return tv[V], per


def group_across_split(board: Board, jobs, tl: Timeline) -> None:
    """Grouping for several (box, axis) splits at once; updates ``board``.

    After the fragment runs, each robot of a box lies in the half that
    contains its goal.
    """
    grid = board.grid
    shuffles = []
    exchanges = []
    for box, a in jobs:
        h1, h2, bd = _halves(box, a)
        goal_c = grid.coords(board.target_of_cells(box))
        in_low = goal_c[..., a] < box.lo[a] + bd
        sl1 = [slice(None)] * grid.k
        sl1[a] = slice(0, bd)
        sl2 = [slice(None)] * grid.k
        sl2[a] = slice(bd, None)
        c1 = ~in_low[tuple(sl1)]
        c2 = in_low[tuple(sl2)]
        if c1.sum() != c2.sum():
            raise AssertionError("crossing counts differ across the split")
        if not c1.any():
            continue
        t1, per1 = _balancing_targets(board, h1, a, c1, near_high=True)
        t2, per2 = _balancing_targets(board, h2, a, c2, near_high=False)
        shuffles.append((h1, t1))
        shuffles.append((h2, t2))
        exchanges.append((box, a, bd, per1))
    route_boxes(grid, shuffles, tl)
    for half, tv in shuffles:
        board.move(half.vertices(grid), tv)
    waves = []
    for box, a, bd, per in exchanges:
        la = box.shape[a]
        pos = np.arange(la)[None, :]
        c = per[:, None]
        dest = np.where((pos >= bd - c) & (pos < bd), pos + c,
                        np.where((pos >= bd) & (pos < bd + c), pos - c, pos))
        V = box.vertices(grid)
        moved_shape = np.moveaxis(V, a, -1).shape
        dest_full = np.moveaxis(dest.reshape(moved_shape), -1, a)
        waves.append(phase_waves(V[None], dest_full[None], a))
        lines = np.moveaxis(V, a, -1)
        board.move(lines, _apply(lines, np.moveaxis(dest_full, a, -1)))
    run_waves(waves, tl)


def _apply(lines: np.ndarray, dest: np.ndarray) -> np.ndarray:
    """Vertex each line cell's robot ends on, given per-line destinations."""
    return np.take_along_axis(lines, dest, axis=-1)


# ------------------------------------------------------------ leaves

def solve_leaves(board: Board, boxes, tl: Timeline, variants: bool = False) -> None:
    """Finish disjoint leaf boxes in parallel; robots there already have local goals."""
    grid = board.grid
    table_groups: dict[tuple, list] = {}
    routed = []
    for box in boxes:
        tv = board.target_of_cells(box)
        V = box.vertices(grid)
        if np.array_equal(tv, V):
            continue
        if box.size <= MAX_ORACLE_VERTICES and block_table_or_none(box.shape) is not None:
            table_groups.setdefault(box.shape, []).append((V, tv))
        elif is_routable(box.shape):
            routed.append((box, tv))
        elif box.size <= MAX_ORACLE_VERTICES:
            _search_leaf(box.shape, V, tv, tl)
            board.move(V, tv)
        else:
            raise UnsolvableRegion(f"cannot permute robots inside a {box.shape} region")
    route_boxes(grid, routed, tl, variants)
    for shape, members in table_groups.items():
        _table_steps(shape, members, tl)
    for box, tv in routed:
        board.move(box.vertices(grid), tv)
    for shape, members in table_groups.items():
        for V, tv in members:
            board.move(V, tv)


def _search_leaf(shape, V: np.ndarray, tv: np.ndarray, tl: Timeline) -> None:
    """BFS for a tiny box whose state space is not fully connected (e.g. 2x2)."""
    local = np.searchsorted(V.ravel(), tv.ravel())
    ms, plan = bfs_optimal_makespan(permutation_instance(GridSpec(tuple(shape)), local))
    if ms < 0:
        raise UnsolvableRegion(f"robots inside a {tuple(shape)} region cannot reach their goals")
    flat = V.ravel()
    tl.add_steps([Step(flat[s.src], flat[s.dst]) for s in plan.steps], flat)


def _table_steps(shape, members, tl: Timeline) -> None:
    tb = block_table_or_none(shape)
    Vs = np.stack([V.ravel() for V, _ in members])
    n = Vs.shape[1]
    # box vertices ascend in C order, so searchsorted gives local indices
    local_t = np.stack([np.searchsorted(V.ravel(), tv.ravel()) for V, tv in members])
    paths = tb.paths[perm_rank(local_t)].astype(np.int64)
    pull = tb.moves.astype(np.int64)
    tl.add_blocks(Vs, paths, pull, pull != np.arange(n))


# ------------------------------------------------------------ solver

@dataclass
class IsagTrace:
    """Time at which each recursion level's last move ends, plus the final horizon.

    Regions start their next level as soon as their own cells are free, so
    levels overlap and only the end times are meaningful.
    """

    level_ends: list[int]
    makespan: int = 0


GRAY2 = ((0, 0), (0, 1), (1, 1), (1, 0))


def folded_hypercube(dims) -> tuple[GridSpec, np.ndarray] | None:
    """Fold pairs of side-2 axes into side-4 axes along a Gray code.

    Grids whose non-trivial sides all equal 2 cannot be split or routed by
    line phases.  Consecutive Gray codes differ in one bit, so the folded
    grid is a spanning subgraph of the original.  Returns the folded spec
    and ``orig[v]``, the original vertex of folded vertex ``v``; None
    unless at least four side-2 axes exist and nothing is longer.
    """
    eff = [a for a, m in enumerate(dims) if m >= 2]
    if len(eff) < 4 or any(dims[a] != 2 for a in eff):
        return None
    pairs = [eff[i:i + 2] for i in range(0, len(eff) - 1, 2)]
    rest = eff[2 * len(pairs):]
    fdims = (4,) * len(pairs) + (2,) * len(rest)
    folded = GridSpec(fdims)
    fc = folded.coords(np.arange(folded.vertex_count))
    oc = np.zeros((folded.vertex_count, len(dims)), dtype=np.int64)
    gray = np.array(GRAY2)
    for i, (a, b) in enumerate(pairs):
        oc[:, a] = gray[fc[:, i], 0]
        oc[:, b] = gray[fc[:, i], 1]
    for j, a in enumerate(rest):
        oc[:, a] = fc[:, len(pairs) + j]
    return folded, GridSpec(tuple(dims)).index(oc)


def _solve_folded(instance: Instance, fold, trace) -> Plan:
    folded, orig = fold
    to_folded = np.empty_like(orig)
    to_folded[orig] = np.arange(orig.size)
    inner = Instance(folded, to_folded[instance.start.assignment], to_folded[instance.goal.assignment])
    plan = isag_solve(inner, trace)
    return Plan([Step(orig[s.src], orig[s.dst]) for s in plan.steps])


def isag_solve(instance: Instance, trace: IsagTrace | None = None) -> Plan:
    """Labeled routing on a fully occupied grid of any dimension."""
    board = Board.from_instance(instance)
    grid = instance.grid
    fold = folded_hypercube(grid.dims) if grid.vertex_count > MAX_ORACLE_VERTICES else None
    if fold is not None:
        return _solve_folded(instance, fold, trace)
    tl = Timeline(grid.vertex_count)
    order = split_axis_order(grid.dims)
    frontier = [(Box.whole(grid), 0)]
    leaves = []
    ends = []
    while frontier:
        jobs, nxt = [], []
        for box, ptr in frontier:
            pick = choose_split(box.shape, order, ptr)
            if pick is None:
                leaves.append(box)
                continue
            a, nptr = pick
            jobs.append((box, a))
            h1, h2, _ = _halves(box, a)
            nxt.extend([(h1, nptr), (h2, nptr)])
        if jobs:
            group_across_split(board, jobs, tl)
            ends.append(tl.horizon)
        frontier = nxt
    solve_leaves(board, leaves, tl)
    if not np.array_equal(board.goal[board.occ], np.arange(grid.vertex_count)):
        raise AssertionError("board does not match the goal after solving")
    plan = tl.plan()
    if trace is not None:
        trace.level_ends[:] = ends
        trace.makespan = plan.makespan
    return plan
