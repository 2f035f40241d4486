"""Cell partitions, flow orientation and circulation decomposition.

A partition cuts the grid into boxes (cells).  Once every robot's goal lies
in its own cell or a face-adjacent one, the robot counts crossing each
shared face form a circulation on the skeleton grid of cells.  Orientation
makes that happen: diagonal crossers first trade places with nearby donors,
then opposing crossers on each face trade places pairwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import prod

import numpy as np

from .grid_core import GridSpec, Step
from .matching import BipartiteMultigraph, decompose_regular
from .schedule import Timeline
from .shuffle import Box, route_boxes


class PartitionError(ValueError):
    pass


class OrientationError(AssertionError):
    """A local orientation step could not be completed (for example, no donor)."""


# ------------------------------------------------------------ partition

@dataclass(frozen=True)
class CellPartition:
    """Axis-aligned cells given by cut positions per axis (0 and m included)."""

    grid: GridSpec
    cuts: tuple[tuple[int, ...], ...]

    @property
    def skeleton_dims(self) -> tuple[int, ...]:
        return tuple(len(c) - 1 for c in self.cuts)

    @property
    def cell_count(self) -> int:
        return prod(self.skeleton_dims)

    @property
    def cell_side(self) -> int:
        """Smallest cell side over all axes that are actually cut."""
        sides = [min(np.diff(c)) for c in self.cuts if len(c) > 2]
        if not sides:
            sides = [min(np.diff(c)) for c in self.cuts]
        return int(min(sides))

    def axis_cell(self, a: int) -> np.ndarray:
        """Cell index along axis ``a`` for every coordinate."""
        c = np.asarray(self.cuts[a])
        return np.searchsorted(c, np.arange(self.grid.dims[a]), side="right") - 1

    def cell_coords(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords)
        out = np.empty_like(coords)
        for a in range(self.grid.k):
            out[..., a] = self.axis_cell(a)[coords[..., a]]
        return out

    def cell_of_vertex(self) -> np.ndarray:
        cc = self.cell_coords(self.grid.coords(np.arange(self.grid.vertex_count)))
        return np.ravel_multi_index(tuple(cc.T), self.skeleton_dims)

    def cell_box(self, cell) -> Box:
        cell = tuple(int(c) for c in cell)
        lo = tuple(self.cuts[a][cell[a]] for a in range(self.grid.k))
        hi = tuple(self.cuts[a][cell[a] + 1] for a in range(self.grid.k))
        return Box(lo, tuple(h - l for l, h in zip(lo, hi)))

    def cells(self):
        return [tuple(int(x) for x in c) for c in np.ndindex(*self.skeleton_dims)]

    def skeleton(self) -> GridSpec:
        return GridSpec(self.skeleton_dims)


def build_partition(grid: GridSpec, cell_side: int, axes=None) -> CellPartition:
    """Uniform cells of side ``cell_side`` along ``axes`` (default: all axes)."""
    axes = range(grid.k) if axes is None else axes
    cuts = []
    for a in range(grid.k):
        m = grid.dims[a]
        if a in axes:
            if cell_side <= 0 or m % cell_side:
                raise PartitionError(
                    f"cell side {cell_side} does not divide side {m}; use fit_partition")
            cuts.append(tuple(range(0, m + 1, cell_side)))
        else:
            cuts.append((0, m))
    return CellPartition(grid, tuple(cuts))


def fit_partition(grid: GridSpec, min_side: int, axes=None) -> CellPartition:
    """Cells with every side at least ``min_side`` (when the axis allows).

    Surplus length is spread over the cells in steps of two, so cell sides
    keep the parity of ``min_side``; an odd leftover goes to the last cell.
    Even sides route noticeably faster than odd ones.
    """
    axes = range(grid.k) if axes is None else axes
    cuts = []
    for a in range(grid.k):
        m = grid.dims[a]
        if a not in axes or m < 2 * max(1, min_side):
            cuts.append((0, m))
            continue
        cuts.append(_fitted_cuts(m, max(1, min_side)))
    return CellPartition(grid, tuple(cuts))


def _fitted_cuts(m: int, side: int) -> tuple[int, ...]:
    q = m // side
    sides = np.full(q, side)
    rest = m - q * side
    pairs, odd = divmod(rest, 2)
    for i in range(pairs):
        sides[(i * q) // pairs if pairs <= q else i % q] += 2
    sides[-1] += odd
    return tuple(int(x) for x in np.concatenate([[0], np.cumsum(sides)]))


# ------------------------------------------------------------ board view

def _cell_state(board, part: CellPartition):
    """Cell coordinates of every robot's position and goal, indexed by robot."""
    grid = board.grid
    pos = np.empty(grid.vertex_count, dtype=np.int64)
    pos[board.occ] = np.arange(grid.vertex_count)
    pc = grid.coords(pos)
    gc = grid.coords(board.goal)
    return pos, pc, gc, part.cell_coords(pc), part.cell_coords(gc)


def _swap_targets(grid: GridSpec, box: Box, pairs) -> np.ndarray:
    """Target vertex per box cell realizing the given vertex transpositions."""
    V = box.vertices(grid)
    tv = V.copy()
    flat = tv.reshape(-1)
    lo = np.asarray(box.lo)
    shape = box.shape
    for u, v in pairs:
        iu = np.ravel_multi_index(tuple(grid.coords(u) - lo), shape)
        iv = np.ravel_multi_index(tuple(grid.coords(v) - lo), shape)
        flat[iu], flat[iv] = v, u
    return tv


def _execute_swaps(board, jobs, tl: Timeline) -> None:
    grid = board.grid
    items = [(box, _swap_targets(grid, box, pairs)) for box, pairs in jobs if pairs]
    route_boxes(grid, items, tl, variants=True)
    for box, tv in items:
        board.move(box.vertices(grid), tv)


# ------------------------------------------------------------ orientation

def meeting_half_width(part: CellPartition, dg: int) -> int:
    return max(1, min(2 * dg, part.cell_side // 2))


def diagonal_reroute(board, part: CellPartition, dg: int, tl: Timeline) -> None:
    """Remove goals in non-face-adjacent cells by local position trades.

    Rounds handle robots whose cell differs from the goal cell in ``r`` axes,
    for r = k down to 2 (one round per axis set).  Each such robot trades
    places with a donor from a neighbouring cell toward its goal; the donor's
    goal must lie in that neighbour or in the crosser's own cell.
    """
    grid = board.grid
    k = grid.k
    h = meeting_half_width(part, dg)
    for r in range(k, 1, -1):
        for S in combinations(range(k), r):
            _reroute_round(board, part, S, h, tl)


def _reroute_round(board, part, S, h, tl: Timeline) -> None:
    grid = board.grid
    k = grid.k
    pos, pc, gc, cpos, cgoal = _cell_state(board, part)
    diff = cgoal - cpos
    if np.abs(diff).max(initial=0) > 1:
        raise OrientationError("goal more than one cell away")
    nz = diff != 0
    want = np.zeros(k, dtype=bool)
    want[list(S)] = True
    cross = np.flatnonzero((nz == want).all(axis=1))
    if cross.size == 0:
        return
    groups: dict[tuple, list[int]] = {}
    for rb in cross:
        key = []
        for a in range(k):
            if want[a]:
                key.append(("cut", int(max(cpos[rb, a], cgoal[rb, a]))))
            else:
                key.append(("cell", int(cpos[rb, a])))
        groups.setdefault(tuple(key), []).append(int(rb))
    jobs = []
    for key, members in groups.items():
        lo, hi = [], []
        for a, (kind, idx) in enumerate(key):
            if kind == "cut":
                x = part.cuts[a][idx]
                lo.append(max(0, x - h))
                hi.append(min(grid.dims[a], x + h))
            else:
                lo.append(part.cuts[a][idx])
                hi.append(part.cuts[a][idx + 1])
        box = Box(tuple(lo), tuple(b - a for a, b in zip(lo, hi)))
        robots = board.occ[box.vertices(grid).ravel()]
        used = set()
        pairs = []
        for rb in sorted(members):
            A = cpos[rb]
            best = None
            for b in S:
                N = A.copy()
                N[b] += diff[rb, b]
                ok = ((cpos[robots] == N).all(axis=1)
                      & ((cgoal[robots] == N).all(axis=1) | (cgoal[robots] == A).all(axis=1)))
                for d in robots[ok]:
                    d = int(d)
                    if d in used:
                        continue
                    score = (int(np.abs(pc[d] - gc[rb]).sum()), int(pos[d]))
                    if best is None or score < best[0]:
                        best = (score, d)
            if best is None:
                raise OrientationError(f"no donor for robot {rb} near {key}")
            used.add(best[1])
            pairs.append((int(pos[rb]), int(pos[best[1]])))
        jobs.append((box, pairs))
    _execute_swaps(board, jobs, tl)


def flow_cancellation(board, part: CellPartition, dg: int, tl: Timeline) -> None:
    """Make every face's crossing one-directional by trading opposing crossers."""
    grid = board.grid
    h = meeting_half_width(part, dg)
    for a in range(grid.k):
        pos, pc, gc, cpos, cgoal = _cell_state(board, part)
        diff = cgoal - cpos
        nz = diff != 0
        if (nz.sum(axis=1) > 1).any():
            raise OrientationError("diagonal goals remain")
        moving = np.flatnonzero(nz[:, a])
        faces: dict[tuple, tuple[list, list]] = {}
        for rb in moving:
            lower = cpos[rb].copy()
            if diff[rb, a] < 0:
                lower[a] -= 1
            entry = faces.setdefault(tuple(int(x) for x in lower), ([], []))
            entry[0 if diff[rb, a] > 0 else 1].append(int(rb))
        jobs = []
        for lower, (up, down) in faces.items():
            n = min(len(up), len(down))
            if n == 0:
                continue
            x = part.cuts[a][lower[a] + 1]
            cb = part.cell_box(lower)
            lo = list(cb.lo)
            shape = list(cb.shape)
            lo[a] = max(0, x - h)
            shape[a] = min(grid.dims[a], x + h) - lo[a]
            box = Box(tuple(lo), tuple(shape))
            pairs = []
            # partners sorted along the face so each pair stays close
            along = lambda r: tuple(np.delete(pc[r], a)) + (abs(int(pc[r][a]) - x),)
            for ru, rd in zip(sorted(up, key=along)[:n], sorted(down, key=along)[:n]):
                for rb in (ru, rd):
                    if not box.contains(pc[rb]):
                        raise OrientationError("crosser outside the face band")
                pairs.append((int(pos[ru]), int(pos[rd])))
            jobs.append((box, pairs))
        _execute_swaps(board, jobs, tl)


# ------------------------------------------------------------ circulations

@dataclass
class Circulation:
    """Non-negative integer flow on directed edges of a graph with ``vertices`` nodes."""

    vertices: int
    flow: dict[tuple[int, int], int] = field(default_factory=dict)

    @classmethod
    def from_edges(cls, vertices: int, edges) -> "Circulation":
        c = cls(int(vertices))
        for u, v, f in edges:
            u, v, f = int(u), int(v), int(f)
            if not (0 <= u < vertices and 0 <= v < vertices):
                raise ValueError("edge endpoint out of range")
            if f < 0:
                raise ValueError("negative flow")
            if u == v:
                raise ValueError("self-loop in circulation")
            if f:
                c.flow[(u, v)] = c.flow.get((u, v), 0) + f
        return c

    def in_flow(self) -> np.ndarray:
        a = np.zeros(self.vertices, dtype=np.int64)
        for (u, v), f in self.flow.items():
            a[v] += f
        return a

    def out_flow(self) -> np.ndarray:
        a = np.zeros(self.vertices, dtype=np.int64)
        for (u, v), f in self.flow.items():
            a[u] += f
        return a

    def is_conserved(self) -> bool:
        return bool((self.in_flow() == self.out_flow()).all())

    def is_oriented(self) -> bool:
        return all((v, u) not in self.flow for (u, v) in self.flow)

    def to_json(self) -> dict:
        return {"vertices": self.vertices,
                "edges": [[u, v, f] for (u, v), f in sorted(self.flow.items())]}

    @classmethod
    def from_json(cls, data: dict) -> "Circulation":
        try:
            return cls.from_edges(data["vertices"], data["edges"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed circulation: {exc}") from exc


@dataclass(frozen=True)
class UnitCirculation:
    """Vertex-disjoint directed cycles, one unit of flow on each edge."""

    cycles: tuple[tuple[int, ...], ...]

    def edges(self) -> list[tuple[int, int]]:
        out = []
        for c in self.cycles:
            for i, u in enumerate(c):
                out.append((u, c[(i + 1) % len(c)]))
        return out

    def vertices(self) -> set[int]:
        return {v for c in self.cycles for v in c}


def extract_circulation(board, part: CellPartition) -> Circulation:
    """Skeleton circulation counting robots whose goal is in a neighbouring cell."""
    _, _, _, cpos, cgoal = _cell_state(board, part)
    sk = part.skeleton_dims
    diff = np.abs(cgoal - cpos).sum(axis=1)
    if (diff > 1).any():
        raise OrientationError("goal outside the face-adjacent cells")
    move = diff == 1
    u = np.ravel_multi_index(tuple(cpos[move].T), sk)
    v = np.ravel_multi_index(tuple(cgoal[move].T), sk)
    c = Circulation(prod(sk))
    pairs, counts = np.unique(np.stack([u, v], axis=1), axis=0, return_counts=True) if move.any() \
        else (np.zeros((0, 2), int), np.zeros(0, int))
    for (a, b), f in zip(pairs, counts):
        c.flow[(int(a), int(b))] = int(f)
    if not c.is_conserved():
        raise OrientationError("flow conservation violated")
    return c


def decompose_circulation(c: Circulation, f: int | None = None) -> list[UnitCirculation]:
    """Split a circulation into at most ``f`` unit circulations.

    Two copies of the vertex set form a bipartite multigraph with one edge
    per flow unit; self edges pad every vertex to degree ``f``.  Each perfect
    matching, minus its self edges, is a set of vertex-disjoint cycles.
    """
    if not c.is_conserved():
        raise ValueError("circulation violates conservation")
    fin = c.in_flow()
    need = int(fin.max(initial=0))
    f = need if f is None else int(f)
    if f < need:
        raise ValueError(f"f={f} is below the largest in-flow {need}")
    if f == 0 or c.vertices == 0:
        return []
    edges = []
    kinds = []
    for (u, v), w in sorted(c.flow.items()):
        edges.extend([(u, v)] * w)
        kinds.extend([True] * w)
    for v in range(c.vertices):
        pad = f - int(fin[v])
        edges.extend([(v, v)] * pad)
        kinds.extend([False] * pad)
    g = BipartiteMultigraph(c.vertices, c.vertices, edges)
    real = np.asarray(kinds)
    out = []
    for m in decompose_regular(g):
        succ = {}
        for u in range(c.vertices):
            if real[m.edge_ids[u]]:
                succ[u] = int(m.right[u])
        if not succ:
            continue
        cycles = []
        seen = set()
        for s in sorted(succ):
            if s in seen:
                continue
            cyc = [s]
            seen.add(s)
            x = succ[s]
            while x != s:
                cyc.append(x)
                seen.add(x)
                x = succ[x]
            cycles.append(tuple(cyc))
        out.append(UnitCirculation(tuple(cycles)))
    return out


def flow_sum(units, vertices: int) -> Circulation:
    c = Circulation(vertices)
    for u in units:
        for e in u.edges():
            c.flow[e] = c.flow.get(e, 0) + 1
    return c
