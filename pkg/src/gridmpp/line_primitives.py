"""Motion gadgets on two adjacent parallel lines.

The engine is a batched *strip sorter*.  A strip is a 2 x L window: position
``t`` along the line and side ``s`` (0 = the line itself, 1 = its helper
line).  Each robot carries a key ``2*t' + s'`` naming the cell it must reach.
Strips are tiled by 2x4 and 2x3 blocks; each block is solved exactly with a
BFS table, and two tilings whose cuts never coincide alternate until every
key sits on its own cell.  All strips of a batch advance together, so one
call realizes many vertex-disjoint rearrangements in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grid_core import GridSpec, Plan, Step
from .schedule import Timeline
from .oracle import block_table, perm_rank, pull_to_step

# 2x3 local indices are r*3 + c; the three-step pair sits at (0,1) and (0,2).
SWAP_3X2_MAX = 5


class UnsupportedRegion(ValueError):
    pass


# ------------------------------------------------------------ tilings

@lru_cache(maxsize=None)
def strip_tilings(L: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Block layouts ``((start, width), ...)`` used in alternation for length L."""
    if L < 3:
        raise UnsupportedRegion(f"strip of length {L} cannot be sorted")
    if L <= 4:
        return (((0, L),),)
    a_cuts_options = []
    for variant in _compositions(L):
        a_cuts_options.append(variant)
    for a in a_cuts_options:
        b = _covering_layout(L, a)
        if b is not None:
            return (a, b)
    raise AssertionError(f"no tiling pair for L={L}")


def _compositions(L: int):
    """Candidate layouts for the first tiling, fewest idle columns first."""
    out = []
    for lead in range(0, 3):
        for tail in range(0, 3):
            body = L - lead - tail
            if body < 3:
                continue
            for n4 in range(body // 4, -1, -1):
                rest = body - 4 * n4
                if rest % 3 == 0:
                    widths = [4] * n4 + [3] * (rest // 3)
                    blocks, x = [], lead
                    for w in widths:
                        blocks.append((x, w))
                        x += w
                    out.append((lead + tail, tuple(blocks)))
                    break
    out.sort(key=lambda t: t[0])
    return [b for _, b in out]


def _cuts(L: int, blocks) -> set[int]:
    cuts = set()
    for s, w in blocks:
        cuts.add(s)
        cuts.add(s + w)
    cuts.discard(0)
    cuts.discard(L)
    return cuts


def _covering_layout(L: int, a_blocks):
    """Second layout whose cuts avoid the first's and whose blocks straddle them."""
    a_cuts = _cuts(L, a_blocks)

    @lru_cache(maxsize=None)
    def go(x: int):
        if x == L:
            return ()
        opts = []
        for w in (4, 3):
            if x + w <= L and (x + w == L or x + w not in a_cuts):
                opts.append(((x, w), x + w))
        if x == 0 or L - x <= 2:
            for w in (1, 2):
                if x + w <= L and (x + w == L or x + w not in a_cuts):
                    opts.append((None, x + w))
        for blk, nx in opts:
            if nx < L and blk is None and x != 0:
                continue
            rest = go(nx)
            if rest is None:
                continue
            return ((blk,) if blk else ()) + rest
        return None

    b = go(0)
    if b is None:
        return None
    covered = all(any(s < c < s + w for s, w in b) for c in a_cuts)
    return b if covered else None


# ------------------------------------------------------------ block tables

@dataclass(frozen=True)
class _Block:
    width: int
    pull: np.ndarray      # (moves, 2w) pull maps
    mask: np.ndarray      # (moves, 2w) cells that move
    paths: np.ndarray     # (w! ranks, depth)


@lru_cache(maxsize=None)
def _block(width: int) -> _Block:
    tb = block_table((width, 2))
    pull = tb.moves.astype(np.int64)
    mask = pull != np.arange(pull.shape[1])
    return _Block(width, pull, mask, tb.paths.astype(np.int64))


# ------------------------------------------------------------ strip sorter

def sort_strips(verts: np.ndarray, keys: np.ndarray, tl: Timeline | None = None,
                max_phases: int | None = None, offset: int = 0) -> list[Step] | None:
    """Route every strip's robots to the cells named by their keys.

    ``verts`` and ``keys`` have shape (n, L, 2); ``keys[i]`` must be a
    permutation of ``0..2L-1``.  Block moves go to ``tl``; without a
    timeline the compacted steps are returned.  ``offset`` picks which of
    the alternating tilings runs first.
    """
    verts = np.asarray(verts, dtype=np.int64)
    keys = np.array(keys, dtype=np.int64)
    own = tl is None
    if own:
        tl = Timeline(int(verts.max(initial=-1)) + 1)
    n, L, _ = verts.shape
    if n:
        _sort_into(verts, keys, tl, max_phases, offset)
    return tl.steps() if own else None


def _sort_into(verts, keys, tl, max_phases, offset):
    n, L, _ = verts.shape
    target = np.arange(2 * L)
    flat = keys.reshape(n, 2 * L)
    if not np.array_equal(np.sort(flat, axis=1), np.broadcast_to(target, flat.shape)):
        raise ValueError("keys are not permutations")
    done = (flat == target).all(axis=1)
    if done.all():
        return
    tilings = strip_tilings(L)
    limit = max_phases if max_phases is not None else L + 4
    phase = 0
    while not done.all():
        if phase >= limit:
            raise AssertionError(f"strip sorter did not converge on L={L}")
        live = np.flatnonzero(~done)
        tiling = tilings[(phase + offset) % len(tilings)]
        _run_phase(verts[live], flat, live, tiling, tl)
        done[live] = (flat[live] == target).all(axis=1)
        phase += 1


def _run_phase(verts: np.ndarray, flat: np.ndarray, live: np.ndarray, tiling, tl: Timeline) -> None:
    per_width: dict[int, list[int]] = {}
    for s, w in tiling:
        per_width.setdefault(w, []).append(s)
    for w, starts in per_width.items():
        blk = _block(w)
        cols = np.asarray(starts)[:, None] * 2 + np.arange(2 * w)[None, :]  # (nb, 2w)
        sub = flat[live]
        bkeys = sub[:, cols].reshape(-1, 2 * w)
        bverts = verts.reshape(len(live), -1)[:, cols].reshape(-1, 2 * w)
        state = np.argsort(np.argsort(bkeys, axis=1), axis=1)
        tl.add_blocks(bverts, blk.paths[perm_rank(state)], blk.pull, blk.mask)
        sub[:, cols] = np.sort(bkeys, axis=1).reshape(len(live), len(starts), 2 * w)
        flat[live] = sub


# ------------------------------------------------------------ line regions

@dataclass(frozen=True)
class LineRegion:
    """A straight segment of ``grid`` plus the parallel helper segment beside it."""

    grid: GridSpec
    line: tuple[int, ...]
    helper_line: tuple[int, ...] = field(default=())

    @classmethod
    def along(cls, grid: GridSpec, start, axis: int, length: int, helper_axis: int | None = None):
        """Segment from ``start`` along ``axis``; helper on +helper_axis, else -helper_axis."""
        start = np.asarray(start, dtype=np.int64)
        pts = np.tile(start, (length, 1))
        pts[:, axis] += np.arange(length)
        if pts[-1, axis] >= grid.dims[axis]:
            raise UnsupportedRegion("segment leaves the grid")
        if helper_axis is None:
            cand = [b for b in range(grid.k) if b != axis and grid.dims[b] >= 2]
            if not cand:
                raise UnsupportedRegion("no room for a helper line")
            helper_axis = cand[0]
        off = 1 if start[helper_axis] + 1 < grid.dims[helper_axis] else -1
        if start[helper_axis] + off < 0:
            raise UnsupportedRegion("no room for a helper line")
        hp = pts.copy()
        hp[:, helper_axis] += off
        return cls(grid, tuple(int(v) for v in grid.index(pts)),
                   tuple(int(v) for v in grid.index(hp)))

    def __post_init__(self):
        if not self.helper_line:
            raise UnsupportedRegion("missing helper line")
        if len(self.helper_line) != len(self.line):
            raise UnsupportedRegion("helper line length differs")
        if set(self.line) & set(self.helper_line):
            raise UnsupportedRegion("helper line overlaps the line")

    @property
    def length(self) -> int:
        return len(self.line)

    def strip_vertices(self) -> np.ndarray:
        return np.stack([np.asarray(self.line), np.asarray(self.helper_line)], axis=1)


def _strip_plan(region: LineRegion, mapping: dict[int, int]) -> Plan:
    """Plan that moves the robot on each key vertex of ``mapping`` to its value."""
    verts = region.strip_vertices()
    L = region.length
    cell_of = {int(v): i for i, v in enumerate(verts.ravel())}
    keys = np.arange(2 * L)
    for a, b in mapping.items():
        keys[cell_of[a]] = cell_of[b]
    if np.array_equal(keys, np.arange(2 * L)):
        return Plan()
    if L < 3:
        raise UnsupportedRegion("line shorter than 3 cannot be rearranged")
    return Plan(sort_strips(verts[None], keys.reshape(1, L, 2)))


def rearrange_on_line(region: LineRegion, current, target) -> Plan:
    """Move an unlabeled group on the line onto ``target``.

    Members already on a target cell stay; the others move, in line order,
    onto the free target cells.  Robots they displace fill the vacated cells
    in line order.  Every other robot, helper line included, ends where it
    began.
    """
    cur = [int(v) for v in current]
    tgt = [int(v) for v in target]
    if len(cur) != len(tgt):
        raise ValueError("current and target sizes differ")
    pos = {v: i for i, v in enumerate(region.line)}
    if any(v not in pos for v in cur + tgt):
        raise ValueError("vertex not on the line")
    leaving = sorted(set(cur) - set(tgt), key=pos.get)
    arriving = sorted(set(tgt) - set(cur), key=pos.get)
    mapping = dict(zip(leaving, arriving))
    mapping.update(zip(arriving, leaving))
    return _strip_plan(region, mapping)


def exchange_groups_on_line(region: LineRegion, group_a, group_b) -> Plan:
    """Swap the locations of two equal-size groups; everyone else is net-fixed."""
    ga = [int(v) for v in group_a]
    gb = [int(v) for v in group_b]
    if len(ga) != len(gb):
        raise ValueError("groups differ in size")
    if set(ga) & set(gb):
        raise ValueError("groups overlap")
    pos = {v: i for i, v in enumerate(region.line)}
    if any(v not in pos for v in ga + gb):
        raise ValueError("vertex not on the line")
    ga.sort(key=pos.get)
    gb.sort(key=pos.get)
    mapping = dict(zip(ga, gb))
    mapping.update(zip(gb, ga))
    return _strip_plan(region, mapping)


def swap_pair_3x2(grid: GridSpec, block_vertices, a: int, b: int) -> Plan:
    """Transpose the robots on ``a`` and ``b`` inside a 3x2 block, others net-fixed.

    ``block_vertices`` lists the six block vertices in row-major order of a
    2x3 (or 3x2) sub-grid.
    """
    bv = np.asarray(block_vertices, dtype=np.int64).ravel()
    if bv.size != 6:
        raise UnsupportedRegion("swap gadget needs a 3x2 block")
    coords = grid.coords(bv)
    span = tuple(int(x) for x in coords.max(axis=0) - coords.min(axis=0) + 1)
    shape = tuple(s for s in span if s > 1)
    if sorted(shape) != [2, 3] or len(set(map(tuple, coords))) != 6:
        raise UnsupportedRegion("swap gadget needs a 3x2 block")
    order = np.lexsort(tuple(coords[:, i] for i in reversed(range(grid.k))))
    bv = bv[order]
    local = {int(v): i for i, v in enumerate(bv)}
    if a not in local or b not in local:
        raise ValueError("vertices outside the block")
    if a == b:
        return Plan()
    dims = shape
    tb = block_table(dims)
    lab = np.arange(6)
    lab[local[a]], lab[local[b]] = local[b], local[a]
    r = int(perm_rank(lab[None])[0])
    return Plan([pull_to_step(tb.moves[m], bv) for m in tb.paths[r] if m >= 0])


def zip_fragments(fragments) -> Plan:
    """Run vertex-disjoint fragments side by side, padding shorter ones."""
    frags = [f.steps if isinstance(f, Plan) else list(f) for f in fragments]
    depth = max((len(f) for f in frags), default=0)
    return Plan([Step.concat(f[j] for f in frags if j < len(f)) for j in range(depth)])


def zip_step_lists(lists) -> list[Step]:
    return zip_fragments(lists).steps
