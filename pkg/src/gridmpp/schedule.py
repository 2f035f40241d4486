"""As-soon-as-possible compaction of local operations into synchronous steps.

Solvers issue operations in a sequential order: each one is a short run of
moves confined to a known vertex set.  An operation starts as soon as every
vertex of its set is released by the operations issued before it, so
operations on disjoint vertex sets overlap in time.  The result replays
exactly like the sequential order, because operations sharing a vertex keep
their issue order and operations sharing none commute.
"""

from __future__ import annotations

import numpy as np

from .grid_core import INDEX_DTYPE, Plan, Step


class Timeline:
    def __init__(self, vertex_count: int):
        self.ready = np.zeros(vertex_count, dtype=np.int64)
        self._t: list[np.ndarray] = []
        self._src: list[np.ndarray] = []
        self._dst: list[np.ndarray] = []

    @property
    def horizon(self) -> int:
        return int(self.ready.max(initial=0))

    def barrier(self) -> None:
        """Make later operations start after everything issued so far."""
        self.ready[:] = self.horizon

    def add_blocks(self, bverts: np.ndarray, paths: np.ndarray, pull: np.ndarray, mask: np.ndarray) -> None:
        """Disjoint blocks each running a sequence of table moves.

        ``bverts`` (nb, c) lists block vertices in table order; ``paths``
        (nb, depth) holds move ids padded with -1; ``pull``/``mask`` (moves, c)
        describe each move.
        """
        if paths.size == 0:
            return
        lens = (paths >= 0).sum(axis=1)
        act = lens > 0
        if not act.any():
            return
        bv = bverts[act]
        ps = paths[act]
        ln = lens[act]
        start = self.ready[bv].max(axis=1)
        for j in range(int(ln.max())):
            m = ps[:, j]
            sel = m >= 0
            if not sel.any():
                break
            mv = m[sel]
            rows = bv[sel]
            mk = mask[mv]
            src = np.take_along_axis(rows, pull[mv], axis=1)[mk]
            dst = rows[mk]
            t = np.repeat(start[sel] + j, mk.sum(axis=1))
            self._push(t, src, dst)
        self.ready[bv] = (start + ln)[:, None]

    def add_steps(self, steps, cells=None) -> None:
        """A sequence of steps run back to back on one vertex set."""
        steps = [s for s in steps]
        if not steps:
            return
        if cells is None:
            cells = np.unique(np.concatenate([np.concatenate([s.src, s.dst]) for s in steps]))
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return
        start = int(self.ready[cells].max())
        for j, s in enumerate(steps):
            if len(s):
                self._push(np.full(len(s), start + j), s.src, s.dst)
        self.ready[cells] = start + len(steps)

    def _push(self, t, src, dst) -> None:
        self._t.append(np.asarray(t, dtype=np.int64))
        self._src.append(np.asarray(src, dtype=INDEX_DTYPE))
        self._dst.append(np.asarray(dst, dtype=INDEX_DTYPE))

    def steps(self) -> list[Step]:
        """Synchronous steps in time order; idle time slots are dropped."""
        if not self._t:
            return []
        t = np.concatenate(self._t)
        src = np.concatenate(self._src)
        dst = np.concatenate(self._dst)
        order = np.argsort(t, kind="stable")
        t, src, dst = t[order], src[order], dst[order]
        cuts = np.flatnonzero(np.diff(t)) + 1
        bounds = np.concatenate([[0], cuts, [len(t)]])
        return [Step(src[a:b], dst[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]

    def plan(self) -> Plan:
        return Plan(self.steps())
