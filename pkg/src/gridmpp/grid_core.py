"""Grid geometry, configurations, synchronous moves and plan validation.

Vertices are mixed-radix linear indices of coordinate tuples (last axis
fastest).  A step is a set of simultaneous unit moves; in the fully
occupied model the moves always close into vertex-disjoint rotation cycles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

INDEX_DTYPE = np.int32


class ModelViolation(ValueError):
    """A step breaks the synchronous rotation model."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.detail = detail


@dataclass(frozen=True)
class GridSpec:
    """An m_1 x ... x m_k grid.

    ``axis_order`` records how the axes of the externally supplied shape
    were permuted to reach this one; it is the identity unless this grid was
    produced by :meth:`canonical`.
    """

    dims: tuple[int, ...]
    axis_order: tuple[int, ...] = ()

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        if not dims or any(m < 1 for m in dims):
            raise ValueError(f"invalid grid dims {self.dims!r}")
        object.__setattr__(self, "dims", dims)
        order = tuple(self.axis_order) or tuple(range(len(dims)))
        if sorted(order) != list(range(len(dims))):
            raise ValueError("axis_order must be a permutation of the axes")
        object.__setattr__(self, "axis_order", order)

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def vertex_count(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def index_array(self) -> np.ndarray:
        """Vertex ids laid out with the grid's shape."""
        return np.arange(self.vertex_count, dtype=INDEX_DTYPE).reshape(self.dims)

    def coords(self, v) -> np.ndarray:
        """Coordinates of vertex ``v`` (scalar or array); last axis is k."""
        v = np.asarray(v)
        if np.any((v < 0) | (v >= self.vertex_count)):
            raise IndexError("vertex out of range")
        return np.stack(np.unravel_index(v, self.dims), axis=-1)

    def index(self, coords) -> np.ndarray | int:
        c = np.asarray(coords)
        out = np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.dims)
        return int(out) if np.ndim(out) == 0 else out

    def neighbors(self, v: int) -> list[int]:
        c = self.coords(v)
        out = []
        for a in range(self.k):
            for d in (-1, 1):
                x = int(c[a]) + d
                if 0 <= x < self.dims[a]:
                    cc = c.copy()
                    cc[a] = x
                    out.append(int(self.index(cc)))
        return out

    def is_canonical(self) -> bool:
        return all(a >= b for a, b in zip(self.dims, self.dims[1:]))

    def canonical(self) -> tuple["GridSpec", np.ndarray]:
        """Return the descending-dims spec and the external->canonical vertex map."""
        order = tuple(sorted(range(self.k), key=lambda a: (-self.dims[a], a)))
        spec = GridSpec(tuple(self.dims[a] for a in order), order)
        vmap = np.transpose(self.index_array, order).ravel()
        # vmap[canonical_vertex] = external_vertex; invert it.
        ext_to_can = np.empty_like(vmap)
        ext_to_can[vmap] = np.arange(vmap.size, dtype=INDEX_DTYPE)
        return spec, ext_to_can


def manhattan_distance(grid: GridSpec, v1: int, v2: int) -> int:
    c1, c2 = grid.coords(v1), grid.coords(v2)
    return int(np.abs(c1 - c2).sum())


@dataclass(frozen=True)
class Configuration:
    """Injective robot -> vertex map."""

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=INDEX_DTYPE)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if np.unique(a).size != a.size:
            raise ValueError("configuration is not injective")

    def __len__(self) -> int:
        return int(self.assignment.size)

    def occupancy(self, vertex_count: int) -> np.ndarray:
        """vertex -> robot id, -1 where empty."""
        occ = np.full(vertex_count, -1, dtype=INDEX_DTYPE)
        occ[self.assignment] = np.arange(self.assignment.size, dtype=INDEX_DTYPE)
        return occ

    def __eq__(self, other) -> bool:
        return isinstance(other, Configuration) and np.array_equal(
            self.assignment, other.assignment
        )

    def __hash__(self) -> int:
        return hash(self.assignment.tobytes())


class Step:
    """One synchronous move: the robot on ``src[i]`` moves to ``dst[i]``."""

    __slots__ = ("src", "dst")

    def __init__(self, src=(), dst=()):
        self.src = np.asarray(src, dtype=INDEX_DTYPE).ravel()
        self.dst = np.asarray(dst, dtype=INDEX_DTYPE).ravel()
        if self.src.shape != self.dst.shape:
            raise ValueError("src and dst length differ")

    @classmethod
    def from_cycles(cls, cycles: Iterable[Sequence[int]]) -> "Step":
        src, dst = [], []
        for cyc in cycles:
            cyc = [int(v) for v in cyc]
            if len(cyc) < 2:
                raise ModelViolation("short-cycle", f"cycle {cyc} too short")
            src.extend(cyc)
            dst.extend(cyc[1:] + cyc[:1])
        return cls(src, dst)

    @classmethod
    def concat(cls, steps: Iterable["Step"]) -> "Step":
        steps = [s for s in steps if len(s)]
        if not steps:
            return cls()
        if len(steps) == 1:
            return steps[0]
        return cls(np.concatenate([s.src for s in steps]), np.concatenate([s.dst for s in steps]))

    def __len__(self) -> int:
        return int(self.src.size)

    def cycles(self) -> list[list[int]]:
        """Rotation cycles, each starting at its smallest vertex, sorted.

        Raises ``ModelViolation`` if the moves do not close into cycles.
        """
        succ = dict(zip(self.src.tolist(), self.dst.tolist()))
        if len(succ) != len(self.src) or set(succ.values()) != set(succ):
            raise ModelViolation("open-chain", "moves do not form closed cycles")
        seen: set[int] = set()
        out = []
        for v in sorted(succ):
            if v in seen:
                continue
            cyc = [v]
            seen.add(v)
            w = succ[v]
            while w != v:
                cyc.append(w)
                seen.add(w)
                w = succ[w]
            out.append(cyc)
        return out

    def __repr__(self) -> str:
        return f"Step({len(self)} moves)"


@dataclass
class Plan:
    steps: list[Step] = field(default_factory=list)

    @property
    def makespan(self) -> int:
        return len(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def extend(self, other: "Plan | Sequence[Step]") -> None:
        self.steps.extend(other.steps if isinstance(other, Plan) else other)


@dataclass(frozen=True)
class Instance:
    grid: GridSpec
    start: Configuration
    goal: Configuration

    def __post_init__(self):
        if not isinstance(self.start, Configuration):
            object.__setattr__(self, "start", Configuration(self.start))
        if not isinstance(self.goal, Configuration):
            object.__setattr__(self, "goal", Configuration(self.goal))
        if len(self.start) != len(self.goal):
            raise ValueError("start and goal robot counts differ")
        V = self.grid.vertex_count
        for cfg in (self.start, self.goal):
            a = cfg.assignment
            if a.size and (a.min() < 0 or a.max() >= V):
                raise ValueError("configuration vertex out of range")

    @property
    def n(self) -> int:
        return len(self.start)

    @cached_property
    def distance_gap(self) -> int:
        return compute_distance_gap(self)

    def is_full(self) -> bool:
        return self.n == self.grid.vertex_count

    def goal_of_vertex(self) -> np.ndarray:
        """For full instances: vertex -> goal vertex of the robot starting there."""
        out = np.full(self.grid.vertex_count, -1, dtype=INDEX_DTYPE)
        out[self.start.assignment] = self.goal.assignment
        return out


def compute_distance_gap(instance: Instance) -> int:
    if instance.n == 0:
        return 0
    c1 = instance.grid.coords(instance.start.assignment)
    c2 = instance.grid.coords(instance.goal.assignment)
    return int(np.abs(c1 - c2).sum(axis=-1).max())


def permutation_instance(grid: GridSpec, goal_of_vertex) -> Instance:
    """Full instance where robot i starts on vertex i."""
    V = grid.vertex_count
    return Instance(grid, Configuration(np.arange(V)), Configuration(goal_of_vertex))


# ---------------------------------------------------------------- moves

def check_step(grid: GridSpec, step: Step, occupied: np.ndarray | None = None,
               closed: bool = True) -> None:
    """Raise ``ModelViolation`` unless ``step`` is a legal synchronous move.

    ``occupied`` is a boolean vertex mask; when ``closed`` is set every
    destination must also be a source (full-occupancy rotations).
    """
    if len(step) == 0:
        return
    V = grid.vertex_count
    src, dst = step.src, step.dst
    if src.min() < 0 or dst.min() < 0 or src.max() >= V or dst.max() >= V:
        raise ModelViolation("invalid-vertex", "vertex index out of range")
    d = np.abs(grid.coords(src) - grid.coords(dst)).sum(axis=-1)
    if np.any(d != 1):
        i = int(np.flatnonzero(d != 1)[0])
        raise ModelViolation("non-adjacent", f"{int(src[i])}->{int(dst[i])}")
    if np.unique(src).size != src.size:
        raise ModelViolation("collision", "a vertex is the source of two moves")
    if np.unique(dst).size != dst.size:
        raise ModelViolation("collision", "two robots enter one vertex")
    if occupied is not None and not occupied[src].all():
        raise ModelViolation("unoccupied", "move starts on an empty vertex")
    succ = np.full(V, -1, dtype=np.int64)
    succ[src] = dst
    nxt = succ[dst]
    if np.any(nxt == src):
        i = int(np.flatnonzero(nxt == src)[0])
        raise ModelViolation("swap", f"{int(src[i])}<->{int(dst[i])}")
    if closed:
        if not np.array_equal(np.sort(src), np.sort(dst)):
            raise ModelViolation("collision", "moves do not close into rotation cycles")
    elif occupied is not None:
        # A destination must be empty or vacated in the same step.
        stays = occupied[dst] & (succ[dst] < 0)
        if np.any(stays):
            raise ModelViolation("collision", "robot moves onto a stationary robot")


def apply_step(config: Configuration, step: Step, grid: GridSpec | None = None) -> Configuration:
    """Advance every robot on a cycle one position.

    Without ``grid`` adjacency is not checked; occupancy and disjointness are.
    """
    a = config.assignment
    if len(step) == 0:
        return config
    V = int(max(a.max(initial=0), step.src.max(), step.dst.max())) + 1
    if grid is not None:
        V = grid.vertex_count
    occupied = np.zeros(V, dtype=bool)
    occupied[a] = True
    if grid is not None:
        check_step(grid, step, occupied, closed=True)
    else:
        if np.unique(step.src).size != len(step) or np.unique(step.dst).size != len(step):
            raise ModelViolation("collision", "overlapping cycles")
        if not occupied[step.src].all():
            raise ModelViolation("unoccupied", "cycle through an empty vertex")
        succ = np.full(V, -1, dtype=np.int64)
        succ[step.src] = step.dst
        if np.any(succ[step.dst] == step.src):
            raise ModelViolation("swap", "two-cycle")
        if not np.array_equal(np.sort(step.src), np.sort(step.dst)):
            raise ModelViolation("collision", "moves do not close into cycles")
    move = np.arange(V, dtype=INDEX_DTYPE)
    move[step.src] = step.dst
    return Configuration(move[a])


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    makespan: int
    step_index: int = -1
    kind: str = ""
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_plan(instance: Instance, plan: Plan, strict: bool = True) -> ValidationReport:
    """Replay ``plan`` from the start configuration.

    Strict mode requires every move to be part of a rotation cycle through
    occupied vertices (the fully occupied model, including virtual robots).
    Relaxed mode allows moves into empty vertices and open chains.
    """
    grid = instance.grid
    V = grid.vertex_count
    pos = instance.start.assignment.astype(np.int64)
    occupied = np.zeros(V, dtype=bool)
    occupied[pos] = True
    move = np.arange(V, dtype=np.int64)
    for t, step in enumerate(plan.steps):
        try:
            check_step(grid, step, occupied, closed=strict)
        except ModelViolation as e:
            return ValidationReport(False, plan.makespan, t, e.kind, e.detail)
        if len(step) == 0:
            continue
        move[step.src] = step.dst
        pos = move[pos]
        move[step.src] = step.src
        occupied[:] = False
        occupied[pos] = True
    if not np.array_equal(pos, instance.goal.assignment):
        bad = int(np.count_nonzero(pos != instance.goal.assignment))
        return ValidationReport(False, plan.makespan, plan.makespan, "goal-mismatch",
                                f"{bad} robots off goal")
    return ValidationReport(True, plan.makespan)


def replay(instance: Instance, plan: Plan) -> Configuration:
    """Final configuration after executing ``plan`` (no checks)."""
    V = instance.grid.vertex_count
    pos = instance.start.assignment.astype(np.int64)
    move = np.arange(V, dtype=np.int64)
    for step in plan.steps:
        move[step.src] = step.dst
        pos = move[pos]
        move[step.src] = step.src
    return Configuration(pos)


# -------------------------------------------------------- virtual robots

@dataclass(frozen=True)
class VirtualEmbedding:
    instance: Instance
    real_count: int

    def strip(self, plan: Plan) -> Plan:
        """Drop moves made by virtual robots (moves become open chains)."""
        V = self.instance.grid.vertex_count
        occ = self.instance.start.occupancy(V).astype(np.int64)
        out = []
        for step in plan.steps:
            if len(step) == 0:
                out.append(step)
                continue
            movers = occ[step.src]
            keep = movers < self.real_count
            out.append(Step(step.src[keep], step.dst[keep]))
            new = occ.copy()
            new[step.dst] = movers
            occ = new
        return Plan(out)


def embed_virtual_robots(instance: Instance) -> VirtualEmbedding:
    """Fill every empty vertex with a virtual robot.

    Free start vertices and free goal vertices are both taken in ascending
    order and paired in that order.
    """
    V = instance.grid.vertex_count
    n = instance.n
    if n == V:
        return VirtualEmbedding(instance, n)
    free_s = np.setdiff1d(np.arange(V), instance.start.assignment)
    free_g = np.setdiff1d(np.arange(V), instance.goal.assignment)
    start = np.concatenate([instance.start.assignment, free_s])
    goal = np.concatenate([instance.goal.assignment, free_g])
    return VirtualEmbedding(Instance(instance.grid, Configuration(start), Configuration(goal)), n)


# ------------------------------------------------------------------ JSON

def dumps_canonical(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def instance_to_json(instance: Instance) -> dict:
    return {
        "dims": list(instance.grid.dims),
        "start": instance.start.assignment.tolist(),
        "goal": instance.goal.assignment.tolist(),
    }


def instance_from_json(data: dict) -> Instance:
    try:
        grid = GridSpec(tuple(data["dims"]))
        return Instance(grid, Configuration(data["start"]), Configuration(data["goal"]))
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed instance: {e}") from e


def plan_to_json(plan: Plan) -> dict:
    return {"steps": [s.cycles() for s in plan.steps]}


def plan_from_json(data: dict) -> Plan:
    try:
        return Plan([Step.from_cycles(cycles) for cycles in data["steps"]])
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed plan: {e}") from e


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_canonical(obj))
        fh.write("\n")
