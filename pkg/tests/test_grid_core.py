import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmpp.grid_core import (
    Configuration,
    GridSpec,
    Instance,
    ModelViolation,
    Plan,
    Step,
    apply_step,
    check_step,
    compute_distance_gap,
    dumps_canonical,
    embed_virtual_robots,
    instance_from_json,
    instance_to_json,
    manhattan_distance,
    permutation_instance,
    plan_from_json,
    plan_to_json,
    replay,
    validate_plan,
)

# Three-step swap on the 2x3 grid (vertices 0 1 2 / 3 4 5): robots on 1 and 2
# trade places in three rotations; everyone else returns home (checked by
# hand: the 6-cycle parks robot 2 on vertex 1, the two squares do the rest).
SWAP_2X3_PLAN = [
    [[0, 3, 4, 5, 2, 1]],
    [[0, 1, 4, 3]],
    [[1, 2, 5, 4]],
]


def swap_2x3_instance():
    goal = np.arange(6)
    goal[1], goal[2] = 2, 1
    return permutation_instance(GridSpec((2, 3)), goal)


def square(grid, lo):
    """Clockwise 4-cycle of the unit square with lower corner ``lo``."""
    x, y = lo
    return [int(grid.index(c)) for c in [(x, y), (x, y + 1), (x + 1, y + 1), (x + 1, y)]]


class TestGridSpec:
    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            GridSpec(())
        with pytest.raises(ValueError):
            GridSpec((3, 0))

    def test_coords_round_trip(self):
        g = GridSpec((3, 4, 2))
        v = np.arange(g.vertex_count)
        assert np.array_equal(g.index(g.coords(v)), v)

    def test_neighbors_of_corner_and_center(self):
        g = GridSpec((3, 3))
        assert sorted(g.neighbors(0)) == [1, 3]
        assert sorted(g.neighbors(4)) == [1, 3, 5, 7]

    def test_canonical_sorts_axes_descending(self):
        g = GridSpec((2, 5, 3))
        spec, ext_to_can = g.canonical()
        assert spec.dims == (5, 3, 2)
        assert spec.is_canonical()
        assert sorted(ext_to_can.tolist()) == list(range(30))
        # the external vertex at (a, b, c) lands on canonical (b, c, a)
        v = int(g.index((1, 4, 2)))
        assert tuple(spec.coords(int(ext_to_can[v]))) == (4, 2, 1)

    def test_manhattan(self):
        g = GridSpec((4, 4))
        assert manhattan_distance(g, 0, 15) == 6


class TestStepChecks:
    g = GridSpec((3, 3))

    def test_four_cycle_is_legal(self):
        check_step(self.g, Step.from_cycles([square(self.g, (0, 0))]))

    def test_two_swap_rejected(self):
        with pytest.raises(ModelViolation) as e:
            check_step(self.g, Step([0, 1], [1, 0]))
        assert e.value.kind == "swap"

    def test_non_adjacent_move_rejected(self):
        with pytest.raises(ModelViolation) as e:
            check_step(self.g, Step([0, 2], [2, 0]))
        assert e.value.kind == "non-adjacent"

    def test_overlapping_cycles_rejected(self):
        s = Step.concat([Step.from_cycles([square(self.g, (0, 0))]),
                         Step.from_cycles([square(self.g, (0, 1))])])
        with pytest.raises(ModelViolation) as e:
            check_step(self.g, s)
        assert e.value.kind == "collision"

    def test_open_chain_rejected_when_closed(self):
        with pytest.raises(ModelViolation):
            check_step(self.g, Step([0, 1], [1, 2]))

    def test_open_chain_into_empty_vertex_allowed_when_relaxed(self):
        occ = np.zeros(9, dtype=bool)
        occ[[0, 1]] = True
        check_step(self.g, Step([0, 1], [1, 2]), occ, closed=False)

    def test_relaxed_move_onto_stationary_robot_rejected(self):
        occ = np.zeros(9, dtype=bool)
        occ[[0, 1]] = True
        with pytest.raises(ModelViolation):
            check_step(self.g, Step([0], [1]), occ, closed=False)

    def test_cycles_are_normalised(self):
        s = Step.from_cycles([[4, 5, 8, 7], [1, 0, 3]])
        assert s.cycles() == [[0, 3, 1], [4, 5, 8, 7]]

    def test_apply_step_rotates(self):
        cfg = Configuration(np.arange(9))
        out = apply_step(cfg, Step.from_cycles([[0, 1, 4, 3]]), self.g)
        assert out.assignment[:5].tolist() == [1, 4, 2, 0, 3]


class TestValidatePlan:
    def test_identity_empty_plan(self):
        inst = permutation_instance(GridSpec((3, 3)), np.arange(9))
        rep = validate_plan(inst, Plan())
        assert rep.ok and rep.makespan == 0

    def test_three_step_swap_plan(self):
        plan = Plan([Step.from_cycles(c) for c in SWAP_2X3_PLAN])
        rep = validate_plan(swap_2x3_instance(), plan)
        assert rep.ok and rep.makespan == 3

    def test_empty_plan_goal_mismatch(self):
        rep = validate_plan(swap_2x3_instance(), Plan())
        assert not rep.ok and rep.kind == "goal-mismatch"

    def test_reports_first_bad_step(self):
        plan = Plan([Step.from_cycles(SWAP_2X3_PLAN[0]), Step([0, 1], [1, 0])])
        rep = validate_plan(swap_2x3_instance(), plan)
        assert not rep.ok and rep.step_index == 1 and rep.kind == "swap"


class TestInstance:
    def test_distance_gap(self):
        assert compute_distance_gap(swap_2x3_instance()) == 1
        g = GridSpec((4, 5))
        goal = np.arange(20)
        goal[0], goal[-1] = goal[-1], goal[0]
        assert permutation_instance(g, goal).distance_gap == 7

    def test_rejects_mismatched_counts(self):
        with pytest.raises(ValueError):
            Instance(GridSpec((2, 2)), [0, 1], [0])

    def test_rejects_non_injective(self):
        with pytest.raises(ValueError):
            Configuration([0, 0])

    def test_virtual_robots_fill_free_vertices_in_order(self):
        inst = Instance(GridSpec((2, 3)), [4, 0], [1, 5])
        emb = embed_virtual_robots(inst)
        assert emb.instance.is_full()
        assert emb.instance.start.assignment.tolist() == [4, 0, 1, 2, 3, 5]
        assert emb.instance.goal.assignment.tolist() == [1, 5, 0, 2, 3, 4]

    def test_virtual_embedding_noop_on_full(self):
        inst = swap_2x3_instance()
        assert embed_virtual_robots(inst).instance is inst

    def test_strip_keeps_real_moves_only(self):
        inst = Instance(GridSpec((2, 2)), [0], [1])
        emb = embed_virtual_robots(inst)
        plan = Plan([Step.from_cycles([[0, 1, 3, 2]])])
        assert validate_plan(emb.instance, plan).ok is False  # virtual goals differ
        stripped = emb.strip(plan)
        assert stripped.steps[0].src.tolist() == [0]
        assert validate_plan(inst, stripped, strict=False).ok


class TestJson:
    def test_instance_round_trip_is_byte_stable(self):
        inst = swap_2x3_instance()
        text = dumps_canonical(instance_to_json(inst))
        back = instance_from_json(json.loads(text))
        assert dumps_canonical(instance_to_json(back)) == text

    def test_plan_round_trip(self):
        plan = Plan([Step.from_cycles(c) for c in SWAP_2X3_PLAN])
        data = plan_to_json(plan)
        assert data["steps"][1] == [[0, 1, 4, 3]]
        back = plan_from_json(data)
        assert dumps_canonical(plan_to_json(back)) == dumps_canonical(data)

    def test_malformed_instance(self):
        with pytest.raises(ValueError):
            instance_from_json({"dims": [2, 2]})


@st.composite
def random_plans(draw):
    h = draw(st.integers(2, 5))
    w = draw(st.integers(2, 5))
    g = GridSpec((h, w))
    steps = []
    for _ in range(draw(st.integers(0, 6))):
        used = set()
        cycles = []
        for _ in range(draw(st.integers(1, 4))):
            x = draw(st.integers(0, h - 2))
            y = draw(st.integers(0, w - 2))
            cyc = square(g, (x, y))
            if used.isdisjoint(cyc):
                if draw(st.booleans()):
                    cyc = cyc[::-1]
                cycles.append(cyc)
                used.update(cyc)
        steps.append(Step.from_cycles(cycles))
    return g, Plan(steps)


@given(random_plans())
@settings(max_examples=60, deadline=None)
def test_random_disjoint_rotations_validate_against_their_replay(gp):
    g, plan = gp
    start = permutation_instance(g, np.arange(g.vertex_count))
    end = replay(start, plan)
    inst = Instance(g, start.start, end)
    assert validate_plan(inst, plan).ok
    # replaying step by step with apply_step agrees
    cfg = start.start
    for s in plan.steps:
        cfg = apply_step(cfg, s, g)
    assert cfg == end


@given(random_plans())
@settings(max_examples=40, deadline=None)
def test_plan_json_round_trip_property(gp):
    _, plan = gp
    data = plan_to_json(plan)
    assert plan_to_json(plan_from_json(data)) == data
