import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmpp.grid_core import Configuration, GridSpec, Instance, Plan, replay, validate_plan
from gridmpp.line_primitives import (
    LineRegion,
    UnsupportedRegion,
    exchange_groups_on_line,
    rearrange_on_line,
    swap_pair_3x2,
    zip_fragments,
)
from gridmpp.oracle import distance_table

C_LINE = 3.0
C_SWAP = 3.0
C_32 = 5


def end_positions(grid, plan):
    """Vertex each robot ends on, keyed by start vertex."""
    V = grid.vertex_count
    ident = Instance(grid, Configuration(np.arange(V)), Configuration(np.arange(V)))
    return replay(ident, plan).assignment


def assert_valid_fragment(grid, plan):
    end = end_positions(grid, plan)
    inst = Instance(grid, Configuration(np.arange(grid.vertex_count)), Configuration(end))
    assert validate_plan(inst, plan).ok
    return end


class TestSwapPair:
    g = GridSpec((2, 3))

    def test_middle_pair_takes_three_steps(self):
        plan = swap_pair_3x2(self.g, range(6), 1, 2)
        assert plan.makespan == 3
        assert end_positions(self.g, plan).tolist() == [0, 2, 1, 3, 4, 5]

    def test_same_vertex_is_empty(self):
        assert swap_pair_3x2(self.g, range(6), 4, 4).makespan == 0

    def test_every_pair_within_constant_and_bfs_diameter(self):
        diameter = int(distance_table((2, 3)).max())
        for a, b in itertools.combinations(range(6), 2):
            plan = swap_pair_3x2(self.g, range(6), a, b)
            end = assert_valid_fragment(self.g, plan)
            want = np.arange(6)
            want[a], want[b] = b, a
            assert np.array_equal(end, want)
            assert plan.makespan <= min(C_32, diameter)

    def test_vertical_block_in_larger_grid(self):
        g = GridSpec((4, 4))
        block = [int(g.index(c)) for c in [(1, 2), (1, 3), (2, 2), (2, 3), (3, 2), (3, 3)]]
        plan = swap_pair_3x2(g, block, block[0], block[5])
        end = assert_valid_fragment(g, plan)
        assert end[block[0]] == block[5] and end[block[5]] == block[0]
        others = [v for v in range(16) if v not in (block[0], block[5])]
        assert np.array_equal(end[others], others)

    def test_wrong_block_shape(self):
        with pytest.raises(UnsupportedRegion):
            swap_pair_3x2(GridSpec((3, 3)), range(9), 0, 1)


class TestLineRegion:
    def test_helper_prefers_plus_side(self):
        g = GridSpec((3, 5))
        r = LineRegion.along(g, (0, 0), 1, 5)
        assert r.helper_line == tuple(range(5, 10))

    def test_helper_falls_back_at_boundary(self):
        g = GridSpec((3, 5))
        r = LineRegion.along(g, (2, 0), 1, 5)
        assert r.helper_line == tuple(range(5, 10))

    def test_one_wide_grid_unsupported(self):
        with pytest.raises(UnsupportedRegion):
            LineRegion.along(GridSpec((1, 6)), (0, 0), 1, 6)

    def test_segment_past_edge(self):
        with pytest.raises(UnsupportedRegion):
            LineRegion.along(GridSpec((2, 4)), (0, 1), 1, 4)


class TestRearrange:
    def test_equal_sets_give_empty_plan(self):
        g = GridSpec((2, 8))
        r = LineRegion.along(g, (0, 0), 1, 8)
        assert rearrange_on_line(r, [1, 3], [3, 1]).makespan == 0

    def test_block_moves_right(self):
        g = GridSpec((2, 10))
        r = LineRegion.along(g, (0, 0), 1, 10)
        plan = rearrange_on_line(r, range(5), range(5, 10))
        end = assert_valid_fragment(g, plan)
        assert sorted(end[:5].tolist()) == list(range(5, 10))
        assert np.array_equal(end[10:], np.arange(10, 20))
        assert plan.makespan <= C_LINE * 10

    def test_scattered_redistribution_on_a_row(self):
        # scattered group to another scattered pattern
        g = GridSpec((2, 12))
        r = LineRegion.along(g, (0, 0), 1, 12)
        cur, tgt = [0, 3, 4, 9], [1, 6, 10, 11]
        plan = rearrange_on_line(r, cur, tgt)
        end = assert_valid_fragment(g, plan)
        assert sorted(end[cur].tolist()) == tgt
        assert plan.makespan <= C_LINE * 12

    def test_size_mismatch(self):
        r = LineRegion.along(GridSpec((2, 6)), (0, 0), 1, 6)
        with pytest.raises(ValueError):
            rearrange_on_line(r, [0, 1], [2])

    def test_linear_makespan(self):
        rng = np.random.default_rng(11)
        for L in (4, 8, 16, 32, 64):
            g = GridSpec((2, L))
            r = LineRegion.along(g, (0, 0), 1, L)
            for _ in range(8):
                k = int(rng.integers(0, L + 1))
                cur = rng.choice(L, k, replace=False)
                tgt = rng.choice(L, k, replace=False)
                assert rearrange_on_line(r, cur, tgt).makespan <= C_LINE * L


class TestExchange:
    def test_empty_groups(self):
        r = LineRegion.along(GridSpec((2, 6)), (0, 0), 1, 6)
        assert exchange_groups_on_line(r, [], []).makespan == 0

    def test_two_separated_groups(self):
        # two groups far apart on one line trade places
        g = GridSpec((2, 14))
        r = LineRegion.along(g, (0, 0), 1, 14)
        a, b = [1, 2, 3], [9, 11, 12]
        plan = exchange_groups_on_line(r, a, b)
        end = assert_valid_fragment(g, plan)
        assert end[a].tolist() == b and end[b].tolist() == a
        rest = [v for v in range(28) if v not in a + b]
        assert np.array_equal(end[rest], rest)
        assert plan.makespan <= C_SWAP * 14

    def test_overlap_rejected(self):
        r = LineRegion.along(GridSpec((2, 6)), (0, 0), 1, 6)
        with pytest.raises(ValueError):
            exchange_groups_on_line(r, [0, 1], [1, 2])

    def test_random_groups_on_length_20(self):
        rng = np.random.default_rng(5)
        g = GridSpec((2, 20))
        r = LineRegion.along(g, (0, 0), 1, 20)
        for _ in range(20):
            k = int(rng.integers(0, 11))
            perm = rng.permutation(20)
            a, b = perm[:k].tolist(), perm[k:2 * k].tolist()
            plan = exchange_groups_on_line(r, a, b)
            end = assert_valid_fragment(g, plan)
            assert sorted(end[a].tolist()) == sorted(b)
            rest = [v for v in range(40) if v not in a + b]
            assert np.array_equal(end[rest], rest)
            assert plan.makespan <= C_SWAP * 20


def test_disjoint_fragments_zip_into_one_valid_plan():
    g = GridSpec((4, 9))
    top = LineRegion.along(g, (0, 0), 1, 9)
    bottom = LineRegion.along(g, (2, 0), 1, 9)
    f1 = rearrange_on_line(top, [0, 1], [7, 8])
    f2 = exchange_groups_on_line(bottom, [18, 19], [25, 26])
    plan = zip_fragments([f1, f2])
    assert plan.makespan == max(f1.makespan, f2.makespan)
    end = assert_valid_fragment(g, plan)
    assert np.array_equal(end, end_positions(g, Plan(f1.steps + f2.steps)))


@st.composite
def fragments(draw):
    L = draw(st.integers(3, 16))
    width = draw(st.integers(2, 3))
    g = GridSpec((width, L))
    row = draw(st.integers(0, width - 1))
    r = LineRegion.along(g, (row, 0), 1, L)
    line = list(r.line)
    if draw(st.booleans()):
        k = draw(st.integers(0, L))
        cur = draw(st.permutations(line))[:k]
        tgt = draw(st.permutations(line))[:k]
        return g, r, "rearrange", cur, tgt
    k = draw(st.integers(0, L // 2))
    perm = draw(st.permutations(line))
    return g, r, "exchange", perm[:k], perm[k:2 * k]


@given(fragments())
@settings(max_examples=120, deadline=None)
def test_non_group_robots_have_zero_net_displacement(frag):
    g, r, kind, a, b = frag
    if kind == "rearrange":
        plan = rearrange_on_line(r, a, b)
        group = set(a)
    else:
        plan = exchange_groups_on_line(r, a, b)
        group = set(a) | set(b)
    end = assert_valid_fragment(g, plan)
    if kind == "rearrange":
        assert sorted(end[list(a)].tolist()) == sorted(b)
        # robots sitting on target cells outside the group must make room
        displaced = set(b) - group
        assert set(end[sorted(displaced)].tolist()) == group - set(b)
        group |= displaced
    rest = [v for v in range(g.vertex_count) if v not in group]
    assert np.array_equal(end[rest], rest)
