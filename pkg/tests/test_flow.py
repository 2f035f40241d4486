import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmpp.flow import (
    Circulation,
    PartitionError,
    UnitCirculation,
    build_partition,
    decompose_circulation,
    extract_circulation,
    fit_partition,
    flow_sum,
)
from gridmpp.grid_core import GridSpec, permutation_instance
from gridmpp.isag import Board

# Five-vertex example (v1..v5 -> 0..4): flow 2 on v1->v2 and v5->v1, unit flow elsewhere.
TWO_CYCLE_EDGES = [(0, 1, 2), (1, 4, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 0, 2)]


def random_circulation(rng, n, units):
    """Sum of random simple cycles on ``n`` vertices."""
    c = Circulation(n)
    for _ in range(units):
        size = int(rng.integers(2, n + 1)) if n >= 2 else 0
        if size < 2:
            continue
        cyc = rng.choice(n, size, replace=False)
        for u, v in zip(cyc, np.roll(cyc, -1)):
            c.flow[(int(u), int(v))] = c.flow.get((int(u), int(v)), 0) + 1
    return c


def check_decomposition(c, units, f):
    assert len(units) <= f
    assert flow_sum(units, c.vertices).flow == c.flow
    for u in units:
        verts = [v for cyc in u.cycles for v in cyc]
        assert len(verts) == len(set(verts))
        for cyc in u.cycles:
            assert len(cyc) >= 2


class TestCirculation:
    def test_example_contains_cycle_v1_v2_v5(self):
        c = Circulation.from_edges(5, TWO_CYCLE_EDGES)
        units = decompose_circulation(c)
        check_decomposition(c, units, 2)
        cycles = {cyc for u in units for cyc in u.cycles}
        assert (0, 1, 4) in cycles
        assert (0, 1, 2, 3, 4) in cycles

    def test_uniform_single_cycle_gives_identical_units(self):
        c = Circulation.from_edges(3, [(0, 1, 2), (1, 2, 2), (2, 0, 2)])
        units = decompose_circulation(c)
        assert [u.cycles for u in units] == [((0, 1, 2),), ((0, 1, 2),)]

    def test_zero_circulation(self):
        assert decompose_circulation(Circulation(4)) == []

    def test_disjoint_cycles_share_a_unit(self):
        c = Circulation.from_edges(5, [(0, 1, 1), (1, 0, 1), (2, 3, 1), (3, 4, 1), (4, 2, 1)])
        units = decompose_circulation(c)
        assert len(units) == 1
        assert set(units[0].cycles) == {(0, 1), (2, 3, 4)}

    def test_extra_units_allowed(self):
        c = Circulation.from_edges(5, TWO_CYCLE_EDGES)
        check_decomposition(c, decompose_circulation(c, 4), 4)

    def test_f_below_in_flow_rejected(self):
        with pytest.raises(ValueError):
            decompose_circulation(Circulation.from_edges(5, TWO_CYCLE_EDGES), 1)

    def test_non_conserving_rejected(self):
        c = Circulation.from_edges(3, [(0, 1, 1)])
        assert not c.is_conserved()
        with pytest.raises(ValueError):
            decompose_circulation(c)

    @pytest.mark.parametrize("edges", [[(0, 0, 1)], [(0, 1, -1)], [(0, 5, 1)]])
    def test_bad_edges_rejected(self, edges):
        with pytest.raises(ValueError):
            Circulation.from_edges(3, edges)

    def test_json_round_trip(self):
        c = Circulation.from_edges(5, TWO_CYCLE_EDGES)
        assert Circulation.from_json(c.to_json()) == c
        with pytest.raises(ValueError):
            Circulation.from_json({"edges": []})

    def test_orientation_flag(self):
        assert Circulation.from_edges(5, TWO_CYCLE_EDGES).is_oriented()
        assert not Circulation.from_edges(2, [(0, 1, 1), (1, 0, 1)]).is_oriented()

    def test_unit_edges(self):
        assert UnitCirculation(((0, 1, 2),)).edges() == [(0, 1), (1, 2), (2, 0)]


@given(st.integers(1, 12), st.integers(0, 10), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_decomposition_exactness_property(n, units, seed):
    c = random_circulation(np.random.default_rng(seed), n, units)
    f = int(c.in_flow().max(initial=0))
    check_decomposition(c, decompose_circulation(c), f)


class TestPartition:
    def test_uniform_partition(self):
        part = build_partition(GridSpec((8, 12)), 4)
        assert part.skeleton_dims == (2, 3)
        assert part.cell_box((1, 2)).lo == (4, 8)
        assert part.cell_side == 4

    def test_uniform_partition_needs_divisor(self):
        with pytest.raises(PartitionError):
            build_partition(GridSpec((10, 12)), 4)

    def test_fitted_sides_stay_even(self):
        part = fit_partition(GridSpec((50, 100)), 8)
        for cuts in part.cuts:
            sides = np.diff(cuts)
            assert sides.min() >= 8
            assert (sides[:-1] % 2 == 0).all()
        assert sum(np.diff(part.cuts[1])) == 100

    def test_short_axis_left_uncut(self):
        part = fit_partition(GridSpec((50, 12)), 8)
        assert part.cuts[1] == (0, 12)

    def test_cell_of_vertex_matches_boxes(self):
        g = GridSpec((9, 10))
        part = fit_partition(g, 4)
        cov = part.cell_of_vertex()
        for i, cell in enumerate(part.cells()):
            box = part.cell_box(cell)
            assert set(np.flatnonzero(cov == i).tolist()) == set(box.vertices(g).ravel().tolist())

    def test_extract_circulation_counts_face_crossers(self):
        g = GridSpec((4, 4))
        part = build_partition(g, 2)
        # rotate the four 2x2 cells' corner robots around the centre
        goal = np.arange(16)
        ring = [5, 6, 10, 9]
        for a, b in zip(ring, ring[1:] + ring[:1]):
            goal[a] = b
        board = Board.from_instance(permutation_instance(g, goal))
        c = extract_circulation(board, part)
        assert c.flow == {(0, 1): 1, (1, 3): 1, (3, 2): 1, (2, 0): 1}
