import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from rrjdetect.aggregation import (
    SIMPLIFIED_LABELS,
    StatePartition,
    aggregate_counts,
    aggregated_to_dict,
    dump_aggregated,
    ideal_aggregate,
    identity_partition,
    intermediate_partition,
    is_strongly_lumpable,
    jamming_efficiency_aggregated,
    simplified_partition,
    simplified_rate_matrix,
    simplified_rate_table,
)
from rrjdetect.chains import StateSpace, build_compliant, build_rrj
from rrjdetect.channel import NetworkTopology, idle_probability
from rrjdetect.detector import count_transitions
from rrjdetect.errors import ConfigError

from conftest import GAMMA, LAM

EQUILATERAL = NetworkTopology(positions=[(0, 0), (30, 0), (15, 15 * np.sqrt(3))])


class TestPartitions:
    def test_intermediate_blocks(self):
        part = intermediate_partition(StateSpace(3))
        assert part.labels == ("(0,0)", "(1,0)", "(1,1)", "(2,0)", "(2,1)", "(3,1)")
        # {2} and {3} share block (1,0)
        assert part.block_of[2] == part.block_of[4] == 1

    def test_simplified_blocks(self):
        part = simplified_partition(StateSpace(3))
        assert part.labels == SIMPLIFIED_LABELS
        assert [b.tolist() for b in part.blocks] == [[0], [1], [2, 4, 6], [3, 5, 7]]

    @pytest.mark.parametrize("blocks", [
        ([0, 1], [1, 2, 3]),   # overlap
        ([0, 1], [2]),         # missing state
        ([0, 1, 2, 3], []),    # empty block
    ])
    def test_invalid(self, blocks):
        with pytest.raises(ValueError):
            StatePartition(StateSpace(2), tuple(np.array(b) for b in blocks), ("a", "b"))

    def test_needs_two_stations(self):
        with pytest.raises(ConfigError):
            simplified_partition(StateSpace(1))

    def test_map_path_and_counts(self):
        part = simplified_partition(StateSpace(2))
        path = [0, 1, 3, 2, 0]
        np.testing.assert_array_equal(part.map_path(path), [0, 1, 3, 2, 0])
        N = count_transitions(path, 4).N
        agg = aggregate_counts(N, part)
        assert agg.sum() == 4 and agg[1, 3] == 1


class TestLumpability:
    def test_counterexample_witness(self, topo3):
        c = build_compliant(topo3, LAM, GAMMA)
        res = is_strongly_lumpable(c, intermediate_partition(c.space))
        assert not res and not res.lumpable
        w = res.witness
        assert (w["source"], w["target"]) == ("(1,0)", "(2,1)")
        assert {w["state_i"], w["state_j"]} == {"{2}", "{3}"}
        rates = {w["state_i"]: w["sum_i"], w["state_j"]: w["sum_j"]}
        assert rates["{2}"] == pytest.approx(LAM * idle_probability(1, {2}, topo3), rel=1e-14)
        assert rates["{3}"] == pytest.approx(LAM * idle_probability(1, {3}, topo3), rel=1e-14)
        assert rates["{2}"] != rates["{3}"]

    def test_equilateral_is_lumpable(self):
        c = build_compliant(EQUILATERAL, LAM, GAMMA)
        assert is_strongly_lumpable(c, intermediate_partition(c.space))

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_identity_partition_is_lumpable(self, m, m4):
        topo = NetworkTopology(positions=m4.topology.positions[:m])
        c = build_rrj(topo, LAM, GAMMA, 0.3, 0.6)
        assert is_strongly_lumpable(c.Q, identity_partition(c.space)).lumpable


class TestIdealAggregate:
    @pytest.mark.parametrize("make", [intermediate_partition, simplified_partition])
    def test_preserves_block_mass(self, family6, make):
        c = family6.chain(0.8, 0.2)
        part = make(c.space)
        agg = ideal_aggregate(c, part)
        np.testing.assert_allclose(agg.pi, part.block_sums(c.pi), atol=1e-14)
        np.testing.assert_allclose(agg.Q.sum(axis=1), 0.0, atol=1e-13)
        assert agg.u == c.u and agg.kind == "rrj" and agg.jammer == (0.8, 0.2)

    def test_lumpable_chain_aggregates_by_summation(self):
        c = build_compliant(EQUILATERAL, LAM, GAMMA)
        part = intermediate_partition(c.space)
        agg = ideal_aggregate(c, part)
        E = part.indicator_matrix()
        for b, members in enumerate(part.blocks):
            row = (c.Q[members[0]] @ E)
            np.testing.assert_allclose(agg.Q[b], row, atol=1e-13)

    def test_identity_partition_is_identity(self, family4):
        c = family4.chain(0.4, 0.4)
        agg = ideal_aggregate(c, identity_partition(c.space))
        np.testing.assert_allclose(agg.Q, c.Q, atol=1e-14)

    def test_fresh_clock(self, family4):
        c = family4.compliant
        agg = ideal_aggregate(c, simplified_partition(c.space), u=5.0)
        assert agg.u == 5.0
        np.testing.assert_allclose(agg.P.sum(axis=1), 1.0)
        with pytest.raises(ValueError):
            ideal_aggregate(c, simplified_partition(c.space), u=1e-3)

    def test_space_mismatch(self, family4):
        with pytest.raises(ValueError):
            ideal_aggregate(family4.compliant, simplified_partition(StateSpace(3)))

    @settings(max_examples=12, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.sampled_from(["intermediate", "simplified"]))
    def test_efficiency_preserved(self, family6, p_R, p_J, model):
        assume(p_R > 0.01 or p_J > 0.01)
        c0, c1 = family6.compliant, family6.chain(p_R, p_J)
        part = intermediate_partition(c0.space) if model == "intermediate" else simplified_partition(c0.space)
        eta_full, eta_agg = jamming_efficiency_aggregated(
            (c0, c1), (ideal_aggregate(c0, part), ideal_aggregate(c1, part)))
        assert abs(eta_full - eta_agg) <= 1e-10


class TestSimplifiedTable:
    @pytest.mark.parametrize("p", [None, (0.8, 0.2), (0.1, 0.9)])
    def test_table_matches_ideal_aggregate(self, family6, m6, p):
        c = family6.compliant if p is None else family6.chain(*p)
        table = simplified_rate_table(c, m6.topology)
        agg = ideal_aggregate(c, simplified_partition(c.space))
        np.testing.assert_allclose(simplified_rate_matrix(table), agg.Q, atol=1e-13)

    def test_departures_scale_with_gamma(self, m4):
        c = build_compliant(m4.topology, LAM, 2.5)
        table = simplified_rate_table(c, m4.topology)
        assert table["10,00"] == pytest.approx(table["_beta"]["10,00"] * 2.5)
        assert table["11,01"] == pytest.approx(table["_beta"]["11,01"] * 2.5)
        assert table["00,10"] == pytest.approx((m4.topology.m - 1) * LAM)


class TestExport:
    def test_dict(self, family4, tmp_path):
        agg = ideal_aggregate(family4.compliant, simplified_partition(family4.space))
        doc = aggregated_to_dict(agg, {"clock": "full"})
        assert doc["states"] == list(SIMPLIFIED_LABELS)
        assert doc["blocks"]["S1"] == ["{1}"]
        assert doc["clock"] == "full" and doc["model"] == "simplified"
        dump_aggregated(agg, tmp_path / "a.json")
        assert json.loads((tmp_path / "a.json").read_text())["pi"] == pytest.approx(agg.pi.tolist())
