"""Event-store tests: CSV loading, graph construction, temporal neighbor
queries, chronological splits, inductive masking."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempograph import events as ev


def write_csv(tmp_path, body, name="d.csv"):
    p = tmp_path / name
    p.write_text("user,item,timestamp,state_label,features\n" + body)
    return p


class TestLoader:
    def test_two_row_example_offsets_items(self, tmp_path):
        p = write_csv(tmp_path, "0,0,1.0,0\n1,0,2.0,0\n")
        out = ev.load_jodie_csv(p)
        assert [(e.src, e.dst, e.t) for e in out] == [(0, 2, 1.0), (1, 2, 2.0)]
        assert all(e.edge_feat.size == 0 for e in out)
        assert all(e.state_label == 0 for e in out)

    def test_features_parsed(self, tmp_path):
        p = write_csv(tmp_path, "0,0,1.0,1,0.5,-1.5\n")
        out = ev.load_jodie_csv(p)
        np.testing.assert_allclose(out[0].edge_feat, [0.5, -1.5])
        assert out[0].state_label == 1

    def test_unsorted_rows_are_stably_sorted(self, tmp_path):
        p = write_csv(tmp_path, "0,0,5.0,0\n1,1,1.0,0\n2,0,5.0,0\n")
        out = ev.load_jodie_csv(p)
        assert [e.t for e in out] == [1.0, 5.0, 5.0]
        # Ties keep file order: src 0 before src 2.
        assert [e.src for e in out] == [1, 0, 2]

    def test_malformed_row_reports_line_number(self, tmp_path):
        p = write_csv(tmp_path, "0,0,1.0,0\n0,not_a_number,2.0,0\n")
        with pytest.raises(ValueError, match="line 3"):
            ev.load_jodie_csv(p)

    def test_inconsistent_feature_arity_rejected(self, tmp_path):
        p = write_csv(tmp_path, "0,0,1.0,0,1.0\n0,0,2.0,0,1.0,2.0\n")
        with pytest.raises(ValueError, match="line 3"):
            ev.load_jodie_csv(p)

    def test_missing_columns_rejected(self, tmp_path):
        p = write_csv(tmp_path, "0,0\n")
        with pytest.raises(ValueError, match="line 2"):
            ev.load_jodie_csv(p)


def mk_events(triples, d=0):
    return [ev.Event(s, t_dst, float(t), np.zeros(d)) for s, t_dst, t in triples]


class TestGraph:
    def test_single_event_adjacency_both_directions(self):
        g = ev.build_graph(mk_events([(0, 1, 5)]))
        assert g.num_nodes == 2
        assert list(g.adj_nbr[0]) == [1] and list(g.adj_t[0]) == [5.0]
        assert list(g.adj_nbr[1]) == [0] and list(g.adj_t[1]) == [5.0]

    def test_adjacency_entry_count_is_twice_events(self):
        g = ev.build_graph(mk_events([(0, 1, 1), (1, 2, 2), (0, 2, 3), (2, 2, 4)]))
        total = sum(len(g.adj_nbr[u]) for u in range(g.num_nodes))
        assert total == 2 * 4  # self-loop still contributes two entries

    def test_zero_dim_edge_features_promoted_to_dim_one_zeros(self):
        g = ev.build_graph(mk_events([(0, 1, 1)]))
        assert g.edge_feat_dim == 1
        np.testing.assert_array_equal(g.edge_feats, np.zeros((1, 1)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ev.build_graph([])

    def test_adjacency_sorted_with_ties_by_event_index(self):
        evs = mk_events([(0, 1, 2), (0, 2, 2), (0, 3, 1)])
        g = ev.build_graph(evs)
        assert list(g.adj_nbr[0]) == [3, 1, 2]
        assert list(g.adj_eidx[0]) == [0, 1, 2]  # indices after the sort


class TestNeighborsBefore:
    def setup_method(self):
        self.g = ev.build_graph(
            mk_events([(0, 1, 1), (0, 2, 2), (0, 3, 3), (4, 5, 4)]))

    def test_recent_takes_latest_before_t_ascending(self):
        s = ev.neighbors_before(self.g, 0, 2.5, k=2, strategy="recent")
        assert list(s.nodes[s.mask]) == [1, 2]
        assert list(s.times[s.mask]) == [1.0, 2.0]

    def test_strictly_before(self):
        s = ev.neighbors_before(self.g, 0, 2.0, k=10, strategy="recent")
        assert list(s.nodes[s.mask]) == [1]

    def test_padding_marked(self):
        s = ev.neighbors_before(self.g, 0, 10.0, k=5, strategy="recent")
        assert s.mask.sum() == 3 and len(s.mask) == 5
        assert not s.mask[3] and not s.mask[4]

    def test_no_history_gives_all_padding(self):
        s = ev.neighbors_before(self.g, 3, 1.0, k=4, strategy="recent")
        assert s.mask.sum() == 0

    def test_uniform_samples_with_replacement_k_entries(self):
        rng = np.random.default_rng(0)
        s = ev.neighbors_before(self.g, 0, 10.0, k=8, strategy="uniform", rng=rng)
        assert s.mask.all() and len(s.nodes) == 8
        assert set(s.nodes) <= {1, 2, 3}
        assert np.all(np.diff(s.times) >= 0)  # ascending

    def test_uniform_empirical_frequencies_are_uniform(self):
        # One big with-replacement draw; chi-square at p > 0.01.
        from scipy.stats import chisquare
        rng = np.random.default_rng(7)
        s = ev.neighbors_before(self.g, 0, 10.0, k=100_000,
                                strategy="uniform", rng=rng)
        counts = [np.sum(s.nodes == u) for u in (1, 2, 3)]
        assert chisquare(counts).pvalue > 0.01

    def test_recent_is_deterministic_without_rng(self):
        a = ev.neighbors_before(self.g, 0, 3.5, k=2, strategy="recent")
        b = ev.neighbors_before(self.g, 0, 3.5, k=2, strategy="recent")
        np.testing.assert_array_equal(a.nodes, b.nodes)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 30))
    @settings(max_examples=25, deadline=None)
    def test_causality_all_sampled_strictly_before(self, seed, k):
        rng = np.random.default_rng(seed)
        n_ev = int(rng.integers(1, 40))
        evs = mk_events([
            (int(rng.integers(0, 6)), int(rng.integers(0, 6)), float(i))
            for i in range(n_ev)])
        g = ev.build_graph(evs)
        u = int(rng.integers(0, g.num_nodes))
        t = float(rng.uniform(0, n_ev + 1))
        for strat in ("recent", "uniform"):
            s = ev.neighbors_before(g, u, t, k=k, strategy=strat,
                                    rng=np.random.default_rng(seed))
            assert np.all(s.times[s.mask] < t)


class TestChronoSplit:
    def test_n10_gives_7_1_2(self):
        evs = mk_events([(0, 1, i) for i in range(10)])
        sp = ev.chrono_split(evs)
        assert (sp.train_end, sp.val_end - sp.train_end, sp.n - sp.val_end) \
            == (7, 1, 2)

    def test_n100_gives_70_15_15(self):
        evs = mk_events([(0, 1, i) for i in range(100)])
        sp = ev.chrono_split(evs)
        assert (sp.train_end, sp.val_end - sp.train_end, sp.n - sp.val_end) \
            == (70, 15, 15)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            ev.chrono_split(mk_events([(0, 1, i) for i in range(3)]))
        with pytest.raises(ValueError):
            ev.chrono_split(mk_events([(0, 1, 0)]))

    def test_partition_is_exact(self):
        evs = mk_events([(0, 1, i) for i in range(57)])
        sp = ev.chrono_split(evs)
        tr, va, te = sp.slices(evs)
        assert tr + va + te == evs

    def test_json_roundtrip(self, tmp_path):
        evs = mk_events([(0, 1, i) for i in range(20)])
        sp = ev.chrono_split(evs)
        path = tmp_path / "s.json"
        sp.to_json(path)
        sp2 = ev.SplitSpec.from_json(path)
        assert sp2 == sp


class TestInductiveMask:
    def _stream(self):
        # train touches 0..3, val/test touch 2..5
        return mk_events([(0, 1, 0), (2, 3, 1), (0, 2, 2), (1, 3, 3),
                          (0, 1, 4), (2, 3, 5), (0, 3, 6),
                          (2, 4, 7), (3, 5, 8), (4, 5, 9)])

    def test_fraction_zero_masks_nothing(self):
        evs = self._stream()
        sp = ev.chrono_split(evs)
        masked, train = ev.mark_inductive_nodes(evs, sp, fraction=0.0, seed=0)
        assert masked == set()
        assert train == sp.slices(evs)[0]

    def test_masked_count_is_floor_of_fraction(self):
        evs = self._stream()
        sp = ev.chrono_split(evs)
        # val/test events: indices 7..9 touching {2,3,4,5} -> floor(0.5*4)=2
        masked, _ = ev.mark_inductive_nodes(evs, sp, fraction=0.5, seed=1)
        assert len(masked) == 2 and masked <= {2, 3, 4, 5}

    def test_filtered_train_never_touches_masked(self):
        evs = self._stream()
        sp = ev.chrono_split(evs)
        masked, train = ev.mark_inductive_nodes(evs, sp, fraction=0.5, seed=3)
        for e in train:
            assert e.src not in masked and e.dst not in masked

    def test_deterministic_under_seed(self):
        evs = self._stream()
        sp = ev.chrono_split(evs)
        a = ev.mark_inductive_nodes(evs, sp, fraction=0.5, seed=9)[0]
        b = ev.mark_inductive_nodes(evs, sp, fraction=0.5, seed=9)[0]
        assert a == b
