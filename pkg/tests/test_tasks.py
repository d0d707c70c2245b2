"""Negative samplers, ranking metrics, and the pair-memory baseline."""

import numpy as np
import pytest
from scipy import stats

from tempograph import edgebank as eb
from tempograph import events as ev
from tempograph import metrics as mt
from tempograph import negatives as ng


def brute_force_ap(scores, labels):
    # walk distinct thresholds from above; a tie block is one step
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    total = 0.0
    for s in sorted(set(scores.tolist()), reverse=True):
        at_or_above = scores >= s
        tp = int(labels[at_or_above].sum())
        new_tp = tp - int(labels[scores > s].sum())
        total += new_tp * (tp / int(at_or_above.sum()))
    return total / n_pos


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


class TestAveragePrecision:
    def test_frozen_example(self):
        ap = mt.average_precision(np.array([0.9, 0.8, 0.7]),
                                  np.array([1, 0, 1]))
        assert abs(ap - 5.0 / 6.0) < 1e-12

    def test_perfect_and_inverted(self):
        s = np.array([0.9, 0.8, 0.2, 0.1])
        assert mt.average_precision(s, np.array([1, 1, 0, 0])) == 1.0
        got = mt.average_precision(s, np.array([0, 0, 1, 1]))
        assert abs(got - brute_force_ap(s, [0, 0, 1, 1])) < 1e-12

    def test_no_positives_raises(self):
        with pytest.raises(ValueError):
            mt.average_precision(np.array([0.5]), np.array([0]))

    def test_tie_block_is_one_precision_step(self):
        # every score equal: one block, precision n_pos/n for each hit
        ap = mt.average_precision(np.full(4, 0.3), np.array([1, 0, 1, 0]))
        assert abs(ap - 0.5) < 1e-12
        # label order inside the block must not matter
        ap2 = mt.average_precision(np.full(4, 0.3), np.array([0, 0, 1, 1]))
        assert abs(ap2 - 0.5) < 1e-12

    def test_random_instances_match_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[0] = 1
            got = mt.average_precision(scores, labels)
            assert abs(got - brute_force_ap(scores, labels)) < 1e-12


class TestAucRoc:
    def test_frozen_example(self):
        auc = mt.auc_roc(np.array([0.9, 0.8, 0.7]), np.array([1, 0, 1]))
        assert abs(auc - 0.5) < 1e-12

    def test_perfect_and_inverted(self):
        s = np.array([0.9, 0.8, 0.2, 0.1])
        assert mt.auc_roc(s, np.array([1, 1, 0, 0])) == 1.0
        assert mt.auc_roc(s, np.array([0, 0, 1, 1])) == 0.0

    def test_all_ties_give_half(self):
        auc = mt.auc_roc(np.full(6, 0.4), np.array([1, 0, 1, 0, 0, 1]))
        assert abs(auc - 0.5) < 1e-12

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            mt.auc_roc(np.array([0.5, 0.6]), np.array([1, 1]))

    def test_random_instances_match_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            scores = rng.choice([0.2, 0.4, 0.6, 0.8], size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[0] = 1
            if labels.sum() == n:
                labels[0] = 0
            got = mt.auc_roc(scores, labels)
            assert abs(got - brute_force_auc(scores, labels)) < 1e-12


class TestSpearman:
    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(5, 50))
            a = rng.choice([1.0, 2.0, 3.0, 4.0, 5.0], size=n)
            b = rng.choice([1.0, 2.0, 3.0], size=n) + 0.1 * a
            rho, p = mt.spearman_rho(a, b)
            want = stats.spearmanr(a, b)
            assert abs(rho - want.statistic) < 1e-12
            assert abs(p - want.pvalue) < 1e-9

    def test_perfect_monotone(self):
        rho, p = mt.spearman_rho(np.arange(10.0), np.arange(10.0) ** 3)
        assert abs(rho - 1.0) < 1e-12
        assert p < 1e-9

    def test_constant_input_raises(self):
        with pytest.raises(ValueError):
            mt.spearman_rho(np.ones(5), np.arange(5.0))


class TestNegativeSampler:
    def mk(self, strategy, train_pairs, eval_pairs=None, num_nodes=20,
           dst_id_start=10, seed=0):
        return ng.NegativeSampler(
            strategy=strategy, num_nodes=num_nodes,
            dst_id_start=dst_id_start,
            train_pairs=frozenset(train_pairs),
            eval_pairs=None if eval_pairs is None
            else frozenset(eval_pairs), seed=seed)

    def test_random_respects_dst_space(self):
        s = self.mk("random", [])
        src = np.arange(5)
        dst = np.full(5, 10)
        neg, fb = s.sample(src, dst, np.arange(5))
        assert fb == 0
        assert np.all((neg >= 10) & (neg < 20))

    def test_random_avoids_batch_positives(self):
        s = self.mk("random", [], num_nodes=12, dst_id_start=10)
        src = np.zeros(200, dtype=int)
        dst = np.full(200, 10)
        neg, _ = s.sample(src, dst, np.arange(200))
        assert np.all(neg == 11)

    def test_random_without_offset_uses_all_nodes(self):
        s = self.mk("random", [], num_nodes=6, dst_id_start=None, seed=3)
        neg, _ = s.sample(np.zeros(500, dtype=int), np.ones(500, dtype=int),
                          np.arange(500))
        assert neg.min() >= 0 and neg.max() <= 5
        assert len(np.unique(neg)) > 3

    def test_deterministic_per_event_stream(self):
        s1 = self.mk("random", [], seed=5)
        s2 = self.mk("random", [], seed=5)
        src = np.arange(8)
        dst = np.full(8, 10)
        a, _ = s1.sample(src, dst, np.arange(8))
        b, _ = s2.sample(src, dst, np.arange(8))
        np.testing.assert_array_equal(a, b)
        c, _ = s1.sample(src, dst, np.arange(100, 108))
        assert not np.array_equal(a, c)

    def test_historical_uses_train_history(self):
        s = self.mk("historical", [(0, 15), (0, 16), (1, 17)])
        neg, fb = s.sample(np.array([0]), np.array([15]), np.array([0]))
        assert fb == 0
        assert neg[0] == 16

    def test_historical_excludes_batch_and_falls_back(self):
        s = self.mk("historical", [(0, 15)])
        # only historical dst of 0 is its own batch positive -> fallback
        neg, fb = s.sample(np.array([0]), np.array([15]), np.array([0]))
        assert fb == 1
        assert 10 <= neg[0] < 20 and neg[0] != 15

    def test_historical_no_history_falls_back(self):
        s = self.mk("historical", [(3, 12)])
        neg, fb = s.sample(np.array([7]), np.array([11]), np.array([4]))
        assert fb == 1

    def test_inductive_pool_is_eval_minus_train(self):
        s = self.mk("inductive", [(0, 15)],
                    eval_pairs=[(0, 15), (0, 16), (0, 17)])
        seen = set()
        for eidx in range(60):
            neg, fb = s.sample(np.array([0]), np.array([17]),
                               np.array([eidx]))
            assert fb == 0
            seen.add(int(neg[0]))
        # (0,15) is train history, (0,17) is the batch positive
        assert seen == {16}

    def test_inductive_empty_pool_falls_back(self):
        s = self.mk("inductive", [(0, 15)], eval_pairs=[(0, 15)])
        neg, fb = s.sample(np.array([0]), np.array([15]), np.array([2]))
        assert fb == 1


class TestEdgeBank:
    def test_membership_is_directed(self):
        bank = eb.EdgeBank()
        bank.add_pairs(np.array([1]), np.array([2]))
        assert bank.predict(np.array([1]), np.array([2]))[0] == 1.0
        assert bank.predict(np.array([2]), np.array([1]))[0] == 0.0
        assert bank.predict(np.array([1]), np.array([3]))[0] == 0.0

    def test_absorbs_as_it_scores(self):
        bank = eb.EdgeBank()
        assert bank.predict(np.array([4]), np.array([5]))[0] == 0.0
        bank.add_pairs(np.array([4]), np.array([5]))
        assert bank.predict(np.array([4]), np.array([5]))[0] == 1.0

    def test_periodic_stream_scores_perfectly(self):
        evs = []
        t = 0.0
        for rep in range(6):
            for i in range(5):
                evs.append(ev.Event(i, 10 + i, t, np.zeros(0)))
                t += 1.0
        split = ev.chrono_split(evs, (0.7, 0.15, 0.15))
        res = eb.evaluate_edgebank(evs, split, strategy="random", seed=0,
                                   batch_size=16, num_nodes=20,
                                   dst_id_start=10)
        assert res["ap"] == 1.0
        assert res["auc"] == 1.0

    def test_unseen_positives_rank_below_seen_negatives(self):
        # dst space {10, 11}: test positives hit 11 (never seen), so the
        # collision-resampled negatives must be 10 (always seen). Ranking
        # is [neg, neg, pos, pos]; the score-0 tie block holds both
        # positives at precision 2/4, giving AP exactly 0.5.
        evs = [ev.Event(i % 2, 10, float(i), np.zeros(0)) for i in range(8)]
        evs += [ev.Event(0, 11, 8.0, np.zeros(0)),
                ev.Event(1, 11, 9.0, np.zeros(0))]
        split = ev.SplitSpec(n=10, train_end=7, val_end=8)
        res = eb.evaluate_edgebank(evs, split, strategy="random", seed=1,
                                   batch_size=4, num_nodes=12,
                                   dst_id_start=10)
        assert abs(res["ap"] - 0.5) < 1e-12
        assert res["auc"] == 0.0
