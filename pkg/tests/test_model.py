"""Parameter construction, embedding assembly, and prediction heads."""

import numpy as np
import pytest

from tempograph import autodiff as ad
from tempograph import events as ev
from tempograph import model as md


def small_dims(**over):
    base = dict(d_m=6, d_e=1, d_phi1=4, d_phi2=3, d_ce=2, r=3, w=2,
                d_v=4, d_w=6, mae_layers=1, mae_heads=2, walk_heads=2,
                k=3, n_classes=2)
    base.update(over)
    return md.ModelDims(**base)


class TestBuild:
    def test_expected_parameter_names_exist(self):
        params, h = md.build_parameters(small_dims(), seed=0)
        names = set(params.params)
        for want in ["phi1.omega", "phi1.bias", "phi2.omega",
                     "memory_gru.w_z", "mae.l0.attn.w_q", "mae.l0.mlp.w1",
                     "nce.w1", "restart.w1", "walk.id.w1", "walk.gru.w_c",
                     "walk.attn.w_o", "link.w1", "link.b2", "node.w1"]:
            assert want in names, want

    def test_phi2_is_frozen_ladder_and_phi1_starts_there(self):
        dims = small_dims()
        params, h = md.build_parameters(dims, seed=0)
        by_name = params.params
        assert by_name["phi2.omega"].frozen
        np.testing.assert_allclose(by_name["phi2.omega"].tensor.data,
                                   ad.fixed_time_ladder(dims.d_phi2))
        np.testing.assert_allclose(by_name["phi1.omega"].tensor.data,
                                   ad.fixed_time_ladder(dims.d_phi1))
        assert not by_name["phi1.omega"].frozen
        assert not by_name["phi1.bias"].tensor.data.any()

    def test_weight_init_bounds_and_zero_biases(self):
        dims = small_dims()
        params, h = md.build_parameters(dims, seed=3)
        by_name = params.params
        w1 = by_name["link.w1"].tensor.data
        bound = 1.0 / np.sqrt(w1.shape[0])
        assert np.all(np.abs(w1) <= bound)
        assert w1.std() > 0
        assert not by_name["link.b1"].tensor.data.any()
        assert not by_name["mae.l0.mlp.b2"].tensor.data.any()

    def test_seed_determinism(self):
        pa, _ = md.build_parameters(small_dims(), seed=7)
        pb, _ = md.build_parameters(small_dims(), seed=7)
        pc, _ = md.build_parameters(small_dims(), seed=8)
        for a, b in zip(pa.params.values(), pb.params.values()):
            np.testing.assert_array_equal(a.tensor.data, b.tensor.data)
        diff = any(not np.array_equal(a.tensor.data, c.tensor.data)
                   for a, c in zip(pa.params.values(), pc.params.values()))
        assert diff

    def test_embedding_width(self):
        dims = small_dims()
        assert md.embedding_width(dims) == 6 + 3 * 2 + 6 + 1
        full = md.ModelDims(d_m=172, d_e=172, d_phi1=100, d_phi2=20,
                            d_ce=10, r=32, w=4, d_v=100, d_w=172,
                            mae_layers=1, mae_heads=2, walk_heads=4,
                            k=10, n_classes=2)
        assert md.embedding_width(full) == 665


class TestAssembly:
    def blocks(self, dims, n=2):
        h = ad.Tensor(np.full((n, dims.d_m), 1.0))
        ce = ad.Tensor(np.full((n, dims.r * dims.d_ce), 2.0))
        we = ad.Tensor(np.full((n, dims.d_w), 3.0))
        pr = ad.Tensor(np.full((n, 1), 0.25))
        return h, ce, we, pr

    def test_layout_order(self):
        dims = small_dims()
        emb = md.final_embedding(*self.blocks(dims), md.AblationFlags())
        assert emb.data.shape == (2, md.embedding_width(dims))
        row = emb.data[0]
        assert np.all(row[:6] == 1.0)
        assert np.all(row[6:12] == 2.0)
        assert np.all(row[12:18] == 3.0)
        assert row[18] == 0.25

    @pytest.mark.parametrize("flag,lo,hi", [
        ("no_mae", 0, 6), ("no_nce", 6, 12), ("no_walks", 12, 18),
        ("no_restart", 18, 19)])
    def test_ablations_zero_their_block(self, flag, lo, hi):
        dims = small_dims()
        emb = md.final_embedding(*self.blocks(dims),
                                 md.AblationFlags(**{flag: True}))
        assert emb.data.shape == (2, 19)
        assert not emb.data[:, lo:hi].any()
        other = np.ones(19, dtype=bool)
        other[lo:hi] = False
        assert np.all(emb.data[:, other] != 0)


class TestHeads:
    def test_link_zero_weights_give_half(self):
        head = md.HeadParams(
            w1=ad.Tensor(np.zeros((8, 4))), b1=ad.Tensor(np.zeros(4)),
            w2=ad.Tensor(np.zeros((4, 1))), b2=ad.Tensor(np.zeros(1)))
        rng = np.random.default_rng(0)
        u = ad.Tensor(rng.normal(size=(3, 4)))
        v = ad.Tensor(rng.normal(size=(3, 4)))
        out = md.predict_link(u, v, head)
        np.testing.assert_allclose(out.data, np.full((3, 1), 0.5))

    def test_link_is_direction_sensitive(self):
        rng = np.random.default_rng(1)
        head = md.HeadParams(
            w1=ad.Tensor(rng.normal(size=(8, 4))),
            b1=ad.Tensor(rng.normal(size=4)),
            w2=ad.Tensor(rng.normal(size=(4, 1))),
            b2=ad.Tensor(np.zeros(1)))
        u = ad.Tensor(rng.normal(size=(1, 4)))
        v = ad.Tensor(rng.normal(size=(1, 4)))
        uv = md.predict_link(u, v, head).data[0, 0]
        vu = md.predict_link(v, u, head).data[0, 0]
        assert abs(uv - vu) > 1e-6

    def test_node_label_rows_are_distributions(self):
        rng = np.random.default_rng(2)
        head = md.HeadParams(
            w1=ad.Tensor(rng.normal(size=(5, 4))),
            b1=ad.Tensor(rng.normal(size=4)),
            w2=ad.Tensor(rng.normal(size=(4, 3))),
            b2=ad.Tensor(np.zeros(3)))
        emb = ad.Tensor(rng.normal(size=(6, 5)))
        out = md.predict_node_label(emb, head)
        assert out.data.shape == (6, 3)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(6),
                                   atol=1e-12)
        assert np.all(out.data > 0)

    def test_grad_check_link_through_assembly(self):
        dims = small_dims(d_m=2, d_ce=1, r=2, d_w=2)
        rng = np.random.default_rng(3)
        params = ad.ParamGroup()
        head = md.HeadParams(
            w1=params.add("w1", rng.normal(size=(2 * 7, 4)) * 0.5).tensor,
            b1=params.add("b1", rng.normal(size=4) * 0.1).tensor,
            w2=params.add("w2", rng.normal(size=(4, 1)) * 0.5).tensor,
            b2=params.add("b2", np.zeros(1)).tensor)
        h = rng.normal(size=(2, 2))
        ce = rng.normal(size=(2, 2))
        we = rng.normal(size=(2, 2))
        pr = rng.uniform(0.1, 0.9, size=(2, 1))
        y = np.array([[1.0], [0.0]])

        def fn():
            eu = md.final_embedding(ad.Tensor(h), ad.Tensor(ce),
                                    ad.Tensor(we), ad.Tensor(pr),
                                    md.AblationFlags())
            ev_ = md.final_embedding(ad.Tensor(ce), ad.Tensor(h),
                                     ad.Tensor(we), ad.Tensor(pr),
                                     md.AblationFlags())
            return ad.bce_loss(md.predict_link(eu, ev_, head), y)

        assert ad.grad_check(fn, params) <= 1e-4


class TestDegreePrior:
    def test_frozen_degree_example(self):
        g = ev.build_graph([ev.Event(0, 1, 1.0, np.zeros(0)),
                            ev.Event(1, 2, 2.0, np.zeros(0)),
                            ev.Event(2, 3, 3.0, np.zeros(0)),
                            ev.Event(2, 4, 4.0, np.zeros(0)),
                            ev.Event(2, 5, 5.0, np.zeros(0))])
        out = md.degree_based_pr(g, np.array([0, 1, 2]))
        np.testing.assert_allclose(out, [0.75, 0.5, 0.0])

    def test_all_equal_degrees_give_zero(self):
        g = ev.build_graph([ev.Event(0, 1, 1.0, np.zeros(0))])
        out = md.degree_based_pr(g, np.array([0, 1]))
        np.testing.assert_allclose(out, [0.0, 0.0])
