import json
import math

import numpy as np
import pytest

from mcmot import gtn, numeric as nm
from mcmot.gtn import (
    ConfigError,
    GtnConfig,
    GtnParams,
    cross_attention_stack,
    decode_track_outputs,
    init_params,
    load_checkpoint,
    save_checkpoint,
    score_edges,
    self_attention_stack,
    symmetrize_edges,
)
from mcmot.numeric import Tensor

EPS = 1e-5  # layer-norm epsilon, mirrored in the oracle


def tiny_config(**overrides):
    base = dict(
        feature_dim=2,
        num_cameras=2,
        model_dim=4,
        heads=2,
        self_layers=1,
        cross_layers=1,
        ffn_hidden=3,
        classes=("car",),
    )
    base.update(overrides)
    return GtnConfig(**base)


# ---------------------------------------------------------------------------
# independent oracle helpers (plain numpy, no calls into the gtn internals)
# ---------------------------------------------------------------------------

def oracle_layer_norm(x, g, b):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return g * (x - mu) / math.sqrt(var + EPS) + b


def oracle_ffn(x, w1, b1, w2, b2):
    return np.maximum(0.0, x @ w1.T + b1) @ w2.T + b2


def oracle_self_attention(h, dists, fsims, p, dz, heads):
    """Step-by-step single-layer evaluation over ordered node pairs."""
    n = h.shape[0]
    dh = dz // heads
    e0 = np.array(
        [[dists[k, j], fsims[k, j]] for k in range(n) for j in range(n)]
    ) @ p["edge_embed.w"].T
    h_heads, gate_cols = [], []
    for i in range(heads):
        q = p["self0.q"][i * dh:(i + 1) * dh]
        k_ = p["self0.k"][i * dh:(i + 1) * dh]
        v = p["self0.v"][i * dh:(i + 1) * dh]
        e = p["self0.e"][i * dh:(i + 1) * dh]
        raw = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                raw[a, b] = float(
                    np.sum((q @ h[a]) * (k_ @ h[b]) * (e @ e0[a * n + b]))
                ) / math.sqrt(dh)
        attn = np.exp(raw - raw.max(axis=1, keepdims=True))
        attn = attn / attn.sum(axis=1, keepdims=True)
        h_heads.append(np.stack([sum(attn[a, b] * (v @ h[b]) for b in range(n))
                                 for a in range(n)]))
        gate_cols.append(raw.reshape(-1))
    h_attn = np.concatenate(h_heads, axis=1) @ p["self0.o_h"].T
    e_attn = np.stack(gate_cols, axis=1) @ p["self0.o_e"].T
    skip = h @ p["self0.skip"].T if "self0.skip" in p else h
    h2 = np.stack([
        oracle_layer_norm(h_attn[a] + skip[a], p["self0.norm1_h.g"][0], p["self0.norm1_h.b"][0])
        for a in range(n)
    ])
    h_out = np.stack([
        oracle_layer_norm(
            h2[a] + oracle_ffn(h2[a], p["self0.ffn_h.w1"], p["self0.ffn_h.b1"][0],
                               p["self0.ffn_h.w2"], p["self0.ffn_h.b2"][0]),
            p["self0.norm2_h.g"][0], p["self0.norm2_h.b"][0])
        for a in range(n)
    ])
    e2 = np.stack([
        oracle_layer_norm(e_attn[r] + e0[r], p["self0.norm1_e.g"][0], p["self0.norm1_e.b"][0])
        for r in range(n * n)
    ])
    e_out = np.stack([
        oracle_layer_norm(
            e2[r] + oracle_ffn(e2[r], p["self0.ffn_e.w1"], p["self0.ffn_e.b1"][0],
                               p["self0.ffn_e.w2"], p["self0.ffn_e.b2"][0]),
            p["self0.norm2_e.g"][0], p["self0.norm2_e.b"][0])
        for r in range(n * n)
    ])
    return h_out, e_out


def oracle_cross_attention(xt, xo, p, dz, heads):
    dh = dz // heads
    nt, no = xt.shape[0], xo.shape[0]
    outs = []
    for i in range(heads):
        q = p["cross0.q"][i * dh:(i + 1) * dh]
        k_ = p["cross0.k"][i * dh:(i + 1) * dh]
        v = p["cross0.v"][i * dh:(i + 1) * dh]
        raw = np.array([[float((q @ xt[a]) @ (k_ @ xo[b])) / math.sqrt(dh)
                         for b in range(no)] for a in range(nt)])
        attn = np.exp(raw - raw.max(axis=1, keepdims=True))
        attn = attn / attn.sum(axis=1, keepdims=True)
        outs.append(np.stack([sum(attn[a, b] * (v @ xo[b]) for b in range(no))
                              for a in range(nt)]))
    z1 = np.concatenate(outs, axis=1) @ p["cross0.o_z"].T
    z2 = np.stack([oracle_layer_norm(z1[a] + xt[a], p["cross0.norm1.g"][0],
                                     p["cross0.norm1.b"][0]) for a in range(nt)])
    return np.stack([
        oracle_layer_norm(
            z2[a] + oracle_ffn(z2[a], p["cross0.ffn.w1"], p["cross0.ffn.b1"][0],
                               p["cross0.ffn.w2"], p["cross0.ffn.b2"][0]),
            p["cross0.norm2.g"][0], p["cross0.norm2.b"][0])
        for a in range(nt)
    ])


def param_arrays(params: GtnParams) -> dict:
    return {name: params[name].value.copy() for name in params.names()}


class TestConfig:
    def test_input_dim_default(self):
        cfg = GtnConfig(feature_dim=8, num_cameras=4)
        assert cfg.input_dim == 8 + 4 + 3

    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError, match="divisible"):
            GtnConfig(model_dim=6, heads=4)

    def test_roundtrip(self):
        cfg = tiny_config()
        assert GtnConfig.from_dict(cfg.to_dict()) == cfg

    def test_class_index(self):
        cfg = tiny_config(classes=("car", "truck"))
        assert cfg.class_index("truck") == 1
        assert cfg.logit_dim == 3
        with pytest.raises(ConfigError, match="unknown class"):
            cfg.class_index("boat")


class TestSelfAttention:
    def test_single_node_softmax_weight_one(self):
        cfg = tiny_config(input_dim=4)
        params = init_params(cfg, seed=1)
        h = np.array([[0.3, -0.2, 0.5, 1.0]])
        dists = np.zeros((1, 1))
        fsims = np.ones((1, 1))
        h_out, e_out = self_attention_stack(h, dists, fsims, params)
        assert h_out.shape == (1, 4)
        assert e_out.shape == (1, 4)
        # oracle confirms: with one key the attention weight is exactly 1
        p = param_arrays(params)
        oh, oe = oracle_self_attention(h, dists, fsims, p, dz=4, heads=2)
        np.testing.assert_allclose(h_out.value, oh, atol=1e-12)
        np.testing.assert_allclose(e_out.value, oe, atol=1e-12)

    def test_zero_edge_embeddings_give_uniform_attention(self):
        # zeroing the distance-embedding weight makes every raw score zero
        cfg = tiny_config(input_dim=4, heads=1)
        params = init_params(cfg, seed=2)
        params["edge_embed.w"].value[...] = 0.0
        rng = np.random.default_rng(3)
        h = Tensor(rng.standard_normal((3, 4)))
        e = gtn.initial_edge_embeddings(
            rng.uniform(1, 5, size=(3, 3)), rng.uniform(-1, 1, size=(3, 3)), params
        )
        dh = cfg.head_dim
        qh = nm.matmul(h, nm.transpose(nm.slice_rows(params["self0.q"], 0, dh)))
        kh = nm.matmul(h, nm.transpose(nm.slice_rows(params["self0.k"], 0, dh)))
        ee = nm.matmul(e, nm.transpose(nm.slice_rows(params["self0.e"], 0, dh)))
        idx_k = np.repeat(np.arange(3), 3)
        idx_j = np.tile(np.arange(3), 3)
        raw = nm.sum_cols(nm.mul(nm.mul(nm.gather_rows(qh, idx_k), nm.gather_rows(kh, idx_j)), ee))
        np.testing.assert_array_equal(raw.value, np.zeros((9, 1)))
        attn = nm.softmax_rows(nm.reshape(raw, 3, 3))
        np.testing.assert_allclose(attn.value, np.full((3, 3), 1 / 3), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        cfg = tiny_config(input_dim=6, model_dim=4, heads=2)
        params = init_params(cfg, seed=seed)
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(2, 6))
        h = rng.standard_normal((n, 6))
        dists = np.abs(rng.standard_normal((n, n)))
        dists = (dists + dists.T) / 2
        np.fill_diagonal(dists, 0.0)
        fsims = np.clip(rng.standard_normal((n, n)), -1, 1)
        fsims = (fsims + fsims.T) / 2
        h_out, e_out = self_attention_stack(h, dists, fsims, params)
        oh, oe = oracle_self_attention(h, dists, fsims, param_arrays(params), dz=4, heads=2)
        np.testing.assert_allclose(h_out.value, oh, atol=1e-10)
        np.testing.assert_allclose(e_out.value, oe, atol=1e-10)

    def test_two_node_single_head_hand_set(self):
        cfg = tiny_config(input_dim=2, model_dim=2, heads=1, ffn_hidden=2)
        params = init_params(cfg, seed=0)
        # hand-set every 2x2 block to small fixed values
        fixed = {
            "edge_embed.w": [[0.5, -0.3], [-0.25, 0.4]],
            "self0.q": [[1.0, 0.0], [0.0, 1.0]],
            "self0.k": [[0.5, 0.5], [-0.5, 0.5]],
            "self0.v": [[1.0, 1.0], [0.0, 1.0]],
            "self0.e": [[1.0, 0.0], [1.0, 1.0]],
            "self0.o_h": [[1.0, 0.5], [0.0, 1.0]],
            "self0.o_e": [[1.0], [0.5]],
            "self0.ffn_h.w1": [[0.3, -0.2], [0.1, 0.4]],
            "self0.ffn_h.w2": [[0.2, 0.1], [-0.3, 0.5]],
            "self0.ffn_e.w1": [[-0.1, 0.2], [0.3, 0.1]],
            "self0.ffn_e.w2": [[0.4, -0.2], [0.1, 0.3]],
        }
        for name, value in fixed.items():
            params[name].value[...] = np.asarray(value)
        h = np.array([[1.0, 2.0], [-1.0, 0.5]])
        dists = np.array([[0.0, 3.0], [3.0, 0.0]])
        fsims = np.array([[1.0, 0.2], [0.2, 1.0]])
        h_out, e_out = self_attention_stack(h, dists, fsims, params)
        oh, oe = oracle_self_attention(h, dists, fsims, param_arrays(params), dz=2, heads=1)
        np.testing.assert_allclose(h_out.value, oh, atol=1e-12)
        np.testing.assert_allclose(e_out.value, oe, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_permutation_equivariance_exact(self, seed):
        cfg = tiny_config(input_dim=5, model_dim=4, heads=2, self_layers=2)
        params = init_params(cfg, seed=seed)
        rng = np.random.default_rng(200 + seed)
        n = int(rng.integers(3, 8))
        h = rng.standard_normal((n, 5))
        dists = np.abs(rng.standard_normal((n, n)))
        dists = (dists + dists.T) / 2
        np.fill_diagonal(dists, 0.0)
        fsims = np.clip(rng.standard_normal((n, n)), -1, 1)
        fsims = (fsims + fsims.T) / 2
        perm = rng.permutation(n)
        h_out, e_out = self_attention_stack(h, dists, fsims, params)
        hp_out, ep_out = self_attention_stack(
            h[perm], dists[np.ix_(perm, perm)], fsims[np.ix_(perm, perm)], params
        )
        np.testing.assert_array_equal(hp_out.value, h_out.value[perm])
        pair_perm = (perm[:, None] * n + perm[None, :]).reshape(-1)
        np.testing.assert_array_equal(ep_out.value, e_out.value[pair_perm])

    def test_symmetrize_edges(self):
        rng = np.random.default_rng(7)
        n = 3
        e = Tensor(rng.standard_normal((n * n, 4)))
        sym = symmetrize_edges(e, n).value
        for k in range(n):
            for j in range(n):
                np.testing.assert_allclose(
                    sym[k * n + j], (e.value[k * n + j] + e.value[j * n + k]) / 2
                )

    def test_dimension_mismatch_names_layer(self):
        cfg = tiny_config(input_dim=4)
        params = init_params(cfg, seed=0)
        with pytest.raises(nm.ShapeError, match="layer 0"):
            gtn.self_attention_forward(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 4))), params, 0
            )

    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_layer_count_configurable(self, layers):
        cfg = tiny_config(input_dim=5, self_layers=layers, cross_layers=layers)
        params = init_params(cfg, seed=3)
        rng = np.random.default_rng(layers)
        h = rng.standard_normal((4, 5))
        dists = np.abs(rng.standard_normal((4, 4)))
        np.fill_diagonal(dists, 0.0)
        h_out, e_out = self_attention_stack(h, dists, np.eye(4), params)
        assert np.all(np.isfinite(h_out.value)) and np.all(np.isfinite(e_out.value))
        z = cross_attention_stack(
            Tensor(rng.standard_normal((2, 4))), Tensor(rng.standard_normal((3, 4))), params
        )
        assert np.all(np.isfinite(z.value))


class TestCrossAttention:
    def test_single_detection_full_attention(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=4)
        rng = np.random.default_rng(5)
        xt = Tensor(rng.standard_normal((3, 4)))
        xo = Tensor(rng.standard_normal((1, 4)))
        # with one key, softmax weight is one: attention output equals V x_o
        dh = cfg.head_dim
        for i in range(cfg.heads):
            vh = nm.matmul(xo, nm.transpose(
                nm.slice_rows(params["cross0.v"], i * dh, (i + 1) * dh)))
            qh = nm.matmul(xt, nm.transpose(
                nm.slice_rows(params["cross0.q"], i * dh, (i + 1) * dh)))
            kh = nm.matmul(xo, nm.transpose(
                nm.slice_rows(params["cross0.k"], i * dh, (i + 1) * dh)))
            attn = nm.softmax_rows(nm.matmul(qh, nm.transpose(kh)) * (1 / np.sqrt(dh)))
            np.testing.assert_array_equal(attn.value, np.ones((3, 1)))
            out = nm.attention_apply(attn, vh)
            np.testing.assert_allclose(out.value, np.repeat(vh.value, 3, axis=0), atol=1e-15)

    def test_identical_detections_uniform_attention(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=6)
        rng = np.random.default_rng(6)
        xt = rng.standard_normal((2, 4))
        row = rng.standard_normal(4)
        xo = np.tile(row, (4, 1))
        dh = cfg.head_dim
        qh = nm.matmul(Tensor(xt), nm.transpose(nm.slice_rows(params["cross0.q"], 0, dh)))
        kh = nm.matmul(Tensor(xo), nm.transpose(nm.slice_rows(params["cross0.k"], 0, dh)))
        attn = nm.softmax_rows(nm.matmul(qh, nm.transpose(kh)) * (1 / np.sqrt(dh)))
        np.testing.assert_allclose(attn.value, np.full((2, 4), 0.25), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        cfg = tiny_config(model_dim=4, heads=2)
        params = init_params(cfg, seed=seed)
        rng = np.random.default_rng(300 + seed)
        xt = rng.standard_normal((1, 4))
        xo = rng.standard_normal((2, 4))
        z = cross_attention_stack(Tensor(xt), Tensor(xo), params)
        oracle = oracle_cross_attention(xt, xo, param_arrays(params), dz=4, heads=2)
        np.testing.assert_allclose(z.value, oracle, atol=1e-10)

    def test_no_detections_ffn_only_path(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=7)
        rng = np.random.default_rng(7)
        xt = rng.standard_normal((3, 4))
        z = cross_attention_stack(Tensor(xt), None, params)
        assert z.shape == (3, 4)
        # oracle: per layer, FFN + second norm only
        p = param_arrays(params)
        expect = np.stack([
            oracle_layer_norm(
                xt[a] + oracle_ffn(xt[a], p["cross0.ffn.w1"], p["cross0.ffn.b1"][0],
                                   p["cross0.ffn.w2"], p["cross0.ffn.b2"][0]),
                p["cross0.norm2.g"][0], p["cross0.norm2.b"][0])
            for a in range(3)
        ])
        np.testing.assert_allclose(z.value, expect, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_key_permutation_invariance_exact(self, seed):
        cfg = tiny_config(model_dim=4, heads=2, cross_layers=2)
        params = init_params(cfg, seed=seed)
        rng = np.random.default_rng(400 + seed)
        xt = rng.standard_normal((3, 4))
        xo = rng.standard_normal((int(rng.integers(2, 7)), 4))
        perm = rng.permutation(xo.shape[0])
        z = cross_attention_stack(Tensor(xt), Tensor(xo), params)
        zp = cross_attention_stack(Tensor(xt), Tensor(xo[perm]), params)
        np.testing.assert_array_equal(z.value, zp.value)


class TestAttentionRowSums:
    def test_rows_sum_to_one_both_stacks(self):
        cfg = tiny_config(input_dim=5)
        params = init_params(cfg, seed=8)
        rng = np.random.default_rng(8)
        n = 6
        h = Tensor(rng.standard_normal((n, 5)))
        e = gtn.initial_edge_embeddings(np.abs(rng.standard_normal((n, n))),
                                        np.clip(rng.standard_normal((n, n)), -1, 1), params)
        dh = cfg.head_dim
        idx_k = np.repeat(np.arange(n), n)
        idx_j = np.tile(np.arange(n), n)
        for i in range(cfg.heads):
            lo, hi = i * dh, (i + 1) * dh
            qh = nm.matmul(h, nm.transpose(nm.slice_rows(params["self0.q"], lo, hi)))
            kh = nm.matmul(h, nm.transpose(nm.slice_rows(params["self0.k"], lo, hi)))
            ee = nm.matmul(e, nm.transpose(nm.slice_rows(params["self0.e"], lo, hi)))
            raw = nm.sum_cols(nm.mul(nm.mul(nm.gather_rows(qh, idx_k),
                                            nm.gather_rows(kh, idx_j)), ee))
            attn = nm.softmax_rows(nm.reshape(raw, n, n))
            np.testing.assert_allclose(attn.value.sum(axis=1), np.ones(n), atol=1e-9)


class TestDecodeHeads:
    def test_zero_weights_keep_state(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=9)
        for name in list(params.names()):
            if name.startswith("head."):
                params[name].value[...] = 0.0
        z = Tensor(np.zeros((2, 4)))
        prev_loc = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        prev_size = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 1.5]])
        prev_yaw = np.array([0.3, -0.7])
        pred = decode_track_outputs(z, prev_loc, prev_size, prev_yaw, params)
        np.testing.assert_array_equal(pred.location.value, prev_loc)
        np.testing.assert_array_equal(pred.size.value, prev_size)  # multiplier exp(0)=1
        np.testing.assert_array_equal(pred.yaw.value.ravel(), prev_yaw)

    def test_bias_only_heads_constant_decode(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=10)
        for name in list(params.names()):
            if name.startswith("head.") and name.endswith(".w"):
                params[name].value[...] = 0.0
        params["head.loc.b"].value[...] = np.array([[0.5, -0.5, 1.0]])
        params["head.size.b"].value[...] = np.log(np.array([[2.0, 1.0, 0.5]]))
        params["head.yaw.b"].value[...] = 0.25
        z = Tensor(np.random.default_rng(0).standard_normal((1, 4)))
        pred = decode_track_outputs(z, np.array([[1.0, 1.0, 1.0]]),
                                    np.array([[2.0, 2.0, 2.0]]), np.array([0.0]), params)
        np.testing.assert_allclose(pred.location.value, [[1.5, 0.5, 2.0]])
        np.testing.assert_allclose(pred.size.value, [[4.0, 2.0, 1.0]])
        np.testing.assert_allclose(pred.yaw.value, [[0.25]])

    @pytest.mark.parametrize("seed", range(5))
    def test_random_heads_match_affine_oracle(self, seed):
        cfg = tiny_config()
        params = init_params(cfg, seed=seed)
        rng = np.random.default_rng(500 + seed)
        z = rng.standard_normal((3, 4))
        prev_loc = rng.uniform(-5, 5, size=(3, 3))
        prev_size = rng.uniform(0.5, 3.0, size=(3, 3))
        prev_yaw = rng.uniform(-np.pi, np.pi, size=3)
        pred = decode_track_outputs(Tensor(z), prev_loc, prev_size, prev_yaw, params)
        p = param_arrays(params)
        np.testing.assert_allclose(
            pred.location.value, prev_loc + z @ p["head.loc.w"].T + p["head.loc.b"], atol=1e-12
        )
        np.testing.assert_allclose(
            pred.size.value, prev_size * np.exp(z @ p["head.size.w"].T + p["head.size.b"]),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            pred.yaw.value.ravel(),
            prev_yaw + (z @ p["head.yaw.w"].T + p["head.yaw.b"]).ravel(), atol=1e-12,
        )
        assert np.all(pred.size.value > 0)


class TestEdgeScorer:
    def test_zero_weights_give_half(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=11)
        params["scorer.w"].value[...] = 0.0
        params["scorer.b"].value[...] = 0.0
        rng = np.random.default_rng(11)
        s = score_edges(params, Tensor(rng.standard_normal((3, 4))),
                        Tensor(rng.standard_normal((3, 4))),
                        Tensor(rng.standard_normal((3, 4))))
        np.testing.assert_allclose(s.value, np.full((3, 1), 0.5))

    def test_crafted_bias_logit_gap(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=12)
        params["scorer.w"].value[...] = 0.0
        params["scorer.b"].value[...] = np.array([[-10.0, 10.0]])
        s = score_edges(params, Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))),
                        Tensor(np.zeros((1, 4))))
        assert abs(s.item() - 1.0) < 1e-4  # sigmoid of a 20 logit gap

    def test_symmetric_under_swap(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=13)
        rng = np.random.default_rng(13)
        hi = Tensor(rng.standard_normal((4, 4)))
        hj = Tensor(rng.standard_normal((4, 4)))
        e = Tensor(rng.standard_normal((4, 4)))
        s_fwd = score_edges(params, hi, hj, e).value
        s_bwd = score_edges(params, hj, hi, e).value
        np.testing.assert_allclose(s_fwd, s_bwd, atol=1e-15)

    def test_probability_range(self):
        cfg = tiny_config()
        params = init_params(cfg, seed=14)
        rng = np.random.default_rng(14)
        s = score_edges(params, Tensor(rng.standard_normal((50, 4)) * 5),
                        Tensor(rng.standard_normal((50, 4)) * 5),
                        Tensor(rng.standard_normal((50, 4)) * 5)).value
        assert np.all((s >= 0) & (s <= 1))


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=15)
        path = tmp_path / "w.json"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == cfg
        assert loaded.names() == params.names()
        for name in params.names():
            np.testing.assert_array_equal(loaded[name].value, params[name].value)
        # byte-identical re-save
        save_checkpoint(loaded, tmp_path / "w2.json")
        assert (tmp_path / "w.json").read_bytes() == (tmp_path / "w2.json").read_bytes()

    def test_shape_mismatch_rejected(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=16)
        path = tmp_path / "w.json"
        save_checkpoint(params, path)
        payload = json.loads(path.read_text())
        payload["params"]["scorer.b"]["shape"] = [1, 3]
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigError, match="scorer.b"):
            load_checkpoint(path)

    def test_missing_param_rejected(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, seed=17)
        path = tmp_path / "w.json"
        save_checkpoint(params, path)
        payload = json.loads(path.read_text())
        del payload["params"]["head.yaw.b"]
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigError, match="head.yaw.b"):
            load_checkpoint(path)


def test_init_is_seed_deterministic():
    a = init_params(tiny_config(), seed=21)
    b = init_params(tiny_config(), seed=21)
    for name in a.names():
        np.testing.assert_array_equal(a[name].value, b[name].value)
