import math

import numpy as np
import pytest
import torch

from attrmatch.attnet import (
    AttentionParams,
    TokenEmbeddings,
    attribute_similarity_matrix,
    compare_tokens,
    inter_attention,
    m2v,
    self_attention,
)
from attrmatch.serialization import AttrSpan

from oracles import (
    bf_compare_tokens,
    bf_m2v,
    bf_self_attention,
    bf_similarity_matrix,
    params_to_numpy,
)


def random_params(d, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return AttentionParams(d).to(dtype)


def random_embeddings(d, left_lens, right_lens, seed=0, dtype=torch.float64):
    """Build TokenEmbeddings whose spans have the requested token counts."""
    torch.manual_seed(seed)
    total = 1 + sum(left_lens) + 1 + sum(right_lens) + 1
    vectors = torch.randn(total, d, dtype=dtype)
    pos = 1
    left_spans = []
    for i, L in enumerate(left_lens):
        left_spans.append(AttrSpan(i, pos, pos + L))
        pos += L
    pos += 1  # separator
    right_spans = []
    for j, L in enumerate(right_lens):
        right_spans.append(AttrSpan(j, pos, pos + L))
        pos += L
    return TokenEmbeddings(
        vectors=vectors, pooled=vectors[0], left_spans=left_spans, right_spans=right_spans
    )


class TestSelfAttention:
    def test_zero_weights_give_uniform_rows(self):
        H = torch.randn(4, 3, dtype=torch.float64)
        alpha = self_attention(H, torch.zeros(4, 4, dtype=torch.float64))
        assert torch.allclose(alpha, torch.full((3, 3), 1 / 3, dtype=torch.float64))

    def test_identity_columns_hand_computed(self):
        H = torch.eye(2, dtype=torch.float64)  # two one-hot token columns
        alpha = self_attention(H, torch.eye(2, dtype=torch.float64))
        hi = math.e / (math.e + 1)
        lo = 1 / (math.e + 1)
        expected = torch.tensor([[hi, lo], [lo, hi]], dtype=torch.float64)
        assert torch.allclose(alpha, expected, atol=1e-12)

    def test_single_token(self):
        H = torch.randn(5, 1, dtype=torch.float64)
        alpha = self_attention(H, torch.randn(5, 5, dtype=torch.float64))
        assert alpha.shape == (1, 1)
        assert alpha.item() == pytest.approx(1.0)

    def test_rows_sum_to_one(self):
        for seed in range(20):
            torch.manual_seed(seed)
            H = torch.randn(8, 5, dtype=torch.float64)
            W = torch.randn(8, 8, dtype=torch.float64)
            alpha = self_attention(H, W)
            assert torch.allclose(alpha.sum(dim=-1), torch.ones(5, dtype=torch.float64))

    def test_non_finite_rejected(self):
        H = torch.tensor([[float("inf")], [1.0]], dtype=torch.float64)
        with pytest.raises(FloatingPointError):
            self_attention(H, torch.ones(2, 2, dtype=torch.float64))


class TestM2v:
    def test_symmetric_mass(self):
        out = m2v(torch.tensor([[0.5, 0.5], [0.5, 0.5]], dtype=torch.float64))
        assert torch.allclose(out, torch.ones(2, dtype=torch.float64))

    def test_column_sums_max_normalized(self):
        out = m2v(torch.tensor([[0.6, 0.4], [0.2, 0.8]], dtype=torch.float64))
        assert torch.allclose(out, torch.tensor([0.8 / 1.2, 1.0], dtype=torch.float64))

    def test_singleton(self):
        assert m2v(torch.tensor([[1.0]], dtype=torch.float64)).item() == 1.0

    def test_row_axis_literal_reading_is_constant(self):
        alpha = torch.tensor([[0.6, 0.4], [0.2, 0.8]], dtype=torch.float64)
        assert torch.allclose(m2v(alpha, axis="row"), torch.ones(2, dtype=torch.float64))

    def test_matches_brute_force_on_row_stochastic_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            L = int(rng.integers(1, 7))
            raw = rng.random((L, L)) + 1e-3
            alpha_np = raw / raw.sum(axis=1, keepdims=True)
            out = m2v(torch.from_numpy(alpha_np))
            ref = bf_m2v(alpha_np)
            assert np.allclose(out.numpy(), ref, atol=1e-6)
            assert out.max().item() == pytest.approx(1.0, abs=1e-7)
            assert (out > 0).all() and (out <= 1).all()


class TestInterAttention:
    def test_rows_sum_to_one(self):
        H_s = torch.randn(6, 3, dtype=torch.float64)
        H_t = torch.randn(6, 4, dtype=torch.float64)
        beta, _ = inter_attention(H_s, H_t, torch.randn(6, 6, dtype=torch.float64))
        assert beta.shape == (3, 4)
        assert torch.allclose(beta.sum(dim=-1), torch.ones(3, dtype=torch.float64))

    def test_single_target_forces_alignment(self):
        H_s = torch.randn(5, 3, dtype=torch.float64)
        H_t = torch.randn(5, 1, dtype=torch.float64)
        _, attended = inter_attention(H_s, H_t, torch.randn(5, 5, dtype=torch.float64))
        for x in range(3):
            assert torch.allclose(attended[:, x], H_t[:, 0])

    def test_zero_weights_average_targets(self):
        H_s = torch.randn(5, 2, dtype=torch.float64)
        H_t = torch.randn(5, 4, dtype=torch.float64)
        _, attended = inter_attention(H_s, H_t, torch.zeros(5, 5, dtype=torch.float64))
        mean = H_t.mean(dim=1)
        for x in range(2):
            assert torch.allclose(attended[:, x], mean)


class TestCompareTokens:
    def test_identical_inputs_zero_difference_half(self):
        d, L = 4, 3
        params = random_params(d)
        H = torch.randn(d, L, dtype=torch.float64)
        u_diff = (H - H).abs()
        assert torch.all(u_diff == 0)
        scores = compare_tokens(H, H, params)
        assert scores.shape == (L,)

    def test_constant_projection(self):
        d = 4
        params = random_params(d)
        with torch.no_grad():
            params.score_proj.weight.zero_()
            params.score_proj.bias.fill_(3.0)
        H = torch.randn(d, 5, dtype=torch.float64)
        scores = compare_tokens(H, torch.randn(d, 5, dtype=torch.float64), params)
        assert torch.allclose(scores, torch.full((5,), 3.0, dtype=torch.float64))

    def test_shape_mismatch(self):
        params = random_params(4)
        with pytest.raises(ValueError, match="mismatch"):
            compare_tokens(
                torch.randn(4, 3, dtype=torch.float64),
                torch.randn(4, 2, dtype=torch.float64),
                params,
            )

    def test_matches_brute_force(self):
        for seed in range(10):
            d = 5
            params = random_params(d, seed=seed)
            torch.manual_seed(100 + seed)
            H = torch.randn(d, 4, dtype=torch.float64)
            A = torch.randn(d, 4, dtype=torch.float64)
            scores = compare_tokens(H, A, params)
            ref = bf_compare_tokens(H.numpy(), A.numpy(), params_to_numpy(params))
            assert np.allclose(scores.detach().numpy(), ref, atol=1e-9)


def finite_difference_grads(fn, params, eps=1e-6):
    """Central differences of scalar fn() w.r.t. every parameter of the module."""
    grads = {}
    for name, p in params.named_parameters():
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads[name] = g
    return grads


def assert_grads_close(analytic, numeric, rel_tol=1e-4):
    for name, g_fd in numeric.items():
        g_an = analytic[name]
        scale = max(g_an.abs().max().item(), g_fd.abs().max().item(), 1e-8)
        err = (g_an - g_fd).abs().max().item() / scale
        assert err < rel_tol, f"gradient mismatch for {name}: rel err {err:.2e}"


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_compare_tokens_gradients(self, seed):
        d, L = 8, 4
        params = random_params(d, seed=seed)
        torch.manual_seed(1000 + seed)
        H = torch.randn(d, L, dtype=torch.float64)
        A = torch.randn(d, L, dtype=torch.float64)

        def fn():
            return compare_tokens(H, A, params).sum()

        params.zero_grad()
        fn().backward()
        analytic = {
            n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in params.named_parameters()
        }
        numeric = finite_difference_grads(fn, params)
        assert_grads_close(analytic, numeric)

    @pytest.mark.parametrize("seed", range(10))
    def test_similarity_matrix_gradients(self, seed):
        d = 8
        rng = np.random.default_rng(seed)
        m, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        left_lens = [int(rng.integers(1, 5)) for _ in range(m)]
        right_lens = [int(rng.integers(1, 5)) for _ in range(n)]
        params = random_params(d, seed=seed)
        emb = random_embeddings(d, left_lens, right_lens, seed=2000 + seed)

        def fn():
            return attribute_similarity_matrix(emb, params).values.sum()

        params.zero_grad()
        fn().backward()
        analytic = {n_: p.grad.clone() for n_, p in params.named_parameters()}
        numeric = finite_difference_grads(fn, params)
        assert_grads_close(analytic, numeric)


class TestAttributeSimilarityMatrix:
    def test_shape(self):
        params = random_params(6)
        emb = random_embeddings(6, [2, 3], [1, 2, 4], seed=1)
        R = attribute_similarity_matrix(emb, params)
        assert R.values.shape == (2, 3)
        assert (R.m, R.n) == (2, 3)
        assert torch.isfinite(R.values).all()

    def test_self_pair_symmetric(self):
        d = 6
        params = random_params(d, seed=3)
        torch.manual_seed(7)
        spans = [2, 1, 3]
        block = torch.randn(sum(spans), d, dtype=torch.float64)
        vectors = torch.cat([torch.randn(1, d, dtype=torch.float64), block,
                             torch.randn(1, d, dtype=torch.float64), block,
                             torch.randn(1, d, dtype=torch.float64)])
        left_spans, right_spans = [], []
        pos = 1
        for i, L in enumerate(spans):
            left_spans.append(AttrSpan(i, pos, pos + L))
            pos += L
        pos += 1
        for i, L in enumerate(spans):
            right_spans.append(AttrSpan(i, pos, pos + L))
            pos += L
        emb = TokenEmbeddings(vectors=vectors, pooled=vectors[0],
                              left_spans=left_spans, right_spans=right_spans)
        R = attribute_similarity_matrix(emb, params).values
        assert torch.allclose(R, R.T, atol=1e-12)

    def test_role_swap_transposes_matrix(self):
        # For fixed embeddings, exchanging which spans play source vs target
        # transposes the fused matrix exactly (direction averaging).
        d = 6
        params = random_params(d, seed=5)
        emb = random_embeddings(d, [2, 3], [1, 4], seed=11)
        swapped = TokenEmbeddings(
            vectors=emb.vectors,
            pooled=emb.pooled,
            left_spans=emb.right_spans,
            right_spans=emb.left_spans,
        )
        R = attribute_similarity_matrix(emb, params).values
        R_swapped = attribute_similarity_matrix(swapped, params).values
        assert torch.allclose(R, R_swapped.T, atol=1e-12)

    def test_all_zero_weights_unit_bias(self):
        d = 4
        params = random_params(d)
        with torch.no_grad():
            for p in params.parameters():
                p.zero_()
            params.score_proj.bias.fill_(1.0)
        emb = random_embeddings(d, [1], [1], seed=0)
        R = attribute_similarity_matrix(emb, params).values
        assert torch.allclose(R, torch.ones(1, 1, dtype=torch.float64))

    def test_empty_attribute_gives_zero_row_and_column(self):
        d = 5
        params = random_params(d, seed=1)
        emb = random_embeddings(d, [2, 0], [0, 3], seed=4)
        R = attribute_similarity_matrix(emb, params).values
        assert torch.all(R[1, :] == 0)
        assert torch.all(R[:, 0] == 0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        d = 8
        rng = np.random.default_rng(300 + seed)
        m, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        left_lens = [int(rng.integers(1, 5)) for _ in range(m)]
        right_lens = [int(rng.integers(1, 5)) for _ in range(n)]
        params = random_params(d, seed=seed)
        emb = random_embeddings(d, left_lens, right_lens, seed=400 + seed)
        R = attribute_similarity_matrix(emb, params).values.detach().numpy()
        left = [emb.vectors[s.start : s.end].T.numpy() for s in emb.left_spans]
        right = [emb.vectors[s.start : s.end].T.numpy() for s in emb.right_spans]
        ref = bf_similarity_matrix(left, right, params_to_numpy(params))
        assert np.allclose(R, ref, atol=1e-6)
