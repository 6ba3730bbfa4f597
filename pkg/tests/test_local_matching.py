import numpy as np
import pytest
from scipy.special import logsumexp as scipy_logsumexp

from gcmatch.diffcore import Tape, backward, gradient_check, mean, sum_
from gcmatch.errors import ConfigError
from gcmatch.local_matching import (
    ClusterAttentionConfig,
    LocalGraphConfig,
    attend_within_groups,
    cluster_attention,
    cost_matrix,
    init_local_params,
    linear_cross_attention,
    local_graph_init,
    mutual_top1,
    sinkhorn_with_dustbins,
)
from gcmatch.params import lift

CLUSTER_CFG = ClusterAttentionConfig()


def rownorm(v, eps=1e-5):
    mu = v.mean(axis=-1, keepdims=True)
    c = v - mu
    return c / np.sqrt((c * c).mean(axis=-1, keepdims=True) + eps)


def lrelu(v, slope=0.01):
    return np.where(v >= 0, v, slope * v)


def phi(v):
    return np.where(v >= 0, v, np.expm1(v)) + 1.0


class TestLocalGraphInit:
    def test_zero_round_weights_leave_only_fusion(self):
        rng = np.random.default_rng(0)
        d = 4
        params = init_local_params(rng, d, CLUSTER_CFG)
        for r in range(2):
            params[f"local.init.round{r}.w"] = np.zeros_like(params[f"local.init.round{r}.w"])
            params[f"local.init.round{r}.b"] = np.zeros_like(params[f"local.init.round{r}.b"])
        bearings = rng.normal(size=(6, 2))
        fv = rng.normal(size=(6, 2 * d))
        tape = Tape()
        out = local_graph_init(
            bearings, tape.leaf(fv), LocalGraphConfig(k_local=3), lift(tape, params)
        ).values
        cat = np.concatenate([fv, np.zeros_like(fv), np.zeros_like(fv)], axis=1)
        expected = lrelu(rownorm(cat @ params["local.init.fuse.w"] + params["local.init.fuse.b"]))
        assert np.allclose(out, expected, atol=1e-12)

    def test_duplicate_points_get_identical_rows(self):
        rng = np.random.default_rng(1)
        d = 3
        params = init_local_params(rng, d, CLUSTER_CFG)
        bearings = rng.normal(size=(8, 2))
        bearings[5] = bearings[2]
        fv = rng.normal(size=(8, 2 * d))
        fv[5] = fv[2]
        tape = Tape()
        out = local_graph_init(
            bearings, tape.leaf(fv), LocalGraphConfig(k_local=4), lift(tape, params)
        ).values
        assert np.allclose(out[5], out[2], atol=1e-12)

    def test_against_straight_line_reference(self):
        rng = np.random.default_rng(2)
        d = 4
        w = 2 * d
        params = init_local_params(rng, d, CLUSTER_CFG)
        bearings = rng.normal(size=(32, 2))
        fv = rng.normal(size=(32, w))
        cfg = LocalGraphConfig(k_local=5)
        tape = Tape()
        out = local_graph_init(bearings, tape.leaf(fv), cfg, lift(tape, params)).values

        # independent forward: brute-force kNN and per-node loops
        d2 = ((bearings[:, None, :] - bearings[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        edges = np.argsort(d2, axis=1, kind="stable")[:, :5]
        stages = [fv]
        cur = fv
        for r in range(2):
            wmat = params[f"local.init.round{r}.w"]
            bvec = params[f"local.init.round{r}.b"]
            nxt = np.empty_like(cur)
            for i in range(32):
                cands = [
                    lrelu(rownorm(np.concatenate([cur[i], cur[i] - cur[j]]) @ wmat + bvec))
                    for j in edges[i]
                ]
                nxt[i] = np.max(cands, axis=0)
            stages.append(nxt)
            cur = nxt
        cat = np.concatenate(stages, axis=1)
        expected = lrelu(rownorm(cat @ params["local.init.fuse.w"] + params["local.init.fuse.b"]))
        assert np.allclose(out, expected, atol=1e-10)

    def test_too_few_points(self):
        rng = np.random.default_rng(3)
        params = init_local_params(rng, 2, CLUSTER_CFG)
        tape = Tape()
        with pytest.raises(ConfigError):
            local_graph_init(
                np.zeros((5, 2)), tape.leaf(np.zeros((5, 4))),
                LocalGraphConfig(k_local=10), lift(tape, params),
            )


class TestLinearCrossAttention:
    def test_single_key_returns_its_projection(self):
        rng = np.random.default_rng(4)
        d = 3
        params = init_local_params(rng, d, CLUSTER_CFG)
        tape = Tape()
        f_p = tape.leaf(rng.normal(size=(5, 2 * d)))
        f_q = tape.leaf(rng.normal(size=(1, 2 * d)))
        out_p, _ = linear_cross_attention(f_p, f_q, lift(tape, params))
        expected = f_q.values @ params["cross.wv"]
        assert np.allclose(out_p.values, np.tile(expected, (5, 1)), atol=1e-12)

    def test_duplicate_keys_equal_single_key(self):
        rng = np.random.default_rng(5)
        d = 3
        params = init_local_params(rng, d, CLUSTER_CFG)
        tape = Tape()
        f_p = tape.leaf(rng.normal(size=(4, 2 * d)))
        row = rng.normal(size=(1, 2 * d))
        out_single, _ = linear_cross_attention(f_p, tape.leaf(row), lift(tape, params))
        out_dup, _ = linear_cross_attention(
            f_p, tape.leaf(np.tile(row, (3, 1))), lift(tape, params)
        )
        assert np.allclose(out_single.values, out_dup.values, atol=1e-12)

    @pytest.mark.parametrize("n,m", [(16, 16), (7, 23), (64, 41)])
    def test_against_quadratic_kernel_oracle(self, n, m):
        rng = np.random.default_rng(6)
        d = 4
        params = init_local_params(rng, d, CLUSTER_CFG)
        tape = Tape()
        fp = rng.normal(size=(n, 2 * d))
        fq = rng.normal(size=(m, 2 * d))
        out_p, out_q = linear_cross_attention(
            tape.leaf(fp), tape.leaf(fq), lift(tape, params)
        )

        def quadratic(q_feats, kv_feats):
            q = phi(q_feats @ params["cross.wq"])
            k = phi(kv_feats @ params["cross.wk"])
            v = kv_feats @ params["cross.wv"]
            w = q @ k.T  # explicit O(N^2) kernel weights
            w = w / w.sum(axis=1, keepdims=True)
            return w @ v

        assert np.allclose(out_p.values, quadratic(fp, fq), atol=1e-10)
        assert np.allclose(out_q.values, quadratic(fq, fp), atol=1e-10)


def reference_group_attention(fv, labels, params_np, prefix, eps=1e-5):
    n, w = fv.shape
    q = fv @ params_np[f"{prefix}.wq"]
    k = fv @ params_np[f"{prefix}.wk"]
    v = fv @ params_np[f"{prefix}.wv"]
    out = np.zeros_like(fv)
    for g in np.unique(labels):
        idx = np.nonzero(labels == g)[0]
        scores = q[idx] @ k[idx].T / np.sqrt(w)
        ex = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = ex / ex.sum(axis=1, keepdims=True)
        out[idx] = weights @ v[idx]
    res = rownorm(fv + out, eps)
    return res * params_np[f"{prefix}.ln.gain"] + params_np[f"{prefix}.ln.bias"]


class TestClusterAttention:
    def test_degenerate_grouping_equals_unrestricted_attention(self):
        rng = np.random.default_rng(7)
        d = 3
        cfg = ClusterAttentionConfig(coarse_groups=1, fine_groups=1, rounds=2)
        params = init_local_params(rng, d, cfg)
        fv = rng.normal(size=(10, 2 * d))
        tape = Tape()
        out_p, out_q = cluster_attention(tape.leaf(fv), 6, cfg, lift(tape, params), seed=0)
        got = np.concatenate([out_p.values, out_q.values], axis=0)

        ref = fv
        for r in range(2):
            for level in ("coarse", "fine"):
                ref = reference_group_attention(ref, np.zeros(10, dtype=int), params, f"cluster.round{r}.{level}")
        assert np.allclose(got, ref, atol=1e-10)

    def test_groups_never_interact(self):
        # two far-apart feature blobs with I=2: perturbing one blob must not
        # change the other blob's output (interaction mask is exactly zero)
        rng = np.random.default_rng(8)
        d = 3
        cfg = ClusterAttentionConfig(coarse_groups=2, fine_groups=2, rounds=1)
        params = init_local_params(rng, d, cfg)
        blob_a = rng.normal(size=(6, 2 * d))
        blob_b = rng.normal(size=(6, 2 * d)) + 500.0
        fv = np.concatenate([blob_a, blob_b], axis=0)
        tape = Tape()
        out1_p, out1_q = cluster_attention(tape.leaf(fv), 6, cfg, lift(tape, params), seed=3)

        fv2 = fv.copy()
        fv2[8] += rng.normal(size=2 * d) * 0.5  # perturb a blob-b row
        tape2 = Tape()
        out2_p, out2_q = cluster_attention(tape2.leaf(fv2), 6, cfg, lift(tape2, params), seed=3)
        # blob a occupies the first 6 rows (the P side): identical outputs
        assert np.array_equal(out1_p.values, out2_p.values)
        assert not np.allclose(out1_q.values, out2_q.values)

    def test_isolation_with_fixed_labels(self):
        rng = np.random.default_rng(9)
        d = 2
        cfg = ClusterAttentionConfig(coarse_groups=2, fine_groups=1, rounds=1)
        params = init_local_params(rng, d, cfg)
        fv = rng.normal(size=(8, 2 * d))
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        tape = Tape()
        out = attend_within_groups(
            tape.leaf(fv), labels, lift(tape, params), "cluster.round0.coarse"
        ).values
        fv2 = fv.copy()
        fv2[6] += 10.0
        tape2 = Tape()
        out2 = attend_within_groups(
            tape2.leaf(fv2), labels, lift(tape2, params), "cluster.round0.coarse"
        ).values
        assert np.array_equal(out[:4], out2[:4])

    def test_reference_group_attention_agreement(self):
        rng = np.random.default_rng(10)
        d = 3
        cfg = ClusterAttentionConfig(coarse_groups=3, fine_groups=1, rounds=1)
        params = init_local_params(rng, d, cfg)
        fv = rng.normal(size=(11, 2 * d))
        labels = rng.integers(0, 3, size=11)
        tape = Tape()
        out = attend_within_groups(
            tape.leaf(fv), labels, lift(tape, params), "cluster.round0.coarse"
        ).values
        ref = reference_group_attention(fv, labels, params, "cluster.round0.coarse")
        assert np.allclose(out, ref, atol=1e-10)

    def test_permutation_equivariance_at_fixed_assignment(self):
        rng = np.random.default_rng(11)
        d = 2
        cfg = ClusterAttentionConfig(coarse_groups=2, fine_groups=1, rounds=1)
        params = init_local_params(rng, d, cfg)
        fv = rng.normal(size=(9, 2 * d))
        labels = rng.integers(0, 2, size=9)
        perm = rng.permutation(9)
        tape = Tape()
        base = attend_within_groups(
            tape.leaf(fv), labels, lift(tape, params), "cluster.round0.coarse"
        ).values
        tape2 = Tape()
        permuted = attend_within_groups(
            tape2.leaf(fv[perm]), labels[perm], lift(tape2, params), "cluster.round0.coarse"
        ).values
        assert np.allclose(permuted, base[perm], atol=1e-12)

    def test_too_few_rows(self):
        rng = np.random.default_rng(12)
        cfg = ClusterAttentionConfig(coarse_groups=8, fine_groups=2)
        params = init_local_params(rng, 2, cfg)
        tape = Tape()
        with pytest.raises(ConfigError):
            cluster_attention(tape.leaf(np.zeros((4, 4))), 2, cfg, lift(tape, params), seed=0)


class TestCostMatrix:
    def test_identical_rows_give_zero(self):
        tape = Tape()
        f = tape.leaf([[1.0, 2.0, 3.0]])
        out = cost_matrix(f, tape.leaf([[1.0, 2.0, 3.0]]))
        assert out.values[0, 0] == 0.0

    def test_unit_basis_distance(self):
        tape = Tape()
        e1 = tape.leaf([[1.0, 0.0]])
        e2 = tape.leaf([[0.0, 1.0]])
        assert np.isclose(cost_matrix(e1, e2).values[0, 0], np.sqrt(2.0), atol=1e-12)

    def test_against_double_loop_oracle(self):
        rng = np.random.default_rng(13)
        fp = rng.normal(size=(8, 5))
        fq = rng.normal(size=(9, 5))
        tape = Tape()
        out = cost_matrix(tape.leaf(fp), tape.leaf(fq)).values
        for i in range(8):
            for j in range(9):
                assert abs(out[i, j] - np.linalg.norm(fp[i] - fq[j])) < 1e-12


def oracle_sinkhorn(cost, iters, reg, dustbin):
    """Standalone log-domain Sinkhorn (scipy logsumexp, no tape)."""
    n, m = cost.shape
    ext = np.full((n + 1, m + 1), dustbin)
    ext[:n, :m] = cost
    z = -ext / reg
    log_mu = np.concatenate([np.zeros(n), [np.log(m)]])
    log_nu = np.concatenate([np.zeros(m), [np.log(n)]])
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    for _ in range(iters):
        u = log_mu - scipy_logsumexp(z + v[None, :], axis=1)
        v = log_nu - scipy_logsumexp(z + u[:, None], axis=0)
    return np.exp(z + u[:, None] + v[None, :])


class TestSinkhorn:
    def test_forced_assignment(self):
        # entropic limit for the 1x1 case puts 1/(1+e^(dustbin/2reg)) in the
        # bins; a strongly unfavorable dustbin forces the real pair
        tape = Tape()
        cost = tape.leaf([[0.0]])
        result = sinkhorn_with_dustbins(cost, iterations=500, reg=0.5, dustbin=10.0)
        assert abs(result.scores.values[0, 0] - 1.0) < 1e-3

    def test_uniform_cost_symmetry(self):
        tape = Tape()
        cost = tape.leaf(np.full((4, 4), 2.0))
        result = sinkhorn_with_dustbins(cost, iterations=30, reg=0.5, dustbin=1.0)
        s = result.scores.values
        assert np.allclose(s, s[0, 0], atol=1e-12)

    def test_marginals_and_oracle_agreement(self):
        rng = np.random.default_rng(14)
        cost_np = rng.uniform(0.0, 2.0, size=(3, 4))
        tape = Tape()
        result = sinkhorn_with_dustbins(tape.leaf(cost_np), iterations=20, reg=0.3, dustbin=1.0)
        full = result.full.values
        assert np.abs(full[:3].sum(axis=1) - 1.0).max() < 1e-5
        assert np.abs(full[:, :4].sum(axis=0) - 1.0).max() < 1e-5
        expected = oracle_sinkhorn(cost_np, 20, 0.3, 1.0)
        assert np.abs(result.scores.values - expected[:3, :4]).max() < 1e-8

    def test_nonnegative_entries(self):
        rng = np.random.default_rng(15)
        tape = Tape()
        result = sinkhorn_with_dustbins(
            tape.leaf(rng.uniform(0, 4, size=(6, 9))), iterations=20, reg=0.3, dustbin=1.0
        )
        assert (result.full.values >= 0).all()

    def test_monotone_in_cost(self):
        # lowering one cost entry never decreases its converged score
        rng = np.random.default_rng(16)
        cost_np = rng.uniform(0.5, 2.0, size=(4, 5))
        base = oracle_sinkhorn(cost_np, 200, 0.3, 1.0)[1, 2]
        lowered = cost_np.copy()
        lowered[1, 2] -= 0.4
        higher = oracle_sinkhorn(lowered, 200, 0.3, 1.0)[1, 2]
        assert higher >= base
        tape = Tape()
        mine = sinkhorn_with_dustbins(tape.leaf(lowered), 200, 0.3, 1.0)
        assert abs(mine.scores.values[1, 2] - higher) < 1e-8

    def test_differentiable_through_iterations(self):
        rng = np.random.default_rng(17)
        feats = rng.normal(size=(4, 3))
        other = rng.normal(size=(5, 3))
        target = rng.normal(size=(4, 5))

        def f(x):
            cost = cost_matrix(x, x.tape.leaf(other))
            result = sinkhorn_with_dustbins(cost, iterations=8, reg=0.3, dustbin=1.0)
            return sum_(mean(result.scores * target, axis=0))

        assert gradient_check(f, feats, 1e-6) < 1e-4

    def test_rejects_bad_config(self):
        tape = Tape()
        with pytest.raises(ConfigError):
            sinkhorn_with_dustbins(tape.leaf(np.zeros((2, 2))), iterations=0)
        with pytest.raises(ConfigError):
            sinkhorn_with_dustbins(tape.leaf(np.zeros((2, 2))), reg=0.0)


class TestMutualTop1:
    def test_diagonal_dominance(self):
        ms = mutual_top1(np.array([[0.9, 0.1], [0.2, 0.8]]))
        assert {(int(a), int(b)) for a, b in ms.pairs} == {(0, 0), (1, 1)}

    def test_one_sided_maximum_unmatched(self):
        # row 1's best column (0) prefers row 0
        s = np.array([[0.9, 0.05], [0.5, 0.1]])
        ms = mutual_top1(s)
        assert {(int(a), int(b)) for a, b in ms.pairs} == {(0, 0)}

    def test_against_brute_force(self):
        rng = np.random.default_rng(18)
        s = rng.normal(size=(20, 25))
        ms = mutual_top1(s)
        expected = set()
        for i in range(20):
            j = int(np.argmax(s[i]))
            if int(np.argmax(s[:, j])) == i:
                expected.add((i, j))
        assert {(int(a), int(b)) for a, b in ms.pairs} == expected

    def test_one_to_one(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            s = rng.normal(size=(12, 9))
            ms = mutual_top1(s)
            assert len(set(ms.pairs[:, 0])) == len(ms)
            assert len(set(ms.pairs[:, 1])) == len(ms)
