import numpy as np
import pytest

from gcmatch.diffcore import (
    Tape,
    backward,
    clip,
    concat,
    elu,
    exp,
    gather_rows,
    grad_or_zero,
    gradient_check,
    leaky_relu,
    log,
    logsumexp,
    matmul,
    max_,
    mean,
    normalize,
    reshape,
    row_softmax,
    sigmoid,
    sqrt,
    sum_,
    transpose,
)
from gcmatch.errors import ContractError, DimensionError


def ref_matmul(a, b):
    """Triple-loop reference multiply."""
    p, q = a.shape
    q2, r = b.shape
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            for t in range(q):
                out[i, j] += a[i, t] * b[t, j]
    return out


class TestMatmul:
    def test_identity(self):
        t = Tape()
        a = t.leaf(np.eye(2))
        b = t.leaf([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(a, b).values, b.values)

    def test_against_triple_loop(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        t = Tape()
        out = matmul(t.leaf(a), t.leaf(b))
        expected = ref_matmul(a, b)
        assert np.array_equal(expected, [[19.0, 22.0], [43.0, 50.0]])
        assert np.allclose(out.values, expected)

    def test_zero(self):
        rng = np.random.default_rng(0)
        t = Tape()
        z = t.leaf(np.zeros((3, 4)))
        b = t.leaf(rng.normal(size=(4, 5)))
        assert np.array_equal(matmul(z, b).values, np.zeros((3, 5)))

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(t.leaf(np.ones((2, 3))), t.leaf(np.ones((2, 3))))

    def test_gradient_rules(self):
        rng = np.random.default_rng(1)
        av, bv = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        t = Tape()
        a, b = t.leaf(av), t.leaf(bv)
        y = sum_(matmul(a, b))
        grads = backward(t, y)
        g = np.ones((3, 2))
        assert np.allclose(grads[a.idx], g @ bv.T)
        assert np.allclose(grads[b.idx], av.T @ g)


class TestLeakyRelu:
    def test_pointwise_values(self):
        t = Tape()
        x = t.leaf([2.0, -1.0, 0.0])
        out = leaky_relu(x, 0.01)
        assert np.allclose(out.values, [2.0, -0.01, 0.0])

    def test_derivative_at_zero_uses_positive_side(self):
        t = Tape()
        x = t.leaf(np.zeros(3))
        y = sum_(leaky_relu(x, 0.01))
        assert np.allclose(backward(t, y)[x.idx], 1.0)


class TestNormalize:
    def test_constant_row_both_modes(self):
        for mode in ("instance", "layer"):
            t = Tape()
            x = t.leaf([[5.0, 5.0, 5.0, 5.0]])
            kwargs = {}
            if mode == "layer":
                kwargs = {"gain": t.leaf(np.ones(4)), "bias": t.leaf(np.zeros(4))}
            out = normalize(x, mode, 1e-5, **kwargs)
            assert np.allclose(out.values, 0.0)

    def test_symmetric_row(self):
        eps = 1e-5
        t = Tape()
        out = normalize(t.leaf([[-1.0, 1.0]]), "instance", eps)
        expected = np.array([[-1.0, 1.0]]) / np.sqrt(1.0 + eps)
        assert np.allclose(out.values, expected, atol=1e-15)

    def test_random_moments(self):
        # direct moment computation oracle
        rng = np.random.default_rng(2)
        xv = rng.normal(size=(4, 8)) * 3.0 + 1.0
        eps = 1e-8
        t = Tape()
        out = normalize(t.leaf(xv), "instance", eps).values
        assert np.abs(out.mean(axis=1)).max() < 1e-12
        expected_var = xv.var(axis=1) / (xv.var(axis=1) + eps)
        assert np.allclose(out.var(axis=1), expected_var, atol=1e-12)


class TestRowSoftmax:
    def test_symmetry(self):
        t = Tape()
        out = row_softmax(t.leaf([[0.0, 0.0]]))
        assert np.allclose(out.values, [[0.5, 0.5]])

    def test_extreme_logits(self):
        t = Tape()
        out = row_softmax(t.leaf([[1000.0, 0.0]]))
        # high-precision reference: 1/(1+exp(-1000)) rounds to 1 in float64
        assert np.allclose(out.values, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        t = Tape()
        out = row_softmax(t.leaf(rng.normal(size=(7, 9)) * 10))
        assert np.abs(out.values.sum(axis=1) - 1.0).max() < 1e-12
        assert (out.values >= 0).all()


class TestBackward:
    def test_square(self):
        t = Tape()
        x = t.leaf(3.0)
        y = x * x
        assert np.allclose(backward(t, y)[x.idx], 6.0)

    def test_product_rule(self):
        t = Tape()
        x, y = t.leaf(2.0), t.leaf(5.0)
        grads = backward(t, x * y)
        assert np.allclose(grads[x.idx], 5.0)
        assert np.allclose(grads[y.idx], 2.0)

    def test_unused_node_gradient_is_zero(self):
        t = Tape()
        x, unused = t.leaf(2.0), t.leaf([1.0, 2.0])
        grads = backward(t, x * x)
        assert np.array_equal(grad_or_zero(grads, unused), np.zeros(2))

    def test_non_scalar_seed_rejected(self):
        t = Tape()
        x = t.leaf([1.0, 2.0])
        with pytest.raises(ContractError):
            backward(t, x * x)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        xv, wv = rng.normal(size=(5, 3)), rng.normal(size=(3, 3))

        def run():
            t = Tape()
            x, w = t.leaf(xv), t.leaf(wv)
            y = sum_(row_softmax(matmul(leaky_relu(x, 0.1), w)))
            g = backward(t, y)
            return g[x.idx], g[w.idx]

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert gx1.tobytes() == gx2.tobytes()
        assert gw1.tobytes() == gw2.tobytes()


class TestGradientCheck:
    def test_matmul_scalar(self):
        rng = np.random.default_rng(5)
        point = rng.normal(size=(3, 3))
        err = gradient_check(lambda x: sum_(matmul(x, x)), point, 1e-5)
        assert err < 1e-6

    def test_leaky_relu_away_from_zero(self):
        rng = np.random.default_rng(6)
        point = rng.uniform(0.5, 2.0, size=(4, 4)) * rng.choice([-1.0, 1.0], size=(4, 4))
        err = gradient_check(lambda x: sum_(leaky_relu(x, 0.01)), point, 1e-6)
        assert err < 1e-8

    def test_constant_function(self):
        err = gradient_check(lambda x: sum_(x * 0.0), np.ones((2, 2)), 1e-5)
        assert err == 0.0


PRIMITIVE_CASES = [
    ("add", lambda x: sum_(x + np.array([0.5, -0.3, 1.0])), (3,)),
    ("sub", lambda x: sum_(1.5 - x), (4,)),
    ("mul", lambda x: sum_(x * x), (5,)),
    ("div", lambda x: sum_(x / 2.5), (3,)),
    ("div_by_var", lambda x: sum_(2.0 / x), (3,)),
    ("exp", lambda x: sum_(exp(x)), (4,)),
    ("log", lambda x: sum_(log(exp(x))), (4,)),
    ("sqrt", lambda x: sum_(sqrt(exp(x))), (4,)),
    ("sigmoid", lambda x: sum_(sigmoid(x)), (6,)),
    ("elu", lambda x: sum_(elu(x)), (6,)),
    ("leaky", lambda x: sum_(leaky_relu(x, 0.2)), (6,)),
    ("transpose", lambda x: sum_(matmul(transpose(x), x)), (3, 2)),
    ("reshape", lambda x: sum_(reshape(x, (2, 6))), (3, 4)),
    ("concat", lambda x: sum_(concat([x, x * 2.0], axis=1)), (2, 3)),
    ("gather", lambda x: sum_(gather_rows(x, [2, 0, 2, 1])), (3, 4)),
    ("sum_axis", lambda x: sum_(sum_(x, axis=1) * np.array([1.0, -2.0])), (2, 5)),
    ("mean_axis", lambda x: sum_(mean(x, axis=0) * np.arange(1.0, 5.0)), (3, 4)),
    ("max_axis", lambda x: sum_(max_(x, axis=1)), (4, 5)),
    ("logsumexp", lambda x: sum_(logsumexp(x, axis=1)), (4, 5)),
    ("row_softmax", lambda x: sum_(row_softmax(x) * np.arange(12.0).reshape(3, 4)), (3, 4)),
    ("clip", lambda x: sum_(clip(x, -0.9, 0.9)), (5,)),
    ("normalize", lambda x: sum_(normalize(x, "instance", 1e-5) * np.arange(8.0)), (3, 8)),
]


@pytest.mark.parametrize("name,fn,shape", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, fn, shape):
    # sample away from derivative discontinuities (|x| > 1e-3, and away
    # from the clip edges for the clip case)
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    point = rng.uniform(0.05, 0.8, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    assert gradient_check(fn, point, 1e-6) < 1e-4
