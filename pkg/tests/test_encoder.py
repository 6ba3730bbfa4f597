import numpy as np
import pytest

from gcmatch.diffcore import Tape, backward, mean, sum_
from gcmatch.encoder import encode_points, init_encoder_params
from gcmatch.errors import InputError
from gcmatch.params import lift


def make_inputs(rng, n):
    bearings = rng.normal(size=(n, 2)) * 0.3
    colors = rng.uniform(size=(n, 3))
    return bearings, colors


def test_zero_weights_give_zero_features():
    rng = np.random.default_rng(0)
    params = {k: np.zeros_like(v) for k, v in init_encoder_params(rng, 8).items()}
    tape = Tape()
    b, c = make_inputs(rng, 5)
    out = encode_points(b, c, lift(tape, params))
    assert np.array_equal(out.values, np.zeros((5, 8)))


def test_duplicate_points_get_identical_rows():
    rng = np.random.default_rng(1)
    params = init_encoder_params(rng, 16)
    b, c = make_inputs(rng, 6)
    b[3] = b[0]
    c[3] = c[0]
    out = encode_points(b, c, lift(Tape(), params))
    assert np.array_equal(out.values[3], out.values[0])


def test_color_branch_isolation():
    # zeroing the color branch must reduce the output to the position branch,
    # and enabling color must change the features
    rng = np.random.default_rng(2)
    params = init_encoder_params(rng, 16)
    zeroed = dict(params)
    for k in params:
        if k.startswith("enc.col"):
            zeroed[k] = np.zeros_like(params[k])
    b, c = make_inputs(rng, 7)
    full = encode_points(b, c, lift(Tape(), params)).values
    col_zeroed = encode_points(b, c, lift(Tape(), zeroed)).values
    pos_only = encode_points(b, c, lift(Tape(), params), use_color=False).values
    assert np.allclose(col_zeroed, pos_only)
    assert not np.allclose(full, pos_only)


def test_no_color_flag_ignores_color_input():
    rng = np.random.default_rng(3)
    params = init_encoder_params(rng, 8)
    b, c = make_inputs(rng, 5)
    out1 = encode_points(b, c, lift(Tape(), params), use_color=False).values
    out2 = encode_points(b, rng.uniform(size=(5, 3)), lift(Tape(), params), use_color=False).values
    assert np.array_equal(out1, out2)


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    params = init_encoder_params(rng, 16)
    b, c = make_inputs(rng, 9)
    perm = rng.permutation(9)
    base = encode_points(b, c, lift(Tape(), params)).values
    permuted = encode_points(b[perm], c[perm], lift(Tape(), params)).values
    assert np.allclose(permuted, base[perm], atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 17])
def test_output_shape(n):
    rng = np.random.default_rng(5)
    d = 128  # default feature width
    params = init_encoder_params(rng, d)
    b, c = make_inputs(rng, n)
    out = encode_points(b, c, lift(Tape(), params))
    assert out.values.shape == (n, d)


def test_length_mismatch_rejected():
    rng = np.random.default_rng(6)
    params = init_encoder_params(rng, 8)
    with pytest.raises(InputError):
        encode_points(np.zeros((3, 2)), np.zeros((2, 3)), lift(Tape(), params))


def test_encoder_is_differentiable():
    rng = np.random.default_rng(7)
    params = init_encoder_params(rng, 8)
    b, c = make_inputs(rng, 4)
    tape = Tape()
    lifted = lift(tape, params)
    loss = sum_(mean(encode_points(b, c, lifted), axis=0))
    grads = backward(tape, loss)
    touched = [k for k, v in lifted.items() if v.idx in grads]
    assert any(k.startswith("enc.pos") for k in touched)
    assert any(k.startswith("enc.col") for k in touched)
