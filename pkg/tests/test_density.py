import numpy as np
import pytest

from nniva import density
from nniva.density import (
    EPS,
    LaplaceModel,
    NeuralModel,
    NNWeights,
    init_weights,
    laplace_gains,
    load_weights,
    nn_gains,
    save_weights,
    score,
    softplus,
)
from nniva.exceptions import FormatError, ParameterError

from .conftest import crandn
from .oracles import nn_gains_loop


def unit_vector(rng, K, norm=1.0):
    S = crandn(rng, K)
    return norm * S / np.linalg.norm(S)


@pytest.mark.parametrize("norm,expected", [(1.0, 0.5), (10.0, 0.05)])
def test_laplace_gains(rng, norm, expected):
    res = laplace_gains(unit_vector(rng, 257, norm))
    np.testing.assert_allclose(res.gains, expected, rtol=1e-14)
    assert res.hidden_next.size == 0


def test_laplace_zero_floor():
    res = laplace_gains(np.zeros(9, complex))
    np.testing.assert_array_equal(res.gains, 1.0 / (2 * EPS))


def test_laplace_score_scale_covariance(rng):
    S = crandn(rng, 33)
    for c in (1e-3, 0.5, 7.0, 1e4):
        np.testing.assert_allclose(score(c * S, laplace_gains(c * S)), score(S, laplace_gains(S)), rtol=1e-12)


def test_score_examples(rng):
    S = unit_vector(rng, 17)
    np.testing.assert_allclose(score(S, laplace_gains(S)), S / 2, rtol=1e-14)
    assert not np.any(score(np.zeros(4, complex), np.ones(4)))
    np.testing.assert_array_equal(score(S, np.ones(17)), S)


def test_zero_network(rng):
    K, width = 17, 16
    w = NNWeights(np.zeros((width, K + 2)), np.zeros((width, width + 1)), np.zeros((K, width + 1)))
    S = crandn(rng, K)
    np.testing.assert_allclose(nn_gains(S, None, w).gains, np.log(2) / np.linalg.norm(S), rtol=1e-14)


@pytest.mark.parametrize("hidden", [0, 4])
def test_matches_loop_oracle(rng, hidden):
    K, width = 9, 16
    w = init_weights(K, width, hidden, rng)
    for _ in range(5):
        S = crandn(rng, K) * rng.uniform(0.01, 10)
        h = np.tanh(rng.standard_normal(hidden))
        res = nn_gains(S, h, w)
        ref_g, ref_h = nn_gains_loop(S, h, *w.arrays(), hidden)
        np.testing.assert_allclose(res.gains, ref_g, rtol=1e-12, atol=0)
        np.testing.assert_allclose(res.hidden_next, ref_h, rtol=1e-12, atol=1e-15)


def test_batched_matches_single(rng):
    w = init_weights(9, 16, 4, rng)
    S = crandn(rng, 3, 2, 9)
    h = np.tanh(rng.standard_normal((3, 2, 4)))
    batch = nn_gains(S, h, w)
    for i in range(3):
        for j in range(2):
            single = nn_gains(S[i, j], h[i, j], w)
            np.testing.assert_allclose(batch.gains[i, j], single.gains, rtol=1e-13)
            np.testing.assert_allclose(batch.hidden_next[i, j], single.hidden_next, rtol=1e-13)


def test_phase_invariance_exact(rng):
    w = init_weights(33, 64, 16, rng)
    S = crandn(rng, 33)
    h = np.tanh(rng.standard_normal(16))
    rotated = np.abs(S) * np.exp(1j * rng.uniform(-np.pi, np.pi, 33))
    # only magnitudes enter; |S|^2 computed from re/im may differ in the last ulp
    a, b = nn_gains(S, h, w), nn_gains(rotated, h, w)
    np.testing.assert_allclose(a.gains, b.gains, rtol=1e-13)
    assert np.all(np.abs(a.hidden_next) < 1)


def test_phase_invariance_bitwise(rng):
    w = init_weights(9, 16, 0, rng)
    S = crandn(rng, 9)
    # sign flips and conjugation permute re/im exactly
    for rot in (S.conj(), -S, 1j * S, -1j * S.conj()):
        np.testing.assert_array_equal(nn_gains(rot, None, w).gains, nn_gains(S, None, w).gains)


def test_nonnegative_and_deterministic(rng):
    w = init_weights(33, 64, 0, rng)
    S = crandn(rng, 1000, 33) * 10 ** rng.uniform(-8, 4, (1000, 1))
    S[:10] = 0
    g1 = nn_gains(S, None, w).gains
    g2 = nn_gains(S, None, w).gains
    assert np.all(g1 >= 0) and np.all(np.isfinite(g1))
    np.testing.assert_array_equal(g1, g2)


def test_softplus_overflow_safe():
    x = np.array([-800.0, -30.0, 0.0, 29.9, 30.1, 800.0])
    y = softplus(x)
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y[2], np.log(2))
    assert y[-1] == 800.0


def test_dimension_mismatch(rng):
    w = init_weights(9, 16, 4, rng)
    with pytest.raises(ParameterError):
        nn_gains(crandn(rng, 10), np.zeros(4), w)
    with pytest.raises(ParameterError):
        nn_gains(crandn(rng, 9), np.zeros(3), w)


def test_weight_validation(rng):
    with pytest.raises(ParameterError):
        NNWeights(np.zeros((16, 11)), np.zeros((16, 16)), np.zeros((9, 17)))
    with pytest.raises(ParameterError):
        init_weights(9, 512, 64)
    assert init_weights(9, 512, 128).hidden_dim == 128


def test_models(rng):
    w = init_weights(9, 16, 4, rng)
    m = NeuralModel(w)
    assert m.hidden_dim == 4 and m.n_bins == 9
    assert LaplaceModel().hidden_dim == 0
    S = crandn(rng, 2, 9)
    np.testing.assert_array_equal(m.gains(S, np.zeros((2, 4))).gains, nn_gains(S, np.zeros((2, 4)), w).gains)


def test_weights_round_trip(tmp_path, rng):
    w = init_weights(257, 512, 128, rng)
    w = NNWeights(*(t.astype(np.float32) for t in w.arrays()), hidden_dim=128)
    path = tmp_path / "w.bin"
    save_weights(w, path)
    back = load_weights(path)
    assert back.hidden_dim == 128
    for a, b in zip(w.arrays(), back.arrays()):
        assert a.dtype == b.dtype == np.float32
        assert a.tobytes() == b.tobytes()
    path2 = tmp_path / "w2.bin"
    save_weights(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_weights_truncated(tmp_path, rng):
    path = tmp_path / "w.bin"
    save_weights(init_weights(9, 16, 0, rng), path)
    raw = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        load_weights(tmp_path / "t.bin")
    (tmp_path / "g.bin").write_bytes(b"garbage")
    with pytest.raises(FormatError):
        load_weights(tmp_path / "g.bin")


def test_weights_bad_hidden_dim(tmp_path, rng):
    w = init_weights(9, 512, 0, rng)
    from nniva import fileio

    t1 = np.zeros((512, 9 + 2 + 64))
    fileio.write_arrays(
        tmp_path / "h.bin", density.WEIGHTS_KIND, 1, {"K": 9, "hidden_dim": 64},
        {"theta1": t1, "theta2": w.theta2, "theta3": w.theta3},
    )
    with pytest.raises(FormatError):
        load_weights(tmp_path / "h.bin")


def test_weights_header_mismatch(tmp_path, rng):
    w = init_weights(9, 16, 0, rng)
    from nniva import fileio

    fileio.write_arrays(
        tmp_path / "k.bin", density.WEIGHTS_KIND, 1, {"K": 10, "hidden_dim": 0},
        {"theta1": w.theta1, "theta2": w.theta2, "theta3": w.theta3},
    )
    with pytest.raises(FormatError):
        load_weights(tmp_path / "k.bin")
