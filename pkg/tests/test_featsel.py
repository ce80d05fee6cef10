import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echolatent import featsel, ops, segnet
from echolatent.featsel import SelectionResult
from echolatent.tensor import Tensor
from oracles import lasso_proximal, lasso_value


def shifted_score(params, video, kernel, eps):
    """Summed foreground probability with ``eps`` added to one bottleneck map."""
    feats, skips = segnet.encode(params, Tensor(segnet._standardize(video)[None, None]))
    f = feats.data.copy()
    f[0, kernel] += eps
    return ops.sigmoid(segnet.decode(params, Tensor(f), skips)).data.sum()


@pytest.fixture(scope="module")
def small_net():
    return segnet.build(levels=2, base_channels=16, seed=3)


@pytest.fixture(scope="module")
def small_video():
    return np.random.default_rng(4).random((4, 8, 8))


def test_kernel_weights_match_uniform_shift_oracle(small_net, small_video):
    kw = featsel.kernel_weights(small_net, small_video)
    n_spatial = 2 * 4 * 4
    h = 1e-6
    fd = np.array([
        (shifted_score(small_net, small_video, l, h) - shifted_score(small_net, small_video, l, -h)) / (2 * h)
        for l in range(32)
    ]) / n_spatial
    assert np.max(np.abs(kw.alpha - fd)) / np.max(np.abs(fd)) < 1e-4


def test_dead_kernel_has_zero_weight(small_net, small_video):
    net = small_net.copy()
    net.weights["dec0.up.w"].data[5] = 0.0
    assert featsel.kernel_weights(net, small_video).alpha[5] == 0.0


def test_ranking_invariant_to_normalizer_and_scale(small_net, small_video):
    a = featsel.kernel_weights(small_net, small_video, normalizer="spatial").alpha
    b = featsel.kernel_weights(small_net, small_video, normalizer="kernels").alpha
    c = featsel.kernel_weights(small_net, small_video, objective=lambda p: ops.mul(ops.reduce_sum(p), 3.0)).alpha
    assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))
    np.testing.assert_allclose(c, 3 * a, rtol=1e-12)


def test_class_zero_is_negated(small_net, small_video):
    a1 = featsel.kernel_weights(small_net, small_video, class_id=1).alpha
    a0 = featsel.kernel_weights(small_net, small_video, class_id=0).alpha
    np.testing.assert_allclose(a0, -a1, atol=1e-12)


def test_nan_weights_rejected(small_net, small_video):
    net = small_net.copy()
    net.weights["head.b"].data = np.array([np.nan])
    with pytest.raises(ValueError, match="not finite"):
        featsel.kernel_weights(net, small_video)


def test_gradcam_hand_instance():
    f = np.array([[[[1.0, 2.0], [3.0, 4.0]]], [[[0.0, 1.0], [2.0, 3.0]]]])
    cam = featsel.gradcam_map(f, np.array([1.0, -2.0])).map
    np.testing.assert_array_equal(cam, [[[1.0, 0.0], [0.0, 0.0]]])


def test_gradcam_trivial_cases():
    f = np.abs(np.random.default_rng(0).normal(size=(4, 2, 3, 3)))
    assert not featsel.gradcam_map(f, np.zeros(4)).map.any()
    np.testing.assert_array_equal(featsel.gradcam_map(f, np.eye(4)[2]).map, f[2])
    up = featsel.gradcam_map(f, np.ones(4), upsample_to=(4, 6, 6)).upsampled
    assert up.shape == (4, 6, 6) and up[1, 1, 1] == up[0, 0, 0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradcam_nonnegative(seed):
    rng = np.random.default_rng(seed)
    assert featsel.gradcam_map(rng.normal(size=(5, 2, 3, 3)), rng.normal(size=5)).map.min() >= 0


def test_top_kernels_tie_to_lower_index():
    assert featsel.top_kernels(np.array([1.0, 3.0, 3.0, 2.0, 3.0]), 3).tolist() == [1, 2, 4]


def hand_table_cases():
    """Ten cases whose pooled top-5 counts are k2:10, k7:9, k11:8, k30:1, fillers <= 2."""
    fillers = iter([12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 12, 13, 14, 15, 30, 16, 17])
    cases = []
    for i in range(10):
        top = [2] + ([7] if i < 9 else []) + ([11] if i < 8 else [])
        while len(top) < 5:
            top.append(next(fillers))
        a = np.zeros(32)
        a[top] = np.linspace(5, 1, 5)
        cases.append(a)
    return cases


def test_fsr_hand_counted_table():
    sel = featsel.fsr_select(hand_table_cases())
    assert sel.indices == (2, 7, 11)
    freq = sel.details["frequencies"]
    assert (freq[2], freq[7], freq[11], freq[30]) == (10, 9, 8, 1)
    assert sum(freq.values()) == 50
    assert sel.reduction_ratio == pytest.approx(1 - 3 / 32)
    assert round(sel.reduction_ratio, 2) == 0.91


def test_fsr_unanimous_cases():
    a = np.zeros(32)
    a[[4, 9, 1, 20, 31]] = [5, 4, 3, 2, 1]
    assert featsel.fsr_select([a, a.copy(), a.copy()]).indices == (1, 4, 9)


def test_fsr_frequency_tie_to_lower_index():
    a, b = np.zeros(32), np.zeros(32)
    a[[0, 1, 2, 3, 4]] = 1
    b[[5, 6, 7, 8, 9]] = 1
    assert featsel.fsr_select([b, a], top_k=5, n_select=3).indices == (0, 1, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fsr_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    cases = [rng.normal(size=32) for _ in range(7)]
    perm = rng.permutation(7)
    assert featsel.fsr_select(cases).indices == featsel.fsr_select([cases[i] for i in perm]).indices


def test_soft_threshold():
    assert featsel.soft_threshold(5, 2) == 3
    assert featsel.soft_threshold(-5, 2) == -3
    assert featsel.soft_threshold(1, 2) == 0


def test_lasso_alpha_zero_is_least_squares():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 5))
    y = rng.integers(0, 2, 20).astype(float)
    fit = featsel.lasso_fit(X, y, 0.0, tol=1e-12, max_iter=100_000)
    Xs, _, _ = featsel.standardize_columns(X)
    ls = np.linalg.solve(Xs.T @ Xs, Xs.T @ (y - y.mean()))
    np.testing.assert_allclose(fit.coef, ls, atol=1e-6)


def test_lasso_null_threshold():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(25, 6))
    y = rng.integers(0, 2, 25).astype(float)
    Xs, _, _ = featsel.standardize_columns(X)
    a0 = featsel.null_alpha(Xs, y - y.mean())
    for a in (a0, 1.5 * a0):
        assert not featsel.lasso_fit(X, y, a).coef.any()
    assert featsel.lasso_fit(X, y, 0.9 * a0).coef.any()


@pytest.mark.parametrize("seed", range(5))
def test_lasso_matches_proximal_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 5))
    y = (X[:, 0] + 0.5 * rng.normal(size=30) > 0).astype(float)
    fit = featsel.lasso_fit(X, y, 0.1, tol=1e-10, max_iter=100_000)
    Xs, _, _ = featsel.standardize_columns(X)
    yc = y - y.mean()
    ref = lasso_proximal(Xs, yc, 0.1)
    assert abs(lasso_value(Xs, yc, fit.coef, 0.1) - lasso_value(Xs, yc, ref, 0.1)) < 1e-6
    assert np.array_equal(np.flatnonzero(fit.coef), np.flatnonzero(ref))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.001, 0.3))
def test_lasso_kkt_and_monotone_objective(seed, alpha):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 8))
    y = rng.integers(0, 2, 15).astype(float)
    fit = featsel.lasso_fit(X, y, alpha, tol=1e-8, max_iter=50_000)
    assert fit.converged
    assert fit.kkt_residual <= 10 * fit.tol
    assert np.all(np.diff(fit.objective_history) <= 1e-12)


def test_lasso_nonconvergence_is_flagged():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(10, 30))
    fit = featsel.lasso_fit(X, rng.integers(0, 2, 10), 1e-4, tol=1e-14, max_iter=2)
    assert not fit.converged and fit.n_iter == 2


def test_lasso_rejects_bad_input():
    with pytest.raises(ValueError):
        featsel.lasso_fit(np.zeros((1, 3)), [1.0], 0.1)
    with pytest.raises(ValueError):
        featsel.lasso_fit(np.zeros((3, 3)), [1.0, 0, 1], -1)


def test_fsl_target_fraction():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 320))
    y = (X[:, :40].sum(axis=1) + rng.normal(size=120) > 0).astype(float)
    grid = featsel.default_alpha_grid(X, y, n_alphas=40, ratio=0.05)
    sel = featsel.fsl_select(X, y, 0.10, alpha_grid=grid)
    sizes = np.array(sel.details["support_sizes"])
    assert abs(len(sel.indices) - 32) == np.abs(sizes - 32).min()
    assert abs(len(sel.indices) - 32) <= 4
    assert sel.reduction_ratio == pytest.approx(1 - len(sel.indices) / 320)


def test_fsl_null_grid_rejected():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(30, 10))
    y = rng.integers(0, 2, 30).astype(float)
    a0 = featsel.default_alpha_grid(X, y)[0]
    with pytest.raises(ValueError, match="empty support"):
        featsel.fsl_select(X, y, alpha_grid=[a0])


def test_fsl_support_shrinks_with_alpha():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 20))
    y = (X[:, :5] @ np.arange(1, 6) + rng.normal(size=200) > 0).astype(float)
    grid = np.sort(featsel.default_alpha_grid(X, y, 25))
    sizes = [featsel.lasso_fit(X, y, a).support.size for a in grid]
    assert all(b <= a for a, b in zip(sizes, sizes[1:]))


def test_flatten_sizes_and_index_formula():
    assert featsel.flatten_features(np.zeros((32, 2, 2, 2)), "none").size == 256
    assert featsel.flatten_features(np.zeros((32, 4, 2, 2)), "temporal-mean").size == 128
    rng = np.random.default_rng(8)
    F = rng.normal(size=(32, 3, 4, 5))
    flat = featsel.flatten_features(F, "none")
    pooled = featsel.flatten_features(F, "temporal-mean")
    for _ in range(5):
        c, t, y, x = rng.integers(0, 32), rng.integers(0, 3), rng.integers(0, 4), rng.integers(0, 5)
        assert flat[((c * 3 + t) * 4 + y) * 5 + x] == F[c, t, y, x]
        assert pooled[(c * 4 + y) * 5 + x] == pytest.approx(F[c, :, y, x].mean(), abs=1e-15)


def test_kernel_columns_match_flatten():
    F = np.random.default_rng(9).normal(size=(32, 2, 3, 3))
    cols = featsel.kernel_columns([4, 10], F.shape)
    np.testing.assert_array_equal(featsel.flatten_features(F)[cols],
                                  np.concatenate([F[4].mean(0).ravel(), F[10].mean(0).ravel()]))


def test_selection_json_roundtrip():
    sel = featsel.fsr_select(hand_table_cases(), fold=2)
    back = SelectionResult.from_json(sel.to_json())
    assert back.indices == sel.indices and back.fold == 2 and back.method == "FSR"


def test_pgm_header(tmp_path):
    featsel.write_pgm(tmp_path / "m.pgm", np.arange(6.0).reshape(2, 3))
    data = (tmp_path / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n3 2\n255\n")
    assert data[-6:] == bytes([0, 51, 102, 153, 204, 255])
