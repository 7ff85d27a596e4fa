import numpy as np
import pytest
from scipy.stats import multivariate_normal

from hamst.inference.kalman import backward_sample, kalman_filter, psd_sqrt
from hamst.inference.sampler import Workspace
from hamst.kernels import NumericalError
from hamst.model import ParamVector, StDataset

from conftest import small_dataset


def _dense_joint(ws: Workspace):
    """Joint Gaussian of (x_0..x_T, y_1..y_T) given y_0 built by brute force."""
    p, n, T = ws.p, ws.n, ws.T
    s = p.sigma2 / 4
    a2 = p.alpha**2
    sig = ws.L_S @ np.swapaxes(ws.L_S, 1, 2)
    om = ws.L_O @ np.swapaxes(ws.L_O, 1, 2)
    P0 = p.sigma2_p * ws.L_O0 @ ws.L_O0.T
    # x_t = sum_k a2^(t-k) w_k with w_0 = x_0
    W = [P0] + [s * om[t - 1] for t in range(1, T + 1)]
    Cx = np.zeros(((T + 1) * n, (T + 1) * n))
    for i in range(T + 1):
        for j in range(T + 1):
            Cx[i * n:(i + 1) * n, j * n:(j + 1) * n] = sum(a2 ** (i - k) * a2 ** (j - k) * W[k] for k in range(min(i, j) + 1))
    A = np.zeros((T * n, (T + 1) * n))
    for t in range(1, T + 1):
        A[(t - 1) * n:t * n, (t - 1) * n:t * n] = p.alpha * np.diag(ws.dinv)
    R = np.zeros((T * n, T * n))
    for t in range(1, T + 1):
        R[(t - 1) * n:t * n, (t - 1) * n:t * n] = s * sig[t - 1]
    my = np.concatenate([p.beta * ws.y[t - 1] for t in range(1, T + 1)])
    Cy = A @ Cx @ A.T + R
    Cxy = Cx @ A.T
    return my, Cy, Cx, Cxy


def _filter(ws):
    p = ws.p
    sig = ws.L_S @ np.swapaxes(ws.L_S, 1, 2)
    om = ws.L_O @ np.swapaxes(ws.L_O, 1, 2)
    P0 = p.sigma2_p * ws.L_O0 @ ws.L_O0.T
    return kalman_filter(ws.y, ws.dinv, p.alpha, p.beta, p.sigma2 / 4, sig, om, P0, keep=True)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_filter_loglik_matches_dense_oracle(seed):
    d, p = small_dataset(3, 3, seed=seed)
    ws = Workspace.from_data(d, p)
    my, Cy, _, _ = _dense_joint(ws)
    ref = multivariate_normal(my, Cy).logpdf(d.y[1:].ravel())
    assert _filter(ws).loglik == pytest.approx(ref, abs=1e-8)


def test_ffbs_matches_exact_posterior():
    d, p = small_dataset(2, 2, seed=3)
    ws = Workspace.from_data(d, p)
    my, Cy, Cx, Cxy = _dense_joint(ws)
    K = np.linalg.solve(Cy, Cxy.T).T
    post_mean = K @ (d.y[1:].ravel() - my)
    post_cov = Cx - K @ Cxy.T
    fr = _filter(ws)
    g = np.random.default_rng(0)
    xs = np.array([backward_sample(fr, p.alpha, g).ravel() for _ in range(30000)])
    sd = np.sqrt(np.diag(post_cov))
    assert np.all(np.abs(xs.mean(axis=0) - post_mean) < 5 * sd / np.sqrt(xs.shape[0]) + 1e-12)
    np.testing.assert_allclose(np.cov(xs.T), post_cov, atol=0.03 * np.max(np.diag(post_cov)))


def test_psd_sqrt_reconstructs_and_rejects():
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    S = psd_sqrt(A)
    np.testing.assert_allclose(S @ S.T, A, atol=1e-14)
    S = psd_sqrt(np.zeros((2, 2)))
    assert np.all(S == 0)
    with pytest.raises(NumericalError):
        psd_sqrt(np.array([[1.0, 0.0], [0.0, -1.0]]))
