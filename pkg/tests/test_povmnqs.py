import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixtomo.measure import Povm4
from mixtomo.ndo import save_json
from mixtomo.povmnqs import PovmNqsModel, outcome_digits
from mixtomo.qcore import kl_divergence
from oracles import fd_relative_error


def random_theta(model, seed, scale=0.5):
    return scale * np.random.default_rng(seed).standard_normal(model.n_params)


def test_layout_size():
    def site(k):
        return 10 * 4 * k + 10 + 100 + 10 + 40 + 4
    for n in (1, 2, 3):
        assert PovmNqsModel(n).n_params == sum(site(k) for k in range(n))


def test_digits_qubit_zero_most_significant():
    assert outcome_digits(2)[6].tolist() == [1, 2]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_zero_params_uniform(n):
    m = PovmNqsModel(n)
    theta = np.zeros(m.n_params)
    assert np.allclose(m.log_probs(theta), -n * math.log(4))
    assert np.allclose(m.full_distribution(theta), 4.0**-n)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_normalization_and_consistency(seed, n):
    m = PovmNqsModel(n)
    theta = random_theta(m, seed)
    q = m.full_distribution(theta)
    assert abs(q.sum() - 1) < 1e-10
    for cond in m.conditionals(theta):
        assert np.allclose(cond.sum(axis=1), 1.0, atol=1e-12)
    s = int(np.random.default_rng(seed).integers(4**n))
    assert q[s] == np.exp(m.log_prob(theta, s))


def test_zero_params_first_site_bias_gradient():
    m = PovmNqsModel(2)
    theta = np.zeros(m.n_params)
    b3 = slice(m.sites[0].size - 4, m.sites[0].size)
    for s in range(16):
        expect = np.eye(4)[s // 4] - 0.25
        assert np.allclose(m.grad_log_prob(theta, s)[b3], expect)


@pytest.mark.parametrize("n", [2, 3])
def test_autoregressive_masking(n):
    m = PovmNqsModel(n)
    theta = random_theta(m, n)
    base = m.conditionals(theta)
    for k in range(1, n):
        moved = theta.copy()
        site = m.sites[k]
        moved[site.offset:site.offset + site.size] += 0.3
        after = m.conditionals(moved)
        for j in range(k):
            assert np.array_equal(base[j], after[j])
        assert not np.allclose(base[k], after[k])


@pytest.mark.parametrize("n", [1, 2])
def test_score_identity(n):
    m = PovmNqsModel(n)
    theta = random_theta(m, 7 + n)
    log_q, grad, _ = m.log_probs_and_grads(theta)
    assert np.max(np.abs(np.exp(log_q) @ grad)) < 1e-9


@pytest.mark.parametrize("n", [1, 2, 3])
def test_fast_and_numpy_paths_agree(n):
    m = PovmNqsModel(n)
    theta = random_theta(m, 11 + n)
    lf, gf, _ = m.log_probs_and_grads(theta, fast=True)
    ls, gs, _ = m.log_probs_and_grads(theta, fast=False)
    assert np.allclose(lf, ls, atol=1e-12)
    assert np.allclose(gf, gs, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_gradient_matches_finite_differences(n):
    m = PovmNqsModel(n)
    rng = np.random.default_rng(50 + n)
    for _ in range(3):
        theta = random_theta(m, int(rng.integers(2**31)))
        assert fd_relative_error(m, theta, int(rng.integers(m.n_pairs))) < 1e-5


def test_small_fit_to_maximally_mixed():
    m = PovmNqsModel(1)
    target = Povm4(1).probabilities(np.eye(2) / 2)
    theta = m.init_params(np.random.default_rng(0))
    for _ in range(4000):
        grad = m.log_probs_and_grads(theta)[1]
        theta += 0.5 * target @ grad
    assert kl_divergence(target, m.full_distribution(theta)) < 1e-6


def test_reconstruction_pipeline_hermitian_trace_one():
    m = PovmNqsModel(2)
    rho = Povm4(2).reconstruct(m.full_distribution(random_theta(m, 3, 1.0)))
    assert np.allclose(rho, rho.conj().T)
    assert abs(np.trace(rho) - 1) < 1e-9


def test_init_zero_biases():
    m = PovmNqsModel(2)
    theta = m.init_params(np.random.default_rng(1))
    for k in range(2):
        W1, b1, W2, b2, W3, b3 = m.site_params(theta, k)
        assert not b1.any() and not b2.any() and not b3.any()
        assert W2.std() > 0.05


def test_errors_and_json(tmp_path):
    m = PovmNqsModel(2)
    with pytest.raises(ValueError):
        m.log_prob(np.zeros(m.n_params), 16)
    with pytest.raises(ValueError):
        m.log_probs(np.zeros(5))
    with pytest.raises(ValueError):
        PovmNqsModel(0)
    theta = random_theta(m, 1)
    save_json(m, theta, tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["scheme"] == "povmnqs" and data["widths"] == [10, 10]
    m2, t2 = PovmNqsModel.from_dict(data)
    assert np.array_equal(t2, theta) and m2.n == 2
