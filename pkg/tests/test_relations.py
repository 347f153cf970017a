import itertools
import json

import numpy as np
import pytest

from conftest import signed_permutation, unit_gaussian
from sparserec.certify import erc_value
from sparserec.operators import DenseOperator, FBIError
from sparserec.relations import (
    CapExceeded,
    construct_source_witness,
    implication_suite,
    nsp_check,
    random_kernel_ratio,
    sc_l1_error_bound,
    theta_of,
    uniform_strict_sc,
)


def test_theta():
    assert theta_of([1.0, -1.0, 0.0]) == 0.0
    assert theta_of([1.0, 0.3, -0.7]) == 0.7
    assert theta_of([]) == 0.0


def test_witness_orthonormal(rng):
    K = signed_permutation(rng, 6)
    s = np.array([1.0, -1.0])
    wit = construct_source_witness(K, [1, 4], s)
    np.testing.assert_allclose(wit.w, K.entries[:, [1, 4]] @ s, atol=1e-14)
    np.testing.assert_allclose(wit.xi, K.rmatvec(wit.w), atol=1e-10)
    assert wit.strict_margin == 1.0 and wit.theta == 0.0


def test_witness_matches_sign_on_support(rng):
    K = unit_gaussian(rng, 10, 20)
    I = [2, 7, 13]
    for s in itertools.product([1.0, -1.0], repeat=3):
        wit = construct_source_witness(K, I, s)
        np.testing.assert_allclose(wit.xi[I], s, atol=1e-8)
        assert wit.w_norm == pytest.approx(np.linalg.norm(wit.w))
        # minimum norm: w lies in range(K_I)
        AI = K.entries[:, I]
        proj = AI @ np.linalg.lstsq(AI, wit.w, rcond=None)[0]
        np.testing.assert_allclose(proj, wit.w, atol=1e-10)


def test_witness_errors(rng):
    A = rng.standard_normal((4, 3))
    K = DenseOperator(np.column_stack([A, A[:, 0]]))
    with pytest.raises(FBIError):
        construct_source_witness(K, [0, 3], [1, 1])
    with pytest.raises(ValueError):
        construct_source_witness(K, [0, 1], [1])


def test_coherent_counterexample_margin_nonpositive():
    # atom 2 = normalized (e0 + e1): ERC fails on I = {0, 1}
    h = np.sqrt(0.5)
    K = DenseOperator(np.array([[1.0, 0.0, h], [0.0, 1.0, h], [0.0, 0.0, 0.0]])[:2])
    assert erc_value(K, [0, 1]) > 1
    wit = construct_source_witness(K, [0, 1], [1.0, 1.0])
    assert wit.strict_margin <= 0


def test_uniform_sc_under_erc(rng):
    checked = 0
    while checked < 20:
        K = unit_gaussian(rng, 12, 20)
        I = sorted(rng.choice(20, 2, replace=False))
        if erc_value(K, I) >= 1:
            continue
        holds, margin, _ = uniform_strict_sc(K, I)
        assert holds and margin > 0
        checked += 1


def test_sc_bound():
    val = sc_l1_error_bound(2.0, 0.0, 0.5, 0.0, 0.1, 0.05)
    assert val == pytest.approx(3 * 0.05**2 / 0.1 + (0.1 + 0.05) / 0.5)
    # alpha ~ epsilon gives a bound linear in epsilon
    b = [sc_l1_error_bound(1.5, 0.4, 0.7, 2.0, e, e) for e in (1e-3, 1e-4)]
    assert b[0] / b[1] == pytest.approx(10, rel=1e-12)
    for bad in [dict(theta=1.0), dict(c=0.0), dict(alpha=0.0)]:
        kw = dict(K_norm=1.0, theta=0.2, c=1.0, w_norm=1.0, alpha=0.1, epsilon=0.1) | bad
        with pytest.raises(ValueError):
            sc_l1_error_bound(**kw)


def test_nsp_examples(rng):
    r = nsp_check(DenseOperator(rng.standard_normal((5, 4))), [0, 1])
    assert r.holds and r.worst_ratio == 0.0 and r.kernel_dim == 0
    r = nsp_check(DenseOperator(np.array([[1.0, 1.0]])), [0])
    assert not r.holds and r.worst_ratio == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.abs(r.witness) / np.max(np.abs(r.witness)), [1, 1], atol=1e-12)


def test_nsp_kernel_inside_support():
    K = DenseOperator(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    r = nsp_check(K, [0, 1])
    assert not r.holds and r.worst_ratio == np.inf


def test_nsp_lp_agrees_with_sampling(rng):
    for _ in range(15):
        K = DenseOperator(rng.standard_normal((6, 9)))
        I = sorted(rng.choice(9, 2, replace=False))
        res = nsp_check(K, I)
        sampled = random_kernel_ratio(K, I, 20000, rng)
        assert sampled <= res.worst_ratio + 1e-9
        # the LP optimum is attained, so sampling gets reasonably close
        assert sampled >= 0.5 * res.worst_ratio
        if not res.holds:
            u = res.witness
            assert np.linalg.norm(K.matvec(u)) <= 1e-9 * np.linalg.norm(u)


def test_nsp_under_erc(rng):
    done = 0
    while done < 10:
        K = unit_gaussian(rng, 6, 9)
        I = sorted(rng.choice(9, 2, replace=False))
        if erc_value(K, I) >= 1:
            continue
        assert nsp_check(K, I).holds
        done += 1


def test_caps(rng):
    K = DenseOperator(rng.standard_normal((2, 20)))
    with pytest.raises(CapExceeded):
        nsp_check(K, [0])
    with pytest.raises(CapExceeded):
        uniform_strict_sc(DenseOperator(rng.standard_normal((12, 12))), range(9))


def test_suite_orthonormal_and_failure(rng):
    rep = implication_suite(signed_permutation(rng, 6), [0, 3])
    assert rep["erc"]["holds"] and rep["uniform_strict_sc"]["holds"] and rep["nsp"]["holds"]
    assert rep["schema"] == "relations.v1" and rep["chain_violations"] == []
    json.dumps(rep)
    h = np.sqrt(0.5)
    K = DenseOperator(np.array([[1.0, 0.0, h, 0.3], [0.0, 1.0, h, -0.2]]))
    rep = implication_suite(K, [0, 1])
    assert not rep["erc"]["holds"] and rep["chain_violations"] == []
