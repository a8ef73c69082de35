import itertools
import json
import math
from collections import Counter

import numpy as np
import pytest

from latentrepair import latent_em as em
from latentrepair.dataset import RoleSpec
from latentrepair.errors import DataError, TauBoundError
from latentrepair.partition import Partition
from latentrepair.synthgen import RolesTemplate, generate, random_spec

from helpers import make_ds


def tiny():
    # two inadmissible blocks, one admissible context, binary label
    cols = {"C": [0, 0, 1, 1, 0, 1], "I1": [0, 1, 1, 0, 1, 1], "I2": [1, 1, 0, 0, 0, 1],
            "Y": [0, 1, 1, 0, 1, 0]}
    ds = make_ds(cols)
    roles = RoleSpec(inadmissible=("I1", "I2"), admissible=("C",), label="Y")
    return ds, roles, Partition(("I1",), ("I2",), tau=1)


def random_fixture(seed, n=3000, n_attrs=10, tau=2):
    tpl = RolesTemplate(n_sensitive=1, n_inadmissible=6, n_label_parents=3, n_additional=1)
    spec, roles = random_spec(n_attrs, 3, 0.4, tpl, seed)
    ds = generate(spec, n, seed)
    ic = list(roles.inadmissible)
    half = len(ic) // 2
    part = Partition(tuple(ic[:half]), tuple(ic[half:]), tau=tau)
    return ds, roles, part


def test_validate_tau():
    p33 = Partition(("a", "b", "c"), ("d", "e", "f"))
    assert em.validate_tau(3, p33)
    assert em.validate_tau(1, Partition(("a",), ()))
    assert not em.validate_tau(4, p33)
    assert not em.validate_tau(0, p33)
    assert not em.validate_tau(2, Partition(("a",), ("b", "c")))


def test_tau_one_posterior_and_mle():
    ds, roles, part = tiny()
    params = em.estimate(ds, part, roles, 1, n_iter=50, eta=1e-12, seed=0, smoothing=0.0)
    assert np.all(em.e_step(ds, params) == 1.0)
    # plain MLE of each block given its parents
    n = ds.n_records
    rows = list(zip(ds.column("C"), ds.column("I1"), ds.column("I2"), ds.column("Y")))
    c_cnt = Counter(r[0] for r in rows)
    want = 0.0
    for c, i1, i2, y in rows:
        p1 = sum(1 for r in rows if r[0] == c and r[1] == i1) / c_cnt[c]
        p2 = sum(1 for r in rows if r[0] == c and r[2] == i2) / c_cnt[c]
        py = sum(1 for r in rows if r[0] == c and r[3] == y) / c_cnt[c]
        want += math.log(p1 * p2 * py)
    want /= n
    assert em.log_likelihood(ds, params) == pytest.approx(want, abs=1e-12)
    # constant after the first update
    trace = params.loglik_trace
    assert all(abs(t - trace[1]) <= 1e-12 for t in trace[1:])
    # iteration 1 moves off the random start, iteration 2 sees no change and stops
    assert params.iterations_run == 3


def test_tau_one_matches_smoothed_empirical():
    ds, roles, part = tiny()
    delta = 0.3
    params = em.estimate(ds, part, roles, 1, seed=0, smoothing=delta)
    cpt = params.cpt_y
    # Y given C; child configs are [0],[1]
    for pid, pc in enumerate(cpt.parent_configs):
        mask = ds.column("C") == pc[0]
        counts = np.bincount(ds.column("Y")[mask], minlength=2)
        want = (counts + delta) / (counts.sum() + 2 * delta)
        assert np.allclose(cpt.distribution(0, pid), want, atol=1e-12)


def test_e_step_hand_table():
    ds, roles, part = tiny()
    params = em.m_step(ds, np.full((ds.n_records, 2), 0.5), Partition(("I1",), ("I2",)), roles, 2, 1e-6)
    params.theta_l = np.array([0.5, 0.5])
    # make record 0's factor product 0.02 under state 0 and 0.06 under state 1
    for cpt in params.cpts:
        cpt.prob[:] = 1.0
        cpt.rest[:] = 1.0
    pid, cid, eid = params.cpt_y.locate(ds)
    params.cpt_c1.prob[0, :] = 0.1
    params.cpt_c1.prob[1, :] = 0.2
    params.cpt_c2.prob[0, :] = 0.2
    params.cpt_c2.prob[1, :] = 0.3
    post = em.e_step(ds, params)
    assert post[0] == pytest.approx([0.25, 0.75], abs=1e-12)


def test_e_step_uniform_factors():
    ds, roles, _ = tiny()
    params = em.m_step(ds, np.full((ds.n_records, 3), 1 / 3), Partition(("I1",), ("I2",)), roles, 3, 1e-6)
    post = em.e_step(ds, params)
    assert np.allclose(post, 1 / 3, atol=1e-12)


def test_m_step_concentrates():
    ds = make_ds({"I1": [0, 1], "I2": [0, 0], "C": [0, 0], "Y": [0, 0]}, {"I2": 2, "C": 1, "Y": 2})
    roles = RoleSpec(inadmissible=("I1", "I2"), admissible=("C",), label="Y")
    post = np.array([[1.0, 0.0], [0.0, 1.0]])
    params = em.m_step(ds, post, Partition(("I1",), ("I2",)), roles, 2, 1e-6)
    cpt = params.cpt_c1
    d0, d1 = cpt.distribution(0, 0), cpt.distribution(1, 0)
    assert d0[0] == pytest.approx(1.0, abs=1e-5) and d1[1] == pytest.approx(1.0, abs=1e-5)
    assert params.theta_l.tolist() == [0.5, 0.5]


def test_m_step_theta_normalized_random():
    ds, roles, part = random_fixture(0, n=2000)
    rng = np.random.default_rng(0)
    for _ in range(5):
        post = rng.dirichlet(np.ones(2), size=ds.n_records)
        params = em.m_step(ds, post, part, roles, 2, 1e-6)
        assert abs(params.theta_l.sum() - 1.0) <= 1e-12
        assert max(c.normalization_error() for c in params.cpts) <= 1e-9


def test_m_step_rejects_unnormalized():
    ds, roles, part = tiny()
    with pytest.raises(AssertionError):
        em.m_step(ds, np.full((ds.n_records, 2), 0.4), Partition(("I1",), ("I2",)), roles, 2, 1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_monotone_normalized(seed):
    tau = 2 + seed % 2
    ds, roles, part = random_fixture(seed, n=3000, n_attrs=12, tau=tau)
    if not em.validate_tau(tau, part):
        tau = 2
    params = em.estimate(ds, part, roles, tau, n_iter=200, eta=1e-10, seed=seed)
    diffs = np.diff(params.loglik_trace)
    assert diffs.min() >= -1e-9
    assert max(c.normalization_error() for c in params.cpts) <= 1e-9
    assert abs(params.theta_l.sum() - 1.0) <= 1e-12 and params.theta_l.min() > 0
    for cpt in params.cpts:
        assert cpt.prob.min() > 0 and cpt.rest.min() > 0
    post = em.e_step(ds, params)
    assert np.abs(post.sum(axis=1) - 1.0).max() <= 1e-12
    assert em.log_likelihood(ds, params) <= 0.0


@pytest.mark.parametrize("tau", [2, 3])
def test_label_swap_bit_identical(tau):
    ds, roles, part = random_fixture(7, n=2000, n_attrs=12, tau=tau)
    if not em.validate_tau(tau, part):
        pytest.skip("fixture too small for this tau")
    params = em.estimate(ds, part, roles, tau, n_iter=30, seed=1)
    base = em.log_likelihood(ds, params)
    for perm in itertools.permutations(range(tau)):
        assert em.log_likelihood(ds, params.permuted(perm)) == base


def test_repeat_bit_identical_and_seeded():
    ds, roles, part = random_fixture(3)
    a = em.estimate(ds, part, roles, 2, n_iter=40, seed=5)
    b = em.estimate(ds, part, roles, 2, n_iter=40, seed=5)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert em.log_likelihood(ds, a) == em.log_likelihood(ds, a)


def test_serialization_round_trip():
    ds, roles, part = random_fixture(2)
    p = em.estimate(ds, part, roles, 2, n_iter=20, seed=0)
    doc = json.loads(json.dumps(p.to_dict()))
    assert doc["format"] == em.FORMAT_TAG and doc["version"] == em.FORMAT_VERSION
    q = em.PolicyParams.from_dict(doc)
    assert em.log_likelihood(ds, q) == em.log_likelihood(ds, p)
    assert q.partition.left == p.partition.left and q.tau == p.tau
    with pytest.raises(DataError):
        em.PolicyParams.from_dict(dict(doc, version=99))


def test_tau_bound_error():
    ds, roles, part = random_fixture(1)
    with pytest.raises(TauBoundError, match="min"):
        em.estimate(ds, part, roles, 9)


def test_input_validation():
    ds, roles, part = random_fixture(1)
    with pytest.raises(DataError):
        em.estimate(ds, part, roles, 2, n_iter=0)
    with pytest.raises(DataError):
        em.estimate(ds, part, roles, 2, eta=0.0)


def test_unseen_parent_backoff():
    ds, roles, part = tiny()
    params = em.estimate(ds, part, roles, 1, seed=0)
    other = make_ds({"C": [2], "I1": [0], "I2": [1], "Y": [1]}, {"C": 3, "I1": 2, "I2": 2, "Y": 2})
    # domains differ, so the fitted model must refuse
    with pytest.raises(DataError):
        em.log_likelihood(other, params)
    probs, nb = params.cpt_y.record_probs(ds.take(np.array([0])))
    assert nb == 0 and probs.shape == (1, 1)


def test_restarts_keep_best():
    ds, roles, part = random_fixture(5)
    one = em.estimate(ds, part, roles, 2, n_iter=50, seed=3, restarts=1)
    many = em.estimate(ds, part, roles, 2, n_iter=50, seed=3, restarts=3)
    assert many.final_loglik >= one.final_loglik


def test_permuted_rejects_non_permutation():
    ds, roles, part = random_fixture(2)
    p = em.estimate(ds, part, roles, 2, n_iter=5, seed=0)
    with pytest.raises(DataError):
        p.permuted([0, 0])
