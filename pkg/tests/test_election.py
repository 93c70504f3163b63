import math
import random

import numpy as np
import pytest
from scipy import stats

from bcmix import election
from bcmix.group_crypto import vrf_verify


def test_expected_lambda_example():
    # one block per window exactly when hashrate equals the minimum
    assert election.expected_lambda(election.min_hashrate(1e11, 30), 30, 1e11) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        election.expected_lambda(0, 30, 1e11)


@pytest.mark.parametrize("rate", [0.01, 1.0, 8.66, 40.0])
def test_poisson_tail_matches_scipy(rate):
    for m in range(0, 12):
        assert election.poisson_tail(rate, m) == pytest.approx(stats.poisson.sf(m - 1, rate), rel=1e-9, abs=1e-300)


def test_solution_counts_mean_matches_lambda():
    rates = [50e18, 30e18, 44e18]
    counts = election.simulate_solution_counts(rates, 30, 1e11, 20000, np.random.default_rng(0))
    rate = election.expected_lambda(sum(rates), 30, 1e11)
    assert counts.mean() == pytest.approx(rate, rel=0.02)
    assert counts.var() == pytest.approx(rate, rel=0.05)


def test_ip_cells():
    assert election.octet_cell(0) == election.octet_cell(1)
    assert election.ip_cell("203.107.32.162") == (election.octet_cell(203), election.octet_cell(107))
    with pytest.raises(ValueError):
        election.parse_ip("300.1.1.1")
    assert len(election.ip_prefix("10.20.30.40", 16)) == 2


def test_segmentation_small_examples():
    segs, ratio = election.balanced_segmentation([1, 1, 1, 1], 1.0)
    assert len(segs) == 4 and ratio == 1.0
    segs, _ = election.balanced_segmentation([10, 1], 2.0)
    assert segs == [(0, 2)]
    assert election.balanced_segmentation([], 5) == ([], 1.0)


def test_segmentation_bound_holds_on_random_inputs():
    rng = random.Random(5)
    for _ in range(100):
        w = [rng.randint(1, 50) for _ in range(rng.randint(1, 12))]
        segs, ratio = election.balanced_segmentation(w, 5)
        sums = [sum(w[a:b]) for a, b in segs]
        assert max(sums) / min(sums) <= 5 + 1e-9
        assert sum(sums) == sum(w)


def test_sharding_estimator_labels_and_predict():
    ips = ["1.1.0.1", "2.1.0.1", "64.1.0.1", "128.1.0.1", "200.200.0.1", "250.1.0.1"]
    est = election.IPSharding(max_ratio=2).fit(ips)
    assert len(est.labels_) == len(ips)
    assert list(est.predict(ips)) == list(est.labels_)
    assert est.balance_ <= 2


def test_sharding_min_pools():
    with pytest.raises(election.UnsatisfiableBalance):
        election.IPSharding(max_ratio=1, min_pools=3).fit(["1.1.0.1", "200.1.0.1"], sample_weight=[1, 5])


def test_pow_vote_and_witness():
    rng = random.Random(1)
    miner = election.Miner.create("m", "10.0.0.1", 1e17, rng)
    target = 2**250
    w, found = election.pow_vote(miner.address, b"state", b"slot", target, 1000)
    assert w is not None and found >= 1
    assert election.verify_witness(miner.address, b"state", b"slot", target, w)
    assert not election.verify_witness(miner.address, b"other", b"slot", target, w)


def test_vote_on_table_iv_elects_verifiable_cascade():
    rng = random.Random(0)
    miners = election.miners_from_pools(election.load_mining_pools(), rng)
    cands = election.run_vote_window(miners, b"state", b"slot", 1e6, 30, rng)
    pools = election.ip_sharding(cands, 5)
    cascade = election.form_cascade(election.vrf_select(p, 1) for p in pools)
    assert election.verify_cascade(cascade)
    values = [e.value for e in cascade]
    assert values == sorted(values)
    for e in cascade:
        assert vrf_verify(e.miner.vrf_public, election.vrf_input(e.miner.ip, 1), e.value, e.proof)


def test_empty_sharding_input():
    with pytest.raises(election.NoCandidates):
        election.ip_sharding([], 5)


def test_table_iv_total_hashrate():
    total = sum(r["hashrate_ehs"] for r in election.load_mining_pools())
    assert math.isclose(total, 124, rel_tol=0.01)
