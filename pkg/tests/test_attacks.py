import math
import random

import pytest

from bcmix import attacks


def _wilson(k, n, z=1.959963984540054):
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    return centre - half, centre + half


@pytest.mark.parametrize("k, n", [(0, 10), (3, 10), (500, 1000), (1000, 1000)])
def test_wilson_interval_closed_form(k, n):
    lo, hi = attacks.wilson_interval(k, n)
    elo, ehi = _wilson(k, n)
    assert lo == pytest.approx(max(elo, 0.0), abs=1e-9)
    assert hi == pytest.approx(min(ehi, 1.0), abs=1e-9)


@pytest.mark.parametrize("power, expected", [(0.0, 0.0), (1.0, 1.0)])
def test_capture_extremes(power, expected):
    sc = attacks.SybilScenario(power, trials=20, seed=1)
    assert attacks.sybil_probability(sc).probability == expected
    assert attacks.tagging_probability(sc).probability == expected


def test_tagging_at_least_sybil():
    results = attacks.capture_sweep([0.6343], [1e10, 1e12], trials=60, seed=2)
    by = {(r.extra["kind"], r.extra["difficulty"]): r.probability for r in results}
    for d in ("1e+10", "1e+12"):
        assert by[("tagging", d)] >= by[("sybil", d)]


def test_attacker_pool_choice_reaches_target():
    from bcmix.election import load_mining_pools
    rows = load_mining_pools()
    chosen = attacks.choose_attacker_pools(rows, 0.5384)
    total = sum(r["hashrate_ehs"] for r in rows)
    assert sum(r["hashrate_ehs"] for r in rows if r["name"] in chosen) / total >= 0.5384


def test_csv_output(tmp_path):
    res = [attacks.AttackResult.from_counts("x", 3, 10, kind="sybil")]
    path = tmp_path / "r.csv"
    attacks.write_csv(res, path)
    assert path.read_text().splitlines()[0].startswith("scenario,")


def test_anonymity_zero_honest_nodes_is_broken():
    res = attacks.anonymity_game(n=3, batch_size=4, trials=30, honest_nodes=0, seed=1)
    assert res.correct == 30 and res.advantage == 0.5


def test_anonymity_guess_ignores_challenge_with_one_honest_node(monkeypatch):
    """Both hypotheses always remain consistent, so every guess is the coin flip."""
    coin_only = []
    original = attacks._matching_guess

    def spy(view, rng):
        state = rng.getstate()
        guess = original(view, rng)
        coin_only.append(rng.getstate() != state)
        return guess

    monkeypatch.setattr(attacks, "_matching_guess", spy)
    attacks.anonymity_game(n=3, batch_size=6, trials=40, honest_nodes=1, seed=4)
    assert coin_only and all(coin_only)


def test_pair_consistency_keeps_true_pairs():
    from bcmix.group_crypto import TINY
    from bcmix.mixnet import MixCascade, MixUser, blind_message
    rng = random.Random(9)
    for _ in range(10):
        cascade = MixCascade.create(TINY, 3, rng)
        users = [MixUser.create(TINY, rng) for _ in range(5)]
        cascade.setup([u.pk for u in users])
        msgs = [k * TINY.generator for k in range(1, 6)]
        cascade.start_round(1, 5, rng)
        cascade.precompute()
        out = cascade.realtime([blind_message(m, k) for m, k in zip(msgs, cascade.slot_keys)])
        honest = 1
        view = {"cascade": cascade, "output": out, "honest": honest,
                "user_sks": {j: u.sk for j, u in enumerate(users) if j > 1}}
        ok = attacks.pair_consistency(view)
        nodes = cascade.nodes
        # true honest-node output slot of each input
        pos = list(range(5))
        for nd in nodes[:honest + 1]:
            pos = [nd.secrets.perm[p] for p in pos]
        assert all(ok[j, pos[j]] for j in range(5))


def test_replay_drill_small():
    rep = attacks.replay_drill(trials=150, seed=1)
    assert rep.passed, rep.to_json()


def test_mitm_drill_small():
    rep = attacks.mitm_drill(runs=8, seed=1)
    assert rep.in_model_rejections == rep.in_model_runs
    assert rep.eclipse_runs > 0


@pytest.mark.parametrize("scenario", ["crash", "false_accusation", "last_node_crash"])
def test_failover(scenario):
    rep = attacks.failover_drill(scenario)
    assert rep.detected and rep.within_budget
    if scenario == "crash":
        assert rep.validated and rep.reelected and rep.suspect not in rep.new_cascade
    elif scenario == "false_accusation":
        assert rep.accuser_flagged and not rep.reelected
    else:
        assert rep.round_aborted and rep.leaked_messages == 0
