import random
import warnings

import pytest

from bcmix.group_crypto import SECP256K1, TINY, encode_message
from bcmix.mixnet import (
    STEP_NAMES, MixBatch, MixCascade, MixUser, RoundNotPrecomputed, ShareCommitmentMismatch, Stage, StaleRound,
    blind_message, compose, permute, realtime_mix, realtime_postprocess, realtime_preprocess,
)


def _cascade(curve, n, batch_size, seed=0):
    rng = random.Random(seed)
    cascade = MixCascade.create(curve, n, rng)
    users = [MixUser.create(curve, rng) for _ in range(batch_size)]
    cascade.setup([u.pk for u in users])
    return cascade, users, rng


def test_permute_and_compose_agree():
    p1, p2 = [2, 0, 1], [1, 2, 0]
    vec = ["a", "b", "c"]
    assert permute(permute(vec, p1), p2) == permute(vec, compose([p1, p2]))
    with pytest.raises(ValueError):
        compose([])


def test_user_and_node_slot_keys_agree():
    cascade, users, _ = _cascade(SECP256K1, 3, 2)
    for u, key in zip(users, cascade.slot_keys):
        assert u.slot_key(cascade.node_pks) == key


def test_byte_messages_survive_a_round():
    cascade, users, rng = _cascade(SECP256K1, 3, 3, seed=4)
    msgs = [b"alpha", b"batch_size", b"gamma"]
    cascade.start_round(1, 3, rng)
    cascade.precompute()
    out = cascade.realtime([blind_message(encode_message(m), k) for m, k in zip(msgs, cascade.slot_keys)])
    perm = cascade.composite_permutation()
    assert [out[perm[a]] for a in range(3)] == [encode_message(m) for m in msgs]


def test_batch_of_one_warns():
    cascade, _, rng = _cascade(TINY, 2, 1)
    with pytest.warns(UserWarning):
        cascade.start_round(1, 1, rng)


def test_stale_round_rejected():
    cascade, _, rng = _cascade(TINY, 2, 2)
    cascade.start_round(5, 2, rng)
    with pytest.raises(StaleRound):
        cascade.start_round(5, 2, rng)
    with pytest.raises(StaleRound):
        cascade.start_round(4, 2, rng)


def test_realtime_before_precompute_refused():
    cascade, _, rng = _cascade(TINY, 2, 2)
    cascade.start_round(1, 2, rng)
    with pytest.raises(RoundNotPrecomputed):
        realtime_preprocess(cascade.nodes, MixBatch(1, Stage.REALTIME_INPUT, [TINY.generator] * 2))


def test_precomputation_used_once():
    cascade, _, rng = _cascade(TINY, 2, 2)
    cascade.start_round(1, 2, rng)
    cascade.precompute()
    cascade.realtime([TINY.generator, TINY.generator])
    with pytest.raises(RoundNotPrecomputed):
        cascade.realtime([TINY.generator, TINY.generator])


def test_tampered_share_is_caught():
    cascade, _, rng = _cascade(TINY, 3, 2)
    cascade.nodes[1].fault = "realtime_postprocess"
    cascade.start_round(1, 2, rng)
    cascade.precompute()
    with pytest.raises(ShareCommitmentMismatch) as exc:
        cascade.realtime([TINY.generator, TINY.generator])
    assert exc.value.node == 2


@pytest.mark.parametrize("step", [s for s in STEP_NAMES if s != "realtime_postprocess"])
def test_faulty_step_changes_the_output(step):
    cascade, users, rng = _cascade(TINY, 3, 4, seed=9)
    msgs = [k * TINY.generator for k in (1, 2, 3, 4)]
    cascade.nodes[0].fault = step
    cascade.start_round(1, 4, rng)
    cascade.precompute()
    out = cascade.realtime([blind_message(m, k) for m, k in zip(msgs, cascade.slot_keys)])
    assert sorted(p.to_bytes() for p in out) != sorted(p.to_bytes() for p in msgs)


def test_last_node_mixed_commitment_checked():
    cascade, _, rng = _cascade(TINY, 2, 2)
    cascade.start_round(1, 2, rng)
    cascade.precompute()
    v = realtime_preprocess(cascade.nodes, MixBatch(1, Stage.REALTIME_INPUT, [TINY.generator] * 2))
    w, digest = realtime_mix(cascade.nodes, v)
    w.payload[0] = w.payload[0] + TINY.generator
    with pytest.raises(ShareCommitmentMismatch):
        realtime_postprocess(cascade.nodes, w, digest)


def test_single_node_cascade():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cascade, _, rng = _cascade(TINY, 1, 3)
        cascade.start_round(1, 3, rng)
    cascade.precompute()
    msgs = [TINY.generator, 2 * TINY.generator, 5 * TINY.generator]
    out = cascade.realtime([blind_message(m, k) for m, k in zip(msgs, cascade.slot_keys)])
    assert sorted(map(repr, out)) == sorted(map(repr, msgs))
