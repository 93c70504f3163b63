import random

import pytest
from hypothesis import given, settings, strategies as st

from bcmix.group_crypto import (
    SECP256K1, TINY, DegenerateRandomness, IdentityPeerKey, MalformedProof, MessageTooLong, commit,
    count_scalar_muls, decode_message, dleq_prove, dleq_verify, ecdh_shared, ecelgamal_dec, ecelgamal_enc,
    encode_message, hash_to_curve, open_commitment, points_from_bytes, points_to_bytes, random_scalar, sign,
    verify_opening, verify_signature, vrf_eval, vrf_keygen, vrf_verify,
)

scalars = st.integers(min_value=1, max_value=SECP256K1.order - 1)


def test_generator_has_stated_order():
    for curve in (TINY, SECP256K1):
        assert (curve.order * curve.generator).is_identity
        assert not ((curve.order - 1) * curve.generator).is_identity


def test_scalar_mul_matches_repeated_addition_on_small_curve():
    acc = TINY.identity
    for k in range(3 * TINY.order):
        assert k * TINY.generator == acc
        acc = acc + TINY.generator


@settings(max_examples=25, deadline=None)
@given(a=scalars, b=scalars)
def test_scalar_mul_distributes(a, b):
    g = SECP256K1.generator
    assert a * g + b * g == ((a + b) % SECP256K1.order) * g


def test_point_encoding_round_trip():
    rng = random.Random(3)
    pts = [SECP256K1.random_point(rng) for _ in range(5)] + [SECP256K1.identity]
    assert points_from_bytes(SECP256K1, points_to_bytes(pts)) == pts
    tiny = [k * TINY.generator for k in range(TINY.order)]
    assert points_from_bytes(TINY, points_to_bytes(tiny)) == tiny


def test_decode_rejects_off_curve():
    with pytest.raises(ValueError):
        SECP256K1.decode_point(b"\x02" + (5).to_bytes(32, "big"))


def test_elgamal_rejects_zero_randomness():
    rng = random.Random(1)
    sk = random_scalar(SECP256K1, rng)
    m = SECP256K1.random_point(rng)
    with pytest.raises(DegenerateRandomness):
        ecelgamal_enc(m, sk * SECP256K1.generator, 0)
    ct = ecelgamal_enc(m, sk * SECP256K1.generator, 0, allow_zero=True)
    assert ct.masked == m and ecelgamal_dec(ct, sk) == m


def test_elgamal_identity_message_round_trips():
    ct = ecelgamal_enc(TINY.identity, 3 * TINY.generator, 5)
    assert ecelgamal_dec(ct, 3).is_identity


def test_ecdh_refuses_identity_peer():
    with pytest.raises(IdentityPeerKey):
        ecdh_shared(5, SECP256K1.identity)


def test_dleq_accepts_true_and_rejects_false_statement():
    rng = random.Random(7)
    x = random_scalar(SECP256K1, rng)
    g1, g2 = SECP256K1.generator, hash_to_curve(SECP256K1, b"base")
    proof = dleq_prove(x, g1, g2, rng)
    assert dleq_verify(g1, x * g1, g2, x * g2, proof)
    assert not dleq_verify(g1, x * g1, g2, (x + 1) * g2, proof)


def test_vrf_example_round_trip():
    rng = random.Random(11)
    kp = vrf_keygen(SECP256K1, rng)
    out = vrf_eval(kp.secret, b"slot-1")
    assert vrf_verify(kp.public, b"slot-1", out.value, out.proof)
    assert not vrf_verify(kp.public, b"slot-2", out.value, out.proof)


def test_vrf_malformed_proof_raises():
    kp = vrf_keygen(SECP256K1, random.Random(2))
    out = vrf_eval(kp.secret, b"x")
    with pytest.raises(MalformedProof):
        vrf_verify(kp.public, b"x", out.value, out.proof[:-1])
    with pytest.raises(MalformedProof):
        vrf_verify(kp.public, b"x", out.value, b"")


def test_vrf_rejects_empty_input():
    with pytest.raises(ValueError):
        vrf_eval(5, b"")


def test_commitment_binding():
    c = commit(b"payload", random.Random(4))
    assert open_commitment(c, b"payload")
    assert not open_commitment(c, b"payloaf")
    assert not verify_opening(c.digest, b"payload", bytes(32))


@pytest.mark.parametrize("msg", [b"", b"a", b"hello world", bytes(range(30))])
def test_message_embedding_round_trip(msg):
    assert decode_message(encode_message(msg)) == msg


def test_message_too_long():
    with pytest.raises(MessageTooLong):
        encode_message(bytes(31))
    with pytest.raises(MessageTooLong):
        encode_message(b"ab", TINY)


def test_signature_binds_message_and_key():
    rng = random.Random(5)
    sk = random_scalar(SECP256K1, rng)
    pk = sk * SECP256K1.generator
    sig = sign(sk, b"tx")
    assert verify_signature(pk, b"tx", sig)
    assert not verify_signature(pk, b"ty", sig)
    assert not verify_signature((sk + 1) * SECP256K1.generator, b"tx", sig)
    assert not verify_signature(pk, b"tx", sig[:-1])


def test_scalar_mul_counter():
    with count_scalar_muls() as c:
        _ = 3 * SECP256K1.generator
        _ = SECP256K1.generator + SECP256K1.generator
    assert c.count == 1
