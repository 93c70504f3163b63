"""Elliptic-curve group arithmetic and the primitives built on it.

Two curves are built in: ``SECP256K1`` for production use and ``TINY``, the
19-element curve y^2 = x^3 + 2x + 2 over F_17, whose discrete logarithms can
be brute-forced in tests.

Points are immutable and support ``+``, ``-`` and integer multiplication::

    >>> g = TINY.generator
    >>> g + g
    Point(TINY, 6, 3)
    >>> 19 * g == TINY.identity
    True

Randomness is always an explicit ``random.Random``-like argument; nothing in
this module touches ambient RNG state.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import secrets
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Optional, Sequence

__all__ = [
    "Curve",
    "Point",
    "Ciphertext",
    "Commitment",
    "VrfKeyPair",
    "VrfOutput",
    "SECP256K1",
    "TINY",
    "CryptoError",
    "IdentityPeerKey",
    "MalformedProof",
    "EncodingFailed",
    "MessageTooLong",
    "DegenerateRandomness",
    "outer_hash",
    "inner_hash",
    "hash_fields",
    "random_scalar",
    "scalar_mul",
    "point_add",
    "count_scalar_muls",
    "ecelgamal_keygen",
    "ecelgamal_enc",
    "ecelgamal_dec",
    "decryption_share",
    "ecdh_shared",
    "vrf_keygen",
    "vrf_eval",
    "vrf_verify",
    "vrf_gen",
    "vrf_hash",
    "vrf_ver",
    "points_to_bytes",
    "points_from_bytes",
    "hash_to_curve",
    "commit",
    "open_commitment",
    "verify_opening",
    "encode_message",
    "decode_message",
    "dleq_prove",
    "dleq_verify",
    "sign",
    "verify_signature",
    "scalar_to_bytes",
    "scalar_from_bytes",
]


class CryptoError(Exception):
    pass


class IdentityPeerKey(CryptoError):
    pass


class MalformedProof(CryptoError):
    pass


class EncodingFailed(CryptoError):
    pass


class MessageTooLong(CryptoError):
    pass


class DegenerateRandomness(CryptoError):
    pass


# ---------------------------------------------------------------------------
# hashing

def outer_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x48" + data).digest()


def inner_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x54" + data).digest()


def hash_fields(*fields: bytes, fn=outer_hash) -> bytes:
    """Hash a tuple of byte strings, each prefixed by its 4-byte LE length."""
    buf = bytearray()
    for f in fields:
        buf += len(f).to_bytes(4, "little")
        buf += f
    return fn(bytes(buf))


# ---------------------------------------------------------------------------
# scalar-multiplication accounting

_counters: contextvars.ContextVar[tuple] = contextvars.ContextVar("_counters", default=())


class ScalarMulCount:
    def __init__(self) -> None:
        self.count = 0

    def __repr__(self) -> str:
        return f"ScalarMulCount({self.count})"


@contextlib.contextmanager
def count_scalar_muls() -> Iterator[ScalarMulCount]:
    """Count every scalar multiplication performed inside the block."""
    counter = ScalarMulCount()
    token = _counters.set(_counters.get() + (counter,))
    try:
        yield counter
    finally:
        _counters.reset(token)


def _tick() -> None:
    for c in _counters.get():
        c.count += 1


# ---------------------------------------------------------------------------
# curves and points

@dataclass(frozen=True)
class Curve:
    name: str
    prime: int
    coef_a: int
    coef_b: int
    gx: int
    gy: int
    order: int
    cofactor: int = 1

    def __post_init__(self) -> None:
        if (4 * self.coef_a**3 + 27 * self.coef_b**2) % self.prime == 0:
            raise ValueError(f"curve {self.name} is singular")
        if not self.contains(self.gx, self.gy):
            raise ValueError(f"base point of {self.name} is not on the curve")

    def __repr__(self) -> str:
        return self.name

    @property
    def field_bytes(self) -> int:
        return (self.prime.bit_length() + 7) // 8

    @property
    def scalar_bytes(self) -> int:
        return (self.order.bit_length() + 7) // 8

    @property
    def generator(self) -> "Point":
        return Point(self, self.gx, self.gy)

    @property
    def identity(self) -> "Point":
        return Point(self, None, None)

    def contains(self, x: int, y: int) -> bool:
        p = self.prime
        return (y * y - (x * x * x + self.coef_a * x + self.coef_b)) % p == 0

    def point(self, x: int, y: int) -> "Point":
        if not (0 <= x < self.prime and 0 <= y < self.prime) or not self.contains(x, y):
            raise ValueError(f"({x}, {y}) is not on {self.name}")
        return Point(self, x, y)

    def sqrt(self, v: int) -> Optional[int]:
        p = self.prime
        v %= p
        if v == 0:
            return 0
        if p % 4 == 3:
            y = pow(v, (p + 1) // 4, p)
            return y if y * y % p == v else None
        if p < 1 << 16:
            for y in range(1, p):
                if y * y % p == v:
                    return y
            return None
        raise NotImplementedError("square roots only for p = 3 mod 4 or tiny p")

    def lift_x(self, x: int, odd: bool = False) -> Optional["Point"]:
        if not 0 <= x < self.prime:
            return None
        y = self.sqrt(x * x * x + self.coef_a * x + self.coef_b)
        if y is None:
            return None
        if y and (y & 1) != odd:
            y = self.prime - y
        return Point(self, x, y)

    def random_point(self, rng) -> "Point":
        return random_scalar(self, rng) * self.generator

    def decode_point(self, data: bytes) -> "Point":
        """Inverse of :meth:`Point.to_bytes` (SEC1 compressed)."""
        if data == b"\x00":
            return self.identity
        if len(data) != 1 + self.field_bytes or data[0] not in (2, 3):
            raise ValueError("bad point encoding")
        x = int.from_bytes(data[1:], "big")
        pt = self.lift_x(x, odd=data[0] == 3)
        if pt is None:
            raise ValueError("encoded x is not on the curve")
        return pt

    def point_size(self, first_byte: int) -> int:
        return 1 if first_byte == 0 else 1 + self.field_bytes


SECP256K1 = Curve(
    name="secp256k1",
    prime=2**256 - 2**32 - 977,
    coef_a=0,
    coef_b=7,
    gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
    order=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
    cofactor=1,
)

TINY = Curve(name="TINY", prime=17, coef_a=2, coef_b=2, gx=5, gy=1, order=19, cofactor=1)

CURVES = {c.name.lower(): c for c in (SECP256K1, TINY)}


@dataclass(frozen=True)
class Point:
    curve: Curve = field(repr=False)
    x: Optional[int]
    y: Optional[int]

    def __repr__(self) -> str:
        if self.x is None:
            return f"Point({self.curve.name}, identity)"
        return f"Point({self.curve.name}, {self.x}, {self.y})"

    @property
    def is_identity(self) -> bool:
        return self.x is None

    def __add__(self, other: "Point") -> "Point":
        return point_add(self, other)

    def __neg__(self) -> "Point":
        if self.x is None:
            return self
        return Point(self.curve, self.x, (-self.y) % self.curve.prime)

    def __sub__(self, other: "Point") -> "Point":
        return point_add(self, -other)

    def __rmul__(self, k: int) -> "Point":
        return scalar_mul(k, self)

    def __mul__(self, k: int) -> "Point":
        return scalar_mul(k, self)

    def to_bytes(self) -> bytes:
        if self.x is None:
            return b"\x00"
        prefix = 3 if self.y & 1 else 2
        return bytes([prefix]) + self.x.to_bytes(self.curve.field_bytes, "big")

    def hex(self) -> str:
        return self.to_bytes().hex()


def point_add(a: Point, b: Point) -> Point:
    if a.x is None:
        return b
    if b.x is None:
        return a
    c = a.curve
    p = c.prime
    if a.x == b.x:
        if (a.y + b.y) % p == 0:
            return c.identity
        slope = (3 * a.x * a.x + c.coef_a) * pow(2 * a.y, -1, p) % p
    else:
        slope = (b.y - a.y) * pow(b.x - a.x, -1, p) % p
    x3 = (slope * slope - a.x - b.x) % p
    return Point(c, x3, (slope * (a.x - x3) - a.y) % p)


# Jacobian coordinates (X, Y, Z) ~ (X/Z^2, Y/Z^3); Z == 0 is the identity.

def _jdouble(c: Curve, X: int, Y: int, Z: int):
    p = c.prime
    if Z == 0 or Y == 0:
        return 0, 1, 0
    YY = Y * Y % p
    S = 4 * X * YY % p
    ZZ = Z * Z % p
    M = 3 * X * X
    if c.coef_a:
        M += c.coef_a * ZZ * ZZ
    M %= p
    X3 = (M * M - 2 * S) % p
    Y3 = (M * (S - X3) - 8 * YY * YY) % p
    Z3 = 2 * Y * Z % p
    return X3, Y3, Z3


def _jadd_affine(c: Curve, X: int, Y: int, Z: int, x2: int, y2: int):
    p = c.prime
    if Z == 0:
        return x2, y2, 1
    ZZ = Z * Z % p
    U2 = x2 * ZZ % p
    S2 = y2 * ZZ * Z % p
    Hh = (U2 - X) % p
    R = (S2 - Y) % p
    if Hh == 0:
        if R == 0:
            return _jdouble(c, X, Y, Z)
        return 0, 1, 0
    HH = Hh * Hh % p
    HHH = HH * Hh % p
    V = X * HH % p
    X3 = (R * R - HHH - 2 * V) % p
    Y3 = (R * (V - X3) - Y * HHH) % p
    Z3 = Z * Hh % p
    return X3, Y3, Z3


def _to_affine(c: Curve, X: int, Y: int, Z: int) -> Point:
    if Z == 0:
        return c.identity
    p = c.prime
    zi = pow(Z, -1, p)
    zi2 = zi * zi % p
    return Point(c, X * zi2 % p, Y * zi2 * zi % p)


_WINDOW = 4


@lru_cache(maxsize=8)
def _comb_table(c: Curve, x: int, y: int):
    # table[i][d] = d * 16^i * P in affine form, for fixed-base multiplication
    rows = []
    base = Point(c, x, y)
    nwin = (c.order.bit_length() + _WINDOW - 1) // _WINDOW
    for _ in range(nwin):
        row = [None]
        acc = c.identity
        for _d in range(1, 1 << _WINDOW):
            acc = point_add(acc, base)
            row.append(None if acc.x is None else (acc.x, acc.y))
        rows.append(row)
        base = point_add(acc, base)  # 16 * base
    return rows


def scalar_mul(k: int, P: Point) -> Point:
    """Return k*P. Every call is counted by :func:`count_scalar_muls`."""
    _tick()
    c = P.curve
    k %= c.order
    if k == 0 or P.x is None:
        return c.identity
    if P.x == c.gx and P.y == c.gy:
        table = _comb_table(c, P.x, P.y)
        X, Y, Z = 0, 1, 0
        i = 0
        while k:
            d = k & 0xF
            if d:
                e = table[i][d]
                if e is not None:
                    X, Y, Z = _jadd_affine(c, X, Y, Z, e[0], e[1])
            k >>= 4
            i += 1
        return _to_affine(c, X, Y, Z)
    # fixed 4-bit window over affine odd/even multiples
    mults = [None, (P.x, P.y)]
    acc = P
    for _ in range(2, 16):
        acc = point_add(acc, P)
        mults.append(None if acc.x is None else (acc.x, acc.y))
    X, Y, Z = 0, 1, 0
    nb = (k.bit_length() + 3) // 4
    for i in range(nb - 1, -1, -1):
        for _ in range(4):
            X, Y, Z = _jdouble(c, X, Y, Z)
        d = (k >> (4 * i)) & 0xF
        if d and mults[d] is not None:
            X, Y, Z = _jadd_affine(c, X, Y, Z, *mults[d])
    return _to_affine(c, X, Y, Z)


# ---------------------------------------------------------------------------
# scalars

def random_scalar(curve: Curve, rng=None) -> int:
    """Uniform scalar in [1, order)."""
    if rng is None:
        return 1 + secrets.randbelow(curve.order - 1)
    return rng.randrange(1, curve.order)


def scalar_to_bytes(curve: Curve, k: int) -> bytes:
    return (k % curve.order).to_bytes(curve.scalar_bytes, "big")


def scalar_from_bytes(curve: Curve, data: bytes) -> int:
    return int.from_bytes(data, "big") % curve.order


# ---------------------------------------------------------------------------
# EC-ElGamal

@dataclass(frozen=True)
class Ciphertext:
    ephemeral: Point
    masked: Point

    def __add__(self, other: "Ciphertext") -> "Ciphertext":
        return Ciphertext(self.ephemeral + other.ephemeral, self.masked + other.masked)

    def __neg__(self) -> "Ciphertext":
        return Ciphertext(-self.ephemeral, -self.masked)

    def to_bytes(self) -> bytes:
        return self.ephemeral.to_bytes() + self.masked.to_bytes()


def ecelgamal_keygen(curve: Curve, rng=None) -> tuple[int, Point]:
    k = random_scalar(curve, rng)
    return k, k * curve.generator


def ecelgamal_enc(m: Point, pk: Point, r: int, *, allow_zero: bool = False) -> Ciphertext:
    """Encrypt the point ``m`` as (r*generator, m + r*pk).

    ``r == 0`` leaks the plaintext and is refused unless ``allow_zero``.
    """
    c = m.curve
    r %= c.order
    if r == 0 and not allow_zero:
        raise DegenerateRandomness("encryption randomness must be non-zero")
    return Ciphertext(r * c.generator, m + r * pk)


def ecelgamal_dec(ct: Ciphertext, sk: int) -> Point:
    return ct.masked - sk * ct.ephemeral


def decryption_share(ephemeral: Point, key_share: int) -> Point:
    """Partial decryption; subtracting every node's share from ``masked`` decrypts."""
    return key_share * ephemeral


def ecdh_shared(sk_self: int, pk_peer: Point) -> Point:
    if pk_peer.is_identity:
        raise IdentityPeerKey("peer public key is the identity")
    return sk_self * pk_peer


# ---------------------------------------------------------------------------
# Chaum-Pedersen proof that log_g1(h1) == log_g2(h2)

def _challenge(curve: Curve, *points: Point) -> int:
    return int.from_bytes(hash_fields(b"dleq", *(p.to_bytes() for p in points)), "big") % curve.order


def dleq_prove(x: int, g1: Point, g2: Point, rng=None, nonce_seed: bytes | None = None):
    curve = g1.curve
    if nonce_seed is not None:
        k = int.from_bytes(hash_fields(b"nonce", scalar_to_bytes(curve, x), nonce_seed), "big") % curve.order
        k = k or 1
    else:
        k = random_scalar(curve, rng)
    u, v = k * g1, k * g2
    ch = _challenge(curve, g1, x * g1, g2, x * g2, u, v)
    return ch, (k - ch * x) % curve.order


def dleq_verify(g1: Point, h1: Point, g2: Point, h2: Point, proof) -> bool:
    curve = g1.curve
    ch, s = proof
    u = s * g1 + ch * h1
    v = s * g2 + ch * h2
    return _challenge(curve, g1, h1, g2, h2, u, v) == ch


# ---------------------------------------------------------------------------
# VRF

@dataclass(frozen=True)
class VrfKeyPair:
    secret: int = field(repr=False)
    public: Point


@dataclass(frozen=True)
class VrfOutput:
    value: bytes
    proof: bytes


def hash_to_curve(curve: Curve, data: bytes) -> Point:
    """Try-and-increment map from bytes to a non-identity point."""
    for ctr in range(256):
        digest = hash_fields(b"h2c", data, bytes([ctr]))
        x = int.from_bytes(digest, "big") % curve.prime
        pt = curve.lift_x(x, odd=bool(digest[-1] & 1))
        if pt is not None and pt.y != 0:
            return pt
    raise EncodingFailed("no curve point found for input")


def vrf_keygen(curve: Curve, rng=None) -> VrfKeyPair:
    secret = random_scalar(curve, rng)
    return VrfKeyPair(secret, secret * curve.generator)


def _vrf_value(vrf_point: Point) -> bytes:
    return outer_hash(vrf_point.to_bytes())


def vrf_hash(secret: int, data: bytes, curve: Curve = SECP256K1) -> bytes:
    """The VRF output alone, skipping proof generation."""
    return _vrf_value(secret * hash_to_curve(curve, data))


def vrf_eval(secret: int, data: bytes, curve: Curve = SECP256K1) -> VrfOutput:
    if not data:
        raise ValueError("VRF input must be non-empty")
    input_point = hash_to_curve(curve, data)
    vrf_point = secret * input_point
    ch, s = dleq_prove(secret, curve.generator, input_point, nonce_seed=data)
    proof = vrf_point.to_bytes() + scalar_to_bytes(curve, ch) + scalar_to_bytes(curve, s)
    return VrfOutput(_vrf_value(vrf_point), proof)


def _parse_vrf_proof(curve: Curve, proof: bytes):
    sb = curve.scalar_bytes
    if not proof:
        raise MalformedProof("empty proof")
    plen = curve.point_size(proof[0])
    if len(proof) != plen + 2 * sb:
        raise MalformedProof("bad proof length")
    try:
        vrf_point = curve.decode_point(proof[:plen])
    except ValueError as exc:
        raise MalformedProof(str(exc)) from None
    ch = int.from_bytes(proof[plen:plen + sb], "big")
    s = int.from_bytes(proof[plen + sb:], "big")
    if ch >= curve.order or s >= curve.order:
        raise MalformedProof("scalar out of range")
    return vrf_point, ch, s


def vrf_verify(public: Point, data: bytes, value: bytes, proof: bytes) -> bool:
    curve = public.curve
    vrf_point, ch, s = _parse_vrf_proof(curve, proof)
    if vrf_point.is_identity or _vrf_value(vrf_point) != value:
        return False
    input_point = hash_to_curve(curve, data)
    return dleq_verify(curve.generator, public, input_point, vrf_point, (ch, s))


# ---------------------------------------------------------------------------
# hash commitments

@dataclass(frozen=True)
class Commitment:
    digest: bytes
    nonce: bytes = field(repr=False)

    def hex(self) -> str:
        return self.digest.hex()


def commit(payload: bytes, rng=None) -> Commitment:
    if rng is None:
        nonce = secrets.token_bytes(32)
    else:
        nonce = rng.getrandbits(256).to_bytes(32, "big")
    return Commitment(outer_hash(payload + nonce), nonce)


def verify_opening(digest: bytes, payload: bytes, nonce: bytes) -> bool:
    return outer_hash(payload + nonce) == digest


def open_commitment(c: Commitment, payload: bytes) -> bool:
    return verify_opening(c.digest, payload, c.nonce)


# ---------------------------------------------------------------------------
# message embedding: x = len || msg || zero padding || counter

def encode_message(msg: bytes, curve: Curve = SECP256K1) -> Point:
    width = curve.field_bytes
    room = width - 2
    if len(msg) > room:
        raise MessageTooLong(f"at most {max(room, 0)} bytes fit in one point")
    body = bytes([len(msg)]) + msg + bytes(room - len(msg))
    for ctr in range(256):
        x = int.from_bytes(body + bytes([ctr]), "big")
        pt = curve.lift_x(x)
        if pt is not None:
            return pt
    raise EncodingFailed("no counter value yields a curve point")


def decode_message(P: Point) -> bytes:
    if P.is_identity:
        raise ValueError("identity does not encode a message")
    raw = P.x.to_bytes(P.curve.field_bytes, "big")
    length = raw[0]
    if length > len(raw) - 2:
        raise ValueError("point does not carry an encoded message")
    return raw[1:1 + length]


# ---------------------------------------------------------------------------
# Schnorr signatures for ledger transactions

def sign(sk: int, msg: bytes, curve: Curve = SECP256K1) -> bytes:
    k = int.from_bytes(hash_fields(b"sig-nonce", scalar_to_bytes(curve, sk), msg), "big") % curve.order or 1
    nonce_point = k * curve.generator
    pk = sk * curve.generator
    e = int.from_bytes(hash_fields(b"sig", nonce_point.to_bytes(), pk.to_bytes(), msg), "big") % curve.order
    s = (k + e * sk) % curve.order
    return nonce_point.to_bytes() + scalar_to_bytes(curve, s)


def verify_signature(pk: Point, msg: bytes, sig: bytes) -> bool:
    curve = pk.curve
    if not sig or pk.is_identity:
        return False
    plen = curve.point_size(sig[0])
    if len(sig) != plen + curve.scalar_bytes:
        return False
    try:
        nonce_point = curve.decode_point(sig[:plen])
    except ValueError:
        return False
    s = int.from_bytes(sig[plen:], "big")
    e = int.from_bytes(hash_fields(b"sig", nonce_point.to_bytes(), pk.to_bytes(), msg), "big") % curve.order
    return s * curve.generator == nonce_point + e * pk


vrf_gen = vrf_keygen
vrf_ver = vrf_verify


def points_to_bytes(points: Sequence[Point]) -> bytes:
    return b"".join(p.to_bytes() for p in points)


def points_from_bytes(curve: Curve, data: bytes) -> list[Point]:
    out, i = [], 0
    while i < len(data):
        size = curve.point_size(data[i])
        out.append(curve.decode_point(data[i:i + size]))
        i += size
    return out
