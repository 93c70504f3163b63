"""Additive-homomorphism mix cascade over an elliptic-curve group.

A round has two pipelines that walk the nodes in index order. The
precomputation pipeline works on EC-ElGamal ciphertexts under the system key
and leaves the last node holding the negated accumulated offset. The
real-time pipeline works on plain points and needs only point additions.

Typical use::

    cascade = MixCascade.create(curve, n_nodes=3, rng=rng)
    users = [MixUser.create(curve, rng) for _ in range(batch_size)]
    cascade.setup([u.pk for u in users])
    cascade.start_round(round_id=1, batch_size=batch_size, rng=rng)
    cascade.precompute()
    blinded = [blind_message(m, k) for m, k in zip(messages, cascade.slot_keys)]
    out = cascade.realtime(blinded)

Each permutation ``perm`` sends slot ``a`` to ``perm[a]``.
"""

from __future__ import annotations

import enum
import random
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .group_crypto import (
    Ciphertext,
    Curve,
    Point,
    commit,
    decryption_share,
    ecdh_shared,
    ecelgamal_enc,
    random_scalar,
    scalar_to_bytes,
    verify_opening,
)


class MixnetError(Exception):
    pass


class StaleRound(MixnetError):
    pass


class RoundNotPrecomputed(MixnetError):
    pass


class ShareCommitmentMismatch(MixnetError):
    def __init__(self, node: int, msg: str = "") -> None:
        self.node = node
        super().__init__(msg or f"node {node} opened a share that does not match its commitment")


class Stage(enum.IntEnum):
    PRECOMPUTE_PREPROCESS = 1
    PRECOMPUTE_MIX = 2
    PRECOMPUTE_POSTPROCESS = 3
    REALTIME_INPUT = 4
    REALTIME_PREPROCESS = 5
    REALTIME_MIX = 6
    REALTIME_POSTPROCESS = 7


STEP_NAMES = {
    "precompute_preprocess": Stage.PRECOMPUTE_PREPROCESS,
    "precompute_mix": Stage.PRECOMPUTE_MIX,
    "precompute_postprocess": Stage.PRECOMPUTE_POSTPROCESS,
    "realtime_preprocess": Stage.REALTIME_PREPROCESS,
    "realtime_mix": Stage.REALTIME_MIX,
    "realtime_postprocess": Stage.REALTIME_POSTPROCESS,
}


def permute(vec: Sequence, perm: Sequence[int]) -> list:
    out = [None] * len(vec)
    for a, v in enumerate(vec):
        out[perm[a]] = v
    return out


def compose(perms: Sequence[Sequence[int]]) -> list[int]:
    """Composite permutation of applying ``perms`` left to right."""
    if not perms:
        raise ValueError("need at least one permutation")
    total = list(range(len(perms[0])))
    for p in perms:
        total = [p[t] for t in total]
    return total


@dataclass
class MixBatch:
    round_id: int
    stage: Stage
    payload: list

    @property
    def batch_size(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        head = self.round_id.to_bytes(8, "big") + len(self.payload).to_bytes(2, "big") + bytes([int(self.stage)])
        return head + b"".join(v.to_bytes() for v in self.payload)


def _vec_bytes(points) -> bytes:
    return b"".join(p.to_bytes() for p in points)


def _scalars_bytes(curve: Curve, xs) -> bytes:
    return b"".join(scalar_to_bytes(curve, x) for x in xs)


def _perm_bytes(perm) -> bytes:
    return b"".join(p.to_bytes(2, "big") for p in perm)


@dataclass
class RoundSecrets:
    """Per-round material a node draws fresh and later opens in an audit."""
    round_id: int
    blind_scalars: list[int]
    offset_scalars: list[int]
    perm: list[int]
    blind_enc_rand: list[int]
    offset_enc_rand: list[int]
    blinds: list[Point] = field(default_factory=list)
    offsets: list[Point] = field(default_factory=list)


@dataclass
class MixNode:
    index: int
    curve: Curve
    key_share: int = field(repr=False)
    public_key: Point = field(init=False)
    shared_keys: list[Point] = field(default_factory=list, repr=False)
    secrets: Optional[RoundSecrets] = field(default=None, repr=False)
    commitments: dict = field(default_factory=dict, repr=False)
    shares: Optional[list[Point]] = field(default=None, repr=False)
    stored_offset: Optional[list[Point]] = field(default=None, repr=False)
    fault: Optional[str] = None
    precomputed: bool = False
    ephemerals: Optional[list[Point]] = field(default=None, repr=False)
    held_masked: Optional[list[Point]] = field(default=None, repr=False)
    rng: Optional[random.Random] = field(default=None, repr=False)
    _used_rounds: set = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        self.public_key = self.key_share * self.curve.generator

    @property
    def round_id(self) -> Optional[int]:
        return None if self.secrets is None else self.secrets.round_id

    def new_round(self, round_id: int, batch_size: int, rng) -> dict[str, bytes]:
        """Draw fresh r, s and a permutation and commit to them."""
        if round_id in self._used_rounds or (self._used_rounds and round_id < max(self._used_rounds)):
            raise StaleRound(f"node {self.index}: round {round_id} is not fresh")
        self._used_rounds.add(round_id)
        self.rng = random.Random(rng.getrandbits(64))
        c = self.curve
        perm = list(range(batch_size))
        rng.shuffle(perm)
        sec = RoundSecrets(
            round_id=round_id,
            blind_scalars=[random_scalar(c, rng) for _ in range(batch_size)],
            offset_scalars=[random_scalar(c, rng) for _ in range(batch_size)],
            perm=perm,
            blind_enc_rand=[random_scalar(c, rng) for _ in range(batch_size)],
            offset_enc_rand=[random_scalar(c, rng) for _ in range(batch_size)],
        )
        sec.blinds = [x * c.generator for x in sec.blind_scalars]
        sec.offsets = [x * c.generator for x in sec.offset_scalars]
        self.secrets = sec
        self.shares = None
        self.stored_offset = None
        self.precomputed = False
        self.ephemerals = self.held_masked = None
        self.commitments = {
            "blinds": commit(self.opening_payload("blinds"), rng),
            "offsets": commit(self.opening_payload("offsets"), rng),
            "perm": commit(self.opening_payload("perm"), rng),
        }
        return {k: v.digest for k, v in self.commitments.items()}

    def opening_payload(self, what: str) -> bytes:
        sec = self.secrets
        if what == "blinds":
            return _vec_bytes(sec.blinds) + _scalars_bytes(self.curve, sec.blind_enc_rand)
        if what == "offsets":
            return _vec_bytes(sec.offsets) + _scalars_bytes(self.curve, sec.offset_enc_rand)
        if what == "perm":
            return _perm_bytes(sec.perm)
        if what == "shares":
            return _vec_bytes(self.shares)
        raise KeyError(what)

    def _tamper(self, step: str, vec: list) -> list:
        if self.fault != step:
            return vec
        vec = list(vec)
        g = self.curve.generator
        first = vec[0]
        vec[0] = Ciphertext(first.ephemeral, first.masked + g) if isinstance(first, Ciphertext) else first + g
        return vec


@dataclass
class MixUser:
    curve: Curve
    sk: int = field(repr=False)
    pk: Point

    @classmethod
    def create(cls, curve: Curve, rng) -> "MixUser":
        sk = random_scalar(curve, rng)
        return cls(curve, sk, sk * curve.generator)

    def slot_key(self, node_pks: Sequence[Point]) -> Point:
        """User-side slot key: sum of ECDH keys with every node."""
        total = self.curve.identity
        for q in node_pks:
            total = total + ecdh_shared(self.sk, q)
        return total


@dataclass
class SetupResult:
    system_key: Point
    slot_keys: list[Point]
    shared: list[list[Point]]  # shared[i][j] between node i and user slot j


def setup(user_pubkeys: Sequence[Point], node_keypairs: Sequence[tuple[int, Point]]) -> SetupResult:
    """Derive the system key, per-slot keys and every node/user shared key."""
    if not node_keypairs:
        raise ValueError("need at least one node")
    curve = node_keypairs[0][1].curve
    shared = [[ecdh_shared(sk, u) for u in user_pubkeys] for sk, _ in node_keypairs]
    system_key = curve.identity
    for _, pk in node_keypairs:
        system_key = system_key + pk
    slot_keys = []
    for j in range(len(user_pubkeys)):
        acc = curve.identity
        for row in shared:
            acc = acc + row[j]
        slot_keys.append(acc)
    return SetupResult(system_key, slot_keys, shared)


def blind_message(message: Point, slot_key: Point) -> Point:
    return message - slot_key


# ---------------------------------------------------------------------------
# pipeline steps

def _check_round(nodes: Sequence[MixNode], round_id: int) -> None:
    for node in nodes:
        if node.round_id != round_id:
            raise StaleRound(f"node {node.index} is at round {node.round_id}, batch is round {round_id}")


def _check_precomputed(nodes: Sequence[MixNode], round_id: int) -> None:
    _check_round(nodes, round_id)
    for node in nodes:
        if not node.precomputed:
            raise RoundNotPrecomputed(f"node {node.index} has not finished precomputation")


@dataclass
class RoundTranscript:
    """Everything nodes broadcast during one round, in order."""
    round_id: int
    commitments: dict = field(default_factory=dict)  # (node, name) -> digest
    hops: dict = field(default_factory=dict)  # (stage, node) -> MixBatch
    opened_shares: dict = field(default_factory=dict)  # node -> list[Point]
    ephemerals: Optional[list[Point]] = None
    masked: Optional[list[Point]] = None
    inputs: Optional[MixBatch] = None
    output: Optional[list[Point]] = None

    def record(self, stage: Stage, node: int, batch: MixBatch) -> None:
        self.hops[(stage, node)] = batch


def precompute_preprocess(nodes: Sequence[MixNode], system_key: Point, round_id: int,
                          transcript: Optional[RoundTranscript] = None) -> MixBatch:
    _check_round(nodes, round_id)
    acc = None
    for node in nodes:
        sec = node.secrets
        enc = [ecelgamal_enc(r, system_key, x) for r, x in zip(sec.blinds, sec.blind_enc_rand)]
        acc = enc if acc is None else [a + e for a, e in zip(acc, enc)]
        acc = node._tamper("precompute_preprocess", acc)
        if transcript is not None:
            transcript.record(Stage.PRECOMPUTE_PREPROCESS, node.index,
                              MixBatch(round_id, Stage.PRECOMPUTE_PREPROCESS, acc))
    batch = MixBatch(round_id, Stage.PRECOMPUTE_PREPROCESS, acc)
    last = nodes[-1]
    last.commitments["enc_R"] = commit(batch.to_bytes(), last.rng)
    if transcript is not None:
        transcript.commitments[(last.index, "enc_R")] = last.commitments["enc_R"].digest
    return batch


def precompute_mix(nodes: Sequence[MixNode], system_key: Point, batch: MixBatch,
                   transcript: Optional[RoundTranscript] = None) -> MixBatch:
    _check_round(nodes, batch.round_id)
    acc = batch.payload
    for node in nodes:
        sec = node.secrets
        acc = permute(acc, sec.perm)
        acc = [v + ecelgamal_enc(s, system_key, x) for v, s, x in zip(acc, sec.offsets, sec.offset_enc_rand)]
        acc = node._tamper("precompute_mix", acc)
        if transcript is not None:
            transcript.record(Stage.PRECOMPUTE_MIX, node.index, MixBatch(batch.round_id, Stage.PRECOMPUTE_MIX, acc))
    return MixBatch(batch.round_id, Stage.PRECOMPUTE_MIX, acc)


def precompute_postprocess(nodes: Sequence[MixNode], batch: MixBatch,
                           transcript: Optional[RoundTranscript] = None) -> dict[int, bytes]:
    """Negate at the last node, compute and commit every decryption share.

    Returns the published share commitments by node index. Only the last
    node ends up holding the decrypted offset.
    """
    _check_round(nodes, batch.round_id)
    negated = [-ct for ct in batch.payload]
    ephemerals = [ct.ephemeral for ct in negated]
    masked = [ct.masked for ct in negated]
    published = {}
    for node in nodes:
        shares = [decryption_share(x, node.key_share) for x in ephemerals]
        shares = node._tamper("precompute_postprocess", shares)
        node.shares = shares
        node.commitments["shares"] = commit(node.opening_payload("shares"), node.rng)
        published[node.index] = node.commitments["shares"].digest
    last = nodes[-1]
    offset = list(masked)
    for node in nodes:
        offset = [o - sh for o, sh in zip(offset, node.shares)]
    last.stored_offset = offset
    last.held_masked = masked
    for node in nodes:
        node.ephemerals = ephemerals
        node.precomputed = True
    if transcript is not None:
        transcript.ephemerals = ephemerals
        transcript.masked = masked
        for idx, dg in published.items():
            transcript.commitments[(idx, "shares")] = dg
    return published


def realtime_preprocess(nodes: Sequence[MixNode], blinded: MixBatch,
                        transcript: Optional[RoundTranscript] = None) -> MixBatch:
    _check_precomputed(nodes, blinded.round_id)
    if transcript is not None:
        transcript.inputs = blinded
    acc = list(blinded.payload)
    for node in nodes:
        sec = node.secrets
        acc = [v + k + r for v, k, r in zip(acc, node.shared_keys, sec.blinds)]
        acc = node._tamper("realtime_preprocess", acc)
        if transcript is not None:
            transcript.record(Stage.REALTIME_PREPROCESS, node.index,
                              MixBatch(blinded.round_id, Stage.REALTIME_PREPROCESS, acc))
    return MixBatch(blinded.round_id, Stage.REALTIME_PREPROCESS, acc)


def realtime_mix(nodes: Sequence[MixNode], batch: MixBatch,
                 transcript: Optional[RoundTranscript] = None) -> tuple[MixBatch, bytes]:
    """Returns the mixed batch and the last node's commitment to it."""
    _check_precomputed(nodes, batch.round_id)
    acc = batch.payload
    for node in nodes:
        sec = node.secrets
        acc = permute(acc, sec.perm)
        acc = [v + s for v, s in zip(acc, sec.offsets)]
        acc = node._tamper("realtime_mix", acc)
        if transcript is not None:
            transcript.record(Stage.REALTIME_MIX, node.index, MixBatch(batch.round_id, Stage.REALTIME_MIX, acc))
    out = MixBatch(batch.round_id, Stage.REALTIME_MIX, acc)
    last = nodes[-1]
    last.commitments["mixed"] = commit(out.to_bytes(), last.rng)
    if transcript is not None:
        transcript.commitments[(last.index, "mixed")] = last.commitments["mixed"].digest
    return out, last.commitments["mixed"].digest


def open_share(node: MixNode) -> tuple[list[Point], bytes]:
    shares = node.shares
    if node.fault == "realtime_postprocess":
        shares = list(shares)
        shares[0] = shares[0] + node.curve.generator
    return shares, node.commitments["shares"].nonce


def realtime_postprocess(nodes: Sequence[MixNode], mixed: MixBatch, mixed_commitment: bytes,
                         transcript: Optional[RoundTranscript] = None) -> list[Point]:
    """Open every share against its commitment and strip the offset."""
    _check_precomputed(nodes, mixed.round_id)
    if not verify_opening(mixed_commitment, mixed.to_bytes(), nodes[-1].commitments["mixed"].nonce):
        raise ShareCommitmentMismatch(nodes[-1].index, "last node's mixed batch does not match its commitment")
    last = nodes[-1]
    out = [w + c for w, c in zip(mixed.payload, last.held_masked)]
    for node in nodes:
        shares, nonce = open_share(node)
        if not verify_opening(node.commitments["shares"].digest, _vec_bytes(shares), nonce):
            raise ShareCommitmentMismatch(node.index)
        if transcript is not None:
            transcript.opened_shares[node.index] = shares
        out = [o - sh for o, sh in zip(out, shares)]
    if transcript is not None:
        transcript.output = out
    for node in nodes:
        node.precomputed = False
    return out


# ---------------------------------------------------------------------------
# convenience wrapper

@dataclass
class MixCascade:
    curve: Curve
    nodes: list[MixNode]
    system_key: Optional[Point] = None
    slot_keys: list[Point] = field(default_factory=list)
    transcript: Optional[RoundTranscript] = None

    @classmethod
    def create(cls, curve: Curve, n_nodes: int, rng) -> "MixCascade":
        nodes = [MixNode(i + 1, curve, random_scalar(curve, rng)) for i in range(n_nodes)]
        return cls(curve, nodes)

    @property
    def node_pks(self) -> list[Point]:
        return [n.public_key for n in self.nodes]

    def setup(self, user_pubkeys: Sequence[Point]) -> SetupResult:
        res = setup(user_pubkeys, [(n.key_share, n.public_key) for n in self.nodes])
        for node, row in zip(self.nodes, res.shared):
            node.shared_keys = row
        self.system_key = res.system_key
        self.slot_keys = res.slot_keys
        return res

    def start_round(self, round_id: int, batch_size: int, rng) -> RoundTranscript:
        if batch_size == 1:
            warnings.warn("a batch of one message provides no anonymity", stacklevel=2)
        if len(self.slot_keys) != batch_size:
            raise ValueError(f"setup covered {len(self.slot_keys)} slots, round needs {batch_size}")
        tr = RoundTranscript(round_id)
        for node in self.nodes:
            for name, dg in node.new_round(round_id, batch_size, rng).items():
                tr.commitments[(node.index, name)] = dg
        self.transcript = tr
        return tr

    def precompute(self) -> None:
        tr = self.transcript
        b = precompute_preprocess(self.nodes, self.system_key, tr.round_id, tr)
        b = precompute_mix(self.nodes, self.system_key, b, tr)
        precompute_postprocess(self.nodes, b, tr)

    def realtime(self, blinded: Sequence[Point]) -> list[Point]:
        tr = self.transcript
        batch = MixBatch(tr.round_id, Stage.REALTIME_INPUT, list(blinded))
        v = realtime_preprocess(self.nodes, batch, tr)
        w, com = realtime_mix(self.nodes, v, tr)
        return realtime_postprocess(self.nodes, w, com, tr)

    def composite_permutation(self) -> list[int]:
        return compose([n.secrets.perm for n in self.nodes])
