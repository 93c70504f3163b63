"""Baseline cMix cascade over a multiplicative Schnorr group, with the
collision-tagging attack that two colluding nodes can mount against it.

The group is the order-q subgroup of quadratic residues modulo a safe prime
P = 2q + 1, generated by 4. Messages carry a short checksum so a receiver
(or an attacker) can tell a well-formed message from a tagged one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .group_crypto import commit, verify_opening
from .mixnet import compose, permute


class CmixError(Exception):
    pass


class AttackFailed(CmixError):
    pass


@dataclass(frozen=True)
class SchnorrGroup:
    modulus: int
    order: int
    generator: int = 4

    def __post_init__(self) -> None:
        if (self.modulus - 1) % self.order:
            raise ValueError("subgroup order must divide modulus - 1")
        if pow(self.generator, self.order, self.modulus) != 1 or self.generator % self.modulus in (0, 1):
            raise ValueError("generator does not have the stated order")

    @property
    def byte_len(self) -> int:
        return (self.modulus.bit_length() + 7) // 8

    def mul(self, a: int, b: int) -> int:
        return a * b % self.modulus

    def inv(self, a: int) -> int:
        return pow(a, -1, self.modulus)

    def exp(self, a: int, e: int) -> int:
        return pow(a, e, self.modulus)

    def random_exponent(self, rng) -> int:
        return rng.randrange(1, self.order)

    def random_element(self, rng) -> int:
        return pow(self.generator, self.random_exponent(rng), self.modulus)

    def contains(self, a: int) -> bool:
        return 0 < a < self.modulus and pow(a, self.order, self.modulus) == 1

    # Message embedding: value = payload || checksum, lifted into the
    # residue subgroup by picking whichever of value, modulus - value is a
    # residue (for a safe prime exactly one is).
    @property
    def payload_bits(self) -> int:
        return (self.modulus.bit_length() - 2) // 2

    @property
    def checksum_bits(self) -> int:
        return self.modulus.bit_length() - 2 - self.payload_bits

    def _checksum(self, payload: int) -> int:
        dg = hashlib.sha256(b"cmix-msg" + payload.to_bytes(self.byte_len, "big")).digest()
        return int.from_bytes(dg, "big") >> (256 - self.checksum_bits)

    def encode(self, payload: int) -> int:
        if not 0 <= payload < 1 << self.payload_bits:
            raise ValueError("payload out of range")
        value = (payload << self.checksum_bits) | self._checksum(payload)
        value += 1  # keep zero out of the group
        return value if self.contains(value) else self.modulus - value

    def decode(self, element: int) -> Optional[int]:
        """Payload of a well-formed message, or None if the checksum fails."""
        value = min(element, self.modulus - element) - 1
        if value < 0 or value >> (self.payload_bits + self.checksum_bits):
            return None
        payload = value >> self.checksum_bits
        if self._checksum(payload) != value & ((1 << self.checksum_bits) - 1):
            return None
        return payload


# Safe primes with 4 generating the prime-order residue subgroup.
TOY_GROUP = SchnorrGroup(0xABA5ABD8BECC230B, (0xABA5ABD8BECC230B - 1) // 2)
DEFAULT_GROUP = SchnorrGroup(
    0xF2B19788485432E856C0EA5A5F416206E341DD3A152A90D0D39C2273DE2DF0B7,
    (0xF2B19788485432E856C0EA5A5F416206E341DD3A152A90D0D39C2273DE2DF0B7 - 1) // 2,
)


def _vec_bytes(group: SchnorrGroup, vec: Sequence[int]) -> bytes:
    return b"".join(v.to_bytes(group.byte_len, "big") for v in vec)


@dataclass
class CmixNode:
    index: int
    group: SchnorrGroup
    exponent_share: int = field(repr=False)
    shared_keys: list[int] = field(default_factory=list, repr=False)
    blinds: list[int] = field(default_factory=list, repr=False)
    offsets: list[int] = field(default_factory=list, repr=False)
    perm: list[int] = field(default_factory=list)
    share: Optional[list[int]] = field(default=None, repr=False)
    share_commitment = None
    held_masked: Optional[list[int]] = field(default=None, repr=False)

    @property
    def public(self) -> int:
        return self.group.exp(self.group.generator, self.exponent_share)

    def new_round(self, batch_size: int, rng) -> None:
        g = self.group
        self.blinds = [g.random_element(rng) for _ in range(batch_size)]
        self.offsets = [g.random_element(rng) for _ in range(batch_size)]
        self.perm = list(range(batch_size))
        rng.shuffle(self.perm)
        self.share = None
        self.held_masked = None


@dataclass
class CmixUser:
    group: SchnorrGroup
    secret: int = field(repr=False)

    @classmethod
    def create(cls, group: SchnorrGroup, rng) -> "CmixUser":
        return cls(group, group.random_exponent(rng))

    @property
    def public(self) -> int:
        return self.group.exp(self.group.generator, self.secret)

    def slot_key(self, node_publics: Sequence[int]) -> int:
        key = 1
        for pk in node_publics:
            key = self.group.mul(key, self.group.exp(pk, self.secret))
        return key

    def blind(self, message: int, node_publics: Sequence[int]) -> int:
        return self.group.mul(message, self.group.inv(self.slot_key(node_publics)))


@dataclass
class Handler:
    """Network handler: collects inputs and combines per-node vectors."""
    group: SchnorrGroup
    log: list = field(default_factory=list)

    def combine(self, vectors: Sequence[Sequence]) -> list:
        g = self.group
        out = list(vectors[0])
        for vec in vectors[1:]:
            out = [_mul_any(g, a, b) for a, b in zip(out, vec)]
        return out


def _mul_any(g: SchnorrGroup, a, b):
    if isinstance(a, tuple):
        return (g.mul(a[0], b[0]), g.mul(a[1], b[1]))
    return g.mul(a, b)


@dataclass
class CmixNetwork:
    group: SchnorrGroup
    nodes: list[CmixNode]
    handler: Handler
    users: list[CmixUser] = field(default_factory=list)
    round_id: int = 0
    system_public: int = 1
    mixed_commitment = None
    published_commitments: dict = field(default_factory=dict)

    @classmethod
    def create(cls, group: SchnorrGroup, n_nodes: int, rng) -> "CmixNetwork":
        nodes = [CmixNode(i + 1, group, group.random_exponent(rng)) for i in range(n_nodes)]
        net = cls(group, nodes, Handler(group))
        pub = 1
        for nd in nodes:
            pub = group.mul(pub, nd.public)
        net.system_public = pub
        return net

    @property
    def node_publics(self) -> list[int]:
        return [nd.public for nd in self.nodes]

    def setup(self, users: Sequence[CmixUser]) -> None:
        self.users = list(users)
        for nd in self.nodes:
            nd.shared_keys = [self.group.exp(u.public, nd.exponent_share) for u in users]

    def encrypt(self, message: int, rng) -> tuple[int, int]:
        g = self.group
        x = g.random_exponent(rng)
        return (g.exp(g.generator, x), g.mul(message, g.exp(self.system_public, x)))

    def start_round(self, rng) -> None:
        self.round_id += 1
        self.published_commitments = {}
        self.mixed_commitment = None
        for nd in self.nodes:
            nd.new_round(len(self.users), rng)

    # -- precomputation ----------------------------------------------------

    def precompute(self, rng, share_hook=None) -> None:
        """``share_hook(node, share) -> share`` lets a corrupt node alter
        the decryption share it commits to."""
        g = self.group
        enc_inv_blinds = [[self.encrypt(g.inv(r), rng) for r in nd.blinds] for nd in self.nodes]
        acc = self.handler.combine(enc_inv_blinds)
        for nd in self.nodes:
            acc = permute(acc, nd.perm)
            acc = [_mul_any(g, a, self.encrypt(g.inv(t), rng)) for a, t in zip(acc, nd.offsets)]
        ephemerals = [c[0] for c in acc]
        last = self.nodes[-1]
        last.held_masked = [c[1] for c in acc]
        for nd in self.nodes:
            share = [g.exp(c, g.order - nd.exponent_share) for c in ephemerals]
            if share_hook is not None:
                share = share_hook(nd, share)
            nd.share = share
            nd.share_commitment = commit(_vec_bytes(g, share), rng)
            self.published_commitments[nd.index] = nd.share_commitment.digest

    # -- real time ---------------------------------------------------------

    def realtime_preprocess(self, blinded: Sequence[int], input_hook=None) -> list[int]:
        g = self.group
        contributions = []
        for nd in self.nodes:
            vec = [g.mul(k, r) for k, r in zip(nd.shared_keys, nd.blinds)]
            if input_hook is not None:
                vec = input_hook(nd, vec)
            contributions.append(vec)
        return self.handler.combine([list(blinded)] + contributions)

    def realtime_mix(self, vec: Sequence[int], rng) -> list[int]:
        g = self.group
        acc = list(vec)
        for nd in self.nodes:
            acc = permute(acc, nd.perm)
            acc = [g.mul(a, t) for a, t in zip(acc, nd.offsets)]
        self.mixed_commitment = commit(_vec_bytes(g, acc), rng)
        return acc

    def realtime_postprocess(self, mixed: Sequence[int], masked_override=None) -> tuple[list[int], bool]:
        """Combine shares into the output. Returns (output, all_commitments_ok)."""
        g = self.group
        ok = verify_opening(self.mixed_commitment.digest, _vec_bytes(g, mixed), self.mixed_commitment.nonce)
        masked = masked_override if masked_override is not None else self.nodes[-1].held_masked
        out = [g.mul(a, c) for a, c in zip(mixed, masked)]
        for nd in self.nodes:
            ok &= verify_opening(self.published_commitments[nd.index], _vec_bytes(g, nd.share),
                                 nd.share_commitment.nonce)
            out = [g.mul(o, s) for o, s in zip(out, nd.share)]
        return out, ok

    def composite_permutation(self) -> list[int]:
        return compose([nd.perm for nd in self.nodes])

    def run_round(self, messages: Sequence[int], rng) -> list[int]:
        self.start_round(rng)
        self.precompute(rng)
        blinded = [u.blind(m, self.node_publics) for u, m in zip(self.users, messages)]
        mixed = self.realtime_mix(self.realtime_preprocess(blinded), rng)
        out, ok = self.realtime_postprocess(mixed)
        if not ok:
            raise CmixError("commitment check failed in an honest round")
        return out


@dataclass
class TaggingResult:
    round_id: int
    tagged_slot: int
    linked_output: int
    true_output: int
    commitments_verified: bool
    outputs: list[int]

    @property
    def success(self) -> bool:
        return self.linked_output == self.true_output

    def to_json(self) -> dict:
        return {
            "round_id": self.round_id,
            "tagged_slot": self.tagged_slot,
            "linked_output": self.linked_output,
            "true_output": self.true_output,
            "commitments_verified": self.commitments_verified,
            "success": self.success,
        }


def tagging_attack(net: CmixNetwork, messages: Sequence[int], target_slot: int, rng,
                   corrupt_index: Optional[int] = None) -> TaggingResult:
    """Run one round in which an interior node colludes with the last node.

    The interior node folds a tag inverse into its committed share at
    position ``target_slot`` and multiplies the message entering at
    ``target_slot`` by the tag. Once the honest nodes have opened their
    shares, the colluders combine everything with the interior node's honest
    share and look for the single malformed output; its position is the
    link. The last node then absorbs both stray tag factors into the
    uncommitted masked vector, so published outputs match an untouched run.
    """
    g = net.group
    n = len(net.nodes)
    batch = len(net.users)
    if not 0 <= target_slot < batch:
        raise ValueError("target slot out of range")
    if corrupt_index is None:
        corrupt_index = 1 if n > 1 else n
    corrupt = net.nodes[corrupt_index - 1]
    last = net.nodes[-1]
    tag = g.random_element(rng)
    while tag == 1:
        tag = g.random_element(rng)
    honest_share: dict = {}

    def share_hook(nd, share):
        if nd is not corrupt:
            return share
        honest_share["value"] = list(share)
        share = list(share)
        share[target_slot] = g.mul(share[target_slot], g.inv(tag))
        return share

    def input_hook(nd, vec):
        if nd is not corrupt:
            return vec
        vec = list(vec)
        vec[target_slot] = g.mul(vec[target_slot], tag)
        return vec

    net.start_round(rng)
    net.precompute(rng, share_hook=share_hook)
    blinded = [u.blind(m, net.node_publics) for u, m in zip(net.users, messages)]
    mixed = net.realtime_mix(net.realtime_preprocess(blinded, input_hook=input_hook), rng)

    # Colluders' private view: every honest share plus the corrupt node's
    # untampered one.
    view = [g.mul(a, c) for a, c in zip(mixed, last.held_masked)]
    for nd in net.nodes:
        share = honest_share["value"] if nd is corrupt else nd.share
        view = [g.mul(v, s) for v, s in zip(view, share)]
    malformed = [p for p, v in enumerate(view) if g.decode(v) is None]
    if not malformed:
        linked = target_slot  # tag landed back on its own slot
    elif len(malformed) == 1:
        linked = malformed[0]
    else:
        raise AttackFailed(f"{len(malformed)} malformed outputs, cannot single out the tagged one")

    masked = list(last.held_masked)
    masked[target_slot] = g.mul(masked[target_slot], tag)
    masked[linked] = g.mul(masked[linked], g.inv(tag))
    outputs, ok = net.realtime_postprocess(mixed, masked_override=masked)
    true_output = net.composite_permutation()[target_slot]
    return TaggingResult(net.round_id, target_slot, linked, true_output, ok, outputs)
