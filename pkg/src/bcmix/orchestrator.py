"""Full rounds: initialization, vote, mix and audit, wired over the ledger.

One :class:`Orchestrator` owns the chain, the participants and a simulated
network. Per slot it elects a cascade, has users publish key-exchange
transactions, runs the mix with every precomputation commitment written to
the commitment chain and buried ``confirmations`` blocks deep before the
first real-time hop, and audits the outcome.

    orch = Orchestrator(OrchestratorConfig(), seed=7)
    orch.phase_init(n_users=4, pools=load_mining_pools())
    cascade = orch.phase_vote(slot=1)
    record = orch.phase_mix(1, [b"a", b"b", b"c", b"d"])
    verdict = orch.phase_audit(record)
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import ledger
from .election import (
    Elected,
    Miner,
    NoCandidates,
    form_cascade,
    ip_sharding,
    miners_from_pools,
    run_vote_window,
    verify_cascade,
    vrf_select,
)
from .group_crypto import (
    SECP256K1,
    Ciphertext,
    Curve,
    Point,
    decode_message,
    dleq_prove,
    dleq_verify,
    ecdh_shared,
    ecelgamal_enc,
    encode_message,
    outer_hash,
    points_from_bytes,
    random_scalar,
    scalar_from_bytes,
    verify_opening,
)
from .mixnet import (
    MixBatch,
    MixnetError,
    MixNode,
    RoundTranscript,
    Stage,
    blind_message,
    open_share,
    permute,
    precompute_mix,
    precompute_postprocess,
    precompute_preprocess,
    realtime_mix,
    realtime_postprocess,
    realtime_preprocess,
)
from .netsim import Channel, LatencyModel, Network


class OrchestratorError(Exception):
    pass


class LengthMismatch(OrchestratorError):
    pass


class MissingKeyExchange(OrchestratorError):
    pass


CLEAN = "Clean"
MALICIOUS = "Malicious"
UNVERIFIABLE = "Unverifiable"

# commitments each node publishes before the real-time phase
PRE_REALTIME_COMMITMENTS = ("blinds", "offsets", "perm", "shares")


@dataclass
class OrchestratorConfig:
    curve: Curve = SECP256K1
    vote_difficulty: float = 1e6
    window: float = 30.0
    max_ratio: float = 5.0
    prefix_bits: int = 16
    confirmations: int = 6
    ledger_target: int = 2**250
    max_vote_attempts: int = 200_000
    mine_budget: int = 1_000_000
    latency: LatencyModel = field(default_factory=LatencyModel)


@dataclass
class User:
    id: str
    sk: int = field(repr=False)
    pk: Point

    @property
    def address(self) -> bytes:
        return outer_hash(self.pk.to_bytes())[:20]


@dataclass(frozen=True)
class AuditVerdict:
    kind: str
    node: Optional[int] = None  # 1-based cascade position
    step: str = ""

    def __str__(self) -> str:
        return self.kind if self.node is None else f"{self.kind}({self.node})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "node": self.node, "step": self.step}


@dataclass
class RoundRecord:
    slot: int
    round_id: int
    cascade: list[Elected]
    batch_size: int
    ke_txids: list[list[str]]  # per user, one per node
    com_blocks: list[str]
    messages: list[bytes]
    inputs: list[Point]
    output: Optional[list[Point]]
    transcript: RoundTranscript
    nodes: list[MixNode] = field(repr=False, default_factory=list)
    users: list[User] = field(repr=False, default_factory=list)
    failure: str = ""
    refusing: frozenset = frozenset()
    events: list[tuple[str, float]] = field(default_factory=list)
    verdict: Optional[AuditVerdict] = None
    trace_hash: str = ""

    def decoded_output(self) -> Optional[list[bytes]]:
        if self.output is None:
            return None
        out = []
        for p in self.output:
            try:
                out.append(decode_message(p))
            except ValueError:
                out.append(b"")
        return out

    def to_json(self, transcript: bool = False) -> dict:
        doc = {
            "slot": self.slot,
            "round_id": self.round_id,
            "batch_size": self.batch_size,
            "cascade": [e.broadcast_payload() for e in self.cascade],
            "ke_txids": self.ke_txids,
            "com_blocks": self.com_blocks,
            "inputs": [p.hex() for p in self.inputs],
            "output": None if self.output is None else [p.hex() for p in self.output],
            "messages_out": None if self.output is None else [m.hex() for m in self.decoded_output()],
            "failure": self.failure,
            "verdict": None if self.verdict is None else self.verdict.to_json(),
            "events": [[name, round(t, 9)] for name, t in self.events],
            "trace_hash": self.trace_hash,
        }
        if transcript:
            tr = self.transcript
            doc["transcript"] = {
                "commitments": sorted([node, name, dg.hex()] for (node, name), dg in tr.commitments.items()),
                "hops": [[int(st), node, b.to_bytes().hex()] for (st, node), b in sorted(tr.hops.items())],
                "opened_shares": {str(k): [p.hex() for p in v] for k, v in sorted(tr.opened_shares.items())},
            }
        return doc


def verify_multiset(inputs: Sequence[Point], outputs: Sequence[Point]) -> bool:
    if len(inputs) != len(outputs):
        raise LengthMismatch(f"{len(inputs)} inputs vs {len(outputs)} outputs")
    return sorted(p.to_bytes() for p in inputs) == sorted(p.to_bytes() for p in outputs)


def _com_label(round_id: int, node: int, name: str) -> bytes:
    return f"{round_id}:{node}:{name}".encode()


def _split_points_scalars(curve: Curve, data: bytes, count: int) -> tuple[list[Point], list[int]]:
    pts, i = [], 0
    for _ in range(count):
        size = curve.point_size(data[i])
        pts.extend(points_from_bytes(curve, data[i:i + size]))
        i += size
    width = (curve.order.bit_length() + 7) // 8
    scalars = [scalar_from_bytes(curve, data[j:j + width]) for j in range(i, len(data), width)]
    return pts, scalars


class Orchestrator:
    def __init__(self, config: Optional[OrchestratorConfig] = None, seed: int = 0) -> None:
        self.config = config or OrchestratorConfig()
        self.rng = random.Random(seed)
        self.chain = ledger.Chain.genesis(self.config.ledger_target, curve=self.config.curve)
        self.users: list[User] = []
        self.miners: list[Miner] = []
        self.removed: set[str] = set()
        self.cascades: dict[int, list[Elected]] = {}
        self.candidate_log: dict[int, list[str]] = {}
        self.net: Optional[Network] = None
        self._round = 0

    # -- init ---------------------------------------------------------------

    def phase_init(self, n_users: int = 0, pools: Sequence[dict] = (), miners: Sequence[Miner] = ()) -> dict:
        """Create accounts for users and miners (or adopt given miners)."""
        c = self.config.curve
        for i in range(n_users):
            sk = random_scalar(c, self.rng)
            self.users.append(User(f"user{len(self.users)}", sk, sk * c.generator))
        if pools:
            self.miners.extend(miners_from_pools(pools, self.rng, c))
        self.miners.extend(miners)
        ids = [u.id for u in self.users] + [m.id for m in self.miners]
        self.net = Network(ids, latency=self.config.latency, seed=self.rng.getrandbits(64))
        return {
            "users": {u.id: u.address.hex() for u in self.users},
            "miners": {m.id: m.address.hex() for m in self.miners},
        }

    # -- ledger helpers ------------------------------------------------------

    def _mine(self, data: bytes = b"") -> ledger.MainBlock:
        blk, _ = ledger.mine_main(self.chain, data, [], self.config.ledger_target, self.config.mine_budget, self.rng)
        self.chain = self.chain.with_main(blk)
        return blk

    def _side(self, kind: ledger.BlockKind, txs, cosigners: Sequence[int], data: bytes) -> ledger.SideBlock:
        pinned = self.chain.head.ke_height if kind == ledger.BlockKind.KE else self.chain.head.com_height
        if pinned != len(self.chain.side(kind)) - 1:
            self._mine(b"pin")
        self.chain = ledger.append_side_block(self.chain, kind, txs, cosigners, data)
        return self.chain.side(kind)[-1]

    # -- vote -----------------------------------------------------------------

    def phase_vote(self, slot: int) -> list[Elected]:
        """Elect and broadcast this slot's cascade; every user verifies it."""
        cfg = self.config
        eligible = [m for m in self.miners if m.id not in self.removed]
        if not eligible:
            raise NoCandidates("no eligible miners")
        state = self.chain.head.hash
        cands = run_vote_window(eligible, state, slot.to_bytes(8, "big"), cfg.vote_difficulty, cfg.window,
                                self.rng, cfg.max_vote_attempts)
        if not cands:
            raise NoCandidates(f"slot {slot}: the vote window closed empty")
        self.candidate_log[slot] = [c.miner.id for c in cands]
        pools = ip_sharding(cands, cfg.max_ratio)
        cascade = form_cascade(vrf_select(p, slot, cfg.prefix_bits) for p in pools)
        payload = repr([e.broadcast_payload() for e in cascade]).encode()
        reached = self.net.gossip(cascade[0].miner.id, payload, kind=f"cascade:{slot}")
        for u in self.users:
            if u.id in reached and not verify_cascade(cascade, cfg.prefix_bits):
                raise OrchestratorError(f"{u.id} rejected the cascade broadcast")
        self.cascades[slot] = cascade
        return cascade

    # -- mix ------------------------------------------------------------------

    def _send_hop(self, src: str, dst: str, batch: MixBatch, kind: str) -> None:
        self.net.schedule(src, dst, batch.to_bytes(), Channel.DIRECT, kind=kind)
        self.net.run()

    def phase_mix(self, slot: int, messages: Sequence[bytes], *, faults: Optional[dict[int, str]] = None,
                  refusing: Sequence[int] = (), skip_key_exchange: Sequence[tuple[int, int]] = ()) -> RoundRecord:
        """One mix round over this slot's cascade.

        ``faults`` maps a 1-based cascade position to a pipeline step name
        at which that node corrupts its output. ``refusing`` lists positions
        that will not open their commitments in an audit.
        ``skip_key_exchange`` holds (user, node) pairs whose tx_KE is
        withheld, which makes the round impossible.
        """
        cfg = self.config
        c = cfg.curve
        cascade = self.cascades[slot]
        batch_size = len(messages)
        if batch_size > len(self.users):
            raise OrchestratorError(f"{batch_size} messages but only {len(self.users)} users")
        users = self.users[:batch_size]
        n = len(cascade)
        node_sks = [e.miner.sk for e in cascade]
        ids = [e.miner.id for e in cascade]
        self._round += 1
        round_id = self._round
        events: list[tuple[str, float]] = []

        # users publish one key-exchange transaction per mix node
        skipped = set(skip_key_exchange)
        ke_txs, ke_ids = [], []
        for j, u in enumerate(users):
            row = []
            for i, e in enumerate(cascade):
                if (j, i + 1) in skipped:
                    continue
                tx = ledger.make_key_exchange(u.sk, curve=c, data=e.miner.address)
                ke_txs.append(tx)
                row.append(tx.txid.hex())
            ke_ids.append(row)
        ke_block = self._side(ledger.BlockKind.KE, ke_txs, node_sks, f"ke:{slot}:{round_id}".encode())
        self._mine(b"pin-ke")
        events.append(("ke_block", self.net.now))

        # each node reads the user keys addressed to it from the key-exchange block
        nodes = []
        for i, e in enumerate(cascade):
            by_user = {}
            for tx in ke_block.txs:
                if tx.data == e.miner.address:
                    by_user[tx.pk] = c.decode_point(tx.pk)
            keys = []
            for j, u in enumerate(users):
                pk_raw = u.pk.to_bytes()
                if pk_raw not in by_user:
                    raise MissingKeyExchange(f"{u.id} sent no key exchange to node {i + 1}")
                keys.append(ecdh_shared(e.miner.sk, by_user[pk_raw]))
            node = MixNode(i + 1, c, e.miner.sk)
            node.shared_keys = keys
            node.fault = (faults or {}).get(i + 1)
            nodes.append(node)
        system_key = c.identity
        for node in nodes:
            system_key = system_key + node.public_key

        tr = RoundTranscript(round_id)
        for node in nodes:
            for name, dg in node.new_round(round_id, batch_size, self.rng).items():
                tr.commitments[(node.index, name)] = dg
        b = precompute_preprocess(nodes, system_key, round_id, tr)
        b = precompute_mix(nodes, system_key, b, tr)
        precompute_postprocess(nodes, b, tr)
        events.append(("precomputed", self.net.now))

        com_txs = []
        for node, e in zip(nodes, cascade):
            for name in PRE_REALTIME_COMMITMENTS:
                com_txs.append(ledger.make_commitment_tx(e.miner.sk, node.commitments[name].digest, c,
                                                         _com_label(round_id, node.index, name)))
        com_block = self._side(ledger.BlockKind.COM, com_txs, node_sks, f"com:{slot}:{round_id}".encode())
        for _ in range(cfg.confirmations + 1):
            self._mine(b"bury")
        events.append(("commitments_stable", self.net.now))

        # users blind with keys derived from the elected nodes' public keys
        inputs = []
        for u, msg in zip(users, messages):
            slot_key = c.identity
            for e in cascade:
                slot_key = slot_key + ecdh_shared(u.sk, e.miner.pk)
            inputs.append(blind_message(encode_message(msg, c), slot_key))

        record = RoundRecord(slot, round_id, cascade, batch_size, ke_ids, [ke_block.hash.hex(), com_block.hash.hex()],
                             list(messages), inputs, None, tr, nodes, users, refusing=frozenset(refusing))
        events.append(("realtime_start", self.net.now))
        try:
            v = realtime_preprocess(nodes, MixBatch(round_id, Stage.REALTIME_INPUT, inputs), tr)
            for a, b_ in zip(ids, ids[1:]):
                self._send_hop(a, b_, tr.hops[(Stage.REALTIME_PREPROCESS, ids.index(a) + 1)], "realtime_preprocess")
            w, mixed_digest = realtime_mix(nodes, v, tr)
            for a, b_ in zip(ids, ids[1:]):
                self._send_hop(a, b_, tr.hops[(Stage.REALTIME_MIX, ids.index(a) + 1)], "realtime_mix")
            mixed_tx = ledger.make_commitment_tx(node_sks[-1], mixed_digest, c, _com_label(round_id, n, "mixed"))
            late = self._side(ledger.BlockKind.COM, [mixed_tx], node_sks, f"com-late:{slot}:{round_id}".encode())
            record.com_blocks.append(late.hash.hex())
            self._mine(b"pin-mixed")
            record.output = realtime_postprocess(nodes, w, mixed_digest, tr)
        except MixnetError as exc:
            record.failure = f"{type(exc).__name__}: {exc}"
        events.append(("realtime_end", self.net.now))
        record.events = events
        record.trace_hash = self.net.trace_hash()
        return record

    # -- audit ----------------------------------------------------------------

    def committed_digests(self, round_id: int) -> dict[tuple[int, str], bytes]:
        """Commitments for a round as found on the commitment chain."""
        prefix = f"{round_id}:".encode()
        out = {}
        for blk in self.chain.com:
            for tx in blk.txs:
                if tx.data.startswith(prefix):
                    _, node, name = tx.data.decode().split(":")
                    out[(int(node), name)] = tx.commitment
        return out

    def phase_audit(self, record: RoundRecord) -> AuditVerdict:
        if record.output is not None and verify_multiset(
                [encode_message(m, self.config.curve) for m in record.messages], record.output):
            record.verdict = AuditVerdict(CLEAN)
            return record.verdict
        record.verdict = audit_round(record, self.committed_digests(record.round_id))
        if record.verdict.kind == MALICIOUS:
            self.removed.add(record.cascade[record.verdict.node - 1].miner.id)
        return record.verdict

    def run_slot(self, slot: int, messages: Sequence[bytes], **kw) -> RoundRecord:
        self.phase_vote(slot)
        record = self.phase_mix(slot, messages, **kw)
        self.phase_audit(record)
        return record


def audit_round(record: RoundRecord, digests: dict) -> AuditVerdict:
    """Open every commitment and recompute each hop forward from node 1.

    Each node's step is recomputed from the batch it actually received, so
    the first mismatch belongs to the node that produced it. Decryption
    shares and shared keys are checked with equality-of-discrete-log proofs
    against the node's public key.
    """
    nodes = record.nodes
    tr = record.transcript
    curve = nodes[0].curve
    g = curve.generator
    batch_size = record.batch_size
    rid = record.round_id

    for node in nodes:
        if node.index in record.refusing:
            return AuditVerdict(MALICIOUS, node.index, "timeout")

    opened = {}
    for node in nodes:
        for name in ("blinds", "offsets", "perm"):
            payload = node.opening_payload(name)
            dg = digests.get((node.index, name))
            if dg is None or not verify_opening(dg, payload, node.commitments[name].nonce):
                return AuditVerdict(MALICIOUS, node.index, f"opening:{name}")
        blinds, blind_rand = _split_points_scalars(curve, node.opening_payload("blinds"), batch_size)
        offsets, offset_rand = _split_points_scalars(curve, node.opening_payload("offsets"), batch_size)
        raw = node.opening_payload("perm")
        perm = [int.from_bytes(raw[k:k + 2], "big") for k in range(0, len(raw), 2)]
        opened[node.index] = (blinds, blind_rand, offsets, offset_rand, perm)
    system_key = curve.identity
    for node in nodes:
        system_key = system_key + node.public_key

    def hop(stage, idx):
        return tr.hops[(stage, idx)].payload

    prev = None
    for node in nodes:
        blinds, blind_rand = opened[node.index][:2]
        enc = [ecelgamal_enc(r, system_key, x) for r, x in zip(blinds, blind_rand)]
        expect = enc if prev is None else [a + e for a, e in zip(prev, enc)]
        got = hop(Stage.PRECOMPUTE_PREPROCESS, node.index)
        if expect != got:
            return AuditVerdict(MALICIOUS, node.index, "precompute_preprocess")
        prev = got
    for node in nodes:
        _, _, offsets, offset_rand, perm = opened[node.index]
        expect = [v + ecelgamal_enc(s, system_key, x)
                  for v, s, x in zip(permute(prev, perm), offsets, offset_rand)]
        got = hop(Stage.PRECOMPUTE_MIX, node.index)
        if expect != got:
            return AuditVerdict(MALICIOUS, node.index, "precompute_mix")
        prev = got
    negated: list[Ciphertext] = [-ct for ct in prev]
    ephemerals = [ct.ephemeral for ct in negated]
    if tr.ephemerals != ephemerals or tr.masked != [ct.masked for ct in negated]:
        return AuditVerdict(MALICIOUS, nodes[-1].index, "precompute_postprocess")
    for node in nodes:
        payload = node.opening_payload("shares")
        dg = digests.get((node.index, "shares"))
        if dg is None or not verify_opening(dg, payload, node.commitments["shares"].nonce):
            return AuditVerdict(MALICIOUS, node.index, "opening:shares")
        shares = points_from_bytes(curve, payload)
        for j, (eph, sh) in enumerate(zip(ephemerals, shares)):
            proof = dleq_prove(node.key_share, g, eph, nonce_seed=b"share%d" % j)
            if not dleq_verify(g, node.public_key, eph, sh, proof):
                return AuditVerdict(MALICIOUS, node.index, "precompute_postprocess")

    if tr.inputs is None:
        return AuditVerdict(UNVERIFIABLE)
    user_pks = [u.pk for u in record.users]
    prev = tr.inputs.payload
    for node in nodes:
        blinds = opened[node.index][0]
        for j, (upk, key) in enumerate(zip(user_pks, node.shared_keys)):
            proof = dleq_prove(node.key_share, g, upk, nonce_seed=b"key%d" % j)
            if not dleq_verify(g, node.public_key, upk, key, proof):
                return AuditVerdict(MALICIOUS, node.index, "realtime_preprocess")
        expect = [v + k + r for v, k, r in zip(prev, node.shared_keys, blinds)]
        got = hop(Stage.REALTIME_PREPROCESS, node.index)
        if expect != got:
            return AuditVerdict(MALICIOUS, node.index, "realtime_preprocess")
        prev = got
    for node in nodes:
        _, _, offsets, _, perm = opened[node.index]
        expect = [v + s for v, s in zip(permute(prev, perm), offsets)]
        got = hop(Stage.REALTIME_MIX, node.index)
        if expect != got:
            return AuditVerdict(MALICIOUS, node.index, "realtime_mix")
        prev = got
    last = nodes[-1]
    mixed = MixBatch(rid, Stage.REALTIME_MIX, prev)
    dg = digests.get((last.index, "mixed"))
    if dg is None or not verify_opening(dg, mixed.to_bytes(), last.commitments["mixed"].nonce):
        return AuditVerdict(MALICIOUS, last.index, "realtime_mix")
    expect_out = [w + m for w, m in zip(prev, tr.masked)]
    for node in nodes:
        shares, nonce = open_share(node)
        if not verify_opening(digests[(node.index, "shares")], b"".join(p.to_bytes() for p in shares), nonce):
            return AuditVerdict(MALICIOUS, node.index, "realtime_postprocess")
        expect_out = [o - sh for o, sh in zip(expect_out, shares)]
    if record.output is not None and record.output != expect_out:
        return AuditVerdict(MALICIOUS, last.index, "realtime_postprocess")
    return AuditVerdict(UNVERIFIABLE)
