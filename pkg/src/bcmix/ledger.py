"""Tri-chain ledger: a proof-of-work main chain plus two PoW-free side chains
(key exchange and commitments) whose heads every main block pins.

Values are immutable; "mutating" helpers return a new :class:`Chain`.
Validation never raises on bad input, it returns a :class:`Verdict` carrying
one of the reason codes below.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .group_crypto import (
    SECP256K1,
    Curve,
    Point,
    inner_hash,
    outer_hash,
    sign,
    verify_signature,
)

# Bitcoin's difficulty-1 target.
MAX_DIFFICULTY_TARGET = 0xFFFF * 2**208
HASH_SPACE = 2**256

BAD_SIG = "BadSig"
DOUBLE_SPEND = "DoubleSpend"
BAD_POW = "BadPoW"
SIDE_CHAIN_REGRESSION = "SideChainRegression"
BROKEN_LINK = "BrokenLink"
BAD_VALUE = "BadValue"


class LedgerError(Exception):
    def __init__(self, reason: str, detail: str = "") -> None:
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class InvalidTx(LedgerError):
    pass


class ChainRejected(LedgerError):
    pass


class BudgetExhausted(Exception):
    def __init__(self, attempts: int) -> None:
        self.attempts = attempts
        super().__init__(f"no valid nonce in {attempts} attempts")


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: Optional[str] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


VALID = Verdict(True)


def difficulty_to_target(difficulty: float) -> int:
    return int(MAX_DIFFICULTY_TARGET // difficulty) if difficulty >= 1 else int(MAX_DIFFICULTY_TARGET / difficulty)


def target_to_difficulty(target: int) -> float:
    return MAX_DIFFICULTY_TARGET / target


# ---------------------------------------------------------------------------
# canonical encoding: every field is a 4-byte little-endian length + bytes

def encode_fields(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        out += len(f).to_bytes(4, "little") + f
    return bytes(out)


def decode_fields(data: bytes) -> list[bytes]:
    out, i = [], 0
    while i < len(data):
        if i + 4 > len(data):
            raise ValueError("truncated field header")
        size = int.from_bytes(data[i:i + 4], "little")
        i += 4
        if i + size > len(data):
            raise ValueError("truncated field body")
        out.append(data[i:i + size])
        i += size
    return out


def _u64(v: int) -> bytes:
    return v.to_bytes(8, "little")


def _from_u64(b: bytes) -> int:
    return int.from_bytes(b, "little")


# ---------------------------------------------------------------------------
# transactions

class TxKind(enum.IntEnum):
    NORMAL = 0
    KEY_EXCHANGE = 1
    COMMITMENT = 2


@dataclass(frozen=True)
class OutPoint:
    txid: bytes
    index: int


@dataclass(frozen=True)
class TxOutput:
    value: int
    owner: bytes  # SEC1 public key of the recipient


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    inputs: tuple[OutPoint, ...] = ()
    outputs: tuple[TxOutput, ...] = ()
    pk: bytes = b""  # sender key (key exchange) or signer key (commitment)
    commitment: bytes = b""
    data: bytes = b""
    sig: bytes = b""

    def body(self) -> bytes:
        ins = encode_fields(*(encode_fields(o.txid, _u64(o.index)) for o in self.inputs))
        outs = encode_fields(*(encode_fields(_u64(o.value), o.owner) for o in self.outputs))
        return encode_fields(bytes([int(self.kind)]), ins, outs, self.pk, self.commitment, self.data)

    def to_bytes(self) -> bytes:
        return encode_fields(self.body(), self.sig)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transaction":
        body, sig = decode_fields(data)
        kind, ins, outs, pk, com, extra = decode_fields(body)
        inputs = tuple(OutPoint(f[0], _from_u64(f[1])) for f in map(decode_fields, decode_fields(ins)))
        outputs = tuple(TxOutput(_from_u64(f[0]), f[1]) for f in map(decode_fields, decode_fields(outs)))
        return cls(TxKind(kind[0]), inputs, outputs, pk, com, extra, sig)

    @property
    def txid(self) -> bytes:
        return outer_hash(self.to_bytes())

    @property
    def is_coinbase(self) -> bool:
        return self.kind == TxKind.NORMAL and not self.inputs

    def signed(self, sk: int, curve: Curve = SECP256K1) -> "Transaction":
        return replace(self, sig=sign(sk, self.body(), curve))


def make_key_exchange(sk: int, inputs: Sequence[OutPoint] = (), outputs: Sequence[TxOutput] = (),
                      curve: Curve = SECP256K1, data: bytes = b"") -> Transaction:
    pk = (sk * curve.generator).to_bytes()
    outs = tuple(outputs) or (TxOutput(0, pk),)
    return Transaction(TxKind.KEY_EXCHANGE, tuple(inputs), outs, pk=pk, data=data).signed(sk, curve)


def make_commitment_tx(sk: int, digest: bytes, curve: Curve = SECP256K1, data: bytes = b"") -> Transaction:
    pk = (sk * curve.generator).to_bytes()
    return Transaction(TxKind.COMMITMENT, pk=pk, commitment=digest, data=data).signed(sk, curve)


def make_transfer(sk: int, inputs: Sequence[OutPoint], outputs: Sequence[TxOutput],
                  curve: Curve = SECP256K1) -> Transaction:
    return Transaction(TxKind.NORMAL, tuple(inputs), tuple(outputs)).signed(sk, curve)


def make_coinbase(owner: bytes, value: int, tag: bytes = b"") -> Transaction:
    return Transaction(TxKind.NORMAL, (), (TxOutput(value, owner),), data=tag)


def _decode_pk(curve: Curve, raw: bytes) -> Optional[Point]:
    try:
        return curve.decode_point(raw)
    except (ValueError, IndexError):
        return None


def validate_tx(tx: Transaction, utxo: dict, curve: Curve = SECP256K1, *, coinbase_limit: int = 0) -> Verdict:
    """Check one transaction against an unspent-output set (not modified)."""
    if tx.is_coinbase:
        if sum(o.value for o in tx.outputs) > coinbase_limit:
            return Verdict(False, BAD_VALUE, "coinbase exceeds reward")
        return VALID
    if tx.kind == TxKind.COMMITMENT:
        if tx.inputs or tx.outputs or len(tx.commitment) != 32:
            return Verdict(False, BAD_VALUE, "malformed commitment transaction")
        pk = _decode_pk(curve, tx.pk)
        if pk is None or not verify_signature(pk, tx.body(), tx.sig):
            return Verdict(False, BAD_SIG, "commitment signature")
        return VALID
    seen = set()
    owners = set()
    total_in = 0
    for op in tx.inputs:
        if op in seen or op not in utxo:
            return Verdict(False, DOUBLE_SPEND, f"input {op.txid.hex()[:16]}:{op.index} unavailable")
        seen.add(op)
        owners.add(utxo[op].owner)
        total_in += utxo[op].value
    if tx.kind == TxKind.KEY_EXCHANGE:
        owners.add(tx.pk)
    if len(owners) != 1:
        return Verdict(False, BAD_SIG, "inputs belong to more than one key")
    pk = _decode_pk(curve, owners.pop())
    if pk is None or not verify_signature(pk, tx.body(), tx.sig):
        return Verdict(False, BAD_SIG, "spender signature")
    if sum(o.value for o in tx.outputs) > total_in:
        return Verdict(False, BAD_VALUE, "outputs exceed inputs")
    return VALID


def apply_tx(tx: Transaction, utxo: dict) -> None:
    for op in tx.inputs:
        del utxo[op]
    tid = tx.txid
    for i, out in enumerate(tx.outputs):
        utxo[OutPoint(tid, i)] = out


# ---------------------------------------------------------------------------
# blocks

class BlockKind(enum.IntEnum):
    MAIN = 0
    KE = 1
    COM = 2


def _txs_bytes(txs: Sequence[Transaction]) -> bytes:
    return encode_fields(*(t.to_bytes() for t in txs))


def _txs_from(data: bytes) -> tuple[Transaction, ...]:
    return tuple(Transaction.from_bytes(f) for f in decode_fields(data))


@dataclass(frozen=True)
class MainBlock:
    prev: bytes
    height: int
    ke_state: bytes
    ke_height: int
    com_state: bytes
    com_height: int
    data: bytes
    txs: tuple[Transaction, ...]
    nonce: int = 0

    def content_digest(self) -> bytes:
        """Inner hash over everything except the nonce."""
        return inner_hash(encode_fields(
            self.prev, _u64(self.height), self.ke_state, _u64(self.ke_height),
            self.com_state, _u64(self.com_height), self.data, _txs_bytes(self.txs)))

    def pow_hash(self, content: Optional[bytes] = None) -> bytes:
        return outer_hash(encode_fields(_u64(self.nonce), content or self.content_digest()))

    @property
    def hash(self) -> bytes:
        return self.pow_hash()

    def meets(self, target: int) -> bool:
        return int.from_bytes(self.pow_hash(), "big") < target

    def to_bytes(self) -> bytes:
        return bytes([BlockKind.MAIN]) + encode_fields(
            self.prev, _u64(self.height), self.ke_state, _u64(self.ke_height),
            self.com_state, _u64(self.com_height), self.data, _txs_bytes(self.txs), _u64(self.nonce))


@dataclass(frozen=True)
class SideBlock:
    kind: BlockKind
    prev: bytes
    height: int
    data: bytes
    txs: tuple[Transaction, ...]
    cosigners: tuple[bytes, ...] = ()
    signatures: tuple[bytes, ...] = ()

    def body(self) -> bytes:
        return encode_fields(bytes([int(self.kind)]), self.prev, _u64(self.height), self.data,
                             _txs_bytes(self.txs), encode_fields(*self.cosigners))

    @property
    def hash(self) -> bytes:
        return outer_hash(self.body())

    def to_bytes(self) -> bytes:
        return bytes([self.kind]) + encode_fields(self.body(), encode_fields(*self.signatures))

    def cosigned(self, secret_keys: Sequence[int], curve: Curve = SECP256K1) -> "SideBlock":
        pks = tuple((sk * curve.generator).to_bytes() for sk in secret_keys)
        unsigned = replace(self, cosigners=pks, signatures=())
        sigs = tuple(sign(sk, unsigned.body(), curve) for sk in secret_keys)
        return replace(unsigned, signatures=sigs)


def block_from_bytes(data: bytes):
    kind = BlockKind(data[0])
    fields = decode_fields(data[1:])
    if kind == BlockKind.MAIN:
        prev, h, kes, keh, coms, comh, x, txs, nonce = fields
        return MainBlock(prev, _from_u64(h), kes, _from_u64(keh), coms, _from_u64(comh), x,
                         _txs_from(txs), _from_u64(nonce))
    body, sigs = fields
    k, prev, h, x, txs, cos = decode_fields(body)
    return SideBlock(BlockKind(k[0]), prev, _from_u64(h), x, _txs_from(txs),
                     tuple(decode_fields(cos)), tuple(decode_fields(sigs)))


# ---------------------------------------------------------------------------
# chains

GENESIS_TAG = b"bcmix-genesis"


def side_genesis(kind: BlockKind) -> SideBlock:
    return SideBlock(kind, bytes(32), 0, GENESIS_TAG, ())


def main_genesis() -> MainBlock:
    ke, com = side_genesis(BlockKind.KE), side_genesis(BlockKind.COM)
    return MainBlock(bytes(32), 0, ke.hash, 0, com.hash, 0, GENESIS_TAG, ())


@dataclass(frozen=True)
class Chain:
    main: tuple[MainBlock, ...]
    ke: tuple[SideBlock, ...]
    com: tuple[SideBlock, ...]
    target: int
    min_cosigners: int = 1
    block_reward: int = 50
    curve: Curve = field(default=SECP256K1, repr=False)

    @classmethod
    def genesis(cls, target: int, min_cosigners: int = 1, block_reward: int = 50,
                curve: Curve = SECP256K1) -> "Chain":
        return cls((main_genesis(),), (side_genesis(BlockKind.KE),), (side_genesis(BlockKind.COM),),
                   target, min_cosigners, block_reward, curve)

    def __len__(self) -> int:
        return len(self.main)

    @property
    def head(self) -> MainBlock:
        return self.main[-1]

    def side(self, kind: BlockKind) -> tuple[SideBlock, ...]:
        return self.ke if kind == BlockKind.KE else self.com

    def with_main(self, block: MainBlock) -> "Chain":
        return replace(self, main=self.main + (block,))

    def pruned(self, k: int) -> "Chain":
        """Drop the last ``k`` main blocks (side chains cut to what remains pinned)."""
        keep = max(len(self.main) - k, 1)
        head = self.main[keep - 1]
        return replace(self, main=self.main[:keep], ke=self.ke[:head.ke_height + 1],
                       com=self.com[:head.com_height + 1])

    def is_prefix_of(self, other: "Chain") -> bool:
        return len(self.main) <= len(other.main) and other.main[len(self.main) - 1].hash == self.head.hash

    def utxo(self) -> dict:
        utxo: dict = {}
        for _ in _replay(self, utxo):
            pass
        return utxo

    # serialization
    def to_lines(self) -> list[str]:
        return [b.to_bytes().hex() for b in self.main + self.ke + self.com]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"target": hex(self.target), "min_cosigners": self.min_cosigners,
                                 "block_reward": self.block_reward}, sort_keys=True) + "\n")
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path, curve: Curve = SECP256K1) -> "Chain":
        with open(path) as fh:
            header = json.loads(fh.readline())
            blocks = [block_from_bytes(bytes.fromhex(ln.strip())) for ln in fh if ln.strip()]
        return cls(tuple(b for b in blocks if isinstance(b, MainBlock)),
                   tuple(b for b in blocks if isinstance(b, SideBlock) and b.kind == BlockKind.KE),
                   tuple(b for b in blocks if isinstance(b, SideBlock) and b.kind == BlockKind.COM),
                   int(header["target"], 16), header["min_cosigners"], header["block_reward"], curve)

    def to_json(self) -> dict:
        def txj(t: Transaction) -> dict:
            return {"kind": t.kind.name, "txid": t.txid.hex(), "inputs": len(t.inputs),
                    "outputs": [o.value for o in t.outputs], "commitment": t.commitment.hex()}
        return {
            "target": hex(self.target),
            "main": [{"height": b.height, "hash": b.hash.hex(), "prev": b.prev.hex(), "ke_height": b.ke_height,
                      "com_height": b.com_height, "nonce": b.nonce, "txs": [txj(t) for t in b.txs]}
                     for b in self.main],
            "ke": [{"height": b.height, "hash": b.hash.hex(), "txs": [txj(t) for t in b.txs]} for b in self.ke],
            "com": [{"height": b.height, "hash": b.hash.hex(), "txs": [txj(t) for t in b.txs]} for b in self.com],
        }


def _replay(chain: Chain, utxo: dict) -> Iterable[Verdict]:
    """Apply transactions in ledger order, yielding a verdict per failure.

    Order: for each main block, first the side blocks it newly pins (key
    exchange, then commitment), then its own transactions. Side blocks not
    yet pinned come last.
    """
    curve = chain.curve
    done_ke = done_com = 0

    def side_txs(blocks):
        for b in blocks:
            for t in b.txs:
                yield t

    def run(txs, coinbase_ok):
        coinbase_seen = False
        for t in txs:
            limit = 0
            if t.is_coinbase and coinbase_ok and not coinbase_seen:
                limit = chain.block_reward
                coinbase_seen = True
            v = validate_tx(t, utxo, curve, coinbase_limit=limit)
            if not v:
                yield v
                return
            apply_tx(t, utxo)

    for blk in chain.main:
        yield from run(side_txs(chain.ke[done_ke + 1:blk.ke_height + 1]), False)
        yield from run(side_txs(chain.com[done_com + 1:blk.com_height + 1]), False)
        done_ke, done_com = max(done_ke, blk.ke_height), max(done_com, blk.com_height)
        yield from run(blk.txs, True)
    yield from run(side_txs(chain.ke[done_ke + 1:]), False)
    yield from run(side_txs(chain.com[done_com + 1:]), False)


def _validate_side(chain: Chain, blocks: Sequence[SideBlock], kind: BlockKind) -> Verdict:
    if not blocks or blocks[0] != side_genesis(kind):
        return Verdict(False, BROKEN_LINK, f"{kind.name} genesis mismatch")
    for i in range(1, len(blocks)):
        b = blocks[i]
        if b.kind != kind or b.height != i or b.prev != blocks[i - 1].hash:
            return Verdict(False, BROKEN_LINK, f"{kind.name} block {i} not linked to its parent")
        if len(b.cosigners) < chain.min_cosigners or len(b.cosigners) != len(b.signatures):
            return Verdict(False, BAD_SIG, f"{kind.name} block {i} lacks co-signatures")
        body = b.body()
        for pk_raw, sig in zip(b.cosigners, b.signatures):
            pk = _decode_pk(chain.curve, pk_raw)
            if pk is None or not verify_signature(pk, body, sig):
                return Verdict(False, BAD_SIG, f"{kind.name} block {i} co-signature")
        for t in b.txs:
            expected = TxKind.KEY_EXCHANGE if kind == BlockKind.KE else TxKind.COMMITMENT
            if t.kind != expected:
                return Verdict(False, BAD_VALUE, f"{t.kind.name} transaction in {kind.name} block")
    return VALID


def validate_block(block: MainBlock, target: int) -> Verdict:
    if block.height > 0 and not block.meets(target):
        return Verdict(False, BAD_POW, f"main block {block.height}")
    for t in block.txs:
        if t.kind != TxKind.NORMAL:
            return Verdict(False, BAD_VALUE, f"{t.kind.name} transaction in main block")
    return VALID


def validate_chain(chain: Chain) -> Verdict:
    """Full check of all three chains and how the main chain pins the others."""
    if not chain.main or chain.main[0] != main_genesis():
        return Verdict(False, BROKEN_LINK, "main genesis mismatch")
    for kind in (BlockKind.KE, BlockKind.COM):
        v = _validate_side(chain, chain.side(kind), kind)
        if not v:
            return v
    prev_ke = prev_com = 0
    for i, blk in enumerate(chain.main):
        if i and (blk.prev != chain.main[i - 1].hash or blk.height != i):
            return Verdict(False, BROKEN_LINK, f"main block {i} not linked to its parent")
        v = validate_block(blk, chain.target)
        if not v:
            return v
        if blk.ke_height < prev_ke or blk.com_height < prev_com:
            return Verdict(False, SIDE_CHAIN_REGRESSION, f"main block {i} pins an older side head")
        if blk.ke_height >= len(chain.ke) or blk.com_height >= len(chain.com):
            return Verdict(False, BROKEN_LINK, f"main block {i} pins a missing side block")
        if blk.ke_state != chain.ke[blk.ke_height].hash or blk.com_state != chain.com[blk.com_height].hash:
            return Verdict(False, BROKEN_LINK, f"main block {i} pins a side state that does not match")
        prev_ke, prev_com = blk.ke_height, blk.com_height
    # at most one side block may be waiting for the next main block
    if len(chain.ke) - 1 - prev_ke > 1 or len(chain.com) - 1 - prev_com > 1:
        return Verdict(False, SIDE_CHAIN_REGRESSION, "side chain ran ahead of the latest main block")
    for v in _replay(chain, {}):
        return v
    return VALID


validate = validate_chain


def mine_main(chain: Chain, data: bytes, txs: Sequence[Transaction], target: int, budget: int,
              rng=None, *, ke_height: Optional[int] = None, com_height: Optional[int] = None) -> tuple[MainBlock, int]:
    """Search nonces until the block hash falls below ``target``.

    Returns the block and the number of attempts. Pins the current side heads
    unless told otherwise.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    keh = len(chain.ke) - 1 if ke_height is None else ke_height
    comh = len(chain.com) - 1 if com_height is None else com_height
    template = MainBlock(chain.head.hash, len(chain.main), chain.ke[keh].hash, keh,
                         chain.com[comh].hash, comh, data, tuple(txs), 0)
    content = template.content_digest()
    start = rng.getrandbits(63) if rng is not None else 0
    for attempt in range(1, budget + 1):
        nonce = (start + attempt - 1) % 2**64
        h = outer_hash(encode_fields(_u64(nonce), content))
        if int.from_bytes(h, "big") < target:
            return replace(template, nonce=nonce), attempt
    raise BudgetExhausted(budget)


def append_side_block(chain: Chain, kind: BlockKind, txs: Sequence[Transaction], cosigner_keys: Sequence[int],
                      data: bytes = b"") -> Chain:
    """Co-sign and append a side block; the previous side head must already be
    pinned by the latest main block."""
    blocks = chain.side(kind)
    pinned = chain.head.ke_height if kind == BlockKind.KE else chain.head.com_height
    if pinned != len(blocks) - 1:
        raise ChainRejected(SIDE_CHAIN_REGRESSION,
                            f"{kind.name} head {len(blocks) - 1} is not pinned by main head (pins {pinned})")
    expected = TxKind.KEY_EXCHANGE if kind == BlockKind.KE else TxKind.COMMITMENT
    utxo = chain.utxo()
    for t in txs:
        if t.kind != expected:
            raise InvalidTx(BAD_VALUE, f"{t.kind.name} transaction in {kind.name} block")
        v = validate_tx(t, utxo, chain.curve)
        if not v:
            raise InvalidTx(v.reason, v.detail)
        apply_tx(t, utxo)
    blk = SideBlock(kind, blocks[-1].hash, len(blocks), data, tuple(txs)).cosigned(cosigner_keys, chain.curve)
    if kind == BlockKind.KE:
        return replace(chain, ke=chain.ke + (blk,))
    return replace(chain, com=chain.com + (blk,))


def update(local: Chain, candidates: Sequence[Chain]) -> Chain:
    """Adopt the longest valid candidate; on equal length keep what came first."""
    best = local
    for cand in candidates:
        if len(cand.main) > len(best.main) and validate_chain(cand):
            best = cand
    return best


@dataclass(frozen=True)
class StableCursor:
    height: int
    depth: int


def stable_prefix(chain_or_len, k: int) -> StableCursor:
    if k < 0:
        raise ValueError("confirmation depth must be non-negative")
    n = chain_or_len if isinstance(chain_or_len, int) else len(chain_or_len.main)
    return StableCursor(max(n - k, 0), k)


# ---------------------------------------------------------------------------
# property simulation on an abstract block tree

@dataclass
class PropertyRun:
    common_prefix_violations: int
    chain_quality_window: float  # adversarial share in the final window
    final_length: int
    slots: int
    side_forks: int


class _Tree:
    __slots__ = ("parent", "height", "adv")

    def __init__(self) -> None:
        self.parent = [-1]
        self.height = [0]
        self.adv = [False]

    def add(self, parent: int, adv: bool) -> int:
        self.parent.append(parent)
        self.height.append(self.height[parent] + 1)
        self.adv.append(adv)
        return len(self.parent) - 1

    def ancestor_at(self, node: int, h: int) -> int:
        while self.height[node] > h:
            node = self.parent[node]
        return node

    def is_ancestor(self, a: int, b: int) -> bool:
        return self.height[a] <= self.height[b] and self.ancestor_at(b, self.height[a]) == a


def simulate_chain_properties(rng: random.Random, *, slots: int = 400, honest_parties: int = 5,
                              block_rate: float = 0.1, adversary_share: float = 0.2, delay: int = 1,
                              k: int = 6, window: int = 20, side_rate: float = 0.05) -> PropertyRun:
    """One run of honest parties plus a private-chain adversary.

    Each slot every party mines with probability proportional to its share of
    ``block_rate``. Honest blocks reach other honest parties after ``delay``
    slots. The adversary sees honest blocks at once, mines in private on its
    own tip, publishes as soon as its chain is strictly longer than the best
    honest chain, and abandons it once the honest chain gets ahead.

    Common prefix: every honest view pruned by ``k`` must be an ancestor of
    every honest view at the same or any later slot. The side chain has one
    writer (the elected node set) which appends with probability
    ``side_rate`` per slot; a fork is any side block with two children.
    """
    tree = _Tree()
    heads = [0] * honest_parties
    adv_tip = 0
    pending: list[tuple[int, int]] = []  # (arrival slot, block)
    p_honest = block_rate * (1 - adversary_share) / honest_parties
    p_adv = block_rate * adversary_share
    violations = 0
    constraint = 0
    side_children = [0]
    side_head = 0

    for slot in range(slots):
        arrived = [b for t, b in pending if t <= slot]
        pending = [(t, b) for t, b in pending if t > slot]
        for b in arrived:
            for i in range(honest_parties):
                if tree.height[b] > tree.height[heads[i]]:
                    heads[i] = b
        for i in range(honest_parties):
            if rng.random() < p_honest:
                heads[i] = tree.add(heads[i], False)
                pending.append((slot + delay, heads[i]))
        best_honest = max(heads, key=tree.height.__getitem__)
        if tree.height[best_honest] > tree.height[adv_tip]:
            adv_tip = best_honest
        if rng.random() < p_adv:
            adv_tip = tree.add(adv_tip, True)
            if tree.height[adv_tip] > tree.height[best_honest]:
                pending.append((slot + 1, adv_tip))
        if rng.random() < side_rate:
            side_children[side_head] += 1
            side_children.append(0)
            side_head = len(side_children) - 1

        for h in heads:
            tip = tree.ancestor_at(h, max(tree.height[h] - k, 0))
            if tree.is_ancestor(constraint, tip):
                constraint = tip
            elif not tree.is_ancestor(tip, constraint):
                violations += 1
        for h in heads:
            if not tree.is_ancestor(constraint, h):
                violations += 1

    final = max(heads, key=tree.height.__getitem__)
    path = []
    node = final
    while node > 0:
        path.append(node)
        node = tree.parent[node]
    tail = path[:window]
    quality = sum(tree.adv[b] for b in tail) / len(tail) if tail else 0.0
    side_forks = sum(1 for c in side_children if c > 1)
    return PropertyRun(violations, quality, tree.height[final], slots, side_forks)
