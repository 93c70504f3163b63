import pytest

from bcmix.cli import _synthetic_miners
from bcmix.group_crypto import SECP256K1
from bcmix.orchestrator import (
    CLEAN, MALICIOUS, PRE_REALTIME_COMMITMENTS, LengthMismatch, MissingKeyExchange, Orchestrator, OrchestratorConfig,
    verify_multiset,
)

MESSAGES = [b"one", b"two", b"three", b"four"]


def _orch(seed=0, n=4):
    orch = Orchestrator(OrchestratorConfig(), seed=seed)
    orch.phase_init(n_users=4, miners=_synthetic_miners(n, seed))
    orch.phase_vote(1)
    return orch


@pytest.fixture(scope="module")
def honest():
    orch = _orch(seed=3)
    record = orch.phase_mix(1, MESSAGES)
    orch.phase_audit(record)
    return orch, record


def test_honest_round_is_clean_and_delivers(honest):
    _, record = honest
    assert record.verdict.kind == CLEAN
    assert sorted(record.decoded_output()) == sorted(MESSAGES)


def test_commitments_stable_before_realtime(honest):
    orch, record = honest
    names = [name for name, _ in record.events]
    assert names.index("commitments_stable") < names.index("realtime_start")
    digests = orch.committed_digests(record.round_id)
    for node in range(1, len(record.cascade) + 1):
        for name in PRE_REALTIME_COMMITMENTS:
            assert digests[(node, name)] == record.transcript.commitments[(node, name)]
    assert (len(record.cascade), "mixed") in digests
    # the pre-realtime block sits at least `confirmations` main blocks deep
    com_block = record.com_blocks[1]
    com_height = next(b.height for b in orch.chain.com if b.hash.hex() == com_block)
    pinned_at = next(b.height for b in orch.chain.main if b.com_height >= com_height)
    assert len(orch.chain.main) - 1 - pinned_at >= orch.config.confirmations


def test_key_exchange_transactions_on_chain(honest):
    orch, record = honest
    ke_txids = {t.txid.hex() for b in orch.chain.ke for t in b.txs}
    assert all(tid in ke_txids for row in record.ke_txids for tid in row)
    assert all(len(row) == len(record.cascade) for row in record.ke_txids)


def test_chain_stays_valid(honest):
    from bcmix import ledger
    orch, _ = honest
    assert ledger.validate(orch.chain)


def test_missing_key_exchange():
    orch = _orch()
    with pytest.raises(MissingKeyExchange):
        orch.phase_mix(1, MESSAGES, skip_key_exchange=[(0, 2)])


def test_multiset_length_mismatch():
    g = SECP256K1.generator
    assert verify_multiset([g, 2 * g], [2 * g, g])
    with pytest.raises(LengthMismatch):
        verify_multiset([g], [g, g])


def test_fault_is_attributed_and_node_removed():
    orch = _orch(seed=5, n=5)
    record = orch.phase_mix(1, MESSAGES, faults={2: "realtime_preprocess"})
    verdict = orch.phase_audit(record)
    assert (verdict.kind, verdict.node, verdict.step) == (MALICIOUS, 2, "realtime_preprocess")
    culprit = record.cascade[1].miner.id
    assert culprit in orch.removed
    cascade = orch.phase_vote(2)
    assert culprit not in {e.miner.id for e in cascade}


def test_refusal_to_open_counts_as_malicious():
    orch = _orch(seed=6)
    record = orch.phase_mix(1, MESSAGES, faults={1: "precompute_mix"}, refusing=[3])
    verdict = orch.phase_audit(record)
    assert (verdict.kind, verdict.node, verdict.step) == (MALICIOUS, 3, "timeout")


def test_record_json_is_serialisable(honest):
    import json
    _, record = honest
    doc = json.loads(json.dumps(record.to_json(transcript=True)))
    assert doc["verdict"]["kind"] == CLEAN and doc["transcript"]["hops"]
