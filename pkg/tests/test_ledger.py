import random
from dataclasses import replace

import pytest

from bcmix import ledger
from bcmix.group_crypto import SECP256K1, random_scalar

TARGET = 2**252


@pytest.fixture
def keys():
    rng = random.Random(21)
    return [random_scalar(SECP256K1, rng) for _ in range(3)]


def _pk(sk):
    return (sk * SECP256K1.generator).to_bytes()


def _extend(chain, tag, txs=(), **kw):
    blk, _ = ledger.mine_main(chain, tag, txs, TARGET, 10**5, random.Random(tag), **kw)
    return chain.with_main(blk)


def test_difficulty_target_round_trip():
    for d in (1.0, 1e6, 1e11):
        assert ledger.target_to_difficulty(ledger.difficulty_to_target(d)) == pytest.approx(d, rel=1e-9)


def test_fields_round_trip():
    fields = [b"", b"a", bytes(300)]
    assert ledger.decode_fields(ledger.encode_fields(*fields)) == fields


def test_transaction_serialisation(keys):
    tx = ledger.make_key_exchange(keys[0], data=b"node")
    assert ledger.Transaction.from_bytes(tx.to_bytes()) == tx


def test_genesis_chain_is_valid():
    assert ledger.validate(ledger.Chain.genesis(TARGET))


def test_coinbase_over_reward_rejected(keys):
    chain = _extend(ledger.Chain.genesis(TARGET), b"1", [ledger.make_coinbase(_pk(keys[0]), 51)])
    assert ledger.validate(chain).reason == ledger.BAD_VALUE


def test_spend_and_utxo(keys):
    a, b, _ = keys
    reward = ledger.make_coinbase(_pk(a), 50)
    chain = _extend(ledger.Chain.genesis(TARGET), b"1", [reward])
    spend = ledger.make_transfer(a, [ledger.OutPoint(reward.txid, 0)], [ledger.TxOutput(30, _pk(b))])
    chain = _extend(chain, b"2", [spend])
    assert ledger.validate(chain)
    assert list(chain.utxo().values()) == [ledger.TxOutput(30, _pk(b))]


def test_side_block_needs_pinned_predecessor(keys):
    chain = ledger.append_side_block(ledger.Chain.genesis(TARGET), ledger.BlockKind.KE,
                                     [ledger.make_key_exchange(keys[0])], keys[:2])
    with pytest.raises(ledger.ChainRejected) as exc:
        ledger.append_side_block(chain, ledger.BlockKind.KE, [ledger.make_key_exchange(keys[1])], keys[:2])
    assert exc.value.reason == ledger.SIDE_CHAIN_REGRESSION
    chain = _extend(chain, b"pin")
    chain = ledger.append_side_block(chain, ledger.BlockKind.KE, [ledger.make_key_exchange(keys[1])], keys[:2])
    assert ledger.validate(chain)


def test_side_block_rejects_wrong_kind(keys):
    with pytest.raises(ledger.InvalidTx):
        ledger.append_side_block(ledger.Chain.genesis(TARGET), ledger.BlockKind.COM,
                                 [ledger.make_key_exchange(keys[0])], keys[:1])


def test_tampered_side_cosignature(keys):
    chain = ledger.append_side_block(ledger.Chain.genesis(TARGET), ledger.BlockKind.COM,
                                     [ledger.make_commitment_tx(keys[0], bytes(32))], keys[:2])
    blk = chain.com[-1]
    bad = replace(blk, signatures=(blk.signatures[1], blk.signatures[0]))
    assert ledger.validate(replace(chain, com=chain.com[:-1] + (bad,))).reason == ledger.BAD_SIG


def test_commitment_tx_in_main_block_rejected(keys):
    chain = _extend(ledger.Chain.genesis(TARGET), b"1", [ledger.make_commitment_tx(keys[0], bytes(32))])
    assert ledger.validate(chain).reason == ledger.BAD_VALUE


def test_mining_budget_exhausted():
    with pytest.raises(ledger.BudgetExhausted):
        ledger.mine_main(ledger.Chain.genesis(TARGET), b"x", [], 1, 10)


def test_update_prefers_longer_valid_chain():
    base = _extend(ledger.Chain.genesis(TARGET), b"1")
    longer = _extend(base, b"2")
    broken = replace(longer, main=longer.main[:-1] + (replace(longer.head, prev=bytes(32)),))
    assert ledger.update(base, [broken]) is base
    assert ledger.update(base, [longer]) is longer
    other = _extend(base, b"other")
    assert ledger.update(longer, [other]) is longer


def test_pruning_and_prefix():
    chain = ledger.Chain.genesis(TARGET)
    for i in range(4):
        chain = _extend(chain, bytes([i]))
    assert len(chain.pruned(2)) == 3
    assert chain.pruned(2).is_prefix_of(chain)
    assert ledger.stable_prefix(chain, 2).height == 3
    with pytest.raises(ValueError):
        ledger.stable_prefix(chain, -1)


def test_save_and_load(tmp_path, keys):
    chain = _extend(ledger.Chain.genesis(TARGET), b"1", [ledger.make_coinbase(_pk(keys[0]), 50)])
    chain = ledger.append_side_block(chain, ledger.BlockKind.KE, [ledger.make_key_exchange(keys[1])], keys[:1])
    path = tmp_path / "chain.txt"
    chain.save(path)
    loaded = ledger.Chain.load(path)
    assert loaded.main == chain.main and loaded.ke == chain.ke and loaded.target == chain.target


def test_property_simulation_detects_dishonest_majority():
    rng = random.Random(3)
    runs = [ledger.simulate_chain_properties(rng, adversary_share=0.7, k=2, slots=600) for _ in range(20)]
    assert sum(r.chain_quality_window for r in runs) / len(runs) > 0.5
