import random

import pytest

from bcmix.cmix_reference import DEFAULT_GROUP, TOY_GROUP, CmixNetwork, CmixUser, tagging_attack


def _net(n=3, batch_size=4, seed=0, group=TOY_GROUP):
    rng = random.Random(seed)
    net = CmixNetwork.create(group, n, rng)
    users = [CmixUser.create(group, rng) for _ in range(batch_size)]
    net.setup(users)
    msgs = [group.encode(rng.getrandbits(20)) for _ in range(batch_size)]
    return net, msgs, rng


def test_encode_decode():
    for payload in (0, 1, 12345, 2**20):
        assert TOY_GROUP.decode(TOY_GROUP.encode(payload)) == payload


def test_group_elements_are_in_the_subgroup():
    rng = random.Random(2)
    for _ in range(20):
        assert TOY_GROUP.contains(TOY_GROUP.random_element(rng))
        assert TOY_GROUP.contains(TOY_GROUP.encode(rng.getrandbits(16)))


def test_honest_round_delivers_permuted_messages():
    net, msgs, rng = _net()
    out = net.run_round(msgs, rng)
    perm = net.composite_permutation()
    assert [out[perm[a]] for a in range(len(msgs))] == msgs


def test_default_group_round():
    net, msgs, rng = _net(n=2, batch_size=2, group=DEFAULT_GROUP)
    assert sorted(net.run_round(msgs, rng)) == sorted(msgs)


@pytest.mark.parametrize("seed", range(5))
def test_tagging_attack_links_and_stays_hidden(seed):
    net, msgs, rng = _net(seed=seed)
    res = tagging_attack(net, msgs, 2, rng)
    assert res.success and res.commitments_verified
    assert sorted(res.outputs) == sorted(msgs)


def test_tagging_attack_bad_slot():
    net, msgs, rng = _net()
    with pytest.raises(ValueError):
        tagging_attack(net, msgs, 9, rng)
