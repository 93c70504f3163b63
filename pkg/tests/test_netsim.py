import random

import pytest

from bcmix.netsim import (
    AdversaryPolicy, CapabilityError, Channel, LatencyModel, Network, UnknownNode, detect_failure, honest_reachable,
)

ZERO = LatencyModel(0.0, 0.0)


def test_zero_latency_delivers_at_send_time():
    net = Network(["a", "b"], latency=ZERO)
    net.schedule("a", "b", b"x", Channel.DIRECT)
    [ev] = net.run()
    assert ev.deliver_at == 0.0 and ev.payload == b"x"


def test_unknown_node():
    net = Network(["a"])
    with pytest.raises(UnknownNode):
        net.schedule("a", "zz", b"", Channel.GOSSIP)


def test_drop_is_logged_not_delivered():
    pol = AdversaryPolicy(controlled={"b"}, direct_caps={"drop"}, drop_all=True)
    net = Network(["a", "b"], latency=ZERO, policy=pol)
    net.schedule("a", "b", b"x", Channel.DIRECT)
    assert net.run() == []
    assert [e.payload for e in net.dropped] == [b"x"]


def test_direct_links_cannot_be_modified():
    with pytest.raises(CapabilityError):
        AdversaryPolicy(direct_caps={"modify"})
    with pytest.raises(CapabilityError):
        AdversaryPolicy(direct_caps={"inject"})
    net = Network(["a", "b"], policy=AdversaryPolicy(gossip_caps={"inject"}))
    with pytest.raises(CapabilityError):
        net.inject("a", "b", b"forged", Channel.DIRECT)
    net.inject("a", "b", b"forged", Channel.GOSSIP)


def test_gossip_modification():
    pol = AdversaryPolicy(controlled={"m"}, gossip_caps={"modify"}, modify=lambda b: b[::-1])
    net = Network(["a", "m"], latency=ZERO, policy=pol)
    net.schedule("a", "m", b"abc", Channel.GOSSIP)
    net.schedule("a", "m", b"abc", Channel.DIRECT)
    assert [e.payload for e in net.run()] == [b"cba", b"abc"]


def test_direct_fifo_and_replay_rejected():
    net = Network(["a", "b"], latency=LatencyModel(0.05, 0.05), seed=3)
    for i in range(20):
        net.schedule("a", "b", bytes([i]), Channel.DIRECT)
    delivered = net.run()
    assert [e.payload[0] for e in delivered] == list(range(20))
    net.replay(delivered[4])
    assert net.run() == [] and len(net.rejected) == 1


def test_same_seed_same_trace():
    def trace(seed):
        net = Network(list("abcdef"), seed=seed)
        rng = random.Random(seed)
        for _ in range(30):
            a, b = rng.sample("abcdef", 2)
            net.schedule(a, b, rng.randbytes(4), rng.choice(list(Channel)))
        net.run()
        return net.trace_hash()

    assert trace(1) == trace(1)
    assert trace(1) != trace(2)


def test_export_trace(tmp_path):
    net = Network(["a", "b"], latency=ZERO)
    net.schedule("a", "b", b"\x01", Channel.GOSSIP, kind="k")
    net.run()
    path = tmp_path / "t.jsonl"
    net.export_trace(path)
    assert '"kind": "k"' in path.read_text()


@pytest.mark.parametrize("where, seen", [("controlled", True), ("tapped", True), ("elsewhere", False)])
def test_adversary_observes_only_its_links(where, seen):
    pol = {
        "controlled": AdversaryPolicy(controlled={"b"}, direct_caps={"eavesdrop"}),
        "tapped": AdversaryPolicy(tapped_links={("a", "b")}, direct_caps={"eavesdrop"}),
        "elsewhere": AdversaryPolicy(controlled={"c"}, direct_caps={"eavesdrop"}),
    }[where]
    net = Network(["a", "b", "c"], latency=ZERO, policy=pol)
    net.schedule("a", "b", b"secret", Channel.DIRECT)
    net.run()
    assert bool(net.adversary_observe()) is seen


def test_eclipse_matches_reachability_oracle():
    rng = random.Random(8)
    nodes = list(range(30))
    edges = {(i, (i + 1) % 30) for i in nodes} | {tuple(rng.sample(nodes, 2)) for _ in range(15)}
    controlled = set(rng.sample(nodes[1:], 8))
    pol = AdversaryPolicy(controlled=controlled, gossip_caps={"drop"}, drop_all=True)
    net = Network(nodes, policy=pol, edges=edges, seed=1)
    reached = net.gossip(0, b"block")
    honest = set(nodes) - controlled
    assert reached & honest == honest_reachable(nodes, edges, controlled, 0) & honest


def test_failure_detected_and_announced():
    cascade = ["n1", "n2", "n3", "n4"]
    net = Network(cascade + ["u1", "u2"], seed=2)
    rep = detect_failure(net, cascade, "n2")
    assert rep.reporter == "n3" and rep.suspect == "n2"
    assert rep.detected_at is not None and rep.detected_at > 0.5
    assert {"n1", "n3", "n4", "u1", "u2"} <= rep.reached
