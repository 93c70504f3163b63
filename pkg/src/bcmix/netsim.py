"""Deterministic discrete-event network with a capability-limited adversary.

Two channel kinds exist. Gossip links carry on-chain traffic and may be
tampered with freely by the adversary on links it sits on. Direct links
between mix nodes are authenticated: the adversary can delay, drop, read,
forward or delete, but the API simply has no way to modify or inject.

Times are simulated seconds. Everything random comes from the seed.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Optional


class NetsimError(Exception):
    pass


class UnknownNode(NetsimError):
    pass


class CapabilityError(NetsimError):
    pass


class Channel(enum.Enum):
    GOSSIP = "gossip"
    DIRECT = "direct"


DIRECT_CAPABILITIES = frozenset({"delay", "drop", "eavesdrop", "forward", "delete"})
GOSSIP_CAPABILITIES = frozenset({"delay", "drop", "reorder", "eavesdrop", "modify", "inject"})


@dataclass
class AdversaryPolicy:
    """Which nodes the adversary runs and what it may do to traffic touching them.

    ``tapped_links`` adds (src, dst) pairs the adversary sits on without
    owning either end. ``drop_filter(event) -> bool`` chooses what to drop
    among controllable traffic (default: nothing unless ``drop_all``).
    """
    controlled: frozenset = frozenset()
    direct_caps: frozenset = frozenset()
    gossip_caps: frozenset = frozenset()
    tapped_links: frozenset = frozenset()
    compromised_users: frozenset = frozenset()
    hashpower: float = 0.0
    extra_delay: float = 0.0
    drop_all: bool = False
    drop_filter: Optional[Callable] = None
    modify: Optional[Callable[[bytes], bytes]] = None

    def __post_init__(self) -> None:
        self.controlled = frozenset(self.controlled)
        self.direct_caps = frozenset(self.direct_caps)
        self.gossip_caps = frozenset(self.gossip_caps)
        self.tapped_links = frozenset(self.tapped_links)
        bad = self.direct_caps - DIRECT_CAPABILITIES
        if bad:
            raise CapabilityError(f"not possible on authenticated links: {sorted(bad)}")
        bad = self.gossip_caps - GOSSIP_CAPABILITIES
        if bad:
            raise CapabilityError(f"unknown capabilities: {sorted(bad)}")
        if not 0.0 <= self.hashpower <= 1.0:
            raise ValueError("hashpower is a fraction")

    def on_link(self, src, dst) -> bool:
        return src in self.controlled or dst in self.controlled or (src, dst) in self.tapped_links

    def caps(self, channel: Channel) -> frozenset:
        return self.direct_caps if channel == Channel.DIRECT else self.gossip_caps


@dataclass(order=True)
class SimEvent:
    deliver_at: float
    seq: int
    src: Hashable = field(compare=False)
    dst: Hashable = field(compare=False)
    payload: bytes = field(compare=False)
    channel: Channel = field(compare=False)
    sent_at: float = field(compare=False, default=0.0)
    nonce: int = field(compare=False, default=0)
    kind: str = field(compare=False, default="")

    def to_json(self) -> dict:
        return {"t": round(self.deliver_at, 9), "sent": round(self.sent_at, 9), "seq": self.seq,
                "from": str(self.src), "to": str(self.dst), "channel": self.channel.value,
                "kind": self.kind, "payload": self.payload.hex()}


@dataclass
class LatencyModel:
    base: float = 0.05
    jitter: float = 0.02

    def sample(self, rng: random.Random) -> float:
        if self.jitter <= 0:
            return self.base
        return max(0.0, self.base + rng.uniform(-self.jitter, self.jitter))


Handler = Callable[["Network", SimEvent], None]


class Network:
    """Event loop over a fixed node set.

    >>> net = Network(["a", "b"], latency=LatencyModel(0, 0), seed=1)
    >>> _ = net.schedule("a", "b", b"hi", Channel.GOSSIP)
    >>> [e.payload for e in net.run()]
    [b'hi']
    """

    def __init__(self, nodes: Iterable[Hashable], *, latency: Optional[LatencyModel] = None, seed: int = 0,
                 policy: Optional[AdversaryPolicy] = None, edges: Optional[Iterable[tuple]] = None) -> None:
        self.nodes = list(dict.fromkeys(nodes))
        self._node_set = set(self.nodes)
        self.latency = latency or LatencyModel()
        self.rng = random.Random(seed)
        self.policy = policy or AdversaryPolicy()
        self.now = 0.0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._nonce = defaultdict(int)
        self._seen_nonces: dict = defaultdict(set)
        self._last_direct: dict = {}
        self.handlers: dict[Hashable, Handler] = {}
        self.trace: list[SimEvent] = []
        self.dropped: list[SimEvent] = []
        self.rejected: list[SimEvent] = []
        self.observed: list[SimEvent] = []
        self.crashed: set = set()
        self.adjacency: dict = defaultdict(set)
        if edges is None:
            for a in self.nodes:
                for b in self.nodes:
                    if a != b:
                        self.adjacency[a].add(b)
        else:
            for a, b in edges:
                self._check(a)
                self._check(b)
                self.adjacency[a].add(b)
                self.adjacency[b].add(a)

    def _check(self, node) -> None:
        if node not in self._node_set:
            raise UnknownNode(f"{node!r} is not part of this network")

    def on(self, node, handler: Handler) -> None:
        self._check(node)
        self.handlers[node] = handler

    def neighbours(self, node) -> list:
        return sorted(self.adjacency[node], key=str)

    def schedule(self, src, dst, payload: bytes, channel: Channel, *, kind: str = "", delay: float = 0.0,
                 nonce: Optional[int] = None) -> int:
        self._check(src)
        self._check(dst)
        if nonce is None:
            self._nonce[(src, dst)] += 1
            nonce = self._nonce[(src, dst)]
        self._seq += 1
        lat = self.latency.sample(self.rng) + delay
        pol = self.policy
        if pol.on_link(src, dst) and "delay" in pol.caps(channel):
            lat += pol.extra_delay
        if channel == Channel.DIRECT:
            # FIFO per ordered pair: never overtake an earlier message
            deliver = max(self.now + lat, self._last_direct.get((src, dst), 0.0))
            self._last_direct[(src, dst)] = deliver
        else:
            deliver = self.now + lat
        ev = SimEvent(deliver, self._seq, src, dst, bytes(payload), channel, self.now, nonce, kind)
        heapq.heappush(self._queue, ev)
        return self._seq

    def inject(self, src, dst, payload: bytes, channel: Channel, **kw) -> int:
        """Adversary-originated message; only possible on gossip links."""
        if channel == Channel.DIRECT:
            raise CapabilityError("injection on authenticated links is not possible")
        if "inject" not in self.policy.gossip_caps:
            raise CapabilityError("policy does not allow injection")
        return self.schedule(src, dst, payload, channel, **kw)

    def replay(self, event: SimEvent) -> int:
        """Re-send a captured message with its original nonce."""
        return self.schedule(event.src, event.dst, event.payload, event.channel, kind=event.kind, nonce=event.nonce)

    def _adversary_step(self, ev: SimEvent) -> Optional[SimEvent]:
        pol = self.policy
        if not pol.on_link(ev.src, ev.dst):
            return ev
        caps = pol.caps(ev.channel)
        if "eavesdrop" in caps:
            self.observed.append(ev)
        wants_drop = pol.drop_all or (pol.drop_filter is not None and pol.drop_filter(ev))
        if wants_drop and ({"drop", "delete"} & caps):
            self.dropped.append(ev)
            return None
        if ev.channel == Channel.GOSSIP and pol.modify is not None and "modify" in caps:
            ev = SimEvent(ev.deliver_at, ev.seq, ev.src, ev.dst, pol.modify(ev.payload), ev.channel,
                          ev.sent_at, ev.nonce, ev.kind)
        return ev

    def step(self) -> Optional[SimEvent]:
        while self._queue:
            ev = heapq.heappop(self._queue)
            self.now = max(self.now, ev.deliver_at)
            if ev.src in self.crashed:
                continue
            ev = self._adversary_step(ev)
            if ev is None:
                continue
            if ev.channel == Channel.DIRECT:
                key = (ev.src, ev.dst)
                if ev.nonce in self._seen_nonces[key]:
                    self.rejected.append(ev)
                    continue
                self._seen_nonces[key].add(ev.nonce)
            if ev.dst in self.crashed:
                continue
            self.trace.append(ev)
            h = self.handlers.get(ev.dst)
            if h is not None:
                h(self, ev)
            return ev
        return None

    def run(self, until: Optional[float] = None, max_events: int = 10**6) -> list[SimEvent]:
        out = []
        for _ in range(max_events):
            if not self._queue or (until is not None and self._queue[0].deliver_at > until):
                break
            ev = self.step()
            if ev is not None:
                out.append(ev)
        if until is not None:
            self.now = max(self.now, until)
        return out

    def adversary_observe(self) -> list[SimEvent]:
        return list(self.observed)

    def trace_hash(self) -> str:
        h = hashlib.sha256()
        for ev in self.trace:
            h.update(json.dumps(ev.to_json(), sort_keys=True).encode())
        return h.hexdigest()

    def export_trace(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.trace:
                fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")

    # -- gossip -------------------------------------------------------------

    def gossip(self, origin, payload: bytes, *, kind: str = "gossip") -> set:
        """Flood ``payload`` from ``origin``; adversarial nodes relay only if
        they choose to. Runs the loop until the flood settles."""
        self._check(origin)
        reached = {origin}
        relayed = set()
        pol = self.policy

        def relay(node):
            if node in relayed or node in self.crashed:
                return
            relayed.add(node)
            if node in pol.controlled and node != origin and (pol.drop_all or pol.drop_filter is not None):
                return
            for nb in self.neighbours(node):
                self.schedule(node, nb, payload, Channel.GOSSIP, kind=kind)

        saved = dict(self.handlers)

        def on_gossip(net, ev):
            if ev.kind == kind and ev.payload == payload:
                reached.add(ev.dst)
                relay(ev.dst)
            elif ev.dst in saved:
                saved[ev.dst](net, ev)

        for n in self.nodes:
            self.handlers[n] = on_gossip
        try:
            relay(origin)
            self.run()
        finally:
            self.handlers = saved
        return reached


def honest_reachable(nodes: Iterable, edges: Iterable[tuple], controlled: Iterable, origin) -> set:
    """Nodes reachable from ``origin`` without passing through ``controlled``."""
    bad = set(controlled)
    adj = defaultdict(set)
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = {origin}
    todo = deque([origin])
    while todo:
        u = todo.popleft()
        if u in bad and u != origin:
            continue
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


# ---------------------------------------------------------------------------
# heartbeat failure detection

@dataclass
class FailureReport:
    reporter: Hashable
    suspect: Hashable
    detected_at: float
    reached: set
    reached_at: float


def detect_failure(net: Network, cascade: list, crashed: Hashable, *, interval: float = 1.0, missed: int = 3,
                   crash_at: float = 0.5, horizon: float = 30.0) -> Optional[FailureReport]:
    """Heartbeats along the cascade; the successor of a silent node reports it.

    Each node sends a heartbeat to its successor every ``interval`` seconds.
    When ``missed`` consecutive heartbeats from the predecessor fail to
    arrive, the successor gossips a failure report.
    """
    pred = {cascade[i + 1]: cascade[i] for i in range(len(cascade) - 1)}
    if crashed == cascade[-1]:
        pred[cascade[0]] = cascade[-1]
    last_seen = {n: 0.0 for n in pred}
    t = 0.0
    while t <= horizon:
        if t >= crash_at:
            net.crashed.add(crashed)
        for node in cascade:
            nxt = [s for s, p in pred.items() if p == node]
            for s in nxt:
                net.schedule(node, s, b"hb", Channel.DIRECT, kind="heartbeat")
        for ev in net.run(until=t + interval):
            if ev.kind == "heartbeat":
                last_seen[ev.dst] = ev.deliver_at
        t += interval
        for succ, p in pred.items():
            if succ in net.crashed:
                continue
            if t - last_seen[succ] > missed * interval:
                detected = net.now
                payload = f"down:{p}".encode()
                reached = net.gossip(succ, payload, kind="failure-report")
                return FailureReport(succ, p, detected, reached, net.now)
    return None
