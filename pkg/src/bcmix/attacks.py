"""Attack experiments: Sybil and tagging election capture, the anonymity
game, and the replay, impersonation and failover drills.

The election experiments use common random numbers across difficulties.
Each identity draws an exponential arrival and a uniform quantile per
trial. At a given difficulty it becomes a candidate iff the arrival is at
most its expected solution count in the window, and its witness count is 1
plus the Poisson(expected - arrival) value at that quantile. Easier
difficulties only ever add candidates and raise counts, which keeps the
curves comparable across difficulties.
"""

from __future__ import annotations

import csv
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .election import (
    Candidate,
    Miner,
    ip_sharding,
    load_mining_pools,
    vrf_input,
    vrf_select,
    vrf_value_for,
    NodePool,
)
from .group_crypto import SECP256K1, TINY, Curve, Point, encode_message, vrf_eval, vrf_verify
from .mixnet import (
    MixBatch,
    MixCascade,
    MixUser,
    Stage,
    StaleRound,
    blind_message,
    compose,
    precompute_mix,
    precompute_postprocess,
    precompute_preprocess,
    realtime_mix,
    realtime_preprocess,
)
from .netsim import AdversaryPolicy, Channel, LatencyModel, Network, detect_failure, honest_reachable

ATTACKER_POWERS = (0.5384, 0.6343, 0.7480)
DIFFICULTIES = (1e9, 1e10, 1e11, 1e12)
EXA = 10**18
MAX_REDRAWS = 10_000


@dataclass
class AttackResult:
    scenario: str
    successes: int
    trials: int
    probability: float
    ci_low: float
    ci_high: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, scenario: str, successes: int, trials: int, **extra) -> "AttackResult":
        lo, hi = wilson_interval(successes, trials)
        return cls(scenario, successes, trials, successes / trials, lo, hi, extra)

    def to_row(self) -> dict:
        row = {"scenario": self.scenario, "successes": self.successes, "trials": self.trials,
               "probability": f"{self.probability:.6f}", "ci_low": f"{self.ci_low:.6f}",
               "ci_high": f"{self.ci_high:.6f}"}
        row.update(self.extra)
        return row


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


# ---------------------------------------------------------------------------
# Sybil and tagging capture of an election

@dataclass
class SybilScenario:
    attacker_power: float
    difficulty: float = 1e11
    window: float = 30.0
    trials: int = 1000
    max_ratio: float = 5.0
    identities_per_ip: int = 1
    attacker_pools: Optional[tuple[str, ...]] = None
    seed: int = 0
    pools: Optional[list[dict]] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.attacker_power <= 1.0:
            raise ValueError("attacker_power is a fraction")
        if self.trials < 1 or self.difficulty <= 0 or self.window <= 0:
            raise ValueError("trials, difficulty and window must be positive")


def choose_attacker_pools(rows: Sequence[dict], power: float) -> tuple[str, ...]:
    """Largest pools first until their combined share reaches ``power``."""
    if power <= 0:
        return ()
    total = sum(r["hashrate_ehs"] for r in rows)
    chosen, acc = [], 0.0
    for r in sorted(rows, key=lambda r: -r["hashrate_ehs"]):
        if acc >= power * total - 1e-12:
            break
        chosen.append(r["name"])
        acc += r["hashrate_ehs"]
    return tuple(chosen)


@dataclass
class _Identity:
    miner: Miner
    attacker: bool


def _identities(rows: Sequence[dict], power: float, attacker_pools: Sequence[str], per_ip: int,
                seed: int) -> list[_Identity]:
    """One identity per pool IP (times ``per_ip``), pool hashrate split evenly,
    attacker and honest sides rescaled to hold exactly ``power`` and
    ``1 - power`` of the total."""
    total = sum(r["hashrate_ehs"] for r in rows) * EXA
    att = set(attacker_pools)
    att_sum = sum(r["hashrate_ehs"] for r in rows if r["name"] in att) * EXA
    hon_sum = total - att_sum
    rng = random.Random(f"identities:{seed}")
    out = []
    for r in rows:
        is_att = r["name"] in att
        base = r["hashrate_ehs"] * EXA
        if is_att:
            scaled = base * (power * total / att_sum) if att_sum else 0.0
        else:
            scaled = base * ((1 - power) * total / hon_sum) if hon_sum else 0.0
        count = len(r["ips"]) * per_ip
        for j, ip in enumerate(ip for ip in r["ips"] for _ in range(per_ip)):
            m = Miner.create(f"{r['name']}#{j}", ip, 1.0, rng, pool=r["name"])
            m.hashrate = scaled / count
            out.append(_Identity(m, is_att))
    return out


@dataclass
class _CaptureSetup:
    identities: list[_Identity]
    difficulties: tuple[float, ...]
    window: float
    max_ratio: float
    seed: int


_VRF_CACHE: dict = {}


def _vrf(miner: Miner, slot: int) -> bytes:
    key = (miner.id, miner.vrf_secret, slot)
    v = _VRF_CACHE.get(key)
    if v is None:
        v = _VRF_CACHE[key] = vrf_value_for(miner, slot)
    return v


def _capture_chunk(setup: _CaptureSetup, first: int, last: int) -> np.ndarray:
    """Outcome codes per (trial, difficulty): bit 0 sybil, bit 1 tagging,
    bit 2 set when at least one empty window had to be redrawn.

    An empty window elects nobody, so the vote is rerun with fresh draws
    until some identity qualifies (at most ``MAX_REDRAWS`` times).
    """
    ids = setup.identities
    rates = np.array([i.miner.hashrate for i in ids])
    out = np.zeros((last - first, len(setup.difficulties)), dtype=np.int8)
    for t in range(first, last):
        rng = np.random.default_rng([setup.seed, t])
        shared = (-np.log1p(-rng.random(len(ids))), rng.random(len(ids)))
        slot = t + 1
        for d_idx, difficulty in enumerate(setup.difficulties):
            expected = rates * setup.window / (difficulty * 2.0**32)
            arrival, quantile = shared
            redrawn = 0
            while not (arrival <= expected).any():
                redrawn += 1
                if redrawn > MAX_REDRAWS:
                    break
                r2 = np.random.default_rng([setup.seed, t, d_idx, redrawn])
                arrival, quantile = -np.log1p(-r2.random(len(ids))), r2.random(len(ids))
            if redrawn > MAX_REDRAWS:
                out[t - first, d_idx] = 4
                continue
            is_cand = arrival <= expected
            extra = stats.poisson.ppf(quantile, np.maximum(expected - arrival, 0.0))
            by_ip: dict[str, tuple[Candidate, bool]] = {}
            for k in np.flatnonzero(is_cand):
                idn = ids[k]
                sols = 1 + int(extra[k])
                cur = by_ip.get(idn.miner.ip)
                if cur is None or sols > cur[0].solutions:
                    by_ip[idn.miner.ip] = (Candidate(idn.miner, None, sols), idn.attacker)
            cands = [c for c, _ in by_ip.values()]
            flag = {c.miner.id: a for c, a in by_ip.values()}
            pools = ip_sharding(cands, setup.max_ratio)
            winners = []
            for p in pools:
                best = min(p.members, key=lambda c: (_vrf(c.miner, slot), c.miner.id))
                winners.append((_vrf(best.miner, slot), best.miner.id, flag[best.miner.id]))
            winners.sort()
            sybil = all(w[2] for w in winners)
            last_node = winners[-1][2]
            interior = len(winners) == 1 or any(w[2] for w in winners[:-1])
            out[t - first, d_idx] = int(sybil) | (int(last_node and interior) << 1) | (4 if redrawn else 0)
    return out


def _run_capture(setup: _CaptureSetup, trials: int, parallel: int = 1) -> np.ndarray:
    if parallel <= 1 or trials < 2 * parallel:
        return _capture_chunk(setup, 0, trials)
    bounds = np.linspace(0, trials, parallel + 1).astype(int)
    with ProcessPoolExecutor(parallel) as ex:
        parts = list(ex.map(_capture_chunk, [setup] * parallel, bounds[:-1], bounds[1:]))
    return np.vstack(parts)


def _setup_for(sc: SybilScenario, difficulties: Sequence[float]) -> _CaptureSetup:
    rows = sc.pools if sc.pools is not None else load_mining_pools()
    att = sc.attacker_pools if sc.attacker_pools is not None else choose_attacker_pools(rows, sc.attacker_power)
    ids = _identities(rows, sc.attacker_power, att, sc.identities_per_ip, sc.seed)
    return _CaptureSetup(ids, tuple(difficulties), sc.window, sc.max_ratio, sc.seed)


def _result(kind: str, sc: SybilScenario, difficulty: float, codes: np.ndarray) -> AttackResult:
    bit = 1 if kind == "sybil" else 2
    wins = int(np.count_nonzero(codes & bit))
    redrawn = int(np.count_nonzero(codes & 4))
    label = f"{kind}:power={sc.attacker_power:.4f}:difficulty={difficulty:.0e}"
    return AttackResult.from_counts(label, wins, len(codes), kind=kind, power=f"{sc.attacker_power:.4f}",
                                    difficulty=f"{difficulty:.0e}", redrawn_windows=redrawn)


def sybil_probability(scenario: SybilScenario, parallel: int = 1) -> AttackResult:
    """Share of slots in which attacker identities win every pool."""
    codes = _run_capture(_setup_for(scenario, [scenario.difficulty]), scenario.trials, parallel)
    return _result("sybil", scenario, scenario.difficulty, codes[:, 0])


def tagging_probability(scenario: SybilScenario, parallel: int = 1) -> AttackResult:
    """Share of slots in which the attacker holds the last node and another one."""
    codes = _run_capture(_setup_for(scenario, [scenario.difficulty]), scenario.trials, parallel)
    return _result("tagging", scenario, scenario.difficulty, codes[:, 0])


def capture_sweep(powers: Sequence[float] = ATTACKER_POWERS, difficulties: Sequence[float] = DIFFICULTIES,
                  trials: int = 1000, seed: int = 0, window: float = 30.0, max_ratio: float = 5.0,
                  parallel: int = 1, pools: Optional[list[dict]] = None) -> list[AttackResult]:
    """Both curves for every (power, difficulty), sharing random draws across difficulties."""
    results = []
    for power in powers:
        sc = SybilScenario(power, trials=trials, seed=seed, window=window, max_ratio=max_ratio, pools=pools)
        codes = _run_capture(_setup_for(sc, difficulties), trials, parallel)
        for kind in ("sybil", "tagging"):
            for d_idx, difficulty in enumerate(difficulties):
                results.append(_result(kind, sc, difficulty, codes[:, d_idx]))
    return results


def write_csv(results: Sequence[AttackResult], path_or_file) -> None:
    rows = [r.to_row() for r in results]
    fields = list(dict.fromkeys(k for r in rows for k in r))
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# anonymity game

@dataclass
class AnonymityResult:
    trials: int
    correct: int
    advantage: float  # P[guess = b] - 1/2, signed
    ci_low: float
    ci_high: float
    honest_nodes: int

    def to_row(self) -> dict:
        return {"trials": self.trials, "correct": self.correct, "advantage": f"{self.advantage:.6f}",
                "ci_low": f"{self.ci_low:.6f}", "ci_high": f"{self.ci_high:.6f}",
                "honest_nodes": self.honest_nodes}


def _non_identity_points(curve: Curve) -> list[Point]:
    g = curve.generator
    return [k * g for k in range(1, curve.order)]


def pair_consistency(view: dict) -> Optional[np.ndarray]:
    """Matrix over (input slot, honest-node output slot) of which pairings the
    transcript allows; None when no node is honest.

    For each pair the adversary solves for the honest node's shared key
    implied by the transcript and, where it knows the user's secret, checks
    it. Slots of honest users are always consistent.
    """
    cascade: MixCascade = view["cascade"]
    honest_pos = view["honest"]
    if honest_pos is None:
        return None
    tr = cascade.transcript
    nodes = cascade.nodes
    batch_size = len(view["output"])
    perms = [nd.secrets.perm for nd in nodes]
    ident = list(range(batch_size))
    before = compose(perms[:honest_pos]) if honest_pos else ident
    after = compose(perms[honest_pos + 1:]) if honest_pos + 1 < len(nodes) else ident
    curve = nodes[0].curve
    # aggregate offsets per final slot, recovered from the opened shares
    agg = []
    for o in range(batch_size):
        acc = tr.masked[o]
        for sh in tr.opened_shares.values():
            acc = acc - sh[o]
        agg.append(-acc)
    pre = [tr.inputs.payload] + [tr.hops[(Stage.REALTIME_PREPROCESS, nd.index)].payload for nd in nodes]
    mix_in = pre[-1] if honest_pos == 0 else tr.hops[(Stage.REALTIME_MIX, nodes[honest_pos - 1].index)].payload
    mix_out = tr.hops[(Stage.REALTIME_MIX, nodes[honest_pos].index)].payload
    honest_pk = nodes[honest_pos].public_key

    def known_offsets(j: int, q: int) -> Point:
        acc = curve.identity
        for i, nd in enumerate(nodes):
            if i != honest_pos:
                acc = acc + nd.secrets.blinds[j]
        pos = j
        for i in range(honest_pos):
            pos = perms[i][pos]
            acc = acc + nodes[i].secrets.offsets[pos]
        pos = q
        for i in range(honest_pos + 1, len(nodes)):
            pos = perms[i][pos]
            acc = acc + nodes[i].secrets.offsets[pos]
        return acc

    ok = np.ones((batch_size, batch_size), dtype=bool)
    for j, sk in view["user_sks"].items():
        expected = sk * honest_pk
        for q in range(batch_size):
            honest_offset = mix_out[q] - mix_in[before[j]]
            honest_blind = agg[after[q]] - known_offsets(j, q) - honest_offset
            ok[j, q] = (pre[honest_pos + 1][j] - pre[honest_pos][j]) - honest_blind == expected
    return ok


def _matching_guess(view: dict, rng: random.Random) -> int:
    """Exhaustive matching over what the adversary sees.

    With every node corrupt the composite permutation is known. Otherwise
    each hypothesis about the challenge bit pins the two honest users to
    the outputs carrying the challenge messages and must still admit a full
    matching of the remaining slots; ties are broken by a coin flip.
    """
    cascade: MixCascade = view["cascade"]
    nodes = cascade.nodes
    out = view["output"]
    m0, m1 = view["m0"], view["m1"]
    x, y = view["x"], view["y"]
    batch_size = len(out)
    ok = pair_consistency(view)
    if ok is None:
        total = compose([nd.secrets.perm for nd in nodes])
        return 0 if out[total[x]] == m0 else 1
    honest_pos = view["honest"]
    perms = [nd.secrets.perm for nd in nodes]
    after = compose(perms[honest_pos + 1:]) if honest_pos + 1 < len(nodes) else list(range(batch_size))
    inv_after = {after[q]: q for q in range(batch_size)}
    q_of = {val: inv_after[o] for o, val in enumerate(out) if val in (m0, m1)}
    scores = []
    for guess in (0, 1):
        fixed = {x: q_of[m0 if guess == 0 else m1], y: q_of[m1 if guess == 0 else m0]}
        good = all(ok[j, q] for j, q in fixed.items())
        if good:
            rest_j = [j for j in range(batch_size) if j not in fixed]
            rest_q = [q for q in range(batch_size) if q not in fixed.values()]
            cost = (~ok[np.ix_(rest_j, rest_q)]).astype(int)
            if cost.size:
                r, c = linear_sum_assignment(cost)
                good = cost[r, c].sum() == 0
        scores.append(good)
    if scores[0] != scores[1]:
        return 0 if scores[0] else 1
    return rng.randrange(2)


def anonymity_game(n: int = 4, batch_size: int = 8, trials: int = 1000, *, honest_nodes: int = 1, seed: int = 0,
                   curve: Curve = TINY) -> AnonymityResult:
    """Estimate the distinguishing advantage against sender anonymity.

    The adversary runs every node except ``honest_nodes`` (0 or 1) and
    every user except two, picks all messages, and sees every broadcast
    value plus its own nodes' secrets.
    """
    if n < 1 or batch_size < 2 or honest_nodes not in (0, 1):
        raise ValueError("need n >= 1, batch_size >= 2 and at most one honest node")
    points = _non_identity_points(curve)
    if batch_size > len(points):
        raise ValueError("batch larger than the number of distinct messages")
    correct = 0
    for t in range(trials):
        rng = random.Random(f"anon:{seed}:{t}")
        adv_rng = random.Random(f"anon-adv:{seed}:{t}")
        cascade = MixCascade.create(curve, n, rng)
        users = [MixUser.create(curve, rng) for _ in range(batch_size)]
        cascade.setup([u.pk for u in users])
        x, y = rng.sample(range(batch_size), 2)
        msgs = rng.sample(points, batch_size)
        m0, m1 = msgs[x], msgs[y]
        b = rng.randrange(2)
        if b:
            msgs[x], msgs[y] = m1, m0
        honest = rng.randrange(n) if honest_nodes else None
        cascade.start_round(1, batch_size, rng)
        cascade.precompute()
        out = cascade.realtime([blind_message(m, k) for m, k in zip(msgs, cascade.slot_keys)])
        view = {
            "cascade": cascade, "output": out, "m0": m0, "m1": m1, "x": x, "y": y, "honest": honest,
            "user_sks": {j: u.sk for j, u in enumerate(users) if j not in (x, y)},
        }
        correct += _matching_guess(view, adv_rng) == b
    lo, hi = wilson_interval(correct, trials)
    return AnonymityResult(trials, correct, correct / trials - 0.5, lo - 0.5, hi - 0.5, honest_nodes)


# ---------------------------------------------------------------------------
# replay drill

@dataclass
class ReplayReport:
    trials: int
    cross_round_hits: int
    hit_rate: float
    ci_low: float
    ci_high: float
    chance: float
    same_round_replay_rejected: bool
    stale_round_rejected: bool
    fresh_randomness: bool
    replayed_output_delivered: bool

    @property
    def passed(self) -> bool:
        return (self.ci_low <= self.chance <= self.ci_high and self.same_round_replay_rejected
                and self.stale_round_rejected and self.fresh_randomness and self.replayed_output_delivered)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def replay_drill(trials: int = 1000, batch_size: int = 8, n: int = 3, seed: int = 0) -> ReplayReport:
    """Re-submit a victim's blinded message in the next round and try to link
    it by assuming the round-one position carries over."""
    hits = 0
    delivered = True
    for t in range(trials):
        rng = random.Random(f"replay:{seed}:{t}")
        cascade = MixCascade.create(TINY, n, rng)
        users = [MixUser.create(TINY, rng) for _ in range(batch_size)]
        cascade.setup([u.pk for u in users])
        points = _non_identity_points(TINY)
        msgs = rng.sample(points, batch_size)
        blinded = [blind_message(m, k) for m, k in zip(msgs, cascade.slot_keys)]
        victim = rng.randrange(batch_size)
        cascade.start_round(1, batch_size, rng)
        cascade.precompute()
        cascade.realtime(blinded)
        seen_at = cascade.composite_permutation()[victim]
        cascade.start_round(2, batch_size, rng)
        cascade.precompute()
        out = cascade.realtime(blinded)
        now_at = cascade.composite_permutation()[victim]
        delivered &= out[now_at] == msgs[victim]
        hits += now_at == seen_at
    lo, hi = wilson_interval(hits, trials)

    # replaying a captured message inside a round, on an authenticated link
    net = Network(["n1", "n2"], latency=LatencyModel(0.05, 0.0), seed=seed,
                  policy=AdversaryPolicy(direct_caps={"eavesdrop", "forward"}, tapped_links={("n1", "n2")}))
    net.schedule("n1", "n2", b"batch", Channel.DIRECT, kind="realtime_mix")
    net.run()
    captured = net.adversary_observe()[0]
    net.replay(captured)
    net.run()
    same_round = len(net.rejected) == 1 and sum(e.kind == "realtime_mix" for e in net.trace) == 1

    rng = random.Random(f"replay-audit:{seed}")
    cascade = MixCascade.create(SECP256K1, 2, rng)
    users = [MixUser.create(SECP256K1, rng) for _ in range(2)]
    cascade.setup([u.pk for u in users])
    draws = []
    for rid in (1, 2):
        cascade.start_round(rid, 2, rng)
        draws.append({x for nd in cascade.nodes for x in nd.secrets.blind_scalars + nd.secrets.offset_scalars})
    fresh = not (draws[0] & draws[1])
    try:
        cascade.nodes[0].new_round(1, 2, rng)
        stale = False
    except StaleRound:
        stale = True
    return ReplayReport(trials, hits, hits / trials, lo, hi, 1 / batch_size, same_round, stale, fresh, delivered)


# ---------------------------------------------------------------------------
# impersonation drill

@dataclass
class MitmReport:
    runs: int
    in_model_runs: int
    in_model_rejections: int
    eclipse_runs: int
    eclipse_impersonations: int
    variant_rejections: dict

    @property
    def rejection_rate(self) -> float:
        return self.in_model_rejections / self.in_model_runs if self.in_model_runs else 1.0

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["rejection_rate"] = self.rejection_rate
        return d


def _random_graph(nodes: Sequence[str], degree: int, rng: random.Random) -> list[tuple[str, str]]:
    edges = set()
    order = list(nodes)
    rng.shuffle(order)
    for a, b in zip(order, order[1:]):  # spanning path keeps it connected
        edges.add(tuple(sorted((a, b))))
    for a in nodes:
        for b in rng.sample([v for v in nodes if v != a], degree):
            edges.add(tuple(sorted((a, b))))
    return sorted(edges)


def _accepts(claim: dict, slot: int, gossiped: Optional[dict]) -> bool:
    """A user's check of an elected node's claim: the VRF proof must verify
    for this slot and, if a cascade arrived by gossip, match its entry."""
    try:
        ok = vrf_verify(claim["vrf_pk"], vrf_input(claim["ip"], slot), claim["value"], claim["proof"])
    except Exception:
        ok = False
    if not ok:
        return False
    if gossiped is None:
        return True
    entry = gossiped.get(claim["position"])
    return entry is not None and entry == (claim["pk"].to_bytes(), claim["value"])


def mitm_drill(runs: int = 100, seed: int = 0, n_peers: int = 24, degree: int = 3,
               eclipse_every: int = 4) -> MitmReport:
    """An impostor claims to be an elected node toward one victim user.

    Every ``eclipse_every``-th run the adversary owns all of the victim's
    neighbours, which is outside the threat model; those runs are reported
    separately.
    """
    variant_rej = {"forged": 0, "no_proof": 0, "stale": 0}
    in_model = rejections = eclipses = impersonated = 0
    for run in range(runs):
        rng = random.Random(f"mitm:{seed}:{run}")
        slot = 100 + run
        members = [Miner.create(f"e{i}", f"{10 + 40 * i}.{i}.0.1", 1e15, rng) for i in range(3)]
        elected = [vrf_select(NodePool(i, [], [Candidate(m, None, 1)]), slot) for i, m in enumerate(members)]
        impostor = Miner.create("imp", "66.6.6.6", 1e15, rng)
        peers = [f"p{i}" for i in range(n_peers)]
        names = ["victim", "origin"] + peers
        edges = _random_graph(names, degree, rng)
        nbrs = {b for a, b in edges if a == "victim"} | {a for a, b in edges if b == "victim"}
        eclipse = eclipse_every > 0 and run % eclipse_every == eclipse_every - 1
        if eclipse:
            controlled = set(nbrs) - {"origin"}
            if "origin" in nbrs:  # keep the eclipse genuine
                edges = [e for e in edges if set(e) != {"victim", "origin"}]
                controlled = {b for a, b in edges if a == "victim"} | {a for a, b in edges if b == "victim"}
                controlled.discard("victim")
        else:
            pool = [p for p in peers if p not in nbrs]
            controlled = set(rng.sample(pool, min(len(pool), n_peers // 4)))
            controlled |= set(rng.sample(sorted(nbrs - {"origin"}), max(0, len(nbrs - {"origin"}) - 1)))
        policy = AdversaryPolicy(controlled=frozenset(controlled), gossip_caps={"drop", "eavesdrop", "inject"},
                                 drop_all=True)
        net = Network(names, edges=edges, seed=rng.getrandbits(32), policy=policy)
        reached = net.gossip("origin", b"cascade", kind="cascade")
        oracle = honest_reachable(names, edges, controlled, "origin")
        gossiped = {i: (e.miner.pk.to_bytes(), e.value) for i, e in enumerate(elected)} if "victim" in reached else None
        outside = "victim" not in oracle
        target = rng.randrange(len(elected))
        own = vrf_eval(impostor.vrf_secret, vrf_input(impostor.ip, slot))
        stale = elected[target]
        stale_out = vrf_eval(stale.miner.vrf_secret, vrf_input(stale.miner.ip, slot - 1))
        claims = {
            "forged": {"position": target, "pk": impostor.pk, "vrf_pk": impostor.vrf_public, "ip": impostor.ip,
                       "value": own.value, "proof": own.proof},
            "no_proof": {"position": target, "pk": impostor.pk, "vrf_pk": stale.miner.vrf_public,
                         "ip": stale.miner.ip, "value": stale.value, "proof": bytes(len(stale.proof))},
            "stale": {"position": target, "pk": impostor.pk, "vrf_pk": stale.miner.vrf_public,
                      "ip": stale.miner.ip, "value": stale_out.value, "proof": stale_out.proof},
        }
        if outside:
            eclipses += 1
            impersonated += _accepts(claims["forged"], slot, gossiped)
            continue
        in_model += 1
        results = {k: not _accepts(c, slot, gossiped) for k, c in claims.items()}
        for k, rej in results.items():
            variant_rej[k] += rej
        rejections += all(results.values())
    return MitmReport(runs, in_model, rejections, eclipses, impersonated, variant_rej)


# ---------------------------------------------------------------------------
# single point of failure drill

@dataclass
class FailoverReport:
    scenario: str
    detected: bool
    reporter: Optional[str] = None
    suspect: Optional[str] = None
    detection_time: Optional[float] = None
    report_reached_all_honest: bool = False
    validated: bool = False
    reelected: bool = False
    new_cascade: list = field(default_factory=list)
    accuser_flagged: bool = False
    round_aborted: bool = False
    leaked_messages: int = 0
    within_budget: bool = False

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _probe(net: Network, validators: Sequence[str], suspect: str, timeout: float) -> bool:
    """Validators ping the suspect; True if nobody gets an answer in time."""
    answered = set()

    def on_probe(nw, ev):
        if ev.kind == "probe":
            nw.schedule(ev.dst, ev.src, b"pong", Channel.DIRECT, kind="pong")
        elif ev.kind == "pong":
            answered.add(ev.dst)

    saved = dict(net.handlers)
    for v in list(validators) + [suspect]:
        net.handlers[v] = on_probe
    try:
        for v in validators:
            net.schedule(v, suspect, b"ping", Channel.DIRECT, kind="probe")
        net.run(until=net.now + timeout)
    finally:
        net.handlers = saved
    return not answered


def failover_drill(scenario: str = "crash", n: int = 4, seed: int = 0, crashed: int = 1,
                   interval: float = 1.0, missed: int = 3) -> FailoverReport:
    """``scenario`` is "crash", "false_accusation" or "last_node_crash"."""
    if scenario == "last_node_crash":
        return _last_node_crash(n, seed)
    rng = random.Random(f"failover:{seed}")
    slot = 1
    pools = []
    for i in range(n):
        pair = [Miner.create(f"n{i}{tag}", f"{8 * (i + 1)}.{k}.0.1", 1e15, rng) for k, tag in enumerate("ab")]
        pools.append(NodePool(i, [], [Candidate(m, None, 1) for m in pair]))
    cascade = sorted((vrf_select(p, slot) for p in pools), key=lambda e: e.value)
    ids = [e.miner.id for e in cascade]
    others = [f"peer{i}" for i in range(8)]
    net = Network(ids + others, latency=LatencyModel(0.05, 0.02), seed=seed)
    budget = (missed + 1) * interval + 2.0
    suspect = ids[crashed]
    if scenario == "crash":
        rep = detect_failure(net, ids, suspect, interval=interval, missed=missed, crash_at=0.5)
        if rep is None:
            return FailoverReport(scenario, False)
        honest = set(ids + others) - {suspect}
        validators = [v for v in ids + others if v != suspect]
        validated = _probe(net, validators, suspect, timeout=interval)
        report = FailoverReport(scenario, True, rep.reporter, rep.suspect, rep.detected_at - 0.5,
                                honest <= rep.reached, validated)
        if validated:
            remaining = []
            for p in pools:
                members = [c for c in p.members if c.miner.id != suspect]
                remaining.append(NodePool(p.pool_id, [], members))
            new = sorted((vrf_select(p, slot + 1) for p in remaining), key=lambda e: e.value)
            report.reelected = suspect not in [e.miner.id for e in new]
            report.new_cascade = [e.miner.id for e in new]
        report.within_budget = report.detection_time is not None and net.now - 0.5 <= budget + interval
        return report
    if scenario == "false_accusation":
        accuser = ids[(crashed + 1) % n]
        reached = net.gossip(accuser, f"down:{suspect}".encode(), kind="failure-report")
        validators = [v for v in reached if v not in (suspect, accuser)]
        confirmed = _probe(net, validators, suspect, timeout=interval)
        return FailoverReport(scenario, True, accuser, suspect, None, set(ids + others) <= reached,
                              confirmed, accuser_flagged=not confirmed, within_budget=True)
    raise ValueError(f"unknown scenario {scenario!r}")


def _last_node_crash(n: int, seed: int) -> FailoverReport:
    """Last node dies after committing to the mixed batch but before any
    share is opened: the round aborts and nothing published reveals a message."""
    rng = random.Random(f"lastcrash:{seed}")
    batch_size = 4
    cascade = MixCascade.create(SECP256K1, n, rng)
    users = [MixUser.create(SECP256K1, rng) for _ in range(batch_size)]
    cascade.setup([u.pk for u in users])
    msgs = [encode_message(f"msg{i}".encode()) for i in range(batch_size)]
    tr = cascade.start_round(1, batch_size, rng)
    nodes = cascade.nodes
    b = precompute_preprocess(nodes, cascade.system_key, 1, tr)
    b = precompute_mix(nodes, cascade.system_key, b, tr)
    precompute_postprocess(nodes, b, tr)
    blinded = MixBatch(1, Stage.REALTIME_INPUT, [blind_message(m, k) for m, k in zip(msgs, cascade.slot_keys)])
    v = realtime_preprocess(nodes, blinded, tr)
    realtime_mix(nodes, v, tr)
    # crash: no postprocess, no share openings
    published: set[bytes] = set()
    for batch in tr.hops.values():
        for item in batch.payload:
            if hasattr(item, "ephemeral"):
                published.update((item.ephemeral.to_bytes(), item.masked.to_bytes()))
            else:
                published.add(item.to_bytes())
    published.update(p.to_bytes() for p in blinded.payload)
    published.update(p.to_bytes() for p in tr.ephemerals + tr.masked)
    leaked = sum(m.to_bytes() in published for m in msgs)
    return FailoverReport("last_node_crash", True, suspect=nodes[-1].index, round_aborted=tr.output is None,
                          leaked_messages=leaked, within_budget=True)


def mean_or_nan(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else math.nan
