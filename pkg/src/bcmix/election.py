"""Mix-node election: PoW candidacy, IP-prefix pooling, VRF draw per pool.

Also home to the Poisson model of how many miners solve a puzzle inside one
acceptance window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .group_crypto import (
    SECP256K1,
    Curve,
    Point,
    inner_hash,
    outer_hash,
    random_scalar,
    vrf_eval,
    vrf_hash,
    vrf_verify,
)
from .ledger import MAX_DIFFICULTY_TARGET, encode_fields

EXA = 10**18


class ElectionError(Exception):
    pass


class UnsatisfiableBalance(ElectionError):
    def __init__(self, partition, msg: str) -> None:
        self.partition = partition
        super().__init__(msg)


class DuplicateY(ElectionError):
    pass


class NoCandidates(ElectionError):
    pass


# ---------------------------------------------------------------------------
# Poisson analytics

def min_hashrate(difficulty: float, window: float) -> float:
    """Hash rate that finds one block at ``difficulty`` per ``window`` seconds on average."""
    return difficulty * 2**32 / window


def expected_lambda(hashrate: float, window: float, difficulty: float) -> float:
    if hashrate <= 0 or window <= 0 or difficulty <= 0:
        raise ValueError("hashrate, window and difficulty must be positive")
    return hashrate / min_hashrate(difficulty, window)


def _log_pmf(rate: float, count: int) -> float:
    return count * math.log(rate) - rate - math.lgamma(count + 1)


def poisson_tail(rate: float, threshold: int) -> float:
    """P(X >= threshold) for X ~ Poisson(rate), summed in log space."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if threshold <= 0:
        return 1.0
    if threshold <= rate:
        head = math.fsum(math.exp(_log_pmf(rate, k)) for k in range(threshold))
        return max(0.0, 1.0 - head)
    terms = []
    k = threshold
    while True:
        t = math.exp(_log_pmf(rate, k))
        terms.append(t)
        if t < 1e-18 * max(terms[0], 1e-300) or t == 0.0:
            break
        k += 1
    return min(1.0, math.fsum(terms))


def _binomial_cdf(attempts: int, p: float, tol: float = 1e-16) -> np.ndarray:
    """CDF of Binomial(attempts, p) out to where the terms drop below ``tol``.

    Built from P(X=0) = exp(attempts * log1p(-p)) and the ratio of successive
    terms, so it stays exact when p is far below float epsilon.
    """
    if attempts * p > 600:
        raise ValueError("expected count too large for the exact sampler")
    term = math.exp(attempts * math.log1p(-p))
    odds = p / (1 - p)
    cdf, total, k = [], 0.0, 0
    while True:
        total += term
        cdf.append(total)
        if k >= attempts or (k > attempts * p and term < tol):
            break
        term *= (attempts - k) / (k + 1) * odds
        k += 1
    return np.array(cdf)


def simulate_solution_counts(hashrates: Sequence[float], window: float, difficulty: float,
                             windows: int, rng: np.random.Generator) -> np.ndarray:
    """Number of puzzle solutions in each of ``windows`` acceptance windows.

    Each miner makes hashrate*window independent attempts with success
    probability 1/(difficulty * 2**32). Counts are drawn by inverting the
    exact binomial CDF: numpy's own sampler rounds 1 - p to 1 at these
    probabilities and returns zero every time.
    """
    p = 1.0 / (difficulty * 2**32)
    total = np.zeros(windows, dtype=np.int64)
    for h in hashrates:
        attempts = int(round(h * window))
        if attempts <= 0:
            continue
        cdf = _binomial_cdf(attempts, p)
        u = rng.random(windows)
        total += np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    return total


# ---------------------------------------------------------------------------
# miners and PoW voting

def parse_ip(ip: str) -> tuple[int, int, int, int]:
    parts = ip.strip().split(".")
    if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
        raise ValueError(f"bad IPv4 address {ip!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def ip_prefix(ip: str, bits: int = 16) -> bytes:
    """Network prefix bytes of ``ip``; bits beyond the prefix are zeroed."""
    raw = int.from_bytes(bytes(parse_ip(ip)), "big")
    mask = ((1 << bits) - 1) << (32 - bits) if bits else 0
    return (raw & mask).to_bytes(4, "big")[: (bits + 7) // 8]


def octet_cell(v: int) -> int:
    """Index i with 2**i <= v < 2**(i+1); 0 and 1 both map to 0."""
    return max(v.bit_length() - 1, 0)


def ip_cell(ip: str) -> tuple[int, int]:
    a1, a2 = parse_ip(ip)[:2]
    return octet_cell(a1), octet_cell(a2)


@dataclass
class Miner:
    id: str
    ip: str
    hashrate: float  # hashes per second
    sk: int = field(repr=False, default=0)
    pk: Optional[Point] = field(repr=False, default=None)
    vrf_secret: int = field(repr=False, default=0)
    vrf_public: Optional[Point] = field(repr=False, default=None)
    pool: str = ""

    @classmethod
    def create(cls, id: str, ip: str, hashrate: float, rng, curve: Curve = SECP256K1, pool: str = "") -> "Miner":
        if hashrate <= 0:
            raise ValueError("hashrate must be positive")
        parse_ip(ip)
        sk = random_scalar(curve, rng)
        vs = random_scalar(curve, rng)
        return cls(id, ip, hashrate, sk, sk * curve.generator, vs, vs * curve.generator, pool)

    @property
    def address(self) -> bytes:
        return outer_hash(self.pk.to_bytes())[:20]


def load_mining_pools(path=None) -> list[dict]:
    """Rows of the mining-pool CSV with parsed IP lists and hashrates."""
    if path is None:
        fh = resources.files("bcmix").joinpath("data/mining_pools.csv").open("r", encoding="utf-8")
    else:
        fh = open(path, encoding="utf-8")
    with fh:
        rows = []
        for row in csv.DictReader(fh):
            ips = [s.strip() for s in row["ip"].split(";") if s.strip()]
            rows.append({"name": row["name"], "ips": ips, "hashrate_ehs": float(row["hashrate_ehs"]),
                         "share": float(row["share"])})
    return rows


def miners_from_pools(rows: Sequence[dict], rng, curve: Curve = SECP256K1) -> list[Miner]:
    """One identity per listed IP; a pool's hashrate is split evenly across them."""
    miners = []
    for row in rows:
        per_ip = row["hashrate_ehs"] * EXA / len(row["ips"])
        for j, ip in enumerate(row["ips"]):
            miners.append(Miner.create(f"{row['name']}#{j}", ip, per_ip, rng, curve, pool=row["name"]))
    return miners


@dataclass(frozen=True)
class Witness:
    nonce: int
    digest: bytes


def vote_digest(state: bytes, data: bytes, nonce: int) -> bytes:
    return outer_hash(encode_fields(nonce.to_bytes(8, "little"), inner_hash(encode_fields(state, data))))


def pow_vote(miner_key: bytes, state: bytes, data: bytes, target: int, attempt_budget: int,
             start: int = 0) -> tuple[Optional[Witness], int]:
    """Search for a candidacy witness. Returns (witness or None, solutions found).

    ``miner_key`` (the miner's address) is mixed into the puzzle data so
    witnesses are not transferable between miners.
    """
    content = inner_hash(encode_fields(state, data, miner_key))
    first = None
    found = 0
    for i in range(attempt_budget):
        nonce = start + i
        h = outer_hash(encode_fields(nonce.to_bytes(8, "little"), content))
        if int.from_bytes(h, "big") < target:
            found += 1
            if first is None:
                first = Witness(nonce, h)
    return first, found


def verify_witness(miner_key: bytes, state: bytes, data: bytes, target: int, w: Witness) -> bool:
    content = inner_hash(encode_fields(state, data, miner_key))
    h = outer_hash(encode_fields(w.nonce.to_bytes(8, "little"), content))
    return h == w.digest and int.from_bytes(h, "big") < target


@dataclass
class Candidate:
    miner: Miner
    witness: Optional[Witness]
    solutions: int


def run_vote_window(miners: Sequence[Miner], state: bytes, data: bytes, vote_difficulty: float,
                    window: float, rng, max_attempts: int = 200_000) -> list[Candidate]:
    """Scaled real-hash PoW vote over one acceptance window.

    Real hash rates are far beyond what can be hashed here, so attempts and
    the success probability are scaled by the same factor: each miner gets a
    budget proportional to its hashrate and a target raised so its expected
    number of solutions is unchanged (capped at one success per attempt).
    At most one candidate entry is kept per IP address.
    """
    total = sum(m.hashrate for m in miners) * window
    scale = min(1.0, max_attempts / total)
    p_real = 1.0 / (vote_difficulty * 2**32)
    p_sim = min(1.0, p_real / scale)
    target = min(int(p_sim * 2**256), 2**256)
    by_ip: dict[str, Candidate] = {}
    for m in miners:
        budget = max(1, int(round(m.hashrate * window * scale)))
        w, found = pow_vote(m.address, state, data, target, budget, start=rng.getrandbits(32))
        if w is None:
            continue
        cur = by_ip.get(m.ip)
        if cur is None or found > cur.solutions:
            by_ip[m.ip] = Candidate(m, w, found)
    return [by_ip[ip] for ip in sorted(by_ip, key=lambda s: parse_ip(s))]


def vote_target(vote_difficulty: float, window: float, miners: Sequence[Miner], max_attempts: int = 200_000) -> int:
    total = sum(m.hashrate for m in miners) * window
    scale = min(1.0, max_attempts / total)
    p_sim = min(1.0, 1.0 / (vote_difficulty * 2**32) / scale)
    return min(int(p_sim * 2**256), 2**256)


# ---------------------------------------------------------------------------
# IP sharding

def _segments_from_cuts(n: int, cuts: Sequence[int]) -> list[tuple[int, int]]:
    bounds = [0, *cuts, n]
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def _ratio(sums: Sequence[float]) -> float:
    lo = min(sums)
    return math.inf if lo <= 0 else max(sums) / lo


def balanced_segmentation(weights: Sequence[float], max_ratio: float) -> tuple[list[tuple[int, int]], float]:
    """Split an ordered weight list into the most contiguous segments whose
    largest/smallest total is at most ``max_ratio``.

    Among partitions with the most segments the one with the smallest ratio
    wins, then the earliest cut positions. A single segment always satisfies
    the bound.
    """
    n = len(weights)
    if n == 0:
        return [], 1.0
    pref = [0.0]
    for w in weights:
        pref.append(pref[-1] + w)
    eps = 1e-12

    def seg(i, j):
        return pref[j] - pref[i]

    lows = sorted({seg(i, j) for i in range(n) for j in range(i + 1, n + 1)})
    best_k, best_ratio, best_cuts = 1, 1.0, []
    for low in lows:
        if low <= 0:
            continue
        high = max_ratio * low * (1 + eps)
        # most[j]: max segments covering weights[:j] with totals in [low, high]
        most = [-1] * (n + 1)
        most[0] = 0
        for j in range(1, n + 1):
            for i in range(j):
                if most[i] >= 0 and low * (1 - eps) <= seg(i, j) <= high:
                    most[j] = max(most[j], most[i] + 1)
        k = most[n]
        if k < best_k:
            continue
        # smallest achievable maximum with exactly k segments, all >= low
        INF = math.inf
        cost = [[INF] * (k + 1) for _ in range(n + 1)]
        back = [[-1] * (k + 1) for _ in range(n + 1)]
        cost[0][0] = 0.0
        for j in range(1, n + 1):
            for c in range(1, k + 1):
                for i in range(j):
                    s = seg(i, j)
                    if cost[i][c - 1] < INF and low * (1 - eps) <= s <= high:
                        v = max(cost[i][c - 1], s)
                        if v < cost[j][c] - eps:
                            cost[j][c], back[j][c] = v, i
        if cost[n][k] == INF:
            continue
        cuts = []
        j, c = n, k
        while c > 0:
            i = back[j][c]
            if i > 0:
                cuts.append(i)
            j, c = i, c - 1
        cuts.reverse()
        ratio = _ratio([seg(a, b) for a, b in _segments_from_cuts(n, cuts)])
        if k > best_k or ratio < best_ratio - eps or (abs(ratio - best_ratio) <= eps and cuts < best_cuts):
            best_k, best_ratio, best_cuts = k, ratio, cuts
    return _segments_from_cuts(n, best_cuts), best_ratio


def exhaustive_segmentation(weights: Sequence[float], max_ratio: float) -> tuple[int, float]:
    """Brute force over all cut sets: (max segment count, best ratio at that count)."""
    n = len(weights)
    best = (1, 1.0)
    for k in range(2, n + 1):
        for cuts in combinations(range(1, n), k - 1):
            sums = [sum(weights[a:b]) for a, b in _segments_from_cuts(n, cuts)]
            r = _ratio(sums)
            if r <= max_ratio * (1 + 1e-12):
                if k > best[0] or (k == best[0] and r < best[1]):
                    best = (k, r)
    return best


class IPSharding(ClusterMixin, BaseEstimator):
    """Group IPv4 addresses into pools by power-of-two cells of their first
    two octets.

    Occupied cells are ordered row-major (first octet, then second) and cut
    into contiguous runs so the heaviest pool weighs at most ``max_ratio`` times
    the lightest, maximising the number of pools. Weights default to one per
    address; pass ``sample_weight`` to weight by hash power or witness count.

    Parameters
    ----------
    max_ratio : float
        Largest allowed ratio between pool weights.
    min_pools : int or None
        If set, fewer pools than this raises :class:`UnsatisfiableBalance`.
    """

    def __init__(self, max_ratio: float = 5.0, min_pools: Optional[int] = None):
        self.max_ratio = max_ratio
        self.min_pools = min_pools

    def fit(self, X, y=None, sample_weight=None):
        if self.max_ratio < 1:
            raise ValueError("max_ratio must be at least 1")
        ips = list(X)
        if not ips:
            raise ValueError("need at least one address")
        weights = np.ones(len(ips)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        cell_weight: dict[tuple[int, int], float] = {}
        for ip, w in zip(ips, weights):
            c = ip_cell(ip)
            cell_weight[c] = cell_weight.get(c, 0.0) + float(w)
        self.cells_ = sorted(cell_weight)
        self.cell_weights_ = np.array([cell_weight[c] for c in self.cells_])
        segments, ratio = balanced_segmentation(list(self.cell_weights_), self.max_ratio)
        self.cell_pool_ = {}
        for pid, (a, b) in enumerate(segments):
            for c in self.cells_[a:b]:
                self.cell_pool_[c] = pid
        self.n_pools_ = len(segments)
        self.pool_weights_ = np.array([self.cell_weights_[a:b].sum() for a, b in segments])
        self.balance_ = ratio
        self.labels_ = np.array([self.cell_pool_[ip_cell(ip)] for ip in ips])
        if self.min_pools is not None and self.n_pools_ < self.min_pools:
            raise UnsatisfiableBalance(self.labels_, f"only {self.n_pools_} pools satisfy max_ratio={self.max_ratio}")
        return self

    def predict(self, X):
        out = []
        for ip in X:
            c = ip_cell(ip)
            if c in self.cell_pool_:
                out.append(self.cell_pool_[c])
                continue
            # unseen cell: join the pool of the nearest earlier occupied cell
            earlier = [k for k in self.cells_ if k <= c]
            out.append(self.cell_pool_[earlier[-1] if earlier else self.cells_[0]])
        return np.array(out)


@dataclass
class NodePool:
    pool_id: int
    cells: list[tuple[int, int]]
    members: list[Candidate]

    @property
    def weight(self) -> int:
        return sum(c.solutions for c in self.members)


def ip_sharding(candidates: Sequence[Candidate], max_ratio: float, min_pools: Optional[int] = None) -> list[NodePool]:
    """Pool candidates with their witness counts as weights."""
    if not candidates:
        raise NoCandidates("no candidates to shard")
    est = IPSharding(max_ratio=max_ratio, min_pools=min_pools)
    est.fit([c.miner.ip for c in candidates], sample_weight=[max(c.solutions, 1) for c in candidates])
    pools = [NodePool(p, [c for c in est.cells_ if est.cell_pool_[c] == p], []) for p in range(est.n_pools_)]
    for cand, lab in zip(candidates, est.labels_):
        pools[int(lab)].members.append(cand)
    return pools


# ---------------------------------------------------------------------------
# VRF selection and cascade ordering

def vrf_input(ip: str, slot: int, prefix_bits: int = 16) -> bytes:
    return ip_prefix(ip, prefix_bits) + slot.to_bytes(8, "big")


@dataclass
class Elected:
    miner: Miner
    value: bytes
    proof: bytes
    slot: int
    pool_id: int
    witness: Optional[Witness] = None

    def broadcast_payload(self) -> dict:
        return {
            "id": self.miner.id,
            "address": self.miner.address.hex(),
            "pk": self.miner.pk.hex(),
            "vrf_pk": self.miner.vrf_public.hex(),
            "y": self.value.hex(),
            "proof": self.proof.hex(),
            "ip": self.miner.ip,
            "pool": self.pool_id,
        }


def vrf_select(pool: NodePool, slot: int, prefix_bits: int = 16) -> Elected:
    if not pool.members:
        raise NoCandidates(f"pool {pool.pool_id} is empty")
    best = None
    for cand in pool.members:
        m = cand.miner
        out = vrf_eval(m.vrf_secret, vrf_input(m.ip, slot, prefix_bits), m.vrf_public.curve)
        key = (out.value, m.id)
        if best is None or key < best[0]:
            best = (key, Elected(m, out.value, out.proof, slot, pool.pool_id, cand.witness))
    return best[1]


def form_cascade(winners: Iterable[Elected]) -> list[Elected]:
    ordered = sorted(winners, key=lambda e: (e.value, e.miner.id))
    for a, b in zip(ordered, ordered[1:]):
        if a.value == b.value:
            raise DuplicateY(f"{a.miner.id} and {b.miner.id} drew the same output")
    return ordered


def verify_cascade(cascade: Sequence[Elected], prefix_bits: int = 16) -> bool:
    """What any user runs on a gossiped cascade."""
    values = [e.value for e in cascade]
    if values != sorted(values):
        return False
    for e in cascade:
        if not vrf_verify(e.miner.vrf_public, vrf_input(e.miner.ip, e.slot, prefix_bits), e.value, e.proof):
            return False
    return True


def vrf_value_for(miner: Miner, slot: int, prefix_bits: int = 16) -> bytes:
    return vrf_hash(miner.vrf_secret, vrf_input(miner.ip, slot, prefix_bits), miner.vrf_public.curve)


def difficulty_target(difficulty: float) -> int:
    return int(MAX_DIFFICULTY_TARGET / difficulty)
