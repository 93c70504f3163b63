"""Command-line entry point.

    bcmix elect --seed 1 --out election.json
    bcmix mix --seed 1 --messages msgs.txt --inject-fault 2:realtime_mix
    bcmix analyze poisson --seed 1 --out lambda.csv
    bcmix attack-cmix --seed 1

Exit codes: 0 success, 2 configuration error, 3 experiment check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

from . import attacks, cmix_reference, election
from .group_crypto import SECP256K1, TINY
from .mixnet import STEP_NAMES
from .orchestrator import MALICIOUS, UNVERIFIABLE, CLEAN, Orchestrator, OrchestratorConfig

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3
EXPERIMENTS = ("poisson", "sybil", "tagging", "anonymity")


class BadConfig(Exception):
    pass


class WrongBatchSize(BadConfig):
    pass


class UnknownExperiment(BadConfig):
    pass


class CheckFailed(Exception):
    pass


@dataclass
class ScenarioConfig:
    curve: str = "production"
    n: int = 4
    batch_size: int = 4
    difficulty: float = 1e11
    vote_difficulty: float = 1e6
    window: float = 30.0
    max_ratio: float = 5.0
    prefix_bits: int = 16
    confirmations: int = 6
    seed: int = 0
    trials: int = 1000
    dataset: Optional[str] = None
    hashrate_ehs: float = 124.0
    windows: list = field(default_factory=lambda: [10, 20, 30, 60])
    difficulties: list = field(default_factory=lambda: list(attacks.DIFFICULTIES))
    attacker_powers: list = field(default_factory=lambda: list(attacks.ATTACKER_POWERS))
    adversary: dict = field(default_factory=dict)
    cmix_group: str = "toy"
    honest_only: bool = False

    def validate(self) -> None:
        if self.curve not in ("production", "test"):
            raise BadConfig("curve must be 'production' or 'test'")
        for name in ("n", "batch_size", "difficulty", "vote_difficulty", "window", "max_ratio", "prefix_bits",
                     "trials", "hashrate_ehs"):
            if not getattr(self, name) > 0:
                raise BadConfig(f"{name} must be positive")
        if self.confirmations < 0:
            raise BadConfig("confirmations must be non-negative")
        if self.vote_difficulty >= self.difficulty:
            raise BadConfig("the vote difficulty must be below the block difficulty")
        if self.prefix_bits > 32:
            raise BadConfig("prefix_bits is at most 32")
        if self.cmix_group not in ("toy", "default"):
            raise BadConfig("cmix_group must be 'toy' or 'default'")
        if any(not (0 <= p <= 1) for p in self.attacker_powers):
            raise BadConfig("attacker powers are fractions")
        if any(w <= 0 for w in self.windows) or any(d <= 0 for d in self.difficulties):
            raise BadConfig("windows and difficulties must be positive")

    @classmethod
    def load(cls, path: Optional[str]) -> "ScenarioConfig":
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise BadConfig(f"cannot read config: {exc}") from exc
        if not isinstance(raw, dict):
            raise BadConfig("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise BadConfig(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    cols = list(dict.fromkeys(k for r in rows for k in r))
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _orch_config(cfg: ScenarioConfig) -> OrchestratorConfig:
    return OrchestratorConfig(curve=SECP256K1 if cfg.curve == "production" else TINY,
                              vote_difficulty=cfg.vote_difficulty, window=cfg.window, max_ratio=cfg.max_ratio,
                              prefix_bits=cfg.prefix_bits, confirmations=cfg.confirmations)


# ---------------------------------------------------------------------------

def cmd_elect(cfg: ScenarioConfig, args) -> str:
    rows = election.load_mining_pools(cfg.dataset)
    if not rows:
        raise BadConfig("the dataset has no mining pools")
    if cfg.curve != "production":
        raise BadConfig("elections sign with the production curve")
    orch = Orchestrator(_orch_config(cfg), seed=cfg.seed)
    orch.phase_init(pools=rows)
    cascade = orch.phase_vote(1)
    doc = {
        "slot": 1,
        "max_ratio": cfg.max_ratio,
        "vote_difficulty": cfg.vote_difficulty,
        "window": cfg.window,
        "candidates": orch.candidate_log[1],
        "cascade": [e.broadcast_payload() for e in cascade],
        "mix_nodes": len(cascade),
        "verified": election.verify_cascade(cascade, cfg.prefix_bits),
    }
    if not doc["verified"]:
        raise CheckFailed("cascade proofs did not verify")
    return _dump_json(doc)


def _synthetic_miners(n: int, seed: int) -> list[election.Miner]:
    """``n`` miners in distinct IP cells with enough power to always qualify."""
    rng = random.Random(f"cli-miners:{seed}")
    return [election.Miner.create(f"miner{i}", f"{2 ** (i % 8 + 1)}.{2 ** (i // 8)}.0.1", 1e17, rng)
            for i in range(n)]


def cmd_mix(cfg: ScenarioConfig, args) -> str:
    if cfg.curve != "production":
        raise BadConfig("byte messages need the production curve")
    if cfg.n > 64:
        raise BadConfig("at most 64 mix nodes")
    if args.messages:
        with open(args.messages, "rb") as fh:
            messages = [ln.rstrip(b"\r\n") for ln in fh.read().splitlines()]
    else:
        messages = [f"message {i}".encode() for i in range(cfg.batch_size)]
    if len(messages) != cfg.batch_size:
        raise WrongBatchSize(f"expected {cfg.batch_size} messages, got {len(messages)}")
    faults = {}
    for spec in args.inject_fault or ():
        node, _, step = spec.partition(":")
        if not node.isdigit() or step not in STEP_NAMES or not 1 <= int(node) <= cfg.n:
            raise BadConfig(f"bad fault spec {spec!r}; expected NODE:STEP with STEP in {sorted(STEP_NAMES)}")
        faults[int(node)] = step
    refusing = [int(x) for x in cfg.adversary.get("refuse_audit", [])]
    orch = Orchestrator(_orch_config(cfg), seed=cfg.seed)
    orch.phase_init(n_users=cfg.batch_size, miners=_synthetic_miners(cfg.n, cfg.seed))
    orch.phase_vote(1)
    record = orch.phase_mix(1, messages, faults=faults, refusing=refusing)
    verdict = orch.phase_audit(record)
    doc = record.to_json(transcript=args.emit_transcript)
    doc["removed"] = sorted(orch.removed)
    if args.emit_transcript and args.out:
        orch.net.export_trace(args.out + ".trace.jsonl")
    expected_clean = not faults and not refusing
    if verdict.kind == UNVERIFIABLE or (expected_clean and verdict.kind != CLEAN):
        raise CheckFailed(f"unexpected audit verdict {verdict}", _dump_json(doc))
    if faults and (verdict.kind != MALICIOUS or verdict.node not in faults):
        raise CheckFailed(f"fault not attributed: {verdict}", _dump_json(doc))
    return _dump_json(doc)


def cmd_analyze(cfg: ScenarioConfig, args) -> str:
    which = args.experiment
    if which not in EXPERIMENTS:
        raise UnknownExperiment(f"unknown experiment {which!r}; choose from {', '.join(EXPERIMENTS)}")
    if which == "poisson":
        rows = []
        hashrate = cfg.hashrate_ehs * election.EXA
        for window in cfg.windows:
            rate = election.expected_lambda(hashrate, window, cfg.difficulty)
            row = {"window": window, "difficulty": f"{cfg.difficulty:.0e}", "hashrate_ehs": cfg.hashrate_ehs,
                   "expected_solutions": repr(rate)}
            for threshold in range(1, 6):
                row[f"p_ge_{threshold}"] = repr(election.poisson_tail(rate, threshold))
            rows.append(row)
        return _csv_text(rows)
    if which in ("sybil", "tagging"):
        pools = election.load_mining_pools(cfg.dataset)
        results = attacks.capture_sweep(cfg.attacker_powers, cfg.difficulties, cfg.trials, cfg.seed,
                                        cfg.window, cfg.max_ratio, args.parallel_trials, pools)
        return _csv_text([r.to_row() for r in results if r.extra["kind"] == which])
    rows = []
    for honest in (1, 0):
        res = attacks.anonymity_game(max(cfg.n, 1), max(cfg.batch_size, 2), cfg.trials,
                                     honest_nodes=honest, seed=cfg.seed)
        rows.append({"n": max(cfg.n, 1), "batch_size": max(cfg.batch_size, 2), **res.to_row()})
    return _csv_text(rows)


def cmd_attack_cmix(cfg: ScenarioConfig, args) -> str:
    group = cmix_reference.TOY_GROUP if cfg.cmix_group == "toy" else cmix_reference.DEFAULT_GROUP
    rng = random.Random(f"cmix:{cfg.seed}")
    net = cmix_reference.CmixNetwork.create(group, cfg.n, rng)
    users = [cmix_reference.CmixUser.create(group, rng) for _ in range(cfg.batch_size)]
    net.setup(users)
    payloads = [rng.getrandbits(min(group.payload_bits, 32)) for _ in range(cfg.batch_size)]
    messages = [group.encode(p) for p in payloads]
    doc = {"batch_size": cfg.batch_size, "nodes": cfg.n, "group": cfg.cmix_group, "attack_enabled": not cfg.honest_only}
    if cfg.honest_only:
        out = net.run_round(messages, rng)
        doc.update(success=False, commitments_verified=True, linked_pair=None,
                   outputs_match_inputs=sorted(out) == sorted(messages))
        return _dump_json(doc)
    target = rng.randrange(cfg.batch_size)
    res = cmix_reference.tagging_attack(net, messages, target, rng)
    doc.update(res.to_json())
    doc["linked_pair"] = [res.tagged_slot, res.linked_output]
    doc["outputs_match_inputs"] = sorted(res.outputs) == sorted(messages)
    if not (res.success and res.commitments_verified):
        raise CheckFailed("tagging attack did not link the target", _dump_json(doc))
    return _dump_json(doc)


COMMANDS = {"elect": cmd_elect, "mix": cmd_mix, "analyze": cmd_analyze, "attack-cmix": cmd_attack_cmix}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--emit-transcript", action="store_true", help="include the full audit trail")
    common.add_argument("--parallel-trials", type=int, default=1, metavar="N",
                        help="worker processes for Monte-Carlo trials")
    p = argparse.ArgumentParser(prog="bcmix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("elect", parents=[common], help="run one vote and print the elected cascade")
    mix = sub.add_parser("mix", parents=[common], help="run one full mix round with audit")
    mix.add_argument("--messages", help="file with one message per line")
    mix.add_argument("--inject-fault", action="append", metavar="NODE:STEP",
                     help="make a mix node corrupt its output at a pipeline step")
    an = sub.add_parser("analyze", parents=[common], help="run an experiment sweep and print CSV")
    an.add_argument("experiment", help=", ".join(EXPERIMENTS))
    sub.add_parser("attack-cmix", parents=[common], help="run the tagging attack on baseline cMix")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if os.environ.get("CI") and args.seed is None:
            raise BadConfig("--seed is required in CI mode")
        cfg = ScenarioConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.parallel_trials < 1:
            raise BadConfig("--parallel-trials must be at least 1")
        cfg.validate()
        text = COMMANDS[args.command](cfg, args)
    except BadConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        if len(exc.args) > 1:
            _emit(exc.args[1], args.out)
        print(f"check failed: {exc.args[0]}", file=sys.stderr)
        return EXIT_CHECK
    except election.NoCandidates as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    _emit(text, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
