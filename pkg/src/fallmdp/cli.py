"""Command-line harness: ``fallmdp dp|train|eval|rollout``.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures (missing or malformed files, numerical failures).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig, load_config
from .dp import DpPlan, read_tuples, solve_rollouts, write_plans, write_tuples
from .errors import ConfigInvalid, FallMdpError
from .model import PendulumState
from .net import load_params, save_params
from .parallel import pmap
from .policy import SUMMARY_COLUMNS, EpisodeRecord, Policy, episode_summary_row, run_episode
from .trainer import TRAIN_LOG_COLUMNS, sample_initial_state, train

log = logging.getLogger("fallmdp")

DP_BATCH = 16

COMPARISON_COLUMNS = (
    "case", "c1", "r1", "theta1", "r1dot", "theta1dot",
    "policy_reward", "dp_reward", "policy_max_impulse", "dp_max_impulse",
    "policy_contacts", "dp_contacts", "winner",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
        f.write("\n")


@dataclass
class Context:
    config: ExperimentConfig
    out: Path
    threads: int = 1

    def path(self, name: str) -> Path:
        return self.out / getattr(self.config.paths, name)

    def results_dir(self) -> Path:
        d = self.path("results")
        d.mkdir(parents=True, exist_ok=True)
        return d


# -- dp ----------------------------------------------------------------------

def collect_plans(cfg: ExperimentConfig, threads: int = 1) -> list:
    """DP rollouts from the start distribution until the tuple quota is met.

    States are drawn in fixed-size batches so the accepted plans do not
    depend on ``threads``.
    """
    quota = cfg.training.dp_seed_tuples
    rng = np.random.default_rng(cfg.seeds()["dp"])
    plans: list = []
    count = tried = 0
    while count < quota:
        if tried >= max(1000, 100 * quota):
            raise FallMdpError("start distribution yields no DP tuples")
        states = [sample_initial_state(cfg.training, cfg.model, rng) for _ in range(DP_BATCH)]
        tried += DP_BATCH
        for plan in solve_rollouts(cfg.model, cfg.discretization, states, threads):
            if count >= quota:
                break
            plans.append(plan)
            count += len(plan.actions)
    return plans


def cmd_dp(ctx: Context) -> int:
    plans = collect_plans(ctx.config, ctx.threads)
    tuples = [t for p in plans for t in p.tuples()]
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_tuples(ctx.path("tuples"), tuples)
    write_plans(ctx.path("plans"), plans)
    mean = float(np.mean([p.value for p in plans])) if plans else float("nan")
    print(f"tuples: {len(tuples)}  rollouts: {len(plans)}  mean plan value: {mean:.6f}")
    return 0


# -- train -------------------------------------------------------------------

def cmd_train(ctx: Context) -> int:
    cfg = ctx.config
    tuples = read_tuples(ctx.path("tuples"))
    params, rows = train(cfg.train_config(), cfg.model, tuples, norm=cfg.normalization, topology=cfg.topology)
    save_params(ctx.path("weights"), params, cfg.normalization)
    write_csv(ctx.results_dir() / "train_log.csv", TRAIN_LOG_COLUMNS,
              ([getattr(r, c) for c in TRAIN_LOG_COLUMNS] for r in rows))
    if rows:
        print(f"iterations: {len(rows)}  final held-out reward: {rows[-1].mean_heldout_reward:.6f}")
    else:
        print("iterations: 0  weights initialized")
    return 0


# -- eval / rollout ----------------------------------------------------------

def eval_cases(cfg: ExperimentConfig, n: Optional[int] = None) -> list:
    dist = cfg.eval_distribution()
    rng = np.random.default_rng(cfg.seeds()["eval"])
    n = cfg.eval.n_cases if n is None else n
    return [sample_initial_state(dist, cfg.model, rng) for _ in range(n)]


def load_policy(ctx: Context) -> Policy:
    cfg = ctx.config
    params, norm = load_params(ctx.path("weights"), cfg.topology)
    return Policy(params, norm or cfg.normalization, cfg.model)


def _episode_job(args):
    policy, s0, depth = args
    return run_episode(policy, s0, depth)


def winner(policy_reward: float, dp_reward: float) -> str:
    if policy_reward > dp_reward:
        return "policy"
    if policy_reward < dp_reward:
        return "dp"
    return "tie"


def comparison_row(case_id: int, rec: EpisodeRecord, plan: Optional[DpPlan]) -> list:
    s = rec.initial_state
    row = [case_id, s.c1, s.r1, s.theta1, s.r1dot, s.theta1dot, rec.episode_reward]
    if plan is None:
        return row + [None, rec.max_impulse, None, " ".join(map(str, rec.contact_sequence)), None, None]
    return row + [plan.value, rec.max_impulse, plan.max_impulse,
                  " ".join(map(str, rec.contact_sequence)), " ".join(map(str, plan.contacts)),
                  winner(rec.episode_reward, plan.value)]


def histogram(values, bins: int) -> tuple:
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
    return edges, counts


def cmd_eval(ctx: Context) -> int:
    cfg = ctx.config
    policy = load_policy(ctx)
    cases = eval_cases(cfg)
    depth = cfg.training.episode_depth
    records = pmap(_episode_job, [(policy, s, depth) for s in cases], ctx.threads)
    plans = solve_rollouts(cfg.model, cfg.discretization, cases, ctx.threads) if cfg.eval.compare_dp else None
    res = ctx.results_dir()

    rows = [comparison_row(k, rec, plans[k] if plans else None) for k, rec in enumerate(records)]
    write_csv(res / "comparison.csv", COMPARISON_COLUMNS, rows)
    write_csv(res / "episodes.csv", SUMMARY_COLUMNS, (episode_summary_row(k, r) for k, r in enumerate(records)))

    edges, pc = histogram([r.episode_reward for r in records], cfg.eval.hist_bins)
    dc = histogram([p.value for p in plans], cfg.eval.hist_bins)[1] if plans else [None] * len(pc)
    write_csv(res / "histogram.csv", ("bin_lo", "bin_hi", "policy", "dp"),
              ((edges[b], edges[b + 1], int(pc[b]), None if dc[b] is None else int(dc[b])) for b in range(len(pc))))

    prof_dir = res / "profiles"
    prof_dir.mkdir(exist_ok=True)
    for k in cfg.eval.profile_cases:
        if not 0 <= k < len(records):
            continue
        prof = [("policy", i, st.contact, st.impulse) for i, st in enumerate(records[k].steps)]
        if plans:
            prof += [("dp", i, a.c2, j) for i, (a, j) in enumerate(zip(plans[k].actions, plans[k].impulses))]
        write_csv(prof_dir / f"case_{k}.csv", ("method", "impact", "contact", "impulse"), prof)

    if records:
        mean_p = np.mean([r.episode_reward for r in records])
        ms = [q for r in records for q in r.query_ms]
        msg = f"cases: {len(records)}  policy mean reward: {mean_p:.6f}"
        if plans:
            wins = sum(r[-1] == "policy" for r in rows)
            msg += f"  dp mean reward: {np.mean([p.value for p in plans]):.6f}  policy wins: {wins}/{len(rows)}"
        if ms:
            msg += f"  median query: {np.median(ms):.3f} ms"
        print(msg)
    else:
        print("cases: 0")
    return 0


def _parse_state(text: str) -> PendulumState:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigInvalid(f"bad --state: {exc}") from exc
    if len(parts) != 5 or parts[0] != int(parts[0]):
        raise ConfigInvalid("--state needs c1,r1,theta1,r1dot,theta1dot")
    return PendulumState(int(parts[0]), *parts[1:])


def cmd_rollout(ctx: Context, case: Optional[int], state: Optional[str]) -> int:
    cfg = ctx.config
    if (case is None) == (state is None):
        raise UsageError("rollout needs exactly one of --case or --state")
    if state is not None:
        s0, name = _parse_state(state), "rollout.json"
    else:
        if case < 0:
            raise UsageError("--case must be non-negative")
        s0, name = eval_cases(cfg, case + 1)[case], f"rollout_case{case}.json"
    try:
        s0.validate(cfg.model)
    except FallMdpError as exc:
        raise ConfigInvalid(f"invalid initial state: {exc}") from exc
    policy = load_policy(ctx)
    rec = run_episode(policy, s0, cfg.training.episode_depth)
    path = ctx.results_dir() / name
    _write_json(path, rec.to_dict(timing=False))
    print(f"episode reward: {rec.episode_reward:.6f}  contacts: {rec.contact_sequence}  -> {path}")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fallmdp", description="Minimum-impulse fall planning on the abstract pendulum model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("dp", "generate DP plans and seed tuples"), ("train", "train the policy network"),
                        ("eval", "evaluate the policy against DP"), ("rollout", "run one policy episode")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="experiment JSON file")
        sp.add_argument("--seed", type=int, help="override the config rng_seed")
        sp.add_argument("--threads", type=int, default=1, help="worker processes (1 = deterministic serial mode)")
        sp.add_argument("--out", default=".", help="directory that config paths are relative to")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "rollout":
            sp.add_argument("--case", type=int, help="evaluation case id to replay")
            sp.add_argument("--state", help="initial state as c1,r1,theta1,r1dot,theta1dot")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.rng_seed = args.seed
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        ctx = Context(cfg, Path(args.out), args.threads)
        if args.command == "dp":
            return cmd_dp(ctx)
        if args.command == "train":
            return cmd_train(ctx)
        if args.command == "eval":
            return cmd_eval(ctx)
        return cmd_rollout(ctx, args.case, args.state)
    except (UsageError, ConfigInvalid) as exc:
        print(f"fallmdp: error: {exc}", file=sys.stderr)
        return 1
    except (FallMdpError, OSError, ValueError) as exc:
        print(f"fallmdp: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
