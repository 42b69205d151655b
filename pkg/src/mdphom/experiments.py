"""Experiment pipelines: abstraction, threshold grid search, blocks-world
re-abstraction runs, and options-vs-baseline transfer.

Every pipeline is a pure function of its config and seeds, so reruns
produce byte-identical outputs.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

import mdphom
from mdphom import kernels
from mdphom.agent import AgentConfig, q_learning_run, random_experience
from mdphom.classifiers import classifier_from_json, make_classifier
from mdphom.core import (ExperienceBuffer, InconsistentPartition, Partition, QuotientMDP, Transition,
                         build_quotient)
from mdphom.envs import BlocksWorld, Environment, enumerate_model, make_env
from mdphom.partitioning import PartitionConfig, PartitionResult, ProjectionError, online_partition_iteration
from mdphom.planner import PlannerConfig, QuotientPolicy, QValueTable, value_iteration
from mdphom.stats import mean_std, welch_t_test
from mdphom.transfer import make_options, smdp_agent_run


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict] = {
    "abstract": {
        "env": {"name": "pucks", "size": 3, "n_pucks": 2, "task": "stack"},
        "collector": {"policy": "random", "episodes": 2000},
        "classifier": "exact",
        "partition": asdict(PartitionConfig(max_blocks=10)),
        "planner": asdict(PlannerConfig()),
        "eval_episodes": 100,
        "seed": 0,
    },
    "gridsearch": {
        "base": None,  # filled below
        "block_size_thresholds": [0, 1, 2, 4],
        "confidence_thresholds": [0.0, 0.5, 0.9],
        "seeds": 20,
    },
    "blocksworld": {
        "runs": 100,
        "budget": 15000,
        "segment": 3000,
        "max_steps": 50,
        "features": "afterstate",
        "explore_epsilon": 0.1,
        "classifier": "tree",
        "partition": asdict(PartitionConfig(max_blocks=100)),
        "planner": asdict(PlannerConfig()),
        "goal": None,
        "start": None,
        "seed": 0,
    },
    "transfer": {
        "source": {
            "env": {"name": "pucks", "size": 4, "n_pucks": 2, "task": "stack"},
            "collector": {"policy": "random", "episodes": 1500},
            "classifier": "knn1",
            "partition": asdict(PartitionConfig(max_blocks=10)),
            "seed": 0,
            "artifacts": None,
        },
        "target": {"name": "pucks", "size": 4, "n_pucks": 3, "task": "stack"},
        "agent": asdict(AgentConfig(episodes=3000, epsilon_anneal_steps=20000)),
        "planner": asdict(PlannerConfig()),
        "alpha_mc": 0.1,
        "option_discount": None,
        "option_max_duration": 20,
        "seeds": 10,
    },
}
DEFAULTS["gridsearch"]["base"] = copy.deepcopy(DEFAULTS["abstract"])
DEFAULTS["evaluate"] = DEFAULTS["abstract"]


def merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    """Recursively overlay ``overrides``; unknown keys are config errors."""
    out = copy.deepcopy(defaults)
    for k, v in overrides.items():
        if k not in out:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k not in ("env", "target"):
            out[k] = merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(kind: str, text: str | None) -> dict:
    try:
        doc = json.loads(text) if text else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return validate(kind, merge(DEFAULTS[kind], doc))


def _check_abstract_like(cfg: dict, with_collector: bool = True) -> None:
    make_env(cfg["env"])
    PartitionConfig(**cfg["partition"])
    make_classifier(cfg["classifier"], lambda s, a: s)
    if with_collector and cfg["collector"].get("policy", "random") not in ("random", "qlearning", "enumerate"):
        raise ConfigError(f"unknown collector policy {cfg['collector'].get('policy')!r}")


def validate(kind: str, cfg: dict) -> dict:
    """Instantiate every typed piece of ``cfg`` so bad values fail before any
    work starts; all failures surface as ConfigError."""
    try:
        if kind in ("abstract", "evaluate"):
            _check_abstract_like(cfg)
            PlannerConfig(**cfg["planner"])
        elif kind == "gridsearch":
            _check_abstract_like(cfg["base"])
            PlannerConfig(**cfg["base"]["planner"])
            seed_list(cfg["seeds"])
            for ta in cfg["block_size_thresholds"]:
                for tc in cfg["confidence_thresholds"]:
                    PartitionConfig(**{**cfg["base"]["partition"],
                                       "block_size_threshold": ta, "confidence_threshold": tc})
        elif kind == "blocksworld":
            PartitionConfig(**cfg["partition"])
            PlannerConfig(**cfg["planner"])
            make_classifier(cfg["classifier"], lambda s, a: s)
            BlocksWorld(*(cfg["goal"] or (0, 0, 0)), features=cfg["features"])
            if int(cfg["segment"]) < 1 or int(cfg["budget"]) < int(cfg["segment"]) or int(cfg["runs"]) < 1:
                raise ConfigError("need runs >= 1 and budget >= segment >= 1")
            if not 0 <= float(cfg["explore_epsilon"]) <= 1:
                raise ConfigError("explore_epsilon must lie in [0, 1]")
        elif kind == "transfer":
            src = cfg["source"]
            make_env(src["env"])
            PartitionConfig(**src["partition"])
            make_classifier(src["classifier"], lambda s, a: s)
            make_env(cfg["target"])
            AgentConfig(**cfg["agent"])
            PlannerConfig(**cfg["planner"])
            seed_list(cfg["seeds"])
            if not 0 < float(cfg["alpha_mc"]) <= 1:
                raise ConfigError("alpha_mc must lie in (0, 1]")
            if cfg["option_discount"] is not None and not 0 < float(cfg["option_discount"]) <= 1:
                raise ConfigError("option_discount must be null or lie in (0, 1]")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} config: {exc}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def metadata(cfg: dict, seeds: list[int]) -> dict:
    return {
        "config_sha256": config_hash(cfg),
        "seeds": seeds,
        "versions": {
            "mdphom": mdphom.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "kernels": kernels.BACKEND,
        },
    }


def seed_list(spec) -> list[int]:
    return list(range(spec)) if isinstance(spec, int) else [int(s) for s in spec]


def fan_out(fn: Callable, items: list, threads: int = 1) -> list:
    """Map ``fn`` over ``items``; results come back in item order."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def write_csv(rows: list[dict], columns: list[str]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return out.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.10g}"
    if isinstance(v, (list, tuple, set)):
        return ";".join(str(x) for x in sorted(v))
    return v


# --------------------------------------------------------------------------
# abstraction


def collect(env: Environment, spec: dict, seed: int) -> ExperienceBuffer:
    policy = spec.get("policy", "random")
    if policy == "random":
        return random_experience(env, int(spec["episodes"]), seed)
    if policy == "qlearning":
        agent = AgentConfig(**{k: v for k, v in spec.items() if k != "policy"})
        return q_learning_run(env, agent, seed).buffer
    if policy == "enumerate":
        model = enumerate_model(env)
        ts = model.to_experience()
        return ExperienceBuffer(max(1, len(ts)), ts)
    raise ConfigError(f"unknown collector policy {policy!r}")


@dataclass
class Abstraction:
    result: PartitionResult
    quotient: QuotientMDP
    qvalues: QValueTable
    policy: QuotientPolicy

    @property
    def n_blocks(self) -> int:
        return len(self.result.partition)


def abstract(env: Environment, experience, classifier: str, pcfg: PartitionConfig,
             plan: PlannerConfig) -> Abstraction:
    """Online Partition Iteration, quotient construction, and value iteration."""
    g = make_classifier(classifier, env.encode)
    result = online_partition_iteration(experience, g, pcfg, env.admissible)
    try:
        q = build_quotient(result.partition, experience, result.projection)
    except InconsistentPartition as exc:
        exc.result = result
        raise
    qv = value_iteration(q, plan)
    policy = QuotientPolicy(result.classifier, q, qv, pcfg.confidence_threshold)
    return Abstraction(result, q, qv, policy)


def evaluate_policy(env: Environment, policy: QuotientPolicy, episodes: int, seed: int) -> list[float]:
    """Per-episode reward of acting greedily through the quotient."""
    rng = np.random.default_rng([seed, 0xE7A1])
    returns = []
    for _ in range(episodes):
        s = env.reset(rng)
        total = 0.0
        for _ in range(env.max_steps):
            a, _ = policy.act(s, env.admissible(s), rng)
            out = env.step(s, a)
            total += out.reward
            s = out.next_state
            if out.terminal:
                break
        returns.append(total)
    return returns


@dataclass
class AbstractOutcome:
    seed: int
    mean_reward: float
    abstraction: Abstraction | None = None
    error: str | None = None
    returns: list[float] = field(default_factory=list)

    def row(self) -> dict:
        a = self.abstraction
        return {
            "seed": self.seed,
            "mean_reward": self.mean_reward,
            "blocks": a.n_blocks if a else None,
            "state_blocks": len(a.quotient) if a else None,
            "flags": sorted(a.result.flags) if a else [],
            "fallbacks": a.policy.fallbacks if a else None,
            "error": self.error or "",
        }


def run_abstract(cfg: dict, seed: int | None = None, experience=None, strict: bool = False) -> AbstractOutcome:
    """Collect, partition, build the quotient, solve it, evaluate it.

    With ``strict`` the partitioning errors propagate; otherwise they are
    reported in the outcome with a NaN mean reward.
    """
    seed = cfg["seed"] if seed is None else seed
    env = make_env(cfg["env"])
    pcfg = PartitionConfig(**cfg["partition"])
    plan = PlannerConfig(**cfg["planner"])
    if experience is None:
        experience = collect(env, cfg["collector"], seed)
    try:
        ab = abstract(env, experience, cfg["classifier"], pcfg, plan)
    except (InconsistentPartition, ProjectionError) as exc:
        if strict:
            raise
        return AbstractOutcome(seed, float("nan"), error=f"{type(exc).__name__}: {exc}")
    returns = evaluate_policy(env, ab.policy, int(cfg["eval_episodes"]), seed)
    return AbstractOutcome(seed, float(np.mean(returns)), ab, returns=returns)


# --------------------------------------------------------------------------
# grid search over thresholds


def run_gridsearch(cfg: dict, threads: int = 1) -> tuple[list[dict], list[dict]]:
    """(per-run rows, per-cell summary rows) over T_a x T_c x seeds."""
    base = cfg["base"]
    seeds = seed_list(cfg["seeds"])
    cells = [(ta, tc) for ta in cfg["block_size_thresholds"] for tc in cfg["confidence_thresholds"]]

    def one_seed(seed):
        experience = collect(make_env(base["env"]), base["collector"], seed).snapshot()
        rows = []
        for ta, tc in cells:
            c = copy.deepcopy(base)
            c["partition"]["block_size_threshold"] = ta
            c["partition"]["confidence_threshold"] = tc
            out = run_abstract(c, seed, experience)
            rows.append({"block_size_threshold": ta, "confidence_threshold": tc, **out.row()})
        return rows

    per_seed = fan_out(one_seed, seeds, threads)
    rows = [r for (ta, tc) in cells for seed_rows in per_seed for r in seed_rows
            if (r["block_size_threshold"], r["confidence_threshold"]) == (ta, tc)]
    summary = []
    for ta, tc in cells:
        vals = [r["mean_reward"] for r in rows
                if (r["block_size_threshold"], r["confidence_threshold"]) == (ta, tc)]
        m, s = mean_std(vals)
        summary.append({"block_size_threshold": ta, "confidence_threshold": tc,
                        "mean": m, "std": s, "runs": len(vals)})
    return rows, summary


GRID_COLUMNS = ["block_size_threshold", "confidence_threshold", "seed", "mean_reward",
                "blocks", "state_blocks", "flags", "fallbacks", "error"]
GRID_SUMMARY_COLUMNS = ["block_size_threshold", "confidence_threshold", "mean", "std", "runs"]


# --------------------------------------------------------------------------
# blocks world with periodic re-abstraction


@dataclass
class BlocksRun:
    run: int
    goal: tuple[int, int, int]
    segment_means: list[float]
    blocks: list[int]
    flags: list[str]
    trivial: bool = False

    @property
    def monotone(self) -> bool:
        m = self.segment_means
        return all(b >= a for a, b in zip(m, m[1:]))


def blocks_goal(run: int, seed: int) -> tuple[int, int, int]:
    rng = np.random.default_rng([seed, run, 0x60A1])
    return int(rng.integers(3)), int(rng.integers(4)), int(rng.integers(3))


def run_blocks_once(cfg: dict, run: int) -> BlocksRun:
    """One goal, ``budget`` steps, re-abstracting every ``segment`` steps.

    Segments without a quotient act uniformly at random; later ones act
    through the latest quotient with ``explore_epsilon`` random actions.
    Start states and tie-breaks replay the same streams in every segment,
    and so do exploration draws once a quotient policy exists, so those
    segments differ only through the policy in force. Random-policy
    segments draw fresh exploration streams so that a failed abstraction
    still gains coverage.
    """
    seed = int(cfg["seed"])
    goal = tuple(cfg["goal"]) if cfg.get("goal") else blocks_goal(run, seed)
    start = cfg.get("start")
    start = tuple(tuple(c) for c in start) if start else None
    env = BlocksWorld(*goal, max_steps=int(cfg["max_steps"]), start=start, features=cfg["features"])
    n_segments = int(cfg["budget"]) // int(cfg["segment"])
    if start is not None and env.is_goal(start):
        return BlocksRun(run, goal, [0.0] * n_segments, [0] * n_segments, ["trivial_goal"], True)

    pcfg = PartitionConfig(**cfg["partition"])
    plan = PlannerConfig(**cfg["planner"])
    eps = float(cfg["explore_epsilon"])
    buffer = ExperienceBuffer(int(cfg["budget"]))
    policy: QuotientPolicy | None = None
    means, blocks, flags = [], [], []
    n_blocks = 0
    for seg in range(n_segments):
        starts = np.random.default_rng([seed, run, 0])
        ties = np.random.default_rng([seed, run, 1])
        explore = np.random.default_rng([seed, run, 2, seg if policy is None else n_segments])
        total = 0.0
        s = env.reset(starts)
        ep_steps = 0
        for _ in range(int(cfg["segment"])):
            actions = env.admissible(s)
            u, k = explore.random(), int(explore.integers(len(actions)))
            if policy is None or u < eps:
                a = actions[k]
            else:
                a, _ = policy.act(s, actions, ties)
            out = env.step(s, a)
            buffer.append(Transition(s, a, out.reward, out.next_state, out.terminal))
            total += out.reward
            ep_steps += 1
            s = out.next_state
            if out.terminal or ep_steps >= env.max_steps:
                s = env.reset(starts)
                ep_steps = 0
        means.append(total / int(cfg["segment"]))
        blocks.append(n_blocks)
        if seg == n_segments - 1:
            break
        try:
            ab = abstract(env, buffer.snapshot(), cfg["classifier"], pcfg, plan)
        except (InconsistentPartition, ProjectionError) as exc:
            flags.append(f"segment{seg + 1}:{type(exc).__name__}")
            continue
        n_blocks = max(len(p) for p in ab.result.history)
        flags.extend(f"segment{seg + 1}:{f}" for f in sorted(ab.result.flags))
        # a flagged (unconverged) abstraction only replaces having none
        if policy is None or ab.result.converged:
            policy = ab.policy
    return BlocksRun(run, goal, means, blocks, flags)


def run_blocksworld(cfg: dict, threads: int = 1) -> list[BlocksRun]:
    return fan_out(lambda r: run_blocks_once(cfg, r), list(range(int(cfg["runs"]))), threads)


def blocks_rows(runs: list[BlocksRun]) -> list[dict]:
    rows = []
    for r in runs:
        for seg, (m, b) in enumerate(zip(r.segment_means, r.blocks)):
            rows.append({"run": r.run, "focus": r.goal[0], "column": r.goal[1], "height": r.goal[2],
                         "segment": seg, "mean_reward_per_step": m, "blocks": b,
                         "monotone": int(r.monotone), "flags": r.flags})
    return rows


BLOCKS_COLUMNS = ["run", "focus", "column", "height", "segment", "mean_reward_per_step",
                  "blocks", "monotone", "flags"]


# --------------------------------------------------------------------------
# transfer


@dataclass
class TransferReport:
    rows: list[dict]
    options: list[int | None]
    baseline: list[int | None]
    source_blocks: int
    source_states: int

    def summary(self) -> dict:
        def stats(xs):
            got = [x for x in xs if x is not None]
            if not got:
                return {"mean": None, "std": None, "median": None, "reached": 0}
            m, s = mean_std(got)
            return {"mean": m, "std": s, "median": float(np.median(got)), "reached": len(got)}

        out = {"options": stats(self.options), "baseline": stats(self.baseline),
               "source_blocks": self.source_blocks, "source_state_blocks": self.source_states,
               "welch": None}
        a = [x for x in self.options if x is not None]
        b = [x for x in self.baseline if x is not None]
        if len(a) >= 2 and len(b) >= 2:
            w = welch_t_test(a, b)
            out["welch"] = {"t": w.t, "dof": w.dof, "p_value": w.p_value}
        return out


def build_source(cfg: dict) -> Abstraction:
    """Source-task abstraction: loaded from ``source.artifacts`` if set,
    otherwise computed from the source config."""
    src = cfg["source"]
    env = make_env(src["env"])
    if src.get("artifacts"):
        return load_abstraction(src["artifacts"], env, src["partition"].get("confidence_threshold", 0.0))
    experience = collect(env, src["collector"], int(src["seed"])).snapshot()
    return abstract(env, experience, src["classifier"], PartitionConfig(**src["partition"]),
                    PlannerConfig(**cfg["planner"]))


def save_abstraction(ab: Abstraction, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "quotient.json").write_text(ab.quotient.dumps())
    (out / "classifier.json").write_text(json.dumps(ab.result.classifier.to_json(), sort_keys=True))
    (out / "qvalues.json").write_text(json.dumps(ab.qvalues.to_json()))
    (out / "partition.json").write_text(json.dumps(ab.result.partition.to_json(), sort_keys=True))
    (out / "trace.jsonl").write_text(ab.result.trace_lines())


def load_abstraction(path, env: Environment, confidence_threshold: float = 0.0) -> Abstraction:
    """Rebuild a policy from ``save_abstraction`` output (no partition result)."""
    d = Path(path)
    q = QuotientMDP.from_json(json.loads((d / "quotient.json").read_text()))
    g = classifier_from_json(json.loads((d / "classifier.json").read_text()), env.encode)
    qv = QValueTable.from_json(json.loads((d / "qvalues.json").read_text()))
    partition = Partition.from_json(json.loads((d / "partition.json").read_text()))
    result = PartitionResult(partition, g, None)
    return Abstraction(result, q, qv, QuotientPolicy(g, q, qv, confidence_threshold))


def run_transfer(cfg: dict, threads: int = 1) -> TransferReport:
    source = build_source(cfg)
    plan = PlannerConfig(**cfg["planner"])
    options = make_options(source.quotient, plan, int(cfg["option_max_duration"]))
    agent = AgentConfig(**cfg["agent"])
    seeds = seed_list(cfg["seeds"])

    def one(seed):
        target = make_env(cfg["target"])
        # a fresh policy per run keeps the prediction cache thread-local
        pol = QuotientPolicy(source.policy.g, source.quotient, source.qvalues,
                             source.policy.confidence_threshold)
        with_opts = smdp_agent_run(target, options, pol, agent, float(cfg["alpha_mc"]), seed,
                                   cfg["option_discount"])
        base = smdp_agent_run(target, [], None, agent, float(cfg["alpha_mc"]), seed)
        return with_opts, base

    results = fan_out(one, seeds, threads)
    rows = []
    for seed, (o, b) in zip(seeds, results):
        rows.append({"seed": seed, "condition": "options", "steps_to_criterion": o.steps_to_criterion(),
                     "option_executions": sum(o.option_counts.values())})
        rows.append({"seed": seed, "condition": "baseline", "steps_to_criterion": b.steps_to_criterion(),
                     "option_executions": 0})
    return TransferReport(rows, [o.steps_to_criterion() for o, _ in results],
                          [b.steps_to_criterion() for _, b in results],
                          source.n_blocks, len(source.quotient))
