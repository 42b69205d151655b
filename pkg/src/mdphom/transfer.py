"""Options built from a source-task quotient, and an agent that uses them.

One option per quotient state: its policy plans in the source quotient
toward that state (reward 1 on entry, 0 elsewhere) and it terminates once
the current ground state localizes to the target. Option values are
learned with a constant-step Monte Carlo update on the undiscounted return
observed from the option's start to the end of the episode.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from mdphom.agent import AgentConfig, AgentRun, EpisodeRecord, TabularLearner
from mdphom.core import ContractViolation, ExperienceBuffer, QuotientMDP, Transition
from mdphom.envs.base import Environment
from mdphom.planner import PlannerConfig, QuotientPolicy, QValueTable, choose_ground, value_iteration


@dataclass
class OptionSpec:
    target: int
    qv: QValueTable
    max_duration: int = 20

    def name(self) -> str:
        return f"reach-{self.target}"


def make_options(q: QuotientMDP, cfg: PlannerConfig = PlannerConfig(),
                 max_duration: int = 20) -> list[OptionSpec]:
    """One option per quotient state, each with its own target-reaching table."""
    options = []
    for target in range(len(q)):
        reward = {cell: 1.0 if j == target else 0.0 for cell, j in q.transition.items()}
        qv = value_iteration(q, cfg, reward=reward, absorbing={target} | set(q.terminal))
        options.append(OptionSpec(target, qv, max_duration))
    return options


def run_option(env: Environment, s, opt: OptionSpec, policy: QuotientPolicy,
               rng: np.random.Generator, budget: int | None = None) -> tuple[list[Transition], bool]:
    """Execute ``opt`` from ``s``.

    Stops when the state localizes to the target (terminated=True), when the
    environment terminates, after ``max_duration`` or ``budget`` steps, or
    when localization fails (an abort).
    """
    limit = opt.max_duration if budget is None else min(opt.max_duration, budget)
    traj: list[Transition] = []
    while True:
        actions = env.admissible(s)
        i = policy.locate(s, actions)
        if i == opt.target:
            return traj, True
        if i is None or len(traj) >= limit:
            return traj, False
        block = opt.qv.best(policy.q, i)
        a = None if block is None else choose_ground(policy.predictions(s, actions), block, rng,
                                                      policy.confidence_threshold)
        if a is None:
            return traj, False
        out = env.step(s, a)
        traj.append(Transition(s, a, out.reward, out.next_state, out.terminal))
        s = out.next_state
        if out.terminal:
            return traj, False


@dataclass
class OptionsRun(AgentRun):
    option_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    option_counts: Counter = field(default_factory=Counter)
    decisions_at_start: int = 0


def smdp_agent_run(env: Environment, options: list[OptionSpec], policy: QuotientPolicy | None,
                   cfg: AgentConfig, alpha_mc: float, seed: int,
                   discount: float | None = None) -> OptionsRun:
    """Epsilon-greedy over primitive actions plus options (at start states).

    Primitive values follow Q-learning on every primitive step taken,
    including steps taken inside options. With no options this is exactly
    ``q_learning_run`` under the same seed.

    Option returns are discounted by ``discount`` per primitive step from
    the launch (default ``cfg.gamma``), which keeps them on the scale of the
    primitive Q-values; ``discount=1`` gives the plain episode return.
    """
    if not 0 < alpha_mc <= 1:
        raise ContractViolation("alpha_mc must lie in (0, 1]")
    gamma = cfg.gamma if discount is None else float(discount)
    if not 0 < gamma <= 1:
        raise ContractViolation("discount must lie in (0, 1]")
    if options and policy is None:
        raise ContractViolation("options need a quotient policy")
    rng = np.random.default_rng(seed)
    learner = TabularLearner(env, cfg, rng)
    buffer = ExperienceBuffer(cfg.buffer_capacity)
    option_q = np.zeros(len(options))
    counts: Counter = Counter()
    records = []
    start_decisions = 0

    def primitive(t: Transition):
        buffer.append(t)
        learner.update(t, env.admissible(t.next_state))
        learner.t += 1

    for ep in range(cfg.episodes):
        if cfg.max_total_steps is not None and learner.t >= cfg.max_total_steps:
            break
        s = env.reset(rng)
        rewards: list[float] = []
        launched: list[tuple[int, int]] = []
        success = False
        options_blocked = False
        while len(rewards) < env.max_steps:
            if cfg.max_total_steps is not None and learner.t >= cfg.max_total_steps:
                break
            actions = env.admissible(s)
            scores = learner.row(s)[list(actions)]
            with_options = bool(options) and not options_blocked and env.is_start(s)
            if with_options:
                scores = np.concatenate([scores, option_q])
                start_decisions += 1
            k = learner.pick(scores)
            if k < len(actions):
                out = env.step(s, actions[k])
                t = Transition(s, actions[k], out.reward, out.next_state, out.terminal)
                primitive(t)
                steps = [t]
                options_blocked = False
            else:
                o = k - len(actions)
                counts[o] += 1
                launched.append((o, len(rewards)))
                steps, _ = run_option(env, s, options[o], policy, rng,
                                      budget=env.max_steps - len(rewards))
                for t in steps:
                    primitive(t)
                # an option that does not move must not be re-chosen in place
                options_blocked = not steps
            for t in steps:
                rewards.append(t.reward)
                s = t.next_state
            if steps and steps[-1].terminal:
                success = True
                break
        if launched:
            tail = np.zeros(len(rewards) + 1)
            for i in range(len(rewards) - 1, -1, -1):
                tail[i] = rewards[i] + gamma * tail[i + 1]
            for o, start in launched:
                option_q[o] += alpha_mc * (tail[start] - option_q[o])
        records.append(EpisodeRecord(ep, len(rewards), float(sum(rewards)), success, learner.t))
    return OptionsRun(learner.q, buffer, records, option_q, counts, start_decisions)


def transfer_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["seed", "condition", "steps_to_criterion", "option_executions"])
    for r in rows:
        stc = "" if r["steps_to_criterion"] is None else r["steps_to_criterion"]
        w.writerow([r["seed"], r["condition"], stc, r.get("option_executions", 0)])
    return out.getvalue()
