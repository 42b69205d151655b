from mdphom.envs.base import Environment, StepOutcome, TooLarge, enumerate_model
from mdphom.envs.blocks import BlocksWorld
from mdphom.envs.pucks import PucksWorld, goal_predicate
from mdphom.envs.random_mdp import ModelEnv, chain_model, random_model

__all__ = [
    "BlocksWorld",
    "Environment",
    "ModelEnv",
    "PucksWorld",
    "StepOutcome",
    "TooLarge",
    "chain_model",
    "enumerate_model",
    "goal_predicate",
    "random_model",
]


def make_env(spec: dict) -> Environment:
    """Build an environment from a config mapping with a ``name`` field."""
    spec = dict(spec)
    name = spec.pop("name")
    if name == "pucks":
        return PucksWorld(**spec)
    if name == "blocks":
        if spec.get("start") is not None:
            spec["start"] = tuple(tuple(c) for c in spec["start"])
        return BlocksWorld(**spec)
    raise ValueError(f"unknown environment {name!r}")
