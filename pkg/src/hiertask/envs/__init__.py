"""Simulated worlds the learner practices in."""

from hiertask.envs.base import GroundTruth, World
from hiertask.envs.arm import ArmPenWorld
from hiertask.envs.pusher import MobilePusherWorld

_REGISTRY = {
    ArmPenWorld.env_id: ArmPenWorld,
    MobilePusherWorld.env_id: MobilePusherWorld,
}


def env_ids():
    return sorted(_REGISTRY)


def make_env(env_id: str) -> World:
    try:
        cls = _REGISTRY[env_id]
    except KeyError:
        raise KeyError(f"unknown environment {env_id!r}, known: {env_ids()}") from None
    return cls()


__all__ = ["ArmPenWorld", "GroundTruth", "MobilePusherWorld", "World", "env_ids", "make_env"]
