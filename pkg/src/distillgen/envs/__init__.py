from .common import StepResult, Trajectory, rollout
from .fourrooms import (FourRoomsContext, FourRoomsEnv, GridState, fourrooms_generate,
                        fourrooms_step)
from .micro import MicroMDP, micro_mdp_step
from .reacher import (ReacherConfig, ReacherContext, ReacherEnv, ReacherState, reacher_reset,
                      reacher_reward, reacher_step)

__all__ = [
    "StepResult", "Trajectory", "rollout",
    "FourRoomsContext", "FourRoomsEnv", "GridState", "fourrooms_generate", "fourrooms_step",
    "MicroMDP", "micro_mdp_step",
    "ReacherConfig", "ReacherContext", "ReacherEnv", "ReacherState", "reacher_reset",
    "reacher_reward", "reacher_step",
]
