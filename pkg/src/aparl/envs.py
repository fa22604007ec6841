"""Registered environment bundles used by the driver, the check suite and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .lower import LowerConfig, exact_value, solve_lower_exact
from .mdp import TabularMdp, chain, grid_index, gridworld
from .policy import SoftmaxPolicy
from .reward import (
    GoalProximity,
    LinearReward,
    QuadraticRegularizer,
    Teacher,
    UtilitySpec,
    goal_scores,
)


@dataclass(frozen=True, eq=False)
class EnvBundle:
    name: str
    mdp: TabularMdp
    policy_features: np.ndarray  # (S, A, d)
    reward_features: np.ndarray  # (S, A, n)
    nu0: np.ndarray
    theta_reg: float = 0.05
    utility: UtilitySpec | None = None
    teacher: Teacher | None = None
    description: str = ""
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def policy(self, theta=None) -> SoftmaxPolicy:
        d = self.policy_features.shape[2]
        return SoftmaxPolicy(np.zeros(d) if theta is None else theta, self.policy_features)

    def reward(self, nu=None) -> LinearReward:
        return LinearReward(self.nu0 if nu is None else nu, self.reward_features)

    def lower_config(self, **overrides) -> LowerConfig:
        return LowerConfig(theta_reg=self.theta_reg, **overrides)

    def oracle_policy(self) -> SoftmaxPolicy:
        """Lower-level optimum under the teacher's ground-truth reward."""
        if self.teacher is None:
            raise ValueError(f"{self.name} has no ground-truth reward")
        if "oracle" not in self._cache:
            # 1e-6 stationarity is far below what moves a return judged to a few percent
            cfg = self.lower_config(max_oracle_iters=50000, grad_tol=1e-6)
            self._cache["oracle"] = solve_lower_exact(self.mdp, self.teacher.true_reward, self.policy(), cfg, strict=True).policy
        return self._cache["oracle"]

    def oracle_return(self) -> float:
        return exact_value(self.mdp, self.teacher.true_reward, self.oracle_policy())

    def alignment_return(self, policy: SoftmaxPolicy) -> float:
        if self.teacher is None:
            return float("nan")
        return exact_value(self.mdp, self.teacher.true_reward, policy)


def tabular_features(num_states: int, num_actions: int) -> np.ndarray:
    d = num_states * num_actions
    return np.eye(d).reshape(num_states, num_actions, d)


def state_indicator_features(num_states: int, num_actions: int, cells: list[int]) -> np.ndarray:
    """psi_i(s, a) = 1 when s is the i-th listed state."""
    psi = np.zeros((num_states, num_actions, len(cells)))
    for i, s in enumerate(cells):
        psi[s, :, i] = 1.0
    return psi


def make_chain() -> EnvBundle:
    """5-state chain from the middle; the right end pays more than the left."""
    mdp = chain(5, discount=0.9, horizon_lower=4)
    psi = state_indicator_features(5, 2, [0, 4])
    return EnvBundle(
        "chain",
        mdp,
        tabular_features(5, 2),
        psi,
        nu0=np.array([0.5, 1.0]),
        theta_reg=0.05,
        utility=UtilitySpec(GoalProximity(np.linspace(0.0, 1.0, 5), 0.9), QuadraticRegularizer(0.1, np.zeros(2))),
        description="5-state chain, start in the middle, rewards at both ends",
    )


def make_gridworld_goal() -> EnvBundle:
    """3x3 maze: the designer wants the agent near the far corner but pays for reward.

    The reward has a goal-cell weight and a decoy-cell weight; the utility
    scores proximity to (2, 2) and penalises large reward parameters.
    """
    n = 3
    mdp = gridworld(n, discount=0.9, horizon_lower=5)
    goal, decoy = grid_index(n, 2, 2), grid_index(n, 0, 2)
    psi = state_indicator_features(n * n, 4, [goal, decoy])
    return EnvBundle(
        "gridworld-goal",
        mdp,
        tabular_features(n * n, 4),
        psi,
        nu0=np.array([1.0, 0.8]),
        theta_reg=0.05,
        utility=UtilitySpec(GoalProximity(goal_scores(n, (2, 2)), 0.9), QuadraticRegularizer(0.1, np.zeros(2))),
        description="3x3 maze, H=5, reward weights on goal (2,2) and decoy (0,2) cells",
    )


def make_rlhf_2state() -> EnvBundle:
    P = np.array([[[0.8, 0.2], [0.3, 0.7]], [[0.6, 0.4], [0.1, 0.9]]])
    mdp = TabularMdp(P, np.array([0.7, 0.3]), 0.9, 3, 3)
    psi = np.zeros((2, 2, 2))
    psi[0, 0, 0] = 1.0
    psi[1, 1, 1] = 1.0
    psi[0, 1, 1] = 0.5
    psi[1, 0, 0] = -0.5
    teacher = Teacher(LinearReward(np.array([0.2, 1.0]), psi), beta=2.0, discount=0.9)
    return EnvBundle(
        "rlhf-2state",
        mdp,
        tabular_features(2, 2),
        psi,
        nu0=np.array([0.5, 0.3]),
        theta_reg=0.1,
        teacher=teacher,
        description="2-state stochastic MDP, H=3, BT teacher with beta=2",
    )


def make_rlhf_gridworld() -> EnvBundle:
    """3x3 maze, H=6, one reward weight per cell; the teacher prizes the far
    corner (1.0) over a near decoy cell (0.3), while the initial reward guess
    favours the decoy."""
    n = 3
    S = n * n
    mdp = gridworld(n, discount=0.9, horizon_lower=6)
    goal, decoy = grid_index(n, 2, 2), grid_index(n, 0, 2)
    psi = state_indicator_features(S, 4, list(range(S)))
    true_nu = np.zeros(S)
    true_nu[goal], true_nu[decoy] = 1.0, 0.3
    nu0 = np.zeros(S)
    nu0[decoy] = 0.5
    return EnvBundle(
        "rlhf-gridworld",
        mdp,
        tabular_features(S, 4),
        psi,
        nu0=nu0,
        theta_reg=0.05,
        teacher=Teacher(LinearReward(true_nu, psi), beta=5.0, discount=0.9),
        description="3x3 maze, H=6, per-cell reward, BT teacher (beta=5) preferring (2,2) over decoy (0,2)",
    )


REGISTRY: dict[str, Callable[[], EnvBundle]] = {
    "chain": make_chain,
    "gridworld-goal": make_gridworld_goal,
    "rlhf-2state": make_rlhf_2state,
    "rlhf-gridworld": make_rlhf_gridworld,
}


def get_env(name: str, **overrides) -> EnvBundle:
    try:
        env = REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; known: {', '.join(sorted(REGISTRY))}") from None
    return replace(env, **overrides) if overrides else env
