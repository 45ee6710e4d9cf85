"""Tabular Q-learning bidder: Q-table, exploration schedules, updates."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .auction import BidGrid, CounterfactualValue
from .exceptions import ConfigurationError, DomainError, InvariantViolation

EXPLORATION_FLOOR = 0.01


class Exploration(enum.Enum):
    EPSILON_GREEDY = "egreedy"
    BOLTZMANN = "boltzmann"


@dataclass(frozen=True)
class AgentParams:
    """Learning hyper-parameters of one bidder.

    ``egreedy`` selects the exploration rule and ``decay`` its per-episode
    multiplicative decay.
    """

    alpha: float = 0.1
    gamma: float = 0.95
    asynchronous: bool = True
    feedback: bool = True
    egreedy: bool = False
    decay: float = 0.9999

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")

    @property
    def q_upper_bound(self) -> float:
        return max(1.0, 1.0 / (1.0 - self.gamma))


@dataclass(frozen=True)
class ExplorationSchedule:
    kind: Exploration
    param: float = 1.0
    decay: float = 0.9999
    floor: float = EXPLORATION_FLOOR
    initial: float = 1.0

    @property
    def at_floor(self) -> bool:
        return self.param <= self.floor


@dataclass
class QTable:
    """State x action value matrix, mutated in place by the update functions."""

    values: np.ndarray

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]

    def greedy_action(self, state: int) -> int:
        # np.argmax returns the lowest index among ties
        return int(np.argmax(self.values[state]))

    def to_csv(self, path) -> None:
        """Write ``state,action,value`` rows for post-mortem inspection."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "action", "value"])
            for s in range(self.num_states):
                for a in range(self.num_actions):
                    w.writerow([s, a, repr(float(self.values[s, a]))])


def num_states_for(grid_size: int, feedback: bool) -> int:
    return grid_size if feedback else 1


def init_agent(params: AgentParams, grid_size: int, rng: np.random.Generator):
    """Fresh Q-table with i.i.d. UNIF(0,1) entries and a schedule at 1.

    Entries are drawn state-major: row 0 first, then row 1, and so on.
    """
    if grid_size < 2:
        raise ConfigurationError(f"grid_size must be >= 2, got {grid_size}")
    n_states = num_states_for(grid_size, params.feedback)
    q = QTable(rng.random((n_states, grid_size)))
    kind = Exploration.EPSILON_GREEDY if params.egreedy else Exploration.BOLTZMANN
    return q, ExplorationSchedule(kind=kind, param=1.0, decay=params.decay)


def boltzmann_probabilities(row, beta: float) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    z = np.exp((row - row.max()) / beta)
    return z / z.sum()


def select_bid(q: QTable, state: int, sched: ExplorationSchedule, rng: np.random.Generator) -> int:
    """Pick an action index for ``state``.

    Epsilon-greedy consumes one draw for the explore coin and a second one
    only when exploring. Boltzmann consumes exactly one draw, inverted
    through the cumulative softmax weights.
    """
    if not 0 <= state < q.num_states:
        raise DomainError(f"state {state} out of range for {q.num_states} states")
    row = q.values[state]
    if not np.all(np.isfinite(row)):
        raise InvariantViolation(f"non-finite Q values in state {state}: {row}")
    n = row.size

    if sched.kind is Exploration.EPSILON_GREEDY:
        if rng.random() < sched.param:
            return min(int(rng.random() * n), n - 1)
        return int(np.argmax(row))

    weights = np.exp((row - row.max()) / sched.param)
    cdf = np.cumsum(weights)
    target = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, target, side="right")), n - 1)


def _td_value(q_sa, reward, next_max, alpha, gamma):
    return (1.0 - alpha) * q_sa + alpha * (reward + gamma * next_max)


def update_async(q: QTable, s: int, a: int, r: float, s_next: int, params: AgentParams) -> QTable:
    """One-cell Q-learning update at ``(s, a)``."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"reward must lie in [0, 1], got {r}")
    v = q.values
    v[s, a] = _td_value(v[s, a], r, v[s_next].max(), params.alpha, params.gamma)
    return q


def update_sync(
    q: QTable,
    s: int,
    cfs: list[CounterfactualValue],
    params: AgentParams,
    grid: BidGrid,
) -> QTable:
    """Update every action of row ``s`` from counterfactual rewards.

    The continuation state of action ``b`` is the counterfactual winning
    bid (singleton state without feedback). All targets are computed from
    the pre-update table.
    """
    v = q.values
    if len(cfs) != v.shape[1]:
        raise DomainError(f"expected {v.shape[1]} counterfactual values, got {len(cfs)}")
    targets = np.empty(len(cfs))
    for a, cf in enumerate(cfs):
        r = cf.expected_reward
        if not 0.0 <= r <= 1.0:
            raise DomainError(f"reward must lie in [0, 1], got {r}")
        s_next = grid.index_of(cf.counterfactual_winning_bid) if params.feedback else 0
        targets[a] = _td_value(v[s, a], r, v[s_next].max(), params.alpha, params.gamma)
    v[s, :] = targets
    return q


def decay_exploration(sched: ExplorationSchedule) -> ExplorationSchedule:
    return replace(sched, param=max(sched.floor, sched.param * sched.decay))


def floor_hitting_episode(decay: float, floor: float = EXPLORATION_FLOOR, initial: float = 1.0) -> int:
    """Smallest ``t`` with ``initial * decay**t <= floor``."""
    if decay >= 1.0:
        raise ConfigurationError("decay must be < 1 for the floor to be reached")
    return max(0, math.ceil(math.log(floor / initial) / math.log(decay)))
