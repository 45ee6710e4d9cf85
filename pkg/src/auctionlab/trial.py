"""One trial: up to ``max_episodes`` sequential auctions among Q-learners.

Random draw order inside a trial is fixed:

1. Q-tables, bidder by bidder, each state-major (``rng.random((S, A))``).
2. Per episode: each bidder's selection draws in bidder order, then one
   tie-break draw if two or more bidders share the top bid.

All draws come from a single ``numpy.random.Generator`` (PCG64) seeded with
the trial seed. The compiled path reads the same stream in blocks, so it
reproduces the pure-Python path exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .agent import (
    EXPLORATION_FLOOR,
    AgentParams,
    ExplorationSchedule,
    QTable,
    decay_exploration,
    init_agent,
    select_bid,
    update_async,
    update_sync,
)
from .auction import PaymentRule, counterfactual_action_values, make_bid_grid, settle_auction
from .exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_MAX_EPISODES = 250_000
CONVERGENCE_WINDOW = 1_000
OUTCOME_WINDOW = 1_000
_BLOCK = 1 << 16
CONVERGENCE_RULES = {
    "winning_bid": _kernels.STOP_WINNING_BID,
    "policy": _kernels.STOP_POLICY,
}


@dataclass(frozen=True)
class TrialConfig:
    """All initial conditions of one trial plus its seed and episode cap."""

    n_bidders: int = 2
    alpha: float = 0.1
    gamma: float = 0.95
    egreedy: bool = False
    design: int = 1
    asynchronous: bool = True
    feedback: bool = True
    num_actions: int = 6
    decay: float = 0.9999
    max_episodes: int = DEFAULT_MAX_EPISODES
    seed: int = 0
    window: int = CONVERGENCE_WINDOW
    convergence: str = "winning_bid"

    def __post_init__(self):
        if int(self.n_bidders) != self.n_bidders or self.n_bidders < 2:
            raise ConfigurationError(f"need at least two bidders, got {self.n_bidders}")
        if int(self.num_actions) != self.num_actions or self.num_actions < 2:
            raise ConfigurationError(f"num_actions must be an integer >= 2, got {self.num_actions}")
        if self.max_episodes < 1:
            raise ConfigurationError(f"max_episodes must be >= 1, got {self.max_episodes}")
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.convergence not in CONVERGENCE_RULES:
            raise ConfigurationError(
                f"convergence must be one of {sorted(CONVERGENCE_RULES)}, got {self.convergence!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a non-negative 64-bit integer")
        PaymentRule.from_design(self.design)
        self.agent_params()  # validates alpha, gamma, decay

    @property
    def rule(self) -> PaymentRule:
        return PaymentRule.from_design(self.design)

    def agent_params(self) -> AgentParams:
        return AgentParams(
            alpha=float(self.alpha),
            gamma=float(self.gamma),
            asynchronous=bool(self.asynchronous),
            feedback=bool(self.feedback),
            egreedy=bool(self.egreedy),
            decay=float(self.decay),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrialOutcomes:
    bid2val: float
    vol: float
    episodes: int
    converged: bool


@dataclass
class EpisodeLog:
    """Per-episode winning bid and price, plus bids when recorded."""

    winning_bid: np.ndarray
    price: np.ndarray
    bids: np.ndarray | None = None

    def __len__(self):
        return len(self.winning_bid)

    def thinned_indices(self, every: int = 100, tail: int = OUTCOME_WINDOW) -> np.ndarray:
        """Every ``every``-th episode plus the trailing ``tail`` episodes."""
        n = len(self)
        if every < 1:
            raise ConfigurationError("thinning step must be >= 1")
        idx = np.union1d(np.arange(0, n, every), np.arange(max(0, n - tail), n))
        return idx.astype(np.int64)

    def to_csv(self, path, every: int = 1, tail: int = OUTCOME_WINDOW) -> None:
        idx = np.arange(len(self)) if every == 1 else self.thinned_indices(every, tail)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["episode", "winning_bid", "price"]
            if self.bids is not None:
                header += [f"bid_{i}" for i in range(self.bids.shape[1])]
            w.writerow(header)
            for t in idx:
                row = [int(t), repr(float(self.winning_bid[t])), repr(float(self.price[t]))]
                if self.bids is not None:
                    row += [repr(float(b)) for b in self.bids[t]]
                w.writerow(row)


@dataclass
class TrialResult:
    config: TrialConfig
    outcomes: TrialOutcomes
    log: EpisodeLog
    q_tables: list = field(default_factory=list)


class ConvergenceMonitor:
    """Stability test run once per episode, after the updates.

    Nothing counts until the exploration parameter has reached its floor.
    From a snapshot taken at the floor, the trial converges once the
    watched quantity stays unchanged for ``window`` consecutive episodes.
    With ``rule="winning_bid"`` that quantity is the realized winning bid;
    with ``rule="policy"`` it is every bidder's greedy action in every state.
    """

    def __init__(self, window: int = CONVERGENCE_WINDOW, floor: float = EXPLORATION_FLOOR,
                 rule: str = "winning_bid"):
        if rule not in CONVERGENCE_RULES:
            raise ConfigurationError(f"unknown convergence rule {rule!r}")
        self.window = window
        self.floor = floor
        self.rule = rule
        self.stable = 0
        self._prev = None
        self._prev_at_floor = False

    def update(self, param: float, greedy=None, winning_bid=None) -> bool:
        """Record one episode played with exploration ``param``."""
        current = np.asarray(greedy if self.rule == "policy" else winning_bid)
        changed = self._prev is None or not np.array_equal(current, self._prev)
        if changed or not self._prev_at_floor:
            self.stable = 0
        else:
            self.stable += 1
        self._prev = current.copy()
        self._prev_at_floor = param <= self.floor
        return self.stable >= self.window


def check_convergence(monitor: ConvergenceMonitor, sched: ExplorationSchedule,
                      greedy=None, winning_bid=None) -> bool:
    return monitor.update(sched.param, greedy=greedy, winning_bid=winning_bid)


def compute_outcomes(winning_bids, converged_at: int, converged: bool = False,
                     window: int = OUTCOME_WINDOW) -> TrialOutcomes:
    """bid2val over the last ``window`` winning bids, vol over the whole run.

    ``vol`` is the sample standard deviation (ddof=1); a single-episode run
    has vol 0.
    """
    wb = np.asarray(winning_bids, dtype=float)
    if wb.size == 0:
        raise DomainError("winning-bid series is empty")
    bid2val = float(wb[-window:].mean())
    vol = float(wb.std(ddof=1)) if wb.size > 1 else 0.0
    return TrialOutcomes(bid2val=bid2val, vol=vol, episodes=int(converged_at), converged=bool(converged))


def _init_tables(config: TrialConfig, rng: np.random.Generator):
    params = config.agent_params()
    agents = [init_agent(params, config.num_actions, rng) for _ in range(config.n_bidders)]
    return params, [q for q, _ in agents], agents[0][1]


def run_trial(config: TrialConfig, record_bids: bool = False) -> TrialResult:
    """Run one trial with the compiled episode loop."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params, tables, sched = _init_tables(config, rng)
    grid = make_bid_grid(config.num_actions).as_array()

    q = np.stack([t.values for t in tables])
    greedy = np.argmax(q, axis=2).astype(np.int64)
    T = config.max_episodes
    win_idx = np.zeros(T, dtype=np.int64)
    price_idx = np.zeros(T, dtype=np.int64)
    bids_idx = np.zeros((T if record_bids else 0, config.n_bidders), dtype=np.int64)

    u = np.empty(0)
    pos = 0
    t, state, param, prev_floor, stable = 0, 0, sched.param, False, 0
    converged = False
    last_top = -1
    while t < T:
        u = np.concatenate([u[pos:], rng.random(_BLOCK)])
        pos = 0
        t, pos, state, param, prev_floor, stable, converged, last_top = _kernels.run_episodes(
            q, greedy, u, pos, t, T, state, param, prev_floor, stable,
            grid, config.rule is PaymentRule.FIRST_PRICE, bool(config.asynchronous),
            bool(config.feedback), bool(config.egreedy),
            float(config.alpha), float(config.gamma), float(config.decay),
            sched.floor, int(config.window),
            win_idx, price_idx, bids_idx, record_bids,
            CONVERGENCE_RULES[config.convergence], last_top,
        )
        if converged:
            break

    if converged:
        n_run, episodes = t + 1, t
    else:
        n_run, episodes = T, T - 1
    log = EpisodeLog(
        winning_bid=grid[win_idx[:n_run]],
        price=grid[price_idx[:n_run]],
        bids=grid[bids_idx[:n_run]] if record_bids else None,
    )
    outcomes = compute_outcomes(log.winning_bid, episodes, converged)
    logger.debug("trial seed=%d done: %s", config.seed, outcomes)
    return TrialResult(config, outcomes, log, [QTable(q[i].copy()) for i in range(q.shape[0])])


def run_trial_reference(config: TrialConfig, record_bids: bool = False) -> TrialResult:
    """Same trial through the public per-step functions; slow, for checking."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params, tables, sched = _init_tables(config, rng)
    grid_obj = make_bid_grid(config.num_actions)
    grid = grid_obj.as_array()
    rule = config.rule
    monitor = ConvergenceMonitor(config.window, sched.floor, config.convergence)
    if config.convergence == "policy":
        monitor._prev = np.array([[np.argmax(r) for r in t.values] for t in tables])

    wins, prices, all_bids = [], [], []
    state = 0
    converged = False
    t = 0
    for t in range(config.max_episodes):
        actions = [select_bid(tab, state, sched, rng) for tab in tables]
        bids = grid[actions]
        outcome = settle_auction(rule, bids, rng)
        next_state = grid_obj.index_of(outcome.winning_bid) if config.feedback else 0
        for i, tab in enumerate(tables):
            if config.asynchronous:
                update_async(tab, state, actions[i], outcome.rewards[i], next_state, params)
            else:
                rivals = np.delete(bids, i)
                cfs = counterfactual_action_values(rule, grid_obj, rivals)
                update_sync(tab, state, cfs, params, grid_obj)
        wins.append(outcome.winning_bid)
        prices.append(outcome.price)
        if record_bids:
            all_bids.append(bids)
        greedy = np.array([[np.argmax(r) for r in tab.values] for tab in tables])
        done = check_convergence(monitor, sched, greedy=greedy, winning_bid=outcome.winning_bid)
        sched = decay_exploration(sched)
        state = next_state
        if done:
            converged = True
            break

    episodes = t if converged else config.max_episodes - 1
    log = EpisodeLog(np.array(wins), np.array(prices), np.array(all_bids) if record_bids else None)
    return TrialResult(config, compute_outcomes(log.winning_bid, episodes, converged), log, tables)


def moving_average(series, window: int = OUTCOME_WINDOW) -> np.ndarray:
    """Trailing mean over full windows; element ``j`` ends at index ``j + window - 1``."""
    x = np.asarray(series, dtype=float)
    if x.size < window:
        return np.empty(0)
    c = np.cumsum(np.insert(x, 0, 0.0))
    return (c[window:] - c[:-window]) / window
