"""Bid space and single-auction settlement for a unit common-value good.

Every bidder values the item at 1, so a winner paying ``price`` earns
``1 - price`` and every loser earns 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError

_GRID_ATOL = 1e-9


class PaymentRule(enum.Enum):
    """Pricing rule of a sealed-bid auction.

    The value is the ``design`` code used in datasets: 1 for first-price,
    0 for second-price.
    """

    SECOND_PRICE = 0
    FIRST_PRICE = 1

    @property
    def design(self) -> int:
        return self.value

    @classmethod
    def from_design(cls, design) -> PaymentRule:
        if isinstance(design, PaymentRule):
            return design
        if isinstance(design, str):
            key = design.strip().lower()
            if key in ("first", "fpa", "first_price", "first-price"):
                return cls.FIRST_PRICE
            if key in ("second", "spa", "second_price", "second-price"):
                return cls.SECOND_PRICE
            raise ConfigurationError(f"unknown payment rule {design!r}")
        if design in (0, 1) and float(design) == int(design):
            return cls(int(design))
        raise ConfigurationError(f"design must be 0 (second-price) or 1 (first-price), got {design!r}")


@dataclass(frozen=True)
class BidGrid:
    """Strictly increasing bid levels from 0 to 1."""

    levels: tuple

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size < 2:
            raise ConfigurationError("a bid grid needs at least two levels")
        if lv[0] != 0.0 or lv[-1] != 1.0:
            raise ConfigurationError("bid grid must start at 0 and end at 1")
        if np.any(np.diff(lv) <= 0):
            raise ConfigurationError("bid grid levels must be strictly increasing")
        object.__setattr__(self, "levels", tuple(float(x) for x in lv))

    @property
    def num_actions(self) -> int:
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def index_of(self, bid) -> int:
        """Action index of ``bid``; raises DomainError if it is off-grid."""
        lv = self.as_array()
        i = int(np.argmin(np.abs(lv - float(bid))))
        if abs(lv[i] - float(bid)) > _GRID_ATOL:
            raise DomainError(f"bid {bid!r} is not on the grid {self.levels}")
        return i

    def __len__(self):
        return len(self.levels)


def make_bid_grid(num_actions: int) -> BidGrid:
    """Evenly spaced grid ``{0, 1/(n-1), ..., 1}`` with ``n`` levels."""
    if isinstance(num_actions, bool) or int(num_actions) != num_actions:
        raise ConfigurationError(f"num_actions must be an integer, got {num_actions!r}")
    n = int(num_actions)
    if n < 2:
        raise ConfigurationError(f"num_actions must be >= 2, got {n}")
    # i/(n-1) rather than linspace so that e.g. 3/5 is exactly 0.6
    return BidGrid(tuple(i / (n - 1) for i in range(n)))


@dataclass(frozen=True)
class AuctionOutcome:
    winner: int
    winning_bid: float
    price: float
    rewards: tuple
    tie_count: int


@dataclass(frozen=True)
class CounterfactualValue:
    """Exact expected reward of bidding ``candidate_bid`` against fixed rivals."""

    candidate_bid: float
    expected_reward: float
    counterfactual_winning_bid: float


def _check_bids(bids, grid: BidGrid | None) -> np.ndarray:
    arr = np.asarray(bids, dtype=float).ravel()
    if grid is not None:
        for b in arr:
            grid.index_of(b)
    elif np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("bids must lie in [0, 1]")
    return arr


def settle_auction(rule, bids, rng: np.random.Generator, grid: BidGrid | None = None) -> AuctionOutcome:
    """Settle one sealed-bid auction.

    The winner is drawn uniformly among the highest bidders. Exactly one
    ``rng.random()`` draw is consumed when two or more bidders tie at the
    top and none otherwise, so trials replay bit-for-bit.
    """
    rule = PaymentRule.from_design(rule)
    arr = _check_bids(bids, grid)
    if arr.size < 2:
        raise ConfigurationError("an auction needs at least two bidders")

    top = arr.max()
    tied = np.flatnonzero(arr == top)
    if tied.size == 1:
        winner = int(tied[0])
    else:
        winner = int(tied[int(rng.random() * tied.size)])

    if rule is PaymentRule.FIRST_PRICE:
        price = top
    else:
        price = np.sort(arr)[-2]

    rewards = [0.0] * arr.size
    rewards[winner] = 1.0 - price
    return AuctionOutcome(
        winner=winner,
        winning_bid=float(top),
        price=float(price),
        rewards=tuple(rewards),
        tie_count=int(tied.size),
    )


def counterfactual_action_values(rule, grid: BidGrid, rival_bids) -> list[CounterfactualValue]:
    """Expected reward of every grid bid against fixed rival bids.

    Ties at the top are resolved in expectation: a candidate matching the
    highest rival bid, held by ``k`` rivals, wins with probability
    ``1/(k+1)``.
    """
    rule = PaymentRule.from_design(rule)
    rivals = _check_bids(rival_bids, grid)
    if rivals.size == 0:
        raise ConfigurationError("counterfactual values need at least one rival bid")
    m = rivals.max()
    k = int(np.sum(rivals == m))

    out = []
    for b in grid.levels:
        if b < m:
            reward = 0.0
        else:
            price = b if rule is PaymentRule.FIRST_PRICE else m
            reward = 1.0 - price
            if b == m:
                reward /= k + 1
        out.append(CounterfactualValue(b, reward, max(b, float(m))))
    return out


def settle_auctions(rule, bids, rng: np.random.Generator):
    """Vectorized :func:`settle_auction` over the rows of ``bids``.

    Consumes one draw per tied row, in row order, so it reproduces a loop
    of scalar calls on the same generator. Returns ``(winner, price,
    rewards)`` with ``rewards`` shaped like ``bids``.
    """
    rule = PaymentRule.from_design(rule)
    b = np.asarray(bids, dtype=float)
    if b.ndim != 2 or b.shape[1] < 2:
        raise ConfigurationError("bids must be an (auctions, bidders>=2) array")
    top = b.max(axis=1)
    tied = b == top[:, None]
    k = tied.sum(axis=1)
    pick = np.zeros(b.shape[0], dtype=np.int64)
    multi = k >= 2
    pick[multi] = (rng.random(int(multi.sum())) * k[multi]).astype(np.int64)
    # winner = column of the pick-th tied bidder in each row
    rank = np.cumsum(tied, axis=1) - 1
    winner = np.argmax(tied & (rank == pick[:, None]), axis=1)
    price = top if rule is PaymentRule.FIRST_PRICE else np.sort(b, axis=1)[:, -2]
    rewards = np.zeros_like(b)
    rewards[np.arange(b.shape[0]), winner] = 1.0 - price
    return winner, price, rewards
