"""Cash-settled call options: trade triples, payoffs, settlement and acceptability.

A trade triple (q, K, delta) buys/sells ``delta`` MW of options at fee ``q``
per MW; each exercised MW pays the positive part of the real-time price over
the strike ``K``. The market maker's per-scenario cash position is the
merchandising surplus. Exercise at a price tie ``p == K`` counts volume but
carries zero cash.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .scenario import RandomSample, RiskPreference, cvar, expectation

__all__ = [
    "TradeTriple",
    "TradeBounds",
    "AcceptabilitySet",
    "ExerciseAllocation",
    "FTRPosition",
    "option_payoff",
    "buyer_profit",
    "seller_profit",
    "merchandising_surplus",
    "ms_samples",
    "is_acceptable",
    "ftr_payoff",
]


@dataclass(frozen=True)
class TradeTriple:
    """Option price q ($/MW), strike K ($/MWh), volume delta (MW)."""

    q: float
    K: float
    delta: float

    def __post_init__(self):
        if self.q < 0 or self.K < 0 or self.delta < 0:
            raise ValueError(f"trade triple must be nonnegative, got {self}")

    @classmethod
    def zero(cls) -> "TradeTriple":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class TradeBounds:
    """The market maker's allowable box [0, q_max] x [0, K_max] x [0, delta_max]."""

    q_max: float
    K_max: float
    delta_max: float

    def __post_init__(self):
        if min(self.q_max, self.K_max, self.delta_max) < 0:
            raise ValueError("trade bounds must be nonnegative")

    def contains(self, t: TradeTriple, tol: float = 1e-9) -> bool:
        return (
            t.q <= self.q_max + tol
            and t.K <= self.K_max + tol
            and t.delta <= self.delta_max + tol
        )


@dataclass(frozen=True)
class AcceptabilitySet:
    """A participant's declared set of acceptable trades.

    ``mode`` is one of ``risk_neutral`` (expected profit must not fall),
    ``cvar`` (CVaR of losses at ``alpha`` must not rise) or ``box_only``
    (anything inside the bounds). Sellers are always evaluated at the
    worst-case full exercise. ``baseline`` is the energy-market profit sample
    and ``price`` the nodal price sample the participant settles against.
    """

    bounds: TradeBounds
    mode: str
    baseline: RandomSample
    price: RandomSample
    alpha: float = 0.0

    def __post_init__(self):
        if self.mode not in ("risk_neutral", "cvar", "box_only"):
            raise ValueError(f"unknown acceptability mode {self.mode!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class ExerciseAllocation:
    """Per-scenario exercised volume per seller, 0 <= delta_g^w <= Delta_g."""

    delta: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for gid, arr in dict(self.delta).items():
            a = np.array(arr, dtype=float)
            a.flags.writeable = False
            clean[gid] = a
        object.__setattr__(self, "delta", clean)

    def total(self) -> np.ndarray:
        return sum(self.delta.values())


@dataclass(frozen=True)
class FTRPosition:
    """``volume`` MW of financial transmission rights from bus a to bus b."""

    from_bus: int
    to_bus: int
    volume: float

    def __post_init__(self):
        if self.volume < 0:
            raise ValueError("FTR volume must be nonnegative")


def option_payoff(p: float, K: float) -> float:
    """Per-MW settlement (p - K)^+ of one call option."""
    return max(p - K, 0.0)


def buyer_profit(pi: RandomSample, t: TradeTriple, p: RandomSample) -> RandomSample:
    """pi - q delta + (p - K)^+ delta, per scenario."""
    payoff = np.maximum(p.values - t.K, 0.0)
    return pi.scen.sample(pi.values - t.q * t.delta + payoff * t.delta)


def seller_profit(
    pi: RandomSample,
    t: TradeTriple,
    p: RandomSample,
    alloc: np.ndarray | None = None,
) -> RandomSample:
    """pi + q delta - (p - K)^+ delta_g^w; ``alloc=None`` is the worst case delta_g^w = delta."""
    if alloc is None:
        exercised = np.full(len(pi), t.delta)
    else:
        exercised = np.asarray(alloc, dtype=float)
        if np.any(exercised < -1e-9) or np.any(exercised > t.delta + 1e-9):
            raise ValueError("exercise allocation outside [0, delta]")
    payoff = np.maximum(p.values - t.K, 0.0)
    return pi.scen.sample(pi.values + t.q * t.delta - payoff * exercised)


def ms_samples(
    buy_trades: Mapping[str, TradeTriple],
    sell_trades: Mapping[str, TradeTriple],
    alloc: ExerciseAllocation,
    prices: Mapping[str, np.ndarray],
) -> np.ndarray:
    """Merchandising surplus per scenario.

    MS^w = sum_r q_r d_r - sum_g q_g d_g - sum_r (p_r - K_r)^+ d_r
           + sum_g (p_g - K_g)^+ delta_g^w
    """
    n = len(next(iter(prices.values()))) if prices else 0
    ms = np.zeros(n)
    fees = 0.0
    for rid, t in buy_trades.items():
        fees += t.q * t.delta
        ms -= np.maximum(prices[rid] - t.K, 0.0) * t.delta
    for gid, t in sell_trades.items():
        fees -= t.q * t.delta
        ms += np.maximum(prices[gid] - t.K, 0.0) * alloc.delta[gid]
    return ms + fees


def merchandising_surplus(
    buy_trades: Mapping[str, TradeTriple],
    sell_trades: Mapping[str, TradeTriple],
    alloc: ExerciseAllocation,
    prices: Mapping[str, np.ndarray],
    scenario: int,
) -> float:
    """MS for one scenario; see :func:`ms_samples`."""
    return float(ms_samples(buy_trades, sell_trades, alloc, prices)[scenario])


def is_acceptable(aset: AcceptabilitySet, t: TradeTriple, role: str, tol: float = 1e-9) -> bool:
    """Whether the participant accepts trade ``t`` in the given role.

    Raises if the trade falls outside the market maker's allowable box.
    Sellers are evaluated at worst-case full exercise.
    """
    if role not in ("buyer", "seller"):
        raise ValueError(f"role must be 'buyer' or 'seller', got {role!r}")
    if not aset.bounds.contains(t):
        raise ValueError(f"trade {t} lies outside the allowable bounds {aset.bounds}")
    if aset.mode == "box_only":
        return True
    pi = aset.baseline
    after = buyer_profit(pi, t, aset.price) if role == "buyer" else seller_profit(pi, t, aset.price)
    scale = max(1.0, abs(expectation(pi)))
    if aset.mode == "risk_neutral":
        return expectation(after) - expectation(pi) >= -tol * scale
    pref = RiskPreference(aset.alpha)
    neg_after = pi.scen.sample(-after.values)
    neg_before = pi.scen.sample(-pi.values)
    return cvar(neg_after, pref) <= cvar(neg_before, pref) + tol * scale


def ftr_payoff(pos: FTRPosition, prices: np.ndarray, scenario: int | None = None):
    """(p_b - p_a) * volume; sign-preserving. ``prices`` is (n_scen, n_bus)."""
    prices = np.asarray(prices, dtype=float)
    spread = prices[:, pos.to_bus] - prices[:, pos.from_bus]
    pay = spread * pos.volume
    return pay if scenario is None else float(pay[scenario])
