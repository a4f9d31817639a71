"""DC network model: shift factors, line flows and the injection polytope."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Line", "NetworkModel", "line_flows", "injection_feasible"]


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    capacity: float
    reactance: float | None = None


@dataclass(frozen=True)
class NetworkModel:
    """Buses, lines, shift-factor matrix H (lines x buses) and limits L.

    A balanced injection vector y (summing to zero) is feasible when
    |H y| <= L componentwise; limits apply symmetrically to both flow
    directions. A copperplate system is ``bus_count=1`` with no lines, where
    feasibility degenerates to the balance constraint.
    """

    bus_count: int
    lines: tuple[Line, ...]
    shift_factors: np.ndarray
    limits: np.ndarray

    def __post_init__(self):
        if self.bus_count < 1:
            raise ValueError("network needs at least one bus")
        H = np.array(self.shift_factors, dtype=float).reshape(len(self.lines), self.bus_count)
        H.flags.writeable = False
        L = np.array(self.limits, dtype=float).reshape(len(self.lines))
        L.flags.writeable = False
        if len(self.lines) and np.any(L <= 0):
            raise ValueError("line limits must be strictly positive")
        for ln in self.lines:
            if not (0 <= ln.from_bus < self.bus_count and 0 <= ln.to_bus < self.bus_count):
                raise ValueError(f"line endpoints out of range: {ln}")
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "shift_factors", H)
        object.__setattr__(self, "limits", L)

    @classmethod
    def copperplate(cls) -> "NetworkModel":
        return cls(bus_count=1, lines=(), shift_factors=np.zeros((0, 1)), limits=np.zeros(0))

    @classmethod
    def from_shift_factors(cls, bus_count, lines, shift_factors) -> "NetworkModel":
        lines = tuple(lines)
        return cls(
            bus_count=bus_count,
            lines=lines,
            shift_factors=np.asarray(shift_factors, dtype=float),
            limits=np.array([ln.capacity for ln in lines]),
        )

    @classmethod
    def from_reactances(cls, bus_count: int, lines, slack_bus: int = 0) -> "NetworkModel":
        """Shift factors from line reactances via the DC susceptance construction.

        B_bus is the weighted graph Laplacian with susceptance 1/x per line;
        the slack row/column is removed before inversion and zero-padded back,
        so the slack bus has a zero shift-factor column.
        """
        lines = tuple(lines)
        if not 0 <= slack_bus < bus_count:
            raise ValueError(f"slack bus {slack_bus} out of range")
        for ln in lines:
            if not (0 <= ln.from_bus < bus_count and 0 <= ln.to_bus < bus_count):
                raise ValueError(f"line endpoints out of range: {ln}")
        n, m = bus_count, len(lines)
        b = np.empty(m)
        Bf = np.zeros((m, n))
        Bbus = np.zeros((n, n))
        for k, ln in enumerate(lines):
            if ln.reactance is None or ln.reactance <= 0:
                raise ValueError(f"line {k} needs a positive reactance")
            b[k] = 1.0 / ln.reactance
            i, j = ln.from_bus, ln.to_bus
            Bf[k, i] += b[k]
            Bf[k, j] -= b[k]
            Bbus[i, i] += b[k]
            Bbus[j, j] += b[k]
            Bbus[i, j] -= b[k]
            Bbus[j, i] -= b[k]
        keep = [i for i in range(n) if i != slack_bus]
        X = np.zeros((n, n))
        if keep:
            try:
                X[np.ix_(keep, keep)] = np.linalg.inv(Bbus[np.ix_(keep, keep)])
            except np.linalg.LinAlgError as exc:
                raise ValueError("network is disconnected; cannot form shift factors") from exc
        H = Bf @ X
        return cls(
            bus_count=n,
            lines=lines,
            shift_factors=H,
            limits=np.array([ln.capacity for ln in lines]),
        )


def line_flows(y, net: NetworkModel) -> np.ndarray:
    """Flows H @ y (MW) for an injection vector y (one entry per bus)."""
    y = np.asarray(y, dtype=float)
    if y.shape != (net.bus_count,):
        raise ValueError(f"injection has {y.size} entries for {net.bus_count} buses")
    return net.shift_factors @ y


def injection_feasible(y, net: NetworkModel, tol: float = 1e-6) -> bool:
    """True iff y balances to zero and every line flow is within its limit.

    Limits are enforced in both directions (|H y| <= L + tol).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (net.bus_count,):
        raise ValueError(f"injection has {y.size} entries for {net.bus_count} buses")
    if abs(float(y.sum())) > tol:
        return False
    if len(net.lines) == 0:
        return True
    return bool(np.all(np.abs(net.shift_factors @ y) <= net.limits + tol))
