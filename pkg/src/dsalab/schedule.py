"""Stepsize families and cumulative-time bookkeeping.

Two families are supported:

* ``type1``: ``alpha(n) = alpha0 / n``
* ``type_gamma``: ``alpha(n) = c * n**(-gamma_exp) * (ln n)**eta`` with
  ``0 < gamma_exp < 1``

Iteration ``k`` of a run (``k = 0, 1, ...``) uses ``alpha(k + start_index)``;
``t_k`` is the sum of the stepsizes of iterations ``0..k-1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BurnInNotReached, IndexBeforeStart

TYPE1 = "type1"
TYPE_GAMMA = "type_gamma"


def _default_start(kind: str, gamma_exp: float, eta: float) -> int:
    if kind == TYPE1 or eta == 0.0:
        return 1
    if eta < 0.0:
        return 2
    # n^{-g} (ln n)^eta peaks at n = exp(eta / g); a 0.1% margin in the log
    # keeps consecutive values distinguishable in floating point near the peak
    return max(2, int(math.floor(math.exp(eta / (gamma_exp * 0.999)))) + 1)


@dataclass(frozen=True)
class StepsizeSchedule:
    kind: str
    alpha0: float = 1.0
    c: float = 1.0
    gamma_exp: float = 0.5
    eta: float = 0.0
    start_index: int = 0  # 0 -> family default

    def __post_init__(self):
        if self.kind not in (TYPE1, TYPE_GAMMA):
            raise ValueError(f"unknown stepsize kind {self.kind!r}")
        if self.kind == TYPE1 and not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.kind == TYPE_GAMMA:
            if not self.c > 0:
                raise ValueError("c must be positive")
            if not 0.0 < self.gamma_exp < 1.0:
                raise ValueError("gamma_exp must lie in (0, 1)")
        floor = _default_start(self.kind, self.gamma_exp, self.eta)
        if self.start_index == 0:
            object.__setattr__(self, "start_index", floor)
        elif self.start_index < floor:
            raise ValueError(
                f"start_index {self.start_index} is below {floor}; "
                "alpha would not be positive and decreasing there"
            )

    @classmethod
    def type1(cls, alpha0: float, start_index: int = 0) -> "StepsizeSchedule":
        return cls(kind=TYPE1, alpha0=alpha0, start_index=start_index)

    @classmethod
    def type_gamma(cls, c: float, gamma_exp: float, eta: float = 0.0,
                   start_index: int = 0) -> "StepsizeSchedule":
        return cls(kind=TYPE_GAMMA, c=c, gamma_exp=gamma_exp, eta=eta,
                   start_index=start_index)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.kind == TYPE1:
            for key in ("c", "gamma_exp", "eta"):
                d.pop(key)
        else:
            d.pop("alpha0")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepsizeSchedule":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind=kind, **d)

    def alpha_iter(self, k):
        """Stepsize used at iteration ``k`` (array-friendly)."""
        return alpha(self, np.asarray(k) + self.start_index)

    def check_against(self, lambda_min: float) -> tuple[bool, str]:
        """Type 1 needs ``alpha0 > 1 / (2 lambda_min)``; Type gamma always passes."""
        if self.kind == TYPE1:
            bound = 1.0 / (2.0 * lambda_min)
            ok = self.alpha0 > bound
            return ok, f"alpha0 = {self.alpha0:.6g} {'>' if ok else '<='} 1/(2 lambda_min) = {bound:.6g}"
        return True, f"gamma_exp = {self.gamma_exp} in (0, 1)"


def alpha(s: StepsizeSchedule, n):
    """``alpha(n)`` for schedule index ``n >= s.start_index``."""
    n_arr = np.asarray(n)
    if np.any(n_arr < s.start_index):
        raise IndexBeforeStart(f"index {n} precedes start_index {s.start_index}")
    nf = n_arr.astype(float)
    if s.kind == TYPE1:
        out = s.alpha0 / nf
    else:
        out = s.c * nf ** (-s.gamma_exp)
        if s.eta != 0.0:
            out = out * np.log(nf) ** s.eta
    return float(out) if np.ndim(out) == 0 else out


def cumulative_times(s: StepsizeSchedule, horizon: int) -> np.ndarray:
    """``t_0, ..., t_horizon`` for a run of ``horizon`` iterations."""
    a = s.alpha_iter(np.arange(horizon))
    t = np.empty(horizon + 1)
    t[0] = 0.0
    np.cumsum(a, out=t[1:])
    return t


@dataclass
class TimeAccumulator:
    """Iteration counter ``n`` with cumulative time ``t_n``; owned by one run."""

    n: int = 0
    t_n: float = 0.0

    def advance(self, s: StepsizeSchedule) -> float:
        a = s.alpha_iter(self.n)
        self.t_n += a
        self.n += 1
        return a


def lil_scale_value(alpha_n: float, t_next: float) -> float:
    """``sqrt(alpha_n * ln t_{n+1})``; requires ``t_{n+1} > 1``."""
    if not t_next > 1.0:
        raise BurnInNotReached(f"t_(n+1) = {t_next:.6g} <= 1, log scale undefined")
    return math.sqrt(alpha_n * math.log(t_next))


def lil_scale(s: StepsizeSchedule, acc: TimeAccumulator) -> float:
    """LIL normaliser at the accumulator's current iteration."""
    a = s.alpha_iter(acc.n)
    return lil_scale_value(a, acc.t_n + a)


def theoretical_rate_exponents(s: StepsizeSchedule) -> tuple[float, float]:
    """Polynomial decay exponents (agreement, disagreement), log factors dropped.

    The agreement error decays like ``sqrt(alpha_n)`` and the disagreement
    error like ``alpha_n``.
    """
    if s.kind == TYPE1:
        return (-0.5, -1.0)
    return (-s.gamma_exp / 2.0, -s.gamma_exp)


def default_burn_in(s: StepsizeSchedule, horizon: int, min_n: int = 100) -> int:
    """First ``n >= min_n`` with ``t_{n+1} > e``; ``horizon`` if never reached."""
    t = cumulative_times(s, horizon)
    hits = np.flatnonzero(t[1:] > math.e)
    if len(hits) == 0:
        return horizon
    return max(min_n, int(hits[0]))
