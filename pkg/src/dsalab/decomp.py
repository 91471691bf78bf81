"""Agreement/disagreement error decomposition, noise accumulators and rate
estimation.

The joint error splits as ``x - x* = 1'pi(x - x*) + Qx``. The agreement part
is tracked against the discounted noise sum ``psi`` and the disagreement part
against ``chi``; both obey one-step recursions driven by the same martingale
differences as the iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyAfterBurnIn, TauNotIncreasing, TooFewPoints, XStarNotConsensus
from .spectral import matrix_exp_neg


def operator_norm(x: np.ndarray) -> float:
    """Largest singular value (spectral norm) of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return 0.0
    return float(np.linalg.norm(x, 2))


def rank_one_norm(row: np.ndarray, m: int) -> float:
    """Operator norm of ``1' row`` with ``1`` of length ``m``: ``sqrt(m) |row|``."""
    return math.sqrt(m) * float(np.linalg.norm(row))


@dataclass
class DecompRecord:
    n: int
    agreement_norm: float
    disagreement_norm: float
    total_norm: float
    alpha_n: float = math.nan
    t_n: float = math.nan
    lil_scale: float = math.nan
    lil_ratio: float = math.nan
    psi_norm: float | None = None
    chi_norm: float | None = None
    delta_norm: float | None = None
    gamma_norm: float | None = None


def decompose(x, x_star, pi, q, check_identity: bool = True) -> DecompRecord:
    """Norms of the agreement, disagreement and total error at one iterate.

    ``n`` is left at -1; the caller stamps the step index.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    p = getattr(pi, "pi", pi)
    qm = getattr(q, "q", q)
    if np.max(np.abs(x_star - x_star[0:1, :])) > 1e-12:
        raise XStarNotConsensus("rows of x_star differ; x_star must be 1'y")
    m = x.shape[0]
    err = x - x_star
    agree_row = p @ err
    disagree = qm @ x
    if check_identity:
        resid = np.max(np.abs(err - np.outer(np.ones(m), agree_row) - disagree), initial=0.0)
        scale = max(1.0, float(np.max(np.abs(x), initial=0.0)), float(np.max(np.abs(x_star), initial=0.0)))
        if resid > 1e-10 * scale:
            raise ArithmeticError(f"decomposition identity off by {resid:.3e}")
    return DecompRecord(
        n=-1,
        agreement_norm=rank_one_norm(agree_row, m),
        disagreement_norm=operator_norm(disagree),
        total_norm=operator_norm(err),
    )


# --------------------------------------------------------------------------
# noise accumulators


@dataclass
class NoiseAccumulators:
    """``psi_n = 1' psi_row`` (rank one) and ``chi_n`` (m x d)."""

    psi_row: np.ndarray
    chi: np.ndarray

    @classmethod
    def zeros(cls, m: int, d: int) -> "NoiseAccumulators":
        return cls(psi_row=np.zeros(d), chi=np.zeros((m, d)))

    def psi(self, m: int) -> np.ndarray:
        return np.outer(np.ones(m), self.psi_row)


def psi_update(acc: NoiseAccumulators, m_next, pi, a, alpha_n: float,
               expm: np.ndarray | None = None) -> NoiseAccumulators:
    """``psi_{n+1} = psi_n exp(-alpha_n A) + alpha_n 1'pi M_{n+1}`` on the pi-row."""
    p = getattr(pi, "pi", pi)
    e = matrix_exp_neg(a, alpha_n) if expm is None else expm
    row = acc.psi_row @ e + alpha_n * (p @ np.asarray(m_next, dtype=float))
    return replace(acc, psi_row=row)


def chi_update(acc: NoiseAccumulators, m_next, w, q, a, alpha_n: float,
               expm: np.ndarray | None = None) -> NoiseAccumulators:
    """``chi_{n+1} = W chi_n exp(-alpha_n A) + alpha_n Q M_{n+1}``."""
    wm = getattr(w, "entries", w)
    qm = getattr(q, "q", q)
    e = matrix_exp_neg(a, alpha_n) if expm is None else expm
    chi = wm @ acc.chi @ e + alpha_n * (qm @ np.asarray(m_next, dtype=float))
    return replace(acc, chi=chi)


# --------------------------------------------------------------------------
# rate extraction


def lil_running_sup(trace: Iterable[DecompRecord], burn_in: int) -> tuple[float, int]:
    """Supremum of ``lil_ratio`` over records with ``n >= burn_in``.

    Ties resolve to the earliest index.
    """
    best, best_n = -math.inf, -1
    for rec in trace:
        r = rec.lil_ratio
        if rec.n < burn_in or r is None or not math.isfinite(r):
            continue
        if r > best:
            best, best_n = r, rec.n
    if best_n < 0:
        raise EmptyAfterBurnIn(f"no finite lil_ratio at n >= {burn_in}")
    return best, best_n


def running_sup_at(ns: np.ndarray, ratios: np.ndarray, burn_in: int,
                   horizons: Sequence[int]) -> np.ndarray:
    """Running supremum of ``ratios`` over ``burn_in <= n <= h`` for each ``h``."""
    ns = np.asarray(ns)
    ratios = np.asarray(ratios, dtype=float)
    out = np.full(len(horizons), np.nan)
    for i, h in enumerate(horizons):
        sel = (ns >= burn_in) & (ns <= h) & np.isfinite(ratios)
        if sel.any():
            out[i] = ratios[sel].max()
    return out


@dataclass(frozen=True)
class SlopeFit:
    window: tuple[int, int]
    slope: float
    intercept: float
    r_squared: float
    points: int


def slope_fit(ns, values, window: tuple[float, float], min_points: int = 10) -> SlopeFit:
    """Least-squares line through ``(ln n, ln value)`` for ``n`` in ``window``."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    sel = (ns >= lo) & (ns <= hi) & np.isfinite(values) & (values > 0)
    if sel.sum() < min_points:
        raise TooFewPoints(f"{int(sel.sum())} usable points in window {window}, need {min_points}")
    lx = np.log(ns[sel])
    ly = np.log(values[sel])
    design = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-300:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return SlopeFit(window=(int(lo), int(hi)), slope=float(slope),
                    intercept=float(intercept), r_squared=r2, points=int(sel.sum()))


# --------------------------------------------------------------------------
# martingale LIL tester

# Moment order and summability exponent from the concentration lemma; they
# only enter its hypotheses, never the computation.
LIL_DOC_CONSTANTS = {
    "beta": "any beta > 0 with sum T_n^(2+2beta) tau_n^(-1-beta) LL(tau_n)^beta < inf",
    "b": "moment order b > 2 of the noise; unit weights satisfy the condition for any beta > 0",
}


def rademacher(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.where(rng.random(size) < 0.5, -1.0, 1.0)


def gaussian(sigma: float = 1.0) -> Callable[[np.random.Generator, int], np.ndarray]:
    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        return sigma * rng.standard_normal(size)
    return draw


@dataclass
class MartingaleLilResult:
    sup_normalized: float
    argmax_n: int
    ns: np.ndarray = field(repr=False)
    normalized: np.ndarray = field(repr=False)
    window: tuple[int, int] = (0, 0)
    notes: dict = field(default_factory=lambda: dict(LIL_DOC_CONSTANTS))


def martingale_lil_test(noise_gen, weights, horizon: int, rng: np.random.Generator,
                        bounds=None, window: tuple[int, int] | None = None,
                        keep_every: int = 1000) -> MartingaleLilResult:
    """Normalised partial sums ``|U_{n+1}| / sqrt(2 tau_n LL tau_n)``.

    ``U_{n+1} = sum_{k<=n} phi_k eps_{k+1}`` and ``tau_n = sum_{k<=n} T_k^2``.

    Parameters
    ----------
    noise_gen : callable ``(rng, size) -> array`` of martingale differences
    weights : array of ``phi_0 .. phi_{horizon-1}`` or callable ``k -> phi_k``
    bounds : array of ``T_k`` with ``|phi_k| <= T_k``; defaults to ``|phi_k|``
    window : ``(n_lo, n_hi)`` over which the supremum is taken; defaults to
        every ``n`` with ``LL(tau_n) > 0``
    keep_every : thinning stride for the returned trace
    """
    k = np.arange(horizon)
    phi = np.asarray(weights(k) if callable(weights) else weights, dtype=float)
    if phi.shape != (horizon,):
        raise ValueError("weights must provide one value per step")
    t_bound = np.abs(phi) if bounds is None else np.asarray(bounds, dtype=float)
    if np.any(np.abs(phi) > t_bound + 1e-15):
        raise ValueError("weights exceed their bounds T_k")
    if np.any(t_bound <= 0):
        raise TauNotIncreasing("tau_n must be strictly increasing (all T_k > 0)")
    tau = np.cumsum(t_bound**2)
    eps = np.asarray(noise_gen(rng, horizon), dtype=float)
    u = np.abs(np.cumsum(phi * eps))
    valid = tau > math.e
    denom = np.full(horizon, np.nan)
    denom[valid] = np.sqrt(2.0 * tau[valid] * np.log(np.log(tau[valid])))
    ratio = np.where(valid, u / np.where(valid, denom, 1.0), np.nan)
    lo, hi = window if window is not None else (0, horizon - 1)
    sel = np.zeros(horizon, dtype=bool)
    sel[lo:hi + 1] = True
    sel &= valid
    if not sel.any():
        raise EmptyAfterBurnIn("no step in the window has LL(tau_n) > 0")
    idx = np.flatnonzero(sel)
    j = idx[np.argmax(ratio[idx])]
    keep = np.arange(0, horizon, max(1, keep_every))
    return MartingaleLilResult(
        sup_normalized=float(ratio[j]), argmax_n=int(j),
        ns=keep, normalized=ratio[keep], window=(int(lo), int(hi)),
    )
