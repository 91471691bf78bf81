"""The distributed stochastic approximation iteration

    x_{n+1} = W x_n + alpha_n [h(x_n) + M_{n+1}]

with pluggable drift ``h`` and martingale-difference noise ``M``.

Every noise source produces, per step, a pair ``(dA, dB)`` and the noise is
``M = dB - x dA``. Additive Gaussian noise has ``dA = 0``; sampled TD(0)
noise has ``dA = A_n - A`` and ``dB = B_n - B``; zero noise has neither.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .decomp import DecompRecord, decompose, operator_norm, rank_one_norm
from .errors import NonFinite, SingularA
from .schedule import StepsizeSchedule, default_burn_in
from .spectral import (
    DriftMatrix,
    GossipMatrix,
    drift_spectrum,
    matrix_exp_neg,
    matrix_exp_neg_batch,
    projector,
    stationary_vector,
)

LINEAR = "linear"
PERTURBED = "linear_plus_perturbation"

ZERO = "zero"
GAUSSIAN = "gaussian"
TD = "td"

DIVERGENCE_BOUND = _kernels.DIVERGENCE_BOUND


@dataclass(frozen=True)
class DriveSpec:
    """Drift function ``h``.

    ``linear``: ``h(x) = B - xA``.
    ``linear_plus_perturbation``:
    ``h(x) = -1'pi(x - x*)A + 1'pi f1(x) + Q(B + f2(x))``, which needs
    ``pi`` and ``x_star``.
    """

    kind: str
    a_mat: np.ndarray
    b_mat: np.ndarray
    f1: Callable | None = None
    f2: Callable | None = None
    nonlinearity_order: float = 2.0
    pi: np.ndarray | None = None
    x_star: np.ndarray | None = None

    @classmethod
    def linear(cls, a_mat, b_mat) -> "DriveSpec":
        a = a_mat.a_mat if isinstance(a_mat, DriftMatrix) else np.asarray(a_mat, dtype=float)
        return cls(kind=LINEAR, a_mat=np.atleast_2d(a), b_mat=np.atleast_2d(np.asarray(b_mat, dtype=float)))

    @classmethod
    def perturbed(cls, a_mat, b_mat, pi, x_star, f1=None, f2=None,
                  nonlinearity_order: float = 2.0) -> "DriveSpec":
        a = a_mat.a_mat if isinstance(a_mat, DriftMatrix) else np.asarray(a_mat, dtype=float)
        if nonlinearity_order <= 1.0:
            raise ValueError("nonlinearity order must exceed 1")
        return cls(kind=PERTURBED, a_mat=np.atleast_2d(a),
                   b_mat=np.atleast_2d(np.asarray(b_mat, dtype=float)),
                   f1=f1, f2=f2, nonlinearity_order=nonlinearity_order,
                   pi=np.asarray(getattr(pi, "pi", pi), dtype=float),
                   x_star=np.asarray(x_star, dtype=float))

    @property
    def m(self) -> int:
        return self.b_mat.shape[0]

    @property
    def d(self) -> int:
        return self.a_mat.shape[0]

    @property
    def drift(self) -> DriftMatrix:
        return drift_spectrum(self.a_mat)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == LINEAR:
            return self.b_mat - x @ self.a_mat
        m = x.shape[0]
        ones = np.ones(m)
        agree = np.outer(ones, self.pi @ (x - self.x_star))
        out = -agree @ self.a_mat
        if self.f1 is not None:
            out = out + np.outer(ones, self.pi @ self.f1(x))
        inner = self.b_mat if self.f2 is None else self.b_mat + self.f2(x)
        out = out + inner - np.outer(ones, self.pi @ inner)
        return out


@dataclass
class NoiseModel:
    """Martingale-difference noise source.

    Parameters
    ----------
    kind : ``"zero"``, ``"gaussian"`` or ``"td"``
    seed : seed of the run's generator
    scale : Gaussian per-agent standard deviation (scalar or length m)
    cov : optional Gaussian row covariance, ``(d, d)`` or ``(m, d, d)``;
        overrides ``scale``
    sampler : for ``"td"``, an object with ``draw(rng, count) -> (dA, dB)``
    """

    kind: str = ZERO
    seed: int = 0
    scale: float | np.ndarray = 1.0
    cov: np.ndarray | None = None
    sampler: object | None = None

    def __post_init__(self):
        if self.kind not in (ZERO, GAUSSIAN, TD):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == TD and self.sampler is None:
            raise ValueError("td noise needs a sampler")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def draw(self, rng: np.random.Generator, count: int, m: int, d: int):
        """Noise blocks for ``count`` consecutive steps.

        Draw sizes never change the stream: ``draw(n1)`` then ``draw(n2)``
        equals ``draw(n1 + n2)``.
        """
        if self.kind == ZERO:
            return None, None
        if self.kind == TD:
            return self.sampler.draw(rng, count)
        z = rng.standard_normal((count, m, d))
        if self.cov is not None:
            cov = np.asarray(self.cov, dtype=float)
            chol = np.linalg.cholesky(cov)
            if chol.ndim == 2:
                return None, z @ chol.T
            return None, np.einsum("kij,ilj->kil", z, chol)
        scale = np.asarray(self.scale, dtype=float)
        if scale.ndim == 1:
            scale = scale[:, None]
        return None, z * scale


def noise_value(x: np.ndarray, d_a, d_b, k: int = 0) -> np.ndarray:
    """``M = dB_k - x dA_k`` for one step of a drawn block."""
    out = np.zeros_like(x) if d_b is None else np.array(d_b[k], dtype=float)
    if d_a is not None:
        out = out - x @ d_a[k]
    return out


@dataclass
class DsaState:
    k: int
    x: np.ndarray
    rng: np.random.Generator = field(repr=False)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.x)) or np.max(np.abs(self.x), initial=0.0) > DIVERGENCE_BOUND:
            raise NonFinite(f"iterate left the finite range at step {self.k}", step=self.k)


def _mat(w) -> np.ndarray:
    return w.entries if isinstance(w, GossipMatrix) else np.asarray(w, dtype=float)


def dsa_step(state: DsaState, w, h: DriveSpec, noise: NoiseModel,
             s: StepsizeSchedule) -> DsaState:
    """One iteration; the state's generator is advanced in place."""
    x = state.x
    m, d = x.shape
    d_a, d_b = noise.draw(state.rng, 1, m, d)
    noise_m = noise_value(x, d_a, d_b)
    alpha = s.alpha_iter(state.k)
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = _mat(w) @ x + alpha * (h(x) + noise_m)
    nxt = DsaState(k=state.k + 1, x=x_new, rng=state.rng)
    nxt.check_finite()
    return nxt


# --------------------------------------------------------------------------
# recording


@dataclass(frozen=True)
class RecorderSpec:
    """Checkpoint policy and diagnostics toggles.

    Checkpoints are every ``n < dense`` plus ``n_{j+1} = ceil(ratio * n_j)``
    up to the horizon (always included).
    """

    ratio: float = 1.05
    dense: int = 100
    burn_in: int | None = None
    psi: bool = False
    chi: bool = False
    delta: bool = False
    gamma: bool = False
    keep_states: bool = False
    block: int = 65536

    def __post_init__(self):
        if self.ratio <= 1.0:
            raise ValueError("checkpoint ratio must exceed 1")

    @property
    def track_psi(self) -> bool:
        return self.psi or self.delta

    @property
    def track_chi(self) -> bool:
        return self.chi or self.gamma

    def checkpoints(self, horizon: int) -> np.ndarray:
        pts = list(range(min(self.dense, horizon + 1)))
        n = max(pts[-1], 1)
        while True:
            n = max(n + 1, int(math.ceil(self.ratio * n)))
            if n >= horizon:
                break
            if n >= self.dense:
                pts.append(n)
        if pts[-1] != horizon:
            pts.append(horizon)
        return np.array(pts, dtype=np.int64)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("ratio", "dense", "burn_in", "psi", "chi", "delta", "gamma", "keep_states")}


TRACE_COLUMNS = ("n", "alpha_n", "t_n", "lil_scale", "agreement", "disagreement",
                 "total", "lil_ratio", "psi", "chi", "delta", "gamma")
_FIELD_OF = {"agreement": "agreement_norm", "disagreement": "disagreement_norm",
             "total": "total_norm", "psi": "psi_norm", "chi": "chi_norm",
             "delta": "delta_norm", "gamma": "gamma_norm"}


def fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.17g}"


@dataclass
class RateTrace:
    """Per-checkpoint diagnostics of one run, stored column-wise.

    Untracked or undefined entries are NaN.
    """

    columns: dict[str, np.ndarray]
    burn_in: int
    meta: dict = field(default_factory=dict)
    states: dict[int, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.columns["n"])

    def __getitem__(self, i: int) -> DecompRecord:
        c = self.columns

        def opt(name):
            v = c[name][i]
            return None if math.isnan(v) else float(v)

        return DecompRecord(
            n=int(c["n"][i]), agreement_norm=float(c["agreement"][i]),
            disagreement_norm=float(c["disagreement"][i]), total_norm=float(c["total"][i]),
            alpha_n=float(c["alpha_n"][i]), t_n=float(c["t_n"][i]),
            lil_scale=float(c["lil_scale"][i]), lil_ratio=float(c["lil_ratio"][i]),
            psi_norm=opt("psi"), chi_norm=opt("chi"), delta_norm=opt("delta"),
            gamma_norm=opt("gamma"),
        )

    def records(self) -> list[DecompRecord]:
        return [self[i] for i in range(len(self))]

    @property
    def n(self) -> np.ndarray:
        return self.columns["n"]

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def to_csv(self, path=None, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            for line in comment.splitlines():
                buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for i in range(len(self)):
            row = [str(int(self.columns["n"][i]))]
            row += [fmt(self.columns[c][i]) for c in TRACE_COLUMNS[1:]]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, burn_in: int = 0) -> "RateTrace":
        cols = read_csv_columns(path)
        cols["n"] = cols["n"].astype(np.int64)
        return cls(columns=cols, burn_in=burn_in)


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        out[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in rows])
    return out


class _Recorder:
    def __init__(self, n_points: int, spec: RecorderSpec, x_star, pi, q, s, m):
        self.spec = spec
        self.cols = {c: np.full(n_points, np.nan) for c in TRACE_COLUMNS}
        self.cols["n"] = np.zeros(n_points, dtype=np.int64)
        self.x_star, self.pi, self.q, self.s, self.m = x_star, pi, q, s, m
        self.count = 0
        self.states = {} if spec.keep_states else None

    def record(self, n: int, t_n: float, x, psi_row, chi) -> None:
        i = self.count
        rec = decompose(x, self.x_star, self.pi, self.q, check_identity=True)
        alpha_n = self.s.alpha_iter(n)
        t_next = t_n + alpha_n
        scale = math.sqrt(alpha_n * math.log(t_next)) if t_next > 1.0 else math.nan
        c = self.cols
        c["n"][i] = n
        c["alpha_n"][i] = alpha_n
        c["t_n"][i] = t_n
        c["lil_scale"][i] = scale
        c["agreement"][i] = rec.agreement_norm
        c["disagreement"][i] = rec.disagreement_norm
        c["total"][i] = rec.total_norm
        c["lil_ratio"][i] = rec.total_norm / scale if scale > 0 else math.nan
        sp = self.spec
        if psi_row is not None:
            if sp.psi:
                c["psi"][i] = rank_one_norm(psi_row, self.m)
            if sp.delta:
                agree_row = self.pi @ (x - self.x_star)
                c["delta"][i] = rank_one_norm(agree_row - psi_row, self.m)
        if chi is not None:
            if sp.chi:
                c["chi"][i] = operator_norm(chi)
            if sp.gamma:
                c["gamma"][i] = operator_norm(self.q @ x - chi)
        if self.states is not None:
            self.states[n] = x.copy()
        self.count += 1

    def trace(self, burn_in: int, meta: dict) -> RateTrace:
        cols = {k: v[: self.count].copy() for k, v in self.cols.items()}
        return RateTrace(columns=cols, burn_in=burn_in, meta=meta, states=self.states)


def linear_fixed_point(h: DriveSpec, pi) -> np.ndarray:
    """``theta* = pi B A^{-1}`` (row vector), i.e. the solution of ``theta A = pi B``."""
    p = getattr(pi, "pi", pi)
    target = p @ h.b_mat
    a = h.a_mat
    if np.linalg.cond(a) > 1e12:
        raise SingularA(f"drift matrix is singular (cond {np.linalg.cond(a):.3e})")
    try:
        return np.linalg.solve(a.T, target)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond guard above
        raise SingularA(str(exc)) from exc


def deterministic_fixed_point_check(w, h: DriveSpec, pi) -> float:
    """Residual of the consensus fixed point ``x* = 1'(pi B A^{-1})``.

    Returns ``max(|W x* - x*|, |pi h(x*)|)`` in operator norm.
    """
    if h.kind != LINEAR:
        raise ValueError("fixed point check needs a linear drive")
    p = getattr(pi, "pi", pi)
    theta = linear_fixed_point(h, p)
    x_star = np.outer(np.ones(h.m), theta)
    r1 = operator_norm(_mat(w) @ x_star - x_star)
    r2 = float(np.linalg.norm(p @ h(x_star)))
    return max(r1, r2)


def _x_star_for(h: DriveSpec, pi: np.ndarray) -> np.ndarray:
    if h.kind == LINEAR:
        return np.outer(np.ones(h.m), linear_fixed_point(h, pi))
    return np.asarray(h.x_star, dtype=float)


def run_dsa(init, w, h: DriveSpec, noise: NoiseModel, s: StepsizeSchedule,
            horizon: int, recorder: RecorderSpec | None = None,
            x_star=None) -> RateTrace:
    """Iterate ``horizon`` steps and record the error decomposition at checkpoints.

    Linear drives run through the compiled loop; perturbed drives step in
    Python. Both consume the noise stream identically, so a run is fully
    determined by ``(noise.seed, inputs)``.

    Raises
    ------
    NonFinite
        With ``partial`` holding the trace up to the last finite checkpoint.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    recorder = recorder or RecorderSpec()
    wm = _mat(w)
    x = np.array(init, dtype=float, copy=True)
    m, d = x.shape
    if wm.shape != (m, m) or h.m != m or h.d != d:
        raise ValueError("dimension mismatch between init, W and drive")
    pi = stationary_vector(wm).pi
    q = projector(pi).q
    x_star = _x_star_for(h, pi) if x_star is None else np.asarray(x_star, dtype=float)
    burn_in = recorder.burn_in
    if burn_in is None:
        burn_in = default_burn_in(s, horizon)
    points = recorder.checkpoints(horizon)
    rec = _Recorder(len(points), recorder, x_star, pi, q, s, m)
    rng = noise.generator()
    track_psi, track_chi = recorder.track_psi, recorder.track_chi
    psi = np.zeros(d) if track_psi else None
    chi = np.zeros((m, d)) if track_chi else None
    meta = {"pi": pi.tolist(), "x_star_row": x_star[0].tolist(), "horizon": horizon,
            "seed": noise.seed}

    t_n = 0.0
    k = 0
    rec.record(0, t_n, x, psi, chi)
    for target in points[1:]:
        while k < target:
            count = int(min(target - k, recorder.block))
            alphas = np.asarray(s.alpha_iter(np.arange(k, k + count)), dtype=float)
            d_a, d_b = noise.draw(rng, count, m, d)
            if h.kind == LINEAR:
                x, psi, chi, fail = _advance_compiled(
                    x, wm, h, alphas, d_a, d_b, q, pi, psi, chi)
            else:
                x, psi, chi, fail = _advance_python(
                    x, wm, h, alphas, d_a, d_b, q, pi, psi, chi)
            if fail >= 0:
                raise NonFinite(
                    f"iterate left the finite range at step {k + fail}",
                    step=k + fail, partial=rec.trace(burn_in, meta))
            # sequential sum from t_n, so the result does not depend on block size
            t_n = float(np.cumsum(np.concatenate(([t_n], alphas)))[-1])
            k += count
        rec.record(int(target), t_n, x, psi, chi)
    return rec.trace(burn_in, meta)


def _advance_compiled(x, wm, h, alphas, d_a, d_b, q, pi, psi, chi):
    m, d = x.shape
    expms = (matrix_exp_neg_batch(h.a_mat, alphas) if (psi is not None or chi is not None)
             else np.zeros((1, d, d)))
    fail = _kernels.advance_linear(
        x, np.ascontiguousarray(wm), np.ascontiguousarray(h.a_mat),
        np.ascontiguousarray(h.b_mat), alphas,
        np.zeros((1, d, d)) if d_a is None else np.ascontiguousarray(d_a),
        np.zeros((1, m, d)) if d_b is None else np.ascontiguousarray(d_b),
        d_a is not None, d_b is not None, q, pi, expms,
        np.zeros(d) if psi is None else psi,
        np.zeros((m, d)) if chi is None else chi,
        psi is not None, chi is not None,
    )
    return x, psi, chi, int(fail)


def _advance_python(x, wm, h, alphas, d_a, d_b, q, pi, psi, chi):
    for k, alpha in enumerate(alphas):
        noise_m = noise_value(x, d_a, d_b, k)
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = wm @ x + alpha * (h(x) + noise_m)
        if not np.all(np.isfinite(x_new)) or np.max(np.abs(x_new)) > DIVERGENCE_BOUND:
            return x, psi, chi, k
        if psi is not None or chi is not None:
            e = matrix_exp_neg(h.a_mat, float(alpha))
            if psi is not None:
                psi = psi @ e + alpha * (pi @ noise_m)
            if chi is not None:
                chi = wm @ chi @ e + alpha * (q @ noise_m)
        x = x_new
    return x, psi, chi, -1
