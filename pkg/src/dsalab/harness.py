"""Experiment configuration, multi-seed orchestration, aggregation and
reporting.

Output layout of :func:`run_experiment` in ``out``::

    trace_seed<k>.csv   one per seed, columns of ``engine.TRACE_COLUMNS``
    aggregate.csv       per-checkpoint medians and 10%/90% quantiles
    metadata.json       config, hashes, assumption report, fits, lil trend

CSV files start with ``#`` comment lines carrying the provenance hashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .decomp import SlopeFit, slope_fit
from .engine import (
    NoiseModel,
    RateTrace,
    RecorderSpec,
    fmt,
    read_csv_columns,
    run_dsa,
)
from .errors import AssumptionVeto, ConfigError, NonFinite, TooFewPoints
from .schedule import StepsizeSchedule, alpha, theoretical_rate_exponents
from .spectral import (
    broadcast_gossip,
    complete_gossip,
    load_gossip,
    random_gossip,
    ring_gossip,
)
from .td import AssumptionReport, TdInstance, random_instance, two_state_instance, verify_assumptions

log = logging.getLogger(__name__)

OUT_ENV = "DSALAB_OUT"
AGG_FIELDS = ("agreement", "disagreement", "total", "lil_ratio", "psi", "chi", "delta", "gamma")

# pass/fail tolerances of the rates report
AGREEMENT_TOL = 0.10
DISAGREEMENT_TOL = 0.15
RELATIVE_TOL = 0.20
LIL_GROWTH_MAX = 0.30


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``instance`` is one of ``{"generate": {...random_mdp kwargs}}``,
    ``{"file": path}``, ``{"builtin": "two_state"}`` or ``{"inline": {...}}``
    (a serialised instance). ``gossip`` optionally replaces the instance's
    matrix: ``{"kind": "ring" | "complete" | "broadcast" | "random" | "file" |
    "matrix", ...}``.

    ``schedule`` follows :meth:`StepsizeSchedule.to_dict` and additionally
    accepts ``alpha0_scale`` (Type 1: ``alpha0 = alpha0_scale / lambda_min``),
    ``c_scale`` (Type gamma: ``c = c_scale / max|eig A|``) and
    ``start_index: "auto"`` (first index with ``alpha * max|eig A| <= 1``).
    """

    instance: dict
    schedule: dict
    horizon: int
    seeds: list[int]
    noise: dict = field(default_factory=lambda: {"kind": "td"})
    gossip: dict | None = None
    init: dict = field(default_factory=lambda: {"kind": "zeros"})
    diagnostics: dict = field(default_factory=dict)
    recorder: dict = field(default_factory=dict)
    burn_in: int | None = None
    window: list[int] | None = None
    out: str | None = None
    force: bool = False

    def __post_init__(self):
        if not isinstance(self.instance, dict) or len(self.instance) != 1:
            raise ConfigError("instance must be a single-key mapping")
        if "kind" not in self.schedule:
            raise ConfigError("schedule needs a 'kind'")
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1")
        self.horizon = int(self.horizon)
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.burn_in is not None and self.horizon < int(self.burn_in):
            raise ConfigError("horizon must be at least the burn-in")
        unknown = set(self.diagnostics) - {"psi", "chi", "delta", "gamma", "covariance"}
        if unknown:
            raise ConfigError(f"unknown diagnostics {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        missing = {"instance", "schedule", "horizon", "seeds"} - set(d)
        if missing:
            raise ConfigError(f"missing config keys {sorted(missing)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def run_dict(self) -> dict:
        """Configuration shared by every seed (no seeds, no output location)."""
        d = self.to_dict()
        for key in ("seeds", "out"):
            d.pop(key)
        return d

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return _hash(d)

    def run_digest(self) -> str:
        return _hash(self.run_dict())


# --------------------------------------------------------------------------
# building blocks


def build_instance(instance: dict, gossip: dict | None = None, base: Path | None = None) -> TdInstance:
    (kind, params), = instance.items()
    if kind == "generate":
        inst = random_instance(**params)
    elif kind == "file":
        path = Path(params)
        if base is not None and not path.is_absolute():
            path = base / path
        inst = TdInstance.load(path)
    elif kind == "builtin":
        if params != "two_state":
            raise ConfigError(f"unknown builtin instance {params!r}")
        inst = two_state_instance()
    elif kind == "inline":
        inst = TdInstance.from_dict(params)
    else:
        raise ConfigError(f"unknown instance source {kind!r}")
    if gossip:
        inst = inst.with_gossip(build_gossip(gossip, inst.mdp.m, base))
    return inst


def build_gossip(spec: dict, m: int, base: Path | None = None) -> np.ndarray:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "ring":
        return ring_gossip(m, **spec).entries
    if kind == "complete":
        return complete_gossip(m).entries
    if kind == "broadcast":
        return broadcast_gossip(m, **spec).entries
    if kind == "random":
        seed = spec.pop("seed", 0)
        return random_gossip(m, np.random.default_rng(seed), **spec).entries
    if kind == "file":
        path = Path(spec["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        return load_gossip(path)
    if kind == "matrix":
        return np.asarray(spec["entries"], dtype=float)
    raise ConfigError(f"unknown gossip kind {kind!r}")


def resolve_schedule(spec: dict, a_mat: np.ndarray, gossip=None) -> StepsizeSchedule:
    """Turn a schedule spec into a schedule, resolving scales and ``"auto"`` start.

    ``alpha0_scale`` is relative to the smallest real part of the eigenvalues of
    ``a_mat`` and ``c_scale`` to its spectral radius. An ``"auto"`` start index
    skips the first stepsizes until ``alpha * rho(A) <= 1``; when ``gossip`` is
    given it also waits until every mode ``mu - alpha * lam`` of the noise-free
    linear map has modulus at most one.
    """
    spec = dict(spec)
    eig = np.linalg.eigvals(a_mat)
    mu = None if gossip is None else np.linalg.eigvals(np.asarray(getattr(gossip, "entries", gossip)))
    lam_min = float(eig.real.min())
    rho = float(np.abs(eig).max())
    if "alpha0_scale" in spec:
        spec["alpha0"] = spec.pop("alpha0_scale") / lam_min
    if "c_scale" in spec:
        spec["c"] = spec.pop("c_scale") / rho
    auto = spec.get("start_index") == "auto"
    if auto:
        spec["start_index"] = 0
    try:
        s = StepsizeSchedule.from_dict(spec)
    except TypeError as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc
    if auto:
        n = s.start_index
        while alpha(s, n) * rho > 1.0 or (
                mu is not None and np.abs(mu[:, None] - alpha(s, n) * eig[None, :]).max() > 1.0):
            n = max(n + 1, int(n * 1.1))
        s = StepsizeSchedule.from_dict({**s.to_dict(), "start_index": n})
    return s


def build_noise(spec: dict, inst: TdInstance, seed: int) -> NoiseModel:
    spec = dict(spec)
    kind = spec.pop("kind", "td")
    if kind == "td":
        return NoiseModel(kind="td", seed=seed, sampler=inst.sampler())
    if kind == "zero":
        return NoiseModel(kind="zero", seed=seed)
    if kind == "gaussian":
        cov = spec.get("cov")
        return NoiseModel(kind="gaussian", seed=seed, scale=np.asarray(spec.get("scale", 1.0)),
                          cov=None if cov is None else np.asarray(cov, dtype=float))
    raise ConfigError(f"unknown noise kind {kind!r}")


def build_init(spec: dict, m: int, d: int, seed: int) -> np.ndarray:
    kind = spec.get("kind", "zeros")
    if kind == "zeros":
        return np.zeros((m, d))
    if kind == "matrix":
        x0 = np.asarray(spec["entries"], dtype=float)
        if x0.shape != (m, d):
            raise ConfigError(f"init matrix has shape {x0.shape}, expected {(m, d)}")
        return x0
    if kind == "gaussian":
        rng = np.random.default_rng([seed, 1])
        return float(spec.get("scale", 1.0)) * rng.standard_normal((m, d))
    raise ConfigError(f"unknown init kind {kind!r}")


def _recorder_for(cfg: dict) -> RecorderSpec:
    diag = cfg.get("diagnostics", {})
    rec = cfg.get("recorder", {})
    return RecorderSpec(
        ratio=rec.get("ratio", 1.05), dense=rec.get("dense", 100), burn_in=cfg.get("burn_in"),
        psi=bool(diag.get("psi")), chi=bool(diag.get("chi")), delta=bool(diag.get("delta")),
        gamma=bool(diag.get("gamma")), keep_states=bool(diag.get("covariance")),
    )


def run_seed(run_cfg: dict, seed: int, base: str | None = None) -> RateTrace:
    """One seed of an experiment; a pure function of ``(run_cfg, seed)``."""
    base_path = Path(base) if base else None
    inst = build_instance(run_cfg["instance"], run_cfg.get("gossip"), base_path)
    truth = inst.truth
    s = resolve_schedule(run_cfg["schedule"], truth.a_mat, inst.gossip)
    m, d = truth.b_mat.shape
    trace = run_dsa(
        build_init(run_cfg.get("init", {}), m, d, seed), inst.gossip, inst.drive(),
        build_noise(run_cfg.get("noise", {}), inst, seed), s, run_cfg["horizon"],
        _recorder_for(run_cfg), x_star=truth.x_star,
    )
    if trace.states is not None:
        covs = {int(n): inst.noise_covariance(x) for n, x in trace.states.items()}
        trace.meta["covariance"] = covs
        trace.states = None
    return trace


def _run_seed_safe(args):
    run_cfg, seed, base = args
    try:
        return seed, run_seed(run_cfg, seed, base), None
    except NonFinite as exc:
        return seed, None, str(exc)


# --------------------------------------------------------------------------
# aggregation


@dataclass
class AggregateResult:
    """Across-seed summary of one experiment."""

    columns: dict[str, np.ndarray]
    schedule: StepsizeSchedule
    burn_in: int
    horizon: int
    seeds: list[int]
    window: tuple[int, int]
    excluded: dict[int, str] = field(default_factory=dict)
    report: AssumptionReport | None = None
    lil_trend: list[tuple[int, float]] = field(default_factory=list)
    covariance: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> np.ndarray:
        return self.columns["n"]

    def fit(self, name: str) -> SlopeFit:
        return slope_fit(self.n, self.columns[f"{name}_median"], self.window)

    def fits(self) -> dict[str, SlopeFit]:
        out = {}
        for name in ("agreement", "disagreement", "total"):
            try:
                out[name] = self.fit(name)
            except TooFewPoints:
                pass
        return out

    def to_csv(self, path=None, comment: str | None = None) -> str:
        names = list(self.columns)
        lines = []
        if comment:
            lines += [f"# {ln}" for ln in comment.splitlines()]
        lines.append(",".join(names))
        for i in range(len(self.n)):
            row = [str(int(self.n[i]))] + [fmt(self.columns[c][i]) for c in names[1:]]
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def aggregate_traces(traces: dict[int, RateTrace], schedule: StepsizeSchedule, horizon: int,
                     window: tuple[int, int] | None = None,
                     burn_in: int | None = None) -> AggregateResult:
    """Median and 10%/90% quantiles of every trace column across seeds."""
    if not traces:
        raise ValueError("no traces to aggregate")
    seeds = sorted(traces)
    first = traces[seeds[0]]
    ns = first.n
    for sd in seeds[1:]:
        if not np.array_equal(traces[sd].n, ns):
            raise ValueError("traces have different checkpoints")
    burn = first.burn_in if burn_in is None else burn_in
    cols: dict[str, np.ndarray] = {"n": ns.copy()}
    for c in ("alpha_n", "t_n", "lil_scale"):
        cols[c] = first.columns[c].copy()
    for name in AGG_FIELDS:
        stack = np.vstack([traces[sd].columns[name] for sd in seeds])
        cols[f"{name}_median"], cols[f"{name}_q10"], cols[f"{name}_q90"] = _quantiles(stack)
    sups = np.vstack([_running_sup(ns, traces[sd].columns["lil_ratio"], burn) for sd in seeds])
    cols["lil_sup_median"] = _quantiles(sups)[0]
    win = window or (min(1000, horizon), horizon)
    return AggregateResult(columns=cols, schedule=schedule, burn_in=burn, horizon=horizon,
                           seeds=seeds, window=(int(win[0]), int(win[1])),
                           lil_trend=lil_trend(ns, cols["lil_sup_median"], horizon))


def _quantiles(stack: np.ndarray):
    out = []
    all_nan = np.all(np.isnan(stack), axis=0)
    safe = np.where(all_nan[None, :], 0.0, stack)
    for qv in (0.5, 0.1, 0.9):
        col = np.nanquantile(safe, qv, axis=0)
        col[all_nan] = np.nan
        out.append(col)
    return out


def _running_sup(ns, ratios, burn_in):
    out = np.full(len(ns), np.nan)
    best = -np.inf
    for i, (n, r) in enumerate(zip(ns, ratios)):
        if n >= burn_in and np.isfinite(r):
            best = max(best, r)
        if np.isfinite(best):
            out[i] = best
    return out


def dyadic_horizons(horizon: int, start: int = 10_000) -> list[int]:
    hs = []
    h = start
    while h <= horizon:
        hs.append(h)
        h *= 2
    if not hs or hs[-1] != horizon:
        hs.append(horizon)
    return hs


def lil_trend(ns, sup_median, horizon: int) -> list[tuple[int, float]]:
    """Median running sup at dyadic horizons from 10^4 (or the horizon)."""
    out = []
    for h in dyadic_horizons(horizon, start=min(10_000, horizon)):
        sel = np.flatnonzero(ns <= h)
        if len(sel):
            out.append((int(h), float(sup_median[sel[-1]])))
    return out


def sup_growth(agg: AggregateResult, lo: int, hi: int) -> float:
    """Relative growth of the median running sup between horizons ``lo`` and ``hi``."""
    ns, sup = agg.n, agg.columns["lil_sup_median"]
    a = sup[np.flatnonzero(ns <= lo)[-1]]
    b = sup[np.flatnonzero(ns <= hi)[-1]]
    return float(b / a - 1.0)


# --------------------------------------------------------------------------
# experiment driver


def _header(cfg: ExperimentConfig, inst_hash: str, extra: str = "", per_seed: bool = False) -> str:
    # per-seed files omit the full config hash (it covers the seed list), so
    # dropping one seed leaves the other traces byte-identical
    lines = [f"dsalab {__version__}"]
    if not per_seed:
        lines.append(f"config_sha256={cfg.digest()}")
    lines += [f"run_sha256={cfg.run_digest()}", f"instance_sha256={inst_hash}"]
    if extra:
        lines.append(extra)
    return "\n".join(lines)


def run_experiment(config: ExperimentConfig, out=None, jobs: int | None = None,
                   force: bool | None = None, base=None) -> AggregateResult:
    """Run every seed, write traces, aggregate and metadata, return the aggregate.

    Raises
    ------
    AssumptionVeto
        When the instance fails an assumption check and ``force`` is off.
    """
    force = config.force if force is None else force
    out_dir = Path(out or config.out or os.environ.get(OUT_ENV, "dsalab-out"))
    base_path = Path(base) if base else None
    inst = build_instance(config.instance, config.gossip, base_path)
    inst_hash = inst.digest()
    try:
        truth_a = inst.truth.a_mat
        schedule = resolve_schedule(config.schedule, truth_a, inst.gossip)
    except Exception:
        schedule = None
        if not force:
            raise
    report = verify_assumptions(inst, schedule)
    if not report.passed and not force:
        raise AssumptionVeto(f"instance fails assumption checks:\n{report}", report=report)

    run_cfg = config.run_dict()
    run_cfg["instance"] = {"inline": inst.to_dict()}
    run_cfg["gossip"] = None
    tasks = [(run_cfg, sd, None) for sd in config.seeds]
    jobs = jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_run_seed_safe, tasks))
    else:
        results = [_run_seed_safe(t) for t in tasks]

    out_dir.mkdir(parents=True, exist_ok=True)
    traces, excluded = {}, {}
    for sd, trace, err in results:
        if trace is None:
            log.warning("seed %d diverged and is excluded: %s", sd, err)
            excluded[sd] = err
            continue
        traces[sd] = trace
        trace.to_csv(out_dir / f"trace_seed{sd}.csv",
                     comment=_header(config, inst_hash, f"seed={sd}", per_seed=True))
    if not traces:
        raise NonFinite("every seed diverged")

    window = tuple(config.window) if config.window else None
    agg = aggregate_traces(traces, schedule, config.horizon, window=window)
    agg.excluded = excluded
    agg.report = report
    if config.diagnostics.get("covariance"):
        agg.covariance = covariance_summary(traces, config.horizon)
    agg.to_csv(out_dir / "aggregate.csv", comment=_header(config, inst_hash))
    agg.meta = _metadata(config, agg, inst, inst_hash, force)
    (out_dir / "metadata.json").write_text(json.dumps(agg.meta, indent=1, sort_keys=True) + "\n")
    return agg


def covariance_summary(traces: dict[int, RateTrace], horizon: int) -> dict:
    """Median across seeds of the exact conditional covariance of ``pi M`` and
    its relative change over the last decade of steps."""
    lo_target = max(1, horizon // 10)
    finals, changes = [], []
    for tr in traces.values():
        covs = tr.meta.get("covariance")
        if not covs:
            continue
        ns = np.array(sorted(covs))
        lo = ns[ns <= lo_target][-1] if np.any(ns <= lo_target) else ns[0]
        c_hi, c_lo = covs[int(ns[-1])], covs[int(lo)]
        finals.append(c_hi)
        changes.append(float(np.linalg.norm(c_hi - c_lo) / max(np.linalg.norm(c_hi), 1e-300)))
    if not finals:
        return {}
    change = float(np.median(changes))
    return {"final_median": np.median(np.stack(finals), axis=0).tolist(),
            "relative_change_last_decade": change,
            "stabilized": change < 0.05}


def _metadata(cfg: ExperimentConfig, agg: AggregateResult, inst: TdInstance,
              inst_hash: str, force: bool) -> dict:
    fits = {k: asdict(v) for k, v in agg.fits().items()}
    theory = theoretical_rate_exponents(agg.schedule)
    return {
        "artifact": "dsalab", "version": __version__,
        "config": cfg.to_dict(), "config_sha256": cfg.digest(),
        "run_sha256": cfg.run_digest(), "instance_sha256": inst_hash,
        "instance": inst.to_dict(),
        "schedule_resolved": agg.schedule.to_dict(),
        "force": bool(force), "burn_in": agg.burn_in, "horizon": agg.horizon,
        "seeds_used": agg.seeds, "seeds_excluded": {str(k): v for k, v in agg.excluded.items()},
        "assumptions": agg.report.to_dict() if agg.report else None,
        "window": list(agg.window), "fits": fits,
        "theory": {"agreement": theory[0], "disagreement": theory[1]},
        "lil_trend": [list(p) for p in agg.lil_trend],
        "covariance": agg.covariance,
        "ground_truth": {"theta_star": inst.truth.theta_star.tolist(),
                         "lambda_min": inst.truth.drift.lambda_min,
                         "pi": inst.pi.tolist()},
    }


def load_aggregate(path) -> AggregateResult:
    """Read ``aggregate.csv`` (or its directory) plus the sibling ``metadata.json``."""
    path = Path(path)
    if path.is_dir():
        path = path / "aggregate.csv"
    meta = json.loads((path.parent / "metadata.json").read_text())
    cols = read_csv_columns(path)
    cols["n"] = cols["n"].astype(np.int64)
    return AggregateResult(
        columns=cols, schedule=StepsizeSchedule.from_dict(meta["schedule_resolved"]),
        burn_in=int(meta["burn_in"]), horizon=int(meta["horizon"]),
        seeds=list(meta["seeds_used"]), window=tuple(meta["window"]),
        lil_trend=[tuple(p) for p in meta.get("lil_trend", [])], meta=meta,
    )


# --------------------------------------------------------------------------
# reports


@dataclass
class RateCheck:
    quantity: str
    fitted: float
    theory: float
    tolerance: float
    passed: bool | None  # None: not computable


def rate_checks(agg: AggregateResult, lil_from: int | None = None) -> list[RateCheck]:
    post = np.sum(agg.n >= max(agg.burn_in, 1))
    if post < 10:
        raise TooFewPoints(f"only {post} checkpoints after burn-in")
    th_agree, th_dis = theoretical_rate_exponents(agg.schedule)
    checks = []
    fits = agg.fits()
    fa, fd = fits.get("agreement"), fits.get("disagreement")
    if fa is not None:
        checks.append(RateCheck("agreement_slope", fa.slope, th_agree, AGREEMENT_TOL,
                                abs(fa.slope - th_agree) <= AGREEMENT_TOL))
    else:
        checks.append(RateCheck("agreement_slope", math.nan, th_agree, AGREEMENT_TOL, None))
    if fd is not None:
        checks.append(RateCheck("disagreement_slope", fd.slope, th_dis, DISAGREEMENT_TOL,
                                abs(fd.slope - th_dis) <= DISAGREEMENT_TOL))
    else:
        checks.append(RateCheck("disagreement_slope", math.nan, th_dis, DISAGREEMENT_TOL, None))
    if fa is not None and fd is not None:
        rel = fd.slope - 2.0 * fa.slope
        checks.append(RateCheck("relative_rate (dis - 2 agr)", rel, 0.0, RELATIVE_TOL,
                                abs(rel) <= RELATIVE_TOL))
    lo = lil_from or max(agg.horizon // 10, 1)
    sup = agg.columns.get("lil_sup_median")
    if sup is not None and np.any(np.isfinite(sup[agg.n <= lo])):
        growth = sup_growth(agg, lo, agg.horizon)
        checks.append(RateCheck(f"lil_sup_growth {lo}->{agg.horizon}", growth, 0.0,
                                LIL_GROWTH_MAX, growth < LIL_GROWTH_MAX))
    return checks


def rates_report(agg: AggregateResult, lil_from: int | None = None) -> tuple[str, str]:
    """Fitted versus theoretical exponents and the lil trend; returns ``(text, csv)``."""
    checks = rate_checks(agg, lil_from)
    lines = [f"schedule: {agg.schedule.to_dict()}",
             f"window: n in [{agg.window[0]}, {agg.window[1]}], seeds: {len(agg.seeds)}",
             f"{'quantity':<34}{'fitted':>12}{'theory':>10}{'tol':>8}  status"]
    rows = ["quantity,fitted,theory,tolerance,status"]
    for c in checks:
        status = "n/a" if c.passed is None else ("PASS" if c.passed else "FAIL")
        lines.append(f"{c.quantity:<34}{c.fitted:>12.4f}{c.theory:>10.4f}{c.tolerance:>8.2f}  {status}")
        rows.append(f"{c.quantity},{fmt(c.fitted)},{fmt(c.theory)},{fmt(c.tolerance)},{status}")
    if agg.lil_trend:
        lines.append("median running sup of |x_n - x*| / sqrt(alpha_n ln t_(n+1)):")
        for h, v in agg.lil_trend:
            lines.append(f"  n <= {h:>9d}: {v:.4f}")
    return "\n".join(lines) + "\n", "\n".join(rows) + "\n"


def plot_data(agg: AggregateResult) -> str:
    """Plot-ready CSV: log medians with theory lines of the predicted slopes.

    Each theory line is anchored at the least-squares intercept of its median
    curve over the fit window, with the slope held at the predicted exponent.
    """
    ns = agg.n.astype(float)
    th_agree, th_dis = theoretical_rate_exponents(agg.schedule)
    sel = (ns >= max(1, agg.window[0])) & (ns <= agg.window[1])
    ln_n = np.log(np.where(ns > 0, ns, np.nan))

    def logs(name):
        v = agg.columns[f"{name}_median"]
        return np.log(np.where(v > 0, v, np.nan))

    la, ld = logs("agreement"), logs("disagreement")

    def anchor(ly, slope):
        ok = sel & np.isfinite(ly)
        return float(np.mean(ly[ok] - slope * ln_n[ok])) if ok.any() else 0.0

    ca, cd = anchor(la, th_agree), anchor(ld, th_dis)
    lines = ["ln_n,ln_agreement_median,ln_disagreement_median,lil_ratio_median,"
             "theory_agreement_line,theory_disagreement_line"]
    for i in np.flatnonzero(ns >= 1):
        lines.append(",".join(fmt(v) for v in (
            ln_n[i], la[i], ld[i], agg.columns["lil_ratio_median"][i],
            th_agree * ln_n[i] + ca, th_dis * ln_n[i] + cd)))
    return "\n".join(lines) + "\n"
