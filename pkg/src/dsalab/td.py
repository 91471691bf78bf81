"""Multi-agent MDP, distributed TD(0) with linear features, and exact ground
truth.

Conventions
-----------
Parameters are row vectors and the drift matrix acts on the right:
``theta A`` with ``A = E[phi(s)' phi(s) - disc * phi(s~)' phi(s)]``, where
``phi(s)`` is a row of the feature matrix. This is the transpose of the
textbook TD(0) matrix. ``disc`` is the discount factor; the stepsize exponent
lives in :mod:`dsalab.schedule` as ``gamma_exp``.

Joint actions are flattened with ``np.ravel_multi_index`` over the per-agent
action counts; kernels have shape ``(L, n_joint, L)`` and rewards
``(m, L, n_joint, L)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .engine import DriveSpec
from .errors import (
    GossipError,
    NotPositiveDefinite,
    PeriodicChain,
    RankDeficientFeatures,
    ReducibleChain,
    SingularA,
)
from .schedule import StepsizeSchedule
from .spectral import (
    DriftMatrix,
    check_stochastic,
    drift_spectrum,
    graph_period,
    is_strongly_connected,
    projector,
    random_gossip,
    stationary_vector,
    validate_gossip,
)

MAX_AGENTS = 4
MAX_ACTIONS = 3


@dataclass(frozen=True)
class MdpModel:
    n_states: int
    action_counts: tuple[int, ...]
    kernel: np.ndarray  # (L, n_joint, L)
    rewards: np.ndarray  # (m, L, n_joint, L)
    disc: float
    gossip: np.ndarray  # raw m x m entries, certified on use

    def __post_init__(self):
        L, nj = self.n_states, self.n_joint
        if self.kernel.shape != (L, nj, L):
            raise ValueError(f"kernel shape {self.kernel.shape} != {(L, nj, L)}")
        if self.rewards.shape != (self.m, L, nj, L):
            raise ValueError(f"rewards shape {self.rewards.shape} != {(self.m, L, nj, L)}")
        if np.any(self.kernel < 0) or np.max(np.abs(self.kernel.sum(axis=-1) - 1.0)) > 1e-12:
            raise ValueError("every kernel row must be a probability vector")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.disc < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.m > MAX_AGENTS or max(self.action_counts) > MAX_ACTIONS:
            raise ValueError(f"joint action tables are capped at {MAX_AGENTS} agents x {MAX_ACTIONS} actions")

    @property
    def m(self) -> int:
        return len(self.action_counts)

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.action_counts))


@dataclass(frozen=True)
class PolicyModel:
    """Per-agent stationary policies ``mu_i(a_i | s)``, each ``(L, |U_i|)``."""

    local: tuple[np.ndarray, ...]

    def __post_init__(self):
        for i, p in enumerate(self.local):
            if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-12:
                raise ValueError(f"policy of agent {i} is not a distribution in every state")

    def joint(self) -> np.ndarray:
        """``mu(a | s) = prod_i mu_i(a_i | s)`` as an ``(L, n_joint)`` table."""
        out = self.local[0]
        for p in self.local[1:]:
            out = (out[:, :, None] * p[:, None, :]).reshape(out.shape[0], -1)
        return out


@dataclass(frozen=True)
class InducedChain:
    p_mu: np.ndarray
    varphi: np.ndarray


@dataclass(frozen=True)
class FeatureMatrix:
    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] > phi.shape[0]:
            raise RankDeficientFeatures(f"feature matrix shape {phi.shape} cannot have full column rank")
        smin = np.linalg.svd(phi, compute_uv=False).min()
        if smin <= 1e-8:
            raise RankDeficientFeatures(f"smallest singular value {smin:.3e} <= 1e-8")

    @property
    def d(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class TdGroundTruth:
    a_mat: np.ndarray
    b_mat: np.ndarray
    theta_star: np.ndarray
    x_star: np.ndarray
    j_mu: np.ndarray
    drift: DriftMatrix


def induce_chain(mdp: MdpModel, policy: PolicyModel) -> InducedChain:
    """State kernel under the joint policy and its stationary distribution."""
    mu = policy.joint()
    p_mu = np.einsum("sa,sat->st", mu, mdp.kernel)
    check_stochastic(p_mu, tol=1e-10)
    if not is_strongly_connected(p_mu):
        raise ReducibleChain("induced state chain is reducible")
    period = graph_period(p_mu)
    if period != 1:
        raise PeriodicChain(f"induced state chain has period {period}")
    varphi = stationary_vector(p_mu).pi
    return InducedChain(p_mu=p_mu, varphi=varphi)


def expected_rewards(mdp: MdpModel, policy: PolicyModel) -> np.ndarray:
    """``rbar[i, s] = E[R_i(s, a, s~)]`` under the policy; shape ``(m, L)``."""
    mu = policy.joint()
    return np.einsum("sa,sat,isat->is", mu, mdp.kernel, mdp.rewards)


def exact_moments(mdp: MdpModel, policy: PolicyModel, chain: InducedChain,
                  features: FeatureMatrix, pi=None) -> TdGroundTruth:
    """``A = E[A_n]``, ``B = E[B_n]``, ``theta* = pi B A^{-1}`` and ``J^mu``."""
    phi = features.phi
    dmat = np.diag(chain.varphi)
    a_mat = (phi - mdp.disc * chain.p_mu @ phi).T @ dmat @ phi
    rbar = expected_rewards(mdp, policy)
    b_mat = (rbar * chain.varphi[None, :]) @ phi
    if pi is None:
        pi = stationary_vector(validate_gossip(mdp.gossip)).pi
    pi = np.asarray(getattr(pi, "pi", pi), dtype=float)
    if np.linalg.cond(a_mat) > 1e12:
        raise SingularA("A is singular for these features and chain")
    try:
        drift = drift_spectrum(a_mat)
    except NotPositiveDefinite as exc:
        raise SingularA(f"A is not positive definite: {exc}") from exc
    theta = np.linalg.solve(a_mat.T, pi @ b_mat)
    j_mu = bellman_value(mdp, policy, chain, pi)
    return TdGroundTruth(a_mat=a_mat, b_mat=b_mat, theta_star=theta,
                         x_star=np.outer(np.ones(mdp.m), theta), j_mu=j_mu, drift=drift)


def bellman_value(mdp: MdpModel, policy: PolicyModel, chain: InducedChain, pi) -> np.ndarray:
    """``J = (I - disc P_mu)^{-1} rbar_pi`` with ``rbar_pi = sum_i pi_i rbar_i``."""
    pi = np.asarray(getattr(pi, "pi", pi), dtype=float)
    r_pi = pi @ expected_rewards(mdp, policy)
    L = mdp.n_states
    return np.linalg.solve(np.eye(L) - mdp.disc * chain.p_mu, r_pi)


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Sample:
    s: int
    a: int
    s_next: int
    rewards: np.ndarray


class TdSampler:
    """i.i.d. ``(s, a, s~)`` draws: ``s ~ varphi``, ``a ~ mu(.|s)``, ``s~ ~ P(.|s, a)``.

    Each sample consumes three uniforms, so block sizes never change the
    stream.
    """

    def __init__(self, mdp: MdpModel, policy: PolicyModel, chain: InducedChain,
                 features: FeatureMatrix, truth: TdGroundTruth | None = None):
        self.mdp, self.features, self.truth = mdp, features, truth
        self._cum_s = np.cumsum(chain.varphi)
        self._cum_a = np.cumsum(policy.joint(), axis=1)
        self._cum_t = np.cumsum(mdp.kernel, axis=2)

    def indices(self, rng: np.random.Generator, count: int):
        u = rng.random((count, 3))
        s = np.minimum(np.searchsorted(self._cum_s, u[:, 0], side="right"), len(self._cum_s) - 1)
        ca = self._cum_a[s]
        a = np.minimum((u[:, 1:2] >= ca).sum(axis=1), ca.shape[1] - 1)
        ct = self._cum_t[s, a]
        t = np.minimum((u[:, 2:3] >= ct).sum(axis=1), ct.shape[1] - 1)
        return s, a, t

    def moments(self, s, a, t):
        """Sampled ``A_n`` (count, d, d) and ``B_n`` (count, m, d)."""
        phi = self.features.phi
        ps, pt = phi[s], phi[t]
        a_n = np.einsum("ki,kj->kij", ps - self.mdp.disc * pt, ps)
        r = self.mdp.rewards[:, s, a, t].T  # (count, m)
        b_n = r[:, :, None] * ps[:, None, :]
        return a_n, b_n

    def draw(self, rng: np.random.Generator, count: int):
        s, a, t = self.indices(rng, count)
        a_n, b_n = self.moments(s, a, t)
        return a_n - self.truth.a_mat, b_n - self.truth.b_mat


def sample_step(mdp: MdpModel, policy: PolicyModel, chain: InducedChain,
                rng: np.random.Generator) -> Sample:
    sampler = TdSampler(mdp, policy, chain, None)
    s, a, t = sampler.indices(rng, 1)
    return Sample(s=int(s[0]), a=int(a[0]), s_next=int(t[0]),
                  rewards=mdp.rewards[:, s[0], a[0], t[0]].copy())


def sample_moments(sample: Sample, mdp: MdpModel, features: FeatureMatrix):
    phi = features.phi
    ps, pt = phi[sample.s], phi[sample.s_next]
    a_n = np.outer(ps - mdp.disc * pt, ps)
    b_n = np.outer(sample.rewards, ps)
    return a_n, b_n


def td_noise(sample: Sample, x_n, truth: TdGroundTruth, features: FeatureMatrix,
             mdp: MdpModel) -> np.ndarray:
    """``M_{n+1} = (B_n - B) - x_n (A_n - A)``."""
    a_n, b_n = sample_moments(sample, mdp, features)
    return (b_n - truth.b_mat) - np.asarray(x_n) @ (a_n - truth.a_mat)


def td_update(x_n, w, sample: Sample, features: FeatureMatrix, mdp: MdpModel,
              alpha: float) -> np.ndarray:
    """Per-agent rule ``theta(i) <- sum_j W_ij theta(j) + alpha (b_n(i) - theta(i) A_n)``."""
    wm = getattr(w, "entries", w)
    a_n, b_n = sample_moments(sample, mdp, features)
    x_n = np.asarray(x_n, dtype=float)
    out = np.empty_like(x_n)
    for i in range(x_n.shape[0]):
        mixed = sum(wm[i, j] * x_n[j] for j in range(x_n.shape[0]) if wm[i, j] != 0)
        out[i] = mixed + alpha * (b_n[i] - x_n[i] @ a_n)
    return out


# --------------------------------------------------------------------------
# instances


@dataclass
class TdInstance:
    """MDP, policy and features bundled with cached derived quantities."""

    mdp: MdpModel
    policy: PolicyModel
    features: FeatureMatrix
    name: str = ""

    @cached_property
    def gossip(self):
        return validate_gossip(self.mdp.gossip)

    @cached_property
    def pi(self) -> np.ndarray:
        return stationary_vector(self.gossip).pi

    @cached_property
    def chain(self) -> InducedChain:
        return induce_chain(self.mdp, self.policy)

    @cached_property
    def truth(self) -> TdGroundTruth:
        return exact_moments(self.mdp, self.policy, self.chain, self.features, self.pi)

    def drive(self) -> DriveSpec:
        return DriveSpec.linear(self.truth.a_mat, self.truth.b_mat)

    def sampler(self) -> TdSampler:
        return TdSampler(self.mdp, self.policy, self.chain, self.features, self.truth)

    def with_gossip(self, entries) -> "TdInstance":
        mdp = MdpModel(self.mdp.n_states, self.mdp.action_counts, self.mdp.kernel,
                       self.mdp.rewards, self.mdp.disc, np.asarray(entries, dtype=float))
        return TdInstance(mdp, self.policy, self.features, name=self.name)

    def enumerate_outcomes(self):
        """All ``(prob, A_n, B_n)`` triples with positive probability."""
        mu = self.policy.joint()
        varphi = self.chain.varphi
        k = self.mdp.kernel
        s, a, t = np.nonzero(varphi[:, None, None] * mu[:, :, None] * k)
        probs = varphi[s] * mu[s, a] * k[s, a, t]
        a_n, b_n = self.sampler().moments(s, a, t)
        return probs, a_n, b_n

    def noise_covariance(self, x) -> np.ndarray:
        """Exact ``E[M' pi' pi M | x_n = x]`` by enumerating all outcomes."""
        probs, a_n, b_n = self.enumerate_outcomes()
        tr = self.truth
        x = np.asarray(x, dtype=float)
        noise = (b_n - tr.b_mat) - np.einsum("ij,kjl->kil", x, a_n - tr.a_mat)
        pm = np.einsum("i,kij->kj", self.pi, noise)
        return np.einsum("k,ki,kj->ij", probs, pm, pm)

    def noise_mean(self, x) -> np.ndarray:
        probs, a_n, b_n = self.enumerate_outcomes()
        tr = self.truth
        x = np.asarray(x, dtype=float)
        noise = (b_n - tr.b_mat) - np.einsum("ij,kjl->kil", x, a_n - tr.a_mat)
        return np.einsum("k,kij->ij", probs, noise)

    # serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        mdp = self.mdp
        return {
            "format": "dsalab-td-instance/1",
            "convention": "row vectors; theta A with A = E[phi(s)' phi(s) - disc phi(s~)' phi(s)] "
                          "(transpose of the textbook TD matrix)",
            "name": self.name,
            "n_states": mdp.n_states,
            "n_agents": mdp.m,
            "action_counts": list(mdp.action_counts),
            "disc": mdp.disc,
            "kernel": mdp.kernel.tolist(),
            "rewards": mdp.rewards.tolist(),
            "policy": [p.tolist() for p in self.policy.local],
            "features": self.features.phi.tolist(),
            "gossip": mdp.gossip.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TdInstance":
        mdp = MdpModel(
            n_states=int(d["n_states"]),
            action_counts=tuple(int(c) for c in d["action_counts"]),
            kernel=np.asarray(d["kernel"], dtype=float),
            rewards=np.asarray(d["rewards"], dtype=float),
            disc=float(d["disc"]),
            gossip=np.asarray(d["gossip"], dtype=float),
        )
        if int(d.get("n_agents", mdp.m)) != mdp.m:
            raise ValueError("n_agents disagrees with action_counts")
        policy = PolicyModel(tuple(np.asarray(p, dtype=float) for p in d["policy"]))
        return cls(mdp, policy, FeatureMatrix(np.asarray(d["features"], dtype=float)),
                   name=d.get("name", ""))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TdInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def random_mdp(n_states: int, n_agents: int, actions_per_agent: int = 2,
               density: float = 0.5, reward_scale: float = 1.0, seed: int = 0,
               n_features: int = 2, disc: float = 0.9):
    """Random instance with strictly positive kernel rows.

    ``density`` controls the edge probability of the random gossip graph.
    Returns ``(MdpModel, PolicyModel, FeatureMatrix)``.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    if n_features > n_states:
        raise ValueError("feature dimension cannot exceed the state count")
    rng = np.random.default_rng(seed)
    counts = (actions_per_agent,) * n_agents
    nj = int(np.prod(counts))
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, nj))
    kernel /= kernel.sum(axis=-1, keepdims=True)
    rewards = reward_scale * rng.random((n_agents, n_states, nj, n_states))
    policy = tuple(rng.dirichlet(np.ones(actions_per_agent), size=n_states)
                   for _ in range(n_agents))
    policy = tuple(p / p.sum(axis=1, keepdims=True) for p in policy)
    w = random_gossip(n_agents, rng, density=density).entries
    for _ in range(100):
        phi = rng.standard_normal((n_states, n_features))
        try:
            features = FeatureMatrix(phi)
            break
        except RankDeficientFeatures:
            continue
    else:
        raise RankDeficientFeatures("no full-rank feature matrix after 100 draws")
    mdp = MdpModel(n_states, counts, kernel, rewards, disc, np.array(w))
    return mdp, PolicyModel(policy), features


def random_instance(**kwargs) -> TdInstance:
    mdp, policy, features = random_mdp(**kwargs)
    return TdInstance(mdp, policy, features, name=f"random:{json.dumps(kwargs, sort_keys=True)}")


def two_state_instance(reward: float = 1.0) -> TdInstance:
    """Single agent, two states, one action, uniform kernel, ``phi = [1, 2]'``,
    discount 0.5. ``A = 1.375``; with unit reward ``b = 1.5`` and
    ``theta* = 12/11``."""
    kernel = np.full((2, 1, 2), 0.5)
    rewards = np.full((1, 2, 1, 2), float(reward))
    mdp = MdpModel(2, (1,), kernel, rewards, 0.5, np.array([[1.0]]))
    policy = PolicyModel((np.ones((2, 1)),))
    return TdInstance(mdp, policy, FeatureMatrix(np.array([[1.0], [2.0]])), name="two-state")


# --------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str) -> None:
        self.checks.append(AssumptionCheck(name, bool(passed), detail))

    def __str__(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.checks]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                           for c in self.checks]}


def verify_assumptions(instance: TdInstance, schedule: StepsizeSchedule | None = None,
                       seed: int = 0) -> AssumptionReport:
    """Check gossip (A1), drift structure (A2), stepsize (A3) and noise (A4).

    Failures are recorded in the report, never raised. Without a schedule the
    stepsize check is reported as not applicable (passing).
    """
    report = AssumptionReport()
    rng = np.random.default_rng(seed)

    try:
        g = validate_gossip(instance.mdp.gossip)
        report.add("A1 gossip", True,
                   f"row stochastic, strongly connected, period {g.period}")
    except GossipError as exc:
        report.add("A1 gossip", False, f"{type(exc).__name__}: {exc}")
        for name in ("A2 drift", "A3 stepsize", "A4 noise"):
            report.add(name, False, "not checked: gossip matrix invalid")
        return report

    try:
        truth = instance.truth
    except (SingularA, ReducibleChain, PeriodicChain) as exc:
        report.add("A2 drift", False, f"{type(exc).__name__}: {exc}")
        for name in ("A3 stepsize", "A4 noise"):
            report.add(name, False, "not checked: no ground truth")
        return report

    drift = truth.drift
    pi, q = instance.pi, projector(instance.pi).q
    h = instance.drive()
    m, d = truth.b_mat.shape
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal((m, d))
        structured = (-np.outer(np.ones(m), pi @ (x - truth.x_star)) @ truth.a_mat
                      + q @ (truth.b_mat - x @ truth.a_mat))
        worst = max(worst, float(np.max(np.abs(h(x) - structured))))
    ok2 = worst <= 1e-10
    report.add("A2 drift", ok2,
               f"yAy' > 0 (sym. part min eig {drift.sym_min:.4g}), lambda_min = {drift.lambda_min:.6g}, "
               f"f1 = 0, f2(x) = -xA identity residual {worst:.2e}")

    if schedule is None:
        report.add("A3 stepsize", True, "not applicable (no schedule given)")
    else:
        ok3, detail = schedule.check_against(drift.lambda_min)
        report.add("A3 stepsize", ok3, f"{schedule.kind}: {detail}")

    mean_worst = 0.0
    for _ in range(3):
        x = truth.x_star + rng.standard_normal((m, d))
        mean_worst = max(mean_worst, float(np.max(np.abs(instance.noise_mean(x)))))
    bounded = bool(np.all(np.isfinite(instance.mdp.rewards)) and np.all(np.isfinite(instance.features.phi)))
    ok4 = mean_worst <= 1e-10 and bounded
    report.add("A4 noise", ok4,
               f"E[M | x] = 0 by enumeration (max {mean_worst:.2e}); rewards and features bounded, "
               "so |pi M| <= C (1 + |x - x*|) and all conditional moments are finite")
    return report


def broadcast_instance(seed: int = 3, n_states: int = 5, n_agents: int = 3,
                       n_features: int = 2, beta: float = 0.5,
                       hub_leak: float = 0.1) -> TdInstance:
    """Hub-and-spoke instance where only the hub (agent 0) earns reward 1.

    The stationary vector of the hub-and-spoke matrix is concentrated on the
    hub, so the pi-weighted limit differs markedly from the limit a uniform
    average of the agents would give.
    """
    from .spectral import broadcast_gossip

    base = random_instance(n_states=n_states, n_agents=n_agents, n_features=n_features, seed=seed)
    rewards = np.zeros_like(base.mdp.rewards)
    rewards[0] = 1.0
    mdp = MdpModel(n_states, base.mdp.action_counts, base.mdp.kernel, rewards, base.mdp.disc,
                   broadcast_gossip(n_agents, beta=beta, hub_leak=hub_leak).entries)
    return TdInstance(mdp, base.policy, base.features, name=f"broadcast seed={seed}")
