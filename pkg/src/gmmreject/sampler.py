"""Rejection sampling with an empirical supremum and a self-tuning proposal.

The loop draws batches from the current proposal ``g``, raises the
empirical supremum ``C_hat`` to the batch maximum of ``f/g`` *before*
deciding acceptances, and caches every ``log f``. Periodically it refits a
mixture to the cache and refines proposals against the cached ratios; a
new proposal is adopted only when its cache supremum does not exceed the
current ``C_hat``, which starts a new epoch. All constants are in log space.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .initialization import InitConfig, InitReport, initialize
from .proposal import GmmProposal, fit_em
from .refine import RefineResult, max_log_ratio, refine
from .target import LogTarget
from .validation import check_positive, check_target

logger = logging.getLogger(__name__)


class SamplerAborted(RuntimeError):
    """The evaluation budget ran out before ``T`` samples were accepted."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SamplerConfig:
    T: int = 1000
    n_base: int = 500
    c_low_inflate: float = 1.05
    accept_weight: float = 10.0
    gmm_growth: float = 1.5
    gmm_k_cap_divisor: float = 15.0
    refine_steps: int = 800
    refine_checkpoints: tuple = (100, 200, 400, 800)
    refine_lr: float = 0.1
    seed: Optional[int] = 0
    max_evals_per_sample: float = 1e6
    init: InitConfig = field(default_factory=InitConfig)

    def __post_init__(self):
        check_positive("T", self.T, integer=True)
        check_positive("n_base", self.n_base, integer=True)
        for name in ("c_low_inflate", "accept_weight", "gmm_growth", "gmm_k_cap_divisor",
                     "refine_lr", "max_evals_per_sample"):
            check_positive(name, getattr(self, name))
        check_positive("refine_steps", self.refine_steps, integer=True)
        self.refine_checkpoints = tuple(int(c) for c in self.refine_checkpoints)
        if isinstance(self.init, dict):
            self.init = InitConfig(**self.init)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["refine_checkpoints"] = list(self.refine_checkpoints)
        return out


class _Cache:
    """Append-only columns for every candidate drawn so far."""

    def __init__(self, d):
        self.d = d
        self.n = 0
        cap = 4096
        self.X = np.empty((cap, d))
        self.logf = np.empty(cap)
        self.logg = np.empty(cap)
        self.log_u = np.empty(cap)
        self.accepted = np.zeros(cap, dtype=bool)
        self.epoch = np.zeros(cap, dtype=np.int64)

    def _grow(self, need):
        cap = self.X.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("X", "logf", "logg", "log_u", "accepted", "epoch"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[:self.n] = old[:self.n]
            setattr(self, name, new)

    def append(self, X, logf, logg, log_u, accepted, epoch):
        m = X.shape[0]
        self._grow(self.n + m)
        s = slice(self.n, self.n + m)
        self.X[s], self.logf[s], self.logg[s] = X, logf, logg
        self.log_u[s], self.accepted[s], self.epoch[s] = log_u, accepted, epoch
        self.n += m

    def view(self, name):
        return getattr(self, name)[:self.n]


@dataclass
class SamplerState:
    proposal: GmmProposal
    cache: _Cache
    c_hat_log: float = -np.inf
    c_low_log: float = np.inf
    accepted_at_last_fit: int = 0
    f_eval_count: int = 0
    epoch: int = 0
    refine_flag: bool = False
    epoch_proposals: list = field(default_factory=list)
    epoch_final_c_log: list = field(default_factory=list)
    epoch_refines: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    warnings: dict = field(default_factory=lambda: {"degenerate_truncation": 0,
                                                     "proposal_underflow": 0})

    @property
    def n_accepted(self) -> int:
        return int(np.count_nonzero(self.cache.view("accepted")))

    @property
    def n_drawn(self) -> int:
        return self.cache.n


def new_state(proposal: GmmProposal, f_evals: int = 0) -> SamplerState:
    st = SamplerState(proposal, _Cache(proposal.dims), f_eval_count=f_evals)
    st.epoch_proposals.append(proposal)
    st.epoch_final_c_log.append(-np.inf)
    st.epoch_refines.append(None)
    return st


def batch_size(n_base: int, K: int) -> int:
    return int(math.ceil(n_base * max(1.0, math.log(K + 1))))


def batch_step(st: SamplerState, target: LogTarget, rng, cfg: SamplerConfig) -> SamplerState:
    """Draw one batch, update the suprema, and accept against the updated ``C_hat``."""
    g = st.proposal
    B = batch_size(cfg.n_base, g.n_components)
    X, n_deg = g.sample(rng, B, return_degenerate=True)
    st.warnings["degenerate_truncation"] += n_deg
    logg = g.log_density(X)
    logf = target.evaluate(X)
    st.f_eval_count += B
    log_u = np.log(rng.random(B))

    underflow = ~np.isfinite(logg)
    st.warnings["proposal_underflow"] += int(np.count_nonzero(underflow))
    with np.errstate(invalid="ignore"):
        ratio = np.where(underflow, -np.inf, logf - logg)
    c_tilde = float(np.max(ratio))

    if c_tilde > st.c_hat_log or c_tilde > st.c_low_log:
        st.refine_flag = True
    st.c_hat_log = max(st.c_hat_log, c_tilde)
    st.c_low_log = min(st.c_low_log + math.log(cfg.c_low_inflate), c_tilde)

    if np.isfinite(st.c_hat_log):
        accept = (log_u <= ratio - st.c_hat_log) & ~underflow
    else:
        accept = np.zeros(B, dtype=bool)
    st.cache.append(X, logf, logg, log_u, accept, st.epoch)
    st.batches.append({"epoch": st.epoch, "size": B, "batch_sup_log": c_tilde,
                       "c_hat_log": st.c_hat_log, "accepted": int(accept.sum())})
    st.epoch_final_c_log[st.epoch] = st.c_hat_log
    return st


def refit_components(n_accepted: int, d: int, k_cap_divisor: float = 15.0) -> int:
    if n_accepted < 1:
        return 0
    return max(1, int(math.floor(min(math.log2(n_accepted), n_accepted / (d * k_cap_divisor)))))


def refit_due(st: SamplerState, cfg: SamplerConfig) -> bool:
    n_acc = st.n_accepted
    if n_acc < 1:
        return False
    return (n_acc >= cfg.gmm_growth * st.accepted_at_last_fit
            or math.log(n_acc) > 2 * st.proposal.n_components)


def fit_weights(logf, accepted, accept_weight):
    finite = np.isfinite(logf)
    w = np.zeros(logf.shape[0])
    if finite.any():
        w[finite] = np.exp(logf[finite] - logf[finite].max())
    w[accepted] *= accept_weight
    return w


def maybe_refit_gmm(st: SamplerState, rng, cfg: SamplerConfig) -> Optional[GmmProposal]:
    """Fit a candidate mixture to the whole cache when the refit schedule says so."""
    if not refit_due(st, cfg):
        return None
    n_acc = st.n_accepted
    st.accepted_at_last_fit = n_acc
    K = refit_components(n_acc, st.proposal.dims, cfg.gmm_k_cap_divisor)
    c = st.cache
    w = fit_weights(c.view("logf"), c.view("accepted"), cfg.accept_weight)
    X = c.view("X")
    pos = w > 0
    if K < 1 or np.unique(X[pos], axis=0).shape[0] < K:
        return None
    proposal, _ = fit_em(X, w, K, rng, st.proposal.domain)
    return proposal


def _switch_epoch(st: SamplerState, result: RefineResult):
    st.epoch += 1
    st.proposal = result.proposal
    st.c_hat_log = result.achieved_log_ratio_max
    st.c_low_log = result.achieved_log_ratio_max
    st.epoch_proposals.append(result.proposal)
    st.epoch_final_c_log.append(st.c_hat_log)
    st.epoch_refines.append(result.to_dict())


def refine_step(st: SamplerState, candidate: Optional[GmmProposal], cfg: SamplerConfig):
    """Refine the current proposal (and a refit candidate) and adopt the best if valid."""
    c = st.cache
    X, logf = c.view("X"), c.view("logf")
    results = []
    for g0 in [st.proposal] + ([candidate] if candidate is not None else []):
        results.append(refine(g0, X, logf, st.c_hat_log, cfg.refine_steps,
                              cfg.refine_checkpoints, cfg.refine_lr))
    improved = [r for r in results if r.improved]
    st.refine_flag = False
    if not improved:
        return None
    best = min(improved, key=lambda r: r.achieved_log_ratio_max)
    # the cache maximum under the new proposal must not exceed C_hat
    c_bar = max_log_ratio(best.proposal, X, logf)
    if c_bar <= st.c_hat_log:
        best.achieved_log_ratio_max = c_bar
        _switch_epoch(st, best)
        return best
    return None


def audit(st: SamplerState) -> list:
    """Recheck every accepted draw against the final ``C_hat`` of its epoch.

    Returns the cache indices that would have been rejected.
    """
    c = st.cache
    acc = np.flatnonzero(c.view("accepted"))
    epochs = c.view("epoch")[acc]
    violations = []
    for e in np.unique(epochs):
        idx = acc[epochs == e]
        logg = st.epoch_proposals[e].log_density(c.X[idx])
        ok = c.log_u[idx] <= c.logf[idx] - st.epoch_final_c_log[e] - logg
        violations.extend(idx[~ok].tolist())
    return sorted(violations)


@dataclass
class RunReport:
    T: int
    seed: Optional[int]
    acceptance_rate: float
    f_evals: int
    n_accepted: int
    n_drawn: int
    init_report: InitReport
    epochs: list
    batches: list
    audit_violations: list
    warnings: dict
    config: dict
    wall_time: float = 0.0
    tests: dict = field(default_factory=dict)
    aborted: bool = False

    @property
    def audit_passed(self) -> bool:
        return not self.audit_violations

    def to_dict(self) -> dict:
        return {
            "T": self.T, "seed": self.seed, "acceptance_rate": self.acceptance_rate,
            "f_evals": self.f_evals, "n_accepted": self.n_accepted, "n_drawn": self.n_drawn,
            "init_report": self.init_report.to_dict(),
            "epochs": self.epochs, "batches": self.batches,
            "audit": {"passed": self.audit_passed, "violations": self.audit_violations},
            "warnings": self.warnings, "config": self.config, "tests": self.tests,
            "aborted": self.aborted, "wall_time": self.wall_time,
        }


def _report(st, cfg, init_report, t0, aborted=False) -> RunReport:
    epochs = [{"final_C_log": float(cl), "proposal": p.to_dict(), "refine": r}
              for p, cl, r in zip(st.epoch_proposals, st.epoch_final_c_log, st.epoch_refines)]
    n_acc = st.n_accepted
    return RunReport(
        T=cfg.T, seed=cfg.seed,
        acceptance_rate=n_acc / st.f_eval_count if st.f_eval_count else 0.0,
        f_evals=st.f_eval_count, n_accepted=n_acc, n_drawn=st.n_drawn,
        init_report=init_report, epochs=epochs, batches=st.batches,
        audit_violations=audit(st), warnings=dict(st.warnings), config=cfg.to_dict(),
        wall_time=time.perf_counter() - t0, aborted=aborted)


def run(target: LogTarget, cfg: SamplerConfig, return_state: bool = False):
    """Draw ``cfg.T`` samples from ``target``; returns ``(samples, report)``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    proposal, init_report = initialize(target, rng, cfg.init)
    st = new_state(proposal, init_report.f_evals_used)
    budget = cfg.max_evals_per_sample * cfg.T
    while st.n_accepted < cfg.T:
        if st.f_eval_count > budget:
            report = _report(st, cfg, init_report, t0, aborted=True)
            raise SamplerAborted(f"no progress after {st.f_eval_count} evaluations", report)
        batch_step(st, target, rng, cfg)
        if st.n_accepted >= cfg.T:
            break
        candidate = maybe_refit_gmm(st, rng, cfg)
        if candidate is not None:
            st.refine_flag = True
        if st.refine_flag:
            refine_step(st, candidate, cfg)
        logger.debug("epoch %d  accepted %d/%d  C_hat %.4f", st.epoch, st.n_accepted,
                     cfg.T, st.c_hat_log)
    acc = np.flatnonzero(st.cache.view("accepted"))[:cfg.T]
    samples = st.cache.X[acc].copy()
    report = _report(st, cfg, init_report, t0)
    if return_state:
        return samples, report, st
    return samples, report


class RefinedRejectionSampler(BaseEstimator):
    """Estimator wrapper around :func:`run`.

    ``fit(target)`` draws ``n_samples`` points and stores them in
    ``samples_`` together with the run report in ``report_``.
    ``target`` is a :class:`~gmmreject.target.LogTarget` or a plain
    callable log-density (then pass ``dims`` or ``domain`` to ``fit``).
    """

    def __init__(self, n_samples=1000, n_base=500, c_low_inflate=1.05, accept_weight=10.0,
                 gmm_growth=1.5, gmm_k_cap_divisor=15.0, refine_steps=800,
                 refine_checkpoints=(100, 200, 400, 800), refine_lr=0.1, random_state=0):
        self.n_samples = n_samples
        self.n_base = n_base
        self.c_low_inflate = c_low_inflate
        self.accept_weight = accept_weight
        self.gmm_growth = gmm_growth
        self.gmm_k_cap_divisor = gmm_k_cap_divisor
        self.refine_steps = refine_steps
        self.refine_checkpoints = refine_checkpoints
        self.refine_lr = refine_lr
        self.random_state = random_state

    def _config(self) -> SamplerConfig:
        return SamplerConfig(T=self.n_samples, n_base=self.n_base,
                             c_low_inflate=self.c_low_inflate, accept_weight=self.accept_weight,
                             gmm_growth=self.gmm_growth, gmm_k_cap_divisor=self.gmm_k_cap_divisor,
                             refine_steps=self.refine_steps,
                             refine_checkpoints=self.refine_checkpoints,
                             refine_lr=self.refine_lr, seed=self.random_state)

    def fit(self, target, dims=None, domain=None):
        target = check_target(target, dims=dims, domain=domain)
        self.samples_, self.report_, state = run(target, self._config(), return_state=True)
        self.proposal_ = state.proposal
        self.acceptance_rate_ = self.report_.acceptance_rate
        self.n_features_in_ = target.dims
        return self

    def sample(self, target, dims=None, domain=None):
        return self.fit(target, dims=dims, domain=domain).samples_
