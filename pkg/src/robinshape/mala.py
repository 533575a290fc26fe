"""Metropolis-adjusted Langevin sampling with continuous adaptation of the
proposal covariance and step size, batch-means MCSE stopping, and the
Gelman-Rubin diagnostic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import stats


@dataclass
class ChainState:
    m: np.ndarray
    J: float
    grad: np.ndarray
    n_steps: int = 0
    n_accepted: int = 0
    n_invalid: int = 0


@dataclass
class AdaptState:
    """Proposal covariance A (with lower Cholesky factor) and log step size,
    adapted with diminishing weights t^(-exponent)."""

    A: np.ndarray
    chol_A: np.ndarray
    log_tau: float
    mean: np.ndarray
    cov: np.ndarray
    t: int = 0
    # weight offset keeps the early gamma small so the initial proposal
    # covariance is not wiped out by the first few updates
    t_offset: int = 100
    target_accept: float = 0.574
    exponent: float = 0.6
    refresh_every: int = 100
    enabled: bool = True

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))


def make_adapt_state(A_init: np.ndarray, tau_init: float = 0.1,
                     target_accept: float = 0.574, exponent: float = 0.6,
                     refresh_every: int = 100, enabled: bool = True,
                     mean_init: np.ndarray | None = None) -> AdaptState:
    A = np.asarray(A_init, dtype=float).copy()
    mean = (np.zeros(A.shape[0]) if mean_init is None
            else np.asarray(mean_init, dtype=float).copy())
    return AdaptState(A=A, chol_A=sla.cholesky(A, lower=True),
                      log_tau=float(np.log(tau_init)),
                      mean=mean, cov=A.copy(),
                      target_accept=target_accept, exponent=exponent,
                      refresh_every=refresh_every, enabled=enabled)


def _q_norm_sq(chol_A: np.ndarray, x: np.ndarray) -> float:
    """|L x|^2 with L^T L = A^{-1}: for A = C C^T this is |C^{-1} x|^2."""
    z = sla.solve_triangular(chol_A, x, lower=True)
    return float(z @ z)


def mala_step(state: ChainState, adapt_state: AdaptState, target, rng,
              xi: np.ndarray | None = None):
    """One proposal/accept step.  target(m) -> (J, grad); an infinite J or a
    non-finite gradient auto-rejects.  Returns the acceptance probability."""
    tau = adapt_state.tau
    A, C = adapt_state.A, adapt_state.chol_A
    if xi is None:
        xi = rng.standard_normal(state.m.size)
    drift = A @ state.grad
    proposal = state.m - tau * drift + np.sqrt(2.0 * tau) * (C @ xi)

    J_prop, grad_prop = target(proposal)
    if not np.isfinite(J_prop) or grad_prop is None or not np.all(np.isfinite(grad_prop)):
        state.n_steps += 1
        state.n_invalid += 1
        return 0.0

    dm = proposal - state.m
    fwd = _q_norm_sq(C, dm + tau * drift)
    rev = _q_norm_sq(C, -dm + tau * (A @ grad_prop))
    log_ratio = -J_prop + state.J - (rev - fwd) / (4.0 * tau)
    accept_prob = float(min(1.0, np.exp(min(log_ratio, 0.0))))

    state.n_steps += 1
    if np.log(rng.uniform()) < log_ratio:
        state.m = proposal
        state.J = J_prop
        state.grad = grad_prop
        state.n_accepted += 1
    return accept_prob


def adapt(adapt_state: AdaptState, sample: np.ndarray, accept_prob: float):
    """Recursive empirical-covariance update plus Robbins-Monro step tuning.

    The covariance uses running-average (1/t) weights, so it converges to the
    empirical covariance of the whole history; the offset acts as pseudo
    observations of the initial proposal covariance.  The step size uses the
    faster diminishing t^(-exponent) weights."""
    if not adapt_state.enabled:
        return adapt_state
    adapt_state.t += 1
    t_eff = adapt_state.t + adapt_state.t_offset
    gamma_cov = 1.0 / t_eff
    d = sample - adapt_state.mean
    adapt_state.mean = adapt_state.mean + gamma_cov * d
    d2 = sample - adapt_state.mean
    adapt_state.cov = adapt_state.cov + gamma_cov * (np.outer(d2, d2) - adapt_state.cov)
    adapt_state.log_tau += t_eff ** (-adapt_state.exponent) * (
        accept_prob - adapt_state.target_accept)
    if adapt_state.t % adapt_state.refresh_every == 0:
        refresh_proposal(adapt_state)
    return adapt_state


def refresh_proposal(adapt_state: AdaptState):
    n = adapt_state.cov.shape[0]
    eps = 1e-10 * np.trace(adapt_state.cov) / n
    while True:
        try:
            A = adapt_state.cov + eps * np.eye(n)
            chol = sla.cholesky(A, lower=True)
            break
        except sla.LinAlgError:
            eps *= 100.0
    adapt_state.A = A
    adapt_state.chol_A = chol


def mcse_batch_means(samples: np.ndarray) -> np.ndarray:
    """Per-coordinate MCSE from floor(sqrt(n)) non-overlapping batches."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    if n < 100:
        raise ValueError("need at least 100 samples for batch-means MCSE")
    n_b = int(np.floor(np.sqrt(n)))
    b = n // n_b
    means = samples[:n_b * b].reshape(n_b, b, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_b)


def mcse_halfwidth(samples: np.ndarray, confidence: float = 0.98) -> np.ndarray:
    """Confidence halfwidth t_{1-(1-c)/2, n_b - 1} * MCSE per coordinate."""
    n = samples.shape[0]
    n_b = int(np.floor(np.sqrt(n)))
    tcrit = stats.t.ppf(1.0 - (1.0 - confidence) / 2.0, n_b - 1)
    return tcrit * mcse_batch_means(samples)


def stopping_rule(samples: np.ndarray, threshold: float = 0.1,
                  confidence: float = 0.98) -> bool:
    """True iff every coordinate's MCSE halfwidth is below threshold times the
    (empirical) posterior standard deviation."""
    hw = mcse_halfwidth(samples, confidence=confidence)
    std = samples.std(axis=0, ddof=1)
    return bool(np.all(hw < threshold * std))


def gelman_rubin(chains: list) -> np.ndarray:
    """Classical potential-scale-reduction factor per coordinate."""
    if len(chains) < 2:
        raise ValueError("Gelman-Rubin needs at least 2 chains")
    X = np.stack([np.asarray(c, dtype=float) for c in chains])  # (m, n, d)
    n = X.shape[1]
    within = X.var(axis=1, ddof=1).mean(axis=0)
    between_over_n = X.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between_over_n
    return np.sqrt(var_plus / within)


@dataclass
class ChainOutput:
    samples: np.ndarray          # (recorded, n)
    J_trace: np.ndarray
    accept_flags: np.ndarray
    acceptance_rate_trace: list
    mcse: np.ndarray | None
    posterior_std: np.ndarray | None
    converged: bool
    n_burn_in: int
    n_recorded: int
    final_tau: float

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags)) if self.accept_flags.size else 0.0


def run_chain(m_init: np.ndarray, A_init: np.ndarray, target, rng,
              burn_in: int = 10_000, max_steps: int = 500_000,
              check_interval: int = 5_000, mcse_threshold: float = 0.1,
              tau_init: float = 0.1, target_accept: float = 0.574,
              adapt_exponent: float = 0.6, refresh_every: int = 100,
              adapt_after_burn_in: bool = True,
              callback=None) -> ChainOutput:
    """Burn-in with adaptation, then record every state until the batch-means
    MCSE stopping rule fires (checked every check_interval recorded steps) or
    max_steps recorded steps are reached."""
    m0 = np.asarray(m_init, dtype=float).copy()
    J0, g0 = target(m0)
    if not np.isfinite(J0):
        raise ValueError("initial chain state has infinite potential")
    state = ChainState(m=m0, J=J0, grad=g0)
    ad = make_adapt_state(A_init, tau_init=tau_init, target_accept=target_accept,
                          exponent=adapt_exponent, refresh_every=refresh_every,
                          mean_init=m0)

    for _ in range(burn_in):
        ap = mala_step(state, ad, target, rng)
        adapt(ad, state.m, ap)

    ad.enabled = adapt_after_burn_in
    n = m0.size
    samples = np.empty((max_steps, n))
    J_trace = np.empty(max_steps)
    accept_flags = np.zeros(max_steps, dtype=bool)
    rate_trace = []
    converged = False
    recorded = 0
    accepted_before = state.n_accepted

    while recorded < max_steps:
        ap = mala_step(state, ad, target, rng)
        adapt(ad, state.m, ap)
        samples[recorded] = state.m
        J_trace[recorded] = state.J
        accept_flags[recorded] = state.n_accepted > accepted_before
        accepted_before = state.n_accepted
        recorded += 1
        if recorded % check_interval == 0:
            window = samples[:recorded]
            rate_trace.append((recorded, float(np.mean(accept_flags[:recorded]))))
            if callback is not None:
                callback(recorded, state, ad)
            if recorded >= 100 and stopping_rule(window, threshold=mcse_threshold):
                converged = True
                break

    samples = samples[:recorded]
    J_trace = J_trace[:recorded]
    accept_flags = accept_flags[:recorded]
    mcse = mcse_batch_means(samples) if recorded >= 100 else None
    std = samples.std(axis=0, ddof=1) if recorded >= 2 else None
    return ChainOutput(samples=samples, J_trace=J_trace, accept_flags=accept_flags,
                       acceptance_rate_trace=rate_trace, mcse=mcse,
                       posterior_std=std, converged=converged,
                       n_burn_in=burn_in, n_recorded=recorded, final_tau=ad.tau)
