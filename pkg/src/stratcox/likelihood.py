"""Negative log stratified partial likelihood and its derivatives.

All quantities are averaged over the total sample size N. Within each
stratum the event-time sums run over the at-risk sets {j : Y_kj >= Y_ki};
they are evaluated with a single reverse sweep over the time-sorted rows,
so the gradient costs O(n_k p) per stratum and the Hessian O(n_k p^2).
Exponentials are guarded by subtracting the per-stratum maximum of the
linear predictor inside every log-sum term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import RiskSetIndex, StratifiedSurvivalDataset, StratumIndex


@dataclass(frozen=True)
class DerivativeBundle:
    """Value, gradient, and optional curvature matrices at one point."""

    beta: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray | None = None
    sigma_hat: np.ndarray | None = None


@dataclass(frozen=True)
class StratumAverages:
    """Risk-set weighted covariate averages at a stratum's event times.

    ``mu0`` is the mean at-risk hazard weight, ``mu1`` the weighted covariate
    mean numerator, ``eta`` their ratio (the weighted average covariate), and
    ``mu2`` (when requested) the weighted second-moment numerator. Event
    times ascend; tied events repeat the same at-risk quantities.
    """

    stratum_id: str
    event_times: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    eta: np.ndarray
    mu2: np.ndarray | None = None


@dataclass(frozen=True)
class WeightedAverages:
    strata: tuple[StratumAverages, ...]


@dataclass(frozen=True)
class BaselineHazard:
    """Per-stratum step functions for the cumulative baseline hazard."""

    stratum_ids: tuple[str, ...]
    jump_times: tuple[np.ndarray, ...]
    cumulative: tuple[np.ndarray, ...]

    def evaluate(self, stratum_id: str, t) -> np.ndarray:
        """Cumulative baseline hazard of one stratum at times ``t``."""
        k = self.stratum_ids.index(stratum_id)
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.jump_times[k], t, side="right")
        padded = np.concatenate([[0.0], self.cumulative[k]])
        return padded[pos]


def _check_inputs(data: StratifiedSurvivalDataset, index: RiskSetIndex, beta):
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != data.p:
        raise ValueError(f"beta has length {beta.size}, expected p={data.p}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    if index.K != data.K:
        raise ValueError("risk index does not match the dataset (stratum count differs)")
    return beta


def _reverse_cumsum(arr: np.ndarray) -> np.ndarray:
    return np.cumsum(arr[::-1], axis=0)[::-1]


# exp(eta - shift) is clipped here before exponentiating so that suffix sums
# stay strictly positive even when the linear-predictor spread within a
# stratum exceeds the exp underflow range; ratios of such sums then degrade
# gracefully to the dominant at-risk subjects instead of dividing 0 by 0.
_EXP_FLOOR = -700.0


def _stratum_exp_parts(st: StratumIndex, beta: np.ndarray):
    """Shifted hazard weights and at-risk suffix sums for one stratum.

    Returns (eta, shift, w, rcw) where w = exp(eta - shift) after max
    subtraction, and rcw[q] = sum_{j >= q} w_j, so the at-risk sum at sorted
    position i is exp(shift) * rcw[risk_start[i]].
    """
    eta = st.covariates @ beta
    shift = float(eta.max()) if eta.size else 0.0
    w = np.exp(np.maximum(eta - shift, _EXP_FLOOR))
    rcw = _reverse_cumsum(w)
    return eta, shift, w, rcw


def _suffix_logsumexp(eta: np.ndarray) -> np.ndarray:
    """L[q] = log sum_{j >= q} exp(eta_j), exact for any finite eta."""
    return np.logaddexp.accumulate(eta[::-1])[::-1]


def neg_log_partial_likelihood(data, index, beta) -> float:
    """Average negative log stratified partial likelihood at ``beta``.

    Each event contributes the linear predictor minus the log of the
    at-risk mean hazard weight (the within-stratum mean, so strata of
    different sizes are comparable); the signed sum is divided by N.
    """
    beta = _check_inputs(data, index, beta)
    total = 0.0
    for st in index.strata:
        if st.event_pos.size == 0:
            continue
        eta = st.covariates @ beta
        log_sum = _suffix_logsumexp(eta)
        rs = st.risk_start[st.event_pos]
        log_mean = log_sum[rs] - np.log(st.n)
        total -= float(np.sum(eta[st.event_pos] - log_mean))
    return total / data.N


def score(data, index, beta) -> np.ndarray:
    """Gradient of the negative log partial likelihood at ``beta``."""
    beta = _check_inputs(data, index, beta)
    g = np.zeros(data.p)
    for st in index.strata:
        if st.event_pos.size == 0:
            continue
        _, _, w, rcw = _stratum_exp_parts(st, beta)
        rcwx = _reverse_cumsum(w[:, None] * st.covariates)
        rs = st.risk_start[st.event_pos]
        eta_bar = rcwx[rs] / rcw[rs, None]
        g -= np.sum(st.covariates[st.event_pos] - eta_bar, axis=0)
    return g / data.N


def sigma_hat(data, index, beta) -> np.ndarray:
    """Outer-product information estimate at ``beta``.

    Averages, over all events, the outer product of the covariate residual
    about the at-risk weighted mean. Symmetric positive semi-definite by
    construction.
    """
    beta = _check_inputs(data, index, beta)
    sig = np.zeros((data.p, data.p))
    for st in index.strata:
        if st.event_pos.size == 0:
            continue
        _, _, w, rcw = _stratum_exp_parts(st, beta)
        rcwx = _reverse_cumsum(w[:, None] * st.covariates)
        rs = st.risk_start[st.event_pos]
        resid = st.covariates[st.event_pos] - rcwx[rs] / rcw[rs, None]
        sig += resid.T @ resid
    return sig / data.N


def hessian(data, index, beta) -> np.ndarray:
    """Second derivative matrix of the negative log partial likelihood.

    Uses the regrouped form: the second-moment part collapses to a single
    weighted Gram matrix with per-row weights w_q * sum over earlier events
    of the inverse at-risk sums, avoiding any n x p x p intermediate.
    """
    beta = _check_inputs(data, index, beta)
    hess = np.zeros((data.p, data.p))
    for st in index.strata:
        if st.event_pos.size == 0:
            continue
        _, _, w, rcw = _stratum_exp_parts(st, beta)
        rcwx = _reverse_cumsum(w[:, None] * st.covariates)
        rs = st.risk_start[st.event_pos]
        inv_s = 1.0 / rcw[rs]
        cum_inv = np.zeros(st.n)
        np.add.at(cum_inv, rs, inv_s)
        cum_inv = np.cumsum(cum_inv)
        hess += (st.covariates * (w * cum_inv)[:, None]).T @ st.covariates
        eta_bar = rcwx[rs] * inv_s[:, None]
        hess -= eta_bar.T @ eta_bar
    hess /= data.N
    return 0.5 * (hess + hess.T)


def derivative_bundle(data, index, beta, with_hessian=False, with_sigma=False) -> DerivativeBundle:
    """Evaluate the likelihood and requested derivatives at one point."""
    beta = _check_inputs(data, index, beta)
    return DerivativeBundle(
        beta=beta,
        value=neg_log_partial_likelihood(data, index, beta),
        gradient=score(data, index, beta),
        hessian=hessian(data, index, beta) if with_hessian else None,
        sigma_hat=sigma_hat(data, index, beta) if with_sigma else None,
    )


def weighted_averages(data, index, beta, with_mu2=False) -> WeightedAverages:
    """Risk-set weighted covariate averages at every event time."""
    beta = _check_inputs(data, index, beta)
    out = []
    for st in index.strata:
        eta, shift, w, rcw = _stratum_exp_parts(st, beta)
        rcwx = _reverse_cumsum(w[:, None] * st.covariates)
        rs = st.risk_start[st.event_pos]
        log_sum = _suffix_logsumexp(eta)
        mu0 = np.exp(log_sum[rs]) / st.n
        mu1 = (rcwx[rs] / rcw[rs, None]) * mu0[:, None] if rs.size else np.empty((0, data.p))
        eta_bar = rcwx[rs] / rcw[rs, None] if rs.size else np.empty((0, data.p))
        mu2 = None
        if with_mu2:
            mu2 = np.empty((rs.size, data.p, data.p))
            for i, q in enumerate(rs):
                wa = w[q:] / rcw[q]
                xa = st.covariates[q:]
                mu2[i] = (xa * wa[:, None]).T @ xa * mu0[i]
        out.append(
            StratumAverages(
                st.stratum_id, st.times[st.event_pos], mu0, mu1, eta_bar, mu2
            )
        )
    return WeightedAverages(tuple(out))


def breslow_baseline(data, index, beta) -> BaselineHazard:
    """Step-function estimate of each stratum's cumulative baseline hazard.

    A jump of 1 over the at-risk hazard-weight sum is placed at every event
    time; tied events at one time pool their jumps.
    """
    beta = _check_inputs(data, index, beta)
    ids, jumps, cums = [], [], []
    for st in index.strata:
        log_sum = _suffix_logsumexp(st.covariates @ beta)
        rs = st.risk_start[st.event_pos]
        increments = np.exp(-log_sum[rs])
        times = st.times[st.event_pos]
        uniq, inverse = np.unique(times, return_inverse=True)
        pooled = np.zeros(uniq.size)
        np.add.at(pooled, inverse, increments)
        ids.append(st.stratum_id)
        jumps.append(uniq)
        cums.append(np.cumsum(pooled))
    return BaselineHazard(tuple(ids), tuple(jumps), tuple(cums))


def eta_gradient_weights(data, index, beta):
    """Per-observation gradient and curvature of the loss in the linear
    predictor, stacked over strata in sorted order.

    Returns (u, w_diag): u_q is the derivative of the averaged loss with
    respect to observation q's linear predictor, and w_diag the
    corresponding diagonal second derivative (nonnegative). Rows follow the
    concatenation of each stratum's time-sorted order; use
    :func:`stacked_covariates` for the matching design matrix.
    """
    beta = _check_inputs(data, index, beta)
    us, ws = [], []
    for st in index.strata:
        if st.event_pos.size == 0:
            us.append(np.zeros(st.n))
            ws.append(np.zeros(st.n))
            continue
        _, _, w, rcw = _stratum_exp_parts(st, beta)
        rs = st.risk_start[st.event_pos]
        add_a = np.zeros(st.n)
        np.add.at(add_a, rs, 1.0 / rcw[rs])
        a = np.cumsum(add_a)
        add_b = np.zeros(st.n)
        np.add.at(add_b, rs, 1.0 / rcw[rs] ** 2)
        b = np.cumsum(add_b)
        phi_a = w * a
        us.append((phi_a - st.events) / data.N)
        ws.append(np.maximum(phi_a - w**2 * b, 0.0) / data.N)
    return np.concatenate(us), np.concatenate(ws)


def stacked_covariates(index: RiskSetIndex) -> np.ndarray:
    """Covariate rows of all strata concatenated in sorted order."""
    return np.vstack([st.covariates for st in index.strata])
