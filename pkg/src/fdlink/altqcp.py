"""Alternating weighted-MSE minimization with closed-form block updates.

Both directions' precoders and receive filters are updated in turn. The
receiver step is an MMSE filter against everything the design model predicts
the receiver will see; the precoder step solves a per-direction convex
quadratically-constrained program in closed form, with a scalar dual variable
enforcing the distortion-aware transmit power budget.

All updates take an optional list of channel scenarios (used by the robust
cutting-set loop, which designs against an averaged objective); the nominal
algorithm is the single-scenario case with the estimated channels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import (DIRECTIONS, ChannelRealization, PerformanceReport,
                    SystemConfig, TransceiverDesign, covariance_stacks,
                    mse_matrix, power_usage, rate)
from .util import ConfigError, DualSearchError, crandn, dagger, herm, rng_from, stabilized


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 100
    rel_tol: float = 1e-6
    dual_tol: float = 1e-9        # absolute tolerance on the power residual
    init: str = "rsm"             # "rsm" (right-singular-vector) or "random"
    init_seed: int = None
    max_cuts: int = 8             # cutting-set loop only
    cut_rel_tol: float = 1e-3


def identity_weights(config: SystemConfig):
    return [np.broadcast_to(np.eye(config.streams[i], dtype=complex),
                            (config.subcarriers, config.streams[i],
                             config.streams[i])).copy()
            for i in DIRECTIONS]


def init_precoders(channels: ChannelRealization, config: SystemConfig,
                   mode: str = "rsm", seed=None):
    """Starting precoders, scaled (one scalar per direction) so the
    distortion-aware power usage equals the budget exactly.

    rsm: columns are the dominant right singular vectors of the estimated
    desired channel per subcarrier. random: seeded complex Gaussian entries.
    """
    out = []
    for i in DIRECTIONS:
        k, n, d = config.subcarriers, config.tx_antennas[i], config.streams[i]
        if mode == "rsm":
            # numpy svd returns rows of vh as right singular vectors, descending
            _, _, vh = np.linalg.svd(channels.h_est[(i, i)], full_matrices=False)
            v = dagger(vh[:, :d, :])
        elif mode == "random":
            v = crandn(rng_from(seed if seed is not None else 0), (k, n, d))
        else:
            raise ConfigError(f"unknown precoder init mode {mode!r}")
        used = power_usage(v, config.tx_distortion[i], k)
        scale = np.sqrt(config.p_max[i] / used) if used > 0 else 0.0
        out.append(v * scale)
    return out


# ---------------------------------------------------------------------------
# scenario plumbing: a scenario is a full channel dict the design treats as a
# possible truth; SIC is always referenced to the estimated channels.
# ---------------------------------------------------------------------------

def _scenario_sigma(precoders, g, sic, config):
    """Design-model interference covariance stacks for one scenario, including
    the SIC residual when the scenario deviates from the SIC reference."""
    sigmas = covariance_stacks(precoders, g, config)
    for i in DIRECTIONS:
        j = 1 - i
        d = g[(i, j)] - sic[(i, j)]
        if np.any(d):
            dv = d @ precoders[j]
            sigmas[i] = sigmas[i] + np.einsum("kmd,kpd->kmp", dv, dv.conj())
    return sigmas


def _receiver_step(precoders, scenarios, sic, config):
    """Linear MMSE receivers for the (scenario-averaged) design objective."""
    decoders = []
    for i in DIRECTIONS:
        m = config.rx_antennas[i]
        acc = np.zeros((config.subcarriers, m, m), dtype=complex)
        rhs = np.zeros((config.subcarriers, m, config.streams[i]), dtype=complex)
        for weight, g in scenarios:
            sig = _scenario_sigma(precoders, g, sic, config)[i]
            hv = g[(i, i)] @ precoders[i]
            acc += weight * (sig + np.einsum("kmd,kpd->kmp", hv, hv.conj()))
            rhs += weight * hv
        decoders.append(np.linalg.solve(stabilized(herm(acc)), rhs))
    return decoders


def _weighted_decoder_grams(decoders, mse_weights):
    """W_j^l = U S U^H per direction and subcarrier."""
    return [np.einsum("kmd,kde,kpe->kmp", decoders[j], mse_weights[j],
                      decoders[j].conj()) for j in DIRECTIONS]


def _leakage_stacks(decoders, mse_weights, g, config):
    """Distortion-leakage quadratic terms for the precoder update of every
    direction, all subcarriers at once.

    J_i^k = sum_l sum_j [ H_ji^k^H diag(U_j^l S_j^l U_j^l^H Theta_rx,j) H_ji^k
                          + diag(H_ji^l^H U_j^l S_j^l U_j^l^H H_ji^l Theta_tx,i) ]
    """
    grams = _weighted_decoder_grams(decoders, mse_weights)
    rx_profile = [config.rx_distortion[j]
                  * np.einsum("kmm->m", grams[j]).real for j in DIRECTIONS]
    out = []
    for i in DIRECTIONS:
        n = config.tx_antennas[i]
        term1 = np.zeros((config.subcarriers, n, n), dtype=complex)
        diag2 = np.zeros(n)
        for j in DIRECTIONS:
            h = g[(j, i)]
            term1 += np.einsum("kmn,m,kmp->knp", h.conj(), rx_profile[j], h)
            diag2 += np.einsum("kmn,kmp,kpn->n", h.conj(), grams[j], h).real
        diag2 = config.tx_distortion[i] * diag2
        term1[:, np.arange(n), np.arange(n)] += diag2[None, :]
        out.append(herm(term1))
    return out


def leakage_matrix(decoders, mse_weights, channels: ChannelRealization,
                   config: SystemConfig, i: int, k: int) -> np.ndarray:
    """Public single-(i, k) view of the leakage term, on estimated channels."""
    return _leakage_stacks(decoders, mse_weights, channels.h_est, config)[i][k]


def _solve_power_dual(quad, rhs, scale_diag, p_max, tol):
    """min_V sum_k tr(V^H A^k V) - 2 Re tr(C^k^H V) s.t. tr(B sum_k V V^H) <= P
    with B = diag(scale_diag) > 0; returns (V stack, dual iota >= 0).

    V(iota) = (A + iota B)^{-1} C; the power is a rational function of iota
    whose coefficients come from one batched eigendecomposition, so the
    bracketing/bisection runs on scalars.
    """
    k, n, _ = quad.shape
    if p_max <= 0 or not np.any(rhs):
        return np.zeros_like(rhs), 0.0
    bs = 1.0 / np.sqrt(scale_diag)
    whitened = herm(quad * bs[None, :, None] * bs[None, None, :])
    lam, basis = np.linalg.eigh(whitened)
    lam = np.maximum(lam, 0.0)
    coeff = np.einsum("knm,knd->kmd", basis.conj(), bs[None, :, None] * rhs)
    weight = np.einsum("kmd,kmd->km", coeff, coeff.conj()).real
    total = weight.sum()
    if total <= 0:
        return np.zeros_like(rhs), 0.0

    def power_of(iota):
        return float((weight / (lam + iota) ** 2).sum())

    def slope_of(iota):
        return float((-2.0 * weight / (lam + iota) ** 3).sum())

    # power at iota -> 0+: null-space weights of an exactly-consistent system
    # are pure roundoff; treat them as zero, otherwise the limit is infinite
    lam_floor = max(lam.max(), 1.0) * 1e-14
    tiny_w = total * 1e-13
    live = weight > tiny_w
    blocked = live & (lam <= lam_floor)
    if np.any(blocked):
        p_zero = np.inf
    else:
        safe = np.where(live, np.maximum(lam, lam_floor), 1.0)
        p_zero = float((np.where(live, weight, 0.0) / safe ** 2).sum())

    if p_zero <= p_max:
        v = np.linalg.solve(stabilized(quad), rhs)
        return v, 0.0

    hi = 1.0
    for _ in range(60):
        if power_of(hi) < p_max:
            break
        hi *= 2.0
    else:
        raise DualSearchError("power dual bracket expansion exceeded 60 doublings")
    lo = 0.0
    iota = hi
    residual = power_of(iota) - p_max
    for _ in range(400):
        if abs(residual) <= tol:
            break
        mid = 0.5 * (lo + hi)
        # Newton candidate accelerates the tail; fall back to plain bisection
        slope = slope_of(iota)
        newton = iota - residual / slope if slope < 0 else mid
        iota = newton if lo < newton < hi else mid
        residual = power_of(iota) - p_max
        if residual > 0:
            lo = iota
        else:
            hi = iota
    v = np.linalg.solve(quad + iota * np.diag(scale_diag)[None, :, :], rhs)
    return v, float(iota)


def _precoder_step(decoders, mse_weights, scenarios, sic, config, dual_tol):
    """Exact minimizer of the (scenario-averaged) weighted MSE over both
    directions' precoders, each under its own power constraint."""
    grams = _weighted_decoder_grams(decoders, mse_weights)
    precoders, duals = [], []
    for i in DIRECTIONS:
        n = config.tx_antennas[i]
        quad = np.zeros((config.subcarriers, n, n), dtype=complex)
        rhs = np.zeros((config.subcarriers, n, config.streams[i]), dtype=complex)
        for weight, g in scenarios:
            leak = _leakage_stacks(decoders, mse_weights, g, config)[i]
            hu = np.einsum("kmn,kmd->knd", g[(i, i)].conj(), decoders[i])
            signal = np.einsum("knd,kde,kpe->knp", hu, mse_weights[i], hu.conj())
            quad += weight * (leak + signal)
            rhs += weight * np.einsum("knd,kde->kne", hu, mse_weights[i])
            j = 1 - i
            d = g[(j, i)] - sic[(j, i)]      # residual SI leaks through the error
            if np.any(d):
                quad += weight * np.einsum("kmn,kmp,kpq->knq", d.conj(), grams[j], d)
        scale = 1.0 + config.subcarriers * config.tx_distortion[i]
        v, iota = _solve_power_dual(herm(quad), rhs, scale, config.p_max[i], dual_tol)
        precoders.append(v)
        duals.append(iota)
    return precoders, tuple(duals)


def _design_objective(precoders, decoders, mse_weights, scenarios, sic, config):
    total = 0.0
    for weight, g in scenarios:
        sigmas = _scenario_sigma(precoders, g, sic, config)
        for i in DIRECTIONS:
            for k in range(config.subcarriers):
                e = mse_matrix(decoders[i][k], precoders[i][k], sigmas[i][k],
                               g[(i, i)][k])
                total += weight * np.trace(mse_weights[i][k] @ e).real
    return float(total)


# ---------------------------------------------------------------------------
# public single-step wrappers (nominal: estimated channels, one scenario)
# ---------------------------------------------------------------------------

def update_receivers(precoders, channels: ChannelRealization, config: SystemConfig):
    return _receiver_step(precoders, [(1.0, channels.h_est)], channels.h_est, config)


def update_precoders(decoders, mse_weights, channels: ChannelRealization,
                     config: SystemConfig, dual_tol: float = 1e-9):
    return _precoder_step(decoders, mse_weights, [(1.0, channels.h_est)],
                          channels.h_est, config, dual_tol)


def _design_view_report(precoders, decoders, mse_weights, scenarios, sic, config):
    """Design-time per-(i, k) metrics for the report (first scenario's view)."""
    _, g = scenarios[0]
    sigmas = _scenario_sigma(precoders, g, sic, config)
    k_count = config.subcarriers
    mse = np.zeros((2, k_count))
    rate_bits = np.zeros((2, k_count))
    for i in DIRECTIONS:
        for k in range(k_count):
            e = mse_matrix(decoders[i][k], precoders[i][k], sigmas[i][k],
                           g[(i, i)][k])
            mse[i, k] = np.trace(e).real
            rate_bits[i, k] = rate(precoders[i][k], sigmas[i][k], g[(i, i)][k])
    power = np.array([power_usage(precoders[i], config.tx_distortion[i], k_count)
                      for i in DIRECTIONS])
    return mse, rate_bits, power


def run_altqcp_scenarios(scenarios, sic, config: SystemConfig,
                         options: SolverOptions, mse_weights=None,
                         init_precoders_override=None, channels_for_init=None):
    """Core loop shared by the nominal solver and the cutting-set designer."""
    weights = mse_weights if mse_weights is not None else identity_weights(config)
    if init_precoders_override is not None:
        precoders = [v.copy() for v in init_precoders_override]
    else:
        precoders = init_precoders(channels_for_init, config, options.init,
                                   options.init_seed)
    decoders = _receiver_step(precoders, scenarios, sic, config)
    trace = [_design_objective(precoders, decoders, weights, scenarios, sic, config)]
    seconds, half_steps, slackness = [], [], []
    duals = (0.0, 0.0)
    converged = False
    iterations = 0
    for _ in range(options.max_iters):
        t0 = time.perf_counter()
        precoders, duals = _precoder_step(decoders, weights, scenarios, sic,
                                          config, options.dual_tol)
        after_v = _design_objective(precoders, decoders, weights, scenarios, sic, config)
        decoders = _receiver_step(precoders, scenarios, sic, config)
        after_u = _design_objective(precoders, decoders, weights, scenarios, sic, config)
        seconds.append(time.perf_counter() - t0)
        half_steps.append((after_v, after_u))
        slackness.append(tuple(
            (duals[i], power_usage(precoders[i], config.tx_distortion[i],
                                   config.subcarriers)) for i in DIRECTIONS))
        trace.append(after_u)
        iterations += 1
        if abs(trace[-1] - trace[-2]) <= options.rel_tol * max(abs(trace[-2]), 1e-300):
            converged = True
            break
    design = TransceiverDesign(precoders=tuple(precoders), decoders=tuple(decoders),
                               mse_weights=tuple(weights), duals=duals)
    mse, rate_bits, power = _design_view_report(precoders, decoders, weights,
                                                scenarios, sic, config)
    report = PerformanceReport(
        mse=mse, rate_bits=rate_bits, power=power, objective_trace=trace,
        iteration_seconds=seconds, iterations=iterations, converged=converged,
        extras={"half_step_objectives": half_steps, "power_slackness": slackness},
    )
    return design, report


def run_altqcp(channels: ChannelRealization, config: SystemConfig,
               options: SolverOptions = None, mse_weights=None):
    """Weighted sum-MSE minimizer (identity weights by default), designing on
    the estimated channels. Returns (TransceiverDesign, PerformanceReport)."""
    options = options or SolverOptions(max_iters=config.max_iters,
                                       rel_tol=config.rel_tol)
    return run_altqcp_scenarios([(1.0, channels.h_est)], channels.h_est, config,
                                options, mse_weights=mse_weights,
                                channels_for_init=channels)
