"""Rate-maximization solver: weight updates, surrogate bookkeeping, the
scalar-capacity closed form, and scale invariance of the iterates."""

import numpy as np
import pytest

from conftest import crandn_t
from fdlink import (ChannelRealization, SystemConfig, TransceiverDesign,
                    run_wmmse)
from fdlink.model import DIRECTIONS, PAIRS
from fdlink.util import LN2
from fdlink.wmmse import (surrogate_objective, update_weights,
                          weighted_rate_bits)


def _flat_channels(values):
    h = {pair: np.full((1, 1, 1), values[pair], dtype=complex)
         for pair in PAIRS}
    return ChannelRealization(h=h, h_est={p: h[p].copy() for p in PAIRS},
                              csi_radius={p: np.zeros(1) for p in PAIRS})


def _design(config, precoders, decoders, weights=None):
    if weights is None:
        weights = [np.broadcast_to(np.eye(config.streams[i], dtype=complex),
                                   (config.subcarriers, config.streams[i],
                                    config.streams[i])).copy()
                   for i in DIRECTIONS]
    return TransceiverDesign(precoders=precoders, decoders=decoders,
                             mse_weights=weights)


def test_weights_identity_when_nothing_transmits(default_config,
                                                 default_channels):
    # V = 0, U = 0 -> E = I -> S = I on every subcarrier
    config = default_config
    zeros_v = [np.zeros((config.subcarriers, config.tx_antennas[i],
                         config.streams[i]), dtype=complex)
               for i in DIRECTIONS]
    zeros_u = [np.zeros((config.subcarriers, config.rx_antennas[i],
                         config.streams[i]), dtype=complex)
               for i in DIRECTIONS]
    design = _design(config, zeros_v, zeros_u)
    weights = update_weights(design, default_channels, config)
    for i in DIRECTIONS:
        for k in range(config.subcarriers):
            assert np.max(np.abs(weights[i][k] - np.eye(config.streams[i]))) \
                < 1e-12


def test_scalar_weight_and_surrogate_value():
    # h = v = 1, sigma^2 = 1, u = 1/2 -> E = 1/2, S = 2,
    # per-direction surrogate ln|S| + d - tr(SE) = ln 2, i.e. one bit
    config = SystemConfig.from_scalars(subcarriers=1, antennas=1, streams=1,
                                       noise_var=1.0, kappa=0.0, beta=0.0,
                                       csi_radius=0.0)
    channels = _flat_channels({(0, 0): 1.0, (1, 1): 1.0,
                               (0, 1): 0.0, (1, 0): 0.0})
    ones = np.ones((1, 1, 1), dtype=complex)
    design = _design(config, [ones.copy() for _ in DIRECTIONS],
                     [0.5 * ones.copy() for _ in DIRECTIONS])
    weights = update_weights(design, channels, config)
    for i in DIRECTIONS:
        assert abs(weights[i][0, 0, 0] - 2.0) < 1e-12
    tight = _design(config, design.precoders, design.decoders, weights)
    value = surrogate_objective(tight, channels, config)
    assert abs(value - 2 * np.log(2.0)) < 1e-12
    rate = weighted_rate_bits(design.precoders, channels, config)
    # tolerance admits the covariance stabilization ridge
    assert abs(value - LN2 * rate) < 1e-11


def test_weight_perturbation_never_improves_surrogate(default_config,
                                                      default_channels):
    # S = inv(E) maximizes the surrogate over Hermitian S: any Hermitian
    # perturbation lowers (or keeps) the value
    config, channels = default_config, default_channels
    design, _ = run_wmmse(channels, config)
    base = surrogate_objective(design, channels, config)
    rng = np.random.default_rng(11)
    for _ in range(25):
        bumped = []
        for i in DIRECTIONS:
            d = config.streams[i]
            g = crandn_t(rng, (config.subcarriers, d, d))
            bump = 1e-3 * (g + g.conj().swapaxes(-1, -2))
            bumped.append(design.mse_weights[i] + bump)
        trial = TransceiverDesign(precoders=design.precoders,
                                  decoders=design.decoders,
                                  mse_weights=bumped)
        assert surrogate_objective(trial, channels, config) <= base + 1e-10


def test_surrogate_zero_when_idle(default_config, default_channels):
    config = default_config
    zeros_v = [np.zeros((config.subcarriers, config.tx_antennas[i],
                         config.streams[i]), dtype=complex)
               for i in DIRECTIONS]
    zeros_u = [np.zeros((config.subcarriers, config.rx_antennas[i],
                         config.streams[i]), dtype=complex)
               for i in DIRECTIONS]
    design = _design(config, zeros_v, zeros_u)
    assert abs(surrogate_objective(design, default_channels, config)) < 1e-12


def test_run_monotone_blocks_and_tightness(default_config, default_channels):
    design, report = run_wmmse(default_channels, default_config)
    blocks = [report.objective_trace[0]]
    for after_v, after_u, after_s in report.extras["surrogate_blocks"]:
        blocks.extend([after_v, after_u, after_s])
    assert np.all(np.diff(blocks) >= -1e-9)
    assert max(report.extras["tightness_gap"]) < 1e-8
    rates = np.asarray(report.rate_trace)
    assert np.all(np.diff(rates) >= -1e-8)
    assert report.weighted_sum_rate() == pytest.approx(rates[-1])
    # the final surrogate equals ln2 x the weighted rate at the same point
    assert abs(report.objective_trace[-1]
               - LN2 * weighted_rate_bits(design.precoders, default_channels,
                                          default_config)) < 1e-8


def test_scalar_link_reaches_waterfilling_capacity():
    # single active direction over one scalar carrier with ideal hardware:
    # the rate must converge to log2(1 + P |h|^2 / sigma^2)
    sigma2, p = 0.05, 1.0
    h00 = 0.9 - 0.3j
    config = SystemConfig.from_scalars(subcarriers=1, antennas=1, streams=1,
                                       p_max=(p, 0.0), noise_var=sigma2,
                                       kappa=0.0, beta=0.0, csi_radius=0.0,
                                       max_iters=300, rel_tol=1e-13)
    channels = _flat_channels({(0, 0): h00, (1, 1): 0.4,
                               (0, 1): 0.1, (1, 0): 0.2j})
    design, report = run_wmmse(channels, config)
    capacity = np.log2(1 + p * abs(h00) ** 2 / sigma2)
    assert abs(report.weighted_sum_rate() - capacity) < 1e-6 * capacity
    assert np.max(np.abs(design.precoders[1])) == 0.0


def test_weight_scaling_leaves_iterates_unchanged(default_config,
                                                  default_channels):
    # scaling every rate weight by the same constant rescales the surrogate
    # but produces identical precoders
    base = default_config
    scaled = base.replace(rate_weights=tuple(3.0 * w
                                             for w in base.rate_weights))
    d1, r1 = run_wmmse(default_channels, base)
    d2, r2 = run_wmmse(default_channels, scaled)
    assert r1.iterations == r2.iterations
    for i in DIRECTIONS:
        assert np.max(np.abs(d1.precoders[i] - d2.precoders[i])) < 1e-6
    assert abs(3.0 * r1.objective_trace[-1] - r2.objective_trace[-1]) \
        < 1e-6 * abs(r2.objective_trace[-1])


def test_weights_raise_on_singular_error(default_config):
    # a decoder that exactly cancels the signal with no noise floor makes E
    # singular only in contrived setups; instead check the documented raise
    # by feeding an E with a zero eigenvalue through a doctored channel
    config = SystemConfig.from_scalars(subcarriers=1, antennas=1, streams=1,
                                       noise_var=0.0, kappa=0.0, beta=0.0,
                                       csi_radius=0.0)
    channels = _flat_channels({(0, 0): 1.0, (1, 1): 1.0,
                               (0, 1): 0.0, (1, 0): 0.0})
    ones = np.ones((1, 1, 1), dtype=complex)
    design = _design(config, [ones.copy() for _ in DIRECTIONS],
                     [ones.copy() for _ in DIRECTIONS])
    # u = 1, v = 1, h = 1, sigma = |hv|^2 = 1 (no noise): E = |1-1|^2 + ...
    # the MSE matrix is exactly zero -> inverse must fail loudly
    with pytest.raises(np.linalg.LinAlgError):
        update_weights(design, channels, config)
