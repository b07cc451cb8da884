"""Time-domain block simulation of the transceiver chain distortion model.

Each OFDM block: draw unit-covariance symbols, precode, inverse-DFT to the time
domain, add white per-chain transmit distortion (variance proportional to that
chain's analytic signal power), push through the true per-subcarrier channels,
add thermal noise and white per-chain receive distortion (variance proportional
to the analytic received power), cancel the known part of the self-interference
with the estimated channel, and collect the residual interference-plus-noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DIRECTIONS, ChannelRealization, SystemConfig, TransceiverDesign
from .util import crandn, rng_from


def time_to_freq(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Unitary DFT (1/sqrt(K) scaling)."""
    k = x.shape[axis]
    return np.fft.fft(x, axis=axis) / np.sqrt(k)


def freq_to_time(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Unitary inverse DFT."""
    k = x.shape[axis]
    return np.fft.ifft(x, axis=axis) * np.sqrt(k)


def freq_distortion_variance(precoders_i: np.ndarray,
                             tx_distortion_i: np.ndarray) -> np.ndarray:
    """Per-chain frequency-domain variance of the transmit distortion.

    White in time implies flat in frequency: every subcarrier sees
    (kappa_l / K) * sum_m E|v_l^m|^2, i.e. theta_l * sum_m (V^m V^m^H)_ll.
    """
    gram_diag = np.einsum("knd,knd->n", precoders_i, precoders_i.conj()).real
    return np.asarray(tx_distortion_i) * gram_diag


@dataclass
class BlockSample:
    """One simulated block with both time- and frequency-domain signals,
    indexed per direction. Arrays are (K, chains)."""

    symbols: list
    v_freq: list
    v_time: list
    et_time: list
    et_freq: list
    x_time: list
    x_freq: list
    noise_freq: list
    u_freq: list
    u_time: list
    er_time: list
    er_freq: list
    y_freq: list
    residual: list      # nu_i^k after SIC and desired-signal removal


@dataclass
class SimulationStats:
    n_blocks: int
    nu_cov: list            # per direction (K, M, M) sample covariance of nu
    et_var: list            # per direction (K, N) sample variance of e_t^k
    er_var: list            # per direction (K, M) sample variance of e_r^k
    et_signal_corr: list    # per direction (K, N) |corr(e_t, v)| same chain
    et_chain_corr: list     # per direction (K,) max |corr| across chain pairs
    et_var_analytic: list = field(default_factory=list)   # per direction (N,)


def _physical_coefficients(config: SystemConfig, i: int):
    """Per-chain kappa/beta of the hardware (config stores them divided by K)."""
    k = config.subcarriers
    return k * config.tx_distortion[i], k * config.rx_distortion[i]


def _simulate_batch(design: TransceiverDesign, channels: ChannelRealization,
                    config: SystemConfig, n: int, rng: np.random.Generator):
    """Simulate n blocks at once; returns a dict of (n, K, chains) arrays."""
    k = config.subcarriers
    out = {key: [] for key in ("symbols", "v_freq", "v_time", "et_time", "et_freq",
                               "x_time", "x_freq", "noise_freq", "u_freq", "u_time",
                               "er_time", "er_freq", "y_freq", "residual")}

    # transmit side, per direction
    for j in DIRECTIONS:
        v = design.precoders[j]
        s = crandn(rng, (n, k, v.shape[2]))
        v_freq = np.einsum("knd,bkd->bkn", v, s)
        v_time = freq_to_time(v_freq, axis=1)
        kappa_j, _ = _physical_coefficients(config, j)
        chain_power = np.einsum("knd,knd->n", v, v.conj()).real / k  # E|v_l(t)|^2
        et_time = crandn(rng, v_time.shape, var=(kappa_j * chain_power)[None, None, :])
        x_time = v_time + et_time
        out["symbols"].append(s)
        out["v_freq"].append(v_freq)
        out["v_time"].append(v_time)
        out["et_time"].append(et_time)
        out["et_freq"].append(time_to_freq(et_time, axis=1))
        out["x_time"].append(x_time)
        out["x_freq"].append(time_to_freq(x_time, axis=1))

    # receive side
    for i in DIRECTIONS:
        m_i = config.rx_antennas[i]
        noise = crandn(rng, (n, k, m_i),
                       var=config.noise_var[i][None, :, None])
        u_freq = noise.copy()
        received_power = config.noise_var[i].sum() * np.ones(m_i)  # sum_k E|u^k|^2 per chain
        for j in DIRECTIONS:
            h = channels.h[(i, j)]
            u_freq += np.einsum("kmn,bkn->bkm", h, out["x_freq"][j])
            hv = h @ design.precoders[j]
            received_power += np.einsum("kmd,kmd->m", hv, hv.conj()).real
            kappa_j, _ = _physical_coefficients(config, j)
            chain_power = np.einsum("knd,knd->n", design.precoders[j],
                                    design.precoders[j].conj()).real / k
            received_power += np.einsum("kmn,n,kmn->m", h, kappa_j * chain_power,
                                        h.conj()).real
        _, beta_i = _physical_coefficients(config, i)
        er_var = beta_i * received_power / k    # E|u_l(t)|^2 = (1/K) sum_k E|u_l^k|^2
        u_time = freq_to_time(u_freq, axis=1)
        er_time = crandn(rng, u_time.shape, var=er_var[None, None, :])
        y_freq = u_freq + time_to_freq(er_time, axis=1)

        # SIC with the estimated loopback channel, then strip the desired signal
        j = 1 - i
        y_tilde = y_freq - np.einsum("kmn,knd,bkd->bkm", channels.h_est[(i, j)],
                                     design.precoders[j], out["symbols"][j])
        residual = y_tilde - np.einsum("kmn,knd,bkd->bkm", channels.h[(i, i)],
                                       design.precoders[i], out["symbols"][i])
        out["noise_freq"].append(noise)
        out["u_freq"].append(u_freq)
        out["u_time"].append(u_time)
        out["er_time"].append(er_time)
        out["er_freq"].append(time_to_freq(er_time, axis=1))
        out["y_freq"].append(y_freq)
        out["residual"].append(residual)
    return out


def sample_block(design: TransceiverDesign, channels: ChannelRealization,
                 config: SystemConfig, seed) -> BlockSample:
    """One block with all intermediate signals exposed (testing/diagnostics)."""
    batch = _simulate_batch(design, channels, config, 1, rng_from(seed))
    return BlockSample(**{key: [arr[0] for arr in val] for key, val in batch.items()})


def simulate_blocks(design: TransceiverDesign, channels: ChannelRealization,
                    config: SystemConfig, n_blocks: int, seed,
                    chunk: int = 20000) -> SimulationStats:
    """Monte Carlo over n_blocks OFDM blocks; accumulates sample covariances of
    the post-SIC residual and the per-chain distortion statistics."""
    rng = rng_from(seed)
    k = config.subcarriers
    nu_acc = [np.zeros((k, config.rx_antennas[i], config.rx_antennas[i]), dtype=complex)
              for i in DIRECTIONS]
    et2 = [np.zeros((k, config.tx_antennas[i])) for i in DIRECTIONS]
    er2 = [np.zeros((k, config.rx_antennas[i])) for i in DIRECTIONS]
    ev = [np.zeros((k, config.tx_antennas[i]), dtype=complex) for i in DIRECTIONS]
    v2 = [np.zeros((k, config.tx_antennas[i])) for i in DIRECTIONS]
    ee = [np.zeros((k, config.tx_antennas[i], config.tx_antennas[i]), dtype=complex)
          for i in DIRECTIONS]

    remaining = int(n_blocks)
    while remaining > 0:
        n = min(remaining, chunk)
        batch = _simulate_batch(design, channels, config, n, rng)
        for i in DIRECTIONS:
            nu = batch["residual"][i]
            nu_acc[i] += np.einsum("bkm,bkp->kmp", nu, nu.conj())
            et = batch["et_freq"][i]
            vf = batch["v_freq"][i]
            et2[i] += np.einsum("bkn,bkn->kn", et, et.conj()).real
            er = batch["er_freq"][i]
            er2[i] += np.einsum("bkm,bkm->km", er, er.conj()).real
            ev[i] += np.einsum("bkn,bkn->kn", et, vf.conj())
            v2[i] += np.einsum("bkn,bkn->kn", vf, vf.conj()).real
            ee[i] += np.einsum("bkn,bkp->knp", et, et.conj())
        remaining -= n

    n = float(n_blocks)
    stats = SimulationStats(
        n_blocks=int(n_blocks),
        nu_cov=[acc / n for acc in nu_acc],
        et_var=[acc / n for acc in et2],
        er_var=[acc / n for acc in er2],
        et_signal_corr=[], et_chain_corr=[],
        et_var_analytic=[freq_distortion_variance(design.precoders[i],
                                                  config.tx_distortion[i])
                         for i in DIRECTIONS],
    )
    for i in DIRECTIONS:
        denom = np.sqrt(et2[i] * np.maximum(v2[i], 1e-300))
        stats.et_signal_corr.append(np.abs(ev[i]) / np.maximum(denom, 1e-300))
        # cross-chain correlation: normalize the Gram accumulator, zero the diagonal
        d = np.sqrt(np.einsum("knn->kn", ee[i]).real)
        norm = np.maximum(d[:, :, None] * d[:, None, :], 1e-300)
        corr = np.abs(ee[i]) / norm
        n_tx = corr.shape[1]
        corr[:, np.arange(n_tx), np.arange(n_tx)] = 0.0
        stats.et_chain_corr.append(corr.reshape(k, -1).max(axis=1))
    return stats
