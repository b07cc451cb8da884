"""Reference schemes: equivalences in their degenerate corners, the
half-duplex rate split, and the self-interference power cap."""

import numpy as np
import pytest

from fdlink import (ConfigError, SystemConfig, evaluate_design, run_altqcp,
                    run_baseline)
from fdlink.baselines import BASELINE_MODES, half_duplex_world
from fdlink.channels import ChannelStats, draw_channels, perturb_csi
from fdlink.model import DIRECTIONS, PAIRS


@pytest.fixture(scope="module")
def ideal_setup():
    # no hardware impairments and perfect CSI: several baselines collapse
    # onto the plain solver
    config = SystemConfig.from_scalars(kappa=0.0, beta=0.0, csi_radius=0.0)
    channels = draw_channels(config, ChannelStats(), [501])
    return config, channels


def test_blind_design_matches_plain_when_hardware_is_ideal(ideal_setup):
    config, channels = ideal_setup
    design, _ = run_altqcp(channels, config)
    blind_design, report = run_baseline("kappa0", channels, config)
    for i in DIRECTIONS:
        assert np.max(np.abs(design.precoders[i]
                             - blind_design.precoders[i])) < 1e-8
    assert report.extras["mode"] == "kappa0"


def test_single_carrier_identical_when_already_flat(ideal_setup):
    # K = 1 leaves nothing to average: the flat design is the plain design
    config, _ = ideal_setup
    flat_cfg = SystemConfig.from_scalars(subcarriers=1, kappa=0.0, beta=0.0,
                                         csi_radius=0.0)
    channels = draw_channels(flat_cfg, ChannelStats(), [502])
    design, _ = run_altqcp(channels, flat_cfg)
    sc_design, _ = run_baseline("sc", channels, flat_cfg)
    for i in DIRECTIONS:
        assert np.max(np.abs(design.precoders[i]
                             - sc_design.precoders[i])) < 1e-10


def test_single_carrier_replicates_and_respects_power(default_config,
                                                      default_channels):
    from fdlink.model import power_usage
    design, report = run_baseline("sc", default_channels, default_config)
    for i in DIRECTIONS:
        v = design.precoders[i]
        for k in range(1, default_config.subcarriers):
            assert np.array_equal(v[k], v[0])
        used = power_usage(v, default_config.tx_distortion[i],
                           default_config.subcarriers)
        assert abs(used - default_config.p_max[i]) < 1e-9
    assert report.extras["mode"] == "sc"


def test_uncapped_threshold_equals_blind_design(default_config,
                                                default_channels):
    # with no self-interference cap, the thresholded scheme and the
    # distortion-blind scheme solve the same program
    blind, _ = run_baseline("kappa0", default_channels, default_config)
    uncapped, report = run_baseline("pth_inf", default_channels,
                                    default_config)
    for i in DIRECTIONS:
        assert np.max(np.abs(blind.precoders[i]
                             - uncapped.precoders[i])) < 1e-8
    assert all(mu == 0.0 for mu in report.extras["si_duals"])


def test_half_duplex_halves_rate_and_silences_cross(default_config,
                                                    default_channels):
    design, report = run_baseline("hd", default_channels, default_config)
    world = report.extras["eval_channels"]
    for i in DIRECTIONS:
        for j in DIRECTIONS:
            if i != j:
                assert np.all(world.h[(i, j)] == 0)
                assert np.all(world.h_est[(i, j)] == 0)
                assert np.all(world.csi_radius[(i, j)] == 0)
    unhalved = evaluate_design(design, world, default_config)
    assert np.max(np.abs(report.rate_bits - 0.5 * unhalved.rate_bits)) < 1e-12
    # time sharing does not reduce the per-slot power budget
    from fdlink.model import power_usage
    for i in DIRECTIONS:
        used = power_usage(design.precoders[i],
                           default_config.tx_distortion[i],
                           default_config.subcarriers)
        assert used <= default_config.p_max[i] + 1e-9


def test_half_duplex_world_keeps_direct_links(default_channels):
    world = half_duplex_world(default_channels)
    for i in DIRECTIONS:
        assert np.array_equal(world.h[(i, i)], default_channels.h[(i, i)])
        assert np.array_equal(world.h_est[(i, i)],
                              default_channels.h_est[(i, i)])


def test_threshold_cap_binds_when_low(default_config, default_channels):
    design, report = run_baseline("pth_low", default_channels, default_config)
    h_est = default_channels.h_est
    for i in DIRECTIONS:
        other = 1 - i
        cross = h_est[(other, i)]
        fv = cross @ design.precoders[i]
        si = float(np.einsum("kmd,kmd->", fv, fv.conj()).real)
        cap = default_config.p_max[i] / 10.0
        mu = report.extras["si_duals"][i]
        assert mu >= 0.0
        assert si <= cap + 1e-6
        if mu > 1e-9:
            assert abs(si - cap) < 1e-6 * max(cap, 1.0)


def test_threshold_modes_ordered_by_cap(default_config, default_channels):
    # a tighter self-interference cap cannot raise the achieved leakage
    results = {}
    for mode in ("pth_low", "pth_high", "pth_inf"):
        design, _ = run_baseline(mode, default_channels, default_config)
        total = 0.0
        for i in DIRECTIONS:
            cross = default_channels.h_est[(1 - i, i)]
            fv = cross @ design.precoders[i]
            total += float(np.einsum("kmd,kmd->", fv, fv.conj()).real)
        results[mode] = total
    assert results["pth_low"] <= results["pth_high"] + 1e-9
    assert results["pth_high"] <= results["pth_inf"] + 1e-9


def test_blind_design_power_uses_ideal_model(default_config,
                                             default_channels):
    # the blind scheme budgets power as if kappa were zero: its design-model
    # power tr(V V^H) sits exactly at the budget
    design, _ = run_baseline("kappa0", default_channels, default_config)
    for i in DIRECTIONS:
        v = design.precoders[i]
        raw = float(np.einsum("knd,knd->", v, v.conj()).real)
        assert abs(raw - default_config.p_max[i]) < 1e-9


def test_all_modes_run_with_rate_designer(default_config, default_channels):
    for mode in BASELINE_MODES:
        design, report = run_baseline(mode, default_channels, default_config,
                                      designer="wmmse")
        assert report.extras["mode"] == mode
        assert np.isfinite(report.sum_mse())
        assert np.isfinite(report.weighted_sum_rate())
        for i in DIRECTIONS:
            assert np.all(np.isfinite(design.precoders[i]))


def test_unknown_mode_and_designer_raise(default_config, default_channels):
    with pytest.raises(ConfigError):
        run_baseline("tdma", default_channels, default_config)
    with pytest.raises(ConfigError):
        run_baseline("hd", default_channels, default_config,
                     designer="genie")
