"""Worst-case CSI error oracle and the cutting-set loop: quadratic-form
fidelity, closed forms, an engineered degenerate instance, brute-force
dominance, KKT/duality certificates, and worst-case design behavior."""

import numpy as np
import pytest

from conftest import crandn_t
from fdlink import (ConfigError, SystemConfig, evaluate_design, run_altqcp,
                    run_cutting_set)
from fdlink.altqcp import SolverOptions, identity_weights
from fdlink.channels import ChannelStats, draw_channels, perturb_csi
from fdlink.model import DIRECTIONS, PAIRS
from fdlink.robust import (QuadraticErrorForm, build_quadratic_form,
                           weighted_mse_with_errors, worst_case_error,
                           worst_case_mse)


def _make_form(rng, out_dim, n, radius, scale=1.0):
    # map sends an n-vector error to an out_dim-vector; rows/cols describe
    # the unvectorized error shape (kept as a column here)
    mapping = scale * crandn_t(rng, (out_dim, n))
    offset = scale * crandn_t(rng, (out_dim,))
    return QuadraticErrorForm(map=mapping, offset=offset, whitener=None,
                              rows=n, cols=1, target=(0, 0, 0),
                              radius=radius)


def _zero_deltas(channels):
    return {pair: np.zeros_like(channels.h[pair]) for pair in PAIRS}


@pytest.fixture(scope="module")
def designed(default_config, default_channels):
    design, _ = run_altqcp(default_channels, default_config)
    return design


# ---------------------------------------------------------------------------
# quadratic-form fidelity: the lifted forms must reproduce the true objective
# ---------------------------------------------------------------------------

def test_forms_reproduce_objective_shift(default_config, default_channels,
                                         designed):
    """For >= 100 random single-pair perturbations, the lifted quadratic
    must equal the directly-evaluated objective to 1e-9 relative."""
    config, channels = default_config, default_channels
    rng = np.random.default_rng(21)
    weights = identity_weights(config)
    base = weighted_mse_with_errors(designed, channels, config,
                                    deltas=_zero_deltas(channels),
                                    mse_weights=weights)
    checked = 0
    for i in DIRECTIONS:
        for j in DIRECTIONS:
            for k in range(config.subcarriers):
                form = build_quadratic_form(designed, channels, config,
                                            i, j, k, mse_weights=weights)
                for _ in range(7):
                    delta = 0.1 * crandn_t(rng, channels.h[(i, j)][k].shape)
                    deltas = _zero_deltas(channels)
                    deltas[(i, j)] = deltas[(i, j)].copy()
                    deltas[(i, j)][k] = delta
                    direct = weighted_mse_with_errors(
                        designed, channels, config, deltas=deltas,
                        mse_weights=weights)
                    b = delta.reshape(-1, order="F")
                    lifted = float(np.linalg.norm(form.map @ b
                                                  + form.offset) ** 2)
                    offset_sq = float(np.linalg.norm(form.offset) ** 2)
                    predicted = base - offset_sq + lifted
                    assert abs(direct - predicted) \
                        < 1e-9 * max(abs(direct), 1.0)
                    checked += 1
    assert checked >= 100


def test_form_index_validation(default_config, default_channels, designed):
    with pytest.raises(ConfigError):
        build_quadratic_form(designed, default_channels, default_config,
                             2, 0, 0)
    with pytest.raises(ConfigError):
        build_quadratic_form(designed, default_channels, default_config,
                             0, 0, 99)


# ---------------------------------------------------------------------------
# worst_case_error closed forms and invariants
# ---------------------------------------------------------------------------

def test_zero_radius_returns_center_value():
    rng = np.random.default_rng(22)
    form = _make_form(rng, 4, 3, radius=0.0)
    result = worst_case_error(form)
    assert result.value == pytest.approx(
        float(np.linalg.norm(form.offset) ** 2))
    assert np.all(result.b_star == 0)


def test_scalar_closed_form_and_alignment():
    # |a b + c|^2 over |b| <= zeta peaks at (|a| zeta + |c|)^2 with b aligned
    form = QuadraticErrorForm(map=np.array([[1.0 + 0j]]),
                              offset=np.array([1.0 + 0j]), whitener=None,
                              rows=1, cols=1, target=(0, 0, 0), radius=0.5)
    result = worst_case_error(form)
    assert abs(result.value - 2.25) < 1e-12
    assert abs(result.b_star[0] - 0.5) < 1e-10
    rng = np.random.default_rng(23)
    for _ in range(50):
        a = crandn_t(rng, (1,))[0]
        c = crandn_t(rng, (1,))[0]
        zeta = float(rng.uniform(0.05, 2.0))
        form = QuadraticErrorForm(map=np.array([[a]]), offset=np.array([c]),
                                  whitener=None, rows=1, cols=1,
                                  target=(0, 0, 0), radius=zeta)
        result = worst_case_error(form)
        expected = (abs(a) * zeta + abs(c)) ** 2
        assert abs(result.value - expected) < 1e-12 * max(expected, 1.0)


def test_gradient_vanishes_only_at_stationary_center():
    # at b = 0 the ascent direction is 2 M b + 2 m = 2 m: finite differences
    # of the quadratic must match it to 1e-6
    rng = np.random.default_rng(24)
    form = _make_form(rng, 5, 4, radius=1.0)
    m_mat = form.map.conj().T @ form.map
    m_vec = form.map.conj().T @ form.offset

    def value(b):
        return float(np.linalg.norm(form.map @ b + form.offset) ** 2)

    h = 1e-5
    for a in range(4):
        e = np.zeros(4, dtype=complex)
        e[a] = h
        fd_re = (value(e) - value(-e)) / (2 * h)
        e[a] = 1j * h
        fd_im = (value(e) - value(-e)) / (2 * h)
        grad = 2 * m_vec[a]
        assert abs(fd_re - grad.real) < 1e-6
        assert abs(fd_im - grad.imag) < 1e-6
    del m_mat


def test_engineered_degenerate_instance():
    # top eigenspace orthogonal to the linear term: the maximizer needs a
    # manual top-space component.  G = diag(2, 1), c aligned with the second
    # column: M = diag(4, 1), m = (0, 1).  Interior solve reaches
    # ||b_perp|| = 1/3 < zeta = 1, so the top direction is padded to the
    # boundary: value = 4 * 8/9 + (1/3 + 1)^2 = 16/3.
    form = QuadraticErrorForm(map=np.diag([2.0 + 0j, 1.0]),
                              offset=np.array([0.0j, 1.0]), whitener=None,
                              rows=2, cols=1, target=(0, 0, 0), radius=1.0)
    result = worst_case_error(form)
    assert result.hard_case
    assert abs(result.value - 16.0 / 3.0) < 1e-10
    assert abs(np.linalg.norm(result.b_star) - 1.0) < 1e-10
    assert abs(abs(result.b_star[1]) - 1.0 / 3.0) < 1e-10
    assert abs(result.rho_star - 4.0) < 1e-10


def test_brute_force_never_beats_oracle():
    """Random instances: dense boundary sampling plus conditional-gradient
    refinement never exceeds the oracle, and the refined best comes within
    1e-6 of it."""
    rng = np.random.default_rng(25)
    for trial in range(30):
        n = int(rng.integers(1, 5))
        rows = int(rng.integers(1, 6))
        zeta = float(rng.uniform(0.1, 1.5))
        form = _make_form(rng, rows, n, radius=zeta)
        result = worst_case_error(form)
        m_mat = form.map.conj().T @ form.map
        m_vec = form.map.conj().T @ form.offset
        c_sq = float(np.linalg.norm(form.offset) ** 2)

        def value(b):
            return float(np.real(b.conj() @ m_mat @ b
                                 + 2 * np.real(b.conj() @ m_vec)) + c_sq)

        samples = crandn_t(rng, (2000, n))
        samples *= zeta / np.linalg.norm(samples, axis=1, keepdims=True)
        vals = (np.einsum("sn,nm,sm->s", samples.conj(), m_mat,
                          samples).real
                + 2 * np.einsum("sn,n->s", samples.conj(), m_vec).real
                + c_sq)
        best_b = samples[int(np.argmax(vals))]
        for _ in range(200):
            g = m_mat @ best_b + m_vec
            norm = np.linalg.norm(g)
            if norm < 1e-14:
                break
            best_b = zeta * g / norm
        refined = value(best_b)
        assert result.value >= max(float(vals.max()), refined) - 1e-12 \
            * max(result.value, 1.0)
        assert result.value <= refined + 1e-6 * max(refined, 1.0)


def test_kkt_and_duality_certificates():
    rng = np.random.default_rng(26)
    for _ in range(40):
        n = int(rng.integers(1, 6))
        zeta = float(rng.uniform(0.1, 2.0))
        form = _make_form(rng, int(rng.integers(1, 7)), n, radius=zeta)
        result = worst_case_error(form)
        m_mat = form.map.conj().T @ form.map
        m_vec = form.map.conj().T @ form.offset
        lam_top = float(np.linalg.eigvalsh(m_mat)[-1])
        b, rho = result.b_star, result.rho_star
        # primal feasibility and boundary attainment
        assert np.linalg.norm(b) <= zeta + 1e-10
        assert abs(np.linalg.norm(b) - zeta) < 1e-8 * max(zeta, 1.0)
        # stationarity (rho I - M) b = m and curvature rho >= lam_max
        resid = np.linalg.norm((rho * np.eye(n) - m_mat) @ b - m_vec)
        assert resid < 1e-8 * max(np.linalg.norm(m_vec), 1.0)
        assert rho >= lam_top - 1e-10 * max(lam_top, 1.0)
        # value never below the center value
        assert result.value >= float(np.linalg.norm(form.offset) ** 2) - 1e-12
        # weak duality: value <= g(rho') for feasible rho' > lam_max, and
        # g(rho*) matches the value when the solve is non-degenerate
        c_sq = float(np.linalg.norm(form.offset) ** 2)

        def dual(rho_val):
            shift = rho_val * np.eye(n) - m_mat
            return float(rho_val * zeta ** 2 + c_sq
                         + np.real(m_vec.conj()
                                   @ np.linalg.solve(shift, m_vec)))

        for bump in (1e-3, 1e-1, 1.0):
            assert result.value <= dual(rho + bump
                                        + max(lam_top - rho, 0.0)) + 1e-8
        if not result.hard_case and rho > lam_top + 1e-8:
            assert abs(dual(rho) - result.value) < 1e-6 * max(result.value,
                                                              1.0)


# ---------------------------------------------------------------------------
# worst_case_mse
# ---------------------------------------------------------------------------

def test_worst_case_mse_limits(default_config, designed, default_channels):
    config = default_config
    nominal = weighted_mse_with_errors(designed, default_channels, config,
                                       deltas=_zero_deltas(default_channels))
    zero_cfg = SystemConfig.from_scalars(csi_radius=0.0)
    certain = draw_channels(zero_cfg, ChannelStats(), [77])
    wc0 = worst_case_mse(designed, certain, zero_cfg)
    nom0 = weighted_mse_with_errors(designed, certain, zero_cfg,
                                    deltas=_zero_deltas(certain))
    assert wc0 == pytest.approx(nom0, rel=1e-12)
    wc = worst_case_mse(designed, default_channels, config)
    assert wc >= nominal - 1e-12
    # doubling every radius can only hurt
    doubled = default_channels.__class__(
        h=default_channels.h, h_est=default_channels.h_est,
        csi_radius={p: 2.0 * default_channels.csi_radius[p] for p in PAIRS},
        shaping=default_channels.shaping)
    assert worst_case_mse(designed, doubled, config) >= wc - 1e-12


def test_worst_case_mse_idle_design_bounded(default_config, default_channels):
    # an all-zero transceiver leaves E = I: the worst case cannot exceed the
    # total stream count regardless of the error radius
    config = default_config
    from fdlink import TransceiverDesign
    zeros_v = [np.zeros((config.subcarriers, config.tx_antennas[i],
                         config.streams[i]), dtype=complex)
               for i in DIRECTIONS]
    zeros_u = [np.zeros((config.subcarriers, config.rx_antennas[i],
                         config.streams[i]), dtype=complex)
               for i in DIRECTIONS]
    weights = identity_weights(config)
    design = TransceiverDesign(precoders=zeros_v, decoders=zeros_u,
                               mse_weights=weights)
    total = sum(config.subcarriers * config.streams[i] for i in DIRECTIONS)
    wc = worst_case_mse(design, default_channels, config)
    assert wc <= total + 1e-9


# ---------------------------------------------------------------------------
# cutting-set loop
# ---------------------------------------------------------------------------

def test_cutting_set_zero_radius_single_cut():
    config = SystemConfig.from_scalars(csi_radius=0.0)
    channels = draw_channels(config, ChannelStats(), [99])
    nominal_design, _ = run_altqcp(channels, config)
    robust_design, report = run_cutting_set(channels, config)
    assert len(report.extras["cuts"]) == 1
    assert report.extras["robust_converged"]
    for i in DIRECTIONS:
        assert np.max(np.abs(robust_design.precoders[i]
                             - nominal_design.precoders[i])) < 1e-10


def test_cutting_set_certified_no_worse_than_nominal(default_config):
    """The returned design's certified worst case never exceeds the nominal
    design's certified worst case (the incumbent rule makes this exact)."""
    wins = 0
    trials = 5
    for t in range(trials):
        config = default_config
        channels = draw_channels(config, ChannelStats(), [300 + t])
        _, channels = perturb_csi(channels, config, [400 + t], "interior")
        nominal_design, _ = run_altqcp(channels, config)
        robust_design, report = run_cutting_set(channels, config)
        wc_nominal = worst_case_mse(nominal_design, channels, config)
        wc_robust = worst_case_mse(robust_design, channels, config)
        assert wc_robust <= wc_nominal + 1e-12
        if wc_robust < wc_nominal - 1e-9:
            wins += 1
        assert report.extras["worst_case"] == pytest.approx(wc_robust,
                                                            rel=1e-9)
    # the robust loop should strictly improve on at least one draw
    assert wins >= 1


def test_cutting_set_history_shapes(default_config, default_channels):
    _, report = run_cutting_set(default_channels, default_config,
                                options=SolverOptions(max_cuts=4))
    history = report.extras["cuts"]
    assert 1 <= len(history) <= 4
    for step in history:
        assert step["worst_case"] >= 0
        assert step["gap"] >= -1e-12
    assert report.extras["selected_cut"] < len(history)
