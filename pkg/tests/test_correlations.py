import math

import numpy as np
import pytest

from photonpurity import correlations as corr
from photonpurity import dynamics
from photonpurity.correlations import (
    NotConverged,
    ZeroEmission,
    filtered_g2_zero,
    map_grid,
    spectrum,
    sweep_filter_width,
    sweep_pulse_length,
    unfiltered_g2_zero,
    write_metadata,
    write_spectrum_csv,
    write_sweep_csv,
)
from photonpurity.model import (
    BiexcitonConfig,
    EXCITON_V_ONLY,
    GaussianPulse,
    SensorConfig,
    TwoLevelConfig,
    attach_sensor,
    basis_projector,
    build_biexciton,
    build_two_level,
)

from conftest import two_level_system


class TestFilteredG2:
    def test_zero_drive_raises(self):
        system = two_level_system(0.05, theta=0.0)
        with pytest.raises(ZeroEmission):
            filtered_g2_zero(system, SensorConfig(0.0, 1.0), check_convergence=False)
        with pytest.raises(ZeroEmission):
            unfiltered_g2_zero(system)

    def test_epsilon_convergence_flag(self, tls_g2):
        stats = tls_g2(0.05, 1.0)
        assert stats.converged
        assert abs(stats.g2_epsilon_check - stats.g2) <= 5e-3 * stats.g2

    def test_not_converged_for_strong_coupling(self):
        system = two_level_system(0.1)
        with pytest.raises(NotConverged):
            filtered_g2_zero(system, SensorConfig(0.0, 1.0, coupling=0.3))

    def test_stats_fields(self, tls_g2):
        stats = tls_g2(0.05, 1.0)
        assert stats.n_integral > 0
        assert stats.g2 >= 0
        assert stats.g2 == pytest.approx(stats.g2_numerator / stats.n_integral**2, rel=1e-9)
        assert len(stats.n_of_t) == len(stats.times)

    def test_truncation_insensitive(self):
        system = two_level_system(0.05)
        g2 = {}
        for trunc in (2, 3):
            st = filtered_g2_zero(system, SensorConfig(0.0, 1.0, truncation=trunc),
                                  check_convergence=False)
            g2[trunc] = st.g2
        assert abs(g2[3] - g2[2]) < 1e-3 * g2[2]

    def test_grid_convergence(self):
        system = two_level_system(0.05)
        nums = {}
        for points in (300, 600):
            grid = np.linspace(0.0, corr.horizon(system, 1.0), points)
            st = filtered_g2_zero(system, SensorConfig(0.0, 1.0), grid=grid,
                                  check_convergence=False)
            nums[points] = st.g2_numerator
        assert abs(nums[600] - nums[300]) < 0.01 * nums[300]


class TestUnfiltered:
    def test_large_bandwidth_recovers_unfiltered(self, tls_g2, tls_unfiltered):
        # at tau = 0.2 the emission is narrow against a 100 gamma filter
        filtered = tls_g2(0.2, 100.0).g2
        assert filtered == pytest.approx(tls_unfiltered(0.2), rel=0.05)

    def test_monotone_in_pulse_length(self, tls_unfiltered):
        values = [tls_unfiltered(tau) for tau in (0.02, 0.05, 0.2)]
        assert values[0] < values[1] < values[2]

    def test_two_pi_pulse_worse_than_pi(self):
        tau = 0.3
        g2_pi = unfiltered_g2_zero(two_level_system(tau, theta=math.pi))
        g2_2pi = unfiltered_g2_zero(two_level_system(tau, theta=2 * math.pi))
        assert g2_2pi > g2_pi


class TestSpectrum:
    def test_symmetric_for_resonant_drive(self):
        system = two_level_system(0.05)
        dets = np.linspace(-6.0, 6.0, 21)
        res = spectrum(system, "sigma", dets, spec_bandwidth=0.2)
        assert np.max(np.abs(res.values - res.values[::-1])) < 1e-6
        assert res.axis[np.argmax(res.values)] == pytest.approx(0.0)

    def test_short_pulse_grows_shoulders(self):
        # near the line all pulse lengths share the natural Lorentzian tail;
        # beyond ~10 gamma the instantaneous-photon shoulder of the short
        # pulse rises well above the long-pulse spectrum
        dets = np.array([0.0, 2.0, 15.0, 30.0])
        curves = {}
        for tau in (0.02, 0.2):
            res = spectrum(two_level_system(tau), "sigma", dets, spec_bandwidth=0.2)
            curves[tau] = res.values
        assert curves[0.02][1] == pytest.approx(curves[0.2][1], rel=0.02)
        assert curves[0.02][2] > 3.0 * curves[0.2][2]
        assert curves[0.02][3] > 5.0 * curves[0.2][3]

    def test_exciton_line_sits_at_half_binding(self):
        system = build_biexciton(BiexcitonConfig(binding_energy=300.0),
                                 GaussianPulse(math.pi, 0.01))
        dets = np.array([140.0, 145.0, 148.0, 150.0, 152.0, 155.0, 160.0])
        res = spectrum(system, EXCITON_V_ONLY, dets, spec_bandwidth=1.0)
        assert res.axis[np.argmax(res.values)] == pytest.approx(150.0)

    def test_free_decay_line_convolves_with_filter(self):
        # spontaneous emission has a Lorentzian line of FWHM gamma; probed
        # with a Lorentzian filter of FWHM G the half width becomes
        # (gamma + G) / 2 (coherent pulse scattering would mask this, so the
        # oracle uses an initially excited, undriven emitter)
        system = two_level_system(0.05, theta=0.0)
        vacuum = np.zeros((3, 3))
        vacuum[0, 0] = 1.0
        rho0 = np.kron(basis_projector(system, "exciton"), vacuum)
        for width, expected in ((0.2, 0.6), (1.0, 1.0)):
            dets = np.linspace(0.0, 2.0, 41)
            eps = 1e-3
            extended = [
                attach_sensor(system, "sigma", SensorConfig(d, width, eps, 2))
                for d in dets
            ]
            grid = np.linspace(0.0, 2.0 + 12.0 / min(1.0, width), 400)
            series = dynamics.emission_series(extended, extended[0].output_ops["sensor"],
                                              grid, rho0=rho0)
            intensity = np.trapezoid(series, grid, axis=-1)
            intensity /= intensity[0]
            j = np.searchsorted(-intensity, -0.5)
            hwhm = dets[j - 1] + (0.5 - intensity[j - 1]) * (dets[j] - dets[j - 1]) / (
                intensity[j] - intensity[j - 1]
            )
            assert hwhm == pytest.approx(expected, rel=0.03)


class TestSweeps:
    def test_filter_width_sweep_structure(self):
        builder = lambda pulse: build_two_level(TwoLevelConfig(), pulse)
        results = sweep_filter_width(builder, [1.0, 3.0], [0.1])
        res = results[0.1]
        assert np.all(np.diff(res.axis) > 0)
        assert len(res.values) == 2
        assert res.converged.all()
        assert res.metadata["kind"] == "filter_width_sweep"

    def test_pulse_length_sweep_structure(self):
        builder = lambda pulse: build_two_level(TwoLevelConfig(), pulse)
        results = sweep_pulse_length(builder, [0.05, 0.1], [1.0])
        res = results[1.0]
        assert res.values[0] < res.values[1]
        assert res.epsilon_used[0] > 0

    def test_sweep_point_identified_on_error(self):
        builder = lambda pulse: build_two_level(TwoLevelConfig(), pulse)
        with pytest.raises(corr.SweepPointError) as err:
            sweep_filter_width(builder, [1.0], [0.1], theta=0.0)
        assert "bandwidth=1" in str(err.value)
        assert isinstance(err.value.__cause__, ZeroEmission)


class TestExports:
    def test_sweep_csv(self, tmp_path, tls_g2):
        stats = tls_g2(0.05, 1.0)
        res = corr.SweepResult(
            axis=np.array([1.0]), values=np.array([stats.g2]), metadata={},
            epsilon_used=np.array([stats.epsilon_used]),
            converged=np.array([stats.converged]),
        )
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, res)
        lines = path.read_text().splitlines()
        assert lines[0] == "axis_value,g2,epsilon_used,converged"
        assert lines[1].endswith(",true")

    def test_spectrum_csv(self, tmp_path):
        res = corr.SweepResult(axis=np.array([-1.0, 0.0, 1.0]),
                               values=np.array([0.5, 1.0, 0.5]), metadata={})
        path = tmp_path / "spec.csv"
        write_spectrum_csv(path, res)
        lines = path.read_text().splitlines()
        assert lines[0] == "detuning_over_gamma,normalized_intensity"
        assert len(lines) == 4

    def test_metadata_json(self, tmp_path):
        import json

        path = tmp_path / "meta.json"
        write_metadata(path, {"a": np.float64(1.5), "b": np.arange(3)})
        data = json.loads(path.read_text())
        assert data == {"a": 1.5, "b": [0, 1, 2]}
