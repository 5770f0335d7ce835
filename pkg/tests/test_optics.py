import math

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from fsoqkd.numerics import DomainError, integrate
from fsoqkd.optics import (
    ApertureLayout,
    BeamGeometry,
    GeometryError,
    GridSpec,
    OverlapTable,
    channel_gain,
    misalignment_stats,
    overlap_integral,
    propagate_field,
    ring_layout,
    spatial_spectrum,
    transmit_field,
)

LAM = 1550e-9
W = 35e-3


def make_geom(z=1000.0, n=8):
    return BeamGeometry(wavelength=LAM, waist=W, distance=z, tx_count=n)


class TestBeamGeometry:
    def test_wavenumber(self):
        g = make_geom()
        assert g.wavenumber == pytest.approx(2 * math.pi / LAM, rel=1e-15)

    def test_effective_radius(self):
        assert make_geom(n=8).effective_tx_radius == pytest.approx(math.sqrt(8) * W, rel=1e-15)

    def test_divergence_cutoff_value(self):
        g = make_geom()
        assert g.rho_max_divergence == pytest.approx(math.sin(LAM / (math.pi * W)) / LAM, rel=1e-15)
        # numerically indistinguishable from 1/(pi w) at this wavelength
        assert g.rho_max_divergence == pytest.approx(1.0 / (math.pi * W), rel=1e-9)

    def test_capture_cutoff_larger_than_divergence(self):
        g = make_geom()
        assert g.spectral_cutoff("capture") > g.spectral_cutoff("divergence")

    def test_invalid(self):
        with pytest.raises(DomainError):
            BeamGeometry(wavelength=-1.0, waist=W, distance=10.0)


class TestTransmitField:
    def test_on_axis_value(self):
        g = make_geom()
        oracle = math.sqrt(2.0 / (math.pi * W * W))
        assert transmit_field(0.0, g) == pytest.approx(oracle, rel=1e-15)
        assert transmit_field(0.0, g) == pytest.approx(22.7967, abs=1e-3)

    def test_waist_ratio(self):
        g = make_geom()
        assert transmit_field(W, g) == pytest.approx(transmit_field(0.0, g) * math.exp(-1), rel=1e-12)

    def test_unit_power(self):
        g = make_geom()
        # envelope of r E^2 falls below 1e-15 well before 10 w
        res = integrate(lambda r: r * transmit_field(r, g) ** 2, 0.0, 10 * W)
        assert 2 * math.pi * res.value == pytest.approx(1.0, abs=1e-9)

    def test_negative_radius_rejected(self):
        with pytest.raises(DomainError):
            transmit_field(-0.1, make_geom())


class TestSpatialSpectrum:
    def test_dc_positive(self):
        g = make_geom()
        assert spatial_spectrum(0.0, g) > 0.0

    def test_high_frequency_decay(self):
        g = make_geom()
        f0 = spatial_spectrum(0.0, g)
        f_hi = spatial_spectrum(10.0 / W, g)
        assert abs(f_hi) < 1e-3 * f0

    def test_parseval(self):
        g = make_geom(n=8)
        rho_cap = g.spectral_cutoff("capture")
        x, wt = leggauss(600)
        rho = 0.5 * rho_cap * (x + 1.0)
        wr = 0.5 * rho_cap * wt
        f = np.array([spatial_spectrum(float(p), g) for p in rho])
        lhs = 2 * math.pi * np.sum(rho * f * f * wr)
        rhs = g.power_norm() ** 2
        assert lhs == pytest.approx(rhs, rel=0.01)

    def test_gaussian_closed_form(self):
        # for R0 >> w the spectrum approaches A pi w^2 exp(-(pi w rho)^2)
        g = make_geom(n=32)
        amp = math.sqrt(2.0 / (math.pi * W * W)) * math.pi * W * W
        for rho in (0.0, 2.0, 5.0):
            expected = amp * math.exp(-((math.pi * W * rho) ** 2))
            assert spatial_spectrum(rho, g) == pytest.approx(expected, rel=1e-6)


class TestPropagateField:
    def test_near_field_matches_launch(self):
        g = make_geom(z=1.0, n=8)
        fld = propagate_field(g)
        rs = np.linspace(0.0, 2 * W, 200)
        got = np.abs(fld.amplitude(rs))
        want = transmit_field(rs, g)
        assert np.max(np.abs(got - want)) < 0.01 * want[0]

    def test_round_trip_reconstruction(self):
        # +z then -z phase composition equals the z = 0 reconstruction
        g = make_geom(z=1000.0, n=8)
        fld = propagate_field(g, distance_override=0.0)
        rs = np.linspace(0.0, 2 * W, 400)
        got = np.abs(fld.amplitude(rs))
        want = transmit_field(rs, g)
        rms = math.sqrt(np.mean((got - want) ** 2))
        assert rms < 0.01 * want[0]

    @pytest.mark.parametrize("z", [100.0, 1000.0, 2000.0])
    def test_beam_width_matches_paraxial_oracle(self, z):
        g = make_geom(z=z, n=8)
        fld = propagate_field(g)
        wz = W * math.sqrt(1.0 + (z / g.rayleigh_range) ** 2)
        rs = np.linspace(0.0, 3 * wz, 3000)
        inten = np.abs(fld.amplitude(rs)) ** 2
        target = inten[0] * math.exp(-2.0)
        idx = int(np.argmax(inten < target))
        assert idx > 0
        r1, r2 = rs[idx - 1], rs[idx]
        i1, i2 = inten[idx - 1], inten[idx]
        measured = r1 + (target - i1) * (r2 - r1) / (i2 - i1)
        assert measured == pytest.approx(wz, rel=0.02)

    def test_energy_not_exceeding_transmitted(self):
        g = make_geom(z=1000.0, n=8)
        fld = propagate_field(g)
        rg = fld.radial_grid
        inten = np.abs(fld.values) ** 2
        energy = 2 * math.pi * np.trapezoid(inten * rg, rg)
        assert energy <= 1.0 + 0.01
        assert energy > 0.9

    def test_divergence_cutoff_loses_energy(self):
        g = make_geom(z=1000.0, n=8)
        fld = propagate_field(g, grid=GridSpec(cutoff_mode="divergence"))
        rg = fld.radial_grid
        energy = 2 * math.pi * np.trapezoid(np.abs(fld.values) ** 2 * rg, rg)
        assert energy == pytest.approx(1.0 - math.exp(-2.0), rel=0.02)


class TestMisalignmentStats:
    def test_fried_parameter_spot(self):
        g = make_geom(z=1000.0)
        m = misalignment_stats(g, c_n_sq=1e-15, theta_p=1e-6)
        oracle = (0.423 * g.wavenumber**2 * 1e-15 * 1000.0) ** (-0.6)
        assert m.fried_r_c == pytest.approx(oracle, rel=1e-12)
        assert m.fried_r_c == pytest.approx(0.312, abs=0.001)

    def test_sigma_composite_spot(self):
        g = make_geom(z=1000.0)
        m = misalignment_stats(g, c_n_sq=1e-15, theta_p=1e-6)
        assert m.sigma_r == pytest.approx(2.8e-3, abs=0.05e-3)

    def test_additivity_exact(self):
        g = make_geom(z=3000.0)
        m = misalignment_stats(g, c_n_sq=5e-16, theta_p=2e-6)
        assert m.sigma_r**2 == pytest.approx(m.sigma_p_sq + m.sigma_bw_sq, rel=1e-12)

    def test_no_jitter_no_turbulence(self):
        g = make_geom(z=1000.0)
        m = misalignment_stats(g, c_n_sq=0.0, theta_p=0.0)
        assert m.sigma_r == 0.0


class TestRingLayout:
    def test_counts(self):
        g = make_geom(n=8)
        lay = ring_layout(g, n_rx=8, rx_radius=0.2)
        assert lay.n_tx == 8
        assert lay.n_rx == 8

    def test_tx_within_r0(self):
        for n in (1, 2, 8, 16, 32):
            g = BeamGeometry(LAM, W, 1000.0, tx_count=n)
            lay = ring_layout(g, n_rx=n, rx_radius=0.2)
            assert np.linalg.norm(lay.tx_centers, axis=1).max() <= g.effective_tx_radius + 1e-12

    def test_rx_apertures_touch_not_overlap(self):
        g = make_geom(n=32)
        lay = ring_layout(g, n_rx=32, rx_radius=0.2)
        d = np.linalg.norm(lay.rx_centers[:, None] - lay.rx_centers[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 2 * 0.2 - 1e-9

    def test_overlapping_rx_rejected(self):
        with pytest.raises(GeometryError):
            ApertureLayout(tx_centers=[[0, 0]], rx_centers=[[0, 0], [0.1, 0]], rx_radius=0.2)


@pytest.fixture(scope="module")
def field_1km():
    g = make_geom(z=1000.0, n=8)
    lay = ring_layout(g, n_rx=8, rx_radius=0.2)
    reach = (np.linalg.norm(lay.rx_centers, axis=1).max()
             + np.linalg.norm(lay.tx_centers, axis=1).max() + 0.4)
    fld = propagate_field(g, GridSpec(r_max=reach + 0.25))
    return g, lay, fld


class TestChannelGain:
    def test_full_capture_matches_grid_oracle(self, field_1km):
        g, lay, fld = field_1km
        h = channel_gain(0, 0, fld, lay)
        # independent Cartesian midpoint-rule oracle over the disk
        n = 801
        xs = np.linspace(-0.2, 0.2, n)
        dx = xs[1] - xs[0]
        X, Y = np.meshgrid(xs, xs)
        R = np.sqrt(X**2 + Y**2)
        mask = R <= 0.2
        vals = fld.amplitude(np.where(mask, R, 0.0))
        oracle = vals[mask].sum() * dx * dx / g.power_norm()
        assert h == pytest.approx(oracle, rel=2e-3)

    def test_full_capture_equals_dc_component(self, field_1km):
        # a disk containing the whole beam collects the conserved DC integral
        g, lay, fld = field_1km
        h = channel_gain(0, 0, fld, lay)
        expected = W * math.sqrt(2 * math.pi) / g.power_norm()
        assert abs(h) == pytest.approx(expected, rel=5e-3)

    def test_beam_miss(self, field_1km):
        g, lay, fld = field_1km
        # central transmitter, ring-1 aperture at 0.4 m: beam radius 38 mm
        h = channel_gain(0, 1, fld, lay)
        assert abs(h) < 1e-6

    def test_translation_symmetry(self, field_1km):
        g, lay, fld = field_1km
        v = np.array([0.013, -0.007])
        h1 = channel_gain(2, 0, fld, lay, misalignment_offset=v)
        shifted = ApertureLayout(tx_centers=lay.tx_centers,
                                 rx_centers=lay.rx_centers - v,
                                 rx_radius=lay.rx_radius)
        h2 = channel_gain(2, 0, fld, shifted)
        assert h1 == pytest.approx(h2, abs=1e-10)

    def test_continuity_in_offset(self, field_1km):
        g, lay, fld = field_1km
        delta = 1e-6 * W
        h0 = channel_gain(1, 0, fld, lay, misalignment_offset=(0.0, 0.0))
        h1 = channel_gain(1, 0, fld, lay, misalignment_offset=(delta, 0.0))
        assert abs(h1 - h0) < 1e-6 * abs(h0) + 1e-12

    def test_grid_coverage_enforced(self, field_1km):
        g, lay, fld = field_1km
        with pytest.raises(GeometryError):
            overlap_integral(fld, fld.r_max, 0.2)


class TestOverlapTable:
    def test_matches_direct_integration(self, field_1km):
        g, lay, fld = field_1km
        table = OverlapTable(fld, a_r=0.2, s_max=1.0)
        for s in (0.0, 0.05, 0.13, 0.21, 0.4, 0.77):
            direct = overlap_integral(fld, s, 0.2) / g.power_norm()
            assert table.gain(s) == pytest.approx(direct, rel=2e-4, abs=1e-9)

    def test_vectorized(self, field_1km):
        g, lay, fld = field_1km
        table = OverlapTable(fld, a_r=0.2, s_max=1.0)
        ss = np.array([0.0, 0.1, 0.5])
        got = table.gain(ss)
        for i, s in enumerate(ss):
            assert got[i] == pytest.approx(table.gain(float(s)), rel=1e-12)

    def test_range_enforced(self, field_1km):
        g, lay, fld = field_1km
        table = OverlapTable(fld, a_r=0.2, s_max=0.5)
        with pytest.raises(GeometryError):
            table.gain(0.6)
