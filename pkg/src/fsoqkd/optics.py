"""Gaussian-beam fields, angular-spectrum propagation, and aperture overlap gains.

The transmitted field is a normalized Gaussian of waist ``w``. Propagation to
distance ``z`` goes through the radial spatial-frequency spectrum

    F(rho) = 2 pi int_0^R0 r E(r) J0(2 pi r rho) dr
    G(r)   = 2 pi int_0^rho_cut rho F(rho) J0(2 pi r rho) exp(j sqrt(k^2 - (2 pi rho)^2) z) drho

with R0 = sqrt(N_T) w the effective transmit aperture radius. The sub-channel
gain from transmitter j to receive aperture i is the area integral of the
displaced field over the receive disk, normalized by the square root of the
transmitted power:

    h_ij = int_{D_i} G(|x - t_j - r_off|) ds / sqrt(2 pi int_0^R0 r |E(r)|^2 dr)

Because G is radially symmetric, h depends on the aperture/beam separation
only through its magnitude; ``OverlapTable`` caches the overlap integral as a
spline in that scalar separation so Monte-Carlo draws reuse one propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from .numerics import DomainError, QuadratureSpec, bessel_j0, integrate


class GeometryError(ValueError):
    """Layout or field-grid coverage violation."""


@dataclass(frozen=True)
class BeamGeometry:
    """Beam and link geometry. SI units throughout."""

    wavelength: float
    waist: float
    distance: float
    tx_count: int = 1

    def __post_init__(self):
        if not (self.wavelength > 0 and self.waist > 0 and self.distance > 0):
            raise DomainError("wavelength, waist and distance must be positive")
        if self.tx_count < 1:
            raise DomainError("tx_count must be >= 1")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def rayleigh_range(self) -> float:
        return math.pi * self.waist**2 / self.wavelength

    @property
    def effective_tx_radius(self) -> float:
        """R0 = sqrt(N_T) w."""
        return math.sqrt(self.tx_count) * self.waist

    @property
    def rho_max_divergence(self) -> float:
        """Divergence-cone spectral cutoff sin(lambda / (pi w)) / lambda.

        This truncates the Gaussian spectrum at its 1/e amplitude point and
        discards ~13.5% of the beam energy; kept for sensitivity studies.
        The default propagation cutoff is ``spectral_cutoff('capture')``.
        """
        return math.sin(self.wavelength / (math.pi * self.waist)) / self.wavelength

    def spectral_cutoff(self, mode: str = "capture", cap_scale: float = 6.0) -> float:
        """Spectral integration limit used by ``propagate_field``.

        'capture' extends to cap_scale/(pi w), where the Gaussian spectrum has
        decayed to exp(-cap_scale^2); 'divergence' uses the divergence-cone
        value. Both are capped below the evanescent limit 1/lambda.
        """
        evanescent = 0.999 / self.wavelength
        if mode == "capture":
            return min(cap_scale / (math.pi * self.waist), evanescent)
        if mode == "divergence":
            return min(self.rho_max_divergence, evanescent)
        raise DomainError(f"unknown spectral cutoff mode {mode!r}")

    def power_norm(self) -> float:
        """sqrt(2 pi int_0^R0 r |E(r)|^2 dr), the gain normalization."""
        ratio = self.effective_tx_radius / self.waist
        return math.sqrt(1.0 - math.exp(-2.0 * ratio * ratio))


@dataclass(frozen=True)
class MisalignmentModel:
    """Pointing-error plus beam-wander displacement statistics."""

    theta_p: float       # pointing jitter, rad
    sigma_p_sq: float    # m^2
    sigma_bw_sq: float   # m^2
    fried_r_c: float     # m (inf when turbulence is absent)
    sigma_r: float       # m, composite radial std deviation

    def __post_init__(self):
        if min(self.sigma_p_sq, self.sigma_bw_sq, self.sigma_r) < 0:
            raise DomainError("misalignment variances must be non-negative")


def misalignment_stats(geom: BeamGeometry, c_n_sq: float, theta_p: float) -> MisalignmentModel:
    """Fried parameter, beam-wander and pointing variances, and their composite.

    r_c     = (0.423 k^2 Cn^2 z)^(-3/5)
    s_bw^2  = 0.1337 lambda^2 z^2 w^(-1/3) r_c^(-5/3)
    s_p^2   = z^2 theta_p^2
    sigma_r = sqrt(s_p^2 + s_bw^2)
    """
    if c_n_sq < 0 or theta_p < 0:
        raise DomainError("c_n_sq and theta_p must be non-negative")
    z = geom.distance
    k = geom.wavenumber
    sigma_p_sq = (z * theta_p) ** 2
    if c_n_sq == 0.0:
        fried = math.inf
        sigma_bw_sq = 0.0
    else:
        fried = (0.423 * k * k * c_n_sq * z) ** (-3.0 / 5.0)
        sigma_bw_sq = 0.1337 * geom.wavelength**2 * z * z \
            * geom.waist ** (-1.0 / 3.0) * fried ** (-5.0 / 3.0)
    return MisalignmentModel(
        theta_p=theta_p,
        sigma_p_sq=sigma_p_sq,
        sigma_bw_sq=sigma_bw_sq,
        fried_r_c=fried,
        sigma_r=math.sqrt(sigma_p_sq + sigma_bw_sq),
    )


def transmit_field(r, geom: BeamGeometry):
    """Launch-plane field amplitude sqrt(2/(pi w^2)) exp(-r^2/w^2)."""
    ra = np.asarray(r, dtype=float)
    if np.any(ra < 0):
        raise DomainError("radius must be non-negative")
    w = geom.waist
    out = math.sqrt(2.0 / (math.pi * w * w)) * np.exp(-((ra / w) ** 2))
    return float(out) if np.ndim(r) == 0 else out


def spatial_spectrum(rho: float, geom: BeamGeometry,
                     spec: QuadratureSpec = QuadratureSpec(abs_tol=1e-12, rel_tol=1e-10)) -> float:
    """F(rho) = 2 pi int_0^R0 r E(r) J0(2 pi r rho) dr, by adaptive quadrature."""
    if rho < 0:
        raise DomainError("rho must be non-negative")
    r0 = geom.effective_tx_radius
    res = integrate(lambda r: r * transmit_field(r, geom) * bessel_j0(2.0 * math.pi * r * rho),
                    0.0, r0, spec)
    return 2.0 * math.pi * res.value


def _spectrum_nodes(geom: BeamGeometry, rho: np.ndarray, n_nodes: int = 800) -> np.ndarray:
    """Vectorized F(rho) on arbitrary nodes via fixed Gauss-Legendre."""
    r0 = geom.effective_tx_radius
    x, wt = leggauss(n_nodes)
    r = 0.5 * r0 * (x + 1.0)
    wr = 0.5 * r0 * wt
    integrand = (r * transmit_field(r, geom) * wr)[None, :] \
        * bessel_j0(2.0 * math.pi * np.outer(rho, r))
    return 2.0 * math.pi * integrand.sum(axis=1)


@dataclass(frozen=True)
class GridSpec:
    """Sampling controls for the propagated radial field."""

    n_points: int = 2048
    r_max: float | None = None       # default: R0 + 8 w(z)
    cutoff_mode: str = "capture"     # 'capture' | 'divergence'
    cap_scale: float = 6.0
    n_quad: int | None = None        # spectral nodes; default scales with r_max


@dataclass(frozen=True)
class PropagatedField:
    """Radially sampled complex field after propagation, with interpolation."""

    radial_grid: np.ndarray
    values: np.ndarray
    distance: float
    geometry: BeamGeometry
    interpolation_order: int = 3
    _re: CubicSpline = dc_field(repr=False, compare=False, default=None)
    _im: CubicSpline = dc_field(repr=False, compare=False, default=None)

    @property
    def r_max(self) -> float:
        return float(self.radial_grid[-1])

    def amplitude(self, r):
        """Interpolated complex field at radius r (must lie on the grid)."""
        ra = np.asarray(r, dtype=float)
        if np.any(ra < 0) or np.any(ra > self.r_max):
            raise GeometryError("requested radius outside the sampled field grid")
        out = self._re(ra) + 1j * self._im(ra)
        return complex(out) if np.ndim(r) == 0 else out


def propagate_field(geom: BeamGeometry, grid: GridSpec = GridSpec(),
                    distance_override: float | None = None) -> PropagatedField:
    """Sample the propagated field G on a radial grid.

    ``distance_override`` substitutes the propagation phase distance (z = 0
    reproduces the truncated-spectrum reconstruction of the launch field,
    which is the round-trip +z/-z composition); the default is the geometry's
    link distance.
    """
    z = geom.distance if distance_override is None else float(distance_override)
    w = geom.waist
    zr = geom.rayleigh_range
    wz = w * math.sqrt(1.0 + (z / zr) ** 2)
    r_max = grid.r_max if grid.r_max is not None else geom.effective_tx_radius + 8.0 * wz
    rho_cut = geom.spectral_cutoff(grid.cutoff_mode, grid.cap_scale)

    n_quad = grid.n_quad
    if n_quad is None:
        # keep several nodes per J0 oscillation across the whole grid
        n_quad = int(min(max(3072, 8.0 * r_max * rho_cut), 12000))
    x, wt = leggauss(n_quad)
    rho = 0.5 * rho_cut * (x + 1.0)
    wrho = 0.5 * rho_cut * wt

    f_rho = _spectrum_nodes(geom, rho)
    k = geom.wavenumber
    kz_sq = np.maximum(k * k - (2.0 * math.pi * rho) ** 2, 0.0)
    phase = np.exp(1j * np.sqrt(kz_sq) * z)

    rg = np.linspace(0.0, r_max, grid.n_points)
    weights = rho * f_rho * phase * wrho
    values = 2.0 * math.pi * (weights[None, :] * bessel_j0(2.0 * math.pi * np.outer(rg, rho))).sum(axis=1)

    fld = PropagatedField(radial_grid=rg, values=values, distance=z, geometry=geom)
    object.__setattr__(fld, "_re", CubicSpline(rg, values.real))
    object.__setattr__(fld, "_im", CubicSpline(rg, values.imag))
    return fld


@dataclass(frozen=True)
class ApertureLayout:
    """Transmit axes and receive apertures in the transverse plane (meters)."""

    tx_centers: np.ndarray   # (N_T, 2)
    rx_centers: np.ndarray   # (N_R, 2)
    rx_radius: float

    def __post_init__(self):
        tx = np.atleast_2d(np.asarray(self.tx_centers, dtype=float))
        rx = np.atleast_2d(np.asarray(self.rx_centers, dtype=float))
        object.__setattr__(self, "tx_centers", tx)
        object.__setattr__(self, "rx_centers", rx)
        if tx.shape[1] != 2 or rx.shape[1] != 2:
            raise GeometryError("aperture centers must be 2-D positions")
        if self.rx_radius <= 0:
            raise GeometryError("rx_radius must be positive")
        if len(rx) > 1:
            d = np.linalg.norm(rx[:, None, :] - rx[None, :, :], axis=2)
            np.fill_diagonal(d, np.inf)
            if d.min() < 2.0 * self.rx_radius - 1e-9:
                raise GeometryError("receive apertures overlap")

    @property
    def n_tx(self) -> int:
        return len(self.tx_centers)

    @property
    def n_rx(self) -> int:
        return len(self.rx_centers)

    def validate_against(self, geom: BeamGeometry):
        rad = np.linalg.norm(self.tx_centers, axis=1).max()
        if rad > geom.effective_tx_radius + 1e-9:
            raise GeometryError(
                f"tx centers extend to {rad:.4f} m, beyond R0 = "
                f"{geom.effective_tx_radius:.4f} m")


def _ring_positions(n: int, radius_of_ring, angle_offset: float = 0.0) -> np.ndarray:
    """One central element plus rings of 6, 12, ... elements; the last ring may
    be partially filled, with uniform angular spacing of its actual count."""
    pts = [(0.0, 0.0)]
    ring = 1
    remaining = n - 1
    counts = []
    while remaining > 0:
        c = min(6 * ring, remaining)
        counts.append(c)
        remaining -= c
        ring += 1
    n_rings = len(counts)
    for idx, count in enumerate(counts, start=1):
        rad = radius_of_ring(idx, n_rings)
        for m in range(count):
            ang = 2.0 * math.pi * m / count + angle_offset
            pts.append((rad * math.cos(ang), rad * math.sin(ang)))
    return np.asarray(pts[:n])


def ring_layout(geom: BeamGeometry, n_rx: int, rx_radius: float,
                tx_ring_scale: float = 0.8) -> ApertureLayout:
    """Default concentric-ring packing.

    Transmit rings are evenly spaced with the outermost at
    ``tx_ring_scale * R0`` (still within the effective aperture radius R0);
    receive rings are spaced 2 a_r so adjacent apertures touch without
    overlapping.
    """
    if not (0.0 < tx_ring_scale <= 1.0):
        raise GeometryError("tx_ring_scale must lie in (0, 1]")
    r_outer = tx_ring_scale * geom.effective_tx_radius
    tx = _ring_positions(geom.tx_count,
                         lambda idx, n_rings: r_outer * idx / n_rings)
    rx = _ring_positions(n_rx, lambda idx, n_rings: 2.0 * rx_radius * idx)
    layout = ApertureLayout(tx_centers=tx, rx_centers=rx, rx_radius=rx_radius)
    layout.validate_against(geom)
    return layout


def _disk_integral(field: PropagatedField, separation: float, a_r: float,
                   n_rad: int, n_ang: int) -> complex:
    """Tensor-product rule for the disk overlap at center separation s."""
    x, wt = leggauss(n_rad)
    u = 0.5 * a_r * (x + 1.0)
    wu = 0.5 * a_r * wt
    ang = np.linspace(0.0, 2.0 * math.pi, n_ang, endpoint=False)
    rad = np.sqrt(np.maximum(
        u[:, None] ** 2 + separation**2 - 2.0 * separation * u[:, None] * np.cos(ang)[None, :],
        0.0))
    g = field.amplitude(rad)
    return complex(((u * wu) @ g.sum(axis=1)) * (2.0 * math.pi / n_ang))


def overlap_integral(field: PropagatedField, separation: float, a_r: float,
                     rel_tol: float = 1e-4, n_rad: int = 32, n_ang: int = 64) -> complex:
    """Disk overlap integral, refined by doubling until successive rules agree."""
    if separation < 0:
        raise GeometryError("separation must be non-negative")
    if separation + a_r > field.r_max + 1e-12:
        raise GeometryError(
            f"field grid (r_max = {field.r_max:.3f} m) does not cover the "
            f"integration disk at separation {separation:.3f} m")
    prev = _disk_integral(field, separation, a_r, n_rad, n_ang)
    for _ in range(4):
        n_rad *= 2
        n_ang *= 2
        cur = _disk_integral(field, separation, a_r, n_rad, n_ang)
        if abs(cur - prev) <= max(rel_tol * abs(cur), 1e-15):
            return cur
        prev = cur
    return cur


def channel_gain(tx_index: int, rx_index: int, field: PropagatedField,
                 layout: ApertureLayout, misalignment_offset=(0.0, 0.0)) -> complex:
    """Complex sub-channel gain h_{rx,tx} for one misalignment offset.

    The receive-disk integral depends on the displaced beam axis only through
    the scalar separation |c_rx - t_tx - offset|, so translation symmetry in
    the offset is exact by construction.
    """
    t = layout.tx_centers[tx_index]
    c = layout.rx_centers[rx_index]
    off = np.asarray(misalignment_offset, dtype=float)
    sep = float(np.linalg.norm(c - t - off))
    return overlap_integral(field, sep, layout.rx_radius) / field.geometry.power_norm()


class OverlapTable:
    """Spline cache of the overlap integral versus center separation.

    Built once per propagated field and reused across Monte-Carlo offsets;
    sampled densely relative to the propagated beam radius, with the same
    doubling refinement criterion as ``overlap_integral``.
    """

    def __init__(self, field: PropagatedField, a_r: float, s_max: float,
                 rel_tol: float = 1e-4, n_rad: int = 32, n_ang: int = 64):
        if s_max + a_r > field.r_max + 1e-12:
            raise GeometryError("field grid does not cover the requested separations")
        wz = field.geometry.waist * math.sqrt(
            1.0 + (field.distance / field.geometry.rayleigh_range) ** 2)
        n_samples = int(np.clip(math.ceil(s_max / (wz / 8.0)), 256, 4096))
        self.s_grid = np.linspace(0.0, s_max, n_samples)
        self.a_r = a_r
        self.norm = field.geometry.power_norm()
        vals = self._batch(field, n_rad, n_ang)
        for _ in range(3):
            finer = self._batch(field, n_rad * 2, n_ang * 2)
            err = np.abs(finer - vals)
            if np.all(err <= np.maximum(rel_tol * np.abs(finer), 1e-15)):
                vals = finer
                break
            vals = finer
            n_rad *= 2
            n_ang *= 2
        self.values = vals
        self._re = CubicSpline(self.s_grid, vals.real)
        self._im = CubicSpline(self.s_grid, vals.imag)

    def _batch(self, field: PropagatedField, n_rad: int, n_ang: int) -> np.ndarray:
        x, wt = leggauss(n_rad)
        u = 0.5 * self.a_r * (x + 1.0)
        wu = 0.5 * self.a_r * wt
        ang = np.linspace(0.0, 2.0 * math.pi, n_ang, endpoint=False)
        ca = np.cos(ang)
        out = np.empty(len(self.s_grid), dtype=complex)
        for i, s in enumerate(self.s_grid):
            rad = np.sqrt(np.maximum(
                u[:, None] ** 2 + s * s - 2.0 * s * u[:, None] * ca[None, :], 0.0))
            g = field.amplitude(rad)
            out[i] = ((u * wu) @ g.sum(axis=1)) * (2.0 * math.pi / n_ang)
        return out

    def gain(self, separation):
        """Normalized complex gain at the given center separation(s)."""
        s = np.asarray(separation, dtype=float)
        if np.any(s < 0) or np.any(s > self.s_grid[-1] + 1e-12):
            raise GeometryError("separation outside the tabulated range")
        s = np.minimum(s, self.s_grid[-1])
        out = (self._re(s) + 1j * self._im(s)) / self.norm
        return complex(out) if np.ndim(separation) == 0 else out
