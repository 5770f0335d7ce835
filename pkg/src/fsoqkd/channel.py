"""MIMO channel assembly: overlap-gain matrix, SVD sub-channels, atmospheric factors.

Per-sub-channel transmissivities:

    one-way:  T_i = eta_d * T_a * T_t_i * beta_i
    two-way:  T_i = eta_d * p_m * T_a * T_b * T_t_i^2 * beta_i^2,  T_b = T_a

with T_a = 10^(-delta z / 10) the absorption loss, T_t the lognormal
turbulence fading sample (unit mean), and beta_i the channel singular values
(clamped into [0, 1] so transmissivities stay probabilities).

The log-irradiance variance sigma^2 comes from the Rytov approximation
sigma^2 = exp(xi1 + xi2) - 1 with

    chi^2 = 1.23 Cn^2 k^(7/6) z^(11/6)         (Rytov variance)
    d     = a_r sqrt(k / z)                    (Fresnel number term)
    xi1   = 0.49 chi^2 / (1 + 0.18 d^2 + 0.56 chi^(12/5))^(7/6)
    xi2   = 0.51 chi^2 * (1 + 0.9 d^2 + 0.62 d^2 chi^(12/5))^(+-5/6)

The 'classical' aperture-averaged form (the default) carries the negative
exponent on the xi2 aperture factor; the 'amplified' variant flips it to
+5/6, which makes sigma^2 grow without bound at km-scale distances (~9e5 at
10 km for the default link) and drives heavy-tailed fading. See the README
for the sensitivity switch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError
from .optics import ApertureLayout, BeamGeometry, OverlapTable, PropagatedField, channel_gain

logger = logging.getLogger(__name__)

RANK_THRESHOLD = 1e-10  # beta_i counts toward the rank iff beta_i > threshold * beta_max

RYTOV_FORMS = ("classical", "amplified")


class ModelConsistencyError(ValueError):
    """A transmissivity factor left its physical range."""


@dataclass(frozen=True)
class AtmosphereParams:
    """Static atmospheric inputs. delta in dB/m, c_n_sq in m^(-2/3), a_r in m."""

    delta: float = 0.43e-3
    c_n_sq: float = 1e-15
    a_r: float = 0.20
    rytov_form: str = "classical"

    def __post_init__(self):
        if self.delta < 0:
            raise DomainError("absorption coefficient must be non-negative")
        if self.c_n_sq < 0:
            raise DomainError("refractive-index structure constant must be non-negative")
        if self.a_r <= 0:
            raise DomainError("receiver aperture radius must be positive")
        if self.rytov_form not in RYTOV_FORMS:
            raise DomainError(f"rytov_form must be one of {RYTOV_FORMS}")


@dataclass(frozen=True)
class RytovResult:
    """Log-irradiance variance with its intermediate quantities."""

    sigma_sq: float
    chi_sq: float
    fresnel_d: float
    xi1: float
    xi2: float
    form: str


def rytov_variance(geom: BeamGeometry, atm: AtmosphereParams,
                   form: str | None = None) -> RytovResult:
    """Log-irradiance variance sigma^2 = exp(xi1 + xi2) - 1 at the link distance."""
    z = geom.distance
    if z <= 0:
        raise DomainError("distance must be positive")
    form = atm.rytov_form if form is None else form
    if form not in RYTOV_FORMS:
        raise DomainError(f"rytov form must be one of {RYTOV_FORMS}")
    k = geom.wavenumber
    chi_sq = 1.23 * atm.c_n_sq * k ** (7.0 / 6.0) * z ** (11.0 / 6.0)
    d = atm.a_r * math.sqrt(k / z)
    d2 = d * d
    chi_125 = chi_sq ** (6.0 / 5.0)
    xi1 = 0.49 * chi_sq / (1.0 + 0.18 * d2 + 0.56 * chi_125) ** (7.0 / 6.0)
    base = 1.0 + 0.9 * d2 + 0.62 * d2 * chi_125
    exponent = 5.0 / 6.0 if form == "amplified" else -5.0 / 6.0
    xi2 = 0.51 * chi_sq * base ** exponent
    sigma_sq = math.expm1(xi1 + xi2)
    return RytovResult(sigma_sq=sigma_sq, chi_sq=chi_sq, fresnel_d=d,
                       xi1=xi1, xi2=xi2, form=form)


def atmospheric_attenuation(delta: float, z: float) -> float:
    """Absorption transmissivity T_a = 10^(-delta z / 10)."""
    if delta < 0 or z < 0:
        raise DomainError("delta and z must be non-negative")
    return 10.0 ** (-delta * z / 10.0)


@dataclass(frozen=True)
class ChannelDraw:
    """One Monte-Carlo realization of the MIMO channel."""

    h_matrix: np.ndarray              # complex (N_R, N_T)
    singular_values: np.ndarray       # clamped into [0, 1], descending, length r_H
    singular_values_raw: np.ndarray   # unclamped, descending, length r_H
    rank: int
    misalignment_offset: np.ndarray   # (2,) meters
    turbulence: np.ndarray            # fading sample per sub-channel, length r_H

    def __post_init__(self):
        if self.rank > min(self.h_matrix.shape):
            raise ModelConsistencyError("rank exceeds matrix dimensions")
        if np.any(np.diff(self.singular_values_raw) > 1e-12):
            raise ModelConsistencyError("singular values must be sorted descending")


def build_channel(field: PropagatedField, layout: ApertureLayout,
                  misalignment_offset=(0.0, 0.0), *,
                  overlap: OverlapTable | None = None,
                  turbulence=1.0) -> ChannelDraw:
    """Assemble H from the per-pair overlap gains and decompose it.

    All transmitters share one propagated field (identical sources). The
    ``overlap`` table, when given, replaces per-entry quadrature with the
    cached spline; ``turbulence`` supplies fading samples (scalar or an array
    of length >= min(N_T, N_R)) that are attached per sub-channel.
    """
    off = np.asarray(misalignment_offset, dtype=float)
    seps = np.linalg.norm(
        layout.rx_centers[:, None, :] - layout.tx_centers[None, :, :] - off[None, None, :],
        axis=2)
    if overlap is not None:
        h = overlap.gain(seps)
    else:
        h = np.empty(seps.shape, dtype=complex)
        for i in range(layout.n_rx):
            for j in range(layout.n_tx):
                h[i, j] = channel_gain(j, i, field, layout, off)

    try:
        sv = np.linalg.svd(h, compute_uv=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numerical edge
        raise ModelConsistencyError(
            f"SVD failed (matrix norm {np.linalg.norm(h):.3e}, "
            f"condition inputs {seps.min():.3e}..{seps.max():.3e})") from exc
    sv = np.sort(sv)[::-1]
    if sv[0] <= 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(sv > RANK_THRESHOLD * sv[0]))
    raw = sv[:rank]
    clamped = np.minimum(raw, 1.0)
    if np.any(raw > 1.0):
        logger.warning("clamped %d singular value(s) above 1 (max %.4f)",
                       int(np.sum(raw > 1.0)), float(raw.max()))

    t = np.asarray(turbulence, dtype=float)
    if t.ndim == 0:
        t = np.full(rank, float(t))
    else:
        if len(t) < rank:
            raise ModelConsistencyError("need one turbulence sample per sub-channel")
        t = t[:rank]
    if np.any(t < 0):
        raise ModelConsistencyError("turbulence samples must be non-negative")

    return ChannelDraw(h_matrix=h, singular_values=clamped, singular_values_raw=raw,
                       rank=rank, misalignment_offset=off, turbulence=t)


def _finalize_transmissivity(t, what: str):
    ta = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(ta)) or np.any(ta < 0):
        raise ModelConsistencyError(f"{what} transmissivity left [0, 1]: {ta}")
    clipped = np.minimum(ta, 1.0)
    n_clip = int(np.sum(ta > 1.0))
    if n_clip:
        logger.warning("clamped %d %s transmissivity value(s) above 1", n_clip, what)
    return clipped


def one_way_transmissivity(beta, turbulence, geom: BeamGeometry,
                           atm: AtmosphereParams, eta_d: float):
    """T_i = eta_d * T_a * T_t_i * beta_i, clamped into [0, 1]."""
    if not (0.0 <= eta_d <= 1.0):
        raise DomainError("detector efficiency must lie in [0, 1]")
    ta = atmospheric_attenuation(atm.delta, geom.distance)
    t = eta_d * ta * np.asarray(turbulence, dtype=float) * np.asarray(beta, dtype=float)
    out = _finalize_transmissivity(t, "one-way")
    return float(out) if np.ndim(beta) == 0 and np.ndim(turbulence) == 0 else out


def two_way_transmissivity(beta, turbulence, geom: BeamGeometry,
                           atm: AtmosphereParams, eta_d: float, p_m: float):
    """T_i = eta_d * p_m * T_a * T_b * T_t_i^2 * beta_i^2 (round trip), clamped."""
    if not (0.0 <= eta_d <= 1.0):
        raise DomainError("detector efficiency must lie in [0, 1]")
    if not (0.0 < p_m <= 1.0):
        raise DomainError("message-mode probability must lie in (0, 1]")
    ta = atmospheric_attenuation(atm.delta, geom.distance)
    tt = np.asarray(turbulence, dtype=float)
    b = np.asarray(beta, dtype=float)
    t = eta_d * p_m * ta * ta * tt * tt * b * b
    out = _finalize_transmissivity(t, "two-way")
    return float(out) if np.ndim(beta) == 0 and np.ndim(turbulence) == 0 else out
