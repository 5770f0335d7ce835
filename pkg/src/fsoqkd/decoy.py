"""Poisson-source statistics, threshold-detector observables, and two-decoy bounds.

Forward model (per intensity mu and channel transmissivity T):

    Q_mu   = Y0 + (1 - Y0) (1 - exp(-mu T))
    E_mu   = [e0 Y0 + e_det (1 - exp(-mu T))] / Q_mu

The bound estimators consume only the observable pairs (Q_mu, E_mu) at the
signal and two decoy intensities and return lower/upper bounds on the single-
and two-photon yields and error rates. All estimator functions accept scalars
or numpy arrays (vectorized over channels); clamped or saturated entries are
reported through boolean flag masks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError


class DegenerateDecoyError(ValueError):
    """Decoy intensities coincide; the bound system is singular."""


class DegenerateChannelError(ValueError):
    """Observable gain is zero; error rates are undefined."""


@dataclass(frozen=True)
class SourceModel:
    """Weak-coherent-pulse source: signal and two decoy mean photon numbers."""

    mu_signal: float = 0.5
    mu_decoy1: float = 0.1
    mu_decoy2: float = 0.001

    def __post_init__(self):
        if not (self.mu_decoy1 >= self.mu_decoy2 >= 0.0):
            raise DomainError("decoy intensities must satisfy mu_decoy1 >= mu_decoy2 >= 0")
        if not (self.mu_signal > self.mu_decoy1 + self.mu_decoy2):
            raise DomainError("signal intensity must exceed the decoy intensity sum")


@dataclass(frozen=True)
class DetectorModel:
    """Threshold detector: background yield/error, misalignment error, efficiency."""

    background_yield: float = 1.6e-5   # Y0
    background_error: float = 0.5      # e0
    misalignment_error: float = 0.015  # e_det
    efficiency: float = 0.12           # eta_d

    def __post_init__(self):
        for name in ("background_yield", "background_error", "misalignment_error", "efficiency"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class DecoyObservations:
    """Per-intensity gains and QBERs, the estimators' only channel input.

    Fields may be scalars or equally shaped arrays (one entry per channel).
    """

    q_signal: float | np.ndarray
    e_signal: float | np.ndarray
    q_decoy1: float | np.ndarray
    e_decoy1: float | np.ndarray
    q_decoy2: float | np.ndarray
    e_decoy2: float | np.ndarray


@dataclass(frozen=True)
class OneWayBounds:
    y0_lower: float | np.ndarray
    y1_lower: float | np.ndarray
    q1_lower: float | np.ndarray
    e1_upper: float | np.ndarray
    flags: dict


@dataclass(frozen=True)
class TwoWayBounds:
    y0_lower: float | np.ndarray
    y1_lower: float | np.ndarray
    y1_upper: float | np.ndarray
    y2_inf: float | np.ndarray
    y2_lower: float | np.ndarray
    q1_lower: float | np.ndarray
    q2_lower: float | np.ndarray
    e1_tilde: float | np.ndarray
    e2_tilde: float | np.ndarray
    flags: dict


_LOG_FACT_SWITCH = 20


def poisson_pmf(n: int, mu: float) -> float:
    """P[N = n] for N ~ Poisson(mu); evaluated in log space for n > 20."""
    if mu < 0.0 or not math.isfinite(mu):
        raise DomainError("poisson_pmf requires mu >= 0")
    if n < 0 or int(n) != n:
        raise DomainError("poisson_pmf requires a non-negative integer n")
    n = int(n)
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    if n <= _LOG_FACT_SWITCH:
        return mu**n * math.exp(-mu) / math.factorial(n)
    return math.exp(n * math.log(mu) - mu - math.lgamma(n + 1.0))


def n_photon_transmittance(n: int, transmissivity):
    """Threshold-detector transmittance of an n-photon pulse: 1 - (1 - T)^n."""
    if n < 1 or int(n) != n:
        raise DomainError("n_photon_transmittance requires n >= 1")
    t = np.asarray(transmissivity, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("transmissivity must lie in [0, 1]")
    out = 1.0 - (1.0 - t) ** int(n)
    return float(out) if np.ndim(transmissivity) == 0 else out


def overall_gain(mu: float, transmissivity, det: DetectorModel):
    """Overall detection gain Q_mu = Y0 + (1 - Y0)(1 - exp(-mu T))."""
    if mu < 0.0:
        raise DomainError("overall_gain requires mu >= 0")
    t = np.asarray(transmissivity, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("transmissivity must lie in [0, 1]")
    y0 = det.background_yield
    q = y0 + (1.0 - y0) * (-np.expm1(-mu * t))
    return float(q) if np.ndim(transmissivity) == 0 else q


def overall_qber(mu: float, transmissivity, det: DetectorModel):
    """Observable QBER E_mu = [e0 Y0 + e_det (1 - exp(-mu T))] / Q_mu."""
    q = overall_gain(mu, transmissivity, det)
    qa = np.asarray(q, dtype=float)
    if np.any(qa == 0.0):
        raise DegenerateChannelError("gain is zero; QBER undefined")
    t = np.asarray(transmissivity, dtype=float)
    eq = det.background_error * det.background_yield \
        + det.misalignment_error * (-np.expm1(-mu * t))
    e = eq / qa
    return float(e) if np.ndim(transmissivity) == 0 else e


def synthesize_observations(src: SourceModel, det: DetectorModel,
                            transmissivity) -> DecoyObservations:
    """Exact forward-model observations at all three intensities.

    The same forward model serves both protocols: pass the one-way or the
    round-trip transmissivity as appropriate.
    """
    return DecoyObservations(
        q_signal=overall_gain(src.mu_signal, transmissivity, det),
        e_signal=overall_qber(src.mu_signal, transmissivity, det),
        q_decoy1=overall_gain(src.mu_decoy1, transmissivity, det),
        e_decoy1=overall_qber(src.mu_decoy1, transmissivity, det),
        q_decoy2=overall_gain(src.mu_decoy2, transmissivity, det),
        e_decoy2=overall_qber(src.mu_decoy2, transmissivity, det),
    )


def gain_function_G(e):
    """Two-way privacy-amplification gain term; log2(1 + 4e - 4e^2) below 1/2, else 1."""
    ea = np.asarray(e, dtype=float)
    if np.any(ea < 0.0) or not np.all(np.isfinite(ea)):
        raise DomainError("gain_function_G requires e >= 0")
    below = ea < 0.5
    out = np.ones_like(ea)
    eb = ea[below]
    out[below] = np.log2(1.0 + 4.0 * eb - 4.0 * eb * eb)
    return float(out) if np.ndim(e) == 0 else out


def _check_mu(src: SourceModel):
    if src.mu_decoy1 == src.mu_decoy2:
        raise DegenerateDecoyError("mu_decoy1 == mu_decoy2")
    if src.mu_signal in (src.mu_decoy1, src.mu_decoy2):
        raise DegenerateDecoyError("signal intensity equals a decoy intensity")


def _weighted(obs: DecoyObservations, src: SourceModel):
    """Return the exp-weighted gains W = Q e^mu and error sums C = E Q e^mu."""
    ws = np.asarray(obs.q_signal, dtype=float) * math.exp(src.mu_signal)
    w1 = np.asarray(obs.q_decoy1, dtype=float) * math.exp(src.mu_decoy1)
    w2 = np.asarray(obs.q_decoy2, dtype=float) * math.exp(src.mu_decoy2)
    cs = np.asarray(obs.e_signal, dtype=float) * ws
    c1 = np.asarray(obs.e_decoy1, dtype=float) * w1
    c2 = np.asarray(obs.e_decoy2, dtype=float) * w2
    return ws, w1, w2, cs, c1, c2


def _maybe_scalar(x, scalar: bool):
    return float(x) if scalar else x


def one_way_bounds(obs: DecoyObservations, src: SourceModel) -> OneWayBounds:
    """Two-decoy lower bounds on the single-photon yield/gain and upper bound
    on the single-photon error rate, from one-way observations."""
    _check_mu(src)
    scalar = np.ndim(obs.q_signal) == 0
    mus, mu1, mu2 = src.mu_signal, src.mu_decoy1, src.mu_decoy2
    ws, w1, w2, cs, c1, c2 = _weighted(obs, src)

    y0_lower = np.maximum((mu1 * w2 - mu2 * w1) / (mu1 - mu2), 0.0)
    y1_raw = (mus**2 * (w1 - w2) - (mu1**2 - mu2**2) * (ws - y0_lower)) \
        / (mus * (mu1 - mu2) * (mus - mu1 - mu2))
    no_yield = y1_raw <= 0.0
    over_one = y1_raw > 1.0
    y1_lower = np.clip(y1_raw, 0.0, 1.0)
    q1_lower = y1_lower * mus * math.exp(-mus)

    with np.errstate(divide="ignore", invalid="ignore"):
        e1_raw = (c1 - c2) / ((mu1 - mu2) * np.where(no_yield, 1.0, y1_lower))
    e1_raw = np.where(no_yield, np.inf, e1_raw)
    e1_out_of_range = (e1_raw < 0.0) | (e1_raw > 1.0)
    e1_upper = np.where(e1_out_of_range, 1.0, e1_raw)

    flags = {
        "no_single_photon_yield": no_yield,
        "y1_clamped_above": over_one,
        "e1_out_of_range": e1_out_of_range,
    }
    if scalar:
        flags = {k: bool(v) for k, v in flags.items()}
    return OneWayBounds(
        y0_lower=_maybe_scalar(y0_lower, scalar),
        y1_lower=_maybe_scalar(y1_lower, scalar),
        q1_lower=_maybe_scalar(q1_lower, scalar),
        e1_upper=_maybe_scalar(e1_upper, scalar),
        flags=flags,
    )


def two_way_observables(mu: float, t_round_trip, det: DetectorModel):
    """Gain/QBER of the round-trip channel; same closed forms with T replaced
    by the round-trip transmissivity."""
    return overall_gain(mu, t_round_trip, det), overall_qber(mu, t_round_trip, det)


def two_way_bounds(obs: DecoyObservations, src: SourceModel, det: DetectorModel,
                   t_round_trip) -> TwoWayBounds:
    """Two-decoy bound system for the round-trip protocol.

    Evaluation order: Y0_L, Y1_L, Y2_inf, Y1_U, Y2_L, then Q1_L/Q2_L and the
    error-rate bounds. Negative intermediate bounds clamp to zero; error
    bounds outside [0, 1] saturate to 1/2 (the G(e) = 1 regime). ``t_round_trip``
    supplies the Y2_inf ceiling 1 - (1 - Y0)(1 - T)^2.
    """
    _check_mu(src)
    scalar = np.ndim(obs.q_signal) == 0
    mus, mu1, mu2 = src.mu_signal, src.mu_decoy1, src.mu_decoy2
    ws, w1, w2, cs, c1, c2 = _weighted(obs, src)
    t = np.asarray(t_round_trip, dtype=float)

    y0_lower = np.maximum((mu1 * w2 - mu2 * w1) / (mu1 - mu2), 0.0)

    y1_raw = (mus**2 * (w1 - w2) - (mu1**2 - mu2**2) * (ws - y0_lower)) \
        / (mus * (mu1 - mu2) * (mus - mu1 - mu2))
    y1_zero = y1_raw <= 0.0
    y1_lower = np.clip(y1_raw, 0.0, 1.0)

    y2_inf = 1.0 - (1.0 - det.background_yield) * (1.0 - t) ** 2

    y1_upper_raw = (2.0 * (w1 - w2) - y2_inf * (mu1**2 - mu2**2)) / (2.0 * (mu1 - mu2))
    y1_upper = np.clip(y1_upper_raw, 0.0, 1.0)

    denom2 = mus * (mu1**2 - mu2**2) - (mu1**3 - mu2**3)
    y2_raw = 2.0 * mus / denom2 * (
        (w1 - w2)
        - y1_upper * (mus**2 * (mu1 - mu2) - (mu1**3 - mu2**3)) / mus**2
        - (mu1**3 - mu2**3) / mus**3 * (ws - y0_lower)
    )
    y2_zero = y2_raw <= 0.0
    y2_lower = np.clip(y2_raw, 0.0, 1.0)

    q1_lower = y1_lower * math.exp(-mus) * mus
    q2_lower = y2_lower * math.exp(-mus) * mus**2 / 2.0

    d3 = (mus - mu1) * (mus - mu2) * (mu1 - mu2)
    with np.errstate(divide="ignore", invalid="ignore"):
        e1_raw = ((c1 - c2) * (mus**2 - mu2**2) - (cs - c2) * (mu1**2 - mu2**2)) \
            / (np.where(y1_zero, 1.0, y1_lower) * d3)
        e2_raw = -2.0 * ((c1 - c2) * (mus - mu2) - (cs - c2) * (mu1 - mu2)) \
            / (np.where(y2_zero, 1.0, y2_lower) * d3)
    e1_raw = np.where(y1_zero, np.inf, e1_raw)
    e2_raw = np.where(y2_zero, np.inf, e2_raw)
    e1_saturated = (e1_raw < 0.0) | (e1_raw > 1.0) | ~np.isfinite(e1_raw)
    e2_saturated = (e2_raw < 0.0) | (e2_raw > 1.0) | ~np.isfinite(e2_raw)
    e1_tilde = np.where(e1_saturated, 0.5, e1_raw)
    e2_tilde = np.where(e2_saturated, 0.5, e2_raw)

    flags = {
        "no_single_photon_yield": y1_zero,
        "no_two_photon_yield": y2_zero,
        "e1_saturated": e1_saturated,
        "e2_saturated": e2_saturated,
    }
    if scalar:
        flags = {k: bool(v) for k, v in flags.items()}
    return TwoWayBounds(
        y0_lower=_maybe_scalar(y0_lower, scalar),
        y1_lower=_maybe_scalar(y1_lower, scalar),
        y1_upper=_maybe_scalar(y1_upper, scalar),
        y2_inf=_maybe_scalar(y2_inf, scalar),
        y2_lower=_maybe_scalar(y2_lower, scalar),
        q1_lower=_maybe_scalar(q1_lower, scalar),
        q2_lower=_maybe_scalar(q2_lower, scalar),
        e1_tilde=_maybe_scalar(e1_tilde, scalar),
        e2_tilde=_maybe_scalar(e2_tilde, scalar),
        flags=flags,
    )


def observations_from_csv(path) -> tuple[SourceModel, DecoyObservations]:
    """Load (intensity, Q, E) rows and assemble a standalone bound-analyzer input.

    Expects a header row naming the columns ``intensity,Q,E`` (case
    insensitive) and exactly three data rows. The largest intensity is taken
    as the signal state, the remaining two as the decoys in decreasing order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty observations file")
    header = [c.strip().lower() for c in rows[0]]
    if header[:3] != ["intensity", "q", "e"]:
        raise ValueError(f"{path}: expected header 'intensity,Q,E', got {rows[0]!r}")
    data = []
    for r in rows[1:]:
        if len(r) < 3:
            raise ValueError(f"{path}: malformed row {r!r}")
        try:
            data.append((float(r[0]), float(r[1]), float(r[2])))
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric row {r!r}") from exc
    if len(data) != 3:
        raise ValueError(f"{path}: need exactly 3 intensity rows, got {len(data)}")
    for mu, q, e in data:
        if not (0.0 <= q <= 1.0 and 0.0 <= e <= 1.0):
            raise ValueError(f"{path}: Q and E must lie in [0, 1] (row mu={mu})")
    data.sort(key=lambda row: -row[0])
    (mus, qs, es), (mu1, q1, e1), (mu2, q2, e2) = data
    src = SourceModel(mu_signal=mus, mu_decoy1=mu1, mu_decoy2=mu2)
    obs = DecoyObservations(q_signal=qs, e_signal=es, q_decoy1=q1,
                            e_decoy1=e1, q_decoy2=q2, e_decoy2=e2)
    return src, obs
