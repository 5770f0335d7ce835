"""Secret key rates per SVD sub-channel and their MIMO aggregation.

Per sub-channel, with observations synthesized from the exact forward model
at the drawn transmissivity (asymptotic statistics, no finite-key terms):

    one-way:  SKR = q [ Q1_L (1 - H2(e1_U)) - Q_s * g_ec * H2(E_s) ]
    two-way:  SKR = q [ sum_{n=1,2} Qn_L (1 - G(e_n)) - Q_s * g_ec * H2(E_s) ]

clamped at zero. The MIMO rate is the fading expectation of the sub-channel
sum; the MIMO QBER is the single-photon-gain weighted average of the error
bounds, with numerator and denominator fading-averaged separately.

Rates are reported in secret bits per pulse per MIMO channel use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import AtmosphereParams, ChannelDraw, one_way_transmissivity, two_way_transmissivity
from .decoy import (
    DecoyObservations,
    DetectorModel,
    SourceModel,
    gain_function_G,
    one_way_bounds,
    two_way_bounds,
)
from .numerics import DomainError, binary_entropy
from .optics import BeamGeometry

PROTOCOLS = ("oneway", "twoway")


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol constants: sifting factors, EC inefficiency, message-mode weight."""

    q_oneway: float = 0.5
    q_twoway: float = 1.0
    error_correction: float = 1.03
    message_mode_prob: float = 0.5
    ec_curve: Callable[[float], float] | None = None  # optional efficiency-vs-QBER hook

    def __post_init__(self):
        if not (0.0 < self.q_oneway <= 1.0 and 0.0 < self.q_twoway <= 1.0):
            raise DomainError("sifting factors must lie in (0, 1]")
        if self.error_correction < 1.0:
            raise DomainError("error-correction inefficiency must be >= 1")
        if not (0.0 < self.message_mode_prob <= 1.0):
            raise DomainError("message-mode probability must lie in (0, 1]")

    def ec_factor(self, qber):
        if self.ec_curve is None:
            return self.error_correction
        return self.ec_curve(qber)


@dataclass(frozen=True)
class SubchannelSkr:
    value: float
    raw_value: float
    flags: dict


@dataclass(frozen=True)
class MimoResult:
    skr: float
    qber: float
    std_error: float
    n_samples: int
    flags: dict


def _forward_q_eq(mu, t, det: DetectorModel):
    """Gain Q and error-weighted gain EQ = E*Q (safe at Q = 0)."""
    y0 = det.background_yield
    cap = -np.expm1(-mu * t)
    return y0 + (1.0 - y0) * cap, det.background_error * y0 + det.misalignment_error * cap


def _entropy_capped(e):
    """H2 on min(e, 1/2); returns the entropy and the saturation mask."""
    saturated = e > 0.5
    return binary_entropy(np.minimum(e, 0.5)), saturated


def _safe_observations(t, src: SourceModel, det: DetectorModel):
    """Forward-model observations tolerant of dead channels (Q = 0 entries)."""
    def ratio(eq, q):
        zero = q <= 0.0
        return np.where(zero, 0.0, eq / np.where(zero, 1.0, q))

    qs, eqs = _forward_q_eq(src.mu_signal, t, det)
    q1, eq1 = _forward_q_eq(src.mu_decoy1, t, det)
    q2, eq2 = _forward_q_eq(src.mu_decoy2, t, det)
    dead = qs <= 0.0
    es = ratio(eqs, qs)
    obs = DecoyObservations(q_signal=qs, e_signal=es,
                            q_decoy1=q1, e_decoy1=ratio(eq1, q1),
                            q_decoy2=q2, e_decoy2=ratio(eq2, q2))
    return obs, qs, es, dead


def _skr_one_way_arrays(t, src: SourceModel, det: DetectorModel, prm: ProtocolParams):
    """Vectorized one-way chain; returns (raw, value, e1_upper, q1_lower, dead, sat)."""
    t = np.asarray(t, dtype=float)
    obs, qs, es, dead = _safe_observations(t, src, det)
    b = one_way_bounds(obs, src)
    h2_e1, sat = _entropy_capped(np.asarray(b.e1_upper))
    raw = prm.q_oneway * (np.asarray(b.q1_lower) * (1.0 - h2_e1)
                          - qs * prm.ec_factor(es) * binary_entropy(es))
    raw = np.where(dead, 0.0, raw)
    value = np.maximum(raw, 0.0)
    return raw, value, np.asarray(b.e1_upper), np.asarray(b.q1_lower), dead, sat


def _skr_two_way_arrays(t, src: SourceModel, det: DetectorModel, prm: ProtocolParams):
    """Vectorized two-way chain; returns (raw, value, e1_tilde, q1_lower, dead, sat)."""
    t = np.asarray(t, dtype=float)
    obs, qs, es, dead = _safe_observations(t, src, det)
    b = two_way_bounds(obs, src, det, t)
    h2_es, sat = _entropy_capped(es)
    raw = prm.q_twoway * (
        np.asarray(b.q1_lower) * (1.0 - gain_function_G(np.asarray(b.e1_tilde)))
        + np.asarray(b.q2_lower) * (1.0 - gain_function_G(np.asarray(b.e2_tilde)))
        - qs * prm.ec_factor(es) * h2_es)
    raw = np.where(dead, 0.0, raw)
    value = np.maximum(raw, 0.0)
    return raw, value, np.asarray(b.e1_tilde), np.asarray(b.q1_lower), dead, sat


def skr_one_way(t_i: float, src: SourceModel, det: DetectorModel,
                prm: ProtocolParams) -> SubchannelSkr:
    """One-way secret key rate at sub-channel transmissivity ``t_i``."""
    if not (0.0 <= t_i <= 1.0):
        raise DomainError("transmissivity must lie in [0, 1]")
    raw, value, e1, _, dead, sat = _skr_one_way_arrays(t_i, src, det, prm)
    return SubchannelSkr(value=float(value), raw_value=float(raw),
                         flags={"clamped": bool(raw < 0.0),
                                "dead_channel": bool(dead),
                                "error_bound_saturated": bool(sat)})


def skr_two_way(t_i: float, src: SourceModel, det: DetectorModel,
                prm: ProtocolParams) -> SubchannelSkr:
    """Two-way (round-trip) secret key rate at round-trip transmissivity ``t_i``."""
    if not (0.0 <= t_i <= 1.0):
        raise DomainError("transmissivity must lie in [0, 1]")
    raw, value, e1, _, dead, sat = _skr_two_way_arrays(t_i, src, det, prm)
    return SubchannelSkr(value=float(value), raw_value=float(raw),
                         flags={"clamped": bool(raw < 0.0),
                                "dead_channel": bool(dead),
                                "error_bound_saturated": bool(sat)})


@dataclass(frozen=True)
class DrawEvaluation:
    """Per-draw aggregates reused by the rate and QBER estimators."""

    per_draw_skr: np.ndarray        # sub-channel sum per draw
    per_draw_qber_num: np.ndarray   # sum over sub-channels of e1 * Q1, per draw
    per_draw_qber_den: np.ndarray   # sum over sub-channels of Q1, per draw
    qber_numerator: float
    qber_denominator: float
    n_draws: int
    degenerate_qber: bool


def evaluate_draws(draws: Sequence[ChannelDraw], protocol: str, src: SourceModel,
                   det: DetectorModel, prm: ProtocolParams, geom: BeamGeometry,
                   atm: AtmosphereParams) -> DrawEvaluation:
    """Evaluate all sub-channels of all draws for one protocol, vectorized."""
    if protocol not in PROTOCOLS:
        raise DomainError(f"protocol must be one of {PROTOCOLS}")
    if len(draws) == 0:
        raise ValueError("need at least one channel draw")

    counts = np.array([d.rank for d in draws])
    if counts.sum() == 0:
        per = np.zeros(len(draws))
        return DrawEvaluation(per_draw_skr=per, per_draw_qber_num=per.copy(),
                              per_draw_qber_den=per.copy(), qber_numerator=0.0,
                              qber_denominator=0.0, n_draws=len(draws),
                              degenerate_qber=True)
    beta = np.concatenate([d.singular_values for d in draws])
    turb = np.concatenate([d.turbulence for d in draws])

    if protocol == "oneway":
        t = one_way_transmissivity(beta, turb, geom, atm, det.efficiency)
        _, value, e1, q1, _, _ = _skr_one_way_arrays(t, src, det, prm)
    else:
        t = two_way_transmissivity(beta, turb, geom, atm, det.efficiency,
                                   prm.message_mode_prob)
        _, value, e1, q1, _, _ = _skr_two_way_arrays(t, src, det, prm)

    # segment sums per draw, deterministic order
    boundaries = np.concatenate([[0], np.cumsum(counts)])

    def per_draw(values):
        out = np.add.reduceat(np.concatenate([values, [0.0]]), boundaries[:-1])
        out[counts == 0] = 0.0
        return out

    per = per_draw(value)
    e1c = np.clip(e1, 0.0, 1.0)
    per_num = per_draw(e1c * q1)
    per_den = per_draw(q1)
    num = float(per_num.sum())
    den = float(per_den.sum())
    return DrawEvaluation(per_draw_skr=per, per_draw_qber_num=per_num,
                          per_draw_qber_den=per_den, qber_numerator=num,
                          qber_denominator=den, n_draws=len(draws),
                          degenerate_qber=(den <= 0.0))


def mimo_skr(draws: Sequence[ChannelDraw], protocol: str, src: SourceModel,
             det: DetectorModel, prm: ProtocolParams, geom: BeamGeometry,
             atm: AtmosphereParams) -> MimoResult:
    """Fading-averaged MIMO key rate: mean over draws of the sub-channel sum."""
    ev = evaluate_draws(draws, protocol, src, det, prm, geom, atm)
    mean = float(ev.per_draw_skr.mean())
    if ev.n_draws > 1:
        stderr = float(ev.per_draw_skr.std(ddof=1) / math.sqrt(ev.n_draws))
    else:
        stderr = 0.0
    qber = 0.5 if ev.degenerate_qber else ev.qber_numerator / ev.qber_denominator
    return MimoResult(skr=mean, qber=qber, std_error=stderr, n_samples=ev.n_draws,
                      flags={"degenerate_qber": ev.degenerate_qber})


def mimo_qber(draws: Sequence[ChannelDraw], protocol: str, src: SourceModel,
              det: DetectorModel, prm: ProtocolParams, geom: BeamGeometry,
              atm: AtmosphereParams) -> float:
    """Single-photon QBER: gain-weighted average of the per-sub-channel error
    bounds, numerator and denominator fading-averaged separately."""
    ev = evaluate_draws(draws, protocol, src, det, prm, geom, atm)
    if ev.degenerate_qber:
        return 0.5
    return ev.qber_numerator / ev.qber_denominator
