"""Monte-Carlo orchestration: distance sweeps and the crossover-distance solver.

Reproducibility contract: every random quantity comes from a stream keyed by
(master_seed, bit pattern of the distance, trial index, quantity index), so a
given distance reproduces bit-identically regardless of grid composition or
evaluation order, and both protocols consume the same fading draws (common
random numbers).
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import AtmosphereParams, ChannelDraw, build_channel, rytov_variance
from .decoy import DetectorModel, SourceModel
from .numerics import (
    DomainError,
    RandomStream,
    float_key,
    sample_lognormal_fading,
    sample_radial_misalignment,
)
from .optics import (
    ApertureLayout,
    BeamGeometry,
    GridSpec,
    OverlapTable,
    misalignment_stats,
    propagate_field,
    ring_layout,
)
from .protocol import PROTOCOLS, ProtocolParams, evaluate_draws

FADING_MODES = ("iid", "common")

_OFFSET_QUANTITY = 0
_FADING_QUANTITY = 1


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to reproduce a run."""

    n_trials: int = 2000
    master_seed: int = 20240817
    distances: tuple = (100.0, 250.0, 500.0, 1000.0, 2000.0, 3000.0, 5000.0, 10000.0)
    n_antennas: int = 8
    fading: str = "iid"
    wavelength: float = 1550e-9
    waist: float = 35e-3
    pointing_jitter: float = 1e-6
    tx_ring_scale: float = 0.8
    cutoff_mode: str = "capture"
    field_grid_points: int = 2048
    threads: int = 1
    # explicit aperture positions override the default ring packing; both
    # must be given together and the transmit list must match n_antennas
    tx_centers: tuple | None = None
    rx_centers: tuple | None = None
    source: SourceModel = field(default_factory=SourceModel)
    detector: DetectorModel = field(default_factory=DetectorModel)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    atmosphere: AtmosphereParams = field(default_factory=AtmosphereParams)

    def __post_init__(self):
        if self.n_trials < 1:
            raise DomainError("n_trials must be >= 1")
        if self.n_antennas < 1:
            raise DomainError("n_antennas must be >= 1")
        if self.fading not in FADING_MODES:
            raise DomainError(f"fading mode must be one of {FADING_MODES}")
        ds = tuple(float(z) for z in self.distances)
        if len(ds) == 0:
            raise DomainError("distance grid must not be empty")
        if any(z <= 0 for z in ds):
            raise DomainError("distances must be positive")
        if len(set(ds)) != len(ds):
            raise DomainError("distances must be distinct")
        object.__setattr__(self, "distances", ds)
        if self.threads < 1:
            raise DomainError("threads must be >= 1")
        if (self.tx_centers is None) != (self.rx_centers is None):
            raise DomainError("tx_centers and rx_centers must be given together")
        if self.tx_centers is not None:
            tx = tuple((float(x), float(y)) for x, y in self.tx_centers)
            rx = tuple((float(x), float(y)) for x, y in self.rx_centers)
            if len(tx) != self.n_antennas:
                raise DomainError("tx_centers length must equal n_antennas")
            if len(rx) == 0:
                raise DomainError("rx_centers must not be empty")
            object.__setattr__(self, "tx_centers", tx)
            object.__setattr__(self, "rx_centers", rx)
            try:
                layout = ApertureLayout(tx_centers=np.asarray(tx),
                                        rx_centers=np.asarray(rx),
                                        rx_radius=self.atmosphere.a_r)
                r0 = math.sqrt(self.n_antennas) * self.waist
                if np.linalg.norm(layout.tx_centers, axis=1).max() > r0 + 1e-9:
                    raise DomainError("tx centers extend beyond the effective "
                                      f"aperture radius {r0:.4f} m")
            except ValueError as exc:
                raise DomainError(f"invalid explicit layout: {exc}") from exc


@dataclass(frozen=True)
class SweepPoint:
    distance: float
    protocol: str
    skr_mean: float
    skr_stderr: float
    qber: float
    qber_stderr: float = 0.0
    n_trials: int = 0
    error: str | None = None


@dataclass(frozen=True)
class SweepCurve:
    points: tuple


@dataclass(frozen=True)
class CrossoverResult:
    crossover_z: float | None
    status: str                    # 'found' | 'none'
    bracket: tuple | None          # (z_lo, z_hi)
    d_at_bracket: tuple | None     # (D(z_lo), D(z_hi))
    d_at_crossover: float | None
    d_stderr: float | None
    iterations: int
    multiple_crossings: bool
    within_noise: bool


class _DistanceContext:
    """Per-(geometry, distance) immutable state shared by all trials."""

    def __init__(self, cfg: SimulationConfig, z: float):
        self.z = float(z)
        self.geom = BeamGeometry(cfg.wavelength, cfg.waist, self.z, cfg.n_antennas)
        if cfg.tx_centers is not None:
            self.layout = ApertureLayout(tx_centers=np.asarray(cfg.tx_centers),
                                         rx_centers=np.asarray(cfg.rx_centers),
                                         rx_radius=cfg.atmosphere.a_r)
            self.layout.validate_against(self.geom)
        else:
            self.layout = ring_layout(self.geom, n_rx=cfg.n_antennas,
                                      rx_radius=cfg.atmosphere.a_r,
                                      tx_ring_scale=cfg.tx_ring_scale)
        self.misalignment = misalignment_stats(self.geom, cfg.atmosphere.c_n_sq,
                                               cfg.pointing_jitter)
        self.rytov = rytov_variance(self.geom, cfg.atmosphere)
        wz = cfg.waist * math.sqrt(1.0 + (self.z / self.geom.rayleigh_range) ** 2)
        reach = (np.linalg.norm(self.layout.rx_centers, axis=1).max()
                 + np.linalg.norm(self.layout.tx_centers, axis=1).max()
                 + 8.0 * self.misalignment.sigma_r + 6.0 * wz + cfg.atmosphere.a_r)
        self.field = propagate_field(
            self.geom,
            GridSpec(n_points=cfg.field_grid_points,
                     r_max=reach + cfg.atmosphere.a_r + 2.0 * wz,
                     cutoff_mode=cfg.cutoff_mode))
        self.overlap = OverlapTable(self.field, a_r=cfg.atmosphere.a_r, s_max=reach)
        self.max_offset = 8.0 * self.misalignment.sigma_r

    def draw(self, cfg: SimulationConfig, trial: int) -> ChannelDraw:
        zkey = float_key(self.z)
        base = RandomStream(cfg.master_seed)
        sigma_r = self.misalignment.sigma_r
        if sigma_r > 0.0:
            stream = base.child(zkey, trial, _OFFSET_QUANTITY)
            v = min(float(sample_radial_misalignment(sigma_r, stream)), self.max_offset)
            ang = float(stream.generator.uniform(0.0, 2.0 * math.pi))
            offset = (v * math.cos(ang), v * math.sin(ang))
        else:
            offset = (0.0, 0.0)

        sigma_sq = self.rytov.sigma_sq
        n_sub = min(self.layout.n_tx, self.layout.n_rx)
        if sigma_sq > 0.0:
            stream = base.child(zkey, trial, _FADING_QUANTITY)
            if cfg.fading == "iid":
                turbulence = sample_lognormal_fading(sigma_sq, stream, size=n_sub)
            else:
                turbulence = np.full(n_sub, float(sample_lognormal_fading(sigma_sq, stream)))
        else:
            turbulence = np.ones(n_sub)

        return build_channel(self.field, self.layout, offset,
                             overlap=self.overlap, turbulence=turbulence)

    def draw_all(self, cfg: SimulationConfig) -> list:
        return [self.draw(cfg, t) for t in range(cfg.n_trials)]


class ContextCache:
    """Reuse per-distance propagation state and channel draws.

    Contexts are keyed by every field that determines the propagated field,
    layout and fading statistics; draws additionally by the seeding and trial
    controls. Configs differing only in source/detector/protocol constants
    therefore share geometry and Monte-Carlo draws.
    """

    def __init__(self):
        self._contexts: dict = {}
        self._draws: dict = {}

    @staticmethod
    def _context_key(cfg: SimulationConfig, z: float):
        return (cfg.wavelength, cfg.waist, float(z), cfg.n_antennas,
                cfg.tx_ring_scale, cfg.tx_centers, cfg.rx_centers,
                cfg.cutoff_mode, cfg.field_grid_points,
                cfg.atmosphere.a_r, cfg.atmosphere.c_n_sq,
                cfg.atmosphere.rytov_form, cfg.pointing_jitter)

    def context(self, cfg: SimulationConfig, z: float) -> _DistanceContext:
        k = self._context_key(cfg, z)
        if k not in self._contexts:
            self._contexts[k] = _DistanceContext(cfg, z)
        return self._contexts[k]

    def draws(self, cfg: SimulationConfig, z: float) -> list:
        k = self._context_key(cfg, z) + (cfg.master_seed, cfg.n_trials, cfg.fading)
        if k not in self._draws:
            self._draws[k] = self.context(cfg, z).draw_all(cfg)
        return self._draws[k]


def _ratio_stderr(num: np.ndarray, den: np.ndarray, n_batches: int = 16) -> float:
    """Standard error of a ratio of fading-averaged sums, by batch means."""
    n = len(num)
    k = min(n_batches, n)
    if k < 2:
        return 0.0
    edges = np.linspace(0, n, k + 1).astype(int)
    ratios = []
    for a, b in zip(edges[:-1], edges[1:]):
        d = den[a:b].sum()
        if d > 0:
            ratios.append(num[a:b].sum() / d)
    if len(ratios) < 2:
        return 0.0
    return float(np.std(ratios, ddof=1) / math.sqrt(len(ratios)))


def _evaluate_point(cfg: SimulationConfig, cache: ContextCache, z: float,
                    protocol: str) -> SweepPoint:
    ctx = cache.context(cfg, z)
    draws = cache.draws(cfg, z)
    ev = evaluate_draws(draws, protocol, cfg.source, cfg.detector, cfg.protocol,
                        ctx.geom, cfg.atmosphere)
    mean = float(ev.per_draw_skr.mean())
    stderr = float(ev.per_draw_skr.std(ddof=1) / math.sqrt(ev.n_draws)) \
        if ev.n_draws > 1 else 0.0
    qber = 0.5 if ev.degenerate_qber else ev.qber_numerator / ev.qber_denominator
    return SweepPoint(distance=z, protocol=protocol, skr_mean=mean,
                      skr_stderr=stderr, qber=qber,
                      qber_stderr=_ratio_stderr(ev.per_draw_qber_num, ev.per_draw_qber_den),
                      n_trials=cfg.n_trials)


def run_sweep(cfg: SimulationConfig, protocol: str = "both",
              cache: ContextCache | None = None) -> SweepCurve:
    """Monte-Carlo SKR/QBER at every grid distance.

    ``protocol`` is 'oneway', 'twoway' or 'both'; with 'both' the two
    protocols are evaluated on the same channel draws. Per-distance failures
    are recorded on their points and the sweep continues.
    """
    if protocol not in PROTOCOLS + ("both",):
        raise DomainError(f"protocol must be one of {PROTOCOLS + ('both',)}")
    wanted = PROTOCOLS if protocol == "both" else (protocol,)
    cache = cache or ContextCache()

    def one_distance(z: float) -> list:
        out = []
        try:
            for proto in wanted:
                out.append(_evaluate_point(cfg, cache, z, proto))
        except Exception as exc:
            out = [SweepPoint(distance=z, protocol=proto, skr_mean=math.nan,
                              skr_stderr=math.nan, qber=math.nan, qber_stderr=math.nan,
                              n_trials=cfg.n_trials, error=f"{type(exc).__name__}: {exc}")
                   for proto in wanted]
        return out

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(one_distance, cfg.distances))
    else:
        chunks = [one_distance(z) for z in cfg.distances]
    points = tuple(p for chunk in chunks for p in chunk)
    return SweepCurve(points=points)


def _protocol_difference(cfg: SimulationConfig, cache: ContextCache, z: float):
    """Mean and standard error of SKR_twoway - SKR_oneway on shared draws."""
    ctx = cache.context(cfg, z)
    draws = cache.draws(cfg, z)
    ev1 = evaluate_draws(draws, "oneway", cfg.source, cfg.detector, cfg.protocol,
                         ctx.geom, cfg.atmosphere)
    ev2 = evaluate_draws(draws, "twoway", cfg.source, cfg.detector, cfg.protocol,
                         ctx.geom, cfg.atmosphere)
    diff = ev2.per_draw_skr - ev1.per_draw_skr
    mean = float(diff.mean())
    stderr = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else 0.0
    return mean, stderr


def find_crossover(cfg: SimulationConfig, z_min: float, z_max: float,
                   tol_z: float = 10.0, n_coarse: int = 8,
                   cache: ContextCache | None = None) -> CrossoverResult:
    """Locate the distance where the two protocols' key rates cross.

    Evaluates D(z) = SKR_twoway - SKR_oneway with common random numbers on a
    coarse grid; if a sign change exists, bisects the first bracketing
    interval down to ``tol_z``. Returns status 'none' when D never changes
    sign on the grid.
    """
    if not (z_min < z_max):
        raise DomainError("need z_min < z_max")
    if tol_z <= 0:
        raise DomainError("tol_z must be positive")
    cache = cache or ContextCache()

    zs = np.linspace(z_min, z_max, n_coarse)
    vals = [_protocol_difference(cfg, cache, float(z)) for z in zs]
    signs = [math.copysign(1.0, d) if d != 0.0 else 0.0 for d, _ in vals]

    brackets = [i for i in range(len(zs) - 1) if signs[i] * signs[i + 1] < 0.0]
    if not brackets:
        return CrossoverResult(crossover_z=None, status="none", bracket=None,
                               d_at_bracket=None, d_at_crossover=None,
                               d_stderr=None, iterations=0,
                               multiple_crossings=False, within_noise=False)

    i = brackets[0]
    lo, hi = float(zs[i]), float(zs[i + 1])
    d_lo, d_hi = vals[i][0], vals[i + 1][0]
    bracket0 = (lo, hi)
    d_bracket0 = (d_lo, d_hi)
    iterations = 0
    d_mid, se_mid = d_lo, vals[i][1]
    # bisect to tol_z, then keep going until the residual difference is
    # statistically indistinguishable from zero (or the bracket degenerates)
    while iterations < 60:
        noise_ok = se_mid == 0.0 or abs(d_mid) <= 2.0 * se_mid
        if (hi - lo <= tol_z and noise_ok) or hi - lo <= 1e-9 * max(abs(hi), 1.0):
            break
        mid = 0.5 * (lo + hi)
        d_mid, se_mid = _protocol_difference(cfg, cache, mid)
        iterations += 1
        if d_mid == 0.0:
            lo = hi = mid
            break
        if math.copysign(1.0, d_mid) == math.copysign(1.0, d_lo):
            lo, d_lo = mid, d_mid
        else:
            hi, d_hi = mid, d_mid
    z_star = 0.5 * (lo + hi)
    d_star, se_star = _protocol_difference(cfg, cache, z_star)
    return CrossoverResult(crossover_z=z_star, status="found", bracket=bracket0,
                           d_at_bracket=d_bracket0, d_at_crossover=d_star,
                           d_stderr=se_star, iterations=iterations,
                           multiple_crossings=len(brackets) > 1,
                           within_noise=abs(d_star) <= 2.0 * se_star)


@dataclass(frozen=True)
class CrossoverCell:
    n_antennas: int
    eta_d: float
    p_m: float
    result: CrossoverResult | None
    error: str | None = None


def sweep_crossover_vs_n(cfg: SimulationConfig, n_list, eta_d_list, p_m_list,
                         z_min: float, z_max: float, tol_z: float = 10.0) -> list:
    """Crossover distance for every (N, eta_d, p_m) combination; failures are
    recorded per cell and the table completes. Geometry and draws are shared
    across cells that differ only in eta_d or p_m."""
    if not (len(n_list) and len(eta_d_list) and len(p_m_list)):
        raise DomainError("n, eta_d and p_m lists must be non-empty")
    cache = ContextCache()
    cells = []
    for n in n_list:
        for eta in eta_d_list:
            for pm in p_m_list:
                sub = dataclasses.replace(
                    cfg,
                    n_antennas=int(n),
                    detector=dataclasses.replace(cfg.detector, efficiency=float(eta)),
                    protocol=dataclasses.replace(cfg.protocol, message_mode_prob=float(pm)),
                )
                try:
                    res = find_crossover(sub, z_min, z_max, tol_z, cache=cache)
                    cells.append(CrossoverCell(int(n), float(eta), float(pm), res))
                except Exception as exc:
                    cells.append(CrossoverCell(int(n), float(eta), float(pm), None,
                                               error=f"{type(exc).__name__}: {exc}"))
    return cells
