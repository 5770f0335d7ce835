"""Command-line interface: config parsing, sweep/crossover/bounds commands.

Config files are INI documents (key = value under [sections]); every key has
a default matching the reference link parameters, unknown keys are rejected,
and all validation problems are reported at once. Each output file embeds the
full effective config so a run can be reproduced bit-exactly from its own
artifacts.

Exit codes: 0 success, 1 config/usage problem, 2 I/O failure, 3 numerical
failure (the failing distances are named on stderr).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import json
import sys
import time
from dataclasses import dataclass

from . import __version__
from .channel import AtmosphereParams
from .decoy import (
    DetectorModel,
    SourceModel,
    observations_from_csv,
    one_way_bounds,
    two_way_bounds,
)
from .numerics import DomainError
from .protocol import ProtocolParams
from .simulation import SimulationConfig, run_sweep, sweep_crossover_vs_n

SWEEP_HEADER = "z_m,protocol,skr_mean,skr_stderr,qber,n_trials,seed"
CROSSOVER_HEADER = ("n,eta_d,p_m,status,crossover_z_m,bracket_lo_m,bracket_hi_m,"
                    "d_at_crossover,d_stderr,iterations,multiple_crossings,"
                    "within_noise,n_trials,seed,error")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Invalid run configuration; carries every detected problem."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated run description."""

    sim: SimulationConfig
    protocol: str = "both"          # oneway | twoway | both
    pulse_rate_hz: float = 0.0      # 0: report bits per pulse

    @property
    def rate_scale(self) -> float:
        return self.pulse_rate_hz if self.pulse_rate_hz > 0 else 1.0


def _parse_distances(text: str):
    return tuple(float(tok) for tok in text.replace(";", ",").split(",") if tok.strip())


def _parse_centers(text: str):
    """Semicolon-separated 'x y' pairs in meters; empty selects the ring default."""
    pairs = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        coords = chunk.replace(",", " ").split()
        if len(coords) != 2:
            raise ValueError(f"expected 'x y' pair, got {chunk!r}")
        pairs.append((float(coords[0]), float(coords[1])))
    return tuple(pairs) or None


def _emit_centers(centers) -> str:
    if centers is None:
        return ""
    return "; ".join(f"{repr(x)} {repr(y)}" for x, y in centers)


# section -> key -> (converter, default supplier)
_DEFAULT_SIM = SimulationConfig()
_SCHEMA = {
    "run": {
        "trials": (int, _DEFAULT_SIM.n_trials),
        "seed": (int, _DEFAULT_SIM.master_seed),
        "distances_m": (_parse_distances, _DEFAULT_SIM.distances),
        "antennas": (int, _DEFAULT_SIM.n_antennas),
        "protocol": (str, "both"),
        "fading": (str, _DEFAULT_SIM.fading),
        "threads": (int, _DEFAULT_SIM.threads),
        "pulse_rate_hz": (float, 0.0),
    },
    "optics": {
        "wavelength_m": (float, _DEFAULT_SIM.wavelength),
        "waist_m": (float, _DEFAULT_SIM.waist),
        "pointing_jitter_rad": (float, _DEFAULT_SIM.pointing_jitter),
        "tx_ring_scale": (float, _DEFAULT_SIM.tx_ring_scale),
        "spectral_cutoff": (str, _DEFAULT_SIM.cutoff_mode),
        "field_grid_points": (int, _DEFAULT_SIM.field_grid_points),
        "tx_centers": (_parse_centers, None),
        "rx_centers": (_parse_centers, None),
    },
    "atmosphere": {
        "absorption_db_per_m": (float, _DEFAULT_SIM.atmosphere.delta),
        "cn2": (float, _DEFAULT_SIM.atmosphere.c_n_sq),
        "rx_aperture_radius_m": (float, _DEFAULT_SIM.atmosphere.a_r),
        "rytov_form": (str, _DEFAULT_SIM.atmosphere.rytov_form),
    },
    "source": {
        "mu_signal": (float, _DEFAULT_SIM.source.mu_signal),
        "mu_decoy1": (float, _DEFAULT_SIM.source.mu_decoy1),
        "mu_decoy2": (float, _DEFAULT_SIM.source.mu_decoy2),
    },
    "detector": {
        "background_yield": (float, _DEFAULT_SIM.detector.background_yield),
        "background_error": (float, _DEFAULT_SIM.detector.background_error),
        "misalignment_error": (float, _DEFAULT_SIM.detector.misalignment_error),
        "efficiency": (float, _DEFAULT_SIM.detector.efficiency),
    },
    "protocol": {
        "q_oneway": (float, _DEFAULT_SIM.protocol.q_oneway),
        "q_twoway": (float, _DEFAULT_SIM.protocol.q_twoway),
        "error_correction": (float, _DEFAULT_SIM.protocol.error_correction),
        "message_mode_prob": (float, _DEFAULT_SIM.protocol.message_mode_prob),
    },
}


def parse_config(document: str) -> RunConfig:
    """Parse and validate an INI config document into a RunConfig.

    Every problem (unknown key, type mismatch, violated invariant) is
    collected and reported in a single ConfigError.
    """
    parser = configparser.ConfigParser(interpolation=None)
    problems = []
    try:
        parser.read_string(document)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from exc

    values = {sec: dict((k, d) for k, (_, d) in keys.items())
              for sec, keys in _SCHEMA.items()}
    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            conv = _SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw)
            except (TypeError, ValueError):
                problems.append(f"{section}.{key}: cannot parse {raw!r}")
    if problems:
        raise ConfigError(problems)

    run = values["run"]
    if run["protocol"] not in ("oneway", "twoway", "both"):
        problems.append("run.protocol: must be oneway, twoway or both")
    if run["pulse_rate_hz"] < 0:
        problems.append("run.pulse_rate_hz: must be non-negative")

    def build(label, fn):
        try:
            return fn()
        except (DomainError, ValueError) as exc:
            problems.append(f"{label}: {exc}")
            return None

    source = build("source", lambda: SourceModel(
        mu_signal=values["source"]["mu_signal"],
        mu_decoy1=values["source"]["mu_decoy1"],
        mu_decoy2=values["source"]["mu_decoy2"]))
    detector = build("detector", lambda: DetectorModel(
        background_yield=values["detector"]["background_yield"],
        background_error=values["detector"]["background_error"],
        misalignment_error=values["detector"]["misalignment_error"],
        efficiency=values["detector"]["efficiency"]))
    protocol = build("protocol", lambda: ProtocolParams(
        q_oneway=values["protocol"]["q_oneway"],
        q_twoway=values["protocol"]["q_twoway"],
        error_correction=values["protocol"]["error_correction"],
        message_mode_prob=values["protocol"]["message_mode_prob"]))
    atmosphere = build("atmosphere", lambda: AtmosphereParams(
        delta=values["atmosphere"]["absorption_db_per_m"],
        c_n_sq=values["atmosphere"]["cn2"],
        a_r=values["atmosphere"]["rx_aperture_radius_m"],
        rytov_form=values["atmosphere"]["rytov_form"]))
    sim = None
    if not problems:
        sim = build("run", lambda: SimulationConfig(
            n_trials=run["trials"],
            master_seed=run["seed"],
            distances=run["distances_m"],
            n_antennas=run["antennas"],
            fading=run["fading"],
            wavelength=values["optics"]["wavelength_m"],
            waist=values["optics"]["waist_m"],
            pointing_jitter=values["optics"]["pointing_jitter_rad"],
            tx_ring_scale=values["optics"]["tx_ring_scale"],
            cutoff_mode=values["optics"]["spectral_cutoff"],
            field_grid_points=values["optics"]["field_grid_points"],
            tx_centers=values["optics"]["tx_centers"],
            rx_centers=values["optics"]["rx_centers"],
            threads=run["threads"],
            source=source, detector=detector, protocol=protocol,
            atmosphere=atmosphere))
    if problems:
        raise ConfigError(problems)
    return RunConfig(sim=sim, protocol=run["protocol"],
                     pulse_rate_hz=run["pulse_rate_hz"])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: RunConfig) -> str:
    """Render the effective config as an INI document; parses back identically."""
    sim = cfg.sim
    sections = {
        "run": {
            "trials": sim.n_trials,
            "seed": sim.master_seed,
            "distances_m": ", ".join(repr(z) for z in sim.distances),
            "antennas": sim.n_antennas,
            "protocol": cfg.protocol,
            "fading": sim.fading,
            "threads": sim.threads,
            "pulse_rate_hz": cfg.pulse_rate_hz,
        },
        "optics": {
            "wavelength_m": sim.wavelength,
            "waist_m": sim.waist,
            "pointing_jitter_rad": sim.pointing_jitter,
            "tx_ring_scale": sim.tx_ring_scale,
            "spectral_cutoff": sim.cutoff_mode,
            "field_grid_points": sim.field_grid_points,
            "tx_centers": _emit_centers(sim.tx_centers),
            "rx_centers": _emit_centers(sim.rx_centers),
        },
        "atmosphere": {
            "absorption_db_per_m": sim.atmosphere.delta,
            "cn2": sim.atmosphere.c_n_sq,
            "rx_aperture_radius_m": sim.atmosphere.a_r,
            "rytov_form": sim.atmosphere.rytov_form,
        },
        "source": {
            "mu_signal": sim.source.mu_signal,
            "mu_decoy1": sim.source.mu_decoy1,
            "mu_decoy2": sim.source.mu_decoy2,
        },
        "detector": {
            "background_yield": sim.detector.background_yield,
            "background_error": sim.detector.background_error,
            "misalignment_error": sim.detector.misalignment_error,
            "efficiency": sim.detector.efficiency,
        },
        "protocol": {
            "q_oneway": sim.protocol.q_oneway,
            "q_twoway": sim.protocol.q_twoway,
            "error_correction": sim.protocol.error_correction,
            "message_mode_prob": sim.protocol.message_mode_prob,
        },
    }
    out = io.StringIO()
    for sec, keys in sections.items():
        out.write(f"[{sec}]\n")
        for k, v in keys.items():
            out.write(f"{k} = {_fmt(v)}\n")
        out.write("\n")
    return out.getvalue()


def _config_comment_block(cfg: RunConfig) -> str:
    lines = emit_config(cfg).strip().splitlines()
    return "".join(f"# {line}\n" for line in lines)


def _write_sweep_csv(path: str, cfg: RunConfig, points):
    with open(path, "w", newline="") as fh:
        fh.write(f"# fsoqkd {__version__} sweep\n")
        fh.write(_config_comment_block(cfg))
        fh.write(SWEEP_HEADER + "\n")
        for p in points:
            if p.error is not None:
                continue
            fh.write(f"{_fmt(p.distance)},{p.protocol},{_fmt(p.skr_mean * cfg.rate_scale)},"
                     f"{_fmt(p.skr_stderr * cfg.rate_scale)},{_fmt(p.qber)},"
                     f"{p.n_trials},{cfg.sim.master_seed}\n")


def _write_crossover_csv(path: str, cfg: RunConfig, cells):
    def opt(v):
        return "" if v is None else _fmt(v)

    with open(path, "w", newline="") as fh:
        fh.write(f"# fsoqkd {__version__} crossover\n")
        fh.write(_config_comment_block(cfg))
        fh.write(CROSSOVER_HEADER + "\n")
        for c in cells:
            r = c.result
            if r is None:
                row = [c.n_antennas, c.eta_d, c.p_m, "error", "", "", "", "", "",
                       "", "", "", cfg.sim.n_trials, cfg.sim.master_seed, c.error]
            else:
                blo, bhi = r.bracket if r.bracket else (None, None)
                row = [c.n_antennas, c.eta_d, c.p_m, r.status, opt(r.crossover_z),
                       opt(blo), opt(bhi), opt(r.d_at_crossover), opt(r.d_stderr),
                       r.iterations, r.multiple_crossings, r.within_noise,
                       cfg.sim.n_trials, cfg.sim.master_seed, ""]
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _write_summary(path: str, cfg: RunConfig, records, wall_time: float):
    doc = {
        "tool": "fsoqkd",
        "version": __version__,
        "seed": cfg.sim.master_seed,
        "wall_time_s": wall_time,
        "units": "bits_per_second" if cfg.pulse_rate_hz > 0 else "bits_per_pulse",
        "config": emit_config(cfg),
        "records": records,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_run_config(args) -> RunConfig:
    document = ""
    if args.config:
        with open(args.config) as fh:
            document = fh.read()
    cfg = parse_config(document)
    sim = cfg.sim
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["n_trials"] = args.trials
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    if overrides:
        sim = dataclasses.replace(sim, **overrides)
    protocol = cfg.protocol
    if getattr(args, "protocol", None) is not None:
        protocol = args.protocol
    return RunConfig(sim=sim, protocol=protocol, pulse_rate_hz=cfg.pulse_rate_hz)


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    t0 = time.monotonic()
    curve = run_sweep(cfg.sim, cfg.protocol)
    wall = time.monotonic() - t0
    failed = [p for p in curve.points if p.error is not None]
    _write_sweep_csv(args.out, cfg, curve.points)
    records = [dataclasses.asdict(p) for p in curve.points]
    _write_summary(_summary_path(args.out), cfg, records, wall)
    for p in curve.points:
        if p.error is None:
            print(f"z={p.distance:.1f} m  {p.protocol:7s}  "
                  f"skr={p.skr_mean * cfg.rate_scale:.6e}  qber={p.qber:.5f}")
    if failed:
        for p in failed:
            print(f"error at z={p.distance:.1f} m ({p.protocol}): {p.error}",
                  file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_crossover(args) -> int:
    cfg = _load_run_config(args)
    n_list = [int(x) for x in args.n_list.split(",") if x.strip()]
    eta_list = [float(x) for x in args.eta_list.split(",") if x.strip()]
    pm_list = [float(x) for x in args.pm_list.split(",") if x.strip()]
    t0 = time.monotonic()
    cells = sweep_crossover_vs_n(cfg.sim, n_list, eta_list, pm_list,
                                 z_min=args.z_min, z_max=args.z_max,
                                 tol_z=args.tol_z)
    wall = time.monotonic() - t0
    _write_crossover_csv(args.out, cfg, cells)
    records = []
    for c in cells:
        rec = {"n": c.n_antennas, "eta_d": c.eta_d, "p_m": c.p_m, "error": c.error}
        if c.result is not None:
            rec.update(dataclasses.asdict(c.result))
        records.append(rec)
    _write_summary(_summary_path(args.out), cfg, records, wall)
    failed = [c for c in cells if c.error is not None]
    for c in cells:
        desc = c.error if c.error else (
            f"{c.result.status}"
            + (f" at {c.result.crossover_z:.1f} m" if c.result.crossover_z else ""))
        print(f"N={c.n_antennas:3d} eta_d={c.eta_d:.3f} p_m={c.p_m:.3f}: {desc}")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _load_run_config(args)
    src, obs = observations_from_csv(args.observations)
    if args.protocol == "twoway":
        if args.transmissivity is None:
            raise ConfigError(["bounds --protocol twoway requires --transmissivity "
                               "(round-trip value for the two-photon yield ceiling)"])
        b = two_way_bounds(obs, src, cfg.sim.detector, args.transmissivity)
        record = {
            "protocol": "twoway",
            "y0_lower": b.y0_lower, "y1_lower": b.y1_lower, "y1_upper": b.y1_upper,
            "y2_inf": b.y2_inf, "y2_lower": b.y2_lower,
            "q1_lower": b.q1_lower, "q2_lower": b.q2_lower,
            "e1_tilde": b.e1_tilde, "e2_tilde": b.e2_tilde,
            "flags": b.flags,
        }
    else:
        b = one_way_bounds(obs, src)
        record = {
            "protocol": "oneway",
            "y0_lower": b.y0_lower, "y1_lower": b.y1_lower,
            "q1_lower": b.q1_lower, "e1_upper": b.e1_upper,
            "flags": b.flags,
        }
    record["source"] = dataclasses.asdict(src)
    if args.out:
        _write_summary(args.out, cfg, [record], 0.0)
    for k, v in record.items():
        if isinstance(v, float):
            print(f"{k} = {v!r}")
    return EXIT_OK


def _summary_path(out_path: str) -> str:
    return out_path + ".summary.json" if not out_path.endswith(".csv") \
        else out_path[:-4] + ".summary.json"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fsoqkd",
        description="Decoy-state QKD link simulator for turbulent free-space "
                    "optical MIMO channels")
    p.add_argument("--version", action="version", version=f"fsoqkd {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config path (defaults used when omitted)")
        sp.add_argument("--seed", type=int, help="override master seed")
        sp.add_argument("--trials", type=int, help="override Monte-Carlo trials")
        sp.add_argument("--threads", type=int, help="override worker thread cap")

    sp = sub.add_parser("sweep", help="SKR/QBER versus distance")
    common(sp)
    sp.add_argument("--out", required=True, help="output CSV path")
    sp.add_argument("--protocol", choices=["oneway", "twoway", "both"])
    sp.set_defaults(fn=cmd_sweep)

    cp = sub.add_parser("crossover", help="two-way/one-way crossover distance table")
    common(cp)
    cp.add_argument("--out", required=True, help="output CSV path")
    cp.add_argument("--n-list", default="8,16,32", help="comma list of antenna counts")
    cp.add_argument("--eta-list", default="0.12", help="comma list of detector efficiencies")
    cp.add_argument("--pm-list", default="0.95", help="comma list of message-mode probabilities")
    cp.add_argument("--z-min", type=float, default=100.0)
    cp.add_argument("--z-max", type=float, default=10000.0)
    cp.add_argument("--tol-z", type=float, default=10.0)
    cp.set_defaults(fn=cmd_crossover)

    bp = sub.add_parser("bounds", help="decoy bounds from an observations CSV")
    common(bp)
    bp.add_argument("--observations", required=True,
                    help="CSV with header intensity,Q,E and three rows")
    bp.add_argument("--protocol", choices=["oneway", "twoway"], default="oneway")
    bp.add_argument("--transmissivity", type=float,
                    help="round-trip transmissivity (twoway only)")
    bp.add_argument("--out", help="optional JSON output path")
    bp.set_defaults(fn=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
