"""Command-line front end: regenerate every theory curve and supplement
analysis as CSV/JSON data files from declarative configs.

Subcommands: g2map, spectrum, sweep-pulse, sweep-filter, sweep-fourlevel,
hbt-sim, analyze-histogram, fit-lifetime.  Each run writes its outputs plus a
metadata JSON with the fully resolved configuration and seed; reruns with the
same metadata reproduce the files byte for byte.  Defaults mirror the figure
parameters so a bare invocation reproduces the corresponding dataset.

Exit codes: 0 success, 2 bad configuration, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__, analysis, correlations, dynamics, photostream
from .model import (
    BiexcitonConfig,
    EXCITON_V_ONLY,
    GaussianPulse,
    ObservationVector,
    SensorConfig,
    TwoLevelConfig,
    build_biexciton,
    build_two_level,
)

ENV_OUTDIR = "PHOTONPURITY_OUTDIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved run configuration; every field lands in the metadata JSON."""

    system: str = "two_level"
    gamma_sigma: float = 1.0
    detuning: float = 0.0
    binding_energy: float = 300.0
    pulse_area_pi: float = 1.0
    pulse_length: float = 0.05
    sensor_detuning: float | None = None
    sensor_bandwidth: float = 1.0
    epsilon: float | None = None
    truncation: int = 2
    sweep_kind: str = "filter_width"
    sweep_min: float = 0.05
    sweep_max: float = 100.0
    sweep_points: int = 13
    sweep_log: bool = True
    pulse_lengths: tuple = (0.02, 0.05, 0.2)
    filter_widths: tuple = (0.1, 1.0, 20.0)
    spec_bandwidth: float = 0.2
    detuning_span: float = 40.0
    detuning_points: int = 161
    grid_points: int | None = None
    integrator: dict = field(default_factory=dict)
    check_convergence: bool = True
    stream: dict = field(default_factory=dict)
    rep_period: float = 13.1
    window: float = 6.5
    bin_width: int = 5
    span: float = 30.0
    excluded_peaks: tuple = ()
    seed: int = 2024
    jobs: int = 0
    out: str | None = None

    def validate(self):
        checks = [
            (self.system in ("two_level", "biexciton"), "system", "must be two_level or biexciton"),
            (self.gamma_sigma > 0, "gamma_sigma", "must be > 0"),
            (self.pulse_length > 0, "pulse.length", "must be > 0"),
            (self.pulse_area_pi >= 0, "pulse.area_pi", "must be >= 0"),
            (self.sensor_bandwidth > 0, "sensor.bandwidth", "must be > 0"),
            (self.truncation >= 2, "sensor.truncation", "must be >= 2"),
            (self.sweep_points >= 2, "sweep.points", "must be >= 2"),
            (self.sweep_min > 0, "sweep.min", "must be > 0"),
            (self.sweep_max > self.sweep_min, "sweep.max", "must exceed sweep.min"),
            (self.window <= self.rep_period, "window", "must not exceed rep_period"),
            (self.bin_width >= 1, "bin_width", "must be >= 1 ps"),
        ]
        for ok, path, msg in checks:
            if not ok:
                raise ConfigError(f"{path}: {msg}")
        return self


_FLAT_KEYS = {
    "system", "gamma_sigma", "detuning", "binding_energy", "spec_bandwidth",
    "detuning_span", "detuning_points", "grid_points", "check_convergence",
    "rep_period", "window", "bin_width", "span", "seed", "jobs", "out",
    "pulse_lengths", "filter_widths", "excluded_peaks", "truncation", "epsilon",
}


def load_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    for key, value in data.items():
        if key == "pulse":
            cfg.pulse_area_pi = value.get("area_pi", cfg.pulse_area_pi)
            cfg.pulse_length = value.get("length", cfg.pulse_length)
        elif key == "sensor":
            cfg.sensor_detuning = value.get("detuning", cfg.sensor_detuning)
            cfg.sensor_bandwidth = value.get("bandwidth", cfg.sensor_bandwidth)
            cfg.epsilon = value.get("coupling", cfg.epsilon)
            cfg.truncation = value.get("truncation", cfg.truncation)
        elif key == "sweep":
            cfg.sweep_kind = value.get("kind", cfg.sweep_kind)
            cfg.sweep_min = value.get("min", cfg.sweep_min)
            cfg.sweep_max = value.get("max", cfg.sweep_max)
            cfg.sweep_points = value.get("points", cfg.sweep_points)
            cfg.sweep_log = value.get("scale", "log") == "log"
        elif key == "integrator":
            cfg.integrator = dict(value)
        elif key == "stream":
            cfg.stream = dict(value)
        elif key in _FLAT_KEYS:
            setattr(cfg, key, tuple(value) if isinstance(value, list) else value)
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def integrator_config(cfg: RunConfig) -> dynamics.IntegratorConfig:
    try:
        return dynamics.IntegratorConfig(**cfg.integrator)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"integrator: {err}") from err


def _system_builder(cfg: RunConfig):
    if cfg.system == "two_level":
        two = TwoLevelConfig(decay_rate=cfg.gamma_sigma, detuning=cfg.detuning)
        return lambda pulse: build_two_level(two, pulse)
    bi = BiexcitonConfig(decay_rate=cfg.gamma_sigma, binding_energy=cfg.binding_energy)
    return lambda pulse: build_biexciton(bi, pulse)


def _observed(cfg: RunConfig):
    return "sigma" if cfg.system == "two_level" else EXCITON_V_ONLY


def _default_sensor_detuning(cfg: RunConfig):
    if cfg.sensor_detuning is not None:
        return cfg.sensor_detuning
    return 0.0 if cfg.system == "two_level" else cfg.binding_energy / 2.0


def _outdir(cfg: RunConfig):
    out = cfg.out if cfg.out is not None else os.environ.get(ENV_OUTDIR, "out")
    os.makedirs(out, exist_ok=True)
    return out


def _metadata(cfg: RunConfig, command, extra=None):
    meta = {"tool": "photonpurity", "version": __version__, "command": command}
    meta["config"] = asdict(cfg)
    if extra:
        meta.update(extra)
    return meta


def _sweep_axis(cfg: RunConfig):
    if cfg.sweep_log:
        return np.geomspace(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points)
    return np.linspace(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points)


def _g2_point_worker(payload):
    """One filtered-g2 evaluation from a plain-dict payload (process-pool safe)."""
    cfg = RunConfig(**payload["config"])
    builder = _system_builder(cfg)
    system = builder(GaussianPulse(cfg.pulse_area_pi * math.pi, payload["tau"]))
    sensor = SensorConfig(
        payload["sensor_detuning"], payload["bandwidth"],
        cfg.epsilon, cfg.truncation,
    )
    stats = correlations.filtered_g2_zero(
        system, sensor, integrator_config(cfg), observed=_observed(cfg),
        check_convergence=cfg.check_convergence,
    )
    return {"g2": stats.g2, "epsilon_used": stats.epsilon_used, "converged": stats.converged}


def _run_points(cfg: RunConfig, payloads):
    jobs = cfg.jobs or os.cpu_count() or 1
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_g2_point_worker, payloads))
    return [_g2_point_worker(p) for p in payloads]


def _sweep_to_result(axis, rows, metadata):
    return correlations.SweepResult(
        axis=np.asarray(axis, dtype=float),
        values=np.array([r["g2"] for r in rows]),
        metadata=metadata,
        epsilon_used=np.array([r["epsilon_used"] for r in rows]),
        converged=np.array([r["converged"] for r in rows]),
    )


def cmd_g2map(cfg: RunConfig):
    """Two-time correlation map of the bare two-level emission."""
    if cfg.system != "two_level":
        raise ConfigError("system: g2map expects the two_level system")
    out = _outdir(cfg)
    builder = _system_builder(cfg)
    system = builder(GaussianPulse(cfg.pulse_area_pi * math.pi, cfg.pulse_length))
    grid = correlations.map_grid(system, None)
    if cfg.grid_points:
        grid = np.linspace(0.0, grid[-1], cfg.grid_points)
    cg = dynamics.two_time_g2_map(system, "sigma", grid, cfg=integrator_config(cfg))
    path = os.path.join(out, "g2map.csv")
    cg.to_csv(path)
    correlations.write_metadata(
        os.path.join(out, "g2map_metadata.json"),
        _metadata(cfg, "g2map", {"grid_points": len(grid), "horizon": float(grid[-1])}),
    )
    return [path]


def cmd_spectrum(cfg: RunConfig):
    """Spectral profiles for the configured pulse lengths."""
    out = _outdir(cfg)
    builder = _system_builder(cfg)
    center = _default_sensor_detuning(cfg)
    detunings = center + np.linspace(-cfg.detuning_span, cfg.detuning_span, cfg.detuning_points)
    paths = []
    for tau in cfg.pulse_lengths:
        system = builder(GaussianPulse(cfg.pulse_area_pi * math.pi, float(tau)))
        res = correlations.spectrum(
            system, _observed(cfg), detunings, cfg.spec_bandwidth, integrator_config(cfg)
        )
        path = os.path.join(out, f"spectrum_tau{tau:g}.csv")
        correlations.write_spectrum_csv(path, res)
        paths.append(path)
    correlations.write_metadata(
        os.path.join(out, "spectrum_metadata.json"),
        _metadata(cfg, "spectrum", {"detuning_center": center}),
    )
    return paths


def _run_filter_sweep(cfg: RunConfig, command, pulse_lengths, sensor_detuning):
    out = _outdir(cfg)
    axis = _sweep_axis(cfg)
    paths = []
    base = asdict(cfg)
    for tau in pulse_lengths:
        payloads = [
            {"config": base, "tau": float(tau), "bandwidth": float(w),
             "sensor_detuning": sensor_detuning}
            for w in axis
        ]
        rows = _run_points(cfg, payloads)
        res = _sweep_to_result(axis, rows, {
            "kind": "filter_width_sweep", "pulse_length": float(tau),
            "sensor_detuning": sensor_detuning, "system": cfg.system,
        })
        path = os.path.join(out, f"{command}_tau{tau:g}.csv")
        correlations.write_sweep_csv(path, res)
        paths.append(path)
    correlations.write_metadata(
        os.path.join(out, f"{command}_metadata.json"), _metadata(cfg, command)
    )
    return paths


def cmd_sweep_filter(cfg: RunConfig):
    """g2 versus filter width for the two-level system."""
    return _run_filter_sweep(cfg, "sweep_filter", cfg.pulse_lengths, _default_sensor_detuning(cfg))


def cmd_sweep_fourlevel(cfg: RunConfig):
    """g2 versus filter width for the exciton line of the cascade."""
    cfg.system = "biexciton"
    if cfg.sweep_min == RunConfig.sweep_min and cfg.sweep_max == RunConfig.sweep_max:
        cfg.sweep_min, cfg.sweep_max, cfg.sweep_points = 0.5, 20.0, 9
    pulse_lengths = cfg.pulse_lengths if cfg.pulse_lengths != RunConfig.pulse_lengths else (0.01, 0.02)
    return _run_filter_sweep(cfg, "sweep_fourlevel", pulse_lengths, _default_sensor_detuning(cfg))


def cmd_sweep_pulse(cfg: RunConfig):
    """g2 versus pulse length, one curve per filter width."""
    out = _outdir(cfg)
    if cfg.sweep_kind == "filter_width":
        cfg.sweep_kind = "pulse_length"
        if cfg.sweep_min == RunConfig.sweep_min and cfg.sweep_max == RunConfig.sweep_max:
            cfg.sweep_min, cfg.sweep_max, cfg.sweep_points = 0.02, 1.5, 10
    axis = _sweep_axis(cfg)
    sensor_detuning = _default_sensor_detuning(cfg)
    base = asdict(cfg)
    paths = []
    for width in cfg.filter_widths:
        payloads = [
            {"config": base, "tau": float(t), "bandwidth": float(width),
             "sensor_detuning": sensor_detuning}
            for t in axis
        ]
        rows = _run_points(cfg, payloads)
        res = _sweep_to_result(axis, rows, {
            "kind": "pulse_length_sweep", "bandwidth": float(width),
            "sensor_detuning": sensor_detuning, "system": cfg.system,
        })
        path = os.path.join(out, f"sweep_pulse_gamma{width:g}.csv")
        correlations.write_sweep_csv(path, res)
        paths.append(path)
    correlations.write_metadata(
        os.path.join(out, "sweep_pulse_metadata.json"), _metadata(cfg, "sweep-pulse")
    )
    return paths


def _stream_config(cfg: RunConfig) -> photostream.StreamConfig:
    stream = dict(cfg.stream)
    blink = stream.pop("blinking", None)
    if blink:
        stream["blinking"] = photostream.BlinkingConfig(
            frequencies=tuple(blink["frequencies"]), depth=blink.get("depth", 0.5)
        )
    stream.setdefault("n_pulses", 1_000_000)
    stream.setdefault("rep_period", cfg.rep_period)
    try:
        return photostream.StreamConfig(**stream)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"stream: {err}") from err


def cmd_hbt(cfg: RunConfig):
    """Synthesize a photon stream, correlate it and estimate g2."""
    out = _outdir(cfg)
    stream_cfg = _stream_config(cfg)
    clicks1, clicks2 = photostream.synthesize_stream(stream_cfg, cfg.seed)
    hist = photostream.correlate(clicks1, clicks2, cfg.bin_width, cfg.span)
    hist_path = os.path.join(out, "hbt_histogram.csv")
    hist.to_csv(hist_path)
    estimate = photostream.estimate_g2(hist, stream_cfg.rep_period, cfg.window, cfg.excluded_peaks)
    est_path = os.path.join(out, "hbt_estimate.json")
    estimate.to_json(est_path)
    ks, sums = photostream.peak_sums(hist, stream_cfg.rep_period, cfg.window)
    sums_path = os.path.join(out, "hbt_peak_sums.csv")
    with open(sums_path, "w") as fh:
        fh.write("peak_index,summed_counts\n")
        for k, s in zip(ks, sums):
            fh.write(f"{k},{s}\n")
    correlations.write_metadata(
        os.path.join(out, "hbt_metadata.json"),
        _metadata(cfg, "hbt-sim", {
            "stream": {**{k: getattr(stream_cfg, k) for k in (
                "n_pulses", "rep_period", "p_single", "p_double", "emitter_lifetime",
                "pulse_sigma", "noise_rate", "detection_efficiency")},
                "blinking": None if stream_cfg.blinking is None else {
                    "frequencies": list(stream_cfg.blinking.frequencies),
                    "depth": stream_cfg.blinking.depth}},
            "clicks": [int(len(clicks1)), int(len(clicks2))],
        }),
    )
    return [hist_path, est_path, sums_path]


def cmd_analyze_histogram(cfg: RunConfig, data_path):
    """Peak-sum analysis of an existing histogram CSV."""
    out = _outdir(cfg)
    hist = photostream.read_histogram_csv(data_path)
    estimate = photostream.estimate_g2(hist, cfg.rep_period, cfg.window, cfg.excluded_peaks)
    est_path = os.path.join(out, "histogram_estimate.json")
    estimate.to_json(est_path)
    ks, sums = photostream.peak_sums(hist, cfg.rep_period, cfg.window)
    freqs, amp = photostream.peak_sum_spectrum(ks, sums, cfg.rep_period)
    spec_path = os.path.join(out, "peak_sum_spectrum.csv")
    with open(spec_path, "w") as fh:
        fh.write("frequency_mhz,amplitude\n")
        for f, a in zip(freqs, amp):
            fh.write(f"{f:.9g},{a:.9g}\n")
    correlations.write_metadata(
        os.path.join(out, "histogram_metadata.json"),
        _metadata(cfg, "analyze-histogram", {"data": str(data_path)}),
    )
    return [est_path, spec_path]


def cmd_fit_lifetime(cfg: RunConfig, data_path, which):
    """Fit decay data (CSV time_ps, counts) with the IRF-blurred cascade model."""
    out = _outdir(cfg)
    times, counts = analysis.read_decay_csv(data_path)
    init = analysis.initial_cascade_guess(times, counts, which)
    result = analysis.fit_lifetimes(times, counts, init, which)
    fit_path = os.path.join(out, "lifetime_fit.json")
    result.to_json(fit_path)
    correlations.write_metadata(
        os.path.join(out, "lifetime_fit_metadata.json"),
        _metadata(cfg, "fit-lifetime", {"data": str(data_path), "which": which}),
    )
    return [fit_path]


def filter_width_from_ghz(bandwidth_ghz, lifetime_ps):
    """Convert a filter FWHM in GHz to units of the decay rate 1/lifetime."""
    return 2.0 * math.pi * bandwidth_ghz * 1e9 * lifetime_ps * 1e-12


def build_parser():
    parser = argparse.ArgumentParser(
        prog="photonpurity",
        description="Frequency-filtered photon statistics of pulsed quantum emitters",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUTDIR} or ./out)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--jobs", type=int, help="worker processes for sweep points")
        p.add_argument("--epsilon", type=float, help="sensor coupling override")
        p.add_argument("--check-convergence", dest="check_convergence",
                       action="store_true", default=None)
        p.add_argument("--no-check-convergence", dest="check_convergence",
                       action="store_false", default=None)
        return p

    common(sub.add_parser("g2map", help="two-time correlation map (bare emitter)"))
    common(sub.add_parser("spectrum", help="filtered emission spectra"))
    common(sub.add_parser("sweep-pulse", help="g2 vs pulse length per filter width"))
    common(sub.add_parser("sweep-filter", help="g2 vs filter width per pulse length"))
    common(sub.add_parser("sweep-fourlevel", help="exciton-line g2 vs filter width"))
    common(sub.add_parser("hbt-sim", help="Monte Carlo HBT experiment"))
    p = common(sub.add_parser("analyze-histogram", help="peak-sum analysis of a histogram CSV"))
    p.add_argument("--data", required=True)
    p = common(sub.add_parser("fit-lifetime", help="lifetime fit of decay data CSV"))
    p.add_argument("--data", required=True)
    p.add_argument("--which", choices=("biexciton", "exciton"), default="exciton")
    return parser


_COMMANDS = {
    "g2map": cmd_g2map,
    "spectrum": cmd_spectrum,
    "sweep-pulse": cmd_sweep_pulse,
    "sweep-filter": cmd_sweep_filter,
    "sweep-fourlevel": cmd_sweep_fourlevel,
    "hbt-sim": cmd_hbt,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in
                 ("out", "seed", "jobs", "epsilon", "check_convergence")
                 if getattr(args, k, None) is not None}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "analyze-histogram":
            paths = cmd_analyze_histogram(cfg, args.data)
        elif args.command == "fit-lifetime":
            paths = cmd_fit_lifetime(cfg, args.data, args.which)
        else:
            paths = _COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (correlations.NotConverged, correlations.ZeroEmission,
            correlations.SweepPointError,
            analysis.NonConvergence, analysis.IllConditioned) as err:
        print(f"convergence failure: {err}", file=sys.stderr)
        return 3
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
