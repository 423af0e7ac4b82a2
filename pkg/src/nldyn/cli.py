"""Command line entry point and experiment orchestration.

Subcommands ``validate``, ``simulate``, ``absorb``, ``attractor`` and
``continuity`` each take ``--config FILE`` plus optional ``--out DIR``,
``--seed N`` and ``--threads N``.  Every run writes ``results.json``, a
human-readable ``summary.txt``, per-trajectory CSV files whose names
embed the configuration hash, and finally ``manifest.json`` listing every
other emitted file together with the configuration hash, versions, and
wall time.  All randomness flows from the single seed through spawned
counter-based generators, so reruns with the same configuration, seed
and thread count reproduce the CSV and results bytes exactly (only the
manifest's wall time varies).

Failure classes map to distinct exit codes: configuration or usage
problems exit 1, hypothesis violations 2, numerical failures 3,
diagnostic failures 4, and input/output failures 5.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attractor import (
    SamplingParams,
    absorbing_bound,
    continuity_experiment,
    sample_attractor,
)
from .config import (
    RunConfig,
    build_integrator_from,
    build_model_from,
    config_hash,
    parse_config,
)
from .errors import ConfigurationError, DiagnosticError, OutputError, ToolkitError
from .grid import lp_norm, sup_norm
from .integrator import integrate_ensemble
from .kernels import perturbation_family_levels
from .model import hypothesis_report, validate


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OutputError(f"cannot read configuration file {path}: {exc}") from exc
    return parse_config(text)


def _entry_index(norms: np.ndarray, radius: float) -> int | None:
    hits = np.flatnonzero(norms <= radius)
    return int(hits[0]) if hits.size else None


def _write_text(path: Path, text: str, files: list[str]) -> None:
    try:
        with open(path, "w", newline="") as handle:
            handle.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    files.append(path.name)


def _write_json(path: Path, payload: dict, files: list[str]) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n", files)


def _experiment_validate(config, out_dir, files, threads):
    spec = build_model_from(config)
    report = hypothesis_report(spec)
    summary = ["hypothesis report:"]
    for check in report["checks"]:
        status = "ok" if check["passed"] else "FAILED"
        summary.append(f"  {check['name']}: {status} (slack {check['slack']:.6g})")
    if report["passed"]:
        constants = report["constants"]
        summary.append(f"absorbing radius r_delta = {constants['r_delta']:.17g}")
        summary.append(f"norm decay rate = {constants['norm_decay_rate']:.17g}")
    else:
        raise_after = "\n".join(report["failures"])
        raise _hypothesis_failure(raise_after)
    return report, summary


def _hypothesis_failure(message):
    from .errors import HypothesisError

    return HypothesisError(message)


def _experiment_simulate(config, out_dir, files, threads):
    spec = build_model_from(config)
    derived = validate(spec)
    integ = build_integrator_from(config)
    radius = config.experiment.radius if config.experiment.radius is not None else derived.r_delta
    records = integrate_ensemble(
        spec,
        integ,
        count=config.experiment.count,
        radius=radius,
        seed=config.seed,
        threads=threads,
    )
    digest = config_hash(config)
    final_norms = []
    for index, record in enumerate(records):
        name = f"trajectory_{digest}_{index:03d}.csv"
        _write_text(out_dir / name, record.to_csv(), files)
        final_norms.append(lp_norm(record.final_state, spec.space))
    results = {
        "experiment": "simulate",
        "count": config.experiment.count,
        "initial_radius": radius,
        "r_delta": derived.r_delta,
        "final_norms": final_norms,
    }
    summary = [
        f"simulated {config.experiment.count} trajectories to t = {integ.t_end}",
        f"final Lp norms: min {min(final_norms):.6g}, max {max(final_norms):.6g}",
    ]
    return results, summary


def _experiment_absorb(config, out_dir, files, threads):
    spec = build_model_from(config)
    derived = validate(spec)
    integ = build_integrator_from(config)
    target = config.experiment.radius_factor * derived.r_delta
    records = integrate_ensemble(
        spec,
        integ,
        count=config.experiment.count,
        radius=target,
        seed=config.seed,
        exact_norm=True,
        threads=threads,
    )
    bound = absorbing_bound(derived, target)
    interval = integ.dt * integ.record_every
    digest = config_hash(config)
    p = spec.space.p
    measured = []
    for index, record in enumerate(records):
        name = f"trajectory_{digest}_{index:03d}.csv"
        _write_text(out_dir / name, record.to_csv(), files)
        idx = _entry_index(record.norms(p), derived.r_delta)
        if idx is None:
            raise DiagnosticError(
                f"member {index} never entered the absorbing ball;"
                f" final norm {record.norms(p)[-1]:.6g} vs radius {derived.r_delta:.6g}"
            )
        measured.append(float(record.times[idx]))
    late = [t for t in measured if t > bound + interval]
    if late:
        raise DiagnosticError(
            f"absorbing entry later than the analytic bound: measured {max(measured):.6g}"
            f" vs bound {bound:.6g} + interval {interval:.6g}"
        )
    results = {
        "experiment": "absorb",
        "r_delta": derived.r_delta,
        "initial_norm": target,
        "analytic_bound": bound,
        "recording_interval": interval,
        "measured_entry_times": measured,
    }
    summary = [
        f"{len(measured)} members entered the r_delta ball",
        f"worst measured entry {max(measured):.6g} vs analytic bound {bound:.6g}",
    ]
    return results, summary


def _experiment_attractor(config, out_dir, files, threads):
    spec = build_model_from(config)
    derived = validate(spec)
    integ = build_integrator_from(config)
    params = SamplingParams(
        ensemble_size=config.experiment.ensemble_size,
        burn_in=config.experiment.burn_in,
        spacing=config.experiment.spacing,
        snapshots_per_member=config.experiment.snapshots_per_member,
        dt=integ.dt,
        scheme=integ.scheme,
        initial_radius=config.experiment.initial_radius,
        seed=config.seed,
    )
    sample = sample_attractor(spec, params)
    norms = [lp_norm(state, spec.space) for state in sample.states]
    sups = [sup_norm(state) for state in sample.states]
    results = {
        "experiment": "attractor",
        "kernel_id": sample.kernel_id,
        "burn_in": sample.burn_in,
        "spacing": sample.spacing,
        "r_delta": derived.r_delta,
        "state_norms": norms,
        "state_sup_norms": sups,
    }
    summary = [
        f"sampled {len(sample.states)} states from kernel {sample.kernel_id}",
        f"largest sampled norm {max(norms):.6g} (ball radius {derived.r_delta:.6g})",
    ]
    return results, summary


def _experiment_continuity(config, out_dir, files, threads):
    spec = build_model_from(config)
    derived = validate(spec)
    integ = build_integrator_from(config)
    kernels = perturbation_family_levels(
        spec.kernel,
        config.experiment.perturbation_family,
        config.experiment.levels,
        config.experiment.perturbation_scale,
    )
    params = SamplingParams(
        ensemble_size=config.experiment.ensemble_size,
        burn_in=config.experiment.burn_in,
        spacing=config.experiment.spacing,
        snapshots_per_member=config.experiment.snapshots_per_member,
        dt=integ.dt,
        scheme=integ.scheme,
        initial_radius=config.experiment.initial_radius,
        seed=config.seed,
    )
    report = continuity_experiment(
        spec,
        kernels,
        params,
        integ,
        tolerance=config.experiment.tolerance_factor * derived.r_delta,
        final_threshold=config.experiment.threshold_factor * derived.r_delta,
    )
    digest = config_hash(config)
    for level, deviation in enumerate(report.deviations):
        lines = ["t,deviation,envelope"]
        for k in range(len(deviation.times)):
            lines.append(
                ",".join(
                    format(v, ".17g")
                    for v in (deviation.times[k], deviation.deviations[k], deviation.envelope[k])
                )
            )
        _write_text(out_dir / f"deviations_{digest}_level{level}.csv", "\n".join(lines) + "\n", files)
    results = {"experiment": "continuity", **report.as_dict()}
    summary = [
        f"{len(report.semidistances)} perturbation levels,"
        f" sizes {report.perturbation_sizes[0]:.6g} down to {report.perturbation_sizes[-1]:.6g}",
        f"semidistances {report.semidistances[0]:.6g} down to {report.semidistances[-1]:.6g}",
        f"fitted envelope constant {report.c0:.6g}, rate {report.envelope_rate:.6g}",
    ]
    return results, summary


_RUNNERS = {
    "validate": _experiment_validate,
    "simulate": _experiment_simulate,
    "absorb": _experiment_absorb,
    "attractor": _experiment_attractor,
    "continuity": _experiment_continuity,
}


def run(config: RunConfig, experiment: str | None = None, out_dir=None, threads: int = 1) -> dict:
    """Execute one experiment and write its artifact files.

    ``experiment`` falls back to the configuration's own experiment name;
    when both are present they must agree.  Returns the results payload.
    """
    name = experiment or config.experiment.name
    if name is None:
        raise ConfigurationError("no experiment selected (subcommand or experiment.name)")
    if experiment and config.experiment.name and experiment != config.experiment.name:
        raise ConfigurationError(
            f"subcommand '{experiment}' disagrees with experiment.name"
            f" '{config.experiment.name}'"
        )
    if name not in _RUNNERS:
        raise ConfigurationError(f"unknown experiment '{name}'")
    out = Path(out_dir) if out_dir is not None else Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc

    started = time.perf_counter()
    files: list[str] = []
    results, summary_lines = _RUNNERS[name](config, out, files, threads)
    _write_json(out / "results.json", results, files)
    header = [f"experiment: {name}", f"config hash: {config_hash(config)}", f"seed: {config.seed}"]
    _write_text(out / "summary.txt", "\n".join(header + summary_lines) + "\n", files)
    manifest = {
        "config_hash": config_hash(config),
        "experiment": name,
        "seed": config.seed,
        "threads": threads,
        "versions": {
            "nldyn": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": time.perf_counter() - started,
        "files": sorted(files),
    }
    manifest_files: list[str] = []
    _write_json(out / "manifest.json", manifest, manifest_files)
    return results


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nldyn",
        description="simulate and stress-test nonlocal evolution models",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in _RUNNERS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", required=True, help="configuration file")
        cmd.add_argument("--out", default=None, help="output directory (default: from config)")
        cmd.add_argument("--seed", type=int, default=None, help="override the configured seed")
        cmd.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        run(config, experiment=args.experiment, out_dir=args.out, threads=args.threads)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return OutputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
