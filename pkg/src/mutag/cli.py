"""Command line pipeline: simulate -> daq -> analyze -> report.

Each stage reads the previous stage's files from --out-dir (or explicit
paths) and appends a manifest entry with input/output digests, so a run
directory is self-describing and reruns can be compared byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np

from .config import ConfigError, RunConfig, config_hash, load_config
from .coincidence import (AnalysisError, assemble_report, format_report,
                          measured_rates, read_report, write_comparison_table_csv,
                          write_rate_table_csv, write_report)
from .daq import run_daq
from .manifest import load_manifest, record_stage
from .pulses import process_records
from .recordio import (FormatError, read_events, write_delay_histogram,
                       write_events, write_primaries, write_pulses)
from .sources import (gamma_equivalent_livetime, muon_equivalent_livetime,
                      sample_gamma_energies, sample_gamma_rays,
                      sample_muon_energies, sample_muon_rays)
from .transport import SPECIES_NAMES, run_simulation, simulate_species

EVENTS_FILE = "events.csv"
SUMMARY_FILE = "summary.json"
PRIMARIES_FILE = "primaries.csv"
RECORDS_FILE = "records.bin"
PULSES_FILE = "pulses.csv"
HISTOGRAM_FILE = "delay_histogram.csv"
REPORT_FILE = "report.json"
RATE_TABLE_FILE = "rates_simulated.csv"
COMPARISON_TABLE_FILE = "rates_comparison.csv"

# keeps primary dumps out of the event/noise seed streams
PRIMARY_STREAM = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH",
                   help="JSON config file (defaults to built-in reference values)")
    p.add_argument("--out-dir", default=".", metavar="DIR",
                   help="directory for stage outputs (default: current directory)")
    p.add_argument("--seed", type=int, help="override the run seed")


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return cfg


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _dump_primaries(cfg: RunConfig, species: str, n: int, path: str) -> None:
    s = cfg.sources
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, PRIMARY_STREAM]))
    if species == "mu":
        origins, directions = sample_muon_rays(n, s.angular, s.hemisphere_radius_cm, rng)
        energies = sample_muon_energies(n, s.muon_energy, rng) * 1e3  # GeV -> MeV
        livetime = muon_equivalent_livetime(n, s.muon_flux_per_cm2_s,
                                            s.hemisphere_radius_cm, s.angular)
    else:
        origins, directions = sample_gamma_rays(n, s.gamma_shell_radius_cm, rng)
        energies = sample_gamma_energies(n, s, rng)
        livetime = gamma_equivalent_livetime(n, s.gamma_flux_per_cm2_s,
                                             s.gamma_shell_radius_cm)
    times = np.sort(rng.random(n)) * livetime
    codes = np.full(n, SPECIES_NAMES.index(species), dtype=np.int8)
    write_primaries(path, codes, energies, origins, directions, times)


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.n_primaries is not None and args.species == "both":
        raise ConfigError("--n-primaries needs --species mu or --species gamma")
    if args.dump_primaries and args.species == "both":
        raise ConfigError("--dump-primaries needs --species mu or --species gamma")
    cfg = _load(args)
    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.monotonic()
    if args.livetime_s is not None:
        events, summary = run_simulation(cfg, args.livetime_s)
    else:
        events, summary = simulate_species(cfg, args.species, args.n_primaries)
    events_path = os.path.join(args.out_dir, EVENTS_FILE)
    write_events(events_path, events, livetime_s=summary.livetime_s)
    summary_path = os.path.join(args.out_dir, SUMMARY_FILE)
    _write_json(summary_path, summary.to_dict())
    outputs = [events_path, summary_path]
    if args.dump_primaries:
        primaries_path = os.path.join(args.out_dir, PRIMARIES_FILE)
        _dump_primaries(cfg, args.species, args.dump_primaries, primaries_path)
        outputs.append(primaries_path)
    record_stage(args.out_dir, "simulate", config_hash(cfg), cfg.seed, [], outputs,
                 time.monotonic() - t0, incomplete=summary.incomplete)
    status = "interrupted, partial" if summary.incomplete else "done"
    print(f"simulate: {status}, {events.size} events over "
          f"{summary.livetime_s:.3f} s -> {events_path}")
    return 130 if summary.incomplete else 0


def cmd_daq(args: argparse.Namespace) -> int:
    cfg = _load(args)
    os.makedirs(args.out_dir, exist_ok=True)
    events_path = args.events or os.path.join(args.out_dir, EVENTS_FILE)
    events, livetime = read_events(events_path)
    if args.livetime_s is not None:
        livetime = args.livetime_s
    if livetime is None:
        raise ConfigError(f"{events_path} has no livetime header; pass --livetime-s")
    records_path = os.path.join(args.out_dir, RECORDS_FILE)
    t0 = time.monotonic()
    try:
        stats = run_daq(events, livetime, cfg, cfg.seed, records_path)
    except KeyboardInterrupt:
        record_stage(args.out_dir, "daq", config_hash(cfg), cfg.seed,
                     [events_path], [records_path], time.monotonic() - t0,
                     incomplete=True)
        print("daq: interrupted, partial record file kept", file=sys.stderr)
        return 130
    record_stage(args.out_dir, "daq", config_hash(cfg), cfg.seed,
                 [events_path], [records_path], time.monotonic() - t0,
                 incomplete=False, stats=stats.to_dict())
    print(f"daq: {stats.n_records} records ({stats.n_noise_records} noise, "
          f"threshold {stats.trigger_threshold:.3f}) -> {records_path}")
    return 0


def _stored_livetime(out_dir: str) -> float | None:
    stage = load_manifest(out_dir)["stages"].get("daq")
    if stage and "stats" in stage:
        return float(stage["stats"]["livetime_s"])
    return None


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _load(args)
    os.makedirs(args.out_dir, exist_ok=True)
    records_path = args.records or os.path.join(args.out_dir, RECORDS_FILE)
    livetime = args.livetime_s if args.livetime_s is not None else _stored_livetime(args.out_dir)
    if livetime is None:
        raise ConfigError("livetime unknown: no daq manifest entry found; pass --livetime-s")
    summary_path = args.summary or os.path.join(args.out_dir, SUMMARY_FILE)
    sim_summary = None
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            sim_summary = json.load(fh)
    elif args.summary:
        raise ConfigError(f"summary file not found: {args.summary}")
    t0 = time.monotonic()
    pulses, pstats = process_records(records_path, cfg.daq, cfg.analysis)
    pulses_path = os.path.join(args.out_dir, PULSES_FILE)
    write_pulses(pulses_path, pulses)
    measured = measured_rates(pulses, livetime, cfg.analysis)
    hist_path = os.path.join(args.out_dir, HISTOGRAM_FILE)
    hist = measured["histogram"]
    write_delay_histogram(hist_path, hist.bin_edges_us, hist.counts)
    report = assemble_report(cfg, config_hash(cfg), sim_summary=sim_summary,
                             measured=measured)
    report_path = os.path.join(args.out_dir, REPORT_FILE)
    write_report(report_path, report)
    outputs = [pulses_path, hist_path, report_path]
    if sim_summary is not None:
        table_path = os.path.join(args.out_dir, RATE_TABLE_FILE)
        write_rate_table_csv(table_path, report)
        outputs.append(table_path)
        comparison_path = os.path.join(args.out_dir, COMPARISON_TABLE_FILE)
        write_comparison_table_csv(comparison_path, report)
        outputs.append(comparison_path)
    inputs = [records_path] + ([summary_path] if sim_summary is not None else [])
    record_stage(args.out_dir, "analyze", config_hash(cfg), cfg.seed,
                 inputs, outputs, time.monotonic() - t0, stats=pstats.to_dict())
    print(format_report(report))
    print(f"analyze: {pstats.n_pulses} pulses from {pstats.n_records} records "
          f"-> {report_path}")
    return 0


def _pull_rows(a: dict, b: dict) -> list[tuple]:
    rows = []
    for key in sorted(set(a["values"]) & set(b["values"])):
        va, vb = a["values"][key], b["values"][key]
        sigma = math.hypot(va.get("error") or 0.0, vb.get("error") or 0.0)
        pull = (va["value"] - vb["value"]) / sigma if sigma > 0 else None
        rows.append((key, va["value"], vb["value"], pull))
    return rows


def cmd_report(args: argparse.Namespace) -> int:
    reports = [read_report(path) for path in args.reports]
    if len(reports) == 1:
        print(format_report(reports[0]))
        return 0
    rows = _pull_rows(reports[0], reports[1])
    width = max(len(key) for key, *_ in rows) if rows else 10
    print(f"{'quantity':<{width}}  {'first':>12}  {'second':>12}  {'pull':>7}")
    worst = 0.0
    for key, va, vb, pull in rows:
        ptxt = f"{pull:+7.2f}" if pull is not None else "      -"
        print(f"{key:<{width}}  {va:12.6g}  {vb:12.6g}  {ptxt}")
        if pull is not None:
            worst = max(worst, abs(pull))
    print(f"max |pull| = {worst:.2f} over {len(rows)} shared quantities")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mutag",
        description="silicon muon-tagging stack: simulation, synthetic DAQ, analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate energy-deposit events")
    _add_common(p)
    p.add_argument("--workers", type=int, help="override the worker count")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--livetime-s", type=float,
                      help="mixed muon+gamma exposure of this livetime")
    mode.add_argument("--n-primaries", type=int,
                      help="fixed-count single-species run (needs --species)")
    p.add_argument("--species", choices=("mu", "gamma", "both"), default="both")
    p.add_argument("--dump-primaries", type=int, metavar="N",
                   help="also write N sampled primaries (needs --species mu|gamma)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("daq", help="synthesize waveforms and trigger records")
    _add_common(p)
    p.add_argument("--events", metavar="PATH",
                   help=f"event file (default: out-dir/{EVENTS_FILE})")
    p.add_argument("--livetime-s", type=float,
                   help="override the livetime stored in the event file")
    p.set_defaults(func=cmd_daq)

    p = sub.add_parser("analyze", help="reconstruct pulses and coincidence rates")
    _add_common(p)
    p.add_argument("--records", metavar="PATH",
                   help=f"record file (default: out-dir/{RECORDS_FILE})")
    p.add_argument("--summary", metavar="PATH",
                   help=f"simulation summary to merge (default: out-dir/{SUMMARY_FILE} if present)")
    p.add_argument("--livetime-s", type=float,
                   help="override the livetime recorded by the daq stage")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="print a report, or compare two")
    p.add_argument("reports", nargs="+", metavar="REPORT",
                   help="one report.json to print, or two to compare with pulls")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report" and len(args.reports) > 2:
        print("error: compare takes at most two reports", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, AnalysisError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
