"""``inear-gait`` command line.

Subcommands communicate through files:

* ``synth``     -> WAVs + ``manifest.jsonl``
* ``segment``   WAVs -> ``<prefix>.f8`` cycle records + ``<prefix>.json`` index
* ``featurize`` cycles index or manifest -> feature file (JSON)
* ``enroll``    feature file -> model (JSON)
* ``identify``  model + feature file or cycles index -> verdicts (JSON lines)
* ``evaluate``  manifest or feature file -> report (JSON lines), optional plot CSV
* ``cost``      stage table -> energy/latency estimate

Exit status: 0 on success, 1 on usage errors, 2 on data or format errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .classify import DEFAULT_C, DEFAULT_NU, decision_scores
from .cost import DEFAULT_TABLE, all_estimates, estimate, load_stage_table
from .dataio import AudioClip, load_manifest, load_model, read_wav, save_model, write_records
from .dsp import (ENVELOPE_CUTOFF, LOWPASS_CUTOFF, MAX_CYCLE_S, MIN_CYCLE_S, PROCESSING_RATE,
                  SegmentConfig, segment_detailed)
from .errors import GaitError, IncompatibleModelError
from .evaluate import (ProtocolConfig, condition_report, enrollment_set, plot_rows_conditions,
                       plot_rows_sweep, run_protocol, train_for, training_size_sweep)
from .features import FEATURE_MODES
from .pipeline import (FUSIONS, build_dataset, cycles_dataset, load_dataset, read_cycles,
                       save_dataset, write_cycles)
from .synth import gen_corpus

log = logging.getLogger("inear_gait")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SCHEME_CHOICES = ("a", "b", "c", "d", "oc-svm", "imbalanced", "balanced-all", "balanced-5")
DEFAULT_CORPUS = "corpus"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Prints the full help on a usage error and exits with status 1."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _gamma(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("gamma must be 'auto' or a number") from None


def _add_segment_flags(p):
    g = p.add_argument_group("segmentation")
    g.add_argument("--rate", type=int, default=PROCESSING_RATE, help="processing rate in Hz (default 4000)")
    g.add_argument("--cutoff", type=float, default=LOWPASS_CUTOFF, help="lowpass cutoff in Hz (default 50)")
    g.add_argument("--env-cutoff", type=float, default=ENVELOPE_CUTOFF,
                   help="envelope smoothing cutoff in Hz (default 3)")
    g.add_argument("--min-cycle", type=float, default=MIN_CYCLE_S, help="shortest cycle in s (default 0.5)")
    g.add_argument("--max-cycle", type=float, default=MAX_CYCLE_S, help="longest cycle in s (default 2.0)")


def _add_protocol_flags(p, scheme_default="d"):
    g = p.add_argument_group("classifier")
    g.add_argument("--scheme", default=scheme_default, choices=SCHEME_CHOICES,
                   help=f"training scheme (default {scheme_default})")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--nu", type=float, default=DEFAULT_NU, help="one-class nu (default 0.1)")
    g.add_argument("--C", type=float, default=DEFAULT_C, dest="C", help="two-class C (default 1)")
    g.add_argument("--gamma", type=_gamma, default="auto", help="RBF gamma or 'auto' (default)")
    g.add_argument("--threshold", type=float, default=0.0, help="accept when score > threshold (default 0)")


def _segment_config(args) -> SegmentConfig:
    return SegmentConfig(rate=args.rate, cutoff=args.cutoff, env_cutoff=args.env_cutoff,
                         min_cycle_s=args.min_cycle, max_cycle_s=args.max_cycle)


def _protocol(args, **extra) -> ProtocolConfig:
    return ProtocolConfig(scheme=args.scheme, seed=args.seed, nu=args.nu, C=args.C, gamma=args.gamma,
                          decision_threshold=args.threshold, **extra)


def _emit(records, out):
    if out:
        write_records(records, path=out)
    else:
        write_records(records, stream=sys.stdout)


# --------------------------------------------------------------------------
# Subcommands

def cmd_synth(args) -> int:
    manifest = gen_corpus(args.out, args.subjects, args.sessions, seed=args.seed,
                          duration_s=args.duration, rate=args.sample_rate,
                          identical=args.identical, interference_snr_db=args.snr,
                          spread_hz=args.spread, interference=args.interference)
    print(manifest)
    return EXIT_OK


def cmd_segment(args) -> int:
    config = _segment_config(args)
    clips = []
    default_sides = iter(("left", "right"))
    for path in args.wav:
        channels = read_wav(path)
        if len(channels) == 1:
            c = channels[0]
            clips.append(AudioClip(c.samples, c.sample_rate, next(default_sides, "left")))
        else:
            clips.extend(channels[:2])
    cycles, steps, summary = [], {}, []
    for clip in clips:
        seg = segment_detailed(clip, config, args.subject, args.session)
        cycles.extend(seg.cycles)
        steps[clip.channel] = [s.time_s for s in seg.steps]
        summary.append({"side": clip.channel, "steps": len(seg.steps), "cycles": len(seg.cycles)})
        log.info("%s: %d steps, %d cycles", clip.channel, len(seg.steps), len(seg.cycles))
    blob, index = write_cycles(cycles, args.out, steps, config)
    write_records([{**s, "blob": str(blob), "index": str(index)} for s in summary], stream=sys.stdout)
    return EXIT_OK


def _load_features_input(path, mode, fusion, config):
    """Dataset from a manifest (.jsonl), a cycles index, or a feature file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return build_dataset(load_manifest(path, resolve=True), mode, fusion, config)
    doc_format = None
    try:
        with path.open(encoding="utf-8") as fh:
            head = fh.read(4096)
        if '"inear-gait-cycles"' in head:
            doc_format = "cycles"
        elif '"inear-gait-features"' in head:
            doc_format = "features"
    except OSError:
        pass
    if doc_format == "cycles" or (doc_format is None and path.with_suffix(".f8").exists()):
        return cycles_dataset(read_cycles(path), mode, fusion)
    return load_dataset(path)


def cmd_featurize(args) -> int:
    data = _load_features_input(args.input, args.features, args.fusion, _segment_config(args))
    save_dataset(data, args.out)
    log.info("wrote %d rows x %d features (%s) to %s", len(data), data.X.shape[1], data.layout, args.out)
    return EXIT_OK


def cmd_enroll(args) -> int:
    data = load_dataset(args.features)
    config = _protocol(args)
    if args.legit not in data.subject_ids:
        raise UsageError(f"subject {args.legit!r} not in {args.features} ({', '.join(data.subject_ids)})")
    rows, y = enrollment_set(data, config, args.legit)
    preprocessing = {**data.meta, "legit_subject": args.legit, "scheme": config.scheme, "seed": config.seed}
    model = train_for(data, rows, y, config, preprocessing)
    save_model(model, args.out)
    log.info("%s model for %s: %d support vectors", model.kind, args.legit, model.n_support)
    return EXIT_OK


def cmd_identify(args) -> int:
    model = load_model(args.model)
    mode = model.preprocessing.get("feature_mode", "all")
    fusion = model.preprocessing.get("fusion", "fused")
    data = _load_features_input(args.input, mode, fusion, _segment_config(args))
    if model.feature_layout and data.layout and data.layout != model.feature_layout:
        raise IncompatibleModelError(f"input layout {data.layout!r} does not match model {model.feature_layout!r}")
    scores = decision_scores(model, data.X) if len(data) else []
    records = [{"subject_id": str(data.subjects[i]), "session_id": str(data.sessions[i]),
                "index": int(data.indices[i]), "score": float(s),
                "verdict": "accept" if s > model.decision_threshold else "reject"}
               for i, s in enumerate(scores)]
    _emit(records, args.out)
    return EXIT_OK


def _write_csv(rows: list[dict], path):
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def cmd_evaluate(args) -> int:
    data = _load_features_input(args.input, args.feature_mode, args.fusion, _segment_config(args))
    config = _protocol(args, legit_subject=args.legit, feature_mode=args.feature_mode, fusion=args.fusion)
    records, plot = [], []
    if args.sweep_sizes:
        reports = training_size_sweep(data, args.sweep_sizes, config, n_cycles=args.sweep_cycles,
                                      jobs=args.jobs)
        for r in reports:
            records.extend(r.to_records(f"train_fraction={r.metadata['train_fraction']:g}"))
        plot = plot_rows_sweep(reports)
    elif args.conditions:
        cr = condition_report(data, config, args.jobs)
        records = cr.to_records()
        plot = plot_rows_conditions(cr)
    else:
        report = run_protocol(data, config, args.jobs)
        records = report.to_records()
        plot = [{"subject": r.subject, "far": r.far, "frr": r.frr, "bac": r.bac} for r in report.per_subject]
    _emit(records, args.out)
    if args.plot_csv:
        _write_csv(plot, args.plot_csv)
    return EXIT_OK


def _format_estimate(e) -> str:
    where = f" over {e.link}" if e.link else ""
    lines = [f"{e.scheme}{where} ({e.feature_mode} features): {e.energy_mj:.2f} mJ, "
             f"{e.post_acquisition_latency_ms:.2f} ms after acquisition ({e.latency_ms:.2f} ms total)"]
    for s in e.breakdown:
        energy = f"{s.energy_mj:8.3f} mJ" if s.powered else "     (air)   "
        lines.append(f"  {s.name:<18} {s.power_mw:7.1f} mW {s.latency_ms:9.2f} ms {energy}")
    lines += [f"  note: {n}" for n in e.notes]
    return "\n".join(lines)


def cmd_cost(args) -> int:
    table = load_stage_table(args.stages) if args.stages else DEFAULT_TABLE
    if args.scheme == "all":
        estimates = all_estimates(table)
    else:
        link = args.link if args.scheme != "on-device" else None
        if args.scheme != "on-device" and link is None:
            raise UsageError(f"--scheme {args.scheme} needs --link")
        estimates = [estimate(args.scheme, link, args.features, table)]
    if args.json:
        write_records([e.to_dict() for e in estimates], stream=sys.stdout)
    else:
        print("\n".join(_format_estimate(e) for e in estimates))
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inear-gait", description="In-ear acoustic gait identification pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file of flag defaults (top level or per subcommand)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", default=DEFAULT_CORPUS, help=f"output directory (default {DEFAULT_CORPUS})")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--sessions", type=int, default=2)
    p.add_argument("--duration", type=float, default=90.0, help="seconds per session (default 90)")
    p.add_argument("--interference", default="none", choices=("none", "speech", "music", "tone"))
    p.add_argument("--snr", type=float, default=0.0, help="interference SNR in dB (default 0)")
    p.add_argument("--sample-rate", type=int, default=48000)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--identical", action="store_true", help="all subjects share one signature")
    g.add_argument("--spread", type=float, default=None,
                   help="derive subjects from one signature with this mode spread in Hz")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="split recordings into gait cycles")
    p.add_argument("wav", nargs="+", help="one stereo WAV or left then right mono WAVs")
    p.add_argument("--out", required=True, help="output prefix for .f8 and .json files")
    p.add_argument("--subject", default="", help="subject id recorded with every cycle")
    p.add_argument("--session", default="", help="session id recorded with every cycle")
    _add_segment_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("featurize", help="feature matrix from cycles or a manifest")
    p.add_argument("input", help="cycles index (.json) or manifest (.jsonl)")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--features", default="all", choices=sorted(FEATURE_MODES))
    p.add_argument("--fusion", default="fused", choices=FUSIONS)
    _add_segment_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("enroll", help="train a model for one legitimate user")
    p.add_argument("features", help="feature file")
    p.add_argument("--legit", required=True, help="legitimate subject id")
    p.add_argument("--out", required=True, help="model file to write")
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("identify", help="score cycles against a model")
    p.add_argument("model")
    p.add_argument("input", help="feature file, cycles index or manifest")
    p.add_argument("--out", help="verdict file (default stdout)")
    _add_segment_flags(p)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="run a training/testing protocol")
    p.add_argument("input", nargs="?", default=f"{DEFAULT_CORPUS}/manifest.jsonl",
                   help=f"manifest or feature file (default {DEFAULT_CORPUS}/manifest.jsonl)")
    _add_protocol_flags(p)
    p.add_argument("--legit", default=None, help="evaluate only this subject")
    p.add_argument("--feature-mode", default="all", choices=sorted(FEATURE_MODES))
    p.add_argument("--fusion", default="fused", choices=FUSIONS)
    p.add_argument("--sweep-sizes", type=_float_list, default=None,
                   help="comma-separated training fractions for a size sweep")
    p.add_argument("--sweep-cycles", type=int, default=80, help="cycles per subject in a sweep (default 80)")
    p.add_argument("--conditions", action="store_true", help="one report per ground/footwear cell")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.add_argument("--out", help="report file (default stdout)")
    p.add_argument("--plot-csv", help="also write plot data as CSV")
    _add_segment_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cost", help="energy/latency of a deployment scheme")
    p.add_argument("--scheme", default="on-device", choices=("on-device", "raw", "features", "all"))
    p.add_argument("--link", choices=("wifi", "bt"), default=None)
    p.add_argument("--features", choices=("all", "mfcc"), default="all")
    p.add_argument("--stages", help="stage table override (JSON or CSV: name, power_mw, latency_ms)")
    p.add_argument("--json", action="store_true", help="JSON lines instead of text")
    p.set_defaults(func=cmd_cost)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        doc = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read --config {known.config}: {exc}")
    if not isinstance(doc, dict):
        parser.error("--config must hold a JSON object")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    dests = {name: {a.dest for a in sp._actions} for name, sp in subparsers.items()}
    shared = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
    sections = {k: {kk.replace("-", "_"): vv for kk, vv in v.items()}
                for k, v in doc.items() if isinstance(v, dict)}
    known_anywhere = set().union(*dests.values()) | {a.dest for a in parser._actions}
    problems = sorted(k for k in shared if k not in known_anywhere)
    problems += sorted(f"{name} (not a subcommand)" for name in sections if name not in subparsers)
    for name, values in sections.items():
        problems += sorted(f"{name}.{k}" for k in values if name in dests and k not in dests[name])
    if problems:
        parser.error(f"--config has unknown keys: {', '.join(problems)}")
    for name, sp in subparsers.items():
        values = {k: v for k, v in shared.items() if k in dests[name]}
        values.update(sections.get(name, {}))
        sp.set_defaults(**values)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"inear-gait {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GaitError as exc:
        print(f"inear-gait {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"inear-gait {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
