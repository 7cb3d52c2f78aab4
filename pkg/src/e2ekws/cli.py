"""Command-line entry point: ``e2ekws <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 training
divergence. Diagnostics go to stderr; data goes to stdout or ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .errors import (ConfigError, DataError, InvalidArgumentError, KwsError, ModelFormatError,
                     NoOperatingPointError, TrainingDivergedError, UnsupportedVersionError)
from .estimators import build_sequences, normalization
from .evaluation import (default_thresholds, fr_at_fa, latency_report, load_scores, roc_curve,
                         roc_to_csv, save_scores, score_utterances, utterance_frames)
from .frontend import frames_to_bytes, frames_to_csv, log_mel_frames, read_wav
from .labeling import OK_GOOGLE, read_manifest
from .scoring import DEFAULT_SUPPRESSION_MS, ScoringRule, StreamingDetector
from .synth import gen_synthetic_dataset
from .topology import (BUILTIN_NAMES, Model, ModelConfig, builtin_config, count_biases,
                       count_macs, count_params, load_model, receptive_field, save_model)
from .training import TrainConfig, train, train_one_stage, train_two_stage

log = logging.getLogger("e2ekws")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route it through our codes instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- helpers ----------------------------------------------------------------

def _need_file(path, what="input"):
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return Path(path)


def _need_parent(path):
    if path in (None, "-"):
        return path
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")
    return path


def _open_out(path, binary=False):
    if path in (None, "-"):
        return sys.stdout.buffer if binary else sys.stdout
    return open(path, "wb" if binary else "w")


def _close(fh):
    if fh not in (sys.stdout, sys.stdout.buffer):
        fh.close()


def _rule_for(model, args):
    if model.config.num_classes == 2:
        return ScoringRule("e2e")
    return ScoringRule("smoothed", tuple(OK_GOOGLE.keyword_classes()),
                       args.smooth_window, args.max_window)


def _json_safe(d):
    if isinstance(d, dict):
        return {k: _json_safe(v) for k, v in d.items()}
    if isinstance(d, float) and d != d:
        return None
    return d


def _echo(title, d):
    print(f"# effective {title}: {json.dumps(d, sort_keys=True)}", file=sys.stderr)


# --- subcommands ------------------------------------------------------------

def cmd_features(args):
    _need_file(args.wav, "wav")
    _need_parent(args.out)
    frames = log_mel_frames(read_wav(args.wav))
    if args.format == "bin":
        fh = _open_out(args.out, binary=True)
        fh.write(frames_to_bytes(frames))
    else:
        fh = _open_out(args.out)
        fh.write(frames_to_csv(frames))
    _close(fh)
    log.info("%d frames", len(frames))
    return EXIT_OK


def cmd_synth(args):
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    _need_parent(out)
    data = gen_synthetic_dataset(args.seed, args.positives, args.negatives,
                                 noise_level=args.noise_level, neg_seconds=args.neg_seconds,
                                 prefix=args.prefix, near_miss=args.near_miss)
    path = data.write(out)
    print(path)
    log.info("%d positives, %.3f h of negatives", len(data.positives), data.negative_hours)
    return EXIT_OK


_TRAIN_FLAGS = {"learning_rate": "lr", "momentum": "momentum", "batch_size": "batch_size",
                "epochs": "epochs", "recipe": "recipe", "adaptation_rate": "adaptation_rate",
                "encoder_init": "encoder_init", "clip_norm": "clip_norm", "truncate": "truncate",
                "target_loss": "target_loss", "checkpoint_every": "checkpoint_every",
                "checkpoint_path": "checkpoint"}


def _train_config(args):
    """defaults < --train-config file < flags."""
    d = dataclasses.asdict(TrainConfig())
    if args.train_config:
        d.update(json.loads(TrainConfig.from_text(
            _need_file(args.train_config, "train config").read_text()).to_text()))
    for key, flag in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            d[key] = value
    if args.freeze_encoder:
        d["freeze_encoder"] = True
    if args.seed is not None:
        d["seed"] = args.seed
    return TrainConfig(**d)


def _model_config(args, recipe):
    if args.model_config:
        return ModelConfig.from_text(_need_file(args.model_config, "model config").read_text())
    return builtin_config(args.config, intermediate_softmax=recipe == "two_stage")


def cmd_train(args):
    manifest = _need_file(args.manifest, "manifest")
    _need_parent(args.out)
    cfg = _train_config(args)
    if cfg.encoder_init:
        _need_file(cfg.encoder_init, "encoder")
    config = _model_config(args, cfg.recipe)
    utts = read_manifest(manifest)
    if not utts:
        raise DataError(f"{manifest}: empty manifest")
    frames = [utterance_frames(u, manifest)[0] for u in utts]
    offset, scale = normalization(frames)
    config = dataclasses.replace(config, input_offset=offset, input_scale=scale)
    _echo("model config", {"name": config.name, "params": count_params(config),
                           "extra_positives": args.extra_positives})
    _echo("train config", dataclasses.asdict(cfg))

    def seqs(target, cfg_=config):
        return build_sequences(frames, utts, cfg_, OK_GOOGLE, target, args.extra_positives)

    target = "e2e" if config.num_classes == 2 else "encoder"
    if cfg.recipe == "two_stage":
        enc_cfg = dataclasses.replace(cfg, epochs=args.encoder_epochs or cfg.epochs)
        model, reports = train_two_stage(config, seqs("encoder"), seqs("e2e"), enc_cfg, cfg)
        report = reports[-1]
    elif cfg.encoder_init:
        model, report = train_one_stage(config, seqs(target), cfg, load_model(cfg.encoder_init))
    else:
        model = Model(config, seed=cfg.seed)
        report = train(model, seqs(target), cfg)
    save_model(model, args.out)
    print(json.dumps({"model": str(args.out), "checksum": report.checksum,
                      "final_loss": report.final_loss, "epochs": len(report.epoch_losses),
                      "steps": report.steps}))
    return EXIT_OK


def cmd_stream(args):
    _need_file(args.model, "model")
    _need_file(args.wav, "wav")
    if args.scores == "-" and args.events == "-":
        raise UsageError("scores and events cannot both go to stdout")
    _need_parent(args.scores)
    _need_parent(args.events)
    model = load_model(args.model)
    pcm = read_wav(args.wav)
    det = StreamingDetector(model, _rule_for(model, args), args.threshold, args.suppression_ms)
    chunk = max(1, int(args.chunk_ms * 16))
    points, events = [], []
    for start in range(0, len(pcm), chunk):
        p, e = det.process(pcm[start:start + chunk])
        points.extend(p)
        events.extend(e)
    if args.scores is not None:
        fh = _open_out(args.scores)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_ms", "score"])
        for p in points:
            w.writerow([p.timestamp_ms, f"{p.score:.7f}"])
        _close(fh)
    if args.events is not None:
        fh = _open_out(args.events)
        for e in events:
            fh.write(json.dumps(e.to_json()) + "\n")
        _close(fh)
    log.info("%d inferences, %d events", len(points), len(events))
    return EXIT_OK


def _named(items, flag):
    out = {}
    for item in items or ():
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"{flag} expects NAME=PATH, got {item!r}")
        if name in out:
            raise UsageError(f"duplicate name {name!r} in {flag}")
        out[name] = _need_file(path, flag.lstrip("-"))
    return out


def cmd_eval(args):
    models = _named(args.model, "--model")
    cached = _named(args.scores, "--scores")
    if not models and not cached:
        raise UsageError("give at least one --model NAME=PATH or --scores NAME=PATH")
    if set(models) & set(cached):
        raise UsageError("a name cannot be both a live model and cached scores")
    manifest = _need_file(args.manifest, "manifest") if models else None
    if args.save_scores and not Path(args.save_scores).is_dir():
        raise UsageError(f"--save-scores directory does not exist: {args.save_scores}")
    _need_parent(args.out)
    _need_parent(args.summary)
    thresholds = default_thresholds(args.thresholds)
    _echo("eval config", {"target_fa_per_hour": args.target_fa, "thresholds": args.thresholds,
                          "suppression_ms": args.suppression_ms, "jobs": args.jobs})

    scored = {name: load_scores(path) for name, path in cached.items()}
    if models:
        loaded = {name: load_model(path) for name, path in models.items()}
        detectors = {name: (m, _rule_for(m, args)) for name, m in loaded.items()}
        scored.update(score_utterances(read_manifest(manifest), detectors, manifest, jobs=args.jobs))
    if args.save_scores:
        for name in models:
            save_scores(Path(args.save_scores) / f"{name}.jsonl", scored[name])

    fh = _open_out(args.out)
    summaries = []
    for k, name in enumerate(sorted(scored)):
        roc = roc_curve(scored[name], thresholds, args.suppression_ms)
        text = roc_to_csv(roc, name)
        fh.write(text if k == 0 else text.split("\n", 1)[1])
        hours = sum(s.duration_s for s in scored[name] if not s.is_keyword) / 3600.0
        summary = {"model": name, "negative_hours": hours,
                   "positives": sum(s.is_keyword for s in scored[name]),
                   "target_fa_per_hour": args.target_fa}
        try:
            thr, fr = fr_at_fa(roc, args.target_fa, hours, args.allow_low_resolution)
            summary.update(threshold=thr, fr_rate=fr,
                           latency=latency_report(scored[name], thr, args.suppression_ms))
        except NoOperatingPointError as exc:
            summary.update(threshold=None, fr_rate=None, error=str(exc))
        summaries.append(summary)
    _close(fh)
    sfh = _open_out(args.summary) if args.summary else sys.stderr
    for s in summaries:
        sfh.write(json.dumps(_json_safe(s), sort_keys=True) + "\n")
    if args.summary:
        _close(sfh)
    return EXIT_OK


def cmd_count(args):
    configs = []
    for path in args.model or ():
        configs.append(load_model(_need_file(path, "model")).config)
    for path in args.model_config or ():
        configs.append(ModelConfig.from_text(_need_file(path, "model config").read_text()))
    names = BUILTIN_NAMES if args.all else (args.config or ())
    configs += [builtin_config(n) for n in names]
    if not configs:
        raise UsageError("give --config NAME, --model PATH, --model-config PATH or --all")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["config", "params", "biases", "macs_per_inference", "macs_per_10ms_frame",
                "receptive_field_ms"])
    for c in configs:
        w.writerow([c.name, count_params(c), count_biases(c), count_macs(c, "per_inference"),
                    count_macs(c, "per_10ms_frame"), receptive_field(c).ms])
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="e2ekws", description="Streaming end-to-end keyword spotting toolkit.")
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for evaluation")
    p.add_argument("-v", "--verbose", action="count", default=0)
    # the shared flags are also accepted after the subcommand name
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    add = sub.add_parser
    sub.add_parser = lambda *a, **kw: add(*a, parents=[common], **kw)

    f = sub.add_parser("features", help="log-mel frames of a WAV file")
    f.add_argument("--wav", required=True)
    f.add_argument("--out", default="-")
    f.add_argument("--format", choices=("csv", "bin"), default="csv")

    s = sub.add_parser("synth", help="write a synthetic corpus and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--positives", type=int, default=50)
    s.add_argument("--negatives", type=int, default=50)
    s.add_argument("--neg-seconds", type=float, default=3.0)
    s.add_argument("--noise-level", type=float, default=0.01)
    s.add_argument("--near-miss", type=float, default=0.0)
    s.add_argument("--prefix", default="")

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default="E2E_40K", choices=BUILTIN_NAMES)
    t.add_argument("--model-config", help="model topology JSON (overrides --config)")
    t.add_argument("--train-config", help="training JSON; flags override it")
    t.add_argument("--recipe", choices=("one_stage", "two_stage"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--encoder-epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--adaptation-rate", type=float)
    t.add_argument("--encoder-init")
    t.add_argument("--freeze-encoder", action="store_true")
    t.add_argument("--clip-norm", type=float)
    t.add_argument("--truncate", type=int)
    t.add_argument("--target-loss", type=float)
    t.add_argument("--checkpoint")
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--extra-positives", type=int, default=0)

    st = sub.add_parser("stream", help="stream a WAV file through a model")
    st.add_argument("--model", required=True)
    st.add_argument("--wav", required=True)
    st.add_argument("--threshold", type=float, default=0.5)
    st.add_argument("--suppression-ms", type=int, default=DEFAULT_SUPPRESSION_MS)
    st.add_argument("--chunk-ms", type=float, default=100.0)
    st.add_argument("--scores", help="CSV score stream ('-' for stdout)")
    st.add_argument("--events", default="-", help="JSONL detection events (default stdout)")

    e = sub.add_parser("eval", help="ROC and operating points over a manifest")
    e.add_argument("--manifest")
    e.add_argument("--model", action="append", metavar="NAME=PATH")
    e.add_argument("--scores", action="append", metavar="NAME=PATH",
                   help="cached score JSONL from --save-scores")
    e.add_argument("--save-scores", metavar="DIR")
    e.add_argument("--target-fa", type=float, default=0.5)
    e.add_argument("--thresholds", type=int, default=1001)
    e.add_argument("--suppression-ms", type=int, default=DEFAULT_SUPPRESSION_MS)
    e.add_argument("--allow-low-resolution", action="store_true")
    e.add_argument("--out", default="-", help="ROC CSV")
    e.add_argument("--summary", help="operating-point JSONL (default stderr)")

    c = sub.add_parser("count", help="parameter and MAC accounting")
    c.add_argument("--config", action="append", choices=BUILTIN_NAMES)
    c.add_argument("--model", action="append")
    c.add_argument("--model-config", action="append")
    c.add_argument("--all", action="store_true")

    for sp in (st, e):
        sp.add_argument("--smooth-window", type=int, default=100)
        sp.add_argument("--max-window", type=int, default=100)
    return p


COMMANDS = {"features": cmd_features, "synth": cmd_synth, "train": cmd_train,
            "stream": cmd_stream, "eval": cmd_eval, "count": cmd_count}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("e2ekws: a subcommand is required")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.command == "synth" and args.seed is None:
            args.seed = 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"e2ekws {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # downstream reader went away (e.g. piped into head); not an error
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except TrainingDivergedError as exc:
        print(f"e2ekws {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ModelFormatError, UnsupportedVersionError, NoOperatingPointError,
            OSError, json.JSONDecodeError) as exc:
        print(f"e2ekws {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, InvalidArgumentError, KwsError) as exc:
        print(f"e2ekws {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run(argv=None):
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
