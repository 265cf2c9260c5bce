"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adapt import adapt
from .confidence import (entropy_confidence, mc_dropout_confidence, oracle_confidence,
                         sigmoid_confidence)
from .config import ConfigError, RunConfig
from .corpus import Manifest, normalize, read_image, read_manifest
from .estimator import (EstimatorModel, TrainSchedule, default_architecture, forward, init_model,
                        load_model, save_model, train)
from .exceptions import WordSpotError
from .phoc import canonicalize, phoc_matrix
from .spotting import english_words, evaluate_map, load_lexicon, rank, recognize_batch
from .synth import generate_corpus

logger = logging.getLogger("wordspot")

CONFIDENCE_CHOICES = ("random", "sigmoid", "entropy", "mc-dropout", "oracle")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _measure_id(name: str) -> str:
    return name.replace("-", "_")


def _load_manifest(cfg: RunConfig, name: str, need_labels: bool = False) -> Manifest:
    manifest = read_manifest(cfg.path(name))
    if len(manifest) == 0:
        raise WordSpotError(f"manifest {cfg.path(name)} has no entries")
    if need_labels and not manifest.labeled:
        raise WordSpotError(f"manifest {cfg.path(name)} lacks transcriptions")
    return manifest


def _images(manifest: Manifest, model: Optional[EstimatorModel] = None) -> np.ndarray:
    geometry = model.geometry if model is not None else (32, 96)
    return np.stack([normalize(img, *geometry) for img in manifest.load_images()])


def _lexicon(cfg: RunConfig):
    path = cfg.path("lexicon")
    if path is not None:
        return load_lexicon(path, cfg.phoc)
    return load_lexicon(english_words(int(cfg.raw["paths"]["lexicon_size"])), cfg.phoc)


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.path("out")
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    return out


def _write_tsv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    s = cfg.raw["synth"]
    out = _out_dir(cfg)
    if s["words"]:
        words = [str(w) for w in s["words"]]
    elif s["wordlist"]:
        if not Path(s["wordlist"]).exists():
            raise ConfigError(f"synth.wordlist: {s['wordlist']} does not exist")
        words = load_lexicon(s["wordlist"], cfg.phoc).words
    else:
        words = english_words(int(cfg.raw["paths"]["lexicon_size"]))
    if args.count is not None:
        words = [str(w) for w in cfg.rng("synth").choice(words, args.count)]
    words = [w for w in words if canonicalize(w, cfg.phoc.alphabet)]
    if not words:
        raise ConfigError("synth: no renderable words")
    manifest = generate_corpus(words, int(s["per_word"]), cfg.style, out, cfg.rng("synth"),
                               scale_jitter=bool(s["scale_jitter"]))
    print(f"wrote {len(manifest)} images to {out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    cfg.require_paths("train_manifest")
    if args.resume_from is not None and not Path(args.resume_from).exists():
        raise ConfigError(f"--resume-from: {args.resume_from} does not exist")
    out = _out_dir(cfg)
    manifest = _load_manifest(cfg, "train_manifest", need_labels=True)
    if args.resume_from is not None:
        model = load_model(args.resume_from)
    else:
        e = cfg.raw["estimator"]
        model = init_model(default_architecture(cfg.phoc.dim, float(e["dropout"])),
                           seed=cfg.stream_seed("init"), phoc_config=cfg.phoc)
    images = _images(manifest, model)
    targets = phoc_matrix(manifest.transcriptions, model.phoc_config).astype(np.float32)
    e = cfg.raw["estimator"]
    schedule = TrainSchedule(cfg.segments, int(e["batch_size"]), float(e["weight_decay"]),
                             cfg.stream_seed("train"))
    model, trace = train(model, images, targets, schedule)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.wsaf")
    _write_tsv(out / "loss.tsv", ("iteration", "loss"),
               ((i + 1, f"{loss:.6f}") for i, loss in enumerate(trace)))
    print(f"trained {len(trace)} iterations, final loss {trace[-1] if trace else float('nan'):.6f}")
    return 0


def cmd_adapt(cfg: RunConfig, args) -> int:
    cfg.require_paths("model", "target_manifest")
    if cfg.path("lexicon") is not None:
        cfg.require_paths("lexicon")
    if cfg.path("eval_manifest") is not None:
        cfg.require_paths("eval_manifest")
    measure = _measure_id(args.confidence) if args.confidence else None
    schedule = cfg.adapt_schedule(measure)
    out = _out_dir(cfg)
    manifest = _load_manifest(cfg, "target_manifest")
    truth = manifest.transcriptions if manifest.labeled else None
    if schedule.measure == "oracle" and truth is None:
        raise ConfigError("--confidence oracle needs a fully transcribed target manifest")
    model = load_model(cfg.path("model"))
    lexicon = _lexicon(cfg)
    images = _images(manifest, model)
    diagnostics = None
    if cfg.path("eval_manifest") is not None:
        ev = _load_manifest(cfg, "eval_manifest", need_labels=True)
        diagnostics = (_images(ev, model), ev.transcriptions)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "run.jsonl"
    log_path.write_text("", encoding="utf-8")
    # labels reach adapt only for the oracle measure or explicit diagnostics
    if schedule.measure != "oracle" and not args.diagnostics:
        truth = None
    model, reports = adapt(model, images, lexicon, schedule, truth=truth, diagnostics=diagnostics,
                           log_path=log_path, checkpoint_dir=out)
    save_model(model, out / "model.wsaf")
    print(f"ran {len(reports)} cycles with {schedule.measure} selection")
    return 0


def _query_vector(cfg: RunConfig, model: EstimatorModel, query: str, mode: str) -> np.ndarray:
    if mode == "qbs":
        from .phoc import phoc_of_string
        if not canonicalize(query, model.phoc_config.alphabet):
            raise ConfigError("query string has no symbol of the alphabet")
        return phoc_of_string(query, model.phoc_config)
    path = Path(query)
    if not path.exists():
        raise ConfigError(f"query image {query} does not exist")
    return forward(model, normalize(read_image(path), *model.geometry))


def cmd_spot(cfg: RunConfig, args) -> int:
    cfg.require_paths("model", "target_manifest")
    if args.top_k is not None and args.top_k < 1:
        raise ConfigError("--top-k must be positive")
    model = load_model(cfg.path("model"))
    query = _query_vector(cfg, model, args.query, args.mode)
    manifest = _load_manifest(cfg, "target_manifest")
    gallery = forward(model, _images(manifest, model))
    ranked = rank(query, gallery, query_id=args.query)
    items = ranked.items[:args.top_k] if args.top_k else ranked.items
    print("rank\tid\timage\tdissimilarity")
    for r, (i, d) in enumerate(items, 1):
        print(f"{r}\t{i}\t{manifest.entries[i].image_path}\t{d:.4f}")
    return 0


def cmd_recognize(cfg: RunConfig, args) -> int:
    cfg.require_paths("model", "target_manifest")
    if cfg.path("lexicon") is not None:
        cfg.require_paths("lexicon")
    model = load_model(cfg.path("model"))
    manifest = _load_manifest(cfg, "target_manifest")
    lexicon = _lexicon(cfg)
    idx, dis = recognize_batch(forward(model, _images(manifest, model)), lexicon)
    rows = [(e.image_path, lexicon.words[i], f"{d:.4f}") for e, i, d in zip(manifest.entries, idx, dis)]
    header = ("image", "label", "dissimilarity")
    if cfg.path("out") is not None:
        out = cfg.path("out")
        out.mkdir(parents=True, exist_ok=True)
        _write_tsv(out / "recognition.tsv", header, rows)
    print("\t".join(header))
    for row in rows:
        print("\t".join(row))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    cfg.require_paths("model", "eval_manifest")
    if args.stopwords is not None and not Path(args.stopwords).exists():
        raise ConfigError(f"--stopwords: {args.stopwords} does not exist")
    out = _out_dir(cfg)
    model = load_model(cfg.path("model"))
    manifest = _load_manifest(cfg, "eval_manifest", need_labels=True)
    stop = []
    if args.stopwords is not None:
        stop = Path(args.stopwords).read_text(encoding="utf-8").split()
    gallery = forward(model, _images(manifest, model))
    protocols = ("qbe", "qbs") if args.protocol == "both" else (args.protocol,)
    out.mkdir(parents=True, exist_ok=True)
    for protocol in protocols:
        result = evaluate_map(protocol, gallery, manifest.transcriptions, model.phoc_config,
                              stopwords=stop)
        (out / f"eval_{protocol}.tsv").write_text(result.to_tsv(), encoding="utf-8")
        print(f"{protocol}\tmAP\t{result.mAP:.4f}")
    return 0


def cmd_confidence_report(cfg: RunConfig, args) -> int:
    cfg.require_paths("model", "target_manifest")
    measures = [_measure_id(m) for m in args.measures.split(",") if m]
    bad = [m for m in measures if m.replace("_", "-") not in CONFIDENCE_CHOICES]
    if not measures or bad:
        raise ConfigError(f"--measures: unknown {bad or 'empty list'}")
    out = _out_dir(cfg)
    model = load_model(cfg.path("model"))
    manifest = _load_manifest(cfg, "target_manifest")
    labeled = manifest.labeled
    if "oracle" in measures and not labeled:
        raise ConfigError("the oracle measure needs a fully transcribed manifest")
    images = _images(manifest, model)
    attrs = forward(model, images)
    lexicon = _lexicon(cfg)
    idx, _ = recognize_batch(attrs, lexicon)
    labels = [lexicon.words[i] for i in idx]
    truth = [canonicalize(t, model.phoc_config.alphabet) for t in manifest.transcriptions] if labeled else None
    scores = {}
    for m in measures:
        if m == "sigmoid":
            scores[m] = sigmoid_confidence(attrs)
        elif m == "entropy":
            scores[m] = entropy_confidence(attrs)
        elif m == "mc_dropout":
            scores[m] = mc_dropout_confidence(model, images, int(cfg.raw["adapt"]["mc_passes"]),
                                              cfg.rng("dropout"))
        elif m == "oracle":
            scores[m] = oracle_confidence(attrs, phoc_matrix(truth, model.phoc_config))
        else:
            scores[m] = cfg.rng("adapt").random(len(attrs))
    header = ["id", "image", "measure", "score", "pseudo_label"]
    if labeled:
        header += ["transcription", "correct"]
    rows = []
    for m in measures:
        for i, entry in enumerate(manifest.entries):
            row = [i, entry.image_path, m.replace("_", "-"), f"{scores[m][i]:.6f}", labels[i]]
            if labeled:
                row += [truth[i], int(labels[i] == truth[i])]
            rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    _write_tsv(out / "confidence.tsv", header, rows)
    print(f"wrote {len(rows)} rows to {out / 'confidence.tsv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wordspot", description="Annotation-free word spotting with PHOC attributes.")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="render a synthetic word corpus")
    p.add_argument("--words-file", help="word-per-line list to render")
    p.add_argument("--count", type=int, help="draw this many words from the list at random")
    p.add_argument("--per-word", type=int, help="images per word")
    p.add_argument("--style", help="style family id (A or B)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a labeled manifest")
    p.add_argument("--manifest", help="labeled training manifest")
    p.add_argument("--resume-from", help="continue training this model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="self-train a model on an unlabeled manifest")
    p.add_argument("--model")
    p.add_argument("--manifest", help="target manifest (transcriptions optional)")
    p.add_argument("--lexicon", help="word-per-line lexicon (default: built-in English list)")
    p.add_argument("--lexicon-size", type=int, help="entries taken from the built-in list")
    p.add_argument("--eval-manifest", help="labeled set scored after every cycle")
    p.add_argument("--confidence", choices=CONFIDENCE_CHOICES)
    p.add_argument("--cycles", type=int)
    p.add_argument("--diagnostics", action="store_true",
                   help="log pseudo-label accuracy from target transcriptions")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("spot", help="rank a gallery for one query")
    p.add_argument("--model")
    p.add_argument("--manifest", help="gallery manifest")
    p.add_argument("--mode", choices=("qbe", "qbs"), default="qbs")
    p.add_argument("--query", required=True, help="query string (qbs) or image path (qbe)")
    p.add_argument("--top-k", type=int)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("recognize", help="lexicon-based recognition of every image")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--lexicon")
    p.add_argument("--lexicon-size", type=int)
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("eval", help="mAP of a labeled manifest")
    p.add_argument("--model")
    p.add_argument("--manifest", help="labeled evaluation manifest")
    p.add_argument("--protocol", choices=("qbe", "qbs", "both"), default="both")
    p.add_argument("--stopwords", help="whitespace-separated words never used as queries")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("confidence-report", help="per-image confidence scores")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--measures", default="sigmoid", help="comma-separated measures")
    p.add_argument("--lexicon")
    p.add_argument("--lexicon-size", type=int)
    p.set_defaults(func=cmd_confidence_report)

    for sp in sub.choices.values():
        _globals(sp, suppress=True)
    return parser


_MANIFEST_KEY = {"train": "train_manifest", "adapt": "target_manifest", "spot": "target_manifest",
                 "recognize": "target_manifest", "eval": "eval_manifest",
                 "confidence-report": "target_manifest"}


def _overrides(args) -> dict:
    paths = {"out": args.out, "model": getattr(args, "model", None),
             "lexicon": getattr(args, "lexicon", None),
             "lexicon_size": getattr(args, "lexicon_size", None),
             "eval_manifest": getattr(args, "eval_manifest", None)}
    if getattr(args, "manifest", None) is not None:
        paths[_MANIFEST_KEY[args.command]] = args.manifest
    synth = {"wordlist": getattr(args, "words_file", None), "per_word": getattr(args, "per_word", None),
             "style": getattr(args, "style", None)}
    return {"seed": args.seed, "paths": paths, "synth": synth,
            "adapt": {"cycles": getattr(args, "cycles", None)}}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"wordspot: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        if getattr(args, "words_file", None):
            cfg.raw["synth"]["words"] = None
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"wordspot: config error: {exc}", file=sys.stderr)
        return 1
    except (WordSpotError, OSError, ValueError) as exc:
        print(f"wordspot: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
