"""Command-line interface: the whole pipeline as seeded, reproducible subcommands.

Subcommands: gen-data, pretrain, train, backend-train, extract, score, eval.
Every run writes a JSON run manifest next to its outputs; on failure the
command removes whatever it created and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, dump_default_config, load_config
from .embedio import save_embeddings
from .metrics import compute_eer
from .scoring import (extract_corpus_embeddings, load_scores, score_pairs,
                      write_metrics_summary, write_scores)
from .synth import default_speaker_specs, generate_synthetic_corpus, load_manifest, load_trials
from .train import load_backend_model, load_front_model, pretrain_cnn, train_backend, train_rawnet


class _Run:
    """Tracks created paths so failures leave no partial outputs behind."""

    def __init__(self, command, args):
        self.command = command
        self.args = args
        self.created = []
        self.start = time.time()

    def track(self, path):
        path = Path(path)
        if not path.exists():
            self.created.append(path)
        return path

    def cleanup(self):
        for path in reversed(self.created):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()

    def write_manifest(self, out_dir, config_snapshot=None, seed=None,
                       inputs=(), outputs=()):
        manifest = {
            "command": self.command,
            "config": config_snapshot,
            "seed": seed,
            "version": __version__,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "wall_clock_s": round(time.time() - self.start, 3),
        }
        out_dir = Path(out_dir)
        target = out_dir / "run_manifest.json" if out_dir.is_dir() \
            else out_dir.with_suffix(out_dir.suffix + ".run.json")
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, target)


def _config_or_dump(args, run):
    if args.dump_config:
        sys.stdout.write(dump_default_config())
        raise SystemExit(0)
    if args.config is None:
        raise ConfigError("--config is required (or use --dump-config)")
    return load_config(args.config)


# -- subcommand bodies -----------------------------------------------------------


def _cmd_gen_data(args, run):
    out = Path(args.out)
    run.track(out)
    specs = default_speaker_specs(args.speakers, seed=args.seed)
    generate_synthetic_corpus(specs, args.utts, args.seed, out, force=args.force)
    run.write_manifest(out, seed=args.seed, outputs=[out / "manifest.csv", out / "trials.csv"])


def _cmd_pretrain(args, run):
    model_cfg, train_cfg = _config_or_dump(args, run)
    out = run.track(Path(args.out))
    ckpt, _ = pretrain_cnn(args.corpus, model_cfg, train_cfg, out)
    run.write_manifest(out, config_snapshot=Path(args.config).read_text(),
                       seed=train_cfg.seed, inputs=[args.corpus], outputs=[ckpt])


def _cmd_train(args, run):
    model_cfg, train_cfg = _config_or_dump(args, run)
    out = run.track(Path(args.out))
    ckpt, _ = train_rawnet(args.corpus, model_cfg, train_cfg, out,
                           pretrained=args.pretrained)
    run.write_manifest(out, config_snapshot=Path(args.config).read_text(),
                       seed=train_cfg.seed,
                       inputs=[args.corpus] + ([args.pretrained] if args.pretrained else []),
                       outputs=[ckpt])


def _cmd_backend_train(args, run):
    model_cfg, train_cfg = _config_or_dump(args, run)
    del model_cfg  # the front-end checkpoint carries its own config
    out = run.track(Path(args.out))
    ckpt, _ = train_backend(args.corpus, args.front, args.kind, train_cfg, out)
    run.write_manifest(out, config_snapshot=Path(args.config).read_text(),
                       seed=train_cfg.seed, inputs=[args.corpus, args.front],
                       outputs=[ckpt])


def _cmd_extract(args, run):
    front, front_cfg = load_front_model(args.front)
    entries = load_manifest(Path(args.corpus) / "manifest.csv")
    if args.split != "all":
        entries = [e for e in entries if e.split == args.split]
    out = run.track(Path(args.out))
    run.track(Path(str(out) + ".idx"))
    embeddings = extract_corpus_embeddings(front, entries, args.corpus,
                                           pre_emphasis_coeff=args.pre_emphasis)
    save_embeddings(out, embeddings)
    run.write_manifest(out, seed=front_cfg.seed, inputs=[args.corpus, args.front],
                       outputs=[out])


def _cmd_score(args, run):
    front, front_cfg = load_front_model(args.front)
    corpus = Path(args.corpus)
    entries = load_manifest(corpus / "manifest.csv")
    trials = load_trials(args.trials)
    backend_model, codebook = None, None
    if args.backend != "cosine":
        if args.model is None:
            raise ValueError(f"--backend {args.backend} requires --model")
        backend_model, kind, codebook = load_backend_model(args.model)
        if kind != args.backend:
            raise ValueError(
                f"back-end checkpoint was trained as {kind!r}, not {args.backend!r}")
    utt_ids = sorted({t.enrol_utt for t in trials} | {t.test_utt for t in trials})
    embeddings = extract_corpus_embeddings(front, entries, corpus,
                                           pre_emphasis_coeff=args.pre_emphasis,
                                           utterance_ids=utt_ids)
    scored = score_pairs(trials, embeddings, args.backend, backend_model, codebook)
    out = run.track(Path(args.out))
    write_scores(out, scored)
    run.write_manifest(out, seed=front_cfg.seed,
                       inputs=[args.corpus, args.front, args.trials], outputs=[out])


def _cmd_eval(args, run):
    scored = load_scores(args.scores)
    eer, threshold = compute_eer(scored)
    if args.out_prefix:
        txt = run.track(Path(args.out_prefix + "_metrics.txt"))
        kv = run.track(Path(args.out_prefix + "_metrics.kv"))
        write_metrics_summary(txt, kv, scored)
    print(f"{100.0 * eer:.4f}%  {threshold:.6g}  {len(scored)}")


# -- parser -----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rawnet",
                                description="raw-waveform speaker verification pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic labeled corpus")
    g.add_argument("--speakers", type=int, required=True)
    g.add_argument("--utts", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=_cmd_gen_data)

    for name, fn in [("pretrain", _cmd_pretrain), ("train", _cmd_train),
                     ("backend-train", _cmd_backend_train)]:
        t = sub.add_parser(name, help=f"{name} phase")
        t.add_argument("--config")
        t.add_argument("--dump-config", action="store_true",
                       help="print a full default config and exit")
        t.add_argument("--corpus")
        t.add_argument("--out")
        if name == "train":
            t.add_argument("--pretrained", help="CNN pre-training checkpoint")
        if name == "backend-train":
            t.add_argument("--front", help="front-end checkpoint")
            t.add_argument("--kind", choices=["b-vector", "rb-vector", "concat-mul"],
                           default="concat-mul")
        t.set_defaults(fn=fn)

    e = sub.add_parser("extract", help="extract embeddings for a manifest")
    e.add_argument("--front", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="all")
    e.add_argument("--pre-emphasis", type=float, default=0.97)
    e.set_defaults(fn=_cmd_extract)

    s = sub.add_parser("score", help="score a trial list")
    s.add_argument("--front", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--trials", required=True)
    s.add_argument("--backend", choices=["cosine", "b-vector", "rb-vector", "concat-mul"],
                   default="cosine")
    s.add_argument("--model", help="back-end checkpoint (non-cosine back-ends)")
    s.add_argument("--out", required=True)
    s.add_argument("--pre-emphasis", type=float, default=0.97)
    s.set_defaults(fn=_cmd_score)

    v = sub.add_parser("eval", help="compute EER from a score file")
    v.add_argument("--scores", required=True)
    v.add_argument("--out-prefix", help="also write <prefix>_metrics.{txt,kv}")
    v.set_defaults(fn=_cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    run = _Run(args.command, args)
    try:
        args.fn(args, run)
    except SystemExit:
        raise
    except (Exception, KeyboardInterrupt) as exc:
        run.cleanup()
        print(f"rawnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
