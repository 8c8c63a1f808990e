"""Command-line front end: ``retrotransfer <command> [flags]``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import torch

from .config import ConfigFileError, load_run_config, parse_run_config
from .dataset import (
    DatasetError,
    cleanse_overlap,
    load_reactions,
    load_split,
    save_reactions,
    save_split,
    synth_generate,
)
from .decode import (
    DEFAULT_NS,
    classwise_report,
    first_match_rank,
    accuracy_from_ranks,
    beam_search_many,
    prediction_block,
    read_predictions,
    write_predictions,
)
from .model import ModelError, Vocabulary, load_checkpoint
from .optim import OptimError
from .pipeline import TOY_CONFIG, build_vocab, pipeline_replay
from .smiles import SmilesError, canonicalize
from .trainer import CurveLog, TrainError, pseudo_label, run_strategy
from .utils import atomic_write_text

logger = logging.getLogger("retrotransfer")

LOG_ENV = "RETROTRANSFER_LOG_LEVEL"


class UsageError(Exception):
    pass


def _ns(text: str) -> tuple[int, ...]:
    try:
        ns = tuple(sorted({int(v) for v in text.split(",") if v.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ns or ns[0] < 1:
        raise argparse.ArgumentTypeError("n values must be positive")
    return ns


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed (default: from config)")
    common.add_argument("--config", default=None, help="run-config INI file (default: built-in defaults)")
    common.add_argument("--log-level", default=None, help="logging level (default: $%s or WARNING)" % LOG_ENV)
    common.add_argument("--threads", type=int, default=None, help="cap on torch worker threads (default: all cores)")

    parser = argparse.ArgumentParser(prog="retrotransfer", description="Retrosynthesis data-transfer toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("canon", parents=[common], help="canonicalize a file of SMILES, one per line")
    p.add_argument("--in", dest="inp", required=True, help="input SMILES file")
    p.add_argument("--out", required=True, help="output file, line-aligned with the input")
    p.add_argument("--strip-maps", action="store_true", help="drop atom-map numbers first (default: off)")

    p = sub.add_parser("cleanse", parents=[common], help="drop augment samples whose product occurs in the target")
    p.add_argument("--augment", required=True, help="augment training file (.rsmi)")
    p.add_argument("--target-dir", required=True, help="directory with target train/val/test.rsmi")
    p.add_argument("--out", required=True, help="cleansed augment file")
    p.add_argument("--report", required=True, help="cleanse report (text; a .json path writes JSON)")

    p = sub.add_parser("synth", parents=[common], help="generate the toy target and augment corpora")
    p.add_argument("--out-dir", required=True, help="writes target/ and augment/ split directories")

    p = sub.add_parser("vocab", parents=[common], help="build a token vocabulary from reaction files")
    p.add_argument("--in", dest="inp", nargs="+", required=True, help="one or more .rsmi files")
    p.add_argument("--out", required=True, help="vocabulary file, one token per line")

    p = sub.add_parser("train", parents=[common], help="train one strategy")
    p.add_argument("--strategy", required=True, choices=["single", "joint", "self", "pretrain", "finetune"])
    p.add_argument("--target-dir", default=None, help="target split directory (all strategies but pretrain)")
    p.add_argument("--augment-dir", default=None, help="augment split directory (joint, pretrain, self)")
    p.add_argument("--pseudo-file", default=None, help="pseudo-labeled augment file for self (default: decode it)")
    p.add_argument("--init-checkpoint", default=None,
                   help="pre-trained checkpoint (finetune) or base model for pseudo labels (self)")
    p.add_argument("--vocab", default=None, help="vocabulary file (default: built from the training data)")
    p.add_argument("--iterations", type=int, default=None, help="override [train] iterations")
    p.add_argument("--out-dir", required=True, help="checkpoint, ledger and curves directory")

    p = sub.add_parser("decode", parents=[common], help="beam-search a file of products")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="inp", required=True, help=".rsmi (with gold) or one product per line")
    p.add_argument("--k", type=int, default=50, help="beam width (default: 50)")
    p.add_argument("--max-len", type=int, default=None, help="decode length limit (default: model max)")
    p.add_argument("--out", required=True, help="predictions file")

    p = sub.add_parser("eval", parents=[common], help="n-best accuracy of a predictions file")
    p.add_argument("--pred", required=True, help="predictions file written by decode")
    p.add_argument("--gold", required=True, help="gold .rsmi file aligned with the predictions")
    p.add_argument("--ns", type=_ns, default=DEFAULT_NS, help="n values (default: 1,3,5,10,20,50)")
    p.add_argument("--classwise", action="store_true", help="append a per-class table (default: off)")
    p.add_argument("--format", choices=["text", "csv"], default="text", help="table format (default: text)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("curves", parents=[common], help="merge a run's curves and validation ledger into one CSV")
    p.add_argument("--run-dir", required=True, help="directory written by train")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", parents=[common],
                       help="toy comparison of every strategy over several seeds (default config: the toy one)")
    p.add_argument("--out-dir", required=True)
    return parser


# -- commands -------------------------------------------------------------------------


def cmd_canon(args) -> int:
    from .smiles import strip_atom_maps

    lines = Path(args.inp).read_text(encoding="utf-8").splitlines()
    out = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if args.strip_maps:
            text = strip_atom_maps(text)
        try:
            out.append(canonicalize(text))
        except SmilesError as exc:
            raise SmilesError(f"{args.inp}:{lineno}: {exc}") from exc
    atomic_write_text(args.out, "".join(s + "\n" for s in out))
    return 0


def cmd_cleanse(args) -> int:
    augment = load_reactions(args.augment)
    target = load_split(args.target_dir, "target")
    kept, report = cleanse_overlap(augment, target)
    save_reactions(kept, args.out)
    atomic_write_text(args.report, report.to_json() if args.report.endswith(".json") else report.to_text())
    return 0


def cmd_synth(args, rf) -> int:
    synth = rf.synth
    if args.seed is not None:
        from dataclasses import replace

        synth = replace(synth, seed=args.seed)
    target, augment = synth_generate(synth)
    save_split(target, Path(args.out_dir) / "target")
    save_split(augment, Path(args.out_dir) / "augment")
    return 0


def cmd_vocab(args) -> int:
    samples = []
    for path in args.inp:
        samples += load_reactions(path)
    atomic_write_text(args.out, build_vocab(samples).to_text())
    return 0


def _need(args, *names) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise UsageError(f"--strategy {args.strategy} requires " + ", ".join(f"--{n}" for n in missing))


def cmd_train(args, rf) -> int:
    need = {
        "single": ("target-dir",),
        "joint": ("target-dir", "augment-dir"),
        "self": ("target-dir",),
        "pretrain": ("augment-dir",),
        "finetune": ("target-dir", "init-checkpoint"),
    }[args.strategy]
    _need(args, *need)
    if args.strategy == "self" and args.pseudo_file is None:
        _need(args, "augment-dir", "init-checkpoint")
    target = load_split(args.target_dir, "target") if args.target_dir else None
    augment = load_split(args.augment_dir, "augment") if args.augment_dir else None
    out_dir = Path(args.out_dir)

    if args.vocab:
        vocab = Vocabulary.from_text(Path(args.vocab).read_text(encoding="utf-8"))
    elif args.strategy in ("finetune", "self") and args.init_checkpoint:
        vocab = load_checkpoint(args.init_checkpoint).vocab
    else:
        vocab = build_vocab(*(s for s in (target, augment) if s is not None))
    atomic_write_text(out_dir / "vocab.txt", vocab.to_text())

    pseudo = None
    if args.strategy == "self":
        if args.pseudo_file:
            pseudo = load_reactions(args.pseudo_file, raw_reactants=True)
        else:
            pseudo = pseudo_label(args.init_checkpoint, augment.train)
            save_reactions(pseudo, out_dir / "pseudo.rsmi")

    run = rf.train_config(len(vocab), strategy=args.strategy, iterations=args.iterations, seed=args.seed,
                          out_dir=out_dir, init_checkpoint=args.init_checkpoint if args.strategy == "finetune" else None)
    res = run_strategy(run, vocab, target=target, augment=augment, pseudo=pseudo)
    best = res.ledger.best
    print(f"best iteration {best[0]} val_ppl {best[1]:.6f} -> {res.best_checkpoint}")
    return 0


def _read_sources(path: str):
    """Products and optional gold samples from a .rsmi file or a plain list of products."""
    text = Path(path).read_text(encoding="utf-8")
    if ">>" in text:
        samples = load_reactions(path)
        return [s.product for s in samples], samples
    return [canonicalize(line.strip()) for line in text.splitlines() if line.strip()], None


def cmd_decode(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    ckpt = load_checkpoint(args.checkpoint)
    products, golds = _read_sources(args.inp)
    max_len = args.max_len or ckpt.config.max_seq_len
    results = beam_search_many(ckpt.params, ckpt.config, [ckpt.vocab.encode(p) for p in products], args.k,
                               max_len, ckpt.vocab)
    golds = golds or [None] * len(products)
    write_predictions([prediction_block(p, r, g) for p, r, g in zip(products, results, golds)], args.out)
    return 0


def cmd_eval(args) -> int:
    blocks = read_predictions(args.pred)
    golds = load_reactions(args.gold)
    if len(blocks) != len(golds):
        raise DatasetError(f"{len(blocks)} prediction blocks but {len(golds)} gold samples")
    width = min((len(b.candidates) for b in blocks), default=0)
    if blocks and width < max(args.ns):
        logger.warning("some blocks hold only %d candidates; n above that counts them as misses", width)
    cands = [[c[2] for c in b.candidates] for b in blocks]
    table = accuracy_from_ranks([first_match_rank(c, g) for c, g in zip(cands, golds)], args.ns)
    text = table.to_text() if args.format == "text" else table.to_csv()
    if args.classwise:
        report = classwise_report(cands, golds, args.ns)
        text += "\n" + (report.to_text() if args.format == "text" else report.to_csv())
    atomic_write_text(args.out, text)
    return 0


def cmd_curves(args) -> int:
    import json

    run_dir = Path(args.run_dir)
    curves = CurveLog.from_csv((run_dir / "curves.csv").read_text(encoding="utf-8"))
    ledger = json.loads((run_dir / "ledger.json").read_text(encoding="utf-8"))
    val = {e["iter"]: e["val_ppl"] for e in ledger["entries"]}
    cols = ["iter", "train_ppl", "val_ppl", "lr"] + (["acc1", "acc20"] if curves.has_test_columns() else [])
    lines = [",".join(cols)]
    for r in curves.rows:
        row = dict(r, val_ppl=val.get(r["iter"]))
        lines.append(",".join("" if row[c] is None else str(row[c]) for c in cols))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_replay(args, rf) -> int:
    if args.seed is not None:
        from dataclasses import replace

        rf.replay = replace(rf.replay, seeds=(args.seed,))
    table = pipeline_replay(rf, args.out_dir)
    print(table.to_text(), end="")
    return 0


COMMANDS = {
    "canon": cmd_canon,
    "cleanse": cmd_cleanse,
    "synth": cmd_synth,
    "vocab": cmd_vocab,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "curves": cmd_curves,
    "replay": cmd_replay,
}
NEEDS_CONFIG = {"synth", "train", "replay"}
RUNTIME_ERRORS = (SmilesError, DatasetError, ModelError, TrainError, OptimError, ConfigFileError, OSError, ValueError)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = args.log_level or os.environ.get(LOG_ENV, "WARNING")
    logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        if args.threads < 1:
            print("usage error: --threads must be >= 1", file=sys.stderr)
            return 2
        torch.set_num_threads(args.threads)
    try:
        fn = COMMANDS[args.command]
        if args.command == "replay" and args.config is None:
            return fn(args, parse_run_config(TOY_CONFIG))
        if args.command in NEEDS_CONFIG:
            return fn(args, load_run_config(args.config))
        return fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
