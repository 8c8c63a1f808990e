"""One-shot toy comparison of the transfer strategies.

synth -> cleanse -> pretrain -> finetune -> single -> joint -> pseudo_label -> self,
then beam-search evaluation of every strategy on the target test set and a comparison
table with one row per strategy and one column per n-best accuracy.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from .config import RunFile, load_run_config, parse_run_config
from .dataset import DatasetSplit, ReactionSample, cleanse_overlap, save_reactions, save_split, synth_generate
from .decode import (
    AccuracyTable,
    accuracy_from_ranks,
    beam_search_many,
    first_match_rank,
    prediction_block,
    write_predictions,
)
from .model import ModelConfig, ParameterSet, Vocabulary
from .trainer import TrainResult, finetune, pretrain, pseudo_label, train_joint, train_self, train_single
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

ROW_ORDER = ("single", "joint", "self", "pretrain+finetune")
ROW_TITLES = {
    "single": "Single model (no transfer)",
    "joint": "Joint training",
    "self": "Self-training",
    "pretrain+finetune": "Pre-training + fine-tune",
}

# Desk-scale defaults used when no config file is given.
TOY_CONFIG = """\
[model]
num_layers = 2
model_dim = 64
num_heads = 4
ffn_dim = 128
max_seq_len = 64
dropout_rate = 0.0

[train]
batch_tokens = 1024
peak_lr = 0.003
min_lr = 0.00001

[synth]
inject_overlap = 200
seed = 0
target_fragments = 45
augment_target_share = 0.06
"""


@dataclass
class ComparisonTable:
    ns: tuple[int, ...]
    runs: dict[str, list[AccuracyTable]] = field(default_factory=dict)
    # wall-clock seconds per seed; informational, never written to the table files
    seed_seconds: list[float] = field(default_factory=list)

    def mean(self, row: str, n: int) -> float:
        return statistics.fmean(t.accuracy[n] for t in self.runs[row])

    def std(self, row: str, n: int) -> float:
        vals = [t.accuracy[n] for t in self.runs[row]]
        return statistics.stdev(vals) if len(vals) > 1 else 0.0

    def rows(self) -> list[str]:
        return [r for r in ROW_ORDER if r in self.runs]

    def to_text(self) -> str:
        seeds = len(next(iter(self.runs.values()))) if self.runs else 0
        head = f"{'n-best accuracy (%)':<28}" + "".join(f"{f'n={n}':>14}" for n in self.ns)
        lines = [head, "-" * len(head)]
        for row in self.rows():
            cells = "".join(f"{f'{100 * self.mean(row, n):.1f} +- {100 * self.std(row, n):.1f}':>14}" for n in self.ns)
            lines.append(f"{ROW_TITLES[row]:<28}{cells}")
        lines.append(f"mean +- sample std over {seeds} seed(s)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        cols = ",".join(f"acc{n}_mean,acc{n}_std" for n in self.ns)
        lines = [f"strategy,{cols}"]
        for row in self.rows():
            vals = ",".join(f"{self.mean(row, n):.6f},{self.std(row, n):.6f}" for n in self.ns)
            lines.append(f"{row},{vals}")
        return "\n".join(lines) + "\n"


def build_vocab(*splits_or_samples) -> Vocabulary:
    texts = []
    for part in splits_or_samples:
        samples = part.train if isinstance(part, DatasetSplit) else part
        for s in samples:
            texts += (s.product, s.reactants)
    return Vocabulary.build(texts)


def evaluate(params: ParameterSet, cfg: ModelConfig, vocab: Vocabulary, test: Sequence[ReactionSample],
             k: int, ns: Sequence[int], predictions: str | Path | None = None) -> AccuracyTable:
    results = beam_search_many(params, cfg, [vocab.encode(s.product) for s in test], k, cfg.max_seq_len, vocab)
    ranks = [first_match_rank(r.texts(), s) for r, s in zip(results, test)]
    if predictions:
        write_predictions([prediction_block(s.product, r, s) for r, s in zip(results, test)], predictions)
    return accuracy_from_ranks(ranks, ns)


def replay_seed(rf: RunFile, target: DatasetSplit, augment: DatasetSplit, vocab: Vocabulary, seed: int,
                out_dir: Path) -> dict[str, AccuracyTable]:
    rp = rf.replay

    def run_cfg(strategy: str, iterations: int, **extra):
        return rf.train_config(len(vocab), strategy=strategy, iterations=iterations, seed=seed,
                               valid_interval=max(1, iterations // 10), out_dir=out_dir / strategy, **extra)

    test = target.test[: rp.test_limit or None]
    out: dict[str, AccuracyTable] = {}

    def score(name: str, res: TrainResult, cfg) -> None:
        pred = out_dir / f"predictions.{name}.txt"
        out[name] = evaluate(res.best_params, cfg.model, vocab, test, rp.beam_k, rp.ns, pred)
        logger.info("seed %d %s acc1=%.3f", seed, name, out[name].accuracy[rp.ns[0]])

    pre = pretrain(run_cfg("pretrain", rp.pretrain_iterations), augment, vocab)
    ft_cfg = run_cfg("finetune", rp.finetune_iterations, init_checkpoint=pre.best_checkpoint,
                     schedule="inverse_sqrt", warmup_steps=rp.finetune_warmup)
    ft = finetune(ft_cfg, ft_cfg.init_checkpoint, target, vocab)
    single_cfg = run_cfg("single", rp.single_iterations)
    single = train_single(single_cfg, target, vocab)
    score("single", single, single_cfg)
    joint_cfg = run_cfg("joint", rp.joint_iterations)
    score("joint", train_joint(joint_cfg, target, augment, vocab), joint_cfg)
    pseudo = pseudo_label(single.best_params, augment.train, single_cfg.model, vocab)
    save_reactions(pseudo, out_dir / "pseudo.rsmi")
    hits = sum(p.reactants == a.reactants for p, a in zip(pseudo, augment.train))
    logger.info("seed %d pseudo labels matching the true reactants: %d / %d", seed, hits, len(pseudo))
    self_cfg = run_cfg("self", rp.self_iterations)
    score("self", train_self(self_cfg, target, pseudo, vocab), self_cfg)
    score("pretrain+finetune", ft, ft_cfg)
    return out


def _timed_seed(*args) -> tuple[dict[str, AccuracyTable], float]:
    start = time.monotonic()
    accs = replay_seed(*args)
    return accs, time.monotonic() - start


def _seed_job(job) -> tuple[dict[str, AccuracyTable], float]:
    *args, threads, log_level = job
    logging.basicConfig(level=log_level, format="%(asctime)s %(processName)s %(message)s")
    torch.set_num_threads(threads)
    return _timed_seed(*args)


def pipeline_replay(config: str | Path | RunFile | None, out_dir: str | Path) -> ComparisonTable:
    """Run the whole comparison; every artifact (data, checkpoints, predictions, tables) lands in ``out_dir``."""
    rf = config if isinstance(config, RunFile) else (
        load_run_config(config) if config is not None else parse_run_config(TOY_CONFIG))
    out = Path(out_dir)
    target, augment_raw = synth_generate(rf.synth)
    kept, report = cleanse_overlap(augment_raw.train, target)
    augment = DatasetSplit(augment_raw.name, kept, augment_raw.val, augment_raw.test)
    logger.info("cleanse: %d in, %d removed, %d kept", report.input_count, report.removed_count, report.output_count)
    vocab = build_vocab(target, augment)
    save_split(target, out / "data" / "target")
    save_split(augment, out / "data" / "augment")
    atomic_write_text(out / "data" / "cleanse_report.txt", report.to_text())
    atomic_write_text(out / "vocab.txt", vocab.to_text())
    table = ComparisonTable(tuple(rf.replay.ns), {r: [] for r in ROW_ORDER})
    seeds = list(rf.replay.seeds)
    cores = os.cpu_count() or 1
    workers = min(len(seeds), rf.replay.workers or cores)
    jobs = [(rf, target, augment, vocab, seed, out / f"seed_{seed}", max(1, cores // workers),
             logging.getLogger().level) for seed in seeds]
    if workers > 1:
        # seeds are independent; spawn keeps torch's thread pools out of forked children
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(workers, mp_context=ctx) as pool:
            results = list(pool.map(_seed_job, jobs))
    else:
        results = [_timed_seed(*job[:6]) for job in jobs]
    for accs, seconds in results:
        table.seed_seconds.append(seconds)
        for row in ROW_ORDER:
            table.runs[row].append(accs[row])
    atomic_write_text(out / "table.txt", table.to_text())
    atomic_write_text(out / "table.csv", table.to_csv())
    return table
