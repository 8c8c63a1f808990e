"""Training regimes: single, joint, self-training, pre-training and fine-tuning.

Every regime runs the same loop: token-budget minibatches, Adam with a scheduled
learning rate, and a validation-perplexity check every ``valid_interval`` steps whose
best snapshot is the run's output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import torch

from .dataset import DatasetSplit, ReactionSample, concat_splits, leaked_products
from .decode import beam_search, first_match_rank, greedy_decode
from .model import (
    Batch,
    Checkpoint,
    ModelConfig,
    ParameterSet,
    Vocabulary,
    evaluate_nll,
    init_params,
    load_checkpoint,
    loss_and_grad,
    make_batch,
    save_checkpoint,
)
from .optim import AdamState, ScheduleState, adam_step, clip_grad_norm
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

STRATEGIES = ("single", "joint", "self", "pretrain", "finetune")


class TrainError(Exception):
    pass


class EmptyDataset(TrainError):
    pass


class LeakDetected(TrainError):
    pass


@dataclass
class TrainRunConfig:
    strategy: str
    model: ModelConfig
    iterations: int = 1000
    batch_tokens: int = 1024
    valid_interval: int = 100
    seed: int = 0
    schedule: ScheduleState | None = None
    adam_betas: tuple[float, float] = (0.9, 0.998)
    adam_eps: float = 1e-9
    clip_norm: float | None = 5.0
    out_dir: str | None = None
    init_checkpoint: str | None = None
    test_interval: int = 0
    test_k: int = 20
    test_samples: int = 0

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise TrainError(f"unknown strategy {self.strategy!r}")
        if self.valid_interval < 1 or self.iterations < 1 or self.batch_tokens < 1:
            raise TrainError("iterations, batch_tokens and valid_interval must be >= 1")
        if self.strategy == "finetune" and not self.init_checkpoint:
            raise TrainError("finetune requires init_checkpoint")
        self.effective_schedule().validate()

    def effective_schedule(self) -> ScheduleState:
        if self.schedule is not None:
            return self.schedule
        kind = "inverse_sqrt" if self.strategy == "finetune" else "cyclic"
        return ScheduleState.for_budget(kind, self.iterations)


@dataclass
class SnapshotLedger:
    entries: list[tuple[int, float, str | None]] = field(default_factory=list)

    def record(self, iteration: int, perplexity: float, path: str | None = None) -> bool:
        """Append a validation result; returns True when it is the new best."""
        self.entries.append((iteration, perplexity, path))
        return self.best_index == len(self.entries) - 1

    @property
    def best_index(self) -> int | None:
        if not self.entries:
            return None
        return min(range(len(self.entries)), key=lambda i: (self.entries[i][1], self.entries[i][0]))

    @property
    def best(self) -> tuple[int, float, str | None] | None:
        i = self.best_index
        return None if i is None else self.entries[i]

    def to_text(self) -> str:
        best = self.best_index
        lines = [f"{'iter':>8} {'val_ppl':>12}  checkpoint"]
        for i, (it, ppl, path) in enumerate(self.entries):
            mark = "  *" if i == best else ""
            lines.append(f"{it:>8} {ppl:12.6f}  {path or '-'}{mark}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {"best_index": self.best_index,
             "entries": [{"iter": it, "val_ppl": ppl, "checkpoint": p} for it, ppl, p in self.entries]},
            indent=2,
        ) + "\n"


@dataclass
class CurveLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, iteration: int, train_ppl: float, lr: float, acc1=None, acc20=None) -> None:
        if self.rows and iteration <= self.rows[-1]["iter"]:
            raise TrainError("curve iterations must be strictly increasing")
        self.rows.append({"iter": iteration, "train_ppl": train_ppl, "lr": lr, "acc1": acc1, "acc20": acc20})

    def has_test_columns(self) -> bool:
        return any(r["acc1"] is not None for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["iter", "train_ppl", "lr"] + (["acc1", "acc20"] if self.has_test_columns() else [])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow(["" if r[c] is None else (r[c] if c == "iter" else repr(float(r[c]))) for c in cols])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> CurveLog:
        log = cls()
        for r in csv.DictReader(io.StringIO(text)):
            opt = lambda k: float(r[k]) if r.get(k) not in (None, "") else None  # noqa: E731
            log.append(int(r["iter"]), float(r["train_ppl"]), float(r["lr"]), opt("acc1"), opt("acc20"))
        return log


def log_curves(curves: CurveLog, path: str | Path) -> None:
    atomic_write_text(path, curves.to_csv())


@dataclass
class TrainResult:
    best_params: ParameterSet
    ledger: SnapshotLedger
    curves: CurveLog
    initial_params: ParameterSet
    final_params: ParameterSet
    train_size: int
    data_access: dict[str, int]
    best_checkpoint: str | None = None


# -- data -----------------------------------------------------------------------------


def encode_samples(samples: Sequence[ReactionSample], vocab: Vocabulary, max_seq_len: int):
    """Token-id pairs; samples too long for the model are dropped with a warning."""
    pairs, dropped = [], 0
    for s in samples:
        src, tgt = vocab.encode(s.product), vocab.encode(s.reactants)
        if len(src) > max_seq_len or len(tgt) + 1 > max_seq_len:
            dropped += 1
            continue
        pairs.append((src, tgt))
    if dropped:
        logger.warning("dropped %d samples longer than max_seq_len=%d", dropped, max_seq_len)
    return pairs


def token_batches(pairs, batch_tokens: int, rng: random.Random | None = None) -> list[list[int]]:
    """Index batches whose padded size (rows x longest side) stays within ``batch_tokens``.

    Indices are shuffled by ``rng`` (if given) and then stably sorted by length, so
    equal-length samples mix across epochs; the batch order is shuffled again.
    """
    idx = list(range(len(pairs)))
    if rng is not None:
        rng.shuffle(idx)
    idx.sort(key=lambda i: (len(pairs[i][0]), len(pairs[i][1])))
    batches, cur, longest = [], [], 0
    for i in idx:
        need = max(len(pairs[i][0]), len(pairs[i][1]) + 1)
        if cur and max(longest, need) * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, longest = [], 0
        cur.append(i)
        longest = max(longest, need)
    if cur:
        batches.append(cur)
    if rng is not None:
        rng.shuffle(batches)
    return batches


def _eval_batches(pairs, batch_tokens: int) -> list[Batch]:
    return [make_batch([pairs[i] for i in b]) for b in token_batches(pairs, batch_tokens)]


def validate_perplexity(
    params: ParameterSet, cfg: ModelConfig, vocab: Vocabulary, samples: Sequence[ReactionSample],
    batch_tokens: int = 4096,
) -> float:
    pairs = encode_samples(samples, vocab, cfg.max_seq_len)
    if not pairs:
        raise EmptyDataset("validation set is empty")
    return evaluate_nll(params, cfg, _eval_batches(pairs, batch_tokens)).perplexity


def test_accuracy(
    params: ParameterSet, cfg: ModelConfig, vocab: Vocabulary, samples: Sequence[ReactionSample],
    k: int, ns: Sequence[int], max_len: int | None = None,
) -> dict[int, float]:
    max_len = max_len or cfg.max_seq_len
    hits = {n: 0 for n in ns}
    for s in samples:
        res = beam_search(params, cfg, vocab.encode(s.product), k, max_len, vocab)
        rank = first_match_rank(res.texts(), s)
        for n in ns:
            hits[n] += rank is not None and rank <= n
    return {n: hits[n] / len(samples) for n in ns}


# -- core loop ------------------------------------------------------------------------


def _train_loop(
    run: TrainRunConfig,
    vocab: Vocabulary,
    train_sets: dict[str, Sequence[ReactionSample]],
    val: Sequence[ReactionSample],
    test: Sequence[ReactionSample] = (),
    init: ParameterSet | None = None,
) -> TrainResult:
    run.validate()
    cfg = run.model
    if cfg.vocab_size != len(vocab):
        raise TrainError(f"model vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}")
    train = []
    for part in train_sets.values():
        train = concat_splits(train, part)
    if not train:
        raise EmptyDataset("training set is empty")
    if not val:
        raise EmptyDataset("validation set is empty")
    schedule = run.effective_schedule()
    torch.manual_seed(run.seed)
    rng = random.Random(run.seed)
    pairs = encode_samples(train, vocab, cfg.max_seq_len)
    val_batches = _eval_batches(encode_samples(val, vocab, cfg.max_seq_len), 4096)
    test_samples = list(test)[: run.test_samples or None] if run.test_interval else []

    params = init.clone() if init is not None else init_params(cfg, run.seed)
    initial = params.clone()
    state = AdamState(run.adam_betas[0], run.adam_betas[1], run.adam_eps, schedule.peak_lr)
    ledger, curves = SnapshotLedger(), CurveLog()
    out_dir = Path(run.out_dir) if run.out_dir else None
    best_path = str(out_dir / "best.ckpt") if out_dir else None
    best = params.clone()

    queue: list[list[int]] = []
    nll_sum, tok_sum = 0.0, 0
    for it in range(run.iterations):
        if not queue:
            queue = token_batches(pairs, run.batch_tokens, rng)
        batch = make_batch([pairs[i] for i in queue.pop()])
        lr = schedule.lr(it)
        loss, grads = loss_and_grad(params, cfg, batch, train=True)
        for g in grads.values():
            g.div_(loss.token_count)
        clip_grad_norm(grads, run.clip_norm)
        params, state = adam_step(params, grads, state, lr)
        nll_sum += loss.total
        tok_sum += loss.token_count
        step = it + 1
        if step % run.valid_interval == 0 or step == run.iterations:
            val_ppl = evaluate_nll(params, cfg, val_batches).perplexity
            is_best = ledger.record(step, val_ppl, None)
            if is_best:
                best = params.clone()
                if best_path:
                    # no strategy tag: a degenerate joint or self run must equal single byte for byte
                    save_checkpoint(best, cfg, vocab, best_path, meta={"iter": step})
                    ledger.entries[-1] = (step, val_ppl, best_path)
            acc1 = acc20 = None
            if test_samples and step % run.test_interval == 0:
                acc = test_accuracy(params, cfg, vocab, test_samples, run.test_k, (1, run.test_k))
                acc1, acc20 = acc[1], acc[run.test_k]
            curves.append(step, math.exp(nll_sum / tok_sum), lr, acc1, acc20)
            nll_sum, tok_sum = 0.0, 0
            logger.info("%s it=%d lr=%.2e train_ppl=%.4f val_ppl=%.4f%s", run.strategy, step, lr,
                        curves.rows[-1]["train_ppl"], val_ppl, " *" if is_best else "")

    if out_dir:
        atomic_write_text(out_dir / "ledger.txt", ledger.to_text())
        atomic_write_text(out_dir / "ledger.json", ledger.to_json())
        log_curves(curves, out_dir / "curves.csv")
    access = {role: len(part) for role, part in train_sets.items()}
    return TrainResult(best, ledger, curves, initial, params, len(train), access, best_path)


# -- regimes --------------------------------------------------------------------------


def _require(run: TrainRunConfig, strategy: str) -> TrainRunConfig:
    if run.strategy != strategy:
        raise TrainError(f"run config strategy is {run.strategy!r}, expected {strategy!r}")
    return run


def train_single(run: TrainRunConfig, target: DatasetSplit, vocab: Vocabulary) -> TrainResult:
    _require(run, "single")
    return _train_loop(run, vocab, {"target": target.train}, target.val, target.test)


def _check_leaks(augment_train: Sequence[ReactionSample], target: DatasetSplit) -> None:
    leaks = leaked_products(list(augment_train), target)
    if leaks:
        raise LeakDetected(f"{len(leaks)} augment products also occur in the target corpus; cleanse first")


def train_joint(run: TrainRunConfig, target: DatasetSplit, augment: DatasetSplit, vocab: Vocabulary) -> TrainResult:
    _require(run, "joint")
    _check_leaks(augment.train, target)
    return _train_loop(run, vocab, {"target": target.train, "augment": augment.train}, target.val, target.test)


def pseudo_label(
    params: ParameterSet | Checkpoint | str | Path,
    augment: Sequence[ReactionSample | str],
    cfg: ModelConfig | None = None,
    vocab: Vocabulary | None = None,
    max_len: int | None = None,
) -> list[ReactionSample]:
    """Relabel augment products with greedy decodes of a base model.

    Decodes are kept verbatim even when they are not valid SMILES; decodes cut off at
    ``max_len`` are kept truncated and counted in the log.
    """
    if isinstance(params, (str, Path)):
        params = load_checkpoint(params)
    if isinstance(params, Checkpoint):
        cfg, vocab, params = params.config, params.vocab, params.params
    if cfg is None or vocab is None:
        raise TrainError("pseudo_label needs a model config and vocabulary")
    products = [a if isinstance(a, str) else a.product for a in augment]
    labels = [None if isinstance(a, str) else a.class_label for a in augment]
    decoded = greedy_decode(params, cfg, [vocab.encode(p)[: cfg.max_seq_len] for p in products],
                            max_len or cfg.max_seq_len - 1)
    truncated = sum(t for _, t in decoded)
    if truncated:
        logger.warning("pseudo_label: %d of %d decodes hit the length limit", truncated, len(decoded))
    return [ReactionSample(p, vocab.decode(ids), lab) for p, (ids, _), lab in zip(products, decoded, labels)]


def train_self(run: TrainRunConfig, target: DatasetSplit, pseudo_augment: Sequence[ReactionSample],
               vocab: Vocabulary) -> TrainResult:
    _require(run, "self")
    _check_leaks(pseudo_augment, target)
    return _train_loop(run, vocab, {"target": target.train, "pseudo": list(pseudo_augment)}, target.val, target.test)


def pretrain(run: TrainRunConfig, augment: DatasetSplit, vocab: Vocabulary) -> TrainResult:
    _require(run, "pretrain")
    return _train_loop(run, vocab, {"augment": augment.train}, augment.val, augment.test)


def finetune(run: TrainRunConfig, init: Checkpoint | str | Path, target: DatasetSplit,
             vocab: Vocabulary | None = None) -> TrainResult:
    """Continue training on the target corpus from a pre-trained checkpoint with fresh Adam moments."""
    _require(run, "finetune")
    ckpt = init if isinstance(init, Checkpoint) else load_checkpoint(init, expect_config=run.model)
    if ckpt.config != run.model:
        from .model import VersionMismatch

        raise VersionMismatch("pre-trained checkpoint config differs from the fine-tune config")
    vocab = vocab or ckpt.vocab
    if vocab != ckpt.vocab:
        raise TrainError("fine-tune vocabulary differs from the checkpoint vocabulary")
    return _train_loop(run, vocab, {"target": target.train}, target.val, target.test, init=ckpt.params)


def run_strategy(run: TrainRunConfig, vocab: Vocabulary, target: DatasetSplit | None = None,
                 augment: DatasetSplit | None = None, pseudo: Sequence[ReactionSample] | None = None) -> TrainResult:
    """Dispatch on ``run.strategy`` with the datasets that strategy needs."""
    if run.strategy == "single":
        return train_single(run, target, vocab)
    if run.strategy == "joint":
        return train_joint(run, target, augment, vocab)
    if run.strategy == "self":
        return train_self(run, target, pseudo or [], vocab)
    if run.strategy == "pretrain":
        return pretrain(run, augment, vocab)
    if run.strategy == "finetune":
        return finetune(run, run.init_checkpoint, target, vocab)
    raise TrainError(f"unknown strategy {run.strategy!r}")


def with_strategy(run: TrainRunConfig, strategy: str, **changes) -> TrainRunConfig:
    return replace(run, strategy=strategy, **changes)
