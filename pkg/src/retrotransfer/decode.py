"""Beam search, greedy decoding, n-best scoring and class-wise reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .dataset import ReactionSample
from .model import BOS, EOS, PAD, IncrementalDecoder, ModelConfig, ParameterSet, Vocabulary
from .smiles import SmilesError, canonical_reactant_set
from .utils import atomic_write_text

DEFAULT_NS = (1, 3, 5, 10, 20, 50)
UNLABELED = "unlabeled"


class BeamTooNarrow(ValueError):
    pass


@dataclass
class Candidate:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool = True
    text: str = ""
    valid: bool = False
    canonical: str | None = None


@dataclass
class BeamResult:
    k: int
    candidates: list[Candidate] = field(default_factory=list)

    def texts(self) -> list[str]:
        return [c.text for c in self.candidates]


def _annotate(cand: Candidate, vocab: Vocabulary | None) -> Candidate:
    if vocab is None:
        return cand
    cand.text = vocab.decode(cand.tokens)
    try:
        cand.canonical = canonical_reactant_set(cand.text.split(".")) if cand.text else None
    except SmilesError:
        cand.canonical = None
    cand.valid = cand.canonical is not None
    return cand


def _rank_order(seqs: list[tuple[int, ...]]) -> np.ndarray:
    order = sorted(range(len(seqs)), key=seqs.__getitem__)
    ranks = np.empty(len(seqs), dtype=np.int64)
    ranks[order] = np.arange(len(seqs))
    return ranks


def beam_search(
    params: ParameterSet,
    cfg: ModelConfig,
    src: Sequence[int],
    k: int,
    max_len: int,
    vocab: Vocabulary | None = None,
) -> BeamResult:
    """Length-wise beam search from BOS ranked by total log-probability.

    Every step keeps the ``k`` best expansions of the live hypotheses (ties broken by
    token-id lexicographic order); expansions ending in EOS are finalized. The search
    ends once ``k`` hypotheses are finalized or after ``max_len`` steps, in which case
    surviving hypotheses are returned flagged ``finished=False``.
    """
    return beam_search_many(params, cfg, [src], k, max_len, vocab)[0]


@torch.no_grad()
def beam_search_many(
    params: ParameterSet,
    cfg: ModelConfig,
    sources: Sequence[Sequence[int]],
    k: int,
    max_len: int,
    vocab: Vocabulary | None = None,
    batch_rows: int = 2048,
) -> list[BeamResult]:
    """``beam_search`` for many sources, sharing decoder steps between them.

    Each source's search is independent of the others; batching only changes speed.
    """
    if k < 1:
        raise ValueError("beam width must be >= 1")
    per_chunk = max(1, batch_rows // k)
    out: list[BeamResult] = []
    for start in range(0, len(sources), per_chunk):
        out.extend(_beam_chunk(params, cfg, sources[start : start + per_chunk], k, min(max_len, cfg.max_seq_len), vocab))
    return out


def _beam_chunk(params, cfg, sources, k, max_len, vocab) -> list[BeamResult]:
    n = len(sources)
    width = max(1, max(len(s) for s in sources))
    src = torch.full((n, width), PAD, dtype=torch.long)
    for i, s in enumerate(sources):
        src[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    dec = IncrementalDecoder(params, cfg, src)
    # live hypotheses per source, laid out contiguously in decoder-row order
    alive: list[list[tuple[int, ...]]] = [[()] for _ in range(n)]
    scores: list[np.ndarray] = [np.zeros(1) for _ in range(n)]
    finished: list[list[Candidate]] = [[] for _ in range(n)]
    last = torch.full((n,), BOS, dtype=torch.long)
    for _ in range(max_len):
        logp_all = dec.step(last).to(torch.float64).numpy()
        logp_all[:, PAD] = -np.inf
        logp_all[:, BOS] = -np.inf
        keep_rows: list[int] = []
        offset = 0
        for i in range(n):
            rows_i = len(alive[i])
            if not rows_i:
                continue
            total = scores[i][:, None] + logp_all[offset : offset + rows_i]
            rows, toks = np.nonzero(np.isfinite(total))
            cand_scores = total[rows, toks]
            row_rank = _rank_order(alive[i])
            order = np.lexsort((toks, row_rank[rows], -cand_scores))[:k]
            new_alive, new_scores = [], []
            for j in order:
                r, t, sc = int(rows[j]), int(toks[j]), float(cand_scores[j])
                if t == EOS:
                    finished[i].append(Candidate(alive[i][r], sc, True))
                else:
                    keep_rows.append(offset + r)
                    new_alive.append(alive[i][r] + (t,))
                    new_scores.append(sc)
            if len(finished[i]) >= k:
                del keep_rows[len(keep_rows) - len(new_alive) :]
                new_alive, new_scores = [], []
            offset += rows_i
            alive[i], scores[i] = new_alive, np.asarray(new_scores, dtype=np.float64)
        if not keep_rows:
            break
        dec.reorder(torch.as_tensor(keep_rows, dtype=torch.long))
        last = torch.as_tensor([seq[-1] for hyps in alive for seq in hyps], dtype=torch.long)
    results = []
    for i in range(n):
        hyps = finished[i] + [Candidate(seq, float(sc), False) for seq, sc in zip(alive[i], scores[i])]
        hyps.sort(key=lambda c: (-c.logprob, c.tokens + ((EOS,) if c.finished else ())))
        results.append(BeamResult(k, [_annotate(c, vocab) for c in hyps[:k]]))
    return results


@torch.no_grad()
def greedy_decode(
    params: ParameterSet,
    cfg: ModelConfig,
    sources: Sequence[Sequence[int]],
    max_len: int,
    batch_size: int = 256,
) -> list[tuple[list[int], bool]]:
    """Argmax decoding for many sources; returns ``(tokens, truncated)`` per source."""
    max_len = min(max_len, cfg.max_seq_len)
    out: list[tuple[list[int], bool]] = []
    for start in range(0, len(sources), batch_size):
        chunk = sources[start : start + batch_size]
        width = max(len(s) for s in chunk)
        src = torch.full((len(chunk), width), PAD, dtype=torch.long)
        for i, s in enumerate(chunk):
            src[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        dec = IncrementalDecoder(params, cfg, src)
        last = torch.full((len(chunk),), BOS, dtype=torch.long)
        seqs: list[list[int]] = [[] for _ in chunk]
        done = [False] * len(chunk)
        for _ in range(max_len):
            logp = dec.step(last)
            logp[:, PAD] = -float("inf")
            logp[:, BOS] = -float("inf")
            nxt = logp.argmax(dim=-1)
            for i, t in enumerate(nxt.tolist()):
                if done[i]:
                    continue
                if t == EOS:
                    done[i] = True
                else:
                    seqs[i].append(t)
            if all(done):
                break
            last = nxt
        out.extend((s, not d) for s, d in zip(seqs, done))
    return out


def match_prediction(candidate: str, gold: ReactionSample | str) -> bool:
    """True iff ``candidate`` parses and its canonical reactant set equals the gold one."""
    gold_set = gold.reactants if isinstance(gold, ReactionSample) else gold
    if not candidate:
        return False
    try:
        return canonical_reactant_set(candidate.split(".")) == gold_set
    except SmilesError:
        return False


def first_match_rank(candidates: Sequence[str], gold: ReactionSample | str) -> int | None:
    """1-based rank of the first matching candidate, or None."""
    for i, cand in enumerate(candidates, start=1):
        if match_prediction(cand, gold):
            return i
    return None


@dataclass
class AccuracyTable:
    accuracy: dict[int, float]
    count: int

    def to_text(self) -> str:
        head = "".join(f"{f'top-{n}':>9}" for n in self.accuracy)
        row = "".join(f"{100 * a:9.1f}" for a in self.accuracy.values())
        return f"{'samples':>8}{head}\n{self.count:>8}{row}\n"

    def to_csv(self) -> str:
        cols = ",".join(f"acc{n}" for n in self.accuracy)
        vals = ",".join(f"{a:.6f}" for a in self.accuracy.values())
        return f"samples,{cols}\n{self.count},{vals}\n"


def _candidate_lists(results) -> list[list[str]]:
    out = []
    for r in results:
        out.append(r.texts() if isinstance(r, BeamResult) else list(r))
    return out


def accuracy_from_ranks(ranks: Sequence[int | None], ns: Iterable[int]) -> AccuracyTable:
    ranks = list(ranks)
    total = len(ranks)
    acc = {n: (sum(1 for r in ranks if r is not None and r <= n) / total if total else 0.0) for n in ns}
    return AccuracyTable(acc, total)


def nbest_accuracy(
    results: Sequence[tuple[BeamResult | Sequence[str], ReactionSample | str]],
    ns: Sequence[int] = DEFAULT_NS,
) -> AccuracyTable:
    ns = sorted(ns)
    for res, _ in results:
        if isinstance(res, BeamResult) and res.k < ns[-1]:
            raise BeamTooNarrow(f"beam width {res.k} < n={ns[-1]}")
    ranks = [first_match_rank(c, gold) for c, (_, gold) in zip(_candidate_lists([r for r, _ in results]), results)]
    return accuracy_from_ranks(ranks, ns)


@dataclass
class ClasswiseReport:
    rows: dict[str, tuple[int, dict[int, float]]]

    def to_text(self) -> str:
        ns = next(iter(self.rows.values()))[1].keys() if self.rows else []
        lines = [f"{'class':<12}{'count':>7}" + "".join(f"{f'top-{n}':>9}" for n in ns)]
        for label, (count, acc) in self.rows.items():
            lines.append(f"{label:<12}{count:>7}" + "".join(f"{100 * a:9.1f}" for a in acc.values()))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        ns = next(iter(self.rows.values()))[1].keys() if self.rows else []
        lines = ["class,count," + ",".join(f"acc{n}" for n in ns)]
        for label, (count, acc) in self.rows.items():
            lines.append(f"{label},{count}," + ",".join(f"{a:.6f}" for a in acc.values()))
        return "\n".join(lines) + "\n"


def _class_sort_key(label: str):
    if label == UNLABELED:
        return (2, 0, label)
    if label.startswith("RX_") and label[3:].isdigit():
        return (0, int(label[3:]), label)
    return (1, 0, label)


def classwise_report(
    results: Sequence[BeamResult | Sequence[str]],
    golds: Sequence[ReactionSample],
    ns: Sequence[int] | int = (50,),
) -> ClasswiseReport:
    ns = [ns] if isinstance(ns, int) else sorted(ns)
    groups: dict[str, list[int | None]] = {}
    for cands, gold in zip(_candidate_lists(results), golds):
        label = gold.class_label or UNLABELED
        groups.setdefault(label, []).append(first_match_rank(cands, gold))
    rows = {}
    for label in sorted(groups, key=_class_sort_key):
        table = accuracy_from_ranks(groups[label], ns)
        rows[label] = (table.count, table.accuracy)
    return ClasswiseReport(rows)


# -- predictions file ----------------------------------------------------------------


@dataclass
class PredictionBlock:
    source: str
    gold: str | None
    candidates: list[tuple[int, float, str, bool, bool]]


def format_predictions(blocks: Iterable[PredictionBlock]) -> str:
    """Serialize predictions: a ``>source[TAB]gold`` line then ``rank logprob cand valid match`` rows."""
    lines = []
    for b in blocks:
        lines.append(f">{b.source}" + (f"\t{b.gold}" if b.gold else ""))
        for rank, lp, cand, valid, match in b.candidates:
            lines.append(f"{rank}\t{lp!r}\t{cand}\tvalid:{int(valid)}\tmatch:{int(match)}")
        lines.append("")
    return "\n".join(lines)


def write_predictions(blocks: Iterable[PredictionBlock], path: str | Path) -> None:
    atomic_write_text(path, format_predictions(blocks))


def read_predictions(path: str | Path) -> list[PredictionBlock]:
    blocks: list[PredictionBlock] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith(">"):
                src, _, gold = line[1:].partition("\t")
                blocks.append(PredictionBlock(src, gold or None, []))
                continue
            if not blocks:
                raise ValueError(f"{path}: candidate line before any source line")
            rank, lp, cand, valid, match = line.split("\t")
            blocks[-1].candidates.append(
                (int(rank), float(lp), cand, valid.endswith("1"), match.endswith("1"))
            )
    return blocks


def prediction_block(source: str, result: BeamResult, gold: ReactionSample | None) -> PredictionBlock:
    rows = []
    for rank, c in enumerate(result.candidates, start=1):
        match = gold is not None and c.valid and c.canonical == gold.reactants
        rows.append((rank, c.logprob, c.text, c.valid, match))
    return PredictionBlock(source, gold.reactants if gold else None, rows)
