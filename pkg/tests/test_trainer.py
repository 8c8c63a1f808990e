import random

import pytest
import torch

from retrotransfer.dataset import DatasetSplit, ReactionSample
from retrotransfer.model import (
    ModelConfig,
    ParameterSet,
    VersionMismatch,
    Vocabulary,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from retrotransfer.optim import ScheduleState
from retrotransfer.trainer import (
    CurveLog,
    EmptyDataset,
    LeakDetected,
    SnapshotLedger,
    TrainError,
    TrainRunConfig,
    finetune,
    pretrain,
    pseudo_label,
    token_batches,
    train_joint,
    train_self,
    train_single,
    validate_perplexity,
)

ATOMS = ["C", "N", "O", "S", "Cl", "F"]


def chain(rng, n):
    return "C" + "".join(rng.choice(ATOMS[:4]) for _ in range(n))


def toy_samples(rng, n, prefix=""):
    out = []
    seen = set()
    while len(out) < n:
        a, b = chain(rng, rng.randint(1, 4)), chain(rng, rng.randint(1, 4))
        product = prefix + a + b
        if product in seen:
            continue
        seen.add(product)
        out.append(ReactionSample(product, f"{a}.{b}", "RX_1"))
    return out


@pytest.fixture(scope="module")
def corpora():
    rng = random.Random(0)
    t = toy_samples(rng, 60)
    target = DatasetSplit("target", t[:40], t[40:50], t[50:])
    a = toy_samples(rng, 60, prefix="CC")
    a = [s for s in a if s.product not in {x.product for x in t}]
    augment = DatasetSplit("augment", a[:40], a[40:50], a[50:])
    texts = [s.product for s in t + a] + [s.reactants for s in t + a]
    vocab = Vocabulary.build(texts)
    return target, augment, vocab


def run_cfg(vocab, strategy="single", iterations=12, **kw):
    model = ModelConfig(vocab_size=len(vocab), num_layers=1, model_dim=16, num_heads=2, ffn_dim=32,
                        max_seq_len=24, dropout_rate=0.1)
    kw.setdefault("schedule", ScheduleState("cyclic", 2, 3e-3, 1e-5, 5))
    return TrainRunConfig(strategy, model, iterations=iterations, batch_tokens=200, valid_interval=4, seed=5, **kw)


def test_ledger_best_breaks_ties_by_earliest():
    led = SnapshotLedger()
    assert led.best is None
    for it, ppl in [(100, 3.0), (200, 2.0), (300, 2.5), (400, 2.0)]:
        led.record(it, ppl)
    assert led.best == (200, 2.0, None)
    assert "  *" in led.to_text().splitlines()[2]


def test_curves_strictly_increasing_and_csv():
    log = CurveLog()
    log.append(10, 5.0, 1e-3)
    log.append(20, 4.0, 1e-3, 0.1, 0.5)
    with pytest.raises(TrainError):
        log.append(20, 3.0, 1e-3)
    text = log.to_csv()
    assert text.splitlines()[0] == "iter,train_ppl,lr,acc1,acc20"
    assert CurveLog.from_csv(text).rows == log.rows


def test_token_batches_respect_budget():
    rng = random.Random(1)
    pairs = [([4] * rng.randint(1, 9), [5] * rng.randint(1, 9)) for _ in range(50)]
    batches = token_batches(pairs, 30, random.Random(2))
    assert sorted(i for b in batches for i in b) == list(range(50))
    for b in batches:
        longest = max(max(len(pairs[i][0]), len(pairs[i][1]) + 1) for i in b)
        assert longest * len(b) <= 30 or len(b) == 1


def test_joint_with_empty_augment_is_single(corpora):
    target, _, vocab = corpora
    single = train_single(run_cfg(vocab), target, vocab)
    joint = train_joint(run_cfg(vocab, "joint"), target, DatasetSplit("augment", [], [], []), vocab)
    selfr = train_self(run_cfg(vocab, "self"), target, [], vocab)
    assert joint.best_params.equal(single.best_params) and joint.final_params.equal(single.final_params)
    assert selfr.best_params.equal(single.best_params)
    assert joint.ledger.entries == single.ledger.entries


def test_data_access_audit(corpora):
    target, augment, vocab = corpora
    single = train_single(run_cfg(vocab, iterations=2), target, vocab)
    joint = train_joint(run_cfg(vocab, "joint", iterations=2), target, augment, vocab)
    pre = pretrain(run_cfg(vocab, "pretrain", iterations=2), augment, vocab)
    assert single.data_access == {"target": 40}
    assert joint.data_access == {"target": 40, "augment": 40} and joint.train_size == 80
    assert pre.data_access == {"augment": 40}


def test_joint_refuses_leaks(corpora):
    target, augment, vocab = corpora
    leaky = DatasetSplit("augment", augment.train + [target.test[0]], [], [])
    with pytest.raises(LeakDetected):
        train_joint(run_cfg(vocab, "joint"), target, leaky, vocab)


def test_empty_target_rejected(corpora):
    _, _, vocab = corpora
    with pytest.raises(EmptyDataset):
        train_single(run_cfg(vocab), DatasetSplit("t", [], [], []), vocab)


def test_determinism_and_files(corpora, tmp_path):
    target, _, vocab = corpora
    a = train_single(run_cfg(vocab, out_dir=str(tmp_path / "a")), target, vocab)
    b = train_single(run_cfg(vocab, out_dir=str(tmp_path / "b")), target, vocab)
    assert a.best_params.equal(b.best_params)
    for name in ("best.ckpt", "curves.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = (tmp_path / "a" / "curves.csv").read_text().splitlines()
    assert rows[0] == "iter,train_ppl,lr" and [int(r.split(",")[0]) for r in rows[1:]] == [4, 8, 12]
    assert load_checkpoint(a.best_checkpoint).params.equal(a.best_params)


def test_curve_rows_follow_validation_interval(corpora):
    target, _, vocab = corpora
    run = TrainRunConfig("single", run_cfg(vocab).model, iterations=30, batch_tokens=200, valid_interval=10)
    res = train_single(run, target, vocab)
    assert [r["iter"] for r in res.curves.rows] == [10, 20, 30]
    assert len(res.ledger.entries) == 3


def test_test_accuracy_columns(corpora):
    target, _, vocab = corpora
    res = train_single(run_cfg(vocab, test_interval=4, test_k=3, test_samples=3), target, vocab)
    assert res.curves.has_test_columns()
    assert all(0 <= r["acc1"] <= r["acc20"] <= 1 for r in res.curves.rows)


def test_finetune_starts_from_checkpoint(corpora, tmp_path):
    target, augment, vocab = corpora
    pre = pretrain(run_cfg(vocab, "pretrain", out_dir=str(tmp_path / "pre")), augment, vocab)
    ft_run = run_cfg(vocab, "finetune", init_checkpoint=pre.best_checkpoint,
                     schedule=ScheduleState("inverse_sqrt", 3, 1e-3))
    ft = finetune(ft_run, pre.best_checkpoint, target, vocab)
    assert ft.initial_params.equal(load_checkpoint(pre.best_checkpoint).params)
    assert not ft.final_params.equal(ft.initial_params)
    assert ft.data_access == {"target": 40}


def test_finetune_config_mismatch(corpora, tmp_path):
    target, _, vocab = corpora
    run = run_cfg(vocab, "finetune", init_checkpoint="x")
    other = ModelConfig(vocab_size=len(vocab), num_layers=1, model_dim=16, num_heads=2, ffn_dim=64,
                        max_seq_len=24)
    save_checkpoint(init_params(other, 0), other, vocab, tmp_path / "o.ckpt")
    with pytest.raises(VersionMismatch):
        finetune(run, tmp_path / "o.ckpt", target, vocab)


def test_finetune_needs_checkpoint(corpora):
    _, _, vocab = corpora
    with pytest.raises(TrainError, match="init_checkpoint"):
        run_cfg(vocab, "finetune").validate()


def test_uniform_validation_perplexity(corpora):
    target, _, vocab = corpora
    cfg = run_cfg(vocab).model
    zero = ParameterSet({k: torch.zeros_like(v) for k, v in init_params(cfg, 0).tensors.items()})
    assert validate_perplexity(zero, cfg, vocab, target.val) == pytest.approx(len(vocab), abs=1e-4)


def test_pseudo_label_shape_and_determinism(corpora, tmp_path):
    target, augment, vocab = corpora
    res = train_single(run_cfg(vocab, out_dir=str(tmp_path)), target, vocab)
    products = [s.product for s in augment.train]
    a = pseudo_label(res.best_checkpoint, augment.train)
    b = pseudo_label(res.best_params, products, run_cfg(vocab).model, vocab)
    assert len(a) == len(products) and [s.product for s in a] == products
    assert [s.reactants for s in a] == [s.reactants for s in b]
    with pytest.raises(TrainError):
        pseudo_label(res.best_params, products)
