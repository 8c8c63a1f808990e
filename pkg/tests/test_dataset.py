import json

import pytest

from retrotransfer.dataset import (
    FRAGMENTS,
    ConfigError,
    FormatError,
    ReactionSample,
    SynthConfig,
    TooFewSamples,
    DatasetSplit,
    apply_template,
    cleanse_overlap,
    concat_splits,
    leaked_products,
    load_reactions,
    load_split,
    parse_reaction_line,
    read_reaction_file,
    save_reactions,
    save_split,
    split_dataset,
    synth_generate,
)
from retrotransfer.smiles import canonicalize


def _sample(product, reactants="CC", label=None):
    return ReactionSample(canonicalize(product), canonicalize(reactants), label)


def test_parse_line_canonicalizes_each_side():
    s = parse_reaction_line("CC(=O)O.OCC>>CCOC(C)=O\tRX_2")
    assert (s.product, s.reactants, s.class_label) == ("CCOC(C)=O", "CC(=O)O.CCO", "RX_2")


def test_self_identical_line_is_loaded(tmp_path):
    p = tmp_path / "a.rsmi"
    p.write_text("CCO>>CCO\n")
    (s,) = load_reactions(p)
    assert s.product == s.reactants == "CCO"


def test_empty_file(tmp_path):
    p = tmp_path / "e.rsmi"
    p.write_text("")
    assert read_reaction_file(p) == ([], [])


def test_malformed_lines_reported(tmp_path):
    p = tmp_path / "m.rsmi"
    p.write_text("CCO>>CC\nnot a reaction\nC1CC>>CC\n" + "CC>>C\n" * 3)
    samples, bad = read_reaction_file(p)
    assert len(samples) == 4 and [n for n, _ in bad] == [2, 3]
    with pytest.raises(FormatError):
        load_reactions(p, max_malformed_fraction=0.05)


def test_cleanse_canonical_collision():
    target = DatasetSplit("t", [], [], [_sample("CCO")])
    kept, rep = cleanse_overlap([_sample("OCC"), _sample("CCC")], target)
    assert [s.product for s in kept] == ["CCC"]
    assert (rep.input_count, rep.removed_count, rep.output_count) == (2, 1, 1)


def test_cleanse_counts():
    target = DatasetSplit("t", [_sample("CCN")], [_sample("CCS")], [_sample("CCF")])
    augment = [_sample(p) for p in ["CCN", "CCS", "CCF", "CCCl", "CCBr", "CCCC", "CO", "CN", "CS", "CF"]]
    kept, rep = cleanse_overlap(augment, target)
    assert (rep.input_count, rep.removed_count, rep.output_count) == (10, 3, 7)
    assert len(kept) == 7 and not leaked_products(kept, target)
    assert json.loads(rep.to_json())["removed_count"] == 3
    assert "input_count: 10" in rep.to_text()


def test_split_sizes_and_determinism():
    samples = [_sample("C" * (i + 1), "C") for i in range(100)]
    a = split_dataset(samples, (0.8, 0.1, 0.1), seed=3)
    b = split_dataset(samples, (0.8, 0.1, 0.1), seed=3)
    assert [len(p) for p in a.parts().values()] == [80, 10, 10]
    assert a == b


def test_split_too_few():
    with pytest.raises(TooFewSamples):
        split_dataset([_sample("C"), _sample("CC")], (0.8, 0.1, 0.1))


def test_concat():
    a = [_sample("C")]
    assert concat_splits(a, []) == a
    assert concat_splits([], []) == []
    assert len(concat_splits(a, a + a)) == 3


def test_ester_template():
    s = apply_template(1, ("CC", "C"))
    assert (s.product, s.reactants, s.class_label) == ("CCOC(C)=O", "CC(=O)O.CCO", "RX_1")


def test_synth_deterministic_and_labels(tmp_path):
    cfg = SynthConfig(target_counts=(60, 10, 10), augment_counts=(200, 20, 20), augment_templates=(1, 2, 3, 4, 5, 6))
    t1, a1 = synth_generate(cfg)
    t2, a2 = synth_generate(cfg)
    assert (t1, a1) == (t2, a2)
    assert {s.class_label for s in t1.train + t1.val + t1.test} <= {"RX_1", "RX_2"}
    for s in t1.train + a1.train:
        assert canonicalize(s.product) == s.product
    save_split(t1, tmp_path / "t")
    assert load_split(tmp_path / "t", "target") == t1


def test_synth_pools_and_share():
    cfg = SynthConfig(target_counts=(80, 10, 10), augment_counts=(300, 50, 50), target_fragments=20,
                      augment_target_share=0.25)
    target, augment = synth_generate(cfg)
    pool = FRAGMENTS[:20]
    allowed = {apply_template(t, (a, b)).key for t in (1, 2) for a in pool for b in pool}
    assert all(s.key in allowed for s in target.train + target.val + target.test)
    every = augment.train + augment.val + augment.test
    near = [s for s in every if s.class_label in ("RX_1", "RX_2")]
    assert len(near) == 100 and all(s.key in allowed for s in near)
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(augment_templates=(1, 2)))
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(augment_target_share=1.5))


def test_injected_overlap_is_cleansed():
    cfg = SynthConfig(target_counts=(60, 10, 10), augment_counts=(200, 20, 20), inject_overlap=15)
    target, augment = synth_generate(cfg)
    assert len(leaked_products(augment.train, target)) > 0
    kept, rep = cleanse_overlap(augment.train, target)
    assert rep.removed_count >= 15 and not leaked_products(kept, target)


def test_raw_reactants_roundtrip(tmp_path):
    pseudo = [ReactionSample("CCO", "C1C(", "RX_3"), ReactionSample("CCN", ""), ReactionSample("CCS", "SCC.C")]
    p = tmp_path / "pseudo.rsmi"
    save_reactions(pseudo, p)
    assert load_reactions(p, raw_reactants=True) == pseudo
    with pytest.raises(FormatError):
        load_reactions(p)
