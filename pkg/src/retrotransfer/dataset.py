"""Reaction corpora: loading, leak cleansing, splitting and a synthetic generator."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .smiles import SmilesError, canonical_reactant_set, canonicalize
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

SPLIT_PARTS = ("train", "val", "test")


class DatasetError(Exception):
    pass


class FormatError(DatasetError):
    pass


class TooFewSamples(DatasetError):
    pass


class ConfigError(DatasetError):
    pass


@dataclass(frozen=True)
class ReactionSample:
    product: str
    reactants: str
    class_label: str | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.product, self.reactants)

    def to_line(self) -> str:
        line = f"{self.reactants}>>{self.product}"
        return f"{line}\t{self.class_label}" if self.class_label else line


@dataclass
class DatasetSplit:
    name: str
    train: list[ReactionSample] = field(default_factory=list)
    val: list[ReactionSample] = field(default_factory=list)
    test: list[ReactionSample] = field(default_factory=list)

    def parts(self) -> dict[str, list[ReactionSample]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def products(self) -> set[str]:
        return {s.product for part in (self.train, self.val, self.test) for s in part}


@dataclass
class CleanseReport:
    input_count: int
    removed_count: int
    output_count: int
    removed_products: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"input_count: {self.input_count}",
            f"removed_count: {self.removed_count}",
            f"output_count: {self.output_count}",
        ]
        lines += [f"removed_product: {p}" for p in self.removed_products]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def parse_reaction_line(line: str, raw_reactants: bool = False) -> ReactionSample:
    """Parse ``reactants>>product`` or ``reactants>reagents>product`` with optional tab-separated class.

    ``raw_reactants`` keeps the reactant side verbatim (possibly empty or not valid SMILES),
    which is how pseudo-labeled files store model decodes.
    """
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) > 2:
        raise FormatError(f"too many tab-separated fields in {line!r}")
    rxn = fields[0].strip()
    label = fields[1].strip() if len(fields) == 2 and fields[1].strip() else None
    sides = rxn.split(">")
    if len(sides) != 3:
        raise FormatError(f"not a reaction SMILES: {rxn!r}")
    reactants, _reagents, product = sides
    if not product or not (reactants or raw_reactants):
        raise FormatError(f"missing reactants or product in {rxn!r}")
    try:
        prod = canonicalize(product)
        reac = reactants if raw_reactants else canonical_reactant_set(reactants.split("."))
    except SmilesError as exc:
        raise FormatError(str(exc)) from exc
    return ReactionSample(prod, reac, label)


def read_reaction_file(
    path: str | Path, raw_reactants: bool = False
) -> tuple[list[ReactionSample], list[tuple[int, str]]]:
    """Return the parsed samples and a list of ``(line_number, reason)`` for malformed lines."""
    samples: list[ReactionSample] = []
    malformed: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(parse_reaction_line(line, raw_reactants))
            except FormatError as exc:
                malformed.append((lineno, str(exc)))
    return samples, malformed


def load_reactions(
    path: str | Path, max_malformed_fraction: float = 0.05, raw_reactants: bool = False
) -> list[ReactionSample]:
    samples, malformed = read_reaction_file(path, raw_reactants)
    total = len(samples) + len(malformed)
    for lineno, reason in malformed:
        logger.warning("%s:%d: skipped malformed line (%s)", path, lineno, reason)
    if total and len(malformed) / total > max_malformed_fraction:
        raise FormatError(
            f"{path}: {len(malformed)} of {total} lines malformed "
            f"(limit {max_malformed_fraction:.0%})"
        )
    return samples


def save_reactions(samples: Iterable[ReactionSample], path: str | Path) -> None:
    atomic_write_text(path, "".join(s.to_line() + "\n" for s in samples))


def load_split(directory: str | Path, name: str) -> DatasetSplit:
    d = Path(directory)
    parts = {}
    for part in SPLIT_PARTS:
        p = d / f"{part}.rsmi"
        parts[part] = load_reactions(p) if p.exists() else []
    return DatasetSplit(name, **parts)


def save_split(split: DatasetSplit, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for part, samples in split.parts().items():
        save_reactions(samples, d / f"{part}.rsmi")


def cleanse_overlap(
    augment_train: list[ReactionSample], target: DatasetSplit
) -> tuple[list[ReactionSample], CleanseReport]:
    """Drop augment samples whose canonical product occurs anywhere in the target corpus."""
    banned = target.products()
    kept, removed = [], []
    for s in augment_train:
        (removed if s.product in banned else kept).append(s)
    removed_products = list(dict.fromkeys(s.product for s in removed))
    report = CleanseReport(len(augment_train), len(removed), len(kept), removed_products)
    return kept, report


def leaked_products(augment_train: list[ReactionSample], target: DatasetSplit) -> set[str]:
    return {s.product for s in augment_train} & target.products()


def split_dataset(
    samples: list[ReactionSample],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    name: str = "target",
) -> DatasetSplit:
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    unique = list({s.key: s for s in reversed(samples)}.values())[::-1]
    if len(unique) < len(samples):
        logger.info("split_dataset: dropped %d duplicate samples", len(samples) - len(unique))
    n = len(unique)
    n_train = round(fractions[0] * n)
    n_val = round(fractions[1] * n)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise TooFewSamples(f"{n} samples cannot fill a {fractions} split")
    shuffled = list(unique)
    random.Random(seed).shuffle(shuffled)
    return DatasetSplit(
        name,
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def concat_splits(a: list[ReactionSample], b: list[ReactionSample]) -> list[ReactionSample]:
    return list(a) + list(b)


# -- synthetic corpora ----------------------------------------------------------
#
# Fragments are written with their attachment atom first, so a functional group
# can be prefixed ("O" + "CC" -> ethanol) or a fragment dropped into a branch.

_SUBSTITUENTS = ["C", "CC", "F", "Cl", "Br", "OC", "C#N", "C(F)(F)F", "OCC", "C(C)C"]
_ALKYL = [
    "C", "CC", "CCC", "C(C)C", "CCCC", "CC(C)C", "C(C)CC", "C(C)(C)C", "CCCCC",
    "CCC(C)C", "CCOC", "CCOCC", "CCN(C)C", "CCSC", "CC#N", "CCF", "CC(F)(F)F",
    "C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "CC1CC1", "CC1CCCC1", "CC1CCCCC1",
    "C1CCOC1", "C1CCOCC1", "C1CCN(C)CC1", "Cc1ccccc1", "CCc1ccccc1", "Cc1ccco1",
    "Cc1cccs1", "Cc1ccncc1", "CC=C", "CC#C", "CCCO", "CCCOC", "C(C)c1ccccc1",
]
_RINGS = [
    "c1ccccc1", "c1ccncc1", "c1cccnc1", "c1ccco1", "c1cccs1", "c1ccc2ccccc2c1",
    "c1cnccn1", "c1ccc2occc2c1",
]


def _build_fragments() -> list[str]:
    frags = list(_ALKYL) + list(_RINGS)
    for sub in _SUBSTITUENTS:
        frags.append(f"c1ccc({sub})cc1")
        frags.append(f"c1cccc({sub})c1")
        frags.append(f"c1ccccc1{sub}")
    for sub in _SUBSTITUENTS[:6]:
        frags.append(f"c1ccc({sub})nc1")
        frags.append(f"C1CCC({sub})CC1")
    return frags


FRAGMENTS: tuple[str, ...] = tuple(_build_fragments())

# template id -> (name, reactant builders, product builder)
TEMPLATES: dict[int, tuple[str, tuple, object]] = {
    1: ("ester", (lambda a: "O" + a, lambda b: "OC(=O)" + b), lambda a, b: f"C(=O)({b})O{a}"),
    2: ("amide", (lambda a: "N" + a, lambda b: "OC(=O)" + b), lambda a, b: f"C(=O)({b})N{a}"),
    3: ("ether", (lambda a: "O" + a, lambda b: "Br" + b), lambda a, b: f"O({a}){b}"),
    4: ("n_alkylation", (lambda a: "N" + a, lambda b: "Cl" + b), lambda a, b: f"N({a}){b}"),
    5: ("sulfonamide", (lambda a: "N" + a, lambda b: "ClS(=O)(=O)" + b), lambda a, b: f"S(=O)(=O)({b})N{a}"),
    6: ("thioether", (lambda a: "S" + a, lambda b: "Br" + b), lambda a, b: f"S({a}){b}"),
    7: ("boc_deprotection", (lambda a: "CC(C)(C)OC(=O)N" + a,), lambda a: "N" + a),
    8: ("ester_hydrolysis", (lambda a: "COC(=O)" + a,), lambda a: "OC(=O)" + a),
}


def apply_template(template_id: int, fragments: tuple[str, ...]) -> ReactionSample:
    """Build the canonical sample for one template instantiation."""
    _, reactant_fns, product_fn = TEMPLATES[template_id]
    if len(fragments) != len(reactant_fns):
        raise ConfigError(f"template {template_id} takes {len(reactant_fns)} fragments")
    reactants = [fn(f) for fn, f in zip(reactant_fns, fragments)]
    product = product_fn(*fragments)
    return ReactionSample(canonicalize(product), canonical_reactant_set(reactants), f"RX_{template_id}")


@dataclass
class SynthConfig:
    target_templates: tuple[int, ...] = (1, 2)
    augment_templates: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    target_counts: tuple[int, int, int] = (2000, 250, 250)
    augment_counts: tuple[int, int, int] = (20000, 1000, 1000)
    inject_overlap: int = 0
    seed: int = 0
    # target draws use only the first ``target_fragments`` fragments (0: all of them)
    target_fragments: int = 45
    # fraction of augment samples drawn from the target templates
    augment_target_share: float = 0.06

    def validate(self) -> None:
        for ids in (self.target_templates, self.augment_templates):
            if not ids or any(t not in TEMPLATES for t in ids):
                raise ConfigError(f"unknown template ids in {ids}")
        if not set(self.target_templates) <= set(self.augment_templates):
            raise ConfigError("target templates must be a subset of augment templates")
        for counts in (self.target_counts, self.augment_counts):
            if len(counts) != 3 or any(c <= 0 for c in counts):
                raise ConfigError(f"split counts must be three positive integers, got {counts}")
        if not 0 <= self.inject_overlap <= self.augment_counts[0]:
            raise ConfigError("inject_overlap must lie in [0, augment train count]")
        if not 0 <= self.target_fragments <= len(FRAGMENTS):
            raise ConfigError(f"target_fragments must lie in [0, {len(FRAGMENTS)}]")
        if not 0.0 <= self.augment_target_share <= 1.0:
            raise ConfigError("augment_target_share must lie in [0, 1]")
        if self.augment_target_share < 1 and not set(self.augment_templates) - set(self.target_templates):
            raise ConfigError("augment_target_share < 1 needs augment templates outside the target set")


def _draw(
    rng: random.Random,
    templates: tuple[int, ...],
    count: int,
    exclude: set,
    pool: tuple[str, ...] | None = None,
) -> list[ReactionSample]:
    pool = FRAGMENTS if pool is None else pool
    out: list[ReactionSample] = []
    seen = set(exclude)
    capacity = sum(len(pool) ** len(TEMPLATES[t][1]) for t in templates)
    if count > capacity - len(exclude):
        raise ConfigError(f"cannot draw {count} distinct samples from templates {templates}")
    while len(out) < count:
        t = rng.choice(templates)
        frags = tuple(rng.choice(pool) for _ in TEMPLATES[t][1])
        sample = apply_template(t, frags)
        if sample.key in seen:
            continue
        seen.add(sample.key)
        out.append(sample)
    return out


def synth_generate(cfg: SynthConfig) -> tuple[DatasetSplit, DatasetSplit]:
    """Deterministic toy target/augment corpora with a template-level distribution shift.

    The target corpus uses only ``cfg.target_templates`` over a reduced fragment pool. The
    augment corpus draws ``augment_target_share`` of its samples from the target templates over
    that same pool, and the rest from the other templates over the full pool. With ``inject_overlap`` > 0 that
    many augment training samples reuse a target product, which is what cleansing must catch.
    """
    cfg.validate()
    rng = random.Random(cfg.seed)
    n_target = sum(cfg.target_counts)
    pool = FRAGMENTS[: cfg.target_fragments] if cfg.target_fragments else FRAGMENTS
    target_all = _draw(rng, cfg.target_templates, n_target, set(), pool)
    a, b, _ = cfg.target_counts
    target = DatasetSplit("target", target_all[:a], target_all[a : a + b], target_all[a + b :])

    n_fresh = sum(cfg.augment_counts) - cfg.inject_overlap
    n_near = round(cfg.augment_target_share * n_fresh)
    others = tuple(t for t in cfg.augment_templates if t not in cfg.target_templates)
    taken = {s.key for s in target_all}
    near = _draw(rng, cfg.target_templates, n_near, taken, pool)
    far = _draw(rng, others, n_fresh - n_near, taken) if n_fresh > n_near else []
    augment_all = near + far
    rng.shuffle(augment_all)
    injected = [rng.choice(target_all) for _ in range(cfg.inject_overlap)]
    a, b, _ = cfg.augment_counts
    train = augment_all[: a - cfg.inject_overlap] + injected
    rng.shuffle(train)
    rest = augment_all[a - cfg.inject_overlap :]
    augment = DatasetSplit("augment", train, rest[:b], rest[b:])
    return target, augment
