"""Shared generators and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import math
import random

import networkx as nx
import torch

from retrotransfer.model import BOS, EOS, ModelConfig, forward, init_params
from retrotransfer.smiles import Atom, BondOrder, MolGraph, neighbor_permutations, parse_smiles, write_smiles

# one "PASS"/"FAIL" line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1}
ELEMENTS = tuple(MAX_VALENCE)


def random_graph(rng: random.Random, max_atoms: int = 8, allow_ring: bool = True) -> MolGraph:
    """Random connected, valence-respecting graph: a tree plus at most one ring bond."""
    n = rng.randint(1, max_atoms)
    while True:
        elems = [rng.choice(ELEMENTS) for _ in range(n)]
        free = [MAX_VALENCE[e] for e in elems]
        bonds: dict[tuple[int, int], int] = {}
        ok = True
        for i in range(1, n):
            parents = [j for j in range(i) if free[j] >= 1]
            if not parents or free[i] < 1:
                ok = False
                break
            j = rng.choice(parents)
            bonds[(j, i)] = 1
            free[i] -= 1
            free[j] -= 1
        if not ok:
            continue
        if allow_ring and n >= 3 and rng.random() < 0.5:
            pairs = [(a, b) for a, b in itertools.combinations(range(n), 2)
                     if (a, b) not in bonds and free[a] >= 1 and free[b] >= 1]
            if pairs:
                a, b = rng.choice(pairs)
                bonds[(a, b)] = 1
                free[a] -= 1
                free[b] -= 1
        for key in list(bonds):
            a, b = key
            extra = min(free[a], free[b], 2)
            if extra and rng.random() < 0.25:
                add = rng.randint(1, extra)
                bonds[key] += add
                free[a] -= add
                free[b] -= add
        atoms = [Atom(e) for e in elems]
        return MolGraph(atoms, [(a, b, BondOrder(o)) for (a, b), o in bonds.items()])


def to_networkx(g: MolGraph) -> nx.Graph:
    """Labelled graph with element, aromaticity, charge and total H count per node."""
    h = g.hydrogen_counts()
    out = nx.Graph()
    for i, a in enumerate(g.atoms):
        out.add_node(i, label=(a.element.capitalize(), a.aromatic, a.formal_charge, h[i], a.isotope))
    for a, b, order in g.bonds:
        out.add_edge(a, b, order=int(order))
    return out


def isomorphic(g1: MolGraph, g2: MolGraph) -> bool:
    return nx.is_isomorphic(
        to_networkx(g1), to_networkx(g2),
        node_match=lambda x, y: x["label"] == y["label"],
        edge_match=lambda x, y: x["order"] == y["order"],
    )


def same_molecule(s1: str, s2: str) -> bool:
    return isomorphic(parse_smiles(s1), parse_smiles(s2))


def emissions(g: MolGraph, rng: random.Random, cap: int = 400) -> set[str]:
    """All emissions when few enough, else ``cap`` neighbor orders plus a seeded random sample."""
    orders = itertools.islice(neighbor_permutations(g), cap)
    out = {write_smiles(g, s, o) for o in orders for s in range(len(g.atoms))}
    adj = g.adjacency()
    for _ in range(cap // 4):
        order = [rng.sample([b for b, _ in nbrs], len(nbrs)) for nbrs in adj]
        out.add(write_smiles(g, rng.randrange(len(g.atoms)), order))
    return out


# -- decoding oracle ------------------------------------------------------------------


def tiny_model(rng: random.Random, vocab_size: int, max_seq_len: int = 6, scale: float = 3.0):
    cfg = ModelConfig(vocab_size=vocab_size, num_layers=1, model_dim=8, num_heads=2, ffn_dim=16,
                      max_seq_len=max_seq_len, dropout_rate=0.0, dtype="float64")
    params = init_params(cfg, rng.randrange(2**31))
    with torch.no_grad():
        for t in params.tensors.values():
            t.mul_(scale)
            t.add_(torch.randn(t.shape, dtype=t.dtype, generator=torch.Generator().manual_seed(rng.randrange(2**31))) * 0.5)
    return cfg, params


def sequence_logprob(params, cfg, src, seq) -> float:
    """Teacher-forced log-probability of ``seq`` (token ids, EOS included if finished)."""
    if not seq:
        return 0.0
    logits = forward(params, cfg, torch.tensor(src), torch.tensor([BOS] + list(seq[:-1])))
    logp = torch.log_softmax(logits, dim=-1)
    return math.fsum(float(logp[i, t]) for i, t in enumerate(seq))


def exhaustive_ranking(params, cfg, src, max_len: int, tokens) -> list[tuple[float, tuple[int, ...]]]:
    """Every finished sequence of length <= max_len and every max_len-token unfinished one, best first."""
    out = []
    for n in range(max_len):
        for body in itertools.product(tokens, repeat=n):
            seq = body + (EOS,)
            out.append((sequence_logprob(params, cfg, src, seq), seq))
    for body in itertools.product(tokens, repeat=max_len):
        out.append((sequence_logprob(params, cfg, src, body), body))
    out.sort(key=lambda x: (-x[0], x[1]))
    return out


# -- gradient oracle ------------------------------------------------------------------


def finite_difference_grads(params, cfg, batch, h: float = 1e-5) -> dict[str, torch.Tensor]:
    """Central differences of the summed NLL, one scalar coordinate at a time."""
    from retrotransfer.model import batch_nll

    out = {}
    with torch.no_grad():
        for name, t in params.tensors.items():
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(batch_nll(params, cfg, batch))
                flat[i] = orig - h
                down = float(batch_nll(params, cfg, batch))
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            out[name] = g
    return out


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-5) -> float:
    """Largest elementwise difference relative to the tensor's gradient scale.

    ``floor`` keeps tensors whose true gradient is exactly zero (key biases, by softmax
    shift invariance) from dividing finite-difference roundoff by nothing.
    """
    scale = max(float(a.abs().max()), float(b.abs().max()), floor)
    return float((a - b).abs().max()) / scale


def random_pairs(rng: random.Random, vocab_size: int, n: int, max_len: int = 5):
    return [
        ([rng.randrange(4, vocab_size) for _ in range(rng.randint(1, max_len))],
         [rng.randrange(4, vocab_size) for _ in range(rng.randint(1, max_len))])
        for _ in range(n)
    ]
