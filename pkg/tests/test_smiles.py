import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import emissions, isomorphic, random_graph, same_molecule
from retrotransfer.smiles import (
    Atom,
    BondOrder,
    EmptyInput,
    MolGraph,
    SmilesError,
    UnbalancedParen,
    UnclosedRing,
    UnknownSymbol,
    canonical_reactant_set,
    canonical_ranks,
    canonicalize,
    is_valid_smiles,
    neighbor_permutations,
    parse_smiles,
    strip_atom_maps,
    tokenize,
    write_smiles,
)


def test_parse_ethanol():
    g = parse_smiles("CCO")
    assert [a.element for a in g.atoms] == ["C", "C", "O"]
    assert sorted((a, b, o) for a, b, o in g.bonds) == [(0, 1, BondOrder.SINGLE), (1, 2, BondOrder.SINGLE)]


def test_parse_benzene_ring_closure():
    g = parse_smiles("c1ccccc1")
    assert len(g.atoms) == 6 and all(a.aromatic and a.element == "C" for a in g.atoms)
    assert len(g.bonds) == 6
    assert any({a, b} == {0, 5} for a, b, _ in g.bonds)


@pytest.mark.parametrize(
    "text, exc",
    [("C1CC", UnclosedRing), ("C(C", UnbalancedParen), ("CC)", UnbalancedParen), ("", EmptyInput),
     ("CXC", UnknownSymbol), ("C[Zz]", UnknownSymbol)],
)
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_smiles(text)
    assert not is_valid_smiles(text)


def test_bracket_atom_fields():
    g = parse_smiles("[13CH3:4][NH3+]")
    a, b = g.atoms
    assert (a.isotope, a.explicit_h, a.atom_map) == (13, 3, 4)
    assert (b.element, b.formal_charge, b.explicit_h) == ("N", 1, 3)


def test_graph_invariants_rejected():
    with pytest.raises(SmilesError):
        MolGraph([Atom("C")], [(0, 0, BondOrder.SINGLE)])
    with pytest.raises(SmilesError):
        MolGraph([Atom("C"), Atom("C")], [(0, 1, BondOrder.SINGLE), (1, 0, BondOrder.DOUBLE)])
    with pytest.raises(SmilesError):
        MolGraph([Atom("C"), Atom("C")], [(0, 1, BondOrder.AROMATIC)])


@pytest.mark.parametrize(
    "text, tokens",
    [("CCO", ["C", "C", "O"]), ("ClCCBr", ["Cl", "C", "C", "Br"]),
     ("[nH]1cccc1", ["[nH]", "1", "c", "c", "c", "c", "1"]),
     ("C%12CC%12", ["C", "%12", "C", "C", "%12"])],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens
    assert "".join(tokens) == text


def test_write_from_oxygen():
    g = parse_smiles("CCO")
    assert write_smiles(g, start=2) == "OCC"


def test_write_charged_bracket():
    assert write_smiles(parse_smiles("[N+]")) == "[N+]"


@pytest.mark.parametrize("start", range(6))
def test_benzene_any_start_roundtrips(start):
    g = parse_smiles("c1ccccc1")
    back = parse_smiles(write_smiles(g, start=start))
    assert len(back.atoms) == 6 and all(a.aromatic for a in back.atoms)
    assert isomorphic(g, back)


def test_write_rejects_bad_neighbor_order():
    g = parse_smiles("CCO")
    with pytest.raises(ValueError):
        write_smiles(g, neighbor_order=[[1], [2], [0]])


def test_canonical_ethanol_all_emissions():
    g = parse_smiles("CCO")
    emissions = {write_smiles(g, s, order) for s in range(3) for order in neighbor_permutations(g)}
    assert emissions == {"CCO", "OCC", "C(C)O", "C(O)C"}
    assert {canonicalize(e) for e in emissions} == {"CCO"}


def test_canonical_examples():
    assert canonicalize("OCC") == canonicalize("C(C)O") == canonicalize("CCO") == "CCO"
    toluene = canonicalize("c1ccccc1C")
    assert canonicalize(toluene) == toluene
    assert canonicalize("[CH3:7]O") == canonicalize("CO")
    assert canonicalize("CCOC(C)=O") == "CCOC(C)=O"


def test_canonical_pyrrole_keeps_bracket_h():
    out = canonicalize("[nH]1cccc1")
    assert out == canonicalize("c1cc[nH]c1")
    assert "[nH]" in out and same_molecule(out, "[nH]1cccc1")


def test_bracket_written_plain_when_h_is_implicit():
    assert canonicalize("[CH3][CH2][OH]") == "CCO"
    assert canonicalize("[CH2]") == "[CH2]"


def test_many_open_rings_use_percent_labels():
    n = 11
    atoms = [Atom("C") for _ in range(2 * n)]
    bonds = [(i, i + 1, BondOrder.SINGLE) for i in range(2 * n - 1)]
    bonds += [(i, 2 * n - 1 - i, BondOrder.SINGLE) for i in range(n - 1)]
    g = MolGraph(atoms, bonds)
    text = write_smiles(g)
    assert "%10" in text
    assert isomorphic(parse_smiles(text), g)
    c = canonicalize(text)
    assert canonicalize(c) == c and isomorphic(parse_smiles(c), g)


@pytest.mark.parametrize(
    "text, expected",
    [("[CH3:1][OH:2]", "[CH3][OH]"), ("CCO", "CCO"), ("[C:12](=O)[O:3]", "[C](=O)[O]")],
)
def test_strip_atom_maps(text, expected):
    assert strip_atom_maps(text) == expected


def test_canonical_reactant_set():
    assert canonical_reactant_set(["CCO", "CC(=O)O"]) == "CC(=O)O.CCO"
    assert canonical_reactant_set(["CCO"]) == "CCO"
    assert canonical_reactant_set(["OCC", "CCO"]) == "CCO.CCO"
    assert canonical_reactant_set(["OCC.CC(O)=O"]) == "CC(=O)O.CCO"


def test_disconnected_components_sorted():
    assert canonicalize("OCC.C") == canonicalize("C.CCO") == "C.CCO"


def test_symmetric_ranks_are_a_permutation():
    g = parse_smiles("C1CCCCC1")
    assert sorted(canonical_ranks(g)) == list(range(6))


def test_random_graphs_canonical_and_isomorphic():
    rng = random.Random(11)
    for _ in range(60):
        g = random_graph(rng)
        outs = {canonicalize(e) for e in emissions(g, rng, 100)}
        assert len(outs) == 1
        (c,) = outs
        assert canonicalize(c) == c
        assert isomorphic(parse_smiles(c), g)


def test_non_isomorphic_graphs_get_distinct_strings():
    rng = random.Random(5)
    graphs = [random_graph(rng, max_atoms=6) for _ in range(120)]
    canon = [canonicalize(write_smiles(g)) for g in graphs]
    for i, j in itertools.combinations(range(len(graphs)), 2):
        assert (canon[i] == canon[j]) == isomorphic(graphs[i], graphs[j])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_canonical_is_fixed_point(seed):
    g = random_graph(random.Random(seed))
    c = canonicalize(write_smiles(g))
    assert canonicalize(c) == c
    assert ":" not in c


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_atom_maps_do_not_change_canonical_form(seed):
    rng = random.Random(seed)
    g = random_graph(rng)
    h = g.hydrogen_counts()
    mapped = MolGraph(
        [Atom(a.element, a.aromatic, a.formal_charge, h[i], rng.randint(1, 99)) for i, a in enumerate(g.atoms)],
        g.bonds,
    )
    text = write_smiles(mapped)
    assert ":" in text
    assert canonicalize(text) == canonicalize(write_smiles(g)) == canonicalize(strip_atom_maps(text))
