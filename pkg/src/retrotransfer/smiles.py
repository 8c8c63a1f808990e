"""SMILES parsing, emission, canonicalization and tokenization.

Supported grammar (OpenSMILES subset)::

    smiles      ::= chain ( '.' chain )*
    chain       ::= atom ( bond? ( atom | ring_bond ) | '(' bond? chain ')' )*
    ring_bond   ::= bond? ( DIGIT | '%' DIGIT DIGIT )
    atom        ::= organic | aromatic | bracket
    organic     ::= 'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'Cl' | 'Br' | 'I'
    aromatic    ::= 'b' | 'c' | 'n' | 'o' | 'p' | 's'
    bracket     ::= '[' isotope? symbol chiral? hcount? charge? (':' map)? ']'
    bond        ::= '-' | '=' | '#' | '$' | ':' | '/' | '\\'

Stereo markers ('/', '\\', '@') are accepted and kept by the tokenizer but carry
no meaning in the graph: directional bonds read as single bonds and chirality
tags are dropped.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import lru_cache

__all__ = [
    "Atom",
    "BondOrder",
    "MolGraph",
    "SmilesError",
    "EmptyInput",
    "UnclosedRing",
    "UnbalancedParen",
    "UnknownSymbol",
    "parse_smiles",
    "write_smiles",
    "canonicalize",
    "canonical_ranks",
    "strip_atom_maps",
    "tokenize",
    "canonical_reactant_set",
    "is_valid_smiles",
]


class SmilesError(ValueError):
    """Base class for every SMILES parsing failure."""


class EmptyInput(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnbalancedParen(SmilesError):
    pass


class UnknownSymbol(SmilesError):
    pass


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    QUADRUPLE = 4
    AROMATIC = 5

    @property
    def valence(self) -> int:
        return 1 if self is BondOrder.AROMATIC else int(self)


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    "$": BondOrder.QUADRUPLE,
    ":": BondOrder.AROMATIC,
}

_ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {sym: i + 1 for i, sym in enumerate(_ELEMENTS)}

ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_AROMATIC_BRACKET = {**AROMATIC_ORGANIC, "se": "Se", "as": "As"}
_NORMAL_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

_TOKEN_RE = re.compile(
    r"(\[[^\[\]]*\])|(Br|Cl)|(%\d\d)|([BCNOPSFIbcnops])|([-=#$:/\\])|(\d)|([().])"
)
_BRACKET_RE = re.compile(
    r"^\[(?P<isotope>\d+)?"
    r"(?P<symbol>[A-Z][a-z]?|se|as|[bcnops])"
    r"(?P<chiral>@(?:@|TH[12]|AL[12]|SP[1-3]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>[+-](?:\d+|[+-]*))?"
    r"(?::(?P<map>\d+))?\]$"
)


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int | None = None
    atom_map: int | None = None
    isotope: int | None = None

    @property
    def bracketed(self) -> bool:
        return self.explicit_h is not None


@dataclass
class MolGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[tuple[int, int, BondOrder]] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.atoms)
        seen = set()
        for a, b, order in self.bonds:
            if not (0 <= a < n and 0 <= b < n):
                raise SmilesError(f"bond ({a}, {b}) references a missing atom")
            if a == b:
                raise SmilesError(f"self-bond on atom {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise SmilesError(f"duplicate bond between atoms {a} and {b}")
            seen.add(key)
            if order is BondOrder.AROMATIC and not (self.atoms[a].aromatic and self.atoms[b].aromatic):
                raise SmilesError(f"aromatic bond between non-aromatic atoms {a} and {b}")

    def adjacency(self) -> list[list[tuple[int, BondOrder]]]:
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for a, b, order in self.bonds:
            adj[a].append((b, order))
            adj[b].append((a, order))
        return adj

    def bond_between(self) -> dict[tuple[int, int], BondOrder]:
        out = {}
        for a, b, order in self.bonds:
            out[(a, b)] = order
            out[(b, a)] = order
        return out

    def components(self) -> list[list[int]]:
        adj = self.adjacency()
        seen = [False] * len(self.atoms)
        comps = []
        for root in range(len(self.atoms)):
            if seen[root]:
                continue
            stack, comp = [root], []
            seen[root] = True
            while stack:
                a = stack.pop()
                comp.append(a)
                for b, _ in adj[a]:
                    if not seen[b]:
                        seen[b] = True
                        stack.append(b)
            comps.append(sorted(comp))
        return comps

    def subgraph(self, indices: list[int]) -> MolGraph:
        remap = {old: new for new, old in enumerate(indices)}
        bonds = [(remap[a], remap[b], o) for a, b, o in self.bonds if a in remap and b in remap]
        return MolGraph([self.atoms[i] for i in indices], bonds)

    def hydrogen_counts(self) -> list[int]:
        """Total hydrogen count of every atom (explicit for bracket atoms, implicit otherwise)."""
        adj = self.adjacency()
        return [
            atom.explicit_h if atom.bracketed else _implicit_h(atom, adj[i])
            for i, atom in enumerate(self.atoms)
        ]


def _implicit_h(atom: Atom, neighbors: list[tuple[int, BondOrder]]) -> int:
    valences = _NORMAL_VALENCES.get(atom.element)
    if valences is None:
        return 0
    used = sum(order.valence for _, order in neighbors)
    if atom.aromatic:
        return max(0, valences[0] - used - 1)
    for v in valences:
        if v >= used:
            return v - used
    return 0


def tokenize(s: str) -> list[str]:
    """Split SMILES text into atom-level tokens; ``"".join(tokenize(s)) == s``."""
    tokens = []
    pos = 0
    while pos < len(s):
        m = _TOKEN_RE.match(s, pos)
        if m is None:
            raise UnknownSymbol(f"cannot tokenize {s[pos:]!r} at position {pos} of {s!r}")
        tokens.append(m.group(0))
        pos = m.end()
    return tokens


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    rest = text[1:]
    if rest.isdigit():
        return sign * int(rest)
    if rest and set(rest) != {text[0]}:
        raise UnknownSymbol(f"malformed charge {text!r}")
    return sign * len(text)


def _parse_bracket(token: str) -> Atom:
    m = _BRACKET_RE.match(token)
    if m is None:
        raise UnknownSymbol(f"malformed bracket atom {token!r}")
    symbol = m.group("symbol")
    if symbol in _AROMATIC_BRACKET:
        element, aromatic = _AROMATIC_BRACKET[symbol], True
    elif symbol in ATOMIC_NUMBER:
        element, aromatic = symbol, False
    else:
        raise UnknownSymbol(f"unknown element {symbol!r} in {token!r}")
    h = m.group("hcount")
    hcount = 0 if h is None else (1 if h == "H" else int(h[1:]))
    isotope = m.group("isotope")
    amap = m.group("map")
    return Atom(
        element=element,
        aromatic=aromatic,
        formal_charge=_parse_charge(m.group("charge")),
        explicit_h=hcount,
        atom_map=int(amap) if amap is not None and int(amap) > 0 else None,
        isotope=int(isotope) if isotope is not None else None,
    )


def parse_smiles(s: str) -> MolGraph:
    if not s:
        raise EmptyInput("empty SMILES")
    atoms: list[Atom] = []
    bonds: list[tuple[int, int, BondOrder]] = []
    bonded: set[tuple[int, int]] = set()
    stack: list[int | None] = []
    prev: int | None = None
    pending: str | None = None
    rings: dict[str, tuple[int, str | None]] = {}

    def add_bond(a: int, b: int, symbol: str | None) -> None:
        if a == b:
            raise SmilesError(f"ring closure of atom {a} to itself in {s!r}")
        key = (min(a, b), max(a, b))
        if key in bonded:
            raise SmilesError(f"duplicate bond between atoms {a} and {b} in {s!r}")
        if symbol is None:
            both = atoms[a].aromatic and atoms[b].aromatic
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        else:
            order = _BOND_SYMBOLS[symbol]
            if order is BondOrder.AROMATIC and not (atoms[a].aromatic and atoms[b].aromatic):
                raise SmilesError(f"aromatic bond symbol between non-aromatic atoms in {s!r}")
        bonded.add(key)
        bonds.append((a, b, order))

    for tok in tokenize(s):
        c = tok[0]
        if c == "[" or tok in ORGANIC_SUBSET or tok in AROMATIC_ORGANIC:
            if c == "[":
                atom = _parse_bracket(tok)
            elif tok in AROMATIC_ORGANIC:
                atom = Atom(AROMATIC_ORGANIC[tok], aromatic=True)
            else:
                atom = Atom(tok)
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending)
            elif pending is not None:
                raise SmilesError(f"bond symbol {pending!r} without a preceding atom in {s!r}")
            pending = None
            prev = idx
        elif tok in _BOND_SYMBOLS:
            if pending is not None or prev is None:
                raise SmilesError(f"misplaced bond symbol {tok!r} in {s!r}")
            pending = tok
        elif c.isdigit() or c == "%":
            if prev is None:
                raise SmilesError(f"ring label {tok!r} without an atom in {s!r}")
            label = tok.lstrip("%")
            if label in rings:
                other, other_sym = rings.pop(label)
                if pending is not None and other_sym is not None and pending != other_sym:
                    raise SmilesError(f"conflicting ring bond symbols for label {label} in {s!r}")
                add_bond(other, prev, pending if pending is not None else other_sym)
            else:
                rings[label] = (prev, pending)
            pending = None
        elif tok == "(":
            if prev is None or pending is not None:
                raise SmilesError(f"misplaced '(' in {s!r}")
            stack.append(prev)
        elif tok == ")":
            if not stack:
                raise UnbalancedParen(f"unmatched ')' in {s!r}")
            if pending is not None:
                raise SmilesError(f"dangling bond before ')' in {s!r}")
            prev = stack.pop()
        elif tok == ".":
            if stack:
                raise UnbalancedParen(f"'.' inside a branch in {s!r}")
            if prev is None or pending is not None:
                raise SmilesError(f"misplaced '.' in {s!r}")
            prev = None
    if stack:
        raise UnbalancedParen(f"unclosed '(' in {s!r}")
    if rings:
        raise UnclosedRing(f"ring label(s) {sorted(rings)} never closed in {s!r}")
    if pending is not None or prev is None:
        raise SmilesError(f"SMILES ends with a dangling bond or separator: {s!r}")
    return MolGraph(atoms, bonds)


def is_valid_smiles(s: str) -> bool:
    try:
        parse_smiles(s)
    except SmilesError:
        return False
    return True


# -- emission ---------------------------------------------------------------


def _atom_text(atom: Atom, hcount: int, neighbors: list[tuple[int, BondOrder]]) -> str:
    symbol = atom.element.lower() if atom.aromatic else atom.element
    organic = (
        atom.element in ORGANIC_SUBSET
        and (not atom.aromatic or symbol in AROMATIC_ORGANIC)
        and atom.formal_charge == 0
        and atom.isotope is None
        and atom.atom_map is None
        and hcount == _implicit_h(atom, neighbors)
    )
    if organic:
        return symbol
    parts = ["["]
    if atom.isotope is not None:
        parts.append(str(atom.isotope))
    parts.append(symbol)
    if hcount:
        parts.append("H" if hcount == 1 else f"H{hcount}")
    q = atom.formal_charge
    if q:
        sign = "+" if q > 0 else "-"
        parts.append(sign if abs(q) == 1 else f"{sign}{abs(q)}")
    if atom.atom_map is not None:
        parts.append(f":{atom.atom_map}")
    parts.append("]")
    return "".join(parts)


def _bond_text(order: BondOrder, a: Atom, b: Atom) -> str:
    if order is BondOrder.SINGLE:
        return "-" if a.aromatic and b.aromatic else ""
    if order is BondOrder.AROMATIC:
        return ""
    return {BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.QUADRUPLE: "$"}[order]


def _ring_label(n: int) -> str:
    return str(n) if n < 10 else f"%{n:02d}"


def write_smiles(
    g: MolGraph,
    start: int = 0,
    neighbor_order: list[list[int]] | None = None,
    component_order: list[int] | None = None,
) -> str:
    """Emit SMILES by depth-first traversal.

    ``neighbor_order[i]`` must be a permutation of the neighbors of atom ``i``; it fixes
    the visiting order of branches and ring closures. Atoms not reachable from ``start``
    are emitted as further '.'-separated components, rooted at the atoms of
    ``component_order`` (default: lowest unvisited index).
    """
    n = len(g.atoms)
    if n == 0:
        raise EmptyInput("cannot write an empty graph")
    if not 0 <= start < n:
        raise ValueError(f"start atom {start} out of range")
    adj = g.adjacency()
    if neighbor_order is None:
        neighbor_order = [[b for b, _ in nbrs] for nbrs in adj]
    for i, order in enumerate(neighbor_order):
        if sorted(order) != sorted(b for b, _ in adj[i]):
            raise ValueError(f"neighbor_order[{i}] is not a permutation of atom {i}'s neighbors")
    return _write(g, start, neighbor_order, component_order, *_emission_tables(g, adj))


def _emission_tables(g: MolGraph, adj) -> tuple[list[str], dict[tuple[int, int], str]]:
    hcounts = g.hydrogen_counts()
    atom_texts = [_atom_text(atom, hcounts[i], adj[i]) for i, atom in enumerate(g.atoms)]
    bond_texts = {}
    for a, b, order in g.bonds:
        t = _bond_text(order, g.atoms[a], g.atoms[b])
        bond_texts[(a, b)] = bond_texts[(b, a)] = t
    return atom_texts, bond_texts


def _write(g, start, neighbor_order, component_order, atom_texts, bond_texts) -> str:
    n = len(g.atoms)
    visited = [False] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_partners: list[list[int]] = [[] for _ in range(n)]
    ring_edges: set[tuple[int, int]] = set()

    def dfs(root: int) -> None:
        visited[root] = True
        stack = [(root, -1, iter(neighbor_order[root]))]
        while stack:
            a, parent, it = stack[-1]
            for b in it:
                if b == parent:
                    continue
                if not visited[b]:
                    visited[b] = True
                    children[a].append(b)
                    stack.append((b, a, iter(neighbor_order[b])))
                    break
                key = (min(a, b), max(a, b))
                if key not in ring_edges:
                    ring_edges.add(key)
                    ring_partners[b].append(a)
                    ring_partners[a].append(b)
            else:
                stack.pop()

    roots = [start]
    dfs(start)
    pending_roots = list(component_order) if component_order is not None else list(range(n))
    for r in pending_roots:
        if not visited[r]:
            roots.append(r)
            dfs(r)
    for r in range(n):
        if not visited[r]:
            roots.append(r)
            dfs(r)

    out: list[str] = []
    emitted = [False] * n
    open_labels: dict[tuple[int, int], int] = {}
    free: list[int] = []
    next_label = [1]

    def take_label() -> int:
        if free:
            free.sort()
            return free.pop(0)
        label = next_label[0]
        next_label[0] += 1
        return label

    def emit(root: int, incoming: str) -> None:
        # iterative emission; frames are (atom, prefix) or branch markers
        work: list[tuple[str, int, str]] = [("atom", root, incoming)]
        while work:
            kind, a, prefix = work.pop()
            if kind == "text":
                out.append(prefix)
                continue
            out.append(prefix)
            out.append(atom_texts[a])
            emitted[a] = True
            released = []
            for p in ring_partners[a]:
                key = (min(a, p), max(a, p))
                if key in open_labels:
                    label = open_labels.pop(key)
                    out.append(_ring_label(label))
                    released.append(label)
                else:
                    label = take_label()
                    open_labels[key] = label
                    out.append(bond_texts[(a, p)] + _ring_label(label))
            free.extend(released)
            kids = children[a]
            for i in range(len(kids) - 1, -1, -1):
                c = kids[i]
                btxt = bond_texts[(a, c)]
                if i == len(kids) - 1:
                    work.append(("atom", c, btxt))
                else:
                    work.append(("text", -1, ")"))
                    work.append(("atom", c, "(" + btxt))

    for i, r in enumerate(roots):
        emit(r, "." if i else "")
    return "".join(out)


# -- canonical ranking --------------------------------------------------------

_LEAF_BUDGET = 4096


def _refine(ranks: list[int], adj: list[list[tuple[int, BondOrder]]]) -> list[int]:
    n = len(ranks)
    while True:
        keys = [
            (ranks[a], tuple(sorted((ranks[b], int(o)) for b, o in adj[a])))
            for a in range(n)
        ]
        order = sorted(set(keys))
        index = {k: i for i, k in enumerate(order)}
        new = [index[k] for k in keys]
        if len(order) == len(set(ranks)):
            return new
        ranks = new


def _initial_ranks(g: MolGraph, adj) -> list[int]:
    hs = g.hydrogen_counts()
    inv = [
        (
            ATOMIC_NUMBER.get(atom.element, 0),
            len(adj[i]),
            atom.formal_charge,
            int(atom.aromatic),
            hs[i],
            atom.isotope or 0,
        )
        for i, atom in enumerate(g.atoms)
    ]
    order = sorted(set(inv))
    index = {k: i for i, k in enumerate(order)}
    return [index[k] for k in inv]


def _leaf_rankings(ranks: list[int], adj, budget: list[int]):
    ranks = _refine(ranks, adj)
    n = len(ranks)
    if len(set(ranks)) == n:
        budget[0] -= 1
        yield ranks
        return
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    cell = min(r for r, c in counts.items() if c > 1)
    members = [a for a in range(n) if ranks[a] == cell]
    for j, chosen in enumerate(members):
        if j > 0 and budget[0] <= 0:
            break
        split = [2 * r + (0 if a == chosen or r != cell else 1) for a, r in enumerate(ranks)]
        yield from _leaf_rankings(split, adj, budget)


def canonical_ranks(g: MolGraph) -> list[int]:
    """Canonical atom ranks of a connected graph (0 = emission start)."""
    return _best_emission(g)[1]


def _best_emission(g: MolGraph) -> tuple[str, list[int]]:
    adj = g.adjacency()
    best: tuple[str, list[int]] | None = None
    tables = _emission_tables(g, adj)
    for ranks in _leaf_rankings(_initial_ranks(g, adj), adj, [_LEAF_BUDGET]):
        text = _emit_ranked(g, ranks, adj, tables)
        if best is None or text < best[0]:
            best = (text, ranks)
    assert best is not None
    return best


def _emit_ranked(g: MolGraph, ranks: list[int], adj, tables) -> str:
    start = min(range(len(ranks)), key=ranks.__getitem__)
    order = [sorted((b for b, _ in nbrs), key=ranks.__getitem__) for nbrs in adj]
    return _write(g, start, order, None, *tables)


def _strip_maps_graph(g: MolGraph) -> MolGraph:
    return MolGraph([replace(a, atom_map=None) for a in g.atoms], list(g.bonds))


def _canonical_graph_text(g: MolGraph) -> str:
    g = _strip_maps_graph(g)
    parts = [_best_emission(g.subgraph(comp))[0] for comp in g.components()]
    return ".".join(sorted(parts))


@lru_cache(maxsize=1 << 18)
def canonicalize(s: str) -> str:
    """Unique SMILES for the molecule(s) in ``s``; atom maps and stereo are dropped.

    Components are canonicalized separately and joined in ascending byte order.
    """
    return _canonical_graph_text(parse_smiles(s))


def strip_atom_maps(s: str) -> str:
    parse_smiles(s)
    return "".join(
        re.sub(r":\d+\]$", "]", tok) if tok.startswith("[") else tok for tok in tokenize(s)
    )


def canonical_reactant_set(reactants: list[str]) -> str:
    parts = []
    for r in reactants:
        parts.extend(canonicalize(r).split("."))
    return ".".join(sorted(parts))


def neighbor_permutations(g: MolGraph):
    """Yield every neighbor_order argument valid for ``g`` (product of per-atom permutations)."""
    adj = g.adjacency()
    per_atom = [list(itertools.permutations([b for b, _ in nbrs])) for nbrs in adj]
    for combo in itertools.product(*per_atom):
        yield [list(p) for p in combo]
