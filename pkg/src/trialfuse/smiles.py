"""SMILES subset parser, valence validation, and canonical emission.

Supported subset: organic-subset atoms, bracket atoms with charge and explicit
hydrogens, ring-closure digits and %nn, branches, bond symbols - = # :, and
aromatic lowercase atoms (flags taken as written, ring membership verified).
Stereochemistry and isotopes are rejected as unsupported rather than dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

AROMATIC = "aromatic"

ORGANIC_SUBSET = ("Br", "Cl", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
BRACKET_ELEMENTS = {
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Fe", "Cu", "Zn", "As", "Se",
    "Br", "I", "Pt", "Au", "Hg",
}

ALLOWED_VALENCES = {
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

BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3, ":": AROMATIC}


class SmilesError(Exception):
    pass


class SmilesSyntaxError(SmilesError):
    def __init__(self, position: int, message: str = "syntax error"):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnclosedRing(SmilesError):
    def __init__(self, digit: int):
        super().__init__(f"ring bond {digit} opened but never closed")
        self.digit = digit


class ValenceError(SmilesError):
    def __init__(self, atom_index: int, detail: str = ""):
        super().__init__(f"valence violation at atom {atom_index}" +
                         (f": {detail}" if detail else ""))
        self.atom_index = atom_index


class UnsupportedFeature(SmilesError):
    def __init__(self, token: str):
        super().__init__(f"unsupported SMILES feature: {token!r}")
        self.token = token


@dataclass
class Atom:
    element: str
    charge: int = 0
    explicit_h: int = 0
    aromatic: bool = False
    bracket: bool = False
    implicit_h: int = 0


@dataclass
class Bond:
    i: int
    j: int
    order: object  # 1 | 2 | 3 | AROMATIC


@dataclass
class MolecularGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def neighbors(self, i: int):
        for b in self.bonds:
            if b.i == i:
                yield b.j, b.order
            elif b.j == i:
                yield b.i, b.order


def _bond_weight(order) -> float:
    return 1.5 if order == AROMATIC else float(order)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.graph = MolecularGraph()
        self.prev: int | None = None
        self.pending_bond = None
        self.branch_stack: list[tuple[int | None, object]] = []
        self.open_rings: dict[int, tuple[int, object]] = {}

    def error(self, msg="syntax error"):
        raise SmilesSyntaxError(self.pos, msg)

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _add_atom(self, atom: Atom) -> None:
        self.graph.atoms.append(atom)
        idx = len(self.graph.atoms) - 1
        if self.prev is not None:
            order = self.pending_bond
            if order is None:
                both_aromatic = atom.aromatic and self.graph.atoms[self.prev].aromatic
                order = AROMATIC if both_aromatic else 1
            self.graph.bonds.append(Bond(self.prev, idx, order))
        self.pending_bond = None
        self.prev = idx

    def _close_or_open_ring(self, digit: int) -> None:
        if self.prev is None:
            self.error("ring bond before any atom")
        if digit in self.open_rings:
            other, other_bond = self.open_rings.pop(digit)
            if other == self.prev:
                self.error("ring bond closes on the same atom")
            order = None
            for candidate in (other_bond, self.pending_bond):
                if candidate is not None:
                    if order is not None and candidate != order:
                        self.error("conflicting ring bond symbols")
                    order = candidate
            if order is None:
                both = (self.graph.atoms[other].aromatic
                        and self.graph.atoms[self.prev].aromatic)
                order = AROMATIC if both else 1
            for b in self.graph.bonds:
                if {b.i, b.j} == {other, self.prev}:
                    self.error("duplicate ring bond")
            self.graph.bonds.append(Bond(other, self.prev, order))
        else:
            self.open_rings[digit] = (self.prev, self.pending_bond)
        self.pending_bond = None

    def _parse_bracket_atom(self) -> Atom:
        # self.pos is at '['
        start = self.pos
        self.pos += 1
        if self.peek().isdigit():
            raise UnsupportedFeature("isotope")
        # element symbol
        ch = self.peek()
        aromatic = False
        if ch in AROMATIC_ORGANIC:
            element = ch.upper()
            aromatic = True
            self.pos += 1
        elif ch.isupper():
            two = self.text[self.pos:self.pos + 2]
            if len(two) == 2 and two[1].islower() and two in BRACKET_ELEMENTS:
                element = two
                self.pos += 2
            elif ch in BRACKET_ELEMENTS:
                element = ch
                self.pos += 1
            else:
                self.error(f"unknown element {ch!r}")
        else:
            self.error("expected element symbol in brackets")

        explicit_h = 0
        charge = 0
        while self.peek() and self.peek() != "]":
            ch = self.peek()
            if ch == "@":
                raise UnsupportedFeature("@")
            if ch == "H":
                self.pos += 1
                digits = ""
                while self.peek().isdigit():
                    digits += self.peek()
                    self.pos += 1
                explicit_h = int(digits) if digits else 1
            elif ch in "+-":
                sign = 1 if ch == "+" else -1
                self.pos += 1
                if self.peek().isdigit():
                    digits = ""
                    while self.peek().isdigit():
                        digits += self.peek()
                        self.pos += 1
                    charge = sign * int(digits)
                else:
                    charge = sign
                    while self.peek() == ch:  # ++ / -- forms
                        charge += sign
                        self.pos += 1
            else:
                self.error(f"unexpected {ch!r} in bracket atom")
        if self.peek() != "]":
            self.pos = start
            self.error("unterminated bracket atom")
        self.pos += 1
        if element not in BRACKET_ELEMENTS:
            self.error(f"unknown element {element!r}")
        return Atom(element=element, charge=charge, explicit_h=explicit_h,
                    aromatic=aromatic, bracket=True)

    def parse(self) -> MolecularGraph:
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch in "@/\\":
                raise UnsupportedFeature(ch)
            if ch in BOND_SYMBOLS:
                if self.pending_bond is not None:
                    self.error("two bond symbols in a row")
                self.pending_bond = BOND_SYMBOLS[ch]
                self.pos += 1
                continue
            if ch == "(":
                if self.prev is None:
                    self.error("branch before any atom")
                self.branch_stack.append((self.prev, self.pending_bond))
                self.pending_bond = None
                self.pos += 1
                continue
            if ch == ")":
                if not self.branch_stack:
                    self.error("unmatched ')'")
                if self.pending_bond is not None:
                    self.error("dangling bond before ')'")
                self.prev, self.pending_bond = self.branch_stack.pop()
                self.pending_bond = None
                self.pos += 1
                continue
            if ch.isdigit():
                self._close_or_open_ring(int(ch))
                self.pos += 1
                continue
            if ch == "%":
                digits = text[self.pos + 1:self.pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    self.error("%% must be followed by two digits")
                self._close_or_open_ring(int(digits))
                self.pos += 3
                continue
            if ch == "[":
                atom = self._parse_bracket_atom()
                self._add_atom(atom)
                continue
            matched = False
            for sym in ORGANIC_SUBSET:
                if text.startswith(sym, self.pos):
                    self._add_atom(Atom(element=sym))
                    self.pos += len(sym)
                    matched = True
                    break
            if matched:
                continue
            if ch in AROMATIC_ORGANIC:
                self._add_atom(Atom(element=ch.upper(), aromatic=True))
                self.pos += 1
                continue
            self.error(f"unexpected character {ch!r}")

        if self.pending_bond is not None:
            self.error("dangling bond at end of input")
        if self.branch_stack:
            self.error("unclosed branch")
        if self.open_rings:
            raise UnclosedRing(min(self.open_rings))
        if not self.graph.atoms:
            self.error("empty SMILES")
        return self.graph


def _cycle_members(g: MolecularGraph) -> set[int]:
    """Atoms lying on some cycle, approximated by iterative leaf pruning."""
    degree = [0] * len(g.atoms)
    adj: list[set[int]] = [set() for _ in g.atoms]
    for b in g.bonds:
        adj[b.i].add(b.j)
        adj[b.j].add(b.i)
    for i, ns in enumerate(adj):
        degree[i] = len(ns)
    queue = [i for i, d in enumerate(degree) if d <= 1]
    removed = set()
    while queue:
        node = queue.pop()
        if node in removed:
            continue
        removed.add(node)
        for n in adj[node]:
            if n not in removed:
                degree[n] -= 1
                if degree[n] <= 1:
                    queue.append(n)
    return {i for i in range(len(g.atoms)) if i not in removed}


def _validate(g: MolecularGraph) -> None:
    degrees = [0.0] * len(g.atoms)
    for b in g.bonds:
        if b.i == b.j:
            raise SmilesSyntaxError(0, "self bond")
        w = _bond_weight(b.order)
        degrees[b.i] += w
        degrees[b.j] += w

    in_ring = _cycle_members(g)
    for idx, atom in enumerate(g.atoms):
        if atom.aromatic and idx not in in_ring:
            raise ValenceError(idx, "aromatic atom outside any ring")

    for idx, atom in enumerate(g.atoms):
        allowed = ALLOWED_VALENCES.get(atom.element)
        if allowed is None:
            # Uncommon bracket elements: no valence table entry, skip check.
            atom.implicit_h = 0
            continue
        degree = math.ceil(degrees[idx])
        if atom.bracket:
            cap = max(allowed) + max(atom.charge, 0)
            if degree + atom.explicit_h > cap:
                raise ValenceError(idx, f"valence {degree + atom.explicit_h} > {cap}")
            atom.implicit_h = 0
        else:
            fits = [v for v in allowed if v >= degree]
            if not fits:
                raise ValenceError(idx, f"valence {degree} exceeds {max(allowed)}")
            atom.implicit_h = min(fits) - degree


def parse_smiles(s: str) -> MolecularGraph:
    if not isinstance(s, str):
        raise SmilesSyntaxError(0, "input is not a string")
    graph = _Parser(s).parse()
    _validate(graph)
    return graph


# --- canonicalization -------------------------------------------------------

def _bond_order_key(order) -> int:
    return {1: 1, 2: 2, 3: 3, AROMATIC: 4}[order]


def _refine(g: MolecularGraph, ranks: list[int], adj) -> list[int]:
    while True:
        inv = []
        for i in range(len(g.atoms)):
            neigh = tuple(sorted((_bond_order_key(o), ranks[j]) for j, o in adj[i]))
            inv.append((ranks[i], neigh))
        order = sorted(set(inv))
        new_ranks = [order.index(v) for v in inv]
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _canonical_ranks(g: MolecularGraph) -> list[int]:
    """Morgan-style iterative neighborhood refinement. Remaining ties are
    broken by splitting out the lowest original index, then re-refining."""
    adj: list[list[tuple[int, object]]] = [[] for _ in g.atoms]
    for b in g.bonds:
        adj[b.i].append((b.j, b.order))
        adj[b.j].append((b.i, b.order))

    initial = [
        (a.element, len(adj[i]), a.charge, a.explicit_h + a.implicit_h,
         a.aromatic, a.bracket)
        for i, a in enumerate(g.atoms)
    ]
    order = sorted(set(initial))
    ranks = [order.index(v) for v in initial]
    ranks = _refine(g, ranks, adj)

    while len(set(ranks)) < len(ranks):
        counts: dict[int, list[int]] = {}
        for i, r in enumerate(ranks):
            counts.setdefault(r, []).append(i)
        tied_rank = min(r for r, idxs in counts.items() if len(idxs) > 1)
        chosen = min(counts[tied_rank])
        inv = [(ranks[i], 0 if i == chosen else 1) for i in range(len(ranks))]
        order = sorted(set(inv))
        ranks = _refine(g, [order.index(v) for v in inv], adj)
    return ranks


def _atom_token(atom: Atom) -> str:
    sym = atom.element.lower() if atom.aromatic else atom.element
    if not atom.bracket:
        return sym
    h = ""
    if atom.explicit_h == 1:
        h = "H"
    elif atom.explicit_h > 1:
        h = f"H{atom.explicit_h}"
    charge = ""
    if atom.charge > 0:
        charge = "+" if atom.charge == 1 else f"+{atom.charge}"
    elif atom.charge < 0:
        charge = "-" if atom.charge == -1 else f"-{-atom.charge}"
    return f"[{sym}{h}{charge}]"


def _bond_token(g: MolecularGraph, order, i: int, j: int) -> str:
    if order == 1:
        return ""
    if order == 2:
        return "="
    if order == 3:
        return "#"
    if g.atoms[i].aromatic and g.atoms[j].aromatic:
        return ""
    return ":"


def canonicalize(g: MolecularGraph) -> str:
    """Deterministic canonical SMILES: refinement ranks, then DFS emission
    from the lowest-rank atom with neighbors visited in rank order."""
    if not g.atoms:
        raise ValueError("empty graph")
    n = len(g.atoms)
    ranks = _canonical_ranks(g)
    adj: list[list[tuple[int, object]]] = [[] for _ in range(n)]
    bond_of: dict[frozenset[int], object] = {}
    for b in g.bonds:
        adj[b.i].append((b.j, b.order))
        adj[b.j].append((b.i, b.order))
        bond_of[frozenset((b.i, b.j))] = b.order
    for i in range(n):
        adj[i].sort(key=lambda t: ranks[t[0]])

    root = min(range(n), key=lambda i: ranks[i])
    visited: set[int] = set()
    parent: dict[int, int] = {root: -1}
    tree_children: dict[int, list[int]] = {i: [] for i in range(n)}
    ring_edges: set[frozenset[int]] = set()

    import sys
    sys.setrecursionlimit(max(10000, n * 4))

    def dfs(u: int) -> None:
        visited.add(u)
        for v, _ in adj[u]:
            if v not in visited:
                parent[v] = u
                tree_children[u].append(v)
                dfs(v)
            elif v != parent[u] and parent.get(v) != u:
                ring_edges.add(frozenset((u, v)))

    dfs(root)
    if len(visited) < n:
        raise ValueError("graph is not connected")

    # Ring-closure edges at each atom, partner in rank order; digits are
    # assigned in emission order and reused after closing.
    ring_partners: dict[int, list[int]] = {i: [] for i in range(n)}
    for edge in ring_edges:
        a, b = tuple(edge)
        ring_partners[a].append(b)
        ring_partners[b].append(a)
    for partners in ring_partners.values():
        partners.sort(key=lambda p: ranks[p])

    digit_for: dict[frozenset[int], int] = {}
    open_digits: set[int] = set()
    out: list[str] = []

    def digit_token(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(u: int) -> None:
        out.append(_atom_token(g.atoms[u]))
        for p in ring_partners[u]:
            edge = frozenset((u, p))
            if edge in digit_for:
                d = digit_for[edge]
                out.append(digit_token(d))
                open_digits.discard(d)
            else:
                d = 1
                while d in open_digits:
                    d += 1
                if d > 99:
                    raise ValueError("too many simultaneous ring closures")
                digit_for[edge] = d
                open_digits.add(d)
                out.append(_bond_token(g, bond_of[edge], u, p) + digit_token(d))
        children = tree_children[u]
        for k, child in enumerate(children):
            bond = _bond_token(g, bond_of[frozenset((u, child))], u, child)
            if k < len(children) - 1:
                out.append("(" + bond)
                emit(child)
                out.append(")")
            else:
                out.append(bond)
                emit(child)

    emit(root)
    return "".join(out)


def canonical_smiles(s: str) -> str:
    return canonicalize(parse_smiles(s))
