"""SMILES reading and writing for a stereo-free subset.

Supported: organic-subset atoms (aromatic lowercase included), bracket
atoms with isotope, hydrogen count, charge and atom-map class, bond
symbols ``- = # :``, branches, ring closures ``1-9`` and ``%nn``, and
``.``-separated components.  Stereo marks (``@``, ``/``, ``\\``) are read
and discarded.  Hydrogen counts are not stored.

An implicit bond between two lowercase (aromatic) atoms is aromatic;
every other implicit bond is single.
"""

from __future__ import annotations

import numpy as np

from .graph import AROMATIC, DOUBLE, SINGLE, TRIPLE, AtomVocab, MolecularGraph

ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br
Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho
Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es
Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og
""".split())
ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")
BOND_CHARS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC, "/": SINGLE, "\\": SINGLE}
SYMBOL_OF_BOND = {SINGLE: "", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}


class SmilesError(ValueError):
    def __init__(self, message: str, text: str, offset: int):
        super().__init__(f"{message} at offset {offset} in {text!r}")
        self.text = text
        self.offset = offset


class _Reader:
    def __init__(self, text: str, vocab: AtomVocab):
        self.text = text
        self.vocab = vocab
        self.atoms: list[int] = []
        self.charges: list[int] = []
        self.aromatic: list[bool] = []
        self.maps: list[int] = []
        self.bonds: dict[tuple[int, int], int] = {}

    def fail(self, message: str, offset: int):
        raise SmilesError(message, self.text, offset)

    def add_atom(self, symbol: str, charge: int, aromatic: bool, amap: int, offset: int) -> int:
        try:
            idx = self.vocab.add(symbol, charge)
        except ValueError as exc:
            self.fail(str(exc), offset)
        self.atoms.append(idx)
        self.charges.append(charge)
        self.aromatic.append(aromatic)
        self.maps.append(amap)
        return len(self.atoms) - 1

    def add_bond(self, a: int, b: int, order: int | None, offset: int):
        if a == b:
            self.fail("atom bonded to itself", offset)
        key = (min(a, b), max(a, b))
        if key in self.bonds:
            self.fail("duplicate bond", offset)
        if order is None:
            order = AROMATIC if self.aromatic[a] and self.aromatic[b] else SINGLE
        self.bonds[key] = order

    def bracket(self, pos: int) -> tuple[int, int]:
        text, start = self.text, pos
        end = text.find("]", pos)
        if end < 0:
            self.fail("unterminated bracket atom", start)
        pos += 1
        while pos < end and text[pos].isdigit():  # isotope, ignored
            pos += 1
        aromatic = False
        symbol = None
        for cand in AROMATIC_BRACKET:
            if text.startswith(cand, pos):
                symbol, aromatic = cand.capitalize(), True
                pos += len(cand)
                break
        if symbol is None:
            if pos < end and text[pos].isupper():
                two = text[pos:pos + 2]
                if len(two) == 2 and two[1].islower() and two in ELEMENTS:
                    symbol = two
                else:
                    symbol = text[pos]
                pos += len(symbol)
            else:
                self.fail("missing element symbol", pos)
        if symbol not in ELEMENTS:
            self.fail(f"unknown element {symbol!r}", start + 1)
        while pos < end and text[pos] == "@":
            pos += 1
        if pos < end and text[pos] == "H":
            pos += 1
            while pos < end and text[pos].isdigit():
                pos += 1
        charge = 0
        if pos < end and text[pos] in "+-":
            sign = 1 if text[pos] == "+" else -1
            pos += 1
            if pos < end and text[pos].isdigit():
                num = ""
                while pos < end and text[pos].isdigit():
                    num += text[pos]
                    pos += 1
                charge = sign * int(num)
            else:
                charge = sign
                while pos < end and text[pos] == ("+" if sign > 0 else "-"):
                    charge += sign
                    pos += 1
        amap = 0
        if pos < end and text[pos] == ":":
            pos += 1
            num = ""
            while pos < end and text[pos].isdigit():
                num += text[pos]
                pos += 1
            if not num:
                self.fail("empty atom-map class", pos)
            amap = int(num)
        if pos != end:
            self.fail(f"unexpected {text[pos]!r} in bracket atom", pos)
        return self.add_atom(symbol, charge, aromatic, amap, start), end + 1

    def run(self):
        text = self.text
        pos = 0
        prev: int | None = None
        pending: tuple[int, int] | None = None  # (bond order, offset)
        branches: list[tuple[int, int]] = []  # (atom, offset of "(")
        rings: dict[int, tuple[int, int | None, int]] = {}
        while pos < len(text):
            ch = text[pos]
            if ch == "(":
                if prev is None:
                    self.fail("branch without a preceding atom", pos)
                branches.append((prev, pos))
                pos += 1
            elif ch == ")":
                if not branches:
                    self.fail("unbalanced ')'", pos)
                if pending is not None:
                    self.fail("bond symbol before ')'", pending[1])
                prev = branches.pop()[0]
                pos += 1
            elif ch in BOND_CHARS:
                if pending is not None:
                    self.fail("two consecutive bond symbols", pos)
                pending = (BOND_CHARS[ch], pos)
                pos += 1
            elif ch == ".":
                if pending is not None:
                    self.fail("bond symbol before '.'", pending[1])
                if branches:
                    self.fail("'.' inside a branch", pos)
                prev = None
                pos += 1
            elif ch.isdigit() or ch == "%":
                start = pos
                if ch == "%":
                    digits = text[pos + 1:pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        self.fail("'%' must be followed by two digits", pos)
                    label = int(digits)
                    pos += 3
                else:
                    label = int(ch)
                    pos += 1
                if prev is None:
                    self.fail("ring closure without a preceding atom", start)
                order = pending[0] if pending else None
                pending = None
                if label in rings:
                    other, other_order, _ = rings.pop(label)
                    if order is not None and other_order is not None and order != other_order:
                        self.fail("conflicting ring-closure bond orders", start)
                    self.add_bond(other, prev, order if order is not None else other_order, start)
                else:
                    rings[label] = (prev, order, start)
            elif ch == "[":
                atom, pos_next = self.bracket(pos)
                self._attach(prev, atom, pending, pos)
                prev, pending, pos = atom, None, pos_next
            elif ch.isalpha():
                symbol = None
                aromatic = False
                for cand in ORGANIC:
                    if text.startswith(cand, pos):
                        symbol = cand
                        break
                if symbol is None and ch in AROMATIC_ORGANIC:
                    symbol, aromatic = ch.upper(), True
                if symbol is None:
                    self.fail(f"unknown element {ch!r}", pos)
                atom = self.add_atom(symbol, 0, aromatic, 0, pos)
                self._attach(prev, atom, pending, pos)
                prev, pending = atom, None
                pos += 1 if aromatic else len(symbol)
            else:
                self.fail(f"unexpected character {ch!r}", pos)
        if pending is not None:
            self.fail("dangling bond symbol", pending[1])
        if branches:
            self.fail("unbalanced '('", branches[-1][1])
        if rings:
            label, (_, _, offset) = min(rings.items(), key=lambda kv: kv[1][2])
            self.fail(f"unmatched ring-closure {label}", offset)

    def _attach(self, prev, atom, pending, offset):
        if prev is not None:
            self.add_bond(prev, atom, pending[0] if pending else None, offset)
        elif pending is not None:
            self.fail("bond symbol without a preceding atom", pending[1])

    def graph(self) -> MolecularGraph:
        n = len(self.atoms)
        bonds = np.zeros((n, n), dtype=np.int64)
        for (a, b), order in self.bonds.items():
            bonds[a, b] = bonds[b, a] = order
        return MolecularGraph.build(self.atoms, bonds, self.charges)


def parse_smiles_mapped(text: str, vocab: AtomVocab) -> tuple[MolecularGraph, np.ndarray]:
    """Parse and also return the atom-map class of every atom (0 when absent)."""
    text = text.strip()
    if not text:
        raise SmilesError("empty SMILES", text, 0)
    reader = _Reader(text, vocab)
    reader.run()
    return reader.graph(), np.array(reader.maps, dtype=np.int64)


def parse_smiles(text: str, vocab: AtomVocab) -> MolecularGraph:
    """Parse ``text`` into an unpadded graph with atoms in parser order.

    New (element, charge) pairs are added to ``vocab`` unless it is frozen.
    """
    return parse_smiles_mapped(text, vocab)[0]


def _atom_token(vocab: AtomVocab, atom_type: int, amap: int) -> str:
    symbol, charge = vocab.symbol(atom_type), vocab.charge(atom_type)
    if charge == 0 and amap == 0 and symbol in ORGANIC:
        return symbol
    out = "[" + symbol
    if charge:
        out += ("+" if charge > 0 else "-") + (str(abs(charge)) if abs(charge) > 1 else "")
    if amap:
        out += f":{amap}"
    return out + "]"


def _ring_label(k: int) -> str:
    return str(k) if k < 10 else f"%{k:02d}"


def write_smiles(g: MolecularGraph, vocab: AtomVocab, atom_maps=None) -> str:
    """Write ``g`` (dummy slots skipped); components are joined with '.'.

    Every bond other than single is written explicitly, so the output never
    relies on aromatic perception.  ``atom_maps`` optionally tags atoms with
    map classes.
    """
    bonds = g.bond_types
    real = [int(i) for i in np.flatnonzero(g.node_mask)]
    amaps = np.zeros(g.n, dtype=np.int64) if atom_maps is None else np.asarray(atom_maps)
    visited: set[int] = set()
    parts = []
    for root in real:
        if root in visited:
            continue
        # pass 1: DFS tree, preorder and ring (back) edges
        children: dict[int, list[int]] = {}
        parent = {root: None}
        order = []
        discovered = set()

        def dfs(u):
            discovered.add(u)
            order.append(u)
            children[u] = []
            for v in np.flatnonzero(bonds[u]):
                v = int(v)
                if v not in discovered:
                    parent[v] = u
                    children[u].append(v)
                    dfs(v)

        dfs(root)
        visited |= discovered
        pos = {u: i for i, u in enumerate(order)}
        ring_edges = []
        for u in order:
            for v in np.flatnonzero(bonds[u]):
                v = int(v)
                if pos[v] > pos[u] and parent.get(v) != u:
                    ring_edges.append((u, v))

        # pass 2: emit with ring labels
        opens: dict[int, list[tuple[int, int]]] = {}
        closes: dict[int, list[int]] = {}
        for u, v in ring_edges:
            opens.setdefault(u, []).append((v, 0))
            closes.setdefault(v, []).append(u)
        labels: dict[tuple[int, int], int] = {}
        free: list[int] = []
        next_label = [1]

        def take_label():
            if free:
                free.sort()
                return free.pop(0)
            k = next_label[0]
            next_label[0] += 1
            return k

        def emit(u) -> str:
            s = _atom_token(vocab, int(g.atom_types[u]), int(amaps[u]))
            for other in closes.get(u, []):
                k = labels.pop((other, u))
                s += _ring_label(k)
                free.append(k)
            for v, _ in opens.get(u, []):
                k = take_label()
                labels[(u, v)] = k
                s += SYMBOL_OF_BOND[int(bonds[u, v])] + _ring_label(k)
            kids = children[u]
            for i, v in enumerate(kids):
                piece = SYMBOL_OF_BOND[int(bonds[u, v])] + emit(v)
                s += piece if i == len(kids) - 1 else f"({piece})"
            return s

        parts.append(emit(root))
    return ".".join(parts)
