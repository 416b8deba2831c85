"""Padded dense molecular graphs, atom vocabularies and labeled-graph isomorphism."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hashing import mix_many

# bond categories; 0 means "no bond"
NO_BOND, SINGLE, DOUBLE, TRIPLE, AROMATIC = range(5)
BOND_SYMBOLS = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}
NUM_BOND_TYPES = 5

DUMMY = 0


class VocabOverflowError(ValueError):
    pass


class AtomVocab:
    """(element, formal charge) pairs; index 0 is the dummy/absent category."""

    def __init__(self, entries: Sequence[tuple[str, int]] = (), max_size: int | None = None,
                 frozen: bool = False):
        self.entries: list[tuple[str, int]] = [("*", 0)]
        self._index: dict[tuple[str, int], int] = {}
        self.max_size = max_size
        self.frozen = False
        for sym, chg in entries:
            self.add(sym, chg)
        self.frozen = frozen

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, AtomVocab) and self.entries == other.entries

    def add(self, symbol: str, charge: int = 0) -> int:
        key = (symbol, int(charge))
        if key in self._index:
            return self._index[key]
        if self.frozen:
            raise VocabOverflowError(f"atom {symbol}{charge:+d} not in frozen vocabulary")
        if self.max_size is not None and len(self.entries) >= self.max_size:
            raise VocabOverflowError(f"vocabulary full ({self.max_size}) adding {symbol}{charge:+d}")
        self.entries.append(key)
        self._index[key] = len(self.entries) - 1
        return self._index[key]

    def symbol(self, idx: int) -> str:
        return self.entries[idx][0]

    def charge(self, idx: int) -> int:
        return self.entries[idx][1]

    def charges(self, atom_types: np.ndarray) -> np.ndarray:
        table = np.array([c for _, c in self.entries], dtype=np.int64)
        return table[np.asarray(atom_types)]

    def freeze(self) -> "AtomVocab":
        self.frozen = True
        return self

    def to_json(self) -> str:
        return json.dumps({"entries": self.entries[1:], "max_size": self.max_size})

    @classmethod
    def from_json(cls, text: str) -> "AtomVocab":
        obj = json.loads(text)
        return cls([tuple(e) for e in obj["entries"]], max_size=obj.get("max_size"), frozen=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "AtomVocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def connected_components(bond_types: np.ndarray, node_mask: np.ndarray) -> np.ndarray:
    """Component label per node (-1 for masked slots), numbered by lowest member index."""
    n = len(node_mask)
    comp = np.full(n, -1, dtype=np.int64)
    adj = bond_types != NO_BOND
    label = 0
    for start in range(n):
        if not node_mask[start] or comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = label
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u]):
                if node_mask[v] and comp[v] < 0:
                    comp[v] = label
                    stack.append(v)
        label += 1
    return comp


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MolecularGraph:
    atom_types: np.ndarray
    bond_types: np.ndarray
    node_mask: np.ndarray
    component_ids: np.ndarray
    formal_charges: np.ndarray

    @classmethod
    def build(cls, atom_types, bond_types, formal_charges=None) -> "MolecularGraph":
        """Build from raw arrays; the mask and components are derived from ``atom_types``.

        Bonds touching dummy slots and self-bonds are dropped.
        """
        atoms = np.asarray(atom_types, dtype=np.int64)
        bonds = np.array(bond_types, dtype=np.int64)
        n = len(atoms)
        if bonds.shape != (n, n):
            raise ValueError(f"bond matrix shape {bonds.shape} does not match {n} atoms")
        if not np.array_equal(bonds, bonds.T):
            raise ValueError("bond matrix is not symmetric")
        mask = atoms != DUMMY
        bonds[~mask, :] = NO_BOND
        bonds[:, ~mask] = NO_BOND
        np.fill_diagonal(bonds, NO_BOND)
        charges = np.zeros(n, dtype=np.int64) if formal_charges is None else np.asarray(formal_charges, dtype=np.int64)
        charges = np.where(mask, charges, 0)
        comp = connected_components(bonds, mask)
        return cls(_frozen(atoms, np.int64), _frozen(bonds, np.int64), _frozen(mask, bool),
                   _frozen(comp, np.int64), _frozen(charges, np.int64))

    @property
    def n(self) -> int:
        return len(self.atom_types)

    @property
    def num_real(self) -> int:
        return int(self.node_mask.sum())

    @property
    def num_components(self) -> int:
        return int(self.component_ids.max()) + 1 if self.num_real else 0

    def validate(self) -> None:
        b = self.bond_types
        assert np.array_equal(b, b.T), "bond matrix not symmetric"
        assert not np.any(np.diag(b)), "self bond"
        assert not np.any(b[~self.node_mask]), "bond incident to masked slot"
        assert np.all(self.atom_types[~self.node_mask] == DUMMY), "masked slot with atom"
        assert np.array_equal(self.component_ids, connected_components(b, self.node_mask))

    def compact(self) -> tuple["MolecularGraph", np.ndarray]:
        """Drop dummy slots.  Returns the unpadded graph and the kept slot indices."""
        keep = np.flatnonzero(self.node_mask)
        g = MolecularGraph.build(self.atom_types[keep], self.bond_types[np.ix_(keep, keep)],
                                 self.formal_charges[keep])
        return g, keep

    def component(self, label: int) -> "MolecularGraph":
        keep = np.flatnonzero(self.component_ids == label)
        return MolecularGraph.build(self.atom_types[keep], self.bond_types[np.ix_(keep, keep)],
                                    self.formal_charges[keep])

    def components(self) -> list["MolecularGraph"]:
        return [self.component(c) for c in range(self.num_components)]

    def permute(self, perm: Sequence[int]) -> "MolecularGraph":
        """New graph whose slot ``j`` holds old slot ``perm[j]``."""
        perm = np.asarray(perm)
        return MolecularGraph.build(self.atom_types[perm], self.bond_types[np.ix_(perm, perm)],
                                    self.formal_charges[perm])

    def pad(self, target_n: int) -> "MolecularGraph":
        if target_n < self.n:
            raise ValueError(f"cannot pad {self.n} slots down to {target_n}")
        extra = target_n - self.n
        atoms = np.concatenate([self.atom_types, np.zeros(extra, dtype=np.int64)])
        charges = np.concatenate([self.formal_charges, np.zeros(extra, dtype=np.int64)])
        bonds = np.zeros((target_n, target_n), dtype=np.int64)
        bonds[: self.n, : self.n] = self.bond_types
        return MolecularGraph.build(atoms, bonds, charges)


def pad_and_permute(g: MolecularGraph, target_n: int, rng_seed: int) -> tuple[MolecularGraph, np.ndarray]:
    """Pad ``g`` with dummy slots and shuffle all slots.

    The returned index vector gives, for every slot ``j``, the original atom
    index now stored there, or -1 for dummy slots.
    """
    if target_n < g.num_real:
        raise ValueError(f"target_n={target_n} smaller than {g.num_real} real atoms")
    compact, kept = g.compact()
    padded = compact.pad(target_n)
    perm = np.random.default_rng(rng_seed).permutation(target_n)
    source = np.concatenate([kept, np.full(target_n - len(kept), -1)]).astype(np.int64)
    return padded.permute(perm), source[perm]


# ---------------------------------------------------------------- isomorphism


def _refine(graphs: Sequence[MolecularGraph], rounds: int | None = None) -> list[np.ndarray]:
    """Joint 1-WL colour refinement so colours are comparable across graphs."""
    cols = [
        np.array([mix_many((int(a), int(c))) if m else 0 for a, c, m in zip(g.atom_types, g.formal_charges, g.node_mask)],
                 dtype=np.uint64)
        for g in graphs
    ]
    max_rounds = rounds if rounds is not None else max(g.n for g in graphs)
    for _ in range(max_rounds):
        new_cols = []
        for g, col in zip(graphs, cols):
            nxt = np.zeros_like(col)
            for i in np.flatnonzero(g.node_mask):
                nbrs = np.flatnonzero(g.bond_types[i])
                sig = sorted((int(g.bond_types[i, j]), int(col[j])) for j in nbrs)
                nxt[i] = mix_many([int(col[i])] + [x for pair in sig for x in pair])
            new_cols.append(nxt)
        # stop once the partition of every graph is stable
        stable = all(
            len(set(c[g.node_mask].tolist())) == len(set(n[g.node_mask].tolist()))
            for g, c, n in zip(graphs, cols, new_cols)
        )
        cols = new_cols
        if stable:
            break
    return cols


def find_isomorphism(a: MolecularGraph, b: MolecularGraph) -> dict[int, int] | None:
    """Map from real slots of ``a`` to real slots of ``b`` preserving labels, or None."""
    ra, rb = np.flatnonzero(a.node_mask), np.flatnonzero(b.node_mask)
    if len(ra) != len(rb):
        return None
    if len(ra) == 0:
        return {}
    if Counter(a.bond_types[np.triu_indices(a.n, 1)].tolist()) != Counter(b.bond_types[np.triu_indices(b.n, 1)].tolist()):
        return None
    ca, cb = _refine([a, b])
    if Counter(ca[ra].tolist()) != Counter(cb[rb].tolist()):
        return None

    # visit a's atoms so each (after the first of a component) touches a mapped neighbour
    order: list[int] = []
    seen: set[int] = set()
    for start in sorted(ra, key=lambda i: (Counter(ca[ra].tolist())[ca[i]], i)):
        if start in seen:
            continue
        queue = [start]
        seen.add(start)
        while queue:
            u = queue.pop(0)
            order.append(u)
            for v in np.flatnonzero(a.bond_types[u]):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)

    by_colour: dict[int, list[int]] = {}
    for j in rb:
        by_colour.setdefault(int(cb[j]), []).append(int(j))
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def consistent(u: int, v: int) -> bool:
        for u2, v2 in mapping.items():
            if a.bond_types[u, u2] != b.bond_types[v, v2]:
                return False
        return True

    def search(k: int) -> bool:
        if k == len(order):
            return True
        u = int(order[k])
        for v in by_colour.get(int(ca[u]), ()):
            if v in used or not consistent(u, v):
                continue
            mapping[u] = v
            used.add(v)
            if search(k + 1):
                return True
            del mapping[u]
            used.discard(v)
        return False

    return dict(mapping) if search(0) else None


def graphs_equal(a: MolecularGraph, b: MolecularGraph) -> bool:
    return find_isomorphism(a, b) is not None


def graph_hash(g: MolecularGraph) -> int:
    """Isomorphism-invariant hash, used to bucket candidates before exact comparison."""
    (col,) = _refine([g], rounds=3)
    return mix_many(sorted(int(c) for c in col[g.node_mask]))
