"""Reaction records: ingestion of tab-separated SMILES files and a synthetic bond-cut task.

Line format: ``product<TAB>reactants[<TAB>class]``; blank lines and lines
starting with ``#`` are ignored.  Product and reactant atoms are aligned by
atom-map number when both sides carry maps, otherwise by parser order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chem import AtomVocab, MolecularGraph, SmilesError, parse_smiles_mapped, write_smiles
from .chem.graph import DOUBLE, NO_BOND, SINGLE
from .process import GraphState

log = logging.getLogger(__name__)

DUMMY_SLOTS = 10


@dataclass(eq=False)
class ReactionRecord:
    index: int
    product_smiles: str
    reactants_smiles: str
    reaction_class: int | None
    product: MolecularGraph  # N slots, shared permutation with reactants
    reactants: MolecularGraph
    reactant_order: np.ndarray  # slot -> reactant parser index, -1 where no reactant atom

    @property
    def n(self) -> int:
        return self.product.n


@dataclass
class IngestReport:
    data_lines: int = 0
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (1-based line, reason)
    oversize: int = 0

    def summary(self) -> str:
        return (f"{self.data_lines} lines: {self.accepted} accepted, {len(self.rejected)} rejected "
                f"({self.oversize} over the size cap)")


@dataclass
class _Aligned:
    line: int
    product_smiles: str
    reactants_smiles: str
    cls: int | None
    p_atoms: np.ndarray
    p_bonds: np.ndarray
    p_charges: np.ndarray
    r_atoms: np.ndarray
    r_bonds: np.ndarray
    r_charges: np.ndarray
    r_slot_of_parser: np.ndarray  # reactant parser index -> unpermuted slot

    @property
    def real(self) -> int:
        return len(self.p_atoms)


def align_pair(product: MolecularGraph, p_maps: np.ndarray, reactants: MolecularGraph,
               r_maps: np.ndarray) -> tuple[np.ndarray, int]:
    """Slot of every reactant atom; product atoms occupy slots ``0..n_p-1`` in parser order.

    Returns (slot per reactant atom, total slots used).
    """
    n_p, n_r = product.num_real, reactants.num_real
    slot_of_map = {int(m): k for k, m in enumerate(p_maps) if m > 0}
    use_maps = bool(slot_of_map) and np.any(np.asarray(r_maps) > 0)
    slots = np.empty(n_r, dtype=np.int64)
    taken: set[int] = set()
    nxt = n_p
    for r in range(n_r):
        k = slot_of_map.get(int(r_maps[r]), -1) if use_maps else (r if r < n_p else -1)
        if k < 0 or k in taken:
            k, nxt = nxt, nxt + 1
        taken.add(k)
        slots[r] = k
    return slots, max(nxt, n_p)


def _parse_line(line_no: int, text: str, vocab: AtomVocab) -> _Aligned:
    cols = text.rstrip("\n").split("\t")
    if len(cols) < 2 or len(cols) > 3:
        raise ValueError(f"expected 2 or 3 tab-separated columns, got {len(cols)}")
    p_smi, r_smi = cols[0].strip(), cols[1].strip()
    cls = None
    if len(cols) == 3 and cols[2].strip():
        try:
            cls = int(cols[2])
        except ValueError:
            raise ValueError(f"class column {cols[2]!r} is not an integer") from None
    gp, p_maps = parse_smiles_mapped(p_smi, vocab)
    gr, r_maps = parse_smiles_mapped(r_smi, vocab)
    if gp.num_real == 0 or gr.num_real == 0:
        raise ValueError("empty product or reactant set")
    slots, m = align_pair(gp, p_maps, gr, r_maps)

    def place(atoms, bonds, charges, where):
        a = np.zeros(m, dtype=np.int64)
        c = np.zeros(m, dtype=np.int64)
        b = np.zeros((m, m), dtype=np.int64)
        a[where] = atoms
        c[where] = charges
        b[np.ix_(where, where)] = bonds
        return a, b, c

    pa, pb, pc = place(gp.atom_types, gp.bond_types, gp.formal_charges, np.arange(gp.num_real))
    ra, rb, rc = place(gr.atom_types, gr.bond_types, gr.formal_charges, slots)
    return _Aligned(line_no, p_smi, r_smi, cls, pa, pb, pc, ra, rb, rc, slots)


def _finish(al: _Aligned, index: int, n: int) -> ReactionRecord:
    m = len(al.p_atoms)
    perm = np.random.default_rng(index).permutation(n)

    def graph(atoms, bonds, charges):
        return MolecularGraph.build(atoms, bonds, charges).pad(n).permute(perm)

    order = np.full(n, -1, dtype=np.int64)
    order[: m][al.r_slot_of_parser] = np.arange(len(al.r_slot_of_parser))
    return ReactionRecord(index, al.product_smiles, al.reactants_smiles, al.cls,
                          graph(al.p_atoms, al.p_bonds, al.p_charges),
                          graph(al.r_atoms, al.r_bonds, al.r_charges), order[perm])


def ingest_lines(lines: Iterable[str], vocab: AtomVocab | None = None, n_cap: int = 64,
                 dummies: int = DUMMY_SLOTS, n_fixed: int | None = None
                 ) -> tuple[AtomVocab, list[ReactionRecord], IngestReport]:
    """Parse, align, pad and permute every record.

    ``N`` is the largest aligned atom count plus ``dummies`` over accepted
    records (or ``n_fixed`` when given, e.g. to reuse a training ``N``);
    records needing more than ``n_cap`` slots are rejected.
    """
    vocab = vocab if vocab is not None else AtomVocab()
    report = IngestReport()
    parsed: list[_Aligned] = []
    cap = n_cap if n_fixed is None else min(n_cap, n_fixed)
    for line_no, raw in enumerate(lines, start=1):
        text = raw.strip("\r\n")
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        report.data_lines += 1
        snapshot = list(vocab.entries)
        try:
            al = _parse_line(line_no, text, vocab)
        except (SmilesError, ValueError) as exc:
            _rollback(vocab, snapshot)
            report.rejected.append((line_no, str(exc)))
            continue
        if al.real + dummies > cap:
            report.oversize += 1
            report.rejected.append((line_no, f"needs {al.real + dummies} slots, cap is {cap}"))
            continue
        parsed.append(al)
    report.accepted = len(parsed)
    n = n_fixed if n_fixed is not None else max((al.real for al in parsed), default=0) + dummies
    records = [_finish(al, i, n) for i, al in enumerate(parsed)]
    if report.rejected:
        log.warning("ingest: %s", report.summary())
    return vocab, records, report


def _rollback(vocab: AtomVocab, entries: list) -> None:
    """Drop vocabulary entries added by a line that was then rejected."""
    for key in vocab.entries[len(entries):]:
        vocab._index.pop(key, None)
    del vocab.entries[len(entries):]


def ingest(path, vocab: AtomVocab | None = None, n_cap: int = 64, dummies: int = DUMMY_SLOTS,
           n_fixed: int | None = None):
    with open(path, encoding="utf-8") as fh:
        return ingest_lines(fh, vocab, n_cap, dummies, n_fixed)


def collate(records: Sequence[ReactionRecord]) -> tuple[GraphState, GraphState]:
    """Batch (reactants, products)."""
    return (GraphState.from_graphs([r.reactants for r in records]),
            GraphState.from_graphs([r.product for r in records]))


# ---------------------------------------------------------------- synthetic task

ELEMENTS = ("C", "N", "O")
ELEMENT_WEIGHTS = (0.7, 0.15, 0.15)
VALENCE = {"C": 4, "N": 3, "O": 2}
PAIR_CLASS = {("C", "C"): 1, ("C", "N"): 2, ("C", "O"): 3, ("N", "N"): 4, ("N", "O"): 5, ("O", "O"): 6}


def _synth_vocab() -> AtomVocab:
    return AtomVocab([(e, 0) for e in ELEMENTS])


def random_molecule(rng: np.random.Generator, n_min: int = 4, n_max: int = 10,
                    ring_prob: float = 0.35, double_prob: float = 0.4) -> tuple[list[str], np.ndarray]:
    """Connected C/N/O molecule: a random tree, at most one ring, few double bonds.

    Heteroatoms never bond to each other.  Returns element symbols and a bond matrix.
    """
    n = int(rng.integers(n_min, n_max + 1))
    elems = ["C"] + [str(e) for e in rng.choice(ELEMENTS, size=n - 1, p=ELEMENT_WEIGHTS)]
    bonds = np.zeros((n, n), dtype=np.int64)
    used = np.zeros(n, dtype=np.int64)

    def free(i):
        return VALENCE[elems[i]] - used[i]

    def allowed(i, j):
        return elems[i] == "C" or elems[j] == "C"

    for i in range(1, n):
        cands = [j for j in range(i) if free(j) > 0 and allowed(i, j)]
        if not cands:
            elems[i] = "C"
            cands = [j for j in range(i) if free(j) > 0]
        j = int(rng.choice(cands))
        bonds[i, j] = bonds[j, i] = SINGLE
        used[i] += 1
        used[j] += 1

    if rng.random() < ring_prob and n >= 5:
        dist = _tree_distances(bonds)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if dist[i, j] in (4, 5) and free(i) > 0 and free(j) > 0 and allowed(i, j)]
        if pairs:
            i, j = pairs[int(rng.integers(len(pairs)))]
            bonds[i, j] = bonds[j, i] = SINGLE
            used[i] += 1
            used[j] += 1

    if rng.random() < double_prob:
        ring = _ring_edges(bonds)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if bonds[i, j] == SINGLE and (i, j) not in ring and free(i) > 0 and free(j) > 0]
        if pairs:
            i, j = pairs[int(rng.integers(len(pairs)))]
            bonds[i, j] = bonds[j, i] = DOUBLE
            used[i] += 1
            used[j] += 1
    return elems, bonds


def _tree_distances(bonds: np.ndarray) -> np.ndarray:
    n = len(bonds)
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in np.flatnonzero(bonds[u]):
                    if dist[s, v] < 0:
                        dist[s, v] = dist[s, u] + 1
                        nxt.append(int(v))
            frontier = nxt
    return dist


def _ring_edges(bonds: np.ndarray) -> set[tuple[int, int]]:
    """Edges whose removal keeps the graph connected."""
    n = len(bonds)
    out = set()
    for i in range(n):
        for j in range(i + 1, n):
            if bonds[i, j]:
                b = bonds.copy()
                b[i, j] = b[j, i] = NO_BOND
                if (_tree_distances(b)[0] >= 0).all():
                    out.add((i, j))
    return out


def choose_cut(elems: Sequence[str], bonds: np.ndarray, rng: np.random.Generator) -> tuple[int, int]:
    """A single bond to break: C-heteroatom outside rings, else C-C outside rings, else any ring single bond."""
    ring = _ring_edges(bonds)
    singles = [(i, j) for i in range(len(elems)) for j in range(i + 1, len(elems)) if bonds[i, j] == SINGLE]
    hetero = [e for e in singles if e not in ring and {elems[e[0]], elems[e[1]]} in ({"C", "N"}, {"C", "O"})]
    carbon = [e for e in singles if e not in ring and elems[e[0]] == elems[e[1]] == "C"]
    for pool in (hetero, carbon, [e for e in singles if e in ring], singles):
        if pool:
            return pool[int(rng.integers(len(pool)))]
    raise ValueError("molecule has no single bond to cut")


def bond_cut_reaction(rng: np.random.Generator, n_min: int = 4, n_max: int = 10) -> tuple[str, str, int]:
    """One synthetic (product, reactants, class) triple with atom maps."""
    vocab = _synth_vocab()
    elems, bonds = random_molecule(rng, n_min, n_max)
    n = len(elems)
    i, j = choose_cut(elems, bonds, rng)
    atoms = np.array([vocab.add(e) for e in elems])
    product = MolecularGraph.build(atoms, bonds)
    r_atoms = np.concatenate([atoms, [vocab.add("O"), vocab.add("O")]])
    r_bonds = np.zeros((n + 2, n + 2), dtype=np.int64)
    r_bonds[:n, :n] = bonds
    r_bonds[i, j] = r_bonds[j, i] = NO_BOND
    r_bonds[i, n] = r_bonds[n, i] = SINGLE
    r_bonds[j, n + 1] = r_bonds[n + 1, j] = SINGLE
    reactants = MolecularGraph.build(r_atoms, r_bonds)
    maps = np.arange(1, n + 1)
    p_smi = write_smiles(product, vocab, maps)
    r_smi = write_smiles(reactants, vocab, np.concatenate([maps, [0, 0]]))
    cls = PAIR_CLASS[tuple(sorted((elems[i], elems[j])))]
    return p_smi, r_smi, cls


def generate_synthetic(count: int, rng: np.random.Generator, rule: str = "bond-cut") -> list[str]:
    """Dataset lines for ``count`` synthetic reactions."""
    if rule != "bond-cut":
        raise ValueError(f"unknown synthetic rule {rule!r}")
    return ["\t".join((p, r, str(c))) for p, r, c in (bond_cut_reaction(rng) for _ in range(count))]


def write_lines(path, lines: Sequence[str], header: str | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for line in lines:
            fh.write(line + "\n")
