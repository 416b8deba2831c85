"""Deterministic teacher encoders: Morgan count fingerprints and WL atom embeddings."""

from __future__ import annotations

import numpy as np

from .graph import MolecularGraph
from .hashing import mix64, mix_many

# domain-separation tags so the two teachers never share identifiers
MORGAN_TAG = 0x4D4F5247  # "MORG"
WL_TAG = 0x574C454D  # "WLEM"


def morgan_atom_ids(g: MolecularGraph, radius: int) -> list[list[int]]:
    """Environment identifier of every real atom at radii 0..radius.

    ``out[r][k]`` is the identifier of the k-th real atom (slot order) at radius r.
    """
    real = np.flatnonzero(g.node_mask)
    degree = (g.bond_types != 0).sum(axis=1)
    ids = {int(i): mix_many((MORGAN_TAG, int(g.atom_types[i]), int(g.formal_charges[i]), int(degree[i])))
           for i in real}
    out = [[ids[int(i)] for i in real]]
    for r in range(1, radius + 1):
        nxt = {}
        for i in real:
            nbrs = sorted((int(g.bond_types[i, j]), ids[int(j)]) for j in np.flatnonzero(g.bond_types[i]))
            nxt[int(i)] = mix_many([r, ids[int(i)]] + [x for pair in nbrs for x in pair])
        ids = nxt
        out.append([ids[int(i)] for i in real])
    return out


def morgan_fingerprint(g: MolecularGraph, radius: int = 2, n_bits: int = 2048) -> np.ndarray:
    """Count vector: every atom environment at every radius, folded modulo ``n_bits``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if n_bits <= 0 or n_bits & (n_bits - 1):
        raise ValueError("n_bits must be a power of two")
    fp = np.zeros(n_bits, dtype=np.float64)
    for layer in morgan_atom_ids(g, radius):
        for ident in layer:
            fp[ident % n_bits] += 1.0
    return fp


def wl_colours(g: MolecularGraph, iterations: int) -> list[dict[int, int]]:
    """WL colour of every real atom after 0..iterations refinement rounds."""
    real = [int(i) for i in np.flatnonzero(g.node_mask)]
    col = {i: mix_many((WL_TAG, int(g.atom_types[i]), int(g.formal_charges[i]))) for i in real}
    history = [col]
    for _ in range(iterations):
        nxt = {}
        for i in real:
            nbrs = sorted((int(g.bond_types[i, j]), col[int(j)]) for j in np.flatnonzero(g.bond_types[i]))
            nxt[i] = mix_many([col[i]] + [x for pair in nbrs for x in pair])
        col = nxt
        history.append(col)
    return history


def wl_atom_embeddings(g: MolecularGraph, iterations: int = 3, dim: int = 256) -> np.ndarray:
    """Per-atom signed hashed embedding of the atom's WL colour history.

    Rows follow the order of real atoms in ``g``.  Colour ``c`` from round
    ``k`` adds ``+-1`` to bucket ``mix(c, k) mod dim``, the sign taken from
    the top bit of a second mix.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if dim < 8:
        raise ValueError("dim must be >= 8")
    history = wl_colours(g, iterations)
    real = [int(i) for i in np.flatnonzero(g.node_mask)]
    out = np.zeros((len(real), dim), dtype=np.float64)
    for k, col in enumerate(history):
        for row, i in enumerate(real):
            h = mix_many((col[i], k))
            sign = 1.0 if mix64(h) >> 63 else -1.0
            out[row, h % dim] += sign
    return out
