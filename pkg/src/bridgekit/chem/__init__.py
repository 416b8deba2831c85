from .graph import (
    AROMATIC, DOUBLE, DUMMY, NO_BOND, NUM_BOND_TYPES, SINGLE, TRIPLE,
    AtomVocab, MolecularGraph, VocabOverflowError,
    find_isomorphism, graph_hash, graphs_equal, pad_and_permute,
)
from .smiles import SmilesError, parse_smiles, parse_smiles_mapped, write_smiles
from .teachers import morgan_fingerprint, wl_atom_embeddings

__all__ = [
    "AROMATIC", "DOUBLE", "DUMMY", "NO_BOND", "NUM_BOND_TYPES", "SINGLE", "TRIPLE",
    "AtomVocab", "MolecularGraph", "VocabOverflowError", "SmilesError",
    "find_isomorphism", "graph_hash", "graphs_equal", "pad_and_permute",
    "parse_smiles", "parse_smiles_mapped", "write_smiles",
    "morgan_fingerprint", "wl_atom_embeddings",
]
