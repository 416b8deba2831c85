"""Candidate sampling, deduplication, similarity scoring, reranking and metrics.

Sampling runs ``n`` reverse trajectories per product from the product
endpoint down to ``t = 0``.  Decoded graphs are deduplicated up to
isomorphism; a candidate's frequency is ``f = c / n``.  For guided models
the similarity ``s`` averages ``(cos + 1) / 2`` between the student
projections and the teacher targets of the decoded candidate over the last
``K`` model evaluations, and the fused score is ``w_f * f + w_s * s``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from . import tensor as T
from .chem import MolecularGraph, find_isomorphism, graph_hash, write_smiles
from .guidance import instance_normalize, l2_rows
from .model import RetroModel
from .process import NUM_CLASSES, GraphState, token_reverse_continuous, token_reverse_discrete
from .tensor import Tensor

FUSION = (0.85, 0.15)
WINDOW = 10


@dataclass
class Candidate:
    graph: MolecularGraph
    count: int
    first: int  # index of the first draw that produced it
    draws: list[int] = field(default_factory=list)
    f: float = 0.0
    s: float = 0.0
    score: float = 0.0

    @property
    def empty(self) -> bool:
        return self.graph.num_real == 0


@dataclass
class CandidateSet:
    product: MolecularGraph
    entries: list[Candidate]
    n: int

    def check(self) -> None:
        assert sum(e.count for e in self.entries) == self.n


def fuse(f: float, s: float, weights: tuple[float, float] = FUSION) -> float:
    return weights[0] * f + weights[1] * s


def window_similarity(cosines: np.ndarray) -> float:
    """``mean_t (s_t + 1) / 2`` over the window, clamped to [0, 1]."""
    cosines = np.asarray(cosines, dtype=np.float64)
    return float(np.clip(np.mean((cosines + 1.0) / 2.0), 0.0, 1.0))


def dedup(graphs: Sequence[MolecularGraph]) -> tuple[list[Candidate], list[dict[int, int] | None]]:
    """Group draws into isomorphism classes in first-seen order.

    Also returns, per draw, the slot mapping from that draw's graph onto its
    candidate's representative graph.
    """
    entries: list[Candidate] = []
    buckets: dict[int, list[int]] = {}
    maps: list[dict[int, int] | None] = []
    for d, g in enumerate(graphs):
        h = graph_hash(g)
        hit = None
        for ci in buckets.get(h, ()):
            m = find_isomorphism(g, entries[ci].graph)
            if m is not None:
                hit = ci
                break
        if hit is None:
            buckets.setdefault(h, []).append(len(entries))
            entries.append(Candidate(g, 0, d))
            m = {int(i): int(i) for i in np.flatnonzero(g.node_mask)}
            hit = len(entries) - 1
        entries[hit].count += 1
        entries[hit].draws.append(d)
        maps.append(m)
    return entries, maps


@dataclass
class _Window:
    """Per-step student features retained for similarity, each of shape (chains, ...)."""

    graph: list = field(default_factory=list)  # projected first global token (chains, d_T)
    node: list = field(default_factory=list)  # projected node features (chains, N, d_T)
    X: list = field(default_factory=list)
    E: list = field(default_factory=list)


def _run_chains(model: RetroModel, products: GraphState, rng: np.random.Generator, window: int) -> tuple[GraphState, _Window]:
    """Reverse trajectories for a batch of padded product states (one chain per row)."""
    proc = model.process
    Tn = proc.T
    B = len(products)
    state = GraphState(products.atoms.copy(), products.bonds.copy())
    cfg = model.gcfg
    mode = model.denoiser.cfg.token_mode
    token = None
    if mode == "discrete":
        token = rng.integers(1, NUM_CLASSES + 1, size=B)
    elif mode == "continuous":
        token = rng.standard_normal((B, model.denoiser.cfg.token_dim))
    win = _Window()
    with T.no_grad():
        for t in range(Tn, 0, -1):
            feats = model.denoiser.embed(state, products, t, Tn, token)
            trace = model.denoiser(feats)
            if model.guided and t <= window:
                X, E, Y = trace.layer(cfg.align_layer)
                if cfg.scheme == "align_graph":
                    ep = "R" if "R" in cfg.endpoints else cfg.endpoints[0]
                    win.graph.append(model.heads.graph_heads[ep](T.take(Y, 0, axis=1)).data)
                elif cfg.scheme == "align_node":
                    win.node.append(model.heads.node_head(X).data)
                else:
                    win.X.append(X.data)
                    win.E.append(E.data)
            state = proc.reverse_step(trace.atom_probs(), trace.bond_probs(), state, products, t, rng)
            if mode == "discrete":
                token = token_reverse_discrete(_softmax(trace.token_out.data), token, t, model.token_kernel, rng)
            elif mode == "continuous":
                token = token_reverse_continuous(trace.token_out.data.astype(np.float64), token, t,
                                                 proc.schedule, rng)
    return state, win


def _softmax(z):
    z = z.astype(np.float64) - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _cos_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine along the last axis, zero where either side vanishes."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    den = na * nb
    return np.divide((a * b).sum(axis=-1), den, out=np.zeros_like(den), where=den > 0)


def _node_targets(model: RetroModel, cand: MolecularGraph) -> np.ndarray:
    """Teacher rows for the candidate in its own slot order (zeros at dummy slots)."""
    rows = model.store.atom_target_rows(cand)
    out = np.zeros((cand.n, rows.shape[1]))
    out[cand.node_mask] = rows
    if model.gcfg.scheme == "grg":
        out = instance_normalize(out, cand.component_ids, cand.node_mask)
    return out


def _similarities(model: RetroModel, cset: CandidateSet, maps, graphs, win: _Window, rows: slice) -> None:
    """Fill ``s`` for each candidate by averaging over its occurrences."""
    cfg = model.gcfg
    student_nodes = None
    if cfg.scheme in ("align_node", "grg"):
        if cfg.scheme == "align_node":
            student_nodes = [w[rows] for w in win.node]
        else:
            bonds = np.stack([g.bond_types for g in graphs])
            with T.no_grad():
                student_nodes = [
                    model.heads.node_head(model.heads.edge_gin(Tensor(X[rows]), Tensor(E[rows]), bonds)).data
                    for X, E in zip(win.X, win.E)
                ]
    for cand in cset.entries:
        if cand.empty:
            cand.s = 0.0
            continue
        per_draw = []
        if cfg.scheme == "align_graph":
            ep = "R" if "R" in cfg.endpoints else cfg.endpoints[0]
            target = model.store.graph_target(cand.graph, ep)
            for d in cand.draws:
                per_draw.append(window_similarity([_cos_rows(w[rows][d], target) for w in win.graph]))
        else:
            rep_rows = _node_targets(model, cand.graph)
            for d in cand.draws:
                g = graphs[d]
                occ = np.zeros_like(rep_rows)
                for slot, rep_slot in maps[d].items():
                    occ[slot] = rep_rows[rep_slot]
                mask = g.node_mask
                cos_t = [float(_cos_rows(s[d][mask], l2_rows(occ[mask])).mean()) for s in student_nodes]
                per_draw.append(window_similarity(cos_t))
        cand.s = float(np.mean(per_draw))


def sample_sets(model: RetroModel, products: Sequence[MolecularGraph], n: int, rng: np.random.Generator,
                window: int = WINDOW) -> list[CandidateSet]:
    """Candidate sets for several products, all chains advanced in one batch."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if any(p.n != model.N for p in products):
        raise ValueError(f"products must be padded to N={model.N}")
    prods = GraphState.from_graphs([p for p in products for _ in range(n)])
    final, win = _run_chains(model, prods, rng, window)
    out = []
    for k, product in enumerate(products):
        rows = slice(k * n, (k + 1) * n)
        graphs = [final.graph(b, model.vocab) for b in range(rows.start, rows.stop)]
        entries, maps = dedup(graphs)
        for e in entries:
            e.f = e.count / n
        cset = CandidateSet(product, entries, n)
        if model.guided and model.store is not None:
            _similarities(model, cset, maps, graphs, win, rows)
        for e in entries:
            e.score = fuse(e.f, e.s)
        out.append(cset)
    return out


def sample_candidates(model: RetroModel, product: MolecularGraph, n: int, rng: np.random.Generator,
                      window: int = WINDOW) -> CandidateSet:
    return sample_sets(model, [product], n, rng, window)[0]


def rerank(cset: CandidateSet, weights: tuple[float, float] = FUSION) -> list[Candidate]:
    """Descending fused score; ties by higher f, then nonempty first, then first-sampled order."""
    for e in cset.entries:
        e.score = fuse(e.f, e.s, weights)
    return sorted(cset.entries, key=lambda e: (-e.score, -e.f, e.empty, e.first))


def frequency_rank(cset: CandidateSet) -> list[Candidate]:
    return sorted(cset.entries, key=lambda e: (-e.f, e.empty, e.first))


def top_k_exact_match(ranked: Sequence[Sequence[MolecularGraph]], truths: Sequence[MolecularGraph], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not truths:
        return 0.0
    hits = 0
    for cands, truth in zip(ranked, truths):
        if any(find_isomorphism(g, truth) is not None for g in list(cands)[:k]):
            hits += 1
    return hits / len(truths)


def truth_ranks(ranked: Sequence[Sequence[MolecularGraph]], truths: Sequence[MolecularGraph]) -> list[int | None]:
    """1-based rank of the ground truth in each list, or None."""
    out = []
    for cands, truth in zip(ranked, truths):
        r = next((i + 1 for i, g in enumerate(cands) if find_isomorphism(g, truth) is not None), None)
        out.append(r)
    return out


def diversity(sets: Sequence[CandidateSet]) -> float:
    return float(np.mean([len(s.entries) for s in sets])) if sets else 0.0


def write_candidates(fh: TextIO, cset: CandidateSet, ranked: Sequence[Candidate], vocab, product_smiles: str | None = None) -> None:
    if product_smiles is None:
        product_smiles = write_smiles(cset.product.compact()[0], vocab)
    fh.write(f"#product {product_smiles}\n")
    for rank, e in enumerate(ranked, start=1):
        smi = write_smiles(e.graph.compact()[0], vocab) if not e.empty else ""
        fh.write(f"{rank}\t{e.score:.6f}\t{e.f:.6f}\t{e.s:.6f}\t{e.count}\t{smi}\n")


# ---------------------------------------------------------------- evaluation

TOP_K = (1, 3, 5, 10)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("BRIDGEKIT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EvalResult:
    sets: list[CandidateSet]
    freq_ranks: list
    rerank_ranks: list | None

    def table(self, ranks) -> dict[str, float]:
        n = len(ranks)
        row = {f"Top-{k}": sum(1 for r in ranks if r is not None and r <= k) / n for k in TOP_K}
        row["Diversity"] = diversity(self.sets)
        return row

    def report(self) -> dict[str, dict[str, float]]:
        out = {"frequency": self.table(self.freq_ranks)}
        if self.rerank_ranks is not None:
            out["rerank"] = self.table(self.rerank_ranks)
        return out


def evaluate(model: RetroModel, products: Sequence[MolecularGraph], truths: Sequence[MolecularGraph], n: int,
             seed: int, rerank_weights: tuple[float, float] | None = None, chunk: int = 25,
             window: int = WINDOW, workers: int | None = None) -> EvalResult:
    """Sample, rank and score every product.

    Products are processed in fixed chunks with an RNG per chunk, so results do
    not depend on the worker count.
    """
    if rerank_weights is not None and not model.guided:
        raise ValueError("reranking needs a model trained with alignment guidance heads")
    chunks = [list(range(i, min(i + chunk, len(products)))) for i in range(0, len(products), chunk)]

    def run(ci):
        idx = chunks[ci]
        rng = np.random.default_rng([seed, ci])
        return sample_sets(model, [products[i] for i in idx], n, rng, window)

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(chunks))))
    else:
        results = [run(ci) for ci in range(len(chunks))]
    sets = [s for r in results for s in r]
    freq = truth_ranks([[e.graph for e in frequency_rank(s)] for s in sets], truths)
    rr = None
    if rerank_weights is not None:
        rr = truth_ranks([[e.graph for e in rerank(s, rerank_weights)] for s in sets], truths)
    return EvalResult(sets, freq, rr)
