"""Teacher targets and the auxiliary objectives that align denoiser features with them.

Schemes:

* ``align_graph``: project the first global token at the alignment layer and
  match the whitened Morgan set embedding of the reactants.
* ``align_node``: project every node feature and match whitened WL atom
  embeddings on real reactant atoms.
* ``grg``: refine node features by bond-aware message passing over the clean
  reactant bonds, then match instance-normalized WL atom embeddings.
* ``reg_discrete`` / ``reg_continuous``: corrupt an auxiliary token alongside
  the graph and predict its clean value.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .chem import MolecularGraph, morgan_fingerprint, wl_atom_embeddings
from .chem.hashing import mix_many
from .nn import MLP, Module
from .tensor import Parameter, Tensor

SCHEMES = ("none", "align_graph", "align_node", "grg", "reg_discrete", "reg_continuous")
TEACHER_IDS = {"morgan": 1, "wl": 2}
INSTANCE_EPS = 1e-5
WHITEN_FLOOR = 1e-6


@dataclass
class GuidanceConfig:
    scheme: str = "none"
    endpoints: tuple[str, ...] = ("R",)
    align_layer: int = 4
    lam_align: float = 0.5
    lam_z: float = 1.0
    gin_rounds: int = 2
    d_T: int = 64
    morgan_radius: int = 2
    morgan_bits: int = 2048
    wl_iterations: int = 3
    wl_dim: int = 256

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown guidance scheme {self.scheme!r}")
        if not set(self.endpoints) <= {"P", "R"} or not self.endpoints:
            raise ValueError(f"endpoint set must be a nonempty subset of {{P, R}}, got {self.endpoints}")
        if self.lam_align < 0 or self.lam_z < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.gin_rounds < 0:
            raise ValueError("gin_rounds must be >= 0")

    @property
    def teacher(self) -> str | None:
        if self.scheme in ("align_graph", "reg_continuous"):
            return "morgan"
        if self.scheme in ("align_node", "grg"):
            return "wl"
        return None

    @property
    def uses_alignment(self) -> bool:
        return self.scheme in ("align_graph", "align_node", "grg")

    @property
    def token_mode(self) -> str | None:
        return {"reg_discrete": "discrete", "reg_continuous": "continuous"}.get(self.scheme)


# ---------------------------------------------------------------- whitening


@dataclass
class Whitening:
    mean: np.ndarray  # (D,)
    proj: np.ndarray  # (D, out_dim)
    dropped: int = 0  # retained axes zeroed for lack of rank

    @property
    def out_dim(self) -> int:
        return self.proj.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.proj

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Whiten then L2-normalize rows."""
        return l2_rows(self.apply(x))


def l2_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def fit_whitening(corpus: np.ndarray, out_dim: int) -> Whitening:
    """PCA whitening onto the top ``out_dim`` axes with unit sample variance."""
    X = np.asarray(corpus, dtype=np.float64)
    n, D = X.shape
    if n < out_dim:
        raise ValueError(f"whitening needs at least {out_dim} rows, got {n}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    sd = s / np.sqrt(max(n - 1, 1))
    k = min(out_dim, len(sd))
    proj = np.zeros((D, out_dim))
    tol = max(sd[0] if len(sd) else 0.0, 1.0) * 1e-9
    keep = sd[:k] > tol
    proj[:, :k] = vt[:k].T / np.maximum(sd[:k], WHITEN_FLOOR)
    proj[:, :k][:, ~keep] = 0.0
    dropped = out_dim - int(keep.sum())
    if dropped:
        warnings.warn(f"whitening corpus has rank {int(keep.sum())} < {out_dim}; padding with zero axes")
    return Whitening(mean, proj, dropped)


# ---------------------------------------------------------------- teacher features


def component_sum(components: Sequence[MolecularGraph], encoder) -> np.ndarray:
    if not components:
        raise ValueError("empty reactant set")
    return np.sum([encoder(c) for c in components], axis=0)


def set_embedding(components: Sequence[MolecularGraph], whitening: Whitening | None = None,
                  radius: int = 2, n_bits: int = 2048) -> np.ndarray:
    """Sum of per-molecule Morgan vectors, optionally whitened and normalized."""
    raw = component_sum(components, lambda g: morgan_fingerprint(g, radius, n_bits))
    return raw if whitening is None else whitening(raw[None])[0]


def instance_normalize(atom_vecs: np.ndarray, component_ids: np.ndarray, mask: np.ndarray,
                       eps: float = INSTANCE_EPS) -> np.ndarray:
    """Standardize each feature within each component over that component's real atoms."""
    out = np.zeros_like(atom_vecs, dtype=np.float64)
    for c in np.unique(component_ids[mask]):
        rows = mask & (component_ids == c)
        h = atom_vecs[rows]
        mu = h.mean(axis=0)
        sigma = h.std(axis=0)
        out[rows] = (h - mu) / (sigma + eps)
    return out


# ---------------------------------------------------------------- modules


class GuidanceHeads(Module):
    """Projection heads, EdgeGIN projector and the parameters it owns."""

    def __init__(self, cfg: GuidanceConfig, d_x: int, d_e: int, d_y: int, K_b: int, seed: int = 0,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__("guide", dtype)
        self.cfg = cfg
        self.K_b = K_b
        rng = np.random.default_rng(seed + 7919)
        dT = cfg.d_T
        self.graph_heads: dict[str, MLP] = {}
        self.node_head = None
        self.edge_enc = None
        self.gin_mlps: list[MLP] = []
        self.gin_eps: list[Parameter] = []
        if cfg.scheme == "align_graph":
            for ep in cfg.endpoints:
                self.graph_heads[ep] = self.child(MLP(f"guide.graph_{ep}", d_y, 2 * dT, dT, rng, dtype))
        elif cfg.scheme == "align_node":
            self.node_head = self.child(MLP("guide.node", d_x, 2 * dT, dT, rng, dtype))
        elif cfg.scheme == "grg":
            self.edge_enc = self.child(MLP("guide.edge_enc", d_e + K_b, d_x, d_x, rng, dtype))
            for k in range(cfg.gin_rounds):
                self.gin_mlps.append(self.child(MLP(f"guide.gin{k + 1}", d_x, d_x, d_x, rng, dtype)))
                self.gin_eps.append(self.param(f"gin{k + 1}_eps", np.zeros(1)))
            self.node_head = self.child(MLP("guide.node", d_x, 2 * dT, dT, rng, dtype))

    def edge_gin(self, X: Tensor, E: Tensor, bonds: np.ndarray) -> Tensor:
        """Bond-aware message passing restricted to the given bond matrix (B, N, N)."""
        return edge_gin_project(X, E, bonds, self.edge_enc, self.gin_mlps, self.gin_eps, self.K_b)


def edge_gin_project(X: Tensor, E: Tensor, bonds: np.ndarray, edge_enc, mlps: Sequence, eps: Sequence[Tensor],
                     K_b: int) -> Tensor:
    """``h_v <- MLP_k((1 + eps_k) h_v + sum_{u ~ v} relu(h_u + e_uv))`` for each round.

    Messages flow only along bonds present in ``bonds`` (B, N, N); edge
    embeddings are computed for those bonded pairs alone.
    """
    if len(mlps) != len(eps):
        raise ValueError("one epsilon per round required")
    bonds = np.asarray(bonds)
    B, N, d = X.shape
    b, v, u = np.nonzero(bonds)
    onehot = Tensor(np.eye(K_b, dtype=X.data.dtype)[bonds[b, v, u]])
    e = edge_enc(T.concat([T.gather_rows(E, (b, v, u)), onehot], axis=-1))  # (M, d_x)
    h = X
    for mlp, ep in zip(mlps, eps):
        msg = T.relu(T.add(T.gather_rows(h, (b, u)), e))
        agg = T.scatter_rows(msg, (b, v), (B, N, d))
        h = mlp(T.add(T.add(h, T.mul_scalar_tensor(h, ep)), agg))
    return h


# ---------------------------------------------------------------- losses


def cosine_distance_mean(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean of ``1 - cos`` over rows, per-example masked mean when ``mask`` (B, N) is given."""
    tgt = Tensor(np.asarray(target, dtype=pred.data.dtype))
    dist = T.add_scalar(T.scale(T.cosine_similarity(pred, tgt), -1.0), 1.0)
    if mask is None:
        return T.reduce_mean(dist)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("alignment mask is empty for some example")
    return T.reduce_mean(T.reduce_mean(dist, axis=-1, mask=mask))


def align_loss_graph(Y: Tensor, targets: dict[str, np.ndarray], heads: dict, endpoints: Sequence[str]) -> Tensor:
    """Sum over endpoints of the batch-mean cosine distance for the first global token."""
    y0 = T.take(Y, 0, axis=1)
    total = None
    for ep in endpoints:
        if targets.get(ep) is None:
            raise ValueError(f"missing graph-level target for endpoint {ep}")
        term = cosine_distance_mean(heads[ep](y0), targets[ep])
        total = term if total is None else T.add(total, term)
    return total


def align_loss_node(X: Tensor, atom_targets: np.ndarray, mask: np.ndarray, head) -> Tensor:
    return cosine_distance_mean(head(X), atom_targets, mask)


def grg_loss(X: Tensor, E: Tensor, normed_targets: np.ndarray, bonds: np.ndarray, mask: np.ndarray,
             heads: GuidanceHeads) -> Tensor:
    return cosine_distance_mean(heads.node_head(heads.edge_gin(X, E, bonds)), normed_targets, mask)


def reg_loss_discrete(logits: Tensor, z0: np.ndarray) -> Tensor:
    z0 = np.asarray(z0)
    K = logits.shape[-1]
    if np.any(z0 < 1) or np.any(z0 > K):
        raise ValueError(f"class out of range [1, {K}]")
    onehot = Tensor(np.eye(K, dtype=logits.data.dtype)[z0 - 1])
    return T.scale(T.reduce_mean(T.reduce_sum(T.mul(T.log_softmax(logits), onehot), axis=-1)), -1.0)


def reg_loss_continuous(pred: Tensor, z0: np.ndarray) -> Tensor:
    if pred.shape != np.shape(z0):
        raise ValueError(f"token shapes differ: {pred.shape} vs {np.shape(z0)}")
    return T.reduce_mean(T.square(T.sub(pred, Tensor(np.asarray(z0, dtype=pred.data.dtype)))))


def total_loss(base: Tensor, align: Tensor | None = None, token: Tensor | None = None,
               lam_align: float = 0.5, lam_z: float = 1.0) -> Tensor:
    if lam_align < 0 or lam_z < 0:
        raise ValueError("loss weights must be nonnegative")
    out = base
    # zero-weight terms are left off the tape so gradients match the unguided run bit for bit
    if align is not None and lam_align > 0:
        out = T.add(out, T.scale(align, lam_align))
    if token is not None and lam_z > 0:
        out = T.add(out, T.scale(token, lam_z))
    return out


# ---------------------------------------------------------------- per-batch targets


@dataclass
class BatchTargets:
    graph: dict = field(default_factory=dict)  # endpoint -> (B, d_T)
    atom_vecs: np.ndarray | None = None  # (B, N, d_T), zero rows off-mask
    atom_mask: np.ndarray | None = None  # (B, N)
    atom_normed: np.ndarray | None = None  # instance-normalized rows for GRG
    token: np.ndarray | None = None  # (B,) classes or (B, d_z)


def guided_loss(trace, heads: GuidanceHeads, cfg: GuidanceConfig, targets: BatchTargets,
                reactant_bonds: np.ndarray) -> Tensor | None:
    """Alignment term for the configured scheme (None when the scheme has none)."""
    if not cfg.uses_alignment:
        return None
    X, E, Y = trace.layer(cfg.align_layer)
    if cfg.scheme == "align_graph":
        return align_loss_graph(Y, targets.graph, heads.graph_heads, cfg.endpoints)
    if cfg.scheme == "align_node":
        return align_loss_node(X, targets.atom_vecs, targets.atom_mask, heads.node_head)
    return grg_loss(X, E, targets.atom_normed, reactant_bonds, targets.atom_mask, heads)


def token_loss(trace, cfg: GuidanceConfig, targets: BatchTargets) -> Tensor | None:
    if cfg.scheme == "reg_discrete":
        return reg_loss_discrete(trace.token_out, targets.token)
    if cfg.scheme == "reg_continuous":
        return reg_loss_continuous(trace.token_out, targets.token)
    return None


def class_tokens(records: Sequence) -> np.ndarray:
    classes = [r.reaction_class for r in records]
    if any(c is None or not 1 <= c <= 10 for c in classes):
        raise ValueError("discrete token guidance needs reaction classes in [1, 10]")
    return np.array(classes, dtype=np.int64)


# ---------------------------------------------------------------- teacher cache


MAGIC = b"BKTE1"


def smiles_key(smiles: str) -> int:
    """Stable 64-bit key for a SMILES string."""
    return int.from_bytes(hashlib.blake2b(smiles.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class TeacherRecord:
    key: int
    graph_vec: np.ndarray  # (dim,)
    atom_vecs: np.ndarray  # (n_atoms, dim), reactant parser order


def write_teacher_cache(path, teacher: str, dim: int, records: Sequence[TeacherRecord]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", TEACHER_IDS[teacher], dim, len(records)))
        for r in records:
            if r.graph_vec.shape != (dim,) or (r.atom_vecs.size and r.atom_vecs.shape[1] != dim):
                raise ValueError("teacher record dimension mismatch")
            fh.write(struct.pack("<Q", r.key))
            fh.write(np.asarray(r.graph_vec, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", len(r.atom_vecs)))
            fh.write(np.asarray(r.atom_vecs, dtype="<f4").tobytes())


def read_teacher_cache(path) -> tuple[str, int, list[TeacherRecord]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a teacher cache")
        tid, dim, count = struct.unpack("<III", fh.read(12))
        names = {v: k for k, v in TEACHER_IDS.items()}
        if tid not in names:
            raise ValueError(f"{path}: unknown teacher id {tid}")
        out = []
        for _ in range(count):
            (key,) = struct.unpack("<Q", fh.read(8))
            gv = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
            (na,) = struct.unpack("<I", fh.read(4))
            av = np.frombuffer(fh.read(4 * dim * na), dtype="<f4").astype(np.float64).reshape(na, dim)
            out.append(TeacherRecord(key, gv, av))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after {count} records")
    return names[tid], dim, out


def corpus_fingerprint(smiles: Sequence[str], params: Sequence) -> int:
    """Cache identity: teacher settings plus the training corpus."""
    return mix_many([smiles_key(s) for s in smiles] + [int(p) for p in params])


# ---------------------------------------------------------------- teacher store


def parser_order_graph(reactants: MolecularGraph, reactant_order: np.ndarray) -> MolecularGraph:
    """Undo the slot permutation: real reactant atoms in their original parser order."""
    slots = np.flatnonzero(reactant_order >= 0)
    return reactants.permute(slots[np.argsort(reactant_order[slots])])


def reorder_rows(rows: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Row ``j`` of the output is ``rows[order[j]]``, or zero where ``order[j] < 0``."""
    out = np.zeros((len(order), rows.shape[1]))
    valid = order >= 0
    out[valid] = rows[order[valid]]
    return out


class TeacherStore:
    """Whitened teacher vectors keyed by SMILES, plus the fitted whitening maps.

    Graph-level vectors are Morgan set embeddings; atom-level vectors are WL
    embeddings stored in reactant parser order.  Only what the scheme needs
    is computed: product-side vectors exist only when ``P`` is an endpoint.
    """

    def __init__(self, cfg: GuidanceConfig, token_dim: int = 16):
        self.cfg = cfg
        self.token_dim = token_dim
        self.whitening: dict[str, Whitening] = {}
        self.graph_vecs: dict[int, np.ndarray] = {}
        self.atom_vecs: dict[int, np.ndarray] = {}
        self.token_vecs: dict[int, np.ndarray] = {}
        self.fingerprint = 0

    # raw encoders
    def morgan_raw(self, components: Sequence[MolecularGraph]) -> np.ndarray:
        return set_embedding(components, None, self.cfg.morgan_radius, self.cfg.morgan_bits)

    def wl_raw(self, g: MolecularGraph) -> np.ndarray:
        return wl_atom_embeddings(g, self.cfg.wl_iterations, self.cfg.wl_dim)

    # targets for arbitrary graphs, used at inference
    def graph_target(self, g: MolecularGraph, endpoint: str = "R") -> np.ndarray:
        return self.whitening[f"graph_{endpoint}"](self.morgan_raw(g.compact()[0].components())[None])[0]

    def atom_target_rows(self, g: MolecularGraph) -> np.ndarray:
        """Whitened WL rows for the real atoms of ``g`` in slot order."""
        return self.whitening["atom"](self.wl_raw(g))

    def params(self) -> tuple:
        c = self.cfg
        return (c.morgan_radius, c.morgan_bits, c.wl_iterations, c.wl_dim, c.d_T, self.token_dim)

    def fit(self, records: Sequence) -> "TeacherStore":
        cfg = self.cfg
        need_graph = cfg.scheme == "align_graph"
        need_atoms = cfg.scheme in ("align_node", "grg")
        need_token = cfg.scheme == "reg_continuous"
        self.fingerprint = corpus_fingerprint([r.reactants_smiles for r in records], self.params())
        parsed = [parser_order_graph(r.reactants, r.reactant_order) for r in records]
        if need_graph or need_token:
            raw_r = np.stack([self.morgan_raw(g.components()) for g in parsed])
            if need_graph and "R" in cfg.endpoints:
                self.whitening["graph_R"] = fit_whitening(raw_r, cfg.d_T)
                for r, v in zip(records, self.whitening["graph_R"](raw_r)):
                    self.graph_vecs[smiles_key(r.reactants_smiles)] = v
            if need_token:
                self.whitening["token"] = fit_whitening(raw_r, self.token_dim)
                for r, v in zip(records, self.whitening["token"](raw_r)):
                    self.token_vecs[smiles_key(r.reactants_smiles)] = v
        if need_graph and "P" in cfg.endpoints:
            raw_p = np.stack([self.morgan_raw(r.product.compact()[0].components()) for r in records])
            self.whitening["graph_P"] = fit_whitening(raw_p, cfg.d_T)
            for r, v in zip(records, self.whitening["graph_P"](raw_p)):
                self.graph_vecs[smiles_key(r.product_smiles)] = v
        if need_atoms:
            rows = [self.wl_raw(g) for g in parsed]
            self.whitening["atom"] = fit_whitening(np.concatenate(rows), cfg.d_T)
            for r, x in zip(records, rows):
                self.atom_vecs[smiles_key(r.reactants_smiles)] = self.whitening["atom"](x)
        return self

    def ensure(self, records: Sequence) -> None:
        """Compute targets for records missing from the store (e.g. a validation split)."""
        for r in records:
            key = smiles_key(r.reactants_smiles)
            g = None
            if "graph_R" in self.whitening and key not in self.graph_vecs:
                g = parser_order_graph(r.reactants, r.reactant_order)
                self.graph_vecs[key] = self.whitening["graph_R"](self.morgan_raw(g.components())[None])[0]
            if "graph_P" in self.whitening and smiles_key(r.product_smiles) not in self.graph_vecs:
                self.graph_vecs[smiles_key(r.product_smiles)] = self.graph_target(r.product, "P")
            if "token" in self.whitening and key not in self.token_vecs:
                g = g or parser_order_graph(r.reactants, r.reactant_order)
                self.token_vecs[key] = self.whitening["token"](self.morgan_raw(g.components())[None])[0]
            if "atom" in self.whitening and key not in self.atom_vecs:
                g = g or parser_order_graph(r.reactants, r.reactant_order)
                self.atom_vecs[key] = self.whitening["atom"](self.wl_raw(g))

    def batch(self, records: Sequence) -> BatchTargets:
        cfg = self.cfg
        out = BatchTargets()
        if cfg.scheme == "align_graph":
            if "R" in cfg.endpoints:
                out.graph["R"] = np.stack([self.graph_vecs[smiles_key(r.reactants_smiles)] for r in records])
            if "P" in cfg.endpoints:
                out.graph["P"] = np.stack([self.graph_vecs[smiles_key(r.product_smiles)] for r in records])
        elif cfg.scheme in ("align_node", "grg"):
            vecs = np.stack([reorder_rows(self.atom_vecs[smiles_key(r.reactants_smiles)], r.reactant_order)
                             for r in records])
            mask = np.stack([r.reactant_order >= 0 for r in records])
            out.atom_vecs, out.atom_mask = vecs, mask
            if cfg.scheme == "grg":
                out.atom_normed = np.stack([instance_normalize(v, r.reactants.component_ids, m)
                                            for v, r, m in zip(vecs, records, mask)])
        elif cfg.scheme == "reg_discrete":
            out.token = class_tokens(records)
        elif cfg.scheme == "reg_continuous":
            out.token = np.stack([self.token_vecs[smiles_key(r.reactants_smiles)] for r in records])
        return out

    # persistence: one BKTE1 file per teacher plus an npz sidecar with whitening maps
    def save(self, path) -> None:
        path = str(path)
        teacher = self.cfg.teacher or "morgan"
        dim = self.cfg.d_T
        if teacher == "wl":
            recs = [TeacherRecord(k, np.zeros(dim), v) for k, v in self.atom_vecs.items()]
        else:
            recs = [TeacherRecord(k, v, np.zeros((0, dim))) for k, v in self.graph_vecs.items()]
        write_teacher_cache(path, teacher, dim, recs)
        arrays = {f"{name}.mean": w.mean for name, w in self.whitening.items()}
        arrays.update({f"{name}.proj": w.proj for name, w in self.whitening.items()})
        if self.token_vecs:
            arrays["token.keys"] = np.array(list(self.token_vecs), dtype=np.uint64)
            arrays["token.vecs"] = np.stack(list(self.token_vecs.values()))
        arrays["meta"] = np.array([self.fingerprint], dtype=np.uint64)
        with open(path + ".npz", "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path, cfg: GuidanceConfig, token_dim: int = 16, expect_fingerprint: int | None = None
             ) -> "TeacherStore":
        path = str(path)
        store = cls(cfg, token_dim)
        teacher, dim, recs = read_teacher_cache(path)
        if cfg.teacher and teacher != cfg.teacher:
            raise ValueError(f"cache holds {teacher} vectors, scheme {cfg.scheme} needs {cfg.teacher}")
        if dim != cfg.d_T:
            raise ValueError(f"cache dimension {dim} != configured {cfg.d_T}")
        with np.load(path + ".npz") as z:
            names = {k.rsplit(".", 1)[0] for k in z.files if k.endswith(".mean")}
            for name in names:
                store.whitening[name] = Whitening(z[f"{name}.mean"], z[f"{name}.proj"])
            if "token.keys" in z.files:
                store.token_vecs = {int(k): v for k, v in zip(z["token.keys"], z["token.vecs"])}
            store.fingerprint = int(z["meta"][0])
        if expect_fingerprint is not None and store.fingerprint != expect_fingerprint:
            raise ValueError("teacher cache was built for a different corpus or teacher settings")
        for r in recs:
            if teacher == "wl":
                store.atom_vecs[r.key] = r.atom_vecs
            else:
                store.graph_vecs[r.key] = r.graph_vec
        return store
