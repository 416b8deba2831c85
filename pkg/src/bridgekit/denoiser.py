"""Graph-transformer denoiser over dense node, edge and global features.

Each layer updates three streams:

* nodes: multi-head self-attention whose logits are biased by a linear map
  of the edge features, followed by a feed-forward block;
* edges: a FiLM-style update whose scale and shift are symmetric products of
  the attended node states at both endpoints;
* globals: each global token attends over the nodes.

Every update is residual and layer-normalized.  There are no positional
features, so the network is equivariant to slot permutations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import MLP, LayerNorm, Linear, Module
from .process import NUM_CLASSES, GraphState
from .tensor import Tensor

NODE_WEIGHT = 1.0
EDGE_WEIGHT = 5.0


@dataclass
class DenoiserConfig:
    K_a: int
    K_b: int = 5
    layers: int = 6
    d_x: int = 64
    d_e: int = 32
    d_y: int = 64
    heads: int = 4
    align_layer: int = 4
    token_mode: str | None = None  # None, "discrete" or "continuous"
    token_dim: int = 16

    def __post_init__(self):
        if not 1 <= self.align_layer <= self.layers:
            raise ValueError(f"align_layer={self.align_layer} outside [1, {self.layers}]")
        if self.d_x % self.heads:
            raise ValueError(f"d_x={self.d_x} not divisible by heads={self.heads}")
        if self.token_mode not in (None, "discrete", "continuous"):
            raise ValueError(f"unknown token_mode {self.token_mode!r}")

    @property
    def token_in(self) -> int:
        return NUM_CLASSES if self.token_mode == "discrete" else self.token_dim


@dataclass
class InputFeatures:
    """Layer-0 inputs as plain arrays."""

    nodes: np.ndarray  # (B, N, 2 K_a + 1)
    edges: np.ndarray  # (B, N, N, 2 K_b)
    pooled: np.ndarray  # (B, 2 K_a + 1)
    token: np.ndarray | None = None  # (B, token_in)


@dataclass
class DenoiserTrace:
    """Per-layer intermediates (index 0 is layer 1) and output heads."""

    X: list = field(default_factory=list)
    E: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    atom_logits: Tensor | None = None
    bond_logits: Tensor | None = None
    token_out: Tensor | None = None

    def layer(self, ell: int) -> tuple[Tensor, Tensor, Tensor]:
        """Intermediates after layer ``ell`` (1-based)."""
        if not 1 <= ell <= len(self.X):
            raise ValueError(f"layer {ell} outside [1, {len(self.X)}]")
        return self.X[ell - 1], self.E[ell - 1], self.Y[ell - 1]

    def atom_probs(self) -> np.ndarray:
        return _softmax_np(self.atom_logits.data)

    def bond_probs(self) -> np.ndarray:
        return _softmax_np(self.bond_logits.data)


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64) - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def embed_inputs(state: GraphState, product: GraphState, t, T_steps: int, K_a: int, K_b: int,
                 token=None, token_mode: str | None = None, dtype=T.DEFAULT_DTYPE) -> InputFeatures:
    """One-hot node/edge inputs for the noisy state conditioned on the product."""
    if state.atoms.shape != product.atoms.shape or state.bonds.shape != product.bonds.shape:
        raise ValueError(f"state {state.atoms.shape} and product {product.atoms.shape} do not share N")
    B, N = state.atoms.shape
    eye_a, eye_b = np.eye(K_a, dtype=dtype), np.eye(K_b, dtype=dtype)
    tt = np.broadcast_to(np.asarray(t, dtype=dtype) / T_steps, (B,))
    time = np.broadcast_to(tt[:, None, None], (B, N, 1))
    nodes = np.concatenate([eye_a[state.atoms], eye_a[product.atoms], time], axis=-1)
    edges = np.concatenate([eye_b[state.bonds], eye_b[product.bonds]], axis=-1)
    tok = None
    if token_mode is not None and token is None:
        raise ValueError(f"token input required for token_mode={token_mode!r}")
    if token_mode == "discrete":
        tok = np.eye(NUM_CLASSES, dtype=dtype)[np.asarray(token) - 1]
    elif token_mode == "continuous":
        tok = np.asarray(token, dtype=dtype)
    return InputFeatures(nodes, edges, nodes.mean(axis=1), tok)


class _Layer(Module):
    def __init__(self, prefix: str, cfg: DenoiserConfig, rng, dtype):
        super().__init__(prefix, dtype)
        dx, de, dy, H = cfg.d_x, cfg.d_e, cfg.d_y, cfg.heads
        self.H = H
        lin = lambda name, a, b, **kw: self.child(Linear(f"{prefix}.{name}", a, b, rng, dtype=dtype, **kw))
        self.q, self.k, self.v, self.o = (lin(n, dx, dx) for n in ("q", "k", "v", "o"))
        self.ebias = lin("ebias", de, H)
        self.y2x = lin("y2x", dy, dx)
        self.ln_x1 = self.child(LayerNorm(f"{prefix}.ln_x1", dx, dtype))
        self.ffn = self.child(MLP(f"{prefix}.ffn", dx, 2 * dx, dx, rng, dtype))
        self.ln_x2 = self.child(LayerNorm(f"{prefix}.ln_x2", dx, dtype))
        self.film_a, self.film_b = lin("film_a", dx, de), lin("film_b", dx, de)
        self.shift_a, self.shift_b = lin("shift_a", dx, de), lin("shift_b", dx, de)
        self.e_in, self.e_out = lin("e_in", de, de), lin("e_out", de, de)
        self.ln_e = self.child(LayerNorm(f"{prefix}.ln_e", de, dtype))
        self.yq, self.yk, self.yv = lin("yq", dy, dx), lin("yk", dx, dx), lin("yv", dx, dy)
        self.ln_y = self.child(LayerNorm(f"{prefix}.ln_y", dy, dtype))

    def __call__(self, X: Tensor, E: Tensor, Y: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        B, N, dx = X.shape
        H, dh = self.H, dx // self.H

        # nodes: global conditioning, then edge-biased attention
        ybar = T.reduce_mean(Y, axis=1)
        Xc = T.add(X, T.expand(self.y2x(ybar), 1, N))

        def heads(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (B, N, H, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.q(Xc)), heads(self.k(Xc)), heads(self.v(Xc))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        bias = T.transpose(self.ebias(E), (0, 3, 1, 2))
        attn = T.softmax(T.add(scores, bias), axis=-1)
        mixed = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, N, dx))
        X1 = self.ln_x1(T.add(X, self.o(mixed)))
        X2 = self.ln_x2(T.add(X1, self.ffn(X1)))

        # edges: FiLM from attended endpoint pairs
        gamma = T.pair_product(self.film_a(X1), self.film_b(X1))
        beta = T.pair_product(self.shift_a(X1), self.shift_b(X1))
        upd = T.relu(T.add(T.mul(self.e_in(E), T.add_scalar(gamma, 1.0)), beta))
        E2 = self.ln_e(T.add(E, self.e_out(upd)))

        # globals: attention over nodes
        G = Y.shape[1]
        yq = self.yq(Y)  # (B, G, dx)
        yk = self.yk(X2)  # (B, N, dx)
        ys = T.scale(T.matmul(yq, T.transpose(yk, (0, 2, 1))), 1.0 / np.sqrt(dx))
        ya = T.softmax(ys, axis=-1)  # (B, G, N)
        yv = self.yv(X2)  # (B, N, dy)
        Y2 = self.ln_y(T.add(Y, T.matmul(ya, yv)))
        assert Y2.shape[1] == G
        return X2, E2, Y2


class Denoiser(Module):
    def __init__(self, cfg: DenoiserConfig, seed: int = 0, dtype=T.DEFAULT_DTYPE):
        super().__init__("den", dtype)
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d_node, d_edge = 2 * cfg.K_a + 1, 2 * cfg.K_b
        lin = lambda name, a, b, **kw: self.child(Linear(f"den.{name}", a, b, rng, dtype=dtype, **kw))
        self.embed_x = lin("embed_x", d_node, cfg.d_x)
        self.embed_e = lin("embed_e", d_edge, cfg.d_e)
        self.embed_y = lin("embed_y", d_node, cfg.d_y)
        self.embed_z = lin("embed_z", cfg.token_in, cfg.d_y) if cfg.token_mode else None
        self.blocks = [self.child(_Layer(f"den.l{i + 1}", cfg, rng, dtype)) for i in range(cfg.layers)]
        self.atom_head = lin("atom_head", cfg.d_x, cfg.K_a, zero=True)
        self.bond_head = lin("bond_head", cfg.d_e, cfg.K_b, zero=True)
        if cfg.token_mode:
            out = NUM_CLASSES if cfg.token_mode == "discrete" else cfg.token_dim
            self.token_head = lin("token_head", cfg.d_y, out, zero=True)
        else:
            self.token_head = None

    def embed(self, state: GraphState, product: GraphState, t, T_steps: int, token=None) -> InputFeatures:
        c = self.cfg
        return embed_inputs(state, product, t, T_steps, c.K_a, c.K_b, token, c.token_mode, self.dtype)

    def forward(self, feats: InputFeatures) -> DenoiserTrace:
        B, N, _ = feats.nodes.shape
        X = self.embed_x(Tensor(feats.nodes))
        E = self.embed_e(Tensor(feats.edges))
        Y = T.reshape(self.embed_y(Tensor(feats.pooled)), (B, 1, self.cfg.d_y))
        if self.embed_z is not None:
            if feats.token is None:
                raise ValueError("token input required for this configuration")
            Z = T.reshape(self.embed_z(Tensor(feats.token)), (B, 1, self.cfg.d_y))
            Y = T.concat([Y, Z], axis=1)
        trace = DenoiserTrace()
        for ell, block in enumerate(self.blocks, start=1):
            X, E, Y = block(X, E, Y)
            for name, val in (("X", X), ("E", E), ("Y", Y)):
                if not np.all(np.isfinite(val.data)):
                    raise FloatingPointError(f"non-finite {name} activations at layer {ell}")
            trace.X.append(X)
            trace.E.append(E)
            trace.Y.append(Y)
        trace.atom_logits = self.atom_head(X)
        raw = self.bond_head(E)
        trace.bond_logits = T.scale(T.add(raw, T.transpose(raw, (0, 2, 1, 3))), 0.5)
        if self.token_head is not None:
            trace.token_out = self.token_head(T.take(Y, Y.shape[1] - 1, axis=1))
        return trace

    __call__ = forward


def _cross_entropy(logits: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    K = logits.shape[-1]
    onehot = Tensor(np.eye(K, dtype=logits.data.dtype)[target])
    nll = T.scale(T.reduce_sum(T.mul(T.log_softmax(logits, axis=-1), onehot), axis=-1), -1.0)
    return T.reduce_mean(nll, mask=mask)


def base_loss(trace: DenoiserTrace, reactants: GraphState,
              node_weight: float = NODE_WEIGHT, edge_weight: float = EDGE_WEIGHT) -> Tensor:
    """Clean-graph cross-entropy: mean over node slots plus weighted mean over upper-triangle edges."""
    B, N = reactants.atoms.shape
    node = _cross_entropy(trace.atom_logits, reactants.atoms)
    triu = np.broadcast_to(np.triu(np.ones((N, N), dtype=bool), 1), (B, N, N))
    edge = _cross_entropy(trace.bond_logits, reactants.bonds, mask=triu)
    return T.add(T.scale(node, node_weight), T.scale(edge, edge_weight))
