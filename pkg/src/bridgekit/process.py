"""Noise schedules, categorical kernels and the endpoint-pinned bridge.

Forward law of one categorical slot at step ``t`` given the reactant
category ``g0`` and the product category ``gT``::

    p_t = (1 - mu_t) * [(1 - lam_t) * onehot(g0) + lam_t * onehot(gT)] + mu_t / K
    lam_t = (1 - abar_t) / (1 - abar_T)
    mu_t  = c * lam_t * (1 - lam_t)

so ``p_0 = onehot(g0)`` and ``p_T = onehot(gT)``.  The reverse kernel for a
fixed ``g0`` is the maximal coupling between consecutive marginals: stay
with probability ``min(1, p_{t-1}(x) / p_t(x))``, otherwise jump to ``y``
with probability proportional to ``(p_{t-1}(y) - p_t(y))_+``.  It moves
mass only where the marginal actually shifts, and reproduces ``p_{t-1}``
exactly when ``x ~ p_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chem.graph import MolecularGraph

BRIDGE_LEAK = 0.1


@dataclass(frozen=True)
class ProcessSchedule:
    """``betas[t]`` and ``alpha_bars[t]`` for t = 0..T (``betas[0]`` is unused and 0)."""

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if len(self.betas) != self.T + 1 or len(self.alpha_bars) != self.T + 1:
            raise ValueError("schedule arrays must have T + 1 entries")

    def check_step(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"step out of range [0, {self.T}]: {t}")


def _from_betas(T: int, betas_1_to_T: np.ndarray) -> ProcessSchedule:
    betas = np.concatenate([[0.0], np.asarray(betas_1_to_T, dtype=np.float64)])
    alpha_bars = np.cumprod(1.0 - betas)
    return ProcessSchedule(T, betas, alpha_bars)


def cosine_schedule(T: int = 500, s: float = 0.008) -> ProcessSchedule:
    if T < 2:
        raise ValueError("T must be >= 2")
    u = np.arange(T + 1) / T
    f = np.cos((u + s) / (1 + s) * np.pi / 2) ** 2
    abar = f / f[0]
    betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-5, 0.999)
    return _from_betas(T, betas)


def constant_schedule(T: int, beta: float) -> ProcessSchedule:
    return _from_betas(T, np.full(T, float(beta)))


@dataclass
class CategoricalKernel:
    """``Q_t = (1 - beta_t) I + beta_t U`` over ``K`` categories, with cumulative products."""

    K: int
    schedule: ProcessSchedule
    _qbar: list = field(default_factory=list, repr=False)

    def Q(self, t: int) -> np.ndarray:
        b = self.schedule.betas[t]
        return (1 - b) * np.eye(self.K) + b * np.full((self.K, self.K), 1.0 / self.K)

    def Qbar(self, t: int) -> np.ndarray:
        self.schedule.check_step(t)
        if not self._qbar:
            self._qbar.append(np.eye(self.K))
        while len(self._qbar) <= t:
            s = len(self._qbar)
            self._qbar.append(self._qbar[-1] @ self.Q(s))
        return self._qbar[t]


# ---------------------------------------------------------------- sampling helpers


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per leading index from ``probs[..., K]`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _sym_sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample a symmetric (..., N, N) category matrix from the upper triangle; diagonal 0."""
    n = probs.shape[-2]
    iu = np.triu_indices(n, 1)
    draws = sample_categorical(probs[..., iu[0], iu[1], :], rng)
    out = np.zeros(probs.shape[:-1], dtype=np.int64)
    out[..., iu[0], iu[1]] = draws
    out[..., iu[1], iu[0]] = draws
    return out


@dataclass
class GraphState:
    """Raw (possibly noisy) batched graph state: atoms (B, N), bonds (B, N, N)."""

    atoms: np.ndarray
    bonds: np.ndarray

    @classmethod
    def from_graphs(cls, graphs) -> "GraphState":
        return cls(np.stack([g.atom_types for g in graphs]).astype(np.int64),
                   np.stack([g.bond_types for g in graphs]).astype(np.int64))

    def __len__(self) -> int:
        return self.atoms.shape[0]

    def graph(self, b: int, vocab=None) -> MolecularGraph:
        """Decode one member into a valid graph (bonds to dummy slots dropped)."""
        atoms = self.atoms[b]
        charges = vocab.charges(atoms) if vocab is not None else None
        return MolecularGraph.build(atoms, self.bonds[b], charges)


# ---------------------------------------------------------------- the bridge


@dataclass
class BridgeProcess:
    schedule: ProcessSchedule
    K_a: int
    K_b: int
    leak: float = BRIDGE_LEAK
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def T(self) -> int:
        return self.schedule.T

    def lam(self, t) -> np.ndarray:
        ab = self.schedule.alpha_bars
        return (1.0 - ab[np.asarray(t)]) / (1.0 - ab[self.T])

    def mu(self, t) -> np.ndarray:
        lam = self.lam(t)
        return self.leak * lam * (1.0 - lam)

    def marginal(self, g0: np.ndarray, gT: np.ndarray, t, K: int) -> np.ndarray:
        """Forward law ``p_t(. | g0, gT)`` for integer arrays; ``t`` broadcasts on the leading axis."""
        lam = np.asarray(self.lam(t), dtype=np.float64)
        mu = np.asarray(self.mu(t), dtype=np.float64)
        shape = (-1,) + (1,) * g0.ndim  # per-example t broadcasts over slots and categories
        if lam.ndim:
            lam = lam.reshape(shape[: g0.ndim + 1])
            mu = mu.reshape(shape[: g0.ndim + 1])
        eye = np.eye(K)
        return (1 - mu) * ((1 - lam) * eye[g0] + lam * eye[gT]) + mu / K

    def forward_sample(self, reactants: GraphState, product: GraphState, t, rng) -> GraphState:
        """Draw ``G_t``; ``t`` is a scalar or one step per batch member."""
        self.schedule.check_step(t)
        t_arr = np.broadcast_to(np.asarray(t), (len(reactants),))
        atoms = np.empty_like(reactants.atoms)
        bonds = np.empty_like(reactants.bonds)
        interior = (t_arr > 0) & (t_arr < self.T)
        atoms[t_arr == 0], bonds[t_arr == 0] = reactants.atoms[t_arr == 0], reactants.bonds[t_arr == 0]
        atoms[t_arr == self.T], bonds[t_arr == self.T] = product.atoms[t_arr == self.T], product.bonds[t_arr == self.T]
        if interior.any():
            ti = t_arr[interior]
            pa = self.marginal(reactants.atoms[interior], product.atoms[interior], ti, self.K_a)
            pb = self.marginal(reactants.bonds[interior], product.bonds[interior], ti, self.K_b)
            atoms[interior] = sample_categorical(pa, rng)
            bonds[interior] = _sym_sample(pb, rng)
        return GraphState(atoms, bonds)

    def transition_table(self, t: int, K: int) -> np.ndarray:
        """``table[x, gT, c, y]``: probability of ``x -> y`` at step ``t`` when ``g0 = c``."""
        key = (t, K)
        if key not in self._tables:
            c, g = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
            cur = self.marginal(c, g, t, K)  # (c, gT, y)
            prev = self.marginal(c, g, t - 1, K)
            with np.errstate(divide="ignore", invalid="ignore"):
                stay = np.where(cur > 0, np.minimum(1.0, prev / cur), 0.0)  # (c, gT, x)
            gain = np.clip(prev - cur, 0.0, None)
            z = gain.sum(axis=-1, keepdims=True)
            move = np.divide(gain, z, out=np.zeros_like(gain), where=z > 0)  # (c, gT, y)
            eye = np.eye(K)
            table = (stay.transpose(2, 1, 0)[..., None] * eye[:, None, None, :]
                     + (1 - stay).transpose(2, 1, 0)[..., None] * move.transpose(1, 0, 2)[None])
            self._tables[key] = table
        return self._tables[key]

    def _reverse_probs(self, model_probs: np.ndarray, x: np.ndarray, gT: np.ndarray, t: int, K: int) -> np.ndarray:
        """``sum_c p_model(c) K_c(. | x)`` for flat slot arrays (S,), model probs (S, K)."""
        table = self.transition_table(t, K)
        out = np.empty(model_probs.shape, dtype=np.float64)
        pair = x * K + gT
        for code in np.unique(pair):
            rows = pair == code
            out[rows] = model_probs[rows] @ table[code // K, code % K]
        return out / out.sum(axis=-1, keepdims=True)

    def reverse_step(self, atom_probs: np.ndarray, bond_probs: np.ndarray, state: GraphState,
                     product: GraphState, t: int, rng) -> GraphState:
        """Sample ``G_{t-1}`` given model distributions over the clean graph."""
        if not 1 <= t <= self.T:
            raise ValueError(f"reverse step t={t} out of range [1, {self.T}]")
        for name, p in (("atom", atom_probs), ("bond", bond_probs)):
            if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-4) or np.any(p < 0):
                raise ValueError(f"{name} distributions are not normalized")
        if t == 1:
            return GraphState(sample_categorical(atom_probs, rng), _sym_sample(bond_probs, rng))
        B, N = state.atoms.shape
        pa = self._reverse_probs(atom_probs.reshape(-1, self.K_a), state.atoms.reshape(-1),
                                 product.atoms.reshape(-1), t, self.K_a).reshape(B, N, self.K_a)
        iu = np.triu_indices(N, 1)
        sel = (slice(None), iu[0], iu[1])
        pb_flat = self._reverse_probs(bond_probs[sel].reshape(-1, self.K_b), state.bonds[sel].reshape(-1),
                                      product.bonds[sel].reshape(-1), t, self.K_b)
        pb = np.zeros((B, N, N, self.K_b))
        pb[sel] = pb_flat.reshape(B, len(iu[0]), self.K_b)
        atoms = sample_categorical(pa, rng)
        bonds = np.zeros((B, N, N), dtype=np.int64)
        draws = sample_categorical(pb[sel], rng)
        bonds[:, iu[0], iu[1]] = draws
        bonds[:, iu[1], iu[0]] = draws
        return GraphState(atoms, bonds)


def bridge_forward_sample(reactants: MolecularGraph, product: MolecularGraph, t: int,
                          process: BridgeProcess, rng) -> GraphState:
    if reactants.n != product.n:
        raise ValueError("reactant and product graphs must share N")
    return process.forward_sample(GraphState.from_graphs([reactants]), GraphState.from_graphs([product]), t, rng)


# ---------------------------------------------------------------- auxiliary tokens

NUM_CLASSES = 10


def corrupt_token_discrete(z0, t, kernel: CategoricalKernel, rng) -> np.ndarray:
    """Draw ``z_t`` from row ``z0`` of ``Qbar_t``; classes are 1-based."""
    z0 = np.atleast_1d(np.asarray(z0))
    t = np.broadcast_to(np.asarray(t), z0.shape)
    if np.any(z0 < 1) or np.any(z0 > kernel.K):
        raise ValueError(f"class out of range [1, {kernel.K}]")
    rows = np.stack([kernel.Qbar(int(tt))[int(z) - 1] for z, tt in zip(z0, t)])
    return sample_categorical(rows, rng) + 1


def corrupt_token_continuous(z0: np.ndarray, t, schedule: ProcessSchedule, rng) -> np.ndarray:
    """``z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`` (``t`` per row when batched)."""
    z0 = np.asarray(z0, dtype=np.float64)
    ab = np.asarray(schedule.alpha_bars[np.asarray(t)], dtype=np.float64)
    if z0.ndim == 2:
        ab = np.broadcast_to(ab, (z0.shape[0],))[:, None]
    eps = rng.standard_normal(z0.shape)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def token_reverse_discrete(probs_z0: np.ndarray, z_t: np.ndarray, t: int, kernel: CategoricalKernel, rng) -> np.ndarray:
    """D3PM posterior step for the class token, marginalised over predicted ``z0``."""
    if t == 1:
        return sample_categorical(probs_z0, rng) + 1
    Qt = kernel.Q(t)
    Qprev = kernel.Qbar(t - 1)
    # q(z_{t-1}=y | z_t, z0=c) proportional to Qprev[c, y] * Qt[y, z_t]
    like = Qt[:, z_t - 1].T  # (B, K_y)
    post = Qprev[None, :, :] * like[:, None, :]
    post /= post.sum(axis=-1, keepdims=True)
    mix = np.einsum("bc,bcy->by", probs_z0, post)
    return sample_categorical(mix / mix.sum(axis=-1, keepdims=True), rng) + 1


def token_reverse_continuous(z0_hat: np.ndarray, z_t: np.ndarray, t: int, schedule: ProcessSchedule, rng) -> np.ndarray:
    """Gaussian posterior step given a predicted clean token."""
    if t == 1:
        return np.asarray(z0_hat, dtype=np.float64)
    ab, ab_prev, beta = schedule.alpha_bars[t], schedule.alpha_bars[t - 1], schedule.betas[t]
    mean = (np.sqrt(ab_prev) * beta / (1 - ab)) * z0_hat + (np.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab)) * z_t
    var = beta * (1 - ab_prev) / (1 - ab)
    return mean + np.sqrt(var) * rng.standard_normal(z_t.shape)
