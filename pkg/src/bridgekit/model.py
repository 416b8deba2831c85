"""A trained model bundle: denoiser, guidance heads, process and teacher store."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .chem import AtomVocab
from .denoiser import Denoiser, DenoiserConfig
from .guidance import GuidanceConfig, GuidanceHeads, TeacherStore, Whitening
from .process import BridgeProcess, CategoricalKernel, NUM_CLASSES, cosine_schedule


@dataclass
class RetroModel:
    denoiser: Denoiser
    heads: GuidanceHeads | None
    gcfg: GuidanceConfig
    process: BridgeProcess
    vocab: AtomVocab
    N: int
    store: TeacherStore | None = None

    @classmethod
    def create(cls, dcfg: DenoiserConfig, gcfg: GuidanceConfig, T_steps: int, vocab: AtomVocab, N: int,
               seed: int = 0, dtype=T.DEFAULT_DTYPE) -> "RetroModel":
        if gcfg.token_mode != dcfg.token_mode:
            raise ValueError(f"scheme {gcfg.scheme} needs denoiser token_mode={gcfg.token_mode!r}")
        if gcfg.uses_alignment and not 1 <= gcfg.align_layer <= dcfg.layers:
            raise ValueError(f"align_layer {gcfg.align_layer} outside [1, {dcfg.layers}]")
        den = Denoiser(dcfg, seed, dtype)
        heads = None
        if gcfg.uses_alignment:
            heads = GuidanceHeads(gcfg, dcfg.d_x, dcfg.d_e, dcfg.d_y, dcfg.K_b, seed, dtype)
        proc = BridgeProcess(cosine_schedule(T_steps), dcfg.K_a, dcfg.K_b)
        return cls(den, heads, gcfg, proc, vocab, N)

    @property
    def guided(self) -> bool:
        return self.heads is not None

    @property
    def token_kernel(self) -> CategoricalKernel:
        if not hasattr(self, "_token_kernel"):
            self._token_kernel = CategoricalKernel(NUM_CLASSES, self.process.schedule)
        return self._token_kernel

    def parameters(self):
        out = self.denoiser.parameters()
        if self.heads is not None:
            out += self.heads.parameters()
        return out

    def trainable(self):
        return [p for p in self.parameters() if p.trainable]

    # persistence: BKPT1 weights plus a JSON sidecar and whitening npz
    def save(self, path) -> None:
        path = Path(path)
        T.save_checkpoint(path, self.parameters())
        meta = {
            "denoiser": asdict(self.denoiser.cfg),
            "guidance": {**asdict(self.gcfg), "endpoints": list(self.gcfg.endpoints)},
            "T": self.process.T,
            "N": self.N,
            "vocab": json.loads(self.vocab.to_json()),
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1))
        if self.store is not None:
            arrays = {}
            for name, w in self.store.whitening.items():
                arrays[f"{name}.mean"] = w.mean
                arrays[f"{name}.proj"] = w.proj
            with open(str(path) + ".whiten.npz", "wb") as fh:
                np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "RetroModel":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        dcfg = DenoiserConfig(**meta["denoiser"])
        g = dict(meta["guidance"])
        g["endpoints"] = tuple(g["endpoints"])
        gcfg = GuidanceConfig(**g)
        vocab = AtomVocab([tuple(e) for e in meta["vocab"]["entries"]], meta["vocab"].get("max_size"), frozen=True)
        model = cls.create(dcfg, gcfg, meta["T"], vocab, meta["N"])
        state = T.load_checkpoint(path)
        for p in model.parameters():
            if p.name not in state:
                raise KeyError(f"checkpoint lacks parameter {p.name}")
            p.data = state[p.name].astype(p.data.dtype).reshape(p.shape)
        wpath = Path(str(path) + ".whiten.npz")
        if wpath.exists():
            store = TeacherStore(gcfg, dcfg.token_dim)
            with np.load(wpath) as z:
                for name in {k.rsplit(".", 1)[0] for k in z.files}:
                    store.whitening[name] = Whitening(z[f"{name}.mean"], z[f"{name}.proj"])
            model.store = store
        return model
