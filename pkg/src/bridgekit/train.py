"""Training loop: bridge corruption, total loss, AdamW, periodic validation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .chem import AtomVocab
from .config import RunConfig
from .data import ReactionRecord, collate
from .denoiser import base_loss
from .guidance import (BatchTargets, TeacherStore, class_tokens, corpus_fingerprint, guided_loss, token_loss,
                       total_loss)
from .inference import evaluate
from .model import RetroModel
from .process import corrupt_token_continuous, corrupt_token_discrete

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "base", "align", "token", "val_top1")


@dataclass
class TrainResult:
    model: RetroModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float | None = None
    seconds: float = 0.0


def split_records(records: Sequence[ReactionRecord], val_size: int):
    """The last ``val_size`` records are held out for validation."""
    if val_size < 0 or val_size >= len(records):
        raise ValueError(f"val_size={val_size} leaves no training records out of {len(records)}")
    cut = len(records) - val_size
    return list(records[:cut]), list(records[cut:])


def build_model(cfg: RunConfig, vocab: AtomVocab, N: int, train: Sequence[ReactionRecord]) -> RetroModel:
    dcfg = cfg.denoiser_config(len(vocab))
    gcfg = cfg.guidance_config()
    model = RetroModel.create(dcfg, gcfg, cfg.T, vocab, N, seed=cfg.seed)
    if gcfg.teacher is not None:
        model.store = load_or_fit_teacher(cfg, gcfg, dcfg.token_dim, train)
    return model


def load_or_fit_teacher(cfg: RunConfig, gcfg, token_dim: int, train: Sequence[ReactionRecord]) -> TeacherStore:
    """Reuse ``cfg.teacher_cache`` when it matches this corpus and teacher; otherwise fit fresh targets."""
    store = TeacherStore(gcfg, token_dim)
    if cfg.teacher_cache and Path(cfg.teacher_cache).exists():
        expect = corpus_fingerprint([r.reactants_smiles for r in train], store.params())
        store = TeacherStore.load(cfg.teacher_cache, gcfg, token_dim, expect_fingerprint=expect)
        log.info("teacher targets loaded from %s", cfg.teacher_cache)
        return store
    return store.fit(train)


def batch_targets(model: RetroModel, batch: Sequence[ReactionRecord]) -> BatchTargets | None:
    if model.store is not None:
        return model.store.batch(batch)
    if model.gcfg.scheme == "reg_discrete":
        return BatchTargets(token=class_tokens(batch))
    return None


def batch_loss(model: RetroModel, batch: Sequence[ReactionRecord], rng: np.random.Generator):
    """Total training loss on a batch plus its base, alignment and token parts (the latter may be None)."""
    proc, gcfg = model.process, model.gcfg
    R, P = collate(batch)
    t = rng.integers(1, proc.T + 1, size=len(batch))
    Gt = proc.forward_sample(R, P, t, rng)
    targets = batch_targets(model, batch)
    token_in = None
    if gcfg.scheme == "reg_discrete":
        token_in = np.array([corrupt_token_discrete([z], int(tt), model.token_kernel, rng)[0]
                             for z, tt in zip(targets.token, t)])
    elif gcfg.scheme == "reg_continuous":
        token_in = corrupt_token_continuous(targets.token, t, proc.schedule, rng)
    trace = model.denoiser(model.denoiser.embed(Gt, P, t, proc.T, token_in))
    base = base_loss(trace, R)
    align = guided_loss(trace, model.heads, gcfg, targets, R.bonds) if targets is not None else None
    tok = token_loss(trace, gcfg, targets) if targets is not None else None
    loss = total_loss(base, align, tok, gcfg.lam_align, gcfg.lam_z)
    if not np.isfinite(loss.item()):
        raise FloatingPointError(f"non-finite loss: base={base.item()} "
                                 f"align={align.item() if align is not None else None} "
                                 f"token={tok.item() if tok is not None else None} at steps {t.tolist()}")
    return loss, base, align, tok


def train_step(model: RetroModel, batch: Sequence[ReactionRecord], rng: np.random.Generator,
               optimizer: T.AdamW | None = None) -> dict[str, float]:
    """One optimizer step on a batch; returns the loss components."""
    loss, base, align, tok = batch_loss(model, batch, rng)
    grads = T.backward(loss)
    if optimizer is not None:
        optimizer.step(grads)
    T.zero_grad(model.parameters())
    return {"loss": loss.item(), "base": base.item(),
            "align": align.item() if align is not None else 0.0,
            "token": tok.item() if tok is not None else 0.0}


def train(cfg: RunConfig, train_records: Sequence[ReactionRecord], val_records: Sequence[ReactionRecord],
          vocab: AtomVocab, N: int, out_dir=None, quiet: bool = False) -> TrainResult:
    """Train for ``cfg.epochs`` epochs; keep the weights with the best validation top-1.

    Without validation records the final weights are kept.  When ``out_dir``
    is given, the CSV log and best checkpoint are written there.
    """
    start = time.time()
    model = build_model(cfg, vocab, N, train_records)
    if model.store is not None and val_records:
        model.store.ensure(val_records)
    opt = T.AdamW(model.trainable(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                  betas=(cfg.beta1, cfg.beta2), amsgrad=cfg.amsgrad)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    best_state = None
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_records))
        sums = {"base": 0.0, "align": 0.0, "token": 0.0}
        steps = 0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_records[j] for j in order[i:i + cfg.batch_size]]
            parts = train_step(model, batch, rng, opt)
            for k in sums:
                sums[k] += parts[k]
            steps += 1
        row = {"epoch": epoch, **{k: v / max(steps, 1) for k, v in sums.items()}, "val_top1": ""}
        if val_records and cfg.val_every > 0 and (epoch % cfg.val_every == 0 or epoch == cfg.epochs):
            res = evaluate(model, [r.product for r in val_records], [r.reactants for r in val_records],
                           cfg.val_n, seed=cfg.seed + epoch)
            top1 = res.report()["frequency"]["Top-1"]
            row["val_top1"] = top1
            if result.best_val is None or top1 > result.best_val:
                result.best_val, result.best_epoch = top1, epoch
                best_state = {p.name: p.data.copy() for p in model.parameters()}
        result.history.append(row)
        if not quiet:
            log.info("epoch %d base %.4f align %.4f token %.4f val_top1 %s", epoch, row["base"],
                     row["align"], row["token"], row["val_top1"])
        if out:
            write_log(out / "train_log.csv", result.history)
    if best_state is not None:
        for p in model.parameters():
            p.data = best_state[p.name]
    else:
        result.best_epoch = cfg.epochs
    if out:
        model.save(out / "model.bkpt")
    result.seconds = time.time() - start
    return result


def write_log(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
