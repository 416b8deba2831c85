"""Desk-scale comparison of unguided, node-aligned and GRG training on the bond-cut task."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import preset
from .data import generate_synthetic, ingest_lines
from .inference import evaluate
from .train import train

log = logging.getLogger(__name__)

SCHEMES = ("none", "align_node", "grg")


@dataclass
class ExperimentSettings:
    n_train: int = 2000
    n_test: int = 200
    data_seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    schemes: tuple[str, ...] = SCHEMES
    epochs: int = 30
    T: int = 100
    N_cap: int = 24
    n_samples: int = 5
    lr: float = 1e-3
    batch_size: int = 16
    fusion: tuple[float, float] = (0.85, 0.15)


@dataclass
class RunRecord:
    scheme: str
    seed: int
    top1: float
    top1_rerank: float | None
    report: dict
    train_seconds: float
    eval_seconds: float


@dataclass
class ExperimentResult:
    settings: ExperimentSettings
    runs: list[RunRecord] = field(default_factory=list)
    N: int = 0

    def mean_top1(self, scheme: str, rerank: bool = False) -> float:
        vals = [r.top1_rerank if rerank else r.top1 for r in self.runs if r.scheme == scheme]
        return float(np.mean(vals))

    def checks(self) -> dict[str, bool]:
        g, a, u = (self.mean_top1(s) for s in ("grg", "align_node", "none"))
        return {
            "grg >= align_node": g >= a,
            "align_node >= none": a >= u,
            "grg - none >= 0.02": g - u >= 0.02 - 1e-12,
            "grg rerank >= frequency": self.mean_top1("grg", rerank=True) >= g,
        }

    def summary(self) -> str:
        lines = [f"{'scheme':<11} {'top1':>6} {'rerank':>7}  per-seed top1"]
        for s in self.settings.schemes:
            per = [r.top1 for r in self.runs if r.scheme == s]
            rr = [r.top1_rerank for r in self.runs if r.scheme == s and r.top1_rerank is not None]
            rr_txt = f"{np.mean(rr):7.3f}" if rr else "      -"
            lines.append(f"{s:<11} {np.mean(per):6.3f} {rr_txt}  {' '.join(f'{v:.3f}' for v in per)}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"settings": asdict(self.settings), "N": self.N,
                           "runs": [asdict(r) for r in self.runs], "checks": self.checks()}, indent=2)


def run_experiment(settings: ExperimentSettings | None = None, progress=None) -> ExperimentResult:
    """Train and evaluate every (scheme, seed) pair on one fixed synthetic split."""
    st = settings or ExperimentSettings()
    lines = generate_synthetic(st.n_train + st.n_test, np.random.default_rng(st.data_seed))
    vocab, records, report = ingest_lines(lines, n_cap=st.N_cap)
    if report.rejected:
        raise RuntimeError(f"synthetic data rejected: {report.summary()}")
    train_recs, test_recs = records[: st.n_train], records[st.n_train:]
    N = records[0].n
    result = ExperimentResult(st, N=N)
    products = [r.product for r in test_recs]
    truths = [r.reactants for r in test_recs]
    for seed in st.seeds:
        for scheme in st.schemes:
            cfg = preset("desk", scheme=scheme, seed=seed, epochs=st.epochs, T=st.T, N_cap=st.N_cap, lr=st.lr,
                         batch_size=st.batch_size, n_samples=st.n_samples, val_every=0)
            t0 = time.time()
            res = train(cfg, train_recs, [], vocab, N, quiet=True)
            t1 = time.time()
            weights = st.fusion if res.model.guided else None
            ev = evaluate(res.model, products, truths, st.n_samples, seed=seed, rerank_weights=weights)
            rep = ev.report()
            rec = RunRecord(scheme, seed, rep["frequency"]["Top-1"],
                            rep["rerank"]["Top-1"] if "rerank" in rep else None, rep, t1 - t0, time.time() - t1)
            result.runs.append(rec)
            msg = (f"seed {seed} {scheme:<10} top1 {rec.top1:.3f} rerank {rec.top1_rerank} "
                   f"train {rec.train_seconds:.0f}s eval {rec.eval_seconds:.0f}s")
            log.info(msg)
            if progress:
                progress(msg)
    return result
