import warnings

import numpy as np
import pytest

from bridgekit import tensor as T
from bridgekit.config import preset
from bridgekit.data import ingest_lines
from bridgekit.train import build_model, train_step

# Atom-conserving reactions: the product fixes the answer, so the training
# loss has no irreducible floor from interchangeable dummy slots.
MEMO_PAIRS = [
    "CCCOC\tCCC.OC", "CCNCC\tCC.NCC", "OCCCO\tOC.CCO", "CC(C)OC\tCC(C).OC", "NCCOC\tNCC.OC",
    "CCCCN\tCCC.CN", "OCC(N)C\tOCC.NC", "C1CCCCC1\tCCCCCC", "CC(=O)NC\tCC(=O).NC", "COC(C)C\tCO.C(C)C",
]


def tiny_config(**kw):
    base = dict(T=20, layers=1, d_x=8, d_e=4, d_y=8, heads=2, align_layer=1, d_T=8, token_dim=8, batch_size=4)
    return preset("desk", **{**base, **kw})


@pytest.fixture(scope="session")
def memo_data():
    vocab, recs, _ = ingest_lines(MEMO_PAIRS, n_cap=24)
    return vocab, recs


def make_model(cfg, vocab, recs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_model(cfg, vocab, recs[0].n, recs)


def memorize(vocab, recs, steps, stop_at=None, repeat=1):
    """Desk-width model trained on ``recs``; optionally stop once the 20-step mean loss is <= ``stop_at``."""
    cfg = preset("desk", T=50, layers=2, lr=3e-3, align_layer=1)
    model = make_model(cfg, vocab, recs)
    opt = T.AdamW(model.trainable(), lr=cfg.lr, weight_decay=cfg.weight_decay, amsgrad=True)
    rng = np.random.default_rng(0)
    losses = []
    for step in range(1, steps + 1):
        losses.append(train_step(model, list(recs) * repeat, rng, opt)["loss"])
        if stop_at is not None and step >= 20 and np.mean(losses[-20:]) <= stop_at:
            break
    return model, losses


@pytest.fixture(scope="session")
def memorized(memo_data):
    """Ten-reaction memorization run, stopped when the loss reaches 0.05."""
    vocab, recs = memo_data
    model, losses = memorize(vocab, recs, 2000, stop_at=0.05)
    return model, recs, losses


@pytest.fixture(scope="session")
def memorized_one(memo_data):
    """A model that has memorized a single reaction."""
    vocab, recs = memo_data
    model, losses = memorize(vocab, recs[:1], 1000, repeat=4)
    return model, recs[0], losses


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    if report.when == "call" or report.outcome != "passed":
        label = name.split("_", 3)[3].replace("_", " ")
        verdict = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _CRITERIA[num] = (label, verdict)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        label, verdict = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:>2} {verdict}  {label}")
