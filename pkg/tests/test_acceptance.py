"""Acceptance suite.

Criteria 1-9 are unconditional and gate the build. Criteria 10-12 need the
original 93-cell measurement set, which is not published, so they are
reported as skipped. The terminal summary lists one line per criterion.
"""
from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from formscreen import baselines as bl
from formscreen import numkernel as nk
from formscreen.artifact import ModelArtifact
from formscreen.candidates import GenConfig, generate
from formscreen.chem import canonical_constituents, featurize, parse_smiles
from formscreen.cli import main
from formscreen.formulation import (
    DescriptorConvention, FormulationDesign, Separator, build_descriptor,
)
from formscreen.gcn import GcnModel, gcn_forward, pretrain_loss_fn
from formscreen.interpret import scc_report, spearman
from formscreen.regressor import (
    RegressorModel, TrainConfig, evaluate, regression_loss_fn, train,
)
from formscreen.screening import screen
from formscreen.synthetic import SyntheticOracle, make_pretrain_corpus

FD_CONFIGS = 25
FD_EPS = 1e-4
FD_TOL = 1e-4
# a central difference is meaningless across a ReLU kink; those coordinates
# are excluded, but no more than this share of the probes may be
MAX_KINK_SHARE = 0.05


def _detail(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.mark.slow
@pytest.mark.criterion(1)
def test_criterion_01_gradients(request):
    worst_pre = worst_reg = 0.0
    probed = kinks = 0
    for s in range(FD_CONFIGS):
        corpus = make_pretrain_corpus(6, s)
        graphs = [parse_smiles(smi) for smi, _ in corpus]
        labels = np.array([lab for _, lab in corpus])
        enc = GcnModel.init(s)
        enc.label_mean, enc.label_std = labels.mean(0), labels.std(0) + 1e-9
        rep = nk.fd_report(pretrain_loss_fn(enc, graphs, labels), enc.weights, FD_EPS,
                           coords_per_block=30, seed=s, skip_kinks=True)
        worst_pre = max(worst_pre, rep.max_error)
        probed, kinks = probed + rep.probed, kinks + rep.kinks

        rng = np.random.default_rng(s)
        reg = RegressorModel.init(802, DescriptorConvention("fd"), seed=s)
        assert [W.shape for W, _ in reg.layers] == [(802, 1000), (1000, 500), (500, 100), (100, 1)]
        fn = regression_loss_fn(reg, rng.uniform(0, 1, size=(4, 802)), rng.uniform(100, 300, size=4))
        rep = nk.fd_report(fn, reg.params(), FD_EPS, coords_per_block=20, seed=s, skip_kinks=True)
        worst_reg = max(worst_reg, rep.max_error)
        probed, kinks = probed + rep.probed, kinks + rep.kinks
    _detail(request, f"max rel err pretrain {worst_pre:.2e}, regressor {worst_reg:.2e}; "
                     f"{kinks}/{probed} kink probes excluded")
    assert worst_pre < FD_TOL and worst_reg < FD_TOL
    assert kinks <= MAX_KINK_SHARE * probed


@pytest.mark.criterion(2)
def test_criterion_02_permutation_invariance(request, encoder):
    model, _ = encoder
    worst = 0.0
    g = parse_smiles("CC(N)=O")
    ref = gcn_forward(featurize(g), model)
    assert np.abs(ref).max() > 0
    for perm in itertools.permutations(range(4)):
        worst = max(worst, float(np.abs(gcn_forward(featurize(g.permuted(perm)), model) - ref).max()))
    rng = np.random.default_rng(7)
    for c in canonical_constituents():
        g = c.graph
        ref = gcn_forward(featurize(g), model)
        for _ in range(20):
            perm = rng.permutation(g.n_atoms)
            worst = max(worst, float(np.abs(gcn_forward(featurize(g.permuted(perm)), model) - ref).max()))
    _detail(request, f"max GR difference {worst:.1e}")
    assert worst <= 1e-9


@pytest.mark.criterion(3)
def test_criterion_03_descriptor_contract(request, builder):
    shortlisted = FormulationDesign((4.0, 6.0, 3.0, 1.0, 68.0, 2.0, 10.0, 6.0), 42.0, Separator.QMA)
    d = builder.build(shortlisted).values
    assert d.shape == (802,)
    grs = builder.grs
    factors = tuple(float(np.dot(d[100 * k:100 * k + 100], grs[k]) / np.dot(grs[k], grs[k])) for k in range(8))
    assert factors == pytest.approx((0.04, 0.06, 0.03, 0.01, 0.68, 0.02, 0.10, 0.06), abs=1e-12)
    assert d[800] == pytest.approx(0.42, abs=1e-15) and d[801] == 2.0

    zero = FormulationDesign((0.0, 10.0, 0.0, 5.0, 60.0, 0.0, 25.0, 0.0), 40.0, Separator.CELGARD)
    dz = builder.build(zero).values
    for k in (0, 2, 5, 7):
        assert not dz[100 * k:100 * k + 100].any()

    worst = 0.0
    conv = builder.convention
    for a in (0.5, 2.0, 3.7):
        x = build_descriptor(shortlisted, grs, conv).values[:800]
        scaled = FormulationDesign(tuple(a * v for v in shortlisted.mol[:4]) + (100 - a * 14,) + (0.0,) * 3,
                                   42.0, Separator.QMA)
        y = build_descriptor(scaled, grs, conv).values[:800]
        worst = max(worst, float(np.abs(y[:400] - a * x[:400]).max()))
    _detail(request, f"width 802, shortlisted-design scale factors match, linearity err {worst:.1e}")
    assert worst <= 1e-12


@pytest.mark.criterion(4)
def test_criterion_04_candidate_pool(request):
    pool = generate(GenConfig())
    mol = np.array([c.design.mol for c in pool])
    sums = np.abs(mol.sum(axis=1) - 100.0).max()
    salts = mol[:, :4].sum(axis=1).max()
    _detail(request, f"{len(pool)} designs, max |sum-100| {sums:.1e}, max salt {salts:g} mol%")
    assert len(pool) == 33_740 == 2410 * 7 * 2
    assert sums <= 1e-9
    assert salts <= 50.0


@pytest.mark.criterion(5)
def test_criterion_05_spearman(request):
    base = list(range(1, 8))
    for p in itertools.permutations(base):
        d2 = sum((a - b) ** 2 for a, b in zip(base, p))
        assert spearman(base, p) == 1 - 6 * d2 / (7 * 48)

    def oracle(x, y):
        def ranks(v):
            return [sum(w < a for w in v) + (sum(w == a for w in v) + 1) / 2 for a in v]
        rx, ry = np.array(ranks(list(x))), np.array(ranks(list(y)))
        rx, ry = rx - rx.mean(), ry - ry.mean()
        return float((rx * ry).sum() / math.sqrt((rx * rx).sum() * (ry * ry).sum()))

    rng = np.random.default_rng(5)
    worst, done = 0.0, 0
    while done < 1000:
        n = int(rng.integers(3, 40))
        x, y = rng.integers(0, 6, size=n), rng.integers(0, 6, size=n)
        if len(set(x)) == 1 or len(set(y)) == 1:
            continue
        worst = max(worst, abs(spearman(x, y) - oracle(x, y)))
        done += 1
    half = spearman([1, 2, 3], [1, 3, 2])
    _detail(request, f"5040 permutations exact, tied max err {worst:.1e}, rho([1,2,3],[1,3,2]) = {half}")
    assert worst <= 1e-12
    assert half == 0.5


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_criterion_06_synthetic_end_to_end(request, synthetic_run, builder):
    oracle = SyntheticOracle()
    assert oracle.sigma == 20.0 and len(synthetic_run.records) == 93
    rmse = synthetic_run.history.best_val_rmse

    pool = generate(GenConfig())
    results = screen(synthetic_run.model, builder, pool)
    assert len(results) == 33_740
    pred = np.array([r.predicted for r in results])
    truth = oracle.batch(np.array([r.design.mol for r in results]), np.array([r.design.loading for r in results]),
                         np.array([int(r.design.separator) for r in results]))
    rho = spearman(pred, truth)

    report = scc_report([(r.design, r.predicted) for r in results])
    bins = sorted({e.bin for e in report.entries if e.variable != "lii_wtpct"}, key=float)
    wrong = []
    for name, sign in oracle.detectable().items():
        for b in bins:
            e = report.get(b, name)
            if e.status != "ok" or np.sign(e.rho) != sign:
                wrong.append((b, name, e.rho))
    _detail(request, f"val RMSE {rmse:.2f}, pool Spearman {rho:.3f}, "
                     f"sign checks {sorted(oracle.detectable())} x {len(bins)} bins, {len(wrong)} wrong")
    assert rmse <= 30.0
    assert rho >= 0.6
    assert set(oracle.detectable()) == {"LiBOB", "DOL"}
    assert not wrong, wrong


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_criterion_07_baselines(request, synthetic_run, builder):
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 10, size=(300, 1))
    step = np.where(X[:, 0] < 4.0, 10.0, np.where(X[:, 0] < 7.0, 50.0, 30.0))
    Xt = rng.uniform(0, 10, size=(200, 1))
    yt = np.where(Xt[:, 0] < 4.0, 10.0, np.where(Xt[:, 0] < 7.0, 50.0, 30.0))
    forest = bl.train_rfr(X, step, bl.RfrConfig(n_trees=50, mtry=1, min_leaf=1))
    step_mae = float(np.mean(np.abs(forest.predict(Xt) - yt)))

    Xl = np.linspace(-2, 2, 25).reshape(-1, 1)
    yl = 3.0 * Xl[:, 0] + 1.0
    cfg = bl.SvrConfig(C=1000.0, epsilon=0.05, gamma=0.5, tol=1e-6, max_passes=2000)
    svr = bl.train_svr(Xl, yl, cfg)
    svr_res = float(np.abs(svr.predict(Xl) - yl).max())

    tr, va = synthetic_run.train, synthetic_run.val
    Xtr, ytr = bl.flat_xy(tr)
    Xva, yva = bl.flat_xy(va)
    rfr_mae = float(np.mean(np.abs(bl.train_rfr(Xtr, ytr, bl.RfrConfig()).predict(Xva) - yva)))
    fgcn_mae = evaluate(synthetic_run.model, va, builder).mae
    _detail(request, f"step MAE {step_mae:.2f} (< {0.05 * 40:.1f}), SVR max residual {svr_res:.4f}, "
                     f"FGCN MAE {fgcn_mae:.2f} vs RFR {rfr_mae:.2f}")
    assert step_mae < 0.05 * (step.max() - step.min())
    assert svr_res <= cfg.epsilon + 1e-3
    assert fgcn_mae <= rfr_mae + 5.0


COMPACT = {
    "seed": 0,
    "pretrain": {"max_epochs": 40, "patience": 40, "hidden": 16, "head_hidden": 8},
    "train": {"max_epochs": 20, "patience": 20, "hidden": [64, 32, 16]},
    "gen": {"n_compositions": 100},
    "rfr": {"n_trees": 20},
}


def _pipeline(root: Path) -> None:
    root.mkdir(parents=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(COMPACT))
    c = ["--config", str(cfg)]
    steps = [
        ["synth", *c, "--n", "40", "--corpus-size", "15", "--out", str(root / "data")],
        ["pretrain", *c, "--corpus", str(root / "data/corpus.csv"), "--out", str(root / "enc")],
        ["train", *c, "--dataset", str(root / "data/dataset.csv"), "--model", str(root / "enc/encoder.fsm"),
         "--out", str(root / "model")],
        ["eval", *c, "--dataset", str(root / "data/dataset.csv"), "--model", str(root / "model/model.fsm"),
         "--out", str(root / "eval")],
        ["gen", *c, "--out", str(root / "pool")],
        ["screen", *c, "--model", str(root / "model/model.fsm"), "--pool", str(root / "pool/pool.csv"),
         "--out", str(root / "screen")],
        ["interpret", *c, "--predictions", str(root / "screen/predictions.csv"), "--out", str(root / "interp")],
        ["report", *c, "--dataset", str(root / "data/dataset.csv"), "--model", str(root / "enc/encoder.fsm"),
         "--out", str(root / "report")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_criterion_08_determinism(request, tmp_path, encoder, synthetic_run):
    _pipeline(tmp_path / "a")
    _pipeline(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    csvs = [f for f in files if f.suffix == ".csv"]
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]

    art = ModelArtifact(encoder[0], synthetic_run.model, {"seed": "0"})
    art.save(tmp_path / "full.fsm")
    again = ModelArtifact.load(tmp_path / "full.fsm").to_bytes()
    same = again == (tmp_path / "full.fsm").read_bytes()
    _detail(request, f"{len(csvs)} CSVs + {len(files) - len(csvs)} other files compared, {len(differ)} differ; "
                     f"full artifact save-load-save identical: {same}")
    assert len(csvs) >= 12
    assert not differ, differ
    assert same


@pytest.mark.slow
@pytest.mark.criterion(9)
def test_criterion_09_schedule(request):
    rng = np.random.default_rng(0)
    one = [(rng.uniform(0, 1, size=802), 200.0)]
    cfg = TrainConfig(seed=0, max_epochs=7001, patience=8000)
    model, hist = train(one, one, cfg, DescriptorConvention("schedule"))
    assert model.hidden == (1000, 500, 100)
    lr = hist.lr
    _detail(request, f"{len(lr)} epochs: lr {lr[0]:g} for 0-3999, {lr[4000]:g} for 4000-6999, {lr[7000]:g} at 7000")
    assert len(lr) == 7001
    assert all(v == 1e-4 for v in lr[:4000])
    assert all(v == 1e-3 for v in lr[4000:7000])
    assert lr[7000] == 1e-2


UNPUBLISHED = "conditional: needs the original 93-cell dataset, which is unpublished"


@pytest.mark.criterion(10)
def test_criterion_10_split_rmse():
    pytest.skip(UNPUBLISHED)


@pytest.mark.criterion(11)
def test_criterion_11_mae_ordering():
    pytest.skip(UNPUBLISHED)


@pytest.mark.criterion(12)
def test_criterion_12_training_scc():
    pytest.skip(UNPUBLISHED)
