"""Alpha-sweep harness and the feature-appending driver on tiny problems."""

import math

import pytest

from xferfm.data import SchemaError
from xferfm.sweep import (
    DISJOINT_LR, INCONCLUSIVE, NO_TRANSFER_VALUE, TRANSFER_HELPFUL,
    EvalReport, SweepResult, alpha_sweep, feature_appending_experiment,
    verdict_for,
)
from xferfm.synth import GenConfig, generate, generate_records
from xferfm.training import BASE, DISJOINT, JOINT, HyperParams
from xferfm.data import split_by_time

TINY_GEN = dict(n_users=60, n_publishers=20, n_ads=5,
                n_web_events=1500, n_ads_events=600,
                ctr_user_frac=1.0, ctr_pub_frac=1.0)
TINY_HYPER = HyperParams(alpha=0.5, eta=5.0, K=2, epochs=5, seed=0,
                         sigma2_w_web=100.0, sigma2_V_web=100.0,
                         sigma2_w_d=100.0, sigma2_V_d=100.0,
                         sigma2_w_ads_a=100.0, sigma2_V_ads_a=100.0)


def tiny_problem(seed=0):
    d_web, d_ads, space, _ = generate(GenConfig(seed=seed, **TINY_GEN))
    boundary = GenConfig(seed=seed, **TINY_GEN).boundary_ts
    d_web_train, _ = split_by_time(d_web, boundary)
    d_ads_train, d_ads_test = split_by_time(d_ads, boundary)
    return space, d_web_train, d_ads_train, d_ads_test


def test_alpha_sweep_cell_layout():
    space, d_web, d_ads, d_test = tiny_problem()
    result = alpha_sweep(space, d_web, d_ads, d_test, TINY_HYPER,
                         grid=(0.2, 0.8), regimes=(BASE, JOINT, DISJOINT_LR),
                         seeds=(0, 1))
    # base and disjointlr run once; joint runs per (alpha, seed)
    assert len(result.regime_rows(BASE)) == 1
    assert len(result.regime_rows(DISJOINT_LR)) == 1
    assert len(result.regime_rows(JOINT)) == 4
    assert math.isnan(result.regime_rows(BASE)[0].alpha)
    for row in result.rows:
        assert 0.0 <= row.auc <= 1.0
        assert row.n_pos > 0 and row.n_neg > 0


def test_alpha_sweep_validation():
    space, d_web, d_ads, d_test = tiny_problem()
    with pytest.raises(ValueError):
        alpha_sweep(space, d_web, d_ads, d_test, TINY_HYPER,
                    grid=(1.5,), regimes=(JOINT,))
    with pytest.raises(ValueError):
        alpha_sweep(space, d_web, d_ads, d_test, TINY_HYPER,
                    grid=(0.5,), regimes=("nope",))


def test_alpha_sweep_deterministic():
    space, d_web, d_ads, d_test = tiny_problem()
    kw = dict(grid=(0.3, 0.7), regimes=(JOINT, DISJOINT), seeds=(0,))
    a = alpha_sweep(space, d_web, d_ads, d_test, TINY_HYPER, **kw)
    b = alpha_sweep(space, d_web, d_ads, d_test, TINY_HYPER, **kw)
    key = lambda r: (r.regime, r.alpha, r.seed)
    for ra, rb in zip(sorted(a.rows, key=key), sorted(b.rows, key=key)):
        assert (ra.auc, ra.rmse) == (rb.auc, rb.rmse)


def test_best_alpha_tie_break_prefers_smaller():
    rows = [
        EvalReport(auc=0.7, rmse=0.3, n_pos=1, n_neg=1, regime=JOINT, alpha=0.2),
        EvalReport(auc=0.7, rmse=0.2, n_pos=1, n_neg=1, regime=JOINT, alpha=0.8),
        EvalReport(auc=0.6, rmse=0.1, n_pos=1, n_neg=1, regime=JOINT, alpha=0.5),
    ]
    result = SweepResult(rows=rows, grid=(0.2, 0.5, 0.8))
    assert result.best_alpha(JOINT) == 0.2
    assert result.best_auc(JOINT) == 0.7
    assert result.best_alpha_rmse(JOINT) == 0.5


def test_best_alpha_uses_seed_median():
    rows = []
    for seed, aucs in ((0, {0.2: 0.60, 0.8: 0.70}),
                       (1, {0.2: 0.61, 0.8: 0.71}),
                       (2, {0.2: 0.99, 0.8: 0.50})):   # outlier seed
        for alpha, a in aucs.items():
            rows.append(EvalReport(auc=a, rmse=0.5, n_pos=1, n_neg=1,
                                   regime=JOINT, alpha=alpha, seed=seed))
    result = SweepResult(rows=rows, grid=(0.2, 0.8))
    assert result.best_alpha(JOINT) == 0.8


def test_sweep_csv_roundtrip(tmp_path):
    rows = [EvalReport(auc=0.625, rmse=0.408, n_pos=10, n_neg=50,
                       regime=BASE, alpha=float("nan"), seed=0)]
    result = SweepResult(rows=rows, grid=())
    p = tmp_path / "sweep.csv"
    result.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "regime,alpha,seed,auc,rmse,n_pos,n_neg"
    assert lines[1].startswith("base,,0,0.625,")


def test_verdict_thresholds():
    assert verdict_for(0.8) == TRANSFER_HELPFUL
    assert verdict_for(0.5) == TRANSFER_HELPFUL
    assert verdict_for(0.2) == NO_TRANSFER_VALUE
    assert verdict_for(0.0) == NO_TRANSFER_VALUE
    assert verdict_for(0.35) == INCONCLUSIVE


def test_feature_appending_experiment_runs():
    from xferfm.synth import ExtraAttr

    cfg = GenConfig(seed=0, extra_attrs=(ExtraAttr("extra", 4, True),), **TINY_GEN)
    web, ads, schema, _ = generate_records(cfg)
    result, best, verdict = feature_appending_experiment(
        web, ads, schema, ["user_id", "publisher_id", "ad_id"], "extra",
        cfg.boundary_ts, TINY_HYPER, grid=(0.0, 1.0), seeds=(0,))
    assert best in (0.0, 1.0)
    assert verdict in (TRANSFER_HELPFUL, NO_TRANSFER_VALUE, INCONCLUSIVE)
    assert all(r.feature_tag == "+extra" for r in result.rows)


def test_feature_appending_schema_errors():
    cfg = GenConfig(seed=0, **TINY_GEN)
    web, ads, schema, _ = generate_records(cfg)
    with pytest.raises(SchemaError):
        feature_appending_experiment(
            web, ads, schema, ["user_id", "publisher_id", "ad_id"], "missing",
            cfg.boundary_ts, TINY_HYPER, grid=(0.0,), seeds=(0,))
    with pytest.raises(SchemaError):
        feature_appending_experiment(
            web, ads, schema, ["user_id", "publisher_id"], "publisher_id",
            cfg.boundary_ts, TINY_HYPER, grid=(0.0,), seeds=(0,))
