"""Alpha-sweep harness and the feature-appending experiment driver.

A sweep trains the requested regimes over a grid of alpha values (regimes
that ignore alpha - ``base`` and ``disjointlr`` - are trained once) and
evaluates every cell on the CTR test set.  Cells run in parallel threads;
the compiled kernels release the GIL, and ``XFERFM_THREADS`` caps the pool.
"""

from __future__ import annotations

import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baseline, training
from .data import CF, CTR, Dataset, build_feature_space, encode_dataset, split_by_time
from .fm import score_dataset
from .metrics import auc, rmse

DISJOINT_LR = "disjointlr"
SWEEP_REGIMES = (training.BASE, training.DISJOINT, training.JOINT, DISJOINT_LR)
SWEEP_HEADER = "regime,alpha,seed,auc,rmse,n_pos,n_neg"


@dataclass
class EvalReport:
    """Metrics for one trained model on one test set."""

    auc: float
    rmse: float
    n_pos: int
    n_neg: int
    regime: str = ""
    alpha: float = float("nan")
    seed: int = 0
    feature_tag: str = ""


def evaluate_scores(scores, labels, **tags) -> EvalReport:
    labels = np.asarray(labels)
    return EvalReport(
        auc=auc(scores, labels),
        rmse=rmse(scores, labels),
        n_pos=int((labels == 1).sum()),
        n_neg=int((labels == 0).sum()),
        **tags,
    )


def evaluate_fm(model, d: Dataset, **tags) -> EvalReport:
    return evaluate_scores(score_dataset(model, d), d.packed().labels, **tags)


def evaluate_lr(model, d: Dataset, **tags) -> EvalReport:
    return evaluate_scores(baseline.lr_scores(model, d), d.packed().labels, **tags)


@dataclass
class SweepResult:
    """All sweep cells plus best-alpha bookkeeping."""

    rows: list = field(default_factory=list)   # EvalReport per cell
    grid: tuple = ()

    def regime_rows(self, regime):
        return [r for r in self.rows if r.regime == regime]

    def _median_by_alpha(self, regime, attr):
        by_alpha = {}
        for r in self.regime_rows(regime):
            by_alpha.setdefault(r.alpha, []).append(getattr(r, attr))
        return {a: statistics.median(v) for a, v in by_alpha.items()}

    def best_alpha(self, regime) -> float:
        """Argmax of seed-median AUC over the grid (smallest alpha on ties)."""
        med = self._median_by_alpha(regime, "auc")
        if not med:
            raise ValueError(f"no rows for regime {regime!r}")
        return min(med, key=lambda a: (-med[a], a))

    def best_alpha_rmse(self, regime) -> float:
        """Argmin of seed-median RMSE over the grid."""
        med = self._median_by_alpha(regime, "rmse")
        return min(med, key=lambda a: (med[a], a))

    def best_auc(self, regime) -> float:
        med = self._median_by_alpha(regime, "auc")
        return med[self.best_alpha(regime)]

    def lift(self, over: str) -> float:
        """Best-alpha JOINT AUC minus the other regime's best AUC."""
        return self.best_auc(training.JOINT) - self.best_auc(over)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(SWEEP_HEADER + "\n")
            for r in self.rows:
                alpha = "" if r.alpha != r.alpha else repr(float(r.alpha))
                fh.write(f"{r.regime},{alpha},{r.seed},{r.auc!r},{r.rmse!r},"
                         f"{r.n_pos},{r.n_neg}\n")


def _n_workers() -> int:
    cap = os.environ.get("XFERFM_THREADS")
    if cap:
        return max(1, int(cap))
    return min(8, os.cpu_count() or 1)


def alpha_sweep(space, d_web_train, d_ads_train, d_ads_test,
                hyper_base, grid, regimes, seeds=(0,),
                lr_lambda: float = 0.1) -> SweepResult:
    """Train every (regime, alpha, seed) cell and score it on the CTR test set.

    ``base`` and ``disjointlr`` ignore alpha and are trained once (first
    seed).  Disjoint stage-1 CF models are cached per seed and shared across
    the alpha grid, since stage 1 does not depend on alpha.
    """
    grid = tuple(float(a) for a in grid)
    if not grid or any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError("alpha grid must be nonempty with values in [0, 1]")
    for regime in regimes:
        if regime not in SWEEP_REGIMES:
            raise ValueError(f"unknown regime {regime!r}")
    seeds = tuple(int(s) for s in seeds)

    pool = ThreadPoolExecutor(max_workers=_n_workers())
    try:
        stage1 = {}
        if training.DISJOINT in regimes:
            def make_stage1(seed):
                hyper = replace(hyper_base, seed=seed, alpha=1.0)
                jm = training.init_params(space, hyper)
                for epoch in range(hyper.epochs):
                    training.sgd_epoch(jm, d_web_train, training.empty_ads(space),
                                       training.MODE_DISJOINT_STAGE1, epoch)
                return jm
            futures = {s: pool.submit(make_stage1, s) for s in seeds}
            stage1 = {s: f.result() for s, f in futures.items()}

        def run_cell(regime, alpha, seed):
            try:
                if regime == DISJOINT_LR:
                    lr_web = baseline.train_lr_cf(
                        d_web_train, lr_lambda, hyper_base.eta, hyper_base.epochs, seed)
                    lr_ads = baseline.train_lr_ctr_transfer(
                        d_ads_train, lr_web.w, lr_lambda,
                        hyper_base.eta, hyper_base.epochs, seed)
                    return evaluate_lr(lr_ads, d_ads_test,
                                       regime=regime, alpha=alpha, seed=seed)
                hyper = replace(hyper_base, seed=seed,
                                alpha=0.0 if alpha != alpha else alpha)
                jm, _ = training.train(space, d_web_train, d_ads_train, hyper,
                                       regime, stage1=stage1.get(seed))
                return evaluate_fm(jm.ads, d_ads_test,
                                   regime=regime, alpha=alpha, seed=seed)
            except Exception as exc:
                raise RuntimeError(
                    f"sweep cell failed (regime={regime}, alpha={alpha}, seed={seed})"
                ) from exc

        nan = float("nan")
        cells = []
        for regime in regimes:
            if regime in (training.BASE, DISJOINT_LR):
                cells.append((regime, nan, seeds[0]))
            else:
                for alpha in grid:
                    for seed in seeds:
                        cells.append((regime, alpha, seed))
        futures = [pool.submit(run_cell, *cell) for cell in cells]
        rows = [f.result() for f in futures]
    finally:
        pool.shutdown(wait=False)
    return SweepResult(rows=rows, grid=grid)


TRANSFER_HELPFUL = "transfer-helpful"
NO_TRANSFER_VALUE = "no-transfer-value"
INCONCLUSIVE = "inconclusive"


def verdict_for(best_alpha: float, helpful_threshold: float = 0.5,
                none_threshold: float = 0.2) -> str:
    """Judge a feature's transfer value from the optimal alpha position."""
    if best_alpha >= helpful_threshold:
        return TRANSFER_HELPFUL
    if best_alpha <= none_threshold:
        return NO_TRANSFER_VALUE
    return INCONCLUSIVE


def feature_appending_experiment(web_records, ads_records, schema,
                                 base_attrs, candidate_attr,
                                 boundary_ts, hyper, grid, seeds=(0,),
                                 helpful_threshold: float = 0.5,
                                 none_threshold: float = 0.2):
    """Append one attribute to the base feature set and judge its transfer value.

    Rebuilds the feature space over ``base_attrs + [candidate_attr]``, splits
    both logs at ``boundary_ts``, sweeps JOINT over the alpha grid, and maps
    the best alpha to a verdict.  Returns ``(SweepResult, best_alpha, verdict)``.
    """
    from .data import SchemaError

    if candidate_attr not in schema:
        raise SchemaError(f"candidate attribute {candidate_attr!r} not in schema")
    keep = list(base_attrs) + [candidate_attr]
    from .data import AD

    if not any(schema.get(a) == AD for a in keep):
        raise SchemaError("base_attrs must include an ad-group attribute "
                          "(CTR instances need at least one ad feature)")
    present = {a for _, _, rec in list(web_records) + list(ads_records) for a in rec}
    if candidate_attr not in present:
        raise SchemaError(f"candidate attribute {candidate_attr!r} absent from the logs")

    def filt(records):
        return [(ts, y, {a: v for a, v in rec.items() if a in keep})
                for ts, y, rec in records]

    web, ads = filt(web_records), filt(ads_records)
    web_train = [r for r in web if r[0] < boundary_ts]
    ads_train = [r for r in ads if r[0] < boundary_ts]
    ads_test = [r for r in ads if r[0] >= boundary_ts]
    space = build_feature_space(
        [rec for _, _, rec in web_train + ads_train],
        {a: g for a, g in schema.items() if a in keep},
    )
    d_web = encode_dataset(web_train, CF, space)
    d_ads = encode_dataset(ads_train, CTR, space)
    d_test = encode_dataset(ads_test, CTR, space)
    result = alpha_sweep(space, d_web, d_ads, d_test, hyper, grid,
                         regimes=(training.JOINT,), seeds=seeds)
    best = result.best_alpha(training.JOINT)
    for row in result.rows:
        row.feature_tag = f"+{candidate_attr}"
    return result, best, verdict_for(best, helpful_threshold, none_threshold)
