"""Two-stage logistic-regression transfer baseline.

Stage one fits an L2-regularised logistic regression on the CF task; stage
two fits the CTR task with the ridge term centered on the stage-one weights
(zero-padded over the ad-feature block).  The intercept is handled as an
always-active extra feature and excluded from the regulariser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import CF, CTR, Dataset, SparseInstance
from .fm import sigmoid
from .training import DivergenceError

LR_MAGIC = "xferfm-lr v1"


@dataclass
class LrModel:
    task: str
    w: np.ndarray        # length n_features + 1; intercept last
    lambda_: float

    @property
    def n_features(self) -> int:
        return len(self.w) - 1

    @property
    def intercept(self) -> float:
        return float(self.w[-1])


def lr_predict(m: LrModel, inst: SparseInstance) -> float:
    active = inst.user_idx + inst.pub_idx + inst.ad_idx
    for i in active:
        if not 0 <= i < m.n_features:
            raise ValueError(f"feature index {i} out of range for LR model")
    z = m.intercept + (float(m.w[list(active)].sum()) if active else 0.0)
    return sigmoid(z)


def lr_scores(m: LrModel, d: Dataset) -> np.ndarray:
    """Predicted probabilities over a dataset."""
    p = d.packed()
    z = np.full(len(d), m.intercept)
    for indptr, idx in ((p.u_indptr, p.u_idx), (p.p_indptr, p.p_idx),
                       (p.a_indptr, p.a_idx)):
        np.add.at(z, np.repeat(np.arange(len(d)), np.diff(indptr)), m.w[idx])
    return sigmoid(z)


def lr_objective(w: np.ndarray, d: Dataset, center: np.ndarray, lam: float) -> float:
    """Sum of logistic losses plus ``lam * ||w - center||^2`` (no intercept term)."""
    p = d.packed()
    z = np.full(len(d), w[-1])
    for indptr, idx in ((p.u_indptr, p.u_idx), (p.p_indptr, p.p_idx),
                       (p.a_indptr, p.a_idx)):
        np.add.at(z, np.repeat(np.arange(len(d)), np.diff(indptr)), w[idx])
    y = p.labels
    loss = np.sum(np.logaddexp(0.0, np.where(y == 1.0, -z, z)))
    return float(loss + lam * np.sum((w[:-1] - center) ** 2))


def lr_grad(w: np.ndarray, d: Dataset, center: np.ndarray, lam: float) -> np.ndarray:
    """Full-batch gradient of :func:`lr_objective` with respect to ``w``."""
    m = LrModel(task=d.task, w=w, lambda_=lam)
    p = d.packed()
    resid = lr_scores(m, d) - p.labels
    g = np.zeros_like(w)
    g[-1] = resid.sum()
    for indptr, idx in ((p.u_indptr, p.u_idx), (p.p_indptr, p.p_idx),
                       (p.a_indptr, p.a_idx)):
        np.add.at(g, idx, resid[np.repeat(np.arange(len(d)), np.diff(indptr))])
    g[:-1] += 2.0 * lam * (w[:-1] - center)
    return g


def _train_lr(d: Dataset, center: np.ndarray | None, lam: float,
              eta: float, epochs: int, seed: int) -> LrModel:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n = d.space.cf_dims if d.task == CF else d.space.n_features
    w = np.zeros(n + 1)
    if center is None:
        center = np.zeros(n)
    p = d.packed()
    stride = max(1, len(d) // 256)
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(d)).astype(np.int64)
        bad = kernels.lr_epoch_kernel(
            w, p.u_indptr, p.u_idx, p.p_indptr, p.p_idx,
            p.a_indptr, p.a_idx, p.labels,
            order, eta, lam, center, stride,
        )
        if bad >= 0 or not np.isfinite(w).all():
            raise DivergenceError(f"non-finite LR weight at epoch {epoch}")
    return LrModel(task=d.task, w=w, lambda_=lam)


def train_lr_cf(d_web: Dataset, lam: float, eta: float, epochs: int, seed: int) -> LrModel:
    """Stage one: logistic regression on the CF task, ridge toward zero."""
    if d_web.task != CF:
        raise ValueError("train_lr_cf expects a CF dataset")
    return _train_lr(d_web, None, lam, eta, epochs, seed)


def train_lr_ctr_transfer(d_ads: Dataset, w_web_star: np.ndarray, lam: float,
                          eta: float, epochs: int, seed: int) -> LrModel:
    """Stage two: CTR logistic regression, ridge toward the CF solution.

    ``w_web_star`` covers the user/publisher range (its intercept entry, if
    present, is dropped); the ad-feature part of the center is zero.
    """
    if d_ads.task != CTR:
        raise ValueError("train_lr_ctr_transfer expects a CTR dataset")
    n = d_ads.space.n_features
    n_up = d_ads.space.cf_dims
    center = np.zeros(n)
    center[:n_up] = np.asarray(w_web_star, dtype=np.float64)[:n_up]
    return _train_lr(d_ads, center, lam, eta, epochs, seed)


def save_lr_model(m: LrModel, path, space_hash: str = "-") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{LR_MAGIC}\n")
        fh.write(f"task {m.task}\n")
        fh.write(f"n {m.n_features}\n")
        fh.write(f"lambda {float(m.lambda_)!r}\n")
        fh.write(f"space {space_hash}\n")
        fh.write(f"intercept {float(m.intercept)!r}\n")
        for i in range(m.n_features):
            fh.write(f"{i} {float(m.w[i])!r}\n")


def load_lr_model(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != LR_MAGIC:
        raise ValueError(f"{path}: not a {LR_MAGIC} file")
    header = dict(line.split(" ", 1) for line in lines[1:6])
    n = int(header["n"])
    w = np.zeros(n + 1)
    w[-1] = float(header["intercept"])
    for line in lines[6:]:
        if not line:
            continue
        i, val = line.split(" ")
        w[int(i)] = float(val)
    m = LrModel(task=header["task"], w=w, lambda_=float(header["lambda"]))
    return m, header["space"]
