"""Joint MAP training of the CF and CTR factorisation machines.

The objective combines an alpha-weighted average log-likelihood over the two
datasets with a Gaussian log-prior in which the CTR model's user/publisher
weights and latent vectors are centered on the CF model's (the dual-task
bridge).  Optimisation is per-instance stochastic gradient ascent with an
amortised prior step (the full prior gradient is spread over each epoch).

Three regimes are provided:

* ``base``     - CTR task only; independent priors, no bridge, no CF model.
* ``disjoint`` - CF task first, then CTR with the CF parameters frozen as a
                 fixed bridge center.
* ``joint``    - both tasks interleaved in one stream with the bridge live in
                 both directions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .data import CF, CTR, Dataset, FeatureSpace, _pack as _pack_instances
from .fm import FmModel, linear_score, score_packed, sigmoid

BASE = "base"
DISJOINT = "disjoint"
JOINT = "joint"
REGIMES = (BASE, DISJOINT, JOINT)

# per-epoch stream modes
MODE_BASE = "BASE"
MODE_DISJOINT_STAGE1 = "DISJOINT_STAGE1"
MODE_DISJOINT_STAGE2 = "DISJOINT_STAGE2"
MODE_JOINT = "JOINT"

LN_2PI = math.log(2.0 * math.pi)


class ConfigError(ValueError):
    """Inconsistent hyperparameter / dataset combination."""


class DivergenceError(FloatingPointError):
    """A parameter became NaN/Inf during SGD."""


@dataclass
class HyperParams:
    alpha: float = 0.5
    eta: float = 0.05
    K: int = 8
    epochs: int = 30
    seed: int = 0
    init_scale: float = 0.01
    sigma2_w_web: float = 1.0
    sigma2_V_web: float = 1.0
    sigma2_w_d: float = 1.0
    sigma2_V_d: float = 1.0
    sigma2_w_ads_a: float = 1.0
    sigma2_V_ads_a: float = 1.0
    mu_w_web: float = 0.0
    mu_V_web: float = 0.0        # scalar or length-K array
    mu_w_ads_a: float = 0.0
    mu_V_ads_a: float = 0.0      # scalar or length-K array

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.eta <= 0:
            raise ConfigError("eta must be > 0")
        if self.K < 0 or self.epochs <= 0:
            raise ConfigError("K must be >= 0 and epochs > 0")
        for name in ("sigma2_w_web", "sigma2_V_web", "sigma2_w_d",
                     "sigma2_V_d", "sigma2_w_ads_a", "sigma2_V_ads_a"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")

    def mu_V_web_vec(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mu_V_web, dtype=np.float64), (self.K,)).copy()

    def mu_V_ads_a_vec(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mu_V_ads_a, dtype=np.float64), (self.K,)).copy()


@dataclass
class JointModel:
    """The CF model, the CTR model, and everything needed to couple them."""

    web: FmModel
    ads: FmModel
    hyper: HyperParams
    space: FeatureSpace

    def copy(self) -> "JointModel":
        return JointModel(web=self.web.copy(), ads=self.ads.copy(),
                          hyper=self.hyper, space=self.space)


@dataclass
class TrainReport:
    regime: str
    objective: list = field(default_factory=list)
    cf_loglik: list = field(default_factory=list)
    ctr_loglik: list = field(default_factory=list)
    log_prior: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,joint_objective,cf_loglik,ctr_loglik,log_prior\n")
            rows = zip(self.objective, self.cf_loglik, self.ctr_loglik, self.log_prior)
            for e, (obj, cf, ctr, lp) in enumerate(rows):
                fh.write(f"{e},{obj!r},{cf!r},{ctr!r},{lp!r}\n")


def init_params(space: FeatureSpace, hyper: HyperParams) -> JointModel:
    """Zero biases and weights; latent vectors i.i.d. N(0, init_scale^2) per seed."""
    rng = np.random.default_rng(hyper.seed)
    n_web = space.cf_dims
    n_ads = space.n_features
    web = FmModel(task=CF, K=hyper.K, w0=0.0, w=np.zeros(n_web),
                  V=rng.normal(0.0, 1.0, (n_web, hyper.K)) * hyper.init_scale)
    ads = FmModel(task=CTR, K=hyper.K, w0=0.0, w=np.zeros(n_ads),
                  V=rng.normal(0.0, 1.0, (n_ads, hyper.K)) * hyper.init_scale)
    return JointModel(web=web, ads=ads, hyper=hyper, space=space)


# ---------------------------------------------------------------------------
# Likelihood, prior, objective
# ---------------------------------------------------------------------------

def instance_log_likelihood(m: FmModel, inst) -> float:
    """Bernoulli log-likelihood of one instance, computed stably from the logit."""
    z = linear_score(m, inst)
    if inst.label == 1:
        return float(-np.logaddexp(0.0, -z))
    return float(-np.logaddexp(0.0, z))


def dataset_log_likelihood(m: FmModel, d: Dataset) -> float:
    """Sum of instance log-likelihoods over a dataset (batch path)."""
    z = score_packed(m, d.packed())
    y = d.packed().labels
    return float(np.sum(-np.logaddexp(0.0, np.where(y == 1.0, -z, z))))


def _gauss_block(x, mu, s2) -> float:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    return float(-0.5 * (n * (LN_2PI + math.log(s2)) + np.sum((x - mu) ** 2) / s2))


def log_prior(jm: JointModel, prior_mode: str = MODE_JOINT) -> float:
    """Gaussian log-density of the parameters under the regime's prior.

    The default (joint/bridge) form has six blocks: CF weights and vectors
    around their scalar/vector means, CTR user-publisher weights and vectors
    around the CF parameters, and ad-block weights and vectors around their
    own means.  Biases carry no prior.
    """
    h = jm.hyper
    n_up = jm.web.n_features
    mu_vw = h.mu_V_web_vec()
    mu_va = h.mu_V_ads_a_vec()
    cf_blocks = (
        _gauss_block(jm.web.w, h.mu_w_web, h.sigma2_w_web)
        + _gauss_block(jm.web.V - mu_vw, 0.0, h.sigma2_V_web)
    )
    ad_blocks = (
        _gauss_block(jm.ads.w[n_up:], h.mu_w_ads_a, h.sigma2_w_ads_a)
        + _gauss_block(jm.ads.V[n_up:] - mu_va, 0.0, h.sigma2_V_ads_a)
    )
    if prior_mode in (MODE_JOINT, MODE_DISJOINT_STAGE2):
        bridge = (
            _gauss_block(jm.ads.w[:n_up] - jm.web.w, 0.0, h.sigma2_w_d)
            + _gauss_block(jm.ads.V[:n_up] - jm.web.V, 0.0, h.sigma2_V_d)
        )
        return cf_blocks + bridge + ad_blocks
    if prior_mode == MODE_DISJOINT_STAGE1:
        return cf_blocks
    if prior_mode == MODE_BASE:
        indep = (
            _gauss_block(jm.ads.w[:n_up], h.mu_w_web, h.sigma2_w_web)
            + _gauss_block(jm.ads.V[:n_up] - mu_vw, 0.0, h.sigma2_V_web)
        )
        return indep + ad_blocks
    raise ValueError(f"unknown prior mode {prior_mode!r}")


def joint_objective(jm: JointModel, d_web: Dataset, d_ads: Dataset,
                    prior_mode: str = MODE_JOINT):
    """Alpha-weighted averaged log-likelihoods plus the log-prior.

    Returns ``(objective, cf_term_sum, ctr_term_sum, log_prior)`` where the
    objective is ``alpha/|Dweb| * cf + (1-alpha)/|Dads| * ctr + prior``.
    """
    alpha = jm.hyper.alpha
    if 0.0 < alpha < 1.0 and (len(d_web) == 0 or len(d_ads) == 0):
        raise ConfigError("alpha in (0,1) requires both datasets nonempty")
    cf_sum = dataset_log_likelihood(jm.web, d_web) if len(d_web) and alpha > 0 else 0.0
    ctr_sum = dataset_log_likelihood(jm.ads, d_ads) if len(d_ads) and alpha < 1 else 0.0
    lp = log_prior(jm, prior_mode)
    obj = lp
    if alpha > 0 and len(d_web):
        obj += alpha / len(d_web) * cf_sum
    if alpha < 1 and len(d_ads):
        obj += (1.0 - alpha) / len(d_ads) * ctr_sum
    return obj, cf_sum, ctr_sum, lp


# ---------------------------------------------------------------------------
# Gradients (reference implementations; the SGD kernel inlines the same math)
# ---------------------------------------------------------------------------

@dataclass
class InstanceGrad:
    """Sparse ascent gradient of one instance's log-likelihood."""

    w0: float
    w: dict          # feature index -> gradient
    V: dict          # feature index -> length-K gradient row


def grad_instance(m: FmModel, inst) -> InstanceGrad:
    z = linear_score(m, inst)
    resid = inst.label - sigmoid(z)
    su = m.V[list(inst.user_idx)].sum(axis=0) if inst.user_idx else np.zeros(m.K)
    sp = m.V[list(inst.pub_idx)].sum(axis=0) if inst.pub_idx else np.zeros(m.K)
    sa = m.V[list(inst.ad_idx)].sum(axis=0) if inst.ad_idx else np.zeros(m.K)
    gw, gV = {}, {}
    for i in inst.user_idx:
        gw[i] = resid
        gV[i] = resid * (sp + sa)
    for j in inst.pub_idx:
        gw[j] = resid
        gV[j] = resid * (su + sa)
    for l in inst.ad_idx:
        gw[l] = resid
        gV[l] = resid * (su + sp)
    return InstanceGrad(w0=float(resid), w=gw, V=gV)


@dataclass
class PriorGrad:
    """Dense ascent gradient of the log-prior over both models."""

    web_w: np.ndarray
    web_V: np.ndarray
    ads_w: np.ndarray
    ads_V: np.ndarray


def grad_prior(jm: JointModel, prior_mode: str = MODE_JOINT) -> PriorGrad:
    h = jm.hyper
    n_up = jm.web.n_features
    mu_vw = h.mu_V_web_vec()
    mu_va = h.mu_V_ads_a_vec()
    g_web_w = np.zeros_like(jm.web.w)
    g_web_V = np.zeros_like(jm.web.V)
    g_ads_w = np.zeros_like(jm.ads.w)
    g_ads_V = np.zeros_like(jm.ads.V)
    if prior_mode in (MODE_JOINT, MODE_DISJOINT_STAGE1, MODE_DISJOINT_STAGE2):
        g_web_w += -(jm.web.w - h.mu_w_web) / h.sigma2_w_web
        g_web_V += -(jm.web.V - mu_vw) / h.sigma2_V_web
    if prior_mode in (MODE_JOINT, MODE_DISJOINT_STAGE2):
        dw = jm.ads.w[:n_up] - jm.web.w
        dV = jm.ads.V[:n_up] - jm.web.V
        g_web_w += dw / h.sigma2_w_d
        g_web_V += dV / h.sigma2_V_d
        g_ads_w[:n_up] += -dw / h.sigma2_w_d
        g_ads_V[:n_up] += -dV / h.sigma2_V_d
    if prior_mode == MODE_BASE:
        g_ads_w[:n_up] += -(jm.ads.w[:n_up] - h.mu_w_web) / h.sigma2_w_web
        g_ads_V[:n_up] += -(jm.ads.V[:n_up] - mu_vw) / h.sigma2_V_web
    if prior_mode != MODE_DISJOINT_STAGE1:
        g_ads_w[n_up:] += -(jm.ads.w[n_up:] - h.mu_w_ads_a) / h.sigma2_w_ads_a
        g_ads_V[n_up:] += -(jm.ads.V[n_up:] - mu_va) / h.sigma2_V_ads_a
    return PriorGrad(web_w=g_web_w, web_V=g_web_V, ads_w=g_ads_w, ads_V=g_ads_V)


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

_MODE_SETTINGS = {
    #                   update_web, update_ads, prior_mode
    MODE_BASE:            (False, True, kernels.PRIOR_BASE),
    MODE_DISJOINT_STAGE1: (True, False, kernels.PRIOR_CF_ONLY),
    MODE_DISJOINT_STAGE2: (False, True, kernels.PRIOR_BRIDGE),
    MODE_JOINT:           (True, True, kernels.PRIOR_BRIDGE),
}


def _epoch_stream(mode: str, n_web: int, n_ads: int, seed: int, epoch: int):
    """Seeded-shuffled (task, row) stream for one epoch."""
    if mode == MODE_BASE:
        tasks = [np.ones(n_ads, dtype=np.int8)]
        rows = [np.arange(n_ads, dtype=np.int64)]
    elif mode == MODE_DISJOINT_STAGE1:
        tasks = [np.zeros(n_web, dtype=np.int8)]
        rows = [np.arange(n_web, dtype=np.int64)]
    else:
        tasks = [np.zeros(n_web, dtype=np.int8), np.ones(n_ads, dtype=np.int8)]
        rows = [np.arange(n_web, dtype=np.int64), np.arange(n_ads, dtype=np.int64)]
    task = np.concatenate(tasks)
    row = np.concatenate(rows)
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(len(task))
    return task[perm], row[perm]


def sgd_epoch(jm: JointModel, d_web: Dataset, d_ads: Dataset, mode: str,
              epoch: int = 0, prior_stride: int | None = None) -> JointModel:
    """One in-place SGD pass in the given mode; returns the updated model.

    Instance weights follow the averaged objective: ``alpha/|Dweb|`` for CF
    instances, ``(1-alpha)/|Dads|`` for CTR instances.  ``DISJOINT_STAGE2``
    leaves every CF parameter untouched.
    """
    if mode not in _MODE_SETTINGS:
        raise ValueError(f"unknown SGD mode {mode!r}")
    update_web, update_ads, prior_mode = _MODE_SETTINGS[mode]
    h = jm.hyper
    n_web, n_ads = len(d_web), len(d_ads)
    if mode in (MODE_BASE,) and n_ads == 0:
        raise ConfigError("BASE mode needs a nonempty CTR dataset")
    if mode == MODE_DISJOINT_STAGE1 and n_web == 0:
        raise ConfigError("DISJOINT stage 1 needs a nonempty CF dataset")
    task, row = _epoch_stream(mode, n_web, n_ads, h.seed, epoch)
    if len(task) == 0:
        return jm
    if prior_stride is None:
        prior_stride = max(1, len(task) // 256)
    beta_web = h.alpha / n_web if n_web else 0.0
    beta_ads = (1.0 - h.alpha) / n_ads if n_ads else 0.0
    pw = d_web.packed() if n_web else _EMPTY_PACK
    pa = d_ads.packed() if n_ads else _EMPTY_PACK
    web_w0 = np.array([jm.web.w0])
    ads_w0 = np.array([jm.ads.w0])
    bad_step = kernels.sgd_epoch_kernel(
        web_w0, jm.web.w, jm.web.V,
        ads_w0, jm.ads.w, jm.ads.V,
        pw.u_indptr, pw.u_idx, pw.p_indptr, pw.p_idx, pw.labels,
        pa.u_indptr, pa.u_idx, pa.p_indptr, pa.p_idx,
        pa.a_indptr, pa.a_idx, pa.labels,
        task, row,
        beta_web, beta_ads, h.eta,
        update_web, update_ads,
        prior_mode, jm.web.n_features, prior_stride,
        h.mu_w_web, h.sigma2_w_web, h.mu_V_web_vec(), h.sigma2_V_web,
        h.sigma2_w_d, h.sigma2_V_d,
        h.mu_w_ads_a, h.sigma2_w_ads_a, h.mu_V_ads_a_vec(), h.sigma2_V_ads_a,
    )
    jm.web.w0 = float(web_w0[0])
    jm.ads.w0 = float(ads_w0[0])
    if bad_step >= 0:
        raise DivergenceError(
            f"non-finite parameter detected at step {bad_step} of mode {mode}, epoch {epoch}"
        )
    jm.web.check_finite()
    jm.ads.check_finite()
    return jm


_EMPTY_PACK = _pack_instances([])


def train(space: FeatureSpace, d_web: Dataset | None, d_ads: Dataset,
          hyper: HyperParams, regime: str,
          stage1: JointModel | None = None):
    """Train one regime end to end; returns ``(JointModel, TrainReport)``.

    ``base`` ignores alpha (CTR weight fixed at 1/|Dads|) and never touches
    the CF model.  ``disjoint`` runs a CF-only stage then a CTR stage with
    the CF parameters frozen; a precomputed ``stage1`` model (from the same
    seed and data) may be passed to skip the first stage.  ``joint`` runs the
    full bridged objective.  Deterministic per (seed, hyper, data).
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    t0 = time.perf_counter()
    report = TrainReport(regime=regime)
    empty_web = Dataset(space=space, instances=[], task=CF)
    d_web = d_web if d_web is not None else empty_web

    if regime == BASE:
        jm = init_params(space, replace(hyper, alpha=0.0))
        for epoch in range(hyper.epochs):
            sgd_epoch(jm, empty_web, d_ads, MODE_BASE, epoch)
            _record(report, jm, empty_web, d_ads, MODE_BASE)
    elif regime == JOINT:
        jm = init_params(space, hyper)
        for epoch in range(hyper.epochs):
            sgd_epoch(jm, d_web, d_ads, MODE_JOINT, epoch)
            _record(report, jm, d_web, d_ads, MODE_JOINT)
    else:  # DISJOINT
        if stage1 is not None:
            jm = stage1.copy()
            jm.hyper = replace(hyper, alpha=1.0)
        else:
            jm = init_params(space, replace(hyper, alpha=1.0))
            for epoch in range(hyper.epochs):
                sgd_epoch(jm, d_web, empty_ads(space), MODE_DISJOINT_STAGE1, epoch)
                _record(report, jm, d_web, empty_ads(space), MODE_DISJOINT_STAGE1)
        jm.hyper = hyper
        for epoch in range(hyper.epochs):
            sgd_epoch(jm, d_web, d_ads, MODE_DISJOINT_STAGE2, epoch)
            _record(report, jm, d_web, d_ads, MODE_DISJOINT_STAGE2)
    report.wall_time = time.perf_counter() - t0
    return jm, report


def empty_ads(space: FeatureSpace) -> Dataset:
    return Dataset(space=space, instances=[], task=CTR)


def _record(report: TrainReport, jm: JointModel, d_web, d_ads, mode: str) -> None:
    obj, cf, ctr, lp = joint_objective(jm, d_web, d_ads, prior_mode=mode)
    report.objective.append(obj)
    report.cf_loglik.append(cf)
    report.ctr_loglik.append(ctr)
    report.log_prior.append(lp)
