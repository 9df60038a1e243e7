"""Numeric inner loops shared by prediction, training and the LR baseline.

Compiled with numba unless ``XFERFM_DISABLE_NUMBA=1`` (see :mod:`xferfm.backend`).
All functions take flat numpy arrays; CSR-style (indptr, idx) pairs describe the
active feature indices per instance and group.  A dataset with no ad features
simply passes empty ad arrays.

The SGD kernel applies the instance-likelihood gradient at every step and
amortises the dense prior gradient over the epoch: the full prior gradient is
applied in chunks of ``prior_stride`` steps, scaled by chunk length / epoch
length, so one epoch applies it exactly once in total.
"""

import numpy as np

from .backend import jit

# prior modes for sgd_epoch_kernel / _apply_prior
PRIOR_NONE = 0
PRIOR_CF_ONLY = 1
PRIOR_BRIDGE = 2
PRIOR_BASE = 3


@jit
def _sigmoid_scalar(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@jit
def score_batch(w0, w, V, u_indptr, u_idx, p_indptr, p_idx, a_indptr, a_idx, out):
    """Pre-sigmoid FM logits for a packed dataset (cross-group interactions only)."""
    n = out.shape[0]
    K = V.shape[1]
    su = np.zeros(K)
    sp = np.zeros(K)
    sa = np.zeros(K)
    for r in range(n):
        s = w0
        for f in range(K):
            su[f] = 0.0
            sp[f] = 0.0
            sa[f] = 0.0
        for t in range(u_indptr[r], u_indptr[r + 1]):
            j = u_idx[t]
            s += w[j]
            for f in range(K):
                su[f] += V[j, f]
        for t in range(p_indptr[r], p_indptr[r + 1]):
            j = p_idx[t]
            s += w[j]
            for f in range(K):
                sp[f] += V[j, f]
        for t in range(a_indptr[r], a_indptr[r + 1]):
            j = a_idx[t]
            s += w[j]
            for f in range(K):
                sa[f] += V[j, f]
        for f in range(K):
            s += su[f] * sp[f] + su[f] * sa[f] + sp[f] * sa[f]
        out[r] = s
    return out


@jit
def apply_prior(
    scale,
    web_w, web_V, ads_w, ads_V,
    update_web, update_ads,
    prior_mode,
    n_up,
    mu_w_web, s2_w_web, mu_V_web, s2_V_web,
    s2_w_d, s2_V_d,
    mu_w_ads_a, s2_w_ads_a, mu_V_ads_a, s2_V_ads_a,
):
    """Ascent step of ``scale * d(log P(params))``.  Returns True when all finite."""
    K = web_V.shape[1]
    ok = True
    for i in range(n_up):
        gw_web = 0.0
        gw_ads = 0.0
        if prior_mode == PRIOR_CF_ONLY or prior_mode == PRIOR_BRIDGE:
            gw_web += -(web_w[i] - mu_w_web) / s2_w_web
        if prior_mode == PRIOR_BRIDGE:
            d = ads_w[i] - web_w[i]
            gw_web += d / s2_w_d
            gw_ads += -d / s2_w_d
        elif prior_mode == PRIOR_BASE:
            gw_ads += -(ads_w[i] - mu_w_web) / s2_w_web
        if update_web:
            web_w[i] += scale * gw_web
            ok = ok and np.isfinite(web_w[i])
        if update_ads:
            ads_w[i] += scale * gw_ads
            ok = ok and np.isfinite(ads_w[i])
        for f in range(K):
            gv_web = 0.0
            gv_ads = 0.0
            if prior_mode == PRIOR_CF_ONLY or prior_mode == PRIOR_BRIDGE:
                gv_web += -(web_V[i, f] - mu_V_web[f]) / s2_V_web
            if prior_mode == PRIOR_BRIDGE:
                d = ads_V[i, f] - web_V[i, f]
                gv_web += d / s2_V_d
                gv_ads += -d / s2_V_d
            elif prior_mode == PRIOR_BASE:
                gv_ads += -(ads_V[i, f] - mu_V_web[f]) / s2_V_web
            if update_web:
                web_V[i, f] += scale * gv_web
                ok = ok and np.isfinite(web_V[i, f])
            if update_ads:
                ads_V[i, f] += scale * gv_ads
                ok = ok and np.isfinite(ads_V[i, f])
    if update_ads and prior_mode != PRIOR_CF_ONLY and prior_mode != PRIOR_NONE:
        for l in range(n_up, ads_w.shape[0]):
            ads_w[l] += scale * (-(ads_w[l] - mu_w_ads_a) / s2_w_ads_a)
            ok = ok and np.isfinite(ads_w[l])
            for f in range(K):
                ads_V[l, f] += scale * (-(ads_V[l, f] - mu_V_ads_a[f]) / s2_V_ads_a)
                ok = ok and np.isfinite(ads_V[l, f])
    return ok


@jit
def sgd_epoch_kernel(
    web_w0, web_w, web_V,           # web_w0: length-1 array (bias carries no prior)
    ads_w0, ads_w, ads_V,
    wu_indptr, wu_idx, wp_indptr, wp_idx, w_y,
    au_indptr, au_idx, ap_indptr, ap_idx, aa_indptr, aa_idx, a_y,
    order_task, order_row,          # shuffled stream; task 0 = CF, 1 = CTR
    beta_web, beta_ads, eta,
    update_web, update_ads,
    prior_mode, n_up, prior_stride,
    mu_w_web, s2_w_web, mu_V_web, s2_V_web,
    s2_w_d, s2_V_d,
    mu_w_ads_a, s2_w_ads_a, mu_V_ads_a, s2_V_ads_a,
):
    """One stochastic-ascent pass over the shuffled instance stream.

    Returns -1 on success, or the step index at which a non-finite parameter
    was first detected.
    """
    n_steps = order_task.shape[0]
    K = web_V.shape[1]
    su = np.zeros(K)
    sp = np.zeros(K)
    sa = np.zeros(K)
    since_prior = 0
    for step in range(n_steps):
        task = order_task[step]
        r = order_row[step]
        if task == 0 and update_web:
            s = web_w0[0]
            for f in range(K):
                su[f] = 0.0
                sp[f] = 0.0
            for t in range(wu_indptr[r], wu_indptr[r + 1]):
                j = wu_idx[t]
                s += web_w[j]
                for f in range(K):
                    su[f] += web_V[j, f]
            for t in range(wp_indptr[r], wp_indptr[r + 1]):
                j = wp_idx[t]
                s += web_w[j]
                for f in range(K):
                    sp[f] += web_V[j, f]
            for f in range(K):
                s += su[f] * sp[f]
            g = eta * beta_web * (w_y[r] - _sigmoid_scalar(s))
            web_w0[0] += g
            for t in range(wu_indptr[r], wu_indptr[r + 1]):
                j = wu_idx[t]
                web_w[j] += g
                for f in range(K):
                    web_V[j, f] += g * sp[f]
            for t in range(wp_indptr[r], wp_indptr[r + 1]):
                j = wp_idx[t]
                web_w[j] += g
                for f in range(K):
                    web_V[j, f] += g * su[f]
        elif task == 1 and update_ads:
            s = ads_w0[0]
            for f in range(K):
                su[f] = 0.0
                sp[f] = 0.0
                sa[f] = 0.0
            for t in range(au_indptr[r], au_indptr[r + 1]):
                j = au_idx[t]
                s += ads_w[j]
                for f in range(K):
                    su[f] += ads_V[j, f]
            for t in range(ap_indptr[r], ap_indptr[r + 1]):
                j = ap_idx[t]
                s += ads_w[j]
                for f in range(K):
                    sp[f] += ads_V[j, f]
            for t in range(aa_indptr[r], aa_indptr[r + 1]):
                j = aa_idx[t]
                s += ads_w[j]
                for f in range(K):
                    sa[f] += ads_V[j, f]
            for f in range(K):
                s += su[f] * sp[f] + su[f] * sa[f] + sp[f] * sa[f]
            g = eta * beta_ads * (a_y[r] - _sigmoid_scalar(s))
            ads_w0[0] += g
            for t in range(au_indptr[r], au_indptr[r + 1]):
                j = au_idx[t]
                ads_w[j] += g
                for f in range(K):
                    ads_V[j, f] += g * (sp[f] + sa[f])
            for t in range(ap_indptr[r], ap_indptr[r + 1]):
                j = ap_idx[t]
                ads_w[j] += g
                for f in range(K):
                    ads_V[j, f] += g * (su[f] + sa[f])
            for t in range(aa_indptr[r], aa_indptr[r + 1]):
                j = aa_idx[t]
                ads_w[j] += g
                for f in range(K):
                    ads_V[j, f] += g * (su[f] + sp[f])
        since_prior += 1
        if since_prior == prior_stride or step == n_steps - 1:
            if prior_mode != PRIOR_NONE:
                scale = eta * since_prior / n_steps
                ok = apply_prior(
                    scale,
                    web_w, web_V, ads_w, ads_V,
                    update_web, update_ads,
                    prior_mode, n_up,
                    mu_w_web, s2_w_web, mu_V_web, s2_V_web,
                    s2_w_d, s2_V_d,
                    mu_w_ads_a, s2_w_ads_a, mu_V_ads_a, s2_V_ads_a,
                )
                if not ok:
                    return step
            if not (np.isfinite(web_w0[0]) and np.isfinite(ads_w0[0])):
                return step
            since_prior = 0
    return -1


@jit
def lr_epoch_kernel(
    w,                            # length n_features + 1, intercept last
    u_indptr, u_idx, p_indptr, p_idx, a_indptr, a_idx, y,
    order, eta, lam, center,        # center: length n_features
    reg_stride,
):
    """One SGD pass minimising sum of logistic losses + lam * ||w - center||^2.

    The likelihood step is plain per-instance gradient descent; the ridge term
    is applied as exact exponential shrinkage toward ``center`` every
    ``reg_stride`` steps (and at epoch end), which keeps the update stable for
    arbitrarily large ``lam``.  The intercept is excluded from the regulariser.
    Returns -1 on success or the first step with a non-finite parameter.
    """
    n_steps = order.shape[0]
    n_features = w.shape[0] - 1
    since_reg = 0
    for step in range(n_steps):
        r = order[step]
        s = w[n_features]
        for t in range(u_indptr[r], u_indptr[r + 1]):
            s += w[u_idx[t]]
        for t in range(p_indptr[r], p_indptr[r + 1]):
            s += w[p_idx[t]]
        for t in range(a_indptr[r], a_indptr[r + 1]):
            s += w[a_idx[t]]
        g = eta * (y[r] - _sigmoid_scalar(s))
        w[n_features] += g
        for t in range(u_indptr[r], u_indptr[r + 1]):
            w[u_idx[t]] += g
        for t in range(p_indptr[r], p_indptr[r + 1]):
            w[p_idx[t]] += g
        for t in range(a_indptr[r], a_indptr[r + 1]):
            w[a_idx[t]] += g
        since_reg += 1
        if since_reg == reg_stride or step == n_steps - 1:
            if lam > 0.0:
                factor = np.exp(-2.0 * eta * lam * since_reg / n_steps)
                for i in range(n_features):
                    w[i] = center[i] + (w[i] - center[i]) * factor
            if not np.isfinite(w[n_features]):
                return step
            since_reg = 0
    return -1
