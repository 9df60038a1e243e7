"""Factorisation-machine parameters and the logistic predictors.

Interactions are cross-group only: the CF predictor pairs user features with
publisher features, the CTR predictor additionally pairs both with ad
features, and no intra-group pair ever contributes.  Because intra-group
pairs are excluded, each interaction block reduces to an inner product of
per-group latent-vector sums, giving O(active features * K) per instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import CF, CTR, Dataset, FeatureSpace, PackedDataset, SparseInstance

MODEL_MAGIC = "xferfm-model v1"


def sigmoid(x):
    """Overflow-safe logistic function; scalar in, scalar out (arrays pass through)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


@dataclass
class FmModel:
    """Bias, per-feature weights and K-dimensional latent vectors for one task."""

    task: str
    K: int
    w0: float
    w: np.ndarray       # (n_features,)
    V: np.ndarray       # (n_features, K)

    @property
    def n_features(self) -> int:
        return len(self.w)

    @classmethod
    def zeros(cls, task: str, n_features: int, K: int) -> "FmModel":
        return cls(task=task, K=K, w0=0.0,
                   w=np.zeros(n_features), V=np.zeros((n_features, K)))

    def copy(self) -> "FmModel":
        return FmModel(task=self.task, K=self.K, w0=self.w0,
                       w=self.w.copy(), V=self.V.copy())

    def check_finite(self) -> None:
        if not (np.isfinite(self.w0) and np.isfinite(self.w).all()
                and np.isfinite(self.V).all()):
            raise FloatingPointError(f"non-finite parameter in {self.task} model")


def _check_indices(m: FmModel, inst: SparseInstance) -> None:
    for block in (inst.user_idx, inst.pub_idx, inst.ad_idx):
        for i in block:
            if not 0 <= i < m.n_features:
                raise ValueError(
                    f"feature index {i} out of range for {m.task} model "
                    f"with {m.n_features} features"
                )


def linear_score(m: FmModel, inst: SparseInstance) -> float:
    """Pre-sigmoid logit; ``predict_* = sigmoid(linear_score)``."""
    if m.task != inst.task:
        raise ValueError(f"model task {m.task} != instance task {inst.task}")
    _check_indices(m, inst)
    ui = np.fromiter(inst.user_idx, dtype=np.int64, count=len(inst.user_idx))
    pi = np.fromiter(inst.pub_idx, dtype=np.int64, count=len(inst.pub_idx))
    ai = np.fromiter(inst.ad_idx, dtype=np.int64, count=len(inst.ad_idx))
    s = m.w0 + m.w[ui].sum() + m.w[pi].sum() + m.w[ai].sum()
    su = m.V[ui].sum(axis=0) if len(ui) else np.zeros(m.K)
    sp = m.V[pi].sum(axis=0) if len(pi) else np.zeros(m.K)
    sa = m.V[ai].sum(axis=0) if len(ai) else np.zeros(m.K)
    return float(s + su @ sp + su @ sa + sp @ sa)


def predict_cf(m: FmModel, inst: SparseInstance) -> float:
    """Visit probability from the two-group (user x publisher) FM."""
    if m.task != CF:
        raise ValueError("predict_cf requires a CF model")
    return sigmoid(linear_score(m, inst))


def predict_ctr(m: FmModel, inst: SparseInstance) -> float:
    """Click probability from the three-group (user/publisher/ad) FM."""
    if m.task != CTR:
        raise ValueError("predict_ctr requires a CTR model")
    return sigmoid(linear_score(m, inst))


def score_packed(m: FmModel, packed: PackedDataset) -> np.ndarray:
    """Batch logits for a packed dataset via the compiled kernel."""
    out = np.empty(len(packed))
    kernels.score_batch(
        m.w0, m.w, m.V,
        packed.u_indptr, packed.u_idx,
        packed.p_indptr, packed.p_idx,
        packed.a_indptr, packed.a_idx,
        out,
    )
    return out


def score_dataset(m: FmModel, d: Dataset) -> np.ndarray:
    """Predicted probabilities for every instance of ``d``."""
    if m.task != d.task:
        raise ValueError(f"model task {m.task} != dataset task {d.task}")
    return sigmoid(score_packed(m, d.packed()))


# ---------------------------------------------------------------------------
# Serialization: decimal text with round-trip-exact floats
# ---------------------------------------------------------------------------

def save_model(m: FmModel, path, space_hash: str = "-") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{MODEL_MAGIC}\n")
        fh.write(f"task {m.task}\n")
        fh.write(f"K {m.K}\n")
        fh.write(f"n {m.n_features}\n")
        fh.write(f"space {space_hash}\n")
        fh.write(f"w0 {float(m.w0)!r}\n")
        for i in range(m.n_features):
            parts = [str(i), repr(float(m.w[i]))] + [repr(float(v)) for v in m.V[i]]
            fh.write(" ".join(parts) + "\n")


def load_model(path):
    """Load a model file; returns ``(model, space_hash)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
    header = dict(line.split(" ", 1) for line in lines[1:6])
    task, K, n = header["task"], int(header["K"]), int(header["n"])
    m = FmModel.zeros(task, n, K)
    m.w0 = float(header["w0"])
    for line in lines[6:]:
        if not line:
            continue
        parts = line.split(" ")
        i = int(parts[0])
        m.w[i] = float(parts[1])
        m.V[i] = [float(v) for v in parts[2 : 2 + K]]
    return m, header["space"]
