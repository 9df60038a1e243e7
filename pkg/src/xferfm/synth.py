"""Synthetic paired CF/CTR log generator with a planted latent-factor truth.

The generator plants per-user and per-publisher latent vectors for the CF
task; the CTR task's counterparts are a ``rho``-correlated mixture of those,
so ``rho`` directly controls how much browsing structure is transferable to
click prediction.  Click logits sum all three cross-group interactions
(user x publisher, user x ad, publisher x ad) through the CTR-task vectors;
at ``rho=0`` the CF geometry carries no information about clicks, so any
transfer lift measured there would be fabricated.

Optional extra attributes are planted side information: signal-flagged
attributes contribute the same per-value scalar effect to both tasks' logits,
noise attributes contribute nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import AD, CF, CTR, PUBLISHER, USER, Dataset, build_feature_space, encode_dataset
from .fm import sigmoid

TRUTH_MAGIC = "xferfm-truth v1"
TWO_WEEKS = 14 * 86400


@dataclass(frozen=True)
class ExtraAttr:
    """A planted side attribute; ``signal`` attrs carry shared cross-task effects."""

    name: str
    cardinality: int
    signal: bool
    scale: float = 1.0       # std-dev of the planted per-value effect


@dataclass
class GenConfig:
    n_users: int = 2000
    n_publishers: int = 500
    n_ads: int = 50
    k_true: int = 4
    rho: float = 0.8
    n_web_events: int = 200_000
    n_ads_events: int = 8_000
    label_noise: float = 0.1
    signal_scale: float = 2.5
    # ad traffic concentrates on a subpopulation: CTR events draw their
    # users/publishers from the first fraction of each id range
    ctr_user_frac: float = 0.05
    ctr_pub_frac: float = 0.05
    extra_attrs: tuple = ()
    week_boundary: float = 0.5
    target_pos_rate: float = 1.0 / 6.0
    deterministic_labels: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_publishers", "n_ads", "k_true",
                     "n_web_events", "n_ads_events"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")
        if self.signal_scale <= 0.0:
            raise ValueError("signal_scale must be positive")
        for name in ("ctr_user_frac", "ctr_pub_frac"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if not 0.0 < self.week_boundary < 1.0:
            raise ValueError("week_boundary must be in (0, 1)")
        if not 0.0 < self.target_pos_rate < 1.0:
            raise ValueError("target_pos_rate must be in (0, 1)")

    @property
    def boundary_ts(self) -> int:
        return int(TWO_WEEKS * self.week_boundary)


@dataclass
class TruthModel:
    """Planted parameters, keyed by raw attribute values for oracle scoring."""

    k_true: int
    b_web: float
    b_ads: float
    web_vecs: dict           # (attr, value) -> latent vector, CF task
    ads_vecs: dict           # (attr, value) -> latent vector, CTR task
    weights: dict            # (attr, value) -> shared scalar effect

    def score_records(self, records, task) -> np.ndarray:
        """Planted-truth probabilities for raw (timestamp, label, attrs) records."""
        out = np.empty(len(records))
        for n, (_, _, rec) in enumerate(records):
            out[n] = self.score_attrs(rec, task)
        return sigmoid(out)

    def score_attrs(self, rec, task) -> float:
        """Planted-truth logit for one raw attribute mapping."""
        w = 0.0
        vecs = []
        table = self.web_vecs if task == CF else self.ads_vecs
        for attr, value in rec.items():
            key = (attr, value)
            if key in table:
                vecs.append(table[key])
            w += self.weights.get(key, 0.0)
        z = (self.b_web if task == CF else self.b_ads) + w
        for a in range(len(vecs)):
            for b in range(a + 1, len(vecs)):
                z += float(vecs[a] @ vecs[b])
        return z

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{TRUTH_MAGIC}\n")
            fh.write(f"k_true {self.k_true}\n")
            fh.write(f"b_web {self.b_web!r}\n")
            fh.write(f"b_ads {self.b_ads!r}\n")
            for tag, table in (("web-vec", self.web_vecs), ("ads-vec", self.ads_vecs)):
                for (attr, value), vec in table.items():
                    vals = " ".join(repr(float(v)) for v in vec)
                    fh.write(f"{tag} {attr} {value} {vals}\n")
            for (attr, value), w in self.weights.items():
                fh.write(f"weight {attr} {value} {float(w)!r}\n")

    @classmethod
    def load(cls, path) -> "TruthModel":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != TRUTH_MAGIC:
            raise ValueError(f"{path}: not a {TRUTH_MAGIC} file")
        header = dict(line.split(" ", 1) for line in lines[1:4])
        truth = cls(k_true=int(header["k_true"]), b_web=float(header["b_web"]),
                    b_ads=float(header["b_ads"]), web_vecs={}, ads_vecs={}, weights={})
        for line in lines[4:]:
            if not line:
                continue
            parts = line.split(" ")
            tag, attr, value = parts[0], parts[1], parts[2]
            if tag == "weight":
                truth.weights[(attr, value)] = float(parts[3])
            else:
                vec = np.array([float(v) for v in parts[3:]])
                (truth.web_vecs if tag == "web-vec" else truth.ads_vecs)[(attr, value)] = vec
        return truth


def _calibrate_intercept(logits: np.ndarray, target: float) -> float:
    """Bisect b so that mean(sigmoid(logits + b)) hits the target positive rate."""
    lo, hi = -40.0, 40.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(np.mean(sigmoid(logits + mid))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def schema_for(cfg: GenConfig) -> dict:
    schema = {"user_id": USER, "publisher_id": PUBLISHER, "ad_id": AD}
    for ea in cfg.extra_attrs:
        schema[ea.name] = USER
    return schema


def generate_records(cfg: GenConfig):
    """Draw raw logs; returns ``(web_records, ads_records, schema, truth)``.

    Records are (timestamp, label, attrs) tuples in draw order; timestamps are
    uniform over two synthetic weeks.  Byte-deterministic per config.
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.k_true
    # per-coordinate sd such that planted inner products have std signal_scale
    sd = math.sqrt(cfg.signal_scale) * k ** -0.25

    u_web = rng.normal(0.0, sd, (cfg.n_users, k))
    p_web = rng.normal(0.0, sd, (cfg.n_publishers, k))
    u_ads = cfg.rho * u_web + math.sqrt(1.0 - cfg.rho ** 2) * rng.normal(0.0, sd, u_web.shape)
    p_ads = cfg.rho * p_web + math.sqrt(1.0 - cfg.rho ** 2) * rng.normal(0.0, sd, p_web.shape)
    a_vecs = rng.normal(0.0, sd, (cfg.n_ads, k))

    extra_weights = {}
    for ea in cfg.extra_attrs:
        vals = rng.normal(0.0, ea.scale, ea.cardinality)
        if not ea.signal:
            vals[:] = 0.0
        extra_weights[ea.name] = vals

    def draw_events(n, with_ads):
        if with_ads:
            users = rng.integers(max(1, round(cfg.ctr_user_frac * cfg.n_users)), size=n)
            pubs = rng.integers(max(1, round(cfg.ctr_pub_frac * cfg.n_publishers)), size=n)
        else:
            users = rng.integers(cfg.n_users, size=n)
            pubs = rng.integers(cfg.n_publishers, size=n)
        ads = rng.integers(cfg.n_ads, size=n) if with_ads else None
        extras = {ea.name: rng.integers(ea.cardinality, size=n) for ea in cfg.extra_attrs}
        if with_ads:
            z = np.einsum("ij,ij->i", u_ads[users], p_ads[pubs])
            z += np.einsum("ij,ij->i", u_ads[users], a_vecs[ads])
            z += np.einsum("ij,ij->i", p_ads[pubs], a_vecs[ads])
        else:
            z = np.einsum("ij,ij->i", u_web[users], p_web[pubs])
        for name, vals in extras.items():
            z = z + extra_weights[name][vals]
        if cfg.deterministic_labels:
            b = -float(np.quantile(z, 1.0 - cfg.target_pos_rate))
            labels = (z + b > 0).astype(np.int64)
        else:
            b = _calibrate_intercept(z, cfg.target_pos_rate)
            labels = (rng.random(n) < sigmoid(z + b)).astype(np.int64)
            flips = rng.random(n) < cfg.label_noise
            labels[flips] = 1 - labels[flips]
        ts = rng.integers(0, TWO_WEEKS, size=n)
        records = []
        for i in range(n):
            rec = {"user_id": f"u{users[i]}", "publisher_id": f"p{pubs[i]}"}
            if with_ads:
                rec["ad_id"] = f"a{ads[i]}"
            for name, vals in extras.items():
                rec[name] = f"v{vals[i]}"
            records.append((int(ts[i]), int(labels[i]), rec))
        return records, b

    web_records, b_web = draw_events(cfg.n_web_events, with_ads=False)
    ads_records, b_ads = draw_events(cfg.n_ads_events, with_ads=True)

    web_vecs, ads_vecs, weights = {}, {}, {}
    for u in range(cfg.n_users):
        web_vecs[("user_id", f"u{u}")] = u_web[u]
        ads_vecs[("user_id", f"u{u}")] = u_ads[u]
    for p in range(cfg.n_publishers):
        web_vecs[("publisher_id", f"p{p}")] = p_web[p]
        ads_vecs[("publisher_id", f"p{p}")] = p_ads[p]
    for a in range(cfg.n_ads):
        ads_vecs[("ad_id", f"a{a}")] = a_vecs[a]
    for ea in cfg.extra_attrs:
        for v in range(ea.cardinality):
            weights[(ea.name, f"v{v}")] = float(extra_weights[ea.name][v])

    truth = TruthModel(k_true=k, b_web=b_web, b_ads=b_ads,
                       web_vecs=web_vecs, ads_vecs=ads_vecs, weights=weights)
    return web_records, ads_records, schema_for(cfg), truth


def generate(cfg: GenConfig):
    """Generate encoded datasets; returns ``(d_web, d_ads, space, truth)``."""
    web_records, ads_records, schema, truth = generate_records(cfg)
    space = build_feature_space(
        [rec for _, _, rec in web_records] + [rec for _, _, rec in ads_records], schema
    )
    d_web = encode_dataset(web_records, CF, space)
    d_ads = encode_dataset(ads_records, CTR, space)
    return d_web, d_ads, space, truth
