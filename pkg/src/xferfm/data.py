"""Feature space, sparse instance encoding and dataset preparation.

Raw log records are flat ``attribute -> value`` string mappings.  A schema
assigns each attribute to one of three groups (user, publisher, ad); every
observed ``(attribute, value)`` pair gets a one-hot feature index, laid out
contiguously per group, plus one reserved out-of-vocabulary index per
attribute for values unseen at build time.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

USER = "USER"
PUBLISHER = "PUBLISHER"
AD = "AD"
GROUPS = (USER, PUBLISHER, AD)

CF = "CF"
CTR = "CTR"
TASKS = (CF, CTR)

SPACE_MAGIC = "xferfm-space v1"


class SchemaError(ValueError):
    """An attribute is missing from, or inconsistent with, the schema."""


class EncodingError(ValueError):
    """A raw record cannot be encoded for the requested task."""


@dataclass(frozen=True)
class FeatureSpace:
    """Immutable global one-hot vocabulary partitioned into feature groups.

    Indices are contiguous: user features occupy ``[0, user_dims)``,
    publisher features ``[user_dims, user_dims + pub_dims)`` and ad features
    the remaining block.
    """

    user_dims: int
    pub_dims: int
    ad_dims: int
    attr_group: dict        # attribute -> group tag
    index_of: dict          # (attribute, value) -> global index
    oov_index: dict         # attribute -> reserved OOV index
    entries: tuple = ()     # (attribute, value-or-None, index, group), index order

    @property
    def n_features(self) -> int:
        return self.user_dims + self.pub_dims + self.ad_dims

    @property
    def cf_dims(self) -> int:
        """Feature count visible to the CF task (user + publisher blocks)."""
        return self.user_dims + self.pub_dims

    def group_of(self, index: int) -> str:
        if 0 <= index < self.user_dims:
            return USER
        if index < self.user_dims + self.pub_dims:
            return PUBLISHER
        if index < self.n_features:
            return AD
        raise IndexError(f"feature index {index} outside [0, {self.n_features})")

    def group_range(self, group: str) -> range:
        i, j = self.user_dims, self.pub_dims
        if group == USER:
            return range(0, i)
        if group == PUBLISHER:
            return range(i, i + j)
        if group == AD:
            return range(i + j, self.n_features)
        raise ValueError(f"unknown group {group!r}")

    def serialize(self) -> str:
        lines = [SPACE_MAGIC]
        for attr, value, index, group in self.entries:
            lines.append(f"{attr}\t{'' if value is None else value}\t{index}\t{group}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "FeatureSpace":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != SPACE_MAGIC:
            raise ValueError(f"{path}: not a {SPACE_MAGIC} file")
        entries = []
        for line in lines[1:]:
            if not line:
                continue
            attr, value, index, group = line.split("\t")
            entries.append((attr, value if value else None, int(index), group))
        return _space_from_entries(entries)


def _space_from_entries(entries) -> FeatureSpace:
    dims = {USER: 0, PUBLISHER: 0, AD: 0}
    attr_group, index_of, oov_index = {}, {}, {}
    for attr, value, index, group in entries:
        if group not in GROUPS:
            raise ValueError(f"unknown group {group!r}")
        dims[group] += 1
        attr_group[attr] = group
        if value is None:
            oov_index[attr] = index
        else:
            index_of[(attr, value)] = index
    return FeatureSpace(
        user_dims=dims[USER],
        pub_dims=dims[PUBLISHER],
        ad_dims=dims[AD],
        attr_group=attr_group,
        index_of=index_of,
        oov_index=oov_index,
        entries=tuple(entries),
    )


def build_feature_space(raw_records, schema) -> FeatureSpace:
    """Build a :class:`FeatureSpace` from raw records and a group schema.

    Every distinct observed ``(attribute, value)`` pair gets a unique index,
    and every schema attribute gets one reserved OOV index.  Attributes are
    laid out in schema order, values in first-seen order, OOV last per
    attribute.
    """
    for attr, group in schema.items():
        if group not in GROUPS:
            raise SchemaError(f"attribute {attr!r} mapped to unknown group {group!r}")
    values = {attr: {} for attr in schema}  # insertion-ordered value sets
    for rec in raw_records:
        for attr, value in rec.items():
            if attr not in schema:
                raise SchemaError(f"attribute {attr!r} appears in records but not in schema")
            values[attr].setdefault(value)
    entries = []
    next_index = 0
    for group in GROUPS:
        for attr in schema:
            if schema[attr] != group:
                continue
            for value in values[attr]:
                entries.append((attr, value, next_index, group))
                next_index += 1
            entries.append((attr, None, next_index, group))  # OOV slot
            next_index += 1
    return _space_from_entries(entries)


@dataclass(frozen=True)
class SparseInstance:
    """One labeled observation as sorted active-index tuples per group."""

    user_idx: tuple
    pub_idx: tuple
    ad_idx: tuple
    label: int
    task: str
    timestamp: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.task == CF and self.ad_idx:
            raise ValueError("CF instances must have no ad features")

    def validate(self, space: FeatureSpace) -> None:
        for idx, group in ((self.user_idx, USER), (self.pub_idx, PUBLISHER), (self.ad_idx, AD)):
            rng = space.group_range(group)
            for i in idx:
                if i not in rng:
                    raise ValueError(f"index {i} outside {group} range {rng}")
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate indices in {group} block: {idx}")


def encode_instance(raw, label, task, space: FeatureSpace, timestamp: int = 0) -> SparseInstance:
    """Encode a raw record: one active index per attribute, OOV on unseen values."""
    groups = {USER: [], PUBLISHER: [], AD: []}
    for attr, value in raw.items():
        group = space.attr_group.get(attr)
        if group is None:
            raise SchemaError(f"attribute {attr!r} unknown to this feature space")
        index = space.index_of.get((attr, value), space.oov_index[attr])
        groups[group].append(index)
    if task == CF and groups[AD]:
        raise EncodingError("CF record contains ad attributes")
    if task == CTR and not groups[AD]:
        raise EncodingError("CTR record lacks all ad attributes")
    return SparseInstance(
        user_idx=tuple(sorted(groups[USER])),
        pub_idx=tuple(sorted(groups[PUBLISHER])),
        ad_idx=tuple(sorted(groups[AD])),
        label=int(label),
        task=task,
        timestamp=int(timestamp),
    )


@dataclass
class PackedDataset:
    """CSR-style array view of a dataset, consumed by the numeric kernels."""

    u_indptr: np.ndarray
    u_idx: np.ndarray
    p_indptr: np.ndarray
    p_idx: np.ndarray
    a_indptr: np.ndarray
    a_idx: np.ndarray
    labels: np.ndarray  # float64

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Dataset:
    """A task-homogeneous sequence of encoded instances over one feature space."""

    space: FeatureSpace
    instances: list
    task: str
    warning: str | None = None

    def __post_init__(self):
        for inst in self.instances:
            if inst.task != self.task:
                raise ValueError("instance task does not match dataset task")
        self._packed = None

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def n_pos(self) -> int:
        return sum(inst.label for inst in self.instances)

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    def packed(self) -> PackedDataset:
        if self._packed is None:
            self._packed = _pack(self.instances)
        return self._packed


def _pack(instances) -> PackedDataset:
    def csr(block):
        indptr = np.zeros(len(instances) + 1, dtype=np.int64)
        for i, idx in enumerate(block):
            indptr[i + 1] = indptr[i] + len(idx)
        flat = np.fromiter(
            (j for idx in block for j in idx), dtype=np.int64, count=indptr[-1]
        )
        return indptr, flat

    u_indptr, u_idx = csr([inst.user_idx for inst in instances])
    p_indptr, p_idx = csr([inst.pub_idx for inst in instances])
    a_indptr, a_idx = csr([inst.ad_idx for inst in instances])
    labels = np.array([inst.label for inst in instances], dtype=np.float64)
    return PackedDataset(u_indptr, u_idx, p_indptr, p_idx, a_indptr, a_idx, labels)


def downsample_negatives(d: Dataset, neg_per_pos: float, seed: int) -> Dataset:
    """Keep all positives and a uniform sample of negatives at the given ratio.

    ``neg_per_pos=5`` keeps (at most) 5 negatives per positive, the usual
    1:5 CTR setting.  Deterministic for a fixed seed; never upsamples.
    """
    if neg_per_pos < 0:
        raise ValueError("neg_per_pos must be >= 0")
    n_pos = d.n_pos
    if n_pos == 0:
        return replace(d, warning="no positives; down-sampling skipped")
    neg_positions = [i for i, inst in enumerate(d.instances) if inst.label == 0]
    keep = min(len(neg_positions), int(round(n_pos * neg_per_pos)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(neg_positions), size=keep, replace=False)
    kept_positions = {neg_positions[c] for c in chosen}
    survivors = [
        inst
        for i, inst in enumerate(d.instances)
        if inst.label == 1 or i in kept_positions
    ]
    return Dataset(space=d.space, instances=survivors, task=d.task)


def split_by_time(d: Dataset, boundary: int):
    """Partition into (timestamp < boundary, timestamp >= boundary)."""
    train = [inst for inst in d.instances if inst.timestamp < boundary]
    test = [inst for inst in d.instances if inst.timestamp >= boundary]
    return (
        Dataset(space=d.space, instances=train, task=d.task),
        Dataset(space=d.space, instances=test, task=d.task),
    )


def sample_cf_negatives(positives: Dataset, neg_per_pos: float, seed: int) -> Dataset:
    """Augment a positive-only CF dataset with sampled unobserved (user, publisher) pairs.

    Negatives are drawn uniformly without replacement from the grid of distinct
    observed user-side x publisher-side index tuples, excluding observed pairs.
    """
    if positives.task != CF:
        raise ValueError("sample_cf_negatives expects a CF dataset")
    if any(inst.label != 1 for inst in positives.instances):
        raise ValueError("sample_cf_negatives expects positives only")
    if neg_per_pos < 0:
        raise ValueError("neg_per_pos must be >= 0")
    n_want = int(round(len(positives) * neg_per_pos))
    if n_want == 0:
        return Dataset(space=positives.space, instances=list(positives.instances), task=CF)

    observed = {(inst.user_idx, inst.pub_idx) for inst in positives.instances}
    users = list(dict.fromkeys(inst.user_idx for inst in positives.instances))
    pubs = list(dict.fromkeys(inst.pub_idx for inst in positives.instances))
    complement = [
        (u, p) for u in users for p in pubs if (u, p) not in observed
    ]
    rng = np.random.default_rng(seed)
    warning = None
    if len(complement) < n_want:
        n_want = len(complement)
        warning = "user x publisher grid too small; returned all available negatives"
    chosen = rng.choice(len(complement), size=n_want, replace=False)
    chosen = np.sort(chosen)
    ts = np.array([inst.timestamp for inst in positives.instances])
    lo, hi = int(ts.min()), int(ts.max())
    neg_ts = rng.integers(lo, hi + 1, size=n_want)
    negatives = [
        SparseInstance(
            user_idx=complement[c][0],
            pub_idx=complement[c][1],
            ad_idx=(),
            label=0,
            task=CF,
            timestamp=int(neg_ts[k]),
        )
        for k, c in enumerate(chosen)
    ]
    return Dataset(
        space=positives.space,
        instances=list(positives.instances) + negatives,
        task=CF,
        warning=warning,
    )


# ---------------------------------------------------------------------------
# TSV log format: header row "timestamp \t label \t attr...", empty cell = absent
# ---------------------------------------------------------------------------

def write_log(path, records) -> None:
    """Write raw records as TSV.  ``records`` is a list of (timestamp, label, attrs)."""
    attrs = list(dict.fromkeys(a for _, _, rec in records for a in rec))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["timestamp", "label"] + attrs) + "\n")
        for ts, label, rec in records:
            cells = [str(int(ts)), str(int(label))]
            cells += [str(rec.get(a, "")) for a in attrs]
            fh.write("\t".join(cells) + "\n")


def read_log(path):
    """Read a TSV log back into a list of (timestamp, label, attrs) tuples."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["timestamp", "label"]:
            raise ValueError(f"{path}: first two TSV columns must be timestamp, label")
        attrs = header[2:]
        records = []
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            rec = {a: v for a, v in zip(attrs, cells[2:]) if v != ""}
            records.append((int(cells[0]), int(cells[1]), rec))
    return records


def encode_dataset(records, task, space: FeatureSpace) -> Dataset:
    """Encode raw (timestamp, label, attrs) records into a Dataset."""
    instances = [
        encode_instance(rec, label, task, space, timestamp=ts)
        for ts, label, rec in records
    ]
    return Dataset(space=space, instances=instances, task=task)
