"""Windowing, z-scoring, labelled datasets, stratified splits and class weights."""

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from ppgauth.errors import ClassTooSmall, DegenerateChannel, EmptyClass, EmptyResult
from ppgauth.signal_io import CHANNEL_LABELS, band_edges, bandpass

DEGENERATE_STD = 1e-8


@dataclass(frozen=True, eq=False)
class Window:
    values: np.ndarray  # (T, C)
    label: int
    activity: str
    rate_hz: float
    origin: tuple  # (record id, start sample)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class Dataset:
    windows: tuple
    label_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        m = len(self.label_names)
        for w in self.windows:
            if not 0 <= w.label < m:
                raise ValueError(f"window label {w.label} outside [0, {m})")

    def __len__(self):
        return len(self.windows)

    @property
    def class_count(self):
        return len(self.label_names)

    def arrays(self):
        """Stack into ``(X, y)`` with X of shape (N, T, C)."""
        if not self.windows:
            raise EmptyResult("dataset has no windows")
        x = np.stack([w.values for w in self.windows])
        y = np.array([w.label for w in self.windows], dtype=np.int64)
        return x, y

    def counts(self):
        return np.bincount([w.label for w in self.windows], minlength=self.class_count)

    def subset(self, windows):
        return Dataset(tuple(windows), self.label_names)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(not 0 < f < 1 for f in self.fractions):
            raise ValueError(f"fractions must be three values in (0, 1), got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray

    def __getitem__(self, c):
        return self.w[c]

    def __len__(self):
        return len(self.w)


def window_length(window_s, rate_hz):
    return int(round(window_s * rate_hz))


def segment(record, window_s=4.0, overlap=0.5, label=0):
    """Cut ``record`` into full windows of ``round(window_s * rate)`` samples
    at stride ``round(T * (1 - overlap))``; a trailing partial window is
    dropped."""
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    t = window_length(window_s, record.rate_hz)
    if t < 2:
        raise ValueError("window must span at least 2 samples")
    stride = max(1, int(round(t * (1 - overlap))))
    n = len(record)
    if n < t:
        return []
    starts = range(0, n - t + 1, stride)
    return [
        Window(record.data[s:s + t].copy(), label, record.activity, record.rate_hz,
               (record.record_id, s))
        for s in starts
    ]


def zscore(values):
    """Per-column population z-score of a (T, C) array."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    bad = np.flatnonzero(std < DEGENERATE_STD)
    if bad.size:
        raise DegenerateChannel(f"near-constant channel(s) {bad.tolist()}")
    return (values - mean) / std


def normalize(window):
    return replace(window, values=zscore(window.values))


def build_dataset(records, window_s=4.0, overlap=0.5, label_names=None, filter_band=True):
    """Band-pass, segment and z-score records into a labelled dataset.

    Labels come from ``record.subject_id``; ``label_names`` fixes the class
    order (defaults to sorted subject ids). Windows with a flat channel are
    dropped.
    """
    records = list(records)
    if label_names is None:
        label_names = sorted({r.subject_id for r in records})
    index = {name: i for i, name in enumerate(label_names)}
    windows = []
    for rec in records:
        if rec.subject_id not in index:
            continue
        if filter_band:
            rec = bandpass(rec, *band_edges(rec.rate_hz))
        for w in segment(rec, window_s, overlap, label=index[rec.subject_id]):
            try:
                windows.append(normalize(w))
            except DegenerateChannel:
                pass
    return Dataset(tuple(windows), tuple(label_names))


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_counts(n, fractions):
    """Per-partition sizes: validation/test get ``round(f * n)``, train the rest."""
    n_val = _round_half_up(fractions[1] * n)
    n_test = _round_half_up(fractions[2] * n)
    return n - n_val - n_test, n_val, n_test


def stratified_split(dataset, spec=SplitSpec(), contiguous=False):
    """Per-class split into (train, val, test).

    Windows are shuffled within each class with ``spec.seed`` unless
    ``contiguous`` is set, in which case each class keeps its recording order
    and the earliest windows go to train.
    """
    rng = np.random.default_rng(spec.seed)
    by_class = [[] for _ in range(dataset.class_count)]
    for w in dataset.windows:
        by_class[w.label].append(w)
    parts = ([], [], [])
    for label, members in enumerate(by_class):
        if not members:
            continue
        if len(members) < 3:
            raise ClassTooSmall(label, len(members))
        if contiguous:
            members = sorted(members, key=lambda w: (w.origin[0], w.origin[1]))
        else:
            members = [members[i] for i in rng.permutation(len(members))]
        n_train, n_val, _ = split_counts(len(members), spec.fractions)
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train:n_train + n_val])
        parts[2].extend(members[n_train + n_val:])
    return tuple(dataset.subset(p) for p in parts)


def class_weights(train):
    """``w_c = N / (C * N_c)`` over the training windows."""
    counts = train.counts()
    for c, n_c in enumerate(counts):
        if n_c == 0:
            raise EmptyClass(c)
    n = counts.sum()
    return ClassWeights(n / (len(counts) * counts.astype(np.float64)))


def _channel_indices(channels):
    idx = []
    for ch in channels:
        if isinstance(ch, str):
            if ch not in CHANNEL_LABELS:
                raise ValueError(f"unknown channel {ch!r}")
            idx.append(CHANNEL_LABELS.index(ch))
        else:
            idx.append(int(ch))
    return idx


def filter_by(dataset, activities=None, channels=None):
    """Keep windows whose activity is in ``activities`` and slice the
    channel axis down to ``channels`` (names or indices)."""
    windows = dataset.windows
    if activities is not None:
        wanted = set(activities)
        windows = [w for w in windows if w.activity in wanted]
    if not windows:
        raise EmptyResult(f"no windows match activities={activities}")
    if channels is not None:
        idx = _channel_indices(channels)
        if not idx:
            raise EmptyResult("empty channel selection")
        windows = [replace(w, values=np.ascontiguousarray(w.values[:, idx])) for w in windows]
    return dataset.subset(windows)


# --------------------------------------------------------------------------
# manifest + sidecar tensor file
# --------------------------------------------------------------------------

def save_dataset(dataset, path):
    """Write ``path`` (JSON manifest) and ``<path stem>.f32`` (tensor data)."""
    stem, _ = os.path.splitext(path)
    tensor_path = stem + ".f32"
    entries = []
    with open(tensor_path, "wb") as fh:
        for w in dataset.windows:
            fh.write(np.ascontiguousarray(w.values, dtype="<f4").tobytes())
            entries.append({
                "origin": [w.origin[0], int(w.origin[1])],
                "label": int(w.label),
                "activity": w.activity,
                "rate_hz": float(w.rate_hz),
                "shape": list(w.values.shape),
            })
    manifest = {
        "classes": list(dataset.label_names),
        "windows": entries,
        "tensor_file": os.path.basename(tensor_path),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return tensor_path


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    tensor_path = os.path.join(os.path.dirname(os.path.abspath(path)), manifest["tensor_file"])
    raw = np.fromfile(tensor_path, dtype="<f4")
    windows = []
    pos = 0
    for e in manifest["windows"]:
        t, c = e["shape"]
        chunk = raw[pos:pos + t * c]
        if chunk.size != t * c:
            raise ValueError(f"{tensor_path} is shorter than its manifest")
        pos += t * c
        windows.append(Window(chunk.reshape(t, c).astype(np.float64), e["label"], e["activity"],
                              e["rate_hz"], (e["origin"][0], e["origin"][1])))
    if pos != raw.size:
        raise ValueError(f"{tensor_path} has {raw.size - pos} trailing values")
    return Dataset(tuple(windows), tuple(manifest["classes"]))
