"""Labeled sample container and the EPD1 dataset file format.

EPD1 layout (little endian)::

    b"EPD1"
    uint32 sample_count, uint32 channels, uint32 time, float64 fs
    per sample: int32 subject_id, uint8 label, float32[channels*time] data

Label 255 marks unlabeled records (saliency maps, syntheses of non-class
neurons).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDataset, FormatError

MAGIC = b"EPD1"
UNLABELED = 255
_HEADER = struct.Struct("<IIId")
_RECORD = struct.Struct("<iB")


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (N, channels, time)
    labels: np.ndarray  # (N,) int
    subject_ids: np.ndarray  # (N,) int
    fs: float = 128.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        if self.samples.ndim != 3:
            raise FormatError(f"samples must be (N, channels, time), got {self.samples.shape}")
        n = len(self.samples)
        if len(self.labels) != n or len(self.subject_ids) != n:
            raise FormatError("samples, labels and subject ids differ in length")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape[1], self.samples.shape[2]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.samples[idx], self.labels[idx], self.subject_ids[idx], self.fs)

    def subjects(self) -> np.ndarray:
        """Subject ids in order of first appearance."""
        _, first = np.unique(self.subject_ids, return_index=True)
        return self.subject_ids[np.sort(first)]

    def check_labeled(self) -> None:
        """Require binary labels and one label per subject."""
        if not np.isin(self.labels, (0, 1)).all():
            raise DegenerateDataset("labels must be 0 or 1")
        for sid in np.unique(self.subject_ids):
            if len(np.unique(self.labels[self.subject_ids == sid])) > 1:
                raise DegenerateDataset(f"subject {sid} carries both labels")


def split_by_subject(ds: LabeledDataset, fractions, seed: int) -> list[LabeledDataset]:
    """Split into parts by whole subjects, shuffling subjects within each class.

    Subject counts per part are rounded per class so class balance carries
    over; the last part takes the remainder.
    """
    fractions = np.asarray(fractions, dtype=float)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for label in np.unique(ds.labels):
        subs = np.unique(ds.subject_ids[ds.labels == label])
        subs = rng.permutation(subs)
        bounds = np.round(np.cumsum(fractions) / fractions.sum() * len(subs)).astype(int)
        start = 0
        for p, stop in enumerate(bounds):
            parts[p].extend(subs[start:stop].tolist())
            start = stop
    out = []
    for subs in parts:
        mask = np.isin(ds.subject_ids, subs)
        out.append(ds.subset(np.flatnonzero(mask)))
    return out


def save_epd(path, ds: LabeledDataset) -> None:
    n, c, t = ds.samples.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(n, c, t, float(ds.fs)))
        for x, label, sid in zip(ds.samples, ds.labels, ds.subject_ids):
            fh.write(_RECORD.pack(int(sid), int(label)))
            fh.write(x.astype("<f4").tobytes(order="C"))


def load_epd(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an EPD1 file")
    n, c, t, fs = _HEADER.unpack_from(raw, 4)
    off = 4 + _HEADER.size
    rec = _RECORD.size + 4 * c * t
    if len(raw) != off + n * rec:
        raise FormatError(f"{path}: expected {n} records of {rec} bytes")
    samples = np.empty((n, c, t))
    labels = np.empty(n, dtype=np.int64)
    sids = np.empty(n, dtype=np.int64)
    for i in range(n):
        sids[i], labels[i] = _RECORD.unpack_from(raw, off)
        off += _RECORD.size
        samples[i] = np.frombuffer(raw, dtype="<f4", count=c * t, offset=off).reshape(c, t)
        off += 4 * c * t
    return LabeledDataset(samples, labels, sids, fs)
