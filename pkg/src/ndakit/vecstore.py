"""Embedding sets, trial lists, file I/O, and speaker-grouped batching."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BINARY_MAGIC = b"NDAE"
BINARY_VERSION = 1


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """Labeled matrix of fixed-dimensional vectors.

    ``vectors`` is an (N, dim) float64 array; ``utt_ids`` and ``speaker_ids``
    are parallel tuples. Instances are immutable (the array is marked
    read-only) and safe to share across workers.
    """

    dim: int
    utt_ids: tuple[str, ...]
    speaker_ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        v = _freeze(self.vectors)
        object.__setattr__(self, "vectors", v)
        if v.ndim != 2 or v.shape != (len(self.utt_ids), self.dim):
            raise ValueError(
                f"vector matrix shape {v.shape} does not match "
                f"{len(self.utt_ids)} records of dim {self.dim}"
            )
        if len(self.speaker_ids) != len(self.utt_ids):
            raise ValueError("speaker_ids and utt_ids must have equal length")
        if len(set(self.utt_ids)) != len(self.utt_ids):
            seen, dup = set(), None
            for u in self.utt_ids:
                if u in seen:
                    dup = u
                    break
                seen.add(u)
            raise ValueError(f"duplicate utt_id {dup!r}")
        if v.size and not np.all(np.isfinite(v)):
            bad = int(np.where(~np.isfinite(v).all(axis=1))[0][0])
            raise ValueError(f"non-finite vector component in record {bad} "
                             f"(utt_id {self.utt_ids[bad]!r})")

    def __len__(self) -> int:
        return len(self.utt_ids)

    def records(self):
        """Iterate over (utt_id, speaker_id, vector) triples in order."""
        for i, (u, s) in enumerate(zip(self.utt_ids, self.speaker_ids)):
            yield u, s, self.vectors[i]

    def speakers(self) -> dict[str, np.ndarray]:
        """Group row indices by speaker, in order of first appearance."""
        groups: dict[str, list[int]] = {}
        for i, s in enumerate(self.speaker_ids):
            groups.setdefault(s, []).append(i)
        return {s: np.asarray(idx) for s, idx in groups.items()}

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingSet":
        """Same labels, new vector matrix (dim may change)."""
        vectors = np.asarray(vectors, dtype=np.float64)
        return EmbeddingSet(dim=vectors.shape[1], utt_ids=self.utt_ids,
                            speaker_ids=self.speaker_ids, vectors=vectors)

    def index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.utt_ids)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (self.dim == other.dim
                and self.utt_ids == other.utt_ids
                and self.speaker_ids == other.speaker_ids
                and np.array_equal(self.vectors, other.vectors))


@dataclass(frozen=True)
class Trial:
    enroll_utt_ids: tuple[str, ...]
    test_utt_id: str
    is_target: bool

    def __post_init__(self):
        if not self.enroll_utt_ids:
            raise ValueError("trial has an empty enrollment list")
        if self.test_utt_id in self.enroll_utt_ids:
            raise ValueError(
                f"test utterance {self.test_utt_id!r} appears among its "
                f"own enrollments")


@dataclass(frozen=True)
class TrialList:
    trials: tuple[Trial, ...]

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)


@dataclass(frozen=True)
class SpeakerBatch:
    """All vectors of a subset of speakers, grouped per speaker."""

    groups: tuple[tuple[str, np.ndarray], ...]
    total_speakers: int = field(default=0)

    def __post_init__(self):
        if self.total_speakers == 0:
            object.__setattr__(self, "total_speakers", len(self.groups))
        for _, mat in self.groups:
            mat.flags.writeable = False


def build_embedding_set(records) -> EmbeddingSet:
    """Construct an EmbeddingSet from (utt_id, speaker_id, vector) triples.

    dim is inferred from the first record; a row whose length differs raises
    an error naming the row (1-based).
    """
    records = list(records)
    if not records:
        raise ValueError("cannot infer dim from an empty record list; "
                         "construct EmbeddingSet directly with an explicit dim")
    dim = len(records[0][2])
    vecs = np.empty((len(records), dim))
    utts, spks = [], []
    for i, (u, s, v) in enumerate(records):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (dim,):
            raise ValueError(f"row {i + 1}: expected {dim} values, got {v.shape[0] if v.ndim == 1 else v.shape}")
        vecs[i] = v
        utts.append(u)
        spks.append(s)
    return EmbeddingSet(dim=dim, utt_ids=tuple(utts), speaker_ids=tuple(spks),
                        vectors=vecs)


def read_embedding_set(path, format: str = "binary") -> EmbeddingSet:
    """Read an embedding set from ``path`` in 'csv' or 'binary' format."""
    path = Path(path)
    if format == "binary":
        return _read_binary(path)
    if format == "csv":
        return _read_csv(path)
    raise ValueError(f"unknown embedding format {format!r}")


def write_embedding_set(s: EmbeddingSet, path, format: str = "binary") -> None:
    path = Path(path)
    if format == "binary":
        _write_binary(s, path)
    elif format == "csv":
        _write_csv(s, path)
    else:
        raise ValueError(f"unknown embedding format {format!r}")


def guess_format(path) -> str:
    """'csv' for .csv paths, 'binary' otherwise."""
    return "csv" if str(path).endswith(".csv") else "binary"


def _read_binary(path: Path) -> EmbeddingSet:
    data = path.read_bytes()
    if data[:4] != BINARY_MAGIC:
        raise ValueError(f"{path}: not an embedding file (bad magic)")
    version, count, dim = struct.unpack_from("<BII", data, 4)
    if version != BINARY_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 13
    utts, spks = [], []
    vecs = np.empty((count, dim))
    vec_bytes = dim * 8
    for i in range(count):
        (ulen,) = struct.unpack_from("<H", data, off)
        off += 2
        utts.append(data[off:off + ulen].decode("utf-8"))
        off += ulen
        (slen,) = struct.unpack_from("<H", data, off)
        off += 2
        spks.append(data[off:off + slen].decode("utf-8"))
        off += slen
        vecs[i] = np.frombuffer(data, dtype="<f8", count=dim, offset=off)
        off += vec_bytes
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return EmbeddingSet(dim=dim, utt_ids=tuple(utts), speaker_ids=tuple(spks),
                        vectors=vecs)


def _write_binary(s: EmbeddingSet, path: Path) -> None:
    parts = [BINARY_MAGIC, struct.pack("<BII", BINARY_VERSION, len(s), s.dim)]
    for i, (u, spk) in enumerate(zip(s.utt_ids, s.speaker_ids)):
        ub, sb = u.encode("utf-8"), spk.encode("utf-8")
        parts.append(struct.pack("<H", len(ub)))
        parts.append(ub)
        parts.append(struct.pack("<H", len(sb)))
        parts.append(sb)
        parts.append(s.vectors[i].astype("<f8").tobytes())
    path.write_bytes(b"".join(parts))


def _read_csv(path: Path) -> EmbeddingSet:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:2] != ["utt", "speaker"]:
            raise ValueError(f"{path}: missing 'utt,speaker,v0,...' header")
        dim = len(header) - 2
        utts, spks, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ValueError(f"{path}: row {lineno - 1}: expected {dim} "
                                 f"values, got {len(row) - 2}")
            utts.append(row[0])
            spks.append(row[1])
            try:
                rows.append([float(x) for x in row[2:]])
            except ValueError as e:
                raise ValueError(f"{path}: row {lineno - 1}: {e}") from None
    vecs = np.asarray(rows) if rows else np.empty((0, dim))
    return EmbeddingSet(dim=dim, utt_ids=tuple(utts), speaker_ids=tuple(spks),
                        vectors=vecs)


def _write_csv(s: EmbeddingSet, path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utt", "speaker"] + [f"v{j}" for j in range(s.dim)])
        for i, (u, spk) in enumerate(zip(s.utt_ids, s.speaker_ids)):
            writer.writerow([u, spk] + [f"{x:.17g}" for x in s.vectors[i]])


def read_trial_list(path) -> TrialList:
    """Parse a text trial list: ``enroll[,enroll...] test target|nontarget``."""
    trials = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, "
                                 f"got {len(fields)}")
            enrolls, test, label = fields
            if label == "target":
                is_target = True
            elif label == "nontarget":
                is_target = False
            else:
                raise ValueError(f"{path}:{lineno}: unknown label {label!r}")
            enroll_ids = tuple(enrolls.split(","))
            if any(not e for e in enroll_ids):
                raise ValueError(f"{path}:{lineno}: empty enrollment field")
            try:
                trials.append(Trial(enroll_ids, test, is_target))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    return TrialList(tuple(trials))


def write_trial_list(trials: TrialList, path) -> None:
    with open(path, "w") as f:
        for t in trials:
            label = "target" if t.is_target else "nontarget"
            f.write(f"{','.join(t.enroll_utt_ids)} {t.test_utt_id} {label}\n")


def partition_speaker_batches(s: EmbeddingSet, speakers_per_batch: int,
                              seed: int) -> list[SpeakerBatch]:
    """Split a set into speaker-grouped batches for one epoch.

    Speakers are shuffled deterministically by ``seed``; each speaker's
    vectors land intact in exactly one batch. The last batch may be short.
    """
    if speakers_per_batch < 1:
        raise ValueError("speakers_per_batch must be >= 1")
    if any(not spk for spk in s.speaker_ids):
        bad = s.utt_ids[s.speaker_ids.index("")]
        raise ValueError(f"unlabeled record (utt_id {bad!r})")
    groups = s.speakers()
    names = list(groups)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(names))
    batches = []
    for start in range(0, len(names), speakers_per_batch):
        chunk = order[start:start + speakers_per_batch]
        g = tuple((names[i], s.vectors[groups[names[i]]].copy())
                  for i in chunk)
        batches.append(SpeakerBatch(groups=g))
    return batches
