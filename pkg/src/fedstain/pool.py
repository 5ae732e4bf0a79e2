"""The federated statistic pool.

Clients summarize a sampled fraction of their images into
:class:`StatRecord` entries, the server collects them into a
:class:`StatPool`, and each client receives back a :class:`PoolView`
that excludes its own records.  Records carry exactly four per-channel
vectors: (mean, std) for stain reconstruction and a (shift, scale)
descriptor pair for style mixing — skewness and kurtosis by default,
or an ablation pair of the configured kind.  No field of pixel
dimensionality ever enters a record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownClientError
from .stats import StatKind, StatsPair, compute_channel_stats, compute_stats_pair


@dataclass(frozen=True)
class StatRecord:
    """One image's statistic summary, tagged with its origin."""

    client_id: str
    sample_id: str
    color_space: str
    mean: np.ndarray
    std: np.ndarray
    shift: np.ndarray
    scale: np.ndarray
    kind: StatKind = StatKind.SKEWNESS_KURTOSIS

    def __post_init__(self):
        if not self.client_id:
            raise ValueError("client_id must be non-empty")
        for name in ("mean", "std", "shift", "scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        c = self.mean.shape[0]
        if not (self.std.shape[0] == self.shift.shape[0] == self.scale.shape[0] == c):
            raise ValueError("record vectors must share channel count")

    @property
    def channel_count(self) -> int:
        return int(self.mean.shape[0])

    def scalar_payload(self) -> np.ndarray:
        """The 4×C scalars this record contributes to a wire message."""
        return np.stack([self.mean, self.std, self.shift, self.scale])


def record_from_image(
    image,
    client_id: str,
    sample_id: str,
    color_space: str,
    kind: StatKind = StatKind.SKEWNESS_KURTOSIS,
    *,
    window: int = 8,
) -> StatRecord:
    """Summarize one image into a record (degenerate channels substituted)."""
    stats = compute_channel_stats(image, on_constant="substitute")
    if kind is StatKind.SKEWNESS_KURTOSIS:
        pair = StatsPair(kind, stats.skewness, stats.kurtosis)
    else:
        pair = compute_stats_pair(image, kind, window=window, on_constant="substitute")
    return StatRecord(
        client_id=client_id,
        sample_id=sample_id,
        color_space=color_space,
        mean=stats.mean,
        std=stats.std,
        shift=pair.shift,
        scale=pair.scale,
        kind=kind,
    )


def sample_statistics(
    images,
    client_id: str,
    ratio: float,
    rng: np.random.Generator,
    *,
    color_space: str = "RGB",
    kind: StatKind = StatKind.SKEWNESS_KURTOSIS,
    window: int = 8,
    sample_ids=None,
) -> list[StatRecord]:
    """Summarize ceil(ratio * n) local images, drawn uniformly without replacement.

    Deterministic under a fixed generator; the tiny epsilon keeps the
    ceiling exact when ratio * n lands on an integer up to float round-off.
    """
    n = len(images)
    if n == 0:
        raise ValueError("dataset must be nonempty")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    count = min(n, max(1, math.ceil(ratio * n - 1e-9)))
    chosen = rng.choice(n, size=count, replace=False)
    records = []
    for idx in chosen:
        sid = str(sample_ids[idx]) if sample_ids is not None else str(int(idx))
        records.append(
            record_from_image(images[idx], client_id, sid, color_space, kind, window=window)
        )
    return records


@dataclass
class StatPool:
    """Server-side collection of records for one round."""

    records: list[StatRecord] = field(default_factory=list)
    round: int = 0

    def __len__(self):
        return len(self.records)

    def client_ids(self) -> set[str]:
        return {r.client_id for r in self.records}


@dataclass(frozen=True)
class PoolView:
    """The pool as granted to one client: every record except its own.

    Augmentations only ever see these channel summaries, never pixels.
    """

    records: tuple
    excluded_client: str

    def __post_init__(self):
        if any(r.client_id == self.excluded_client for r in self.records):
            raise ValueError("view must not contain the excluded client's records")

    def __len__(self):
        return len(self.records)

    def is_empty(self) -> bool:
        return len(self.records) == 0

    def draw(self, rng: np.random.Generator) -> StatRecord:
        if not self.records:
            raise IndexError("cannot draw from an empty view")
        return self.records[int(rng.integers(len(self.records)))]


def build_pool(uploads: dict, round_no: int = 0, roster=None) -> StatPool:
    """Assemble per-client record sequences into one pool.

    ``uploads`` maps client_id -> sequence of records; every record must
    be tagged with its uploading client, and uploaders must be on the
    roster when one is given.
    """
    roster_set = set(roster) if roster is not None else None
    records: list[StatRecord] = []
    for client_id in sorted(uploads):
        if roster_set is not None and client_id not in roster_set:
            raise UnknownClientError(f"client {client_id!r} not on round roster")
        for rec in uploads[client_id]:
            if rec.client_id != client_id:
                raise UnknownClientError(
                    f"record from {rec.client_id!r} uploaded under {client_id!r}"
                )
            records.append(rec)
    return StatPool(records=records, round=round_no)


def pool_view(pool: StatPool, client_id: str, roster=None) -> PoolView:
    """The pool minus ``client_id``'s own records."""
    if roster is not None and client_id not in set(roster):
        raise UnknownClientError(f"client {client_id!r} not on round roster")
    kept = tuple(r for r in pool.records if r.client_id != client_id)
    return PoolView(records=kept, excluded_client=client_id)


def fallback_view(own_records) -> PoolView:
    """Self-statistics view for degenerate federations (single client).

    Keeps the augmentation pipeline total when the granted view is empty;
    the records are local and never crossed the wire, so no exclusion
    applies.
    """
    return PoolView(records=tuple(own_records), excluded_client="")


# --- line-delimited serialization -------------------------------------------

_FIELDS = ("mean", "std", "shift", "scale")


def record_to_line(record: StatRecord, round_no: int) -> str:
    """One record per line: identifiers then the 4×C scalars."""
    parts = [
        str(round_no),
        record.client_id,
        record.sample_id,
        record.color_space,
        record.kind.value,
    ]
    for name in _FIELDS:
        vec = getattr(record, name)
        parts.append(";".join(repr(float(v)) for v in vec))
    return "\t".join(parts)


def record_from_line(line: str):
    """Parse a serialized record; returns (round, StatRecord)."""
    parts = line.rstrip("\n").split("\t")
    round_no = int(parts[0])
    vecs = [np.array([float(v) for v in p.split(";")]) for p in parts[5:9]]
    record = StatRecord(
        client_id=parts[1],
        sample_id=parts[2],
        color_space=parts[3],
        kind=StatKind(parts[4]),
        mean=vecs[0],
        std=vecs[1],
        shift=vecs[2],
        scale=vecs[3],
    )
    return round_no, record


def write_records(path, records, round_no: int):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_line(rec, round_no) + "\n")


def read_records(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(record_from_line(line))
    return out
