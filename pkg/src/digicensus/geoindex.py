"""Uniform-grid spatial index with per-cell time ordering.

Answers "all events within ``radius`` meters of a point and inside a time
window" exactly.  Cells are square with side ``cell_size``; with the default
``cell_size == radius`` any query disc touches at most 3 x 3 cells.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import CATEGORY_TABLE_SIZES, EVENT_KINDS, EventTable

DEFAULT_RADIUS = 1000.0
DEFAULT_WINDOW = 365 * 86_400

SNAPSHOT_MAGIC = b"DCGRIDX\x00"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class QueryScope:
    """Disc of ``radius`` meters and the half-open window
    ``[window_end - window_length, window_end)`` in epoch seconds."""

    x: float
    y: float
    window_end: int
    radius: float = DEFAULT_RADIUS
    window_length: int = DEFAULT_WINDOW

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.window_length > 0:
            raise ValueError("window_length must be positive")

    @property
    def window_start(self) -> int:
        return self.window_end - self.window_length


class SpatioTemporalIndex:
    """Immutable index over the events of one dataset kind.

    Events are stored sorted by (cell, timestamp) with a stable sort, so a
    build is a deterministic function of the input order.  Query results are
    positions into the sorted arrays (``timestamp``, ``x``, ``y``,
    ``category``, ``time_bin``).
    """

    def __init__(self, events: EventTable, cell_size: float = DEFAULT_RADIUS):
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        bad = ~(np.isfinite(events.x) & np.isfinite(events.y))
        if bad.any():
            raise ValueError(f"non-finite coordinate at event {int(np.flatnonzero(bad)[0])}")
        self.kind = events.kind
        self.cell_size = float(cell_size)
        n = len(events)
        if n:
            self.x0 = float(events.x.min())
            self.y0 = float(events.y.min())
            ix = np.floor((events.x - self.x0) / self.cell_size).astype(np.int64)
            iy = np.floor((events.y - self.y0) / self.cell_size).astype(np.int64)
            self.ny = int(iy.max()) + 1
            self.nx = int(ix.max()) + 1
            cell = ix * self.ny + iy
            order = np.lexsort((events.timestamp, cell))
        else:
            self.x0 = self.y0 = 0.0
            self.nx = self.ny = 0
            cell = np.empty(0, dtype=np.int64)
            order = np.empty(0, dtype=np.int64)
        self._finish(events.timestamp[order], events.x[order], events.y[order],
                     events.category[order], cell[order])
        self.source_order = order

    def _finish(self, timestamp, x, y, category, cell):
        self.timestamp = np.ascontiguousarray(timestamp, dtype=np.int64)
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.category = np.ascontiguousarray(category, dtype=np.int32)
        self.cell = np.ascontiguousarray(cell, dtype=np.int64)
        self.time_bin = weekly_bin(self.timestamp)
        ids, starts, counts = np.unique(self.cell, return_index=True, return_counts=True)
        self._cells = {int(c): (int(s), int(s + k)) for c, s, k in zip(ids, starts, counts)}
        for c, (lo, hi) in self._cells.items():
            if np.any(np.diff(self.timestamp[lo:hi]) < 0):
                raise AssertionError(f"cell {c} not time-ordered")

    @property
    def event_count(self) -> int:
        return len(self.timestamp)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        if not self.event_count:
            return (0.0, 0.0, 0.0, 0.0)
        return (float(self.x.min()), float(self.y.min()), float(self.x.max()), float(self.y.max()))

    def cell_sizes(self) -> dict[int, int]:
        return {c: hi - lo for c, (lo, hi) in self._cells.items()}

    def candidate_cells(self, x: float, y: float, radius: float) -> list[int]:
        if not self.event_count:
            return []
        ix_lo = int(np.floor((x - radius - self.x0) / self.cell_size))
        ix_hi = int(np.floor((x + radius - self.x0) / self.cell_size))
        iy_lo = int(np.floor((y - radius - self.y0) / self.cell_size))
        iy_hi = int(np.floor((y + radius - self.y0) / self.cell_size))
        out = []
        for ix in range(max(ix_lo, 0), min(ix_hi, self.nx - 1) + 1):
            for iy in range(max(iy_lo, 0), min(iy_hi, self.ny - 1) + 1):
                c = ix * self.ny + iy
                if c in self._cells:
                    out.append(c)
        return out

    def query(self, scope: QueryScope) -> np.ndarray:
        """Positions of events with distance <= radius and time in the window."""
        t0, t1 = scope.window_start, scope.window_end
        parts = []
        for c in self.candidate_cells(scope.x, scope.y, scope.radius):
            lo, hi = self._cells[c]
            ts = self.timestamp[lo:hi]
            a = lo + int(np.searchsorted(ts, t0, side="left"))
            b = lo + int(np.searchsorted(ts, t1, side="left"))
            if a == b:
                continue
            d = np.hypot(self.x[a:b] - scope.x, self.y[a:b] - scope.y)
            hit = np.flatnonzero(d <= scope.radius)
            if len(hit):
                parts.append(hit + a)
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(parts)

    def records(self, positions) -> EventTable:
        positions = np.asarray(positions, dtype=np.int64)
        return EventTable(self.timestamp[positions], self.x[positions], self.y[positions],
                          self.category[positions], self.kind)

    # ---- snapshot --------------------------------------------------------

    def save(self, path) -> None:
        """Write a little-endian binary snapshot.

        Layout: 8-byte magic, uint32 version, uint32 kind code, float64
        cell_size, float64 x0, float64 y0, int64 nx, int64 ny, int64 n, then
        the columns timestamp (int64), x (float64), y (float64), category
        (int32), cell (int64), each n values long.
        """
        header = struct.pack("<8sIIdddqqq", SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
                             EVENT_KINDS.index(self.kind), self.cell_size, self.x0, self.y0,
                             self.nx, self.ny, self.event_count)
        with open(path, "wb") as fh:
            fh.write(header)
            for arr, dt in ((self.timestamp, "<i8"), (self.x, "<f8"), (self.y, "<f8"),
                            (self.category, "<i4"), (self.cell, "<i8")):
                fh.write(arr.astype(dt).tobytes())

    @classmethod
    def load(cls, path) -> "SpatioTemporalIndex":
        data = Path(path).read_bytes()
        size = struct.calcsize("<8sIIdddqqq")
        magic, version, kind, cell_size, x0, y0, nx, ny, n = struct.unpack("<8sIIdddqqq", data[:size])
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not an index snapshot")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        off = size
        cols = []
        for dt in ("<i8", "<f8", "<f8", "<i4", "<i8"):
            width = np.dtype(dt).itemsize * n
            cols.append(np.frombuffer(data[off:off + width], dtype=dt))
            off += width
        self = cls.__new__(cls)
        self.kind = EVENT_KINDS[kind]
        self.cell_size, self.x0, self.y0, self.nx, self.ny = cell_size, x0, y0, nx, ny
        self.source_order = None
        self._finish(*cols)
        return self


def build_index(events, cell_size: float = DEFAULT_RADIUS) -> SpatioTemporalIndex:
    if not isinstance(events, EventTable):
        events = EventTable.from_records(events)
    return SpatioTemporalIndex(events, cell_size)


def radius_window_query(index: SpatioTemporalIndex, scope: QueryScope) -> np.ndarray:
    return index.query(scope)


def weekly_bin(timestamp) -> np.ndarray:
    """Bin index weekday * 8 + hour // 3, with Monday = 0 (1970-01-01 was a Thursday)."""
    ts = np.asarray(timestamp, dtype=np.int64)
    days = ts // 86_400
    weekday = (days + 3) % 7
    hour = (ts % 86_400) // 3_600
    return (weekday * 8 + hour // 3).astype(np.int32)


def category_table_size(kind: str) -> int:
    return CATEGORY_TABLE_SIZES[kind]
