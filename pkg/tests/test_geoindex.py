import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from digicensus.geoindex import QueryScope, SpatioTemporalIndex, build_index, radius_window_query, weekly_bin
from digicensus.ingest import EventTable

DAY = 86_400
T0 = 1_262_304_000  # 2010-01-01


def random_events(rng, n, extent=5000.0, span=3 * 365 * DAY, kind="crime"):
    return EventTable(
        T0 + rng.integers(0, span, n),
        rng.uniform(-extent, extent, n),
        rng.uniform(-extent, extent, n),
        rng.integers(0, 48, n) if kind == "crime" else np.zeros(n, dtype=int),
        kind,
    )


def scan(events, scope):
    """Linear-scan oracle returning (timestamp, x, y, category) tuples."""
    d = np.hypot(events.x - scope.x, events.y - scope.y)
    hit = (d <= scope.radius) & (events.timestamp >= scope.window_start) & (events.timestamp < scope.window_end)
    idx = np.flatnonzero(hit)
    return sorted(zip(events.timestamp[idx], events.x[idx], events.y[idx], events.category[idx]))


def via_index(index, scope):
    pos = radius_window_query(index, scope)
    return sorted(zip(index.timestamp[pos], index.x[pos], index.y[pos], index.category[pos]))


def random_scope(rng, radius=1000.0):
    return QueryScope(rng.uniform(-5500, 5500), rng.uniform(-5500, 5500),
                      T0 + int(rng.integers(0, 4 * 365 * DAY)), radius)


def test_empty_index():
    index = build_index(EventTable.empty("crime"))
    assert index.event_count == 0
    assert len(index.query(QueryScope(0.0, 0.0, T0))) == 0


def test_event_count_conserved(rng):
    assert build_index(random_events(rng, 10_000)).event_count == 10_000


def test_cell_occupancy_matches_brute_force(rng):
    events = random_events(rng, 5000)
    index = build_index(events, 700.0)
    ix = np.floor((events.x - events.x.min()) / 700.0).astype(int)
    iy = np.floor((events.y - events.y.min()) / 700.0).astype(int)
    ny = iy.max() + 1
    cells, counts = np.unique(ix * ny + iy, return_counts=True)
    assert index.cell_sizes() == dict(zip(cells.tolist(), counts.tolist()))


def test_non_finite_rejected():
    events = EventTable([T0, T0], [0.0, np.nan], [0.0, 0.0], [0, 0], "crime")
    with pytest.raises(ValueError, match="event 1"):
        build_index(events)


def test_boundary_conventions():
    end = T0 + 400 * DAY
    events = EventTable(
        [end - DAY, end - DAY, end, end - 365 * DAY, end - 365 * DAY - 1],
        [1000.0, 1000.0 + 1e-6, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1, 2, 3, 4, 5],
        "crime",
    )
    index = build_index(events)
    got = sorted(index.category[index.query(QueryScope(0.0, 0.0, end))].tolist())
    # at distance == radius kept, just beyond dropped, window end excluded, window start included
    assert got == [1, 4]


def test_matches_scan(rng):
    events = random_events(rng, 10_000)
    index = build_index(events)
    for _ in range(100):
        scope = random_scope(rng)
        assert via_index(index, scope) == scan(events, scope)


def test_other_cell_sizes(rng):
    events = random_events(rng, 3000)
    for cell in (150.0, 2500.0):
        index = build_index(events, cell)
        for _ in range(20):
            scope = random_scope(rng, radius=800.0)
            assert via_index(index, scope) == scan(events, scope)


def test_snapshot_round_trip(tmp_path, rng):
    events = random_events(rng, 2000)
    index = build_index(events)
    index.save(tmp_path / "i.idx")
    back = SpatioTemporalIndex.load(tmp_path / "i.idx")
    for col in ("timestamp", "x", "y", "category", "cell", "time_bin"):
        np.testing.assert_array_equal(getattr(back, col), getattr(index, col))
    scope = random_scope(rng)
    np.testing.assert_array_equal(back.query(scope), index.query(scope))


def test_snapshot_bad_magic(tmp_path):
    (tmp_path / "x.idx").write_bytes(b"garbage" * 10)
    with pytest.raises(ValueError):
        SpatioTemporalIndex.load(tmp_path / "x.idx")


def test_weekly_bin_monday_midnight():
    # 2010-01-04 was a Monday
    monday = T0 + 3 * DAY
    assert weekly_bin(np.array([monday, monday + 3 * 3600 - 1, monday + 3 * 3600, monday + 7 * DAY - 1])).tolist() == [0, 0, 1, 55]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), r1=st.floats(10, 1500), r2=st.floats(10, 1500))
def test_nested_radius(seed, r1, r2):
    rng = np.random.default_rng(seed)
    index = build_index(random_events(rng, 800, extent=2000))
    lo, hi = sorted((r1, r2))
    x, y, end = rng.uniform(-2000, 2000), rng.uniform(-2000, 2000), T0 + int(rng.integers(0, 3 * 365 * DAY))
    small = set(index.query(QueryScope(x, y, end, lo)).tolist())
    big = set(index.query(QueryScope(x, y, end, hi)).tolist())
    assert small <= big


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), w1=st.integers(1, 700), w2=st.integers(1, 700))
def test_nested_window(seed, w1, w2):
    rng = np.random.default_rng(seed)
    index = build_index(random_events(rng, 800, extent=2000))
    lo, hi = sorted((w1, w2))
    end = T0 + int(rng.integers(0, 3 * 365 * DAY))
    small = set(index.query(QueryScope(0.0, 0.0, end, 1500, lo * DAY)).tolist())
    big = set(index.query(QueryScope(0.0, 0.0, end, 1500, hi * DAY)).tolist())
    assert small <= big


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), cut=st.integers(1, 364))
def test_disjoint_windows_union(seed, cut):
    rng = np.random.default_rng(seed)
    index = build_index(random_events(rng, 1000, extent=2000))
    end = T0 + int(rng.integers(365, 3 * 365) * DAY)
    whole = set(index.query(QueryScope(0.0, 0.0, end, 1500, 365 * DAY)).tolist())
    late = set(index.query(QueryScope(0.0, 0.0, end, 1500, cut * DAY)).tolist())
    early = set(index.query(QueryScope(0.0, 0.0, end - cut * DAY, 1500, (365 - cut) * DAY)).tolist())
    assert late.isdisjoint(early) and late | early == whole


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_insertion_order_invariance(seed):
    rng = np.random.default_rng(seed)
    events = random_events(rng, 600, extent=2000)
    perm = rng.permutation(len(events))
    a, b = build_index(events), build_index(events.take(perm))
    scope = QueryScope(rng.uniform(-2000, 2000), rng.uniform(-2000, 2000), T0 + int(rng.integers(0, 3 * 365 * DAY)))
    assert via_index(a, scope) == via_index(b, scope)
