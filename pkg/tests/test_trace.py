import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servescale.curves import SeasonalityParams, TrendParams
from servescale.trace import (EmptyTraceError, InvalidSpecError, SyntheticSpec, TraceError, TraceParseError,
                              TraceRangeError, WorkloadTrace, from_counts, generate_synthetic, load_trace, split,
                              write_trace)


def _csv(tmp_path, body, name="t.csv"):
    p = tmp_path / name
    p.write_text("timestamp,count\n" + body)
    return p


class TestLoad:
    def test_direct_mapping(self, tmp_path):
        tr = load_trace(_csv(tmp_path, "0,5\n60,7\n120,9\n"))
        assert tr.counts == (5, 7, 9)
        assert tr.resolution == 60 and tr.gaps == ()

    def test_gap_filled_with_zero_and_flagged(self, tmp_path):
        tr = load_trace(_csv(tmp_path, "0,4\n120,6\n"))
        assert tr.counts == (4, 0, 6)
        assert len(tr.gaps) == 1

    def test_same_minute_rows_are_summed(self, tmp_path):
        tr = load_trace(_csv(tmp_path, "0,3\n30,4\n"))
        assert tr.counts == (7,)

    def test_unsorted_rows_and_iso_timestamps(self, tmp_path):
        tr = load_trace(_csv(tmp_path, "2024-01-01T00:01:10Z,2\n2024-01-01T00:00:00,1\n"))
        assert tr.counts == (1, 2)
        assert tr.start_epoch == 1704067200

    def test_finer_resolution_is_resampled_to_minutes(self, tmp_path):
        body = "".join(f"{5 * i},1\n" for i in range(24))
        assert load_trace(_csv(tmp_path, body)).counts == (12, 12)

    def test_malformed_row_names_line(self, tmp_path):
        with pytest.raises(TraceParseError, match=r"t\.csv:3:") as info:
            load_trace(_csv(tmp_path, "0,1\n60,abc\n"))
        assert info.value.line == 3

    def test_negative_count_rejected(self, tmp_path):
        with pytest.raises(TraceParseError):
            load_trace(_csv(tmp_path, "0,-1\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyTraceError):
            load_trace(_csv(tmp_path, ""))

    def test_custom_columns(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("minute,requests\n0,2\n60,3\n")
        assert load_trace(p, "minute", "requests").counts == (2, 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60), st.integers(0, 2_000_000_000))
def test_write_load_round_trip(tmp_path_factory, counts, start):
    start -= start % 60
    tr = WorkloadTrace(start, tuple(counts))
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trace(tr, path)
    back = load_trace(path)
    assert back.counts == tr.counts and back.start_epoch == tr.start_epoch


def test_trace_invariants():
    with pytest.raises(EmptyTraceError):
        from_counts([])
    with pytest.raises(TraceError):
        from_counts([1, -1])
    tr = from_counts([1, 2, 3], start_epoch=600)
    assert tr.timestamp(2) == 720 and tr.total == 6


class TestSynthetic:
    def test_constant(self):
        tr = generate_synthetic(SyntheticSpec(50, base_level=100.0))
        assert set(tr.counts) == {100}

    def test_daily_harmonic_bounds_and_period(self):
        spec = SyntheticSpec(2 * 1440, base_level=100.0,
                             harmonics=(SeasonalityParams(1440.0, (0.0, 50.0), (0.0,)),))
        y = np.array(generate_synthetic(spec).counts)
        assert y.min() == 50 and y.max() == 150
        assert np.array_equal(y[:1440], y[1440:])

    def test_seed_determinism(self):
        spec = SyntheticSpec(500, base_level=80.0, noise_sigma=10.0, seed=7,
                             trend=TrendParams(50.0, 0.01, 250.0))
        assert generate_synthetic(spec) == generate_synthetic(spec)
        other = generate_synthetic(SyntheticSpec(500, base_level=80.0, noise_sigma=10.0, seed=8))
        assert other != generate_synthetic(spec)

    def test_level_shift(self):
        tr = generate_synthetic(SyntheticSpec(10, base_level=10.0, level_shifts=((5, 7.0),)))
        assert tr.counts == (10,) * 5 + (17,) * 5

    def test_counts_never_negative(self):
        tr = generate_synthetic(SyntheticSpec(300, base_level=0.0, noise_sigma=5.0, seed=1))
        assert min(tr.counts) == 0

    @pytest.mark.parametrize("period", [0.0, -5.0])
    def test_bad_period(self, period):
        with pytest.raises(InvalidSpecError):
            generate_synthetic(SyntheticSpec(10, harmonics=({"P": period, "a": (0.0, 1.0), "b": (0.0,)},)))


class TestSplit:
    def test_ten_thousand_interval_split(self):
        w = split(from_counts([1] * 10_000), 6000, 500, 2500)
        assert w.unused == 1000
        assert w.test == range(6500, 9000)

    def test_exact_fit(self):
        w = split(from_counts([1] * 100), 90, 5, 5)
        assert w.validation == range(90, 95)

    def test_overflow(self):
        with pytest.raises(TraceRangeError):
            split(from_counts([1] * 100), 90, 10, 10)

    def test_zero_window(self):
        with pytest.raises(TraceRangeError):
            split(from_counts([1] * 100), 0, 10, 10)
