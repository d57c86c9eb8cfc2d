import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwave_vae.signal_model import (
    WINDOW_LENGTH,
    Record,
    RecordError,
    SignalWindow,
    read_record,
    slice_windows,
    split_dataset,
    validate_record,
    window_count,
    write_record,
)


def make_record(n=3000, p=1200, rid="r0", seed=0):
    rng = np.random.default_rng(seed)
    return Record(
        samples=rng.standard_normal((3, n)),
        p_arrival=p,
        station_coords=(39.93, 32.86),
        event_coords=(41.01, 28.98),
        record_id=rid,
    )


class TestValidateRecord:
    def test_valid(self):
        rec = validate_record(
            dict(samples=np.zeros((3, 3000)), sampling_rate=100, p_arrival=1200)
        )
        assert rec.length == 3000
        assert rec.p_arrival == 1200

    def test_length_mismatch(self):
        with pytest.raises(RecordError, match="mismatch"):
            validate_record(dict(samples=[np.zeros(3000), np.zeros(3000), np.zeros(2999)]))

    def test_latitude_range(self):
        with pytest.raises(RecordError, match="coordinates"):
            validate_record(dict(samples=np.zeros((3, 10)), station_coords=(95.0, 0.0)))

    def test_longitude_range(self):
        with pytest.raises(RecordError, match="coordinates"):
            validate_record(dict(samples=np.zeros((3, 10)), event_coords=(0.0, 181.0)))

    def test_rate(self):
        with pytest.raises(RecordError, match="rate"):
            validate_record(dict(samples=np.zeros((3, 10)), sampling_rate=200))

    @pytest.mark.parametrize("p", [-1, 3000, 5000])
    def test_p_arrival_bounds(self, p):
        with pytest.raises(RecordError, match="p_arrival"):
            validate_record(dict(samples=np.zeros((3, 3000)), p_arrival=p))

    def test_empty(self):
        with pytest.raises(RecordError):
            validate_record(dict(samples=np.zeros((3, 0))))

    def test_immutable_samples(self):
        rec = make_record()
        with pytest.raises(ValueError):
            rec.samples[0, 0] = 1.0


class TestSliceWindows:
    def test_count_3000(self):
        wins = slice_windows(make_record(3000), shift_ms=100)
        # brute-force enumeration of valid starts
        expected = len([s for s in range(0, 3000, 10) if s + WINDOW_LENGTH <= 3000])
        assert expected == 276
        assert len(wins) == 276

    def test_single_window(self):
        assert len(slice_windows(make_record(244, p=100))) == 1

    def test_too_short(self):
        with pytest.raises(RecordError, match="shorter"):
            slice_windows(make_record(243, p=100))

    @pytest.mark.parametrize("shift", [0, -10, 15])
    def test_bad_shift(self, shift):
        with pytest.raises(RecordError):
            slice_windows(make_record(), shift_ms=shift)

    def test_windows_are_exact_slices(self):
        rec = make_record()
        for w in slice_windows(rec, 100, axis=2)[::37]:
            np.testing.assert_array_equal(w.values, rec.samples[2, w.start_index : w.start_index + 244])

    def test_aligned_label(self):
        wins = slice_windows(make_record(p=1200), 100)
        assert [w.start_index for w in wins if w.label] == [1100]

    def test_containment_label(self):
        wins = slice_windows(make_record(p=1200), 100, containment=True)
        starts = [w.start_index for w in wins if w.label]
        assert starts == [s for s in range(0, 2757, 10) if s <= 1200 <= s + 243]

    def test_window_length_enforced(self):
        with pytest.raises(RecordError):
            SignalWindow(values=np.zeros(243), start_index=0, label=False)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(244, 1000), stride=st.sampled_from([1, 5, 10]))
    def test_closed_form_count(self, n, stride):
        brute = sum(1 for s in range(0, n, stride) if s + WINDOW_LENGTH <= n)
        assert window_count(n, stride) == brute == (n - 244) // stride + 1
        rec = make_record(n, p=None)
        assert len(slice_windows(rec, shift_ms=stride * 10)) == brute

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(244, 800), p=st.integers(0, 799), tol=st.integers(0, 5), contain=st.booleans())
    def test_labels_match_brute_force(self, n, p, tol, contain):
        p = p % n
        rec = make_record(n, p=p)
        for w in slice_windows(rec, 10, tolerance=tol, containment=contain):
            if contain:
                want = p in range(w.start_index, w.start_index + 244)
            else:
                want = abs(p - (w.start_index + 100)) <= tol
            assert w.label == want


class TestSplit:
    def windows(self, n_records=100):
        out = []
        for i in range(n_records):
            rec = make_record(600, p=300, rid=f"r{i:03d}", seed=i)
            out.extend(slice_windows(rec, 100))
        return out

    def test_ratio_partition(self):
        split = split_dataset(self.windows(), (0.7, 0.15, 0.15), seed=42)
        assert len(split.record_ids("train")) == 70
        assert len(split.record_ids("eval")) == 15
        assert len(split.record_ids("test")) == 15

    def test_no_leakage(self):
        split = split_dataset(self.windows(), seed=3)
        a, b, c = (split.record_ids(p) for p in ("train", "eval", "test"))
        assert not (a & b) and not (a & c) and not (b & c)

    def test_train_eval_are_p_only(self):
        split = split_dataset(self.windows(), seed=1)
        assert all(w.label for w in split.train + split.eval)
        assert any(not w.label for w in split.test)

    def test_deterministic(self):
        wins = self.windows()
        s1 = split_dataset(wins, seed=42)
        s2 = split_dataset(wins, seed=42)
        assert [w.record_id for w in s1.test] == [w.record_id for w in s2.test]
        assert s1.record_ids("train") == s2.record_ids("train")

    def test_no_positive_windows(self):
        wins = [w for w in self.windows(5) if not w.label]
        with pytest.raises(RecordError, match="no P"):
            split_dataset(wins)

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split_dataset(self.windows(5), (0.5, 0.2, 0.2))


class TestTextFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rec = make_record(500, p=250, rid="abc")
        path = tmp_path / "abc.txt"
        write_record(rec, path)
        back = read_record(path)
        np.testing.assert_array_equal(back.samples, rec.samples)
        assert back.p_arrival == 250
        assert back.station_coords == rec.station_coords
        assert back.event_coords == rec.event_coords
        assert back.record_id == "abc"

    def test_header_layout(self, tmp_path):
        path = tmp_path / "x.txt"
        write_record(make_record(300, p=10), path)
        head = path.read_text().splitlines()[:5]
        assert head[0] == "# rate=100"
        assert "# p_arrival=10" in head
        assert any(h.startswith("# station=") for h in head)

    def test_bad_rows(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("# rate=100\n1 2 3\n1 2\n")
        with pytest.raises(RecordError):
            read_record(path)
