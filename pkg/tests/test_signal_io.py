import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgauth.errors import (
    ChannelCountMismatch,
    InvalidProfile,
    MissingColumn,
    NonMonotonicTimestamp,
    NumericParse,
    RateTooLowForBand,
    UpsampleUnsupported,
)
from ppgauth.signal_io import (
    CSV_HEADER,
    BandpassFilter,
    SignalRecord,
    SyntheticSubjectProfile,
    band_edges,
    bandpass,
    generate_synthetic,
    load_csv,
    resample,
    resampled_length,
    write_csv,
)

HEADER = ",".join(CSV_HEADER)


def _write(tmp_path, lines, name="in.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def _row(ts, subject="S1", activity="Rest", vals=(1.0, 2.0, 3.0, 4.0)):
    return f"{ts!r}," + ",".join(repr(v) for v in vals) + f",{subject},{activity}"


def _sine_record(freq, rate, seconds, amp=1.0):
    t = np.arange(int(round(seconds * rate))) / rate
    x = amp * np.sin(2 * np.pi * freq * t)
    return SignalRecord("s", "Rest", rate, np.column_stack([x] * 4))


def _steady_gain(freq, rate=25.0, cycles=None, transient_s=5.0):
    """Gain at ``freq`` from the FFT bin of an integer number of cycles
    measured after the filter transient."""
    cycles = cycles or max(10, int(math.ceil(20 * freq)))
    n_keep = int(round(cycles / freq * rate))
    n_skip = int(round(transient_s * rate))
    rec = _sine_record(freq, rate, (n_skip + n_keep) / rate)
    y = bandpass(rec).data[n_skip:, 0]
    x = rec.data[n_skip:, 0]
    k = cycles  # bin index of freq in an n_keep-point FFT
    return abs(np.fft.rfft(y)[k]) / abs(np.fft.rfft(x)[k])


class TestLoadCsv:
    def test_three_rows_one_record(self, tmp_path):
        p = _write(tmp_path, [HEADER, _row(0.0), _row(0.04), _row(0.08)])
        recs = load_csv(p)
        assert len(recs) == 1
        assert len(recs[0]) == 3
        assert recs[0].rate_hz == 25.0

    def test_five_channel_columns_rejected(self, tmp_path):
        p = _write(tmp_path, [HEADER.replace("infrared", "infrared,extra"),
                              "0.0,1,2,3,4,5,S1,Rest"])
        with pytest.raises(ChannelCountMismatch):
            load_csv(p)

    def test_two_subjects_lengths_match_line_count(self, tmp_path):
        rows = [HEADER]
        for k in range(7):
            rows.append(_row(k * 0.04, "A"))
            if k < 5:  # interleave the subjects
                rows.append(_row(k * 0.04, "B"))
        p = _write(tmp_path, rows)
        # line-counting oracle straight from the file text
        text = p.read_text().splitlines()[1:]
        expected = {}
        for line in text:
            subj = line.split(",")[5]
            expected[subj] = expected.get(subj, 0) + 1
        got = {r.subject_id: len(r) for r in load_csv(p)}
        assert got == expected == {"A": 7, "B": 5}

    def test_missing_column(self, tmp_path):
        p = _write(tmp_path, ["timestamp,green1,green2,red,infrared,subject", "0,1,2,3,4,S1"])
        with pytest.raises(MissingColumn):
            load_csv(p)

    def test_non_monotonic_timestamp(self, tmp_path):
        p = _write(tmp_path, [HEADER, _row(0.0), _row(0.08), _row(0.04)])
        with pytest.raises(NonMonotonicTimestamp):
            load_csv(p)

    def test_numeric_parse_reports_line(self, tmp_path):
        p = _write(tmp_path, [HEADER, _row(0.0), "0.04,1,two,3,4,S1,Rest"])
        with pytest.raises(NumericParse) as exc:
            load_csv(p)
        assert exc.value.row == 3

    def test_non_finite_rejected(self, tmp_path):
        p = _write(tmp_path, [HEADER, _row(0.0), "0.04,1,nan,3,4,S1,Rest"])
        with pytest.raises(NumericParse):
            load_csv(p)

    def test_gap_splits_session(self, tmp_path):
        rows = [HEADER] + [_row(k * 0.04) for k in range(5)] + [_row(100 + k * 0.04) for k in range(3)]
        recs = load_csv(_write(tmp_path, rows))
        assert sorted(len(r) for r in recs) == [3, 5]

    def test_activity_case_normalized(self, tmp_path):
        p = _write(tmp_path, [HEADER, _row(0.0, activity="walk"), _row(0.04, activity="WALK")])
        (rec,) = load_csv(p)
        assert rec.activity == "Walk"

    def test_write_then_load_is_lossless(self, tmp_path):
        rec = generate_synthetic(SyntheticSubjectProfile(seed=3, noise_std=0.1), 4.0, 25.0, "Type", "S9")
        path = tmp_path / "rt.csv"
        write_csv([rec], path)
        (back,) = load_csv(path)
        assert back.subject_id == "S9" and back.activity == "Type"
        assert np.array_equal(back.data, rec.data)
        raw = path.read_bytes()
        assert b"\r\n" not in raw and raw.startswith(HEADER.encode() + b"\n")


class TestSynthetic:
    def test_length(self):
        rec = generate_synthetic(SyntheticSubjectProfile(), 10.0, 25.0)
        assert rec.data.shape == (250, 4)

    def test_heart_rate_fft_peak(self):
        prof = SyntheticSubjectProfile(seed=1, heart_rate_bpm=60.0, hr_variability=0.0, noise_std=0.0)
        rec = generate_synthetic(prof, 120.0, 25.0)
        x = rec.data[:, 0] - rec.data[:, 0].mean()
        spec = np.abs(np.fft.rfft(x))
        freqs = np.fft.rfftfreq(len(x), 1 / 25.0)
        peak = freqs[1 + np.argmax(spec[1:])]
        assert abs(peak - 1.0) <= 0.05

    def test_deterministic(self):
        prof = SyntheticSubjectProfile(seed=11, hr_variability=0.05, noise_std=0.1)
        a = generate_synthetic(prof, 30.0, 25.0)
        b = generate_synthetic(prof, 30.0, 25.0)
        assert a.data.tobytes() == b.data.tobytes()

    def test_seed_changes_output(self):
        a = generate_synthetic(SyntheticSubjectProfile(seed=1, noise_std=0.1), 5.0, 25.0)
        b = generate_synthetic(SyntheticSubjectProfile(seed=2, noise_std=0.1), 5.0, 25.0)
        assert not np.array_equal(a.data, b.data)

    def test_channel_lag_shifts_pulse(self):
        prof = SyntheticSubjectProfile(seed=0, noise_std=0.0, drift_amp=0.0, notch_amp=0.0,
                                       systolic_amp=1.0, channel_lag_s=(0.0, 0.2, 0.0, 0.0))
        rec = generate_synthetic(prof, 20.0, 100.0)
        x0, x1 = rec.data[:, 0], rec.data[:, 1]
        lags = np.arange(-40, 41)
        corr = [np.dot(x0[50:-50], np.roll(x1, -k)[50:-50]) for k in lags]
        assert lags[int(np.argmax(corr))] == 20  # 0.2 s at 100 Hz

    @pytest.mark.parametrize("bad", [dict(heart_rate_bpm=20.0), dict(systolic_width_s=0.0),
                                     dict(noise_std=-1.0), dict(systolic_amp=(1.0, 2.0))])
    def test_invalid_profile(self, bad):
        with pytest.raises(InvalidProfile):
            generate_synthetic(SyntheticSubjectProfile(**bad), 1.0, 25.0)


class TestResample:
    def test_500_to_25_divides_length_by_20(self):
        rec = _sine_record(1.0, 500.0, 12.0)
        assert len(resample(rec, 25.0)) == len(rec) // 20

    def test_identity(self):
        rec = _sine_record(1.0, 25.0, 4.0)
        assert resample(rec, 25.0).data.tobytes() == rec.data.tobytes()

    def test_alias_suppressed(self):
        rec = _sine_record(30.0, 500.0, 20.0)
        out = resample(rec, 25.0)
        settle = 25  # first second holds the low-pass transient
        rms_in = np.sqrt(np.mean(rec.data[:, 0] ** 2))
        rms_out = np.sqrt(np.mean(out.data[settle:, 0] ** 2))
        assert rms_out < 0.05 * rms_in

    def test_upsample_rejected(self):
        with pytest.raises(UpsampleUnsupported):
            resample(_sine_record(1.0, 25.0, 2.0), 50.0)

    @pytest.mark.parametrize("src,dst", [(500, 25), (100, 25), (100, 5), (125, 20), (250, 10),
                                         (128, 25), (25, 20), (512, 8)])
    def test_length_formula(self, src, dst):
        n = 1237
        rec = SignalRecord("s", "Rest", float(src), np.random.default_rng(0).normal(size=(n, 4)))
        out = resample(rec, float(dst))
        assert len(out) == math.floor(n * dst / src) == resampled_length(n, src, dst)
        assert out.rate_hz == dst

    def test_non_integer_ratio_in_passband(self):
        # a slow sine survives a 128 -> 25 Hz resample (linear interpolation path)
        rec = _sine_record(1.0, 128.0, 20.0)
        out = resample(rec, 25.0)
        t = np.arange(len(out)) / 25.0
        ref = np.sin(2 * np.pi * 1.0 * t)
        # compare after the filter transient, allowing for its small phase delay
        assert np.max(np.abs(out.data[50:, 0])) == pytest.approx(1.0, abs=0.05)
        assert np.corrcoef(out.data[50:, 0], np.roll(ref, 1)[50:])[0, 1] > 0.95


class TestBandpass:
    def test_dc_removed(self):
        rec = SignalRecord("s", "Rest", 25.0, np.full((25 * 60, 4), 3.0))
        y = bandpass(rec).data
        assert np.max(np.abs(y[-25 * 10:])) < 0.01 * 3.0

    def test_gain_at_band_center(self):
        gain_db = 20 * np.log10(_steady_gain(2.45, cycles=49))
        assert abs(gain_db) <= 1.0

    def test_gain_at_slow_drift(self):
        center = _steady_gain(2.45, cycles=49)
        slow = _steady_gain(0.05, cycles=10)
        assert 20 * np.log10(slow / center) <= -12.0

    @settings(max_examples=20, deadline=None)
    @given(scale=st.floats(-1e3, 1e3).filter(lambda s: abs(s) > 1e-3), seed=st.integers(0, 10_000))
    def test_linear(self, scale, seed):
        x = np.random.default_rng(seed).normal(size=(300, 4))
        a = bandpass(SignalRecord("s", "Rest", 25.0, x * scale)).data
        b = scale * bandpass(SignalRecord("s", "Rest", 25.0, x)).data
        assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(b))

    @settings(max_examples=20, deadline=None)
    @given(data=st.lists(st.floats(-1e12, 1e12, allow_nan=False), min_size=4, max_size=400))
    def test_finite_in_finite_out(self, data):
        x = np.array(data[: len(data) // 4 * 4]).reshape(-1, 4)
        y = bandpass(SignalRecord("s", "Rest", 25.0, x)).data
        assert np.all(np.isfinite(y))

    def test_million_random_samples_finite(self):
        x = np.random.default_rng(5).normal(size=(1_000_000, 4)) * 1e3
        assert np.all(np.isfinite(bandpass(SignalRecord("s", "Rest", 25.0, x)).data))

    def test_streaming_filter_matches_batch(self):
        x = np.random.default_rng(6).normal(size=(1000, 4))
        whole = bandpass(SignalRecord("s", "Rest", 25.0, x)).data
        filt = BandpassFilter(25.0)
        parts = [filt.process(x[k:k + 37]) for k in range(0, 1000, 37)]
        np.testing.assert_allclose(np.concatenate(parts), whole, atol=1e-12)

    def test_band_edges_clamp_below_24_hz(self):
        assert band_edges(25.0) == (0.5, 12.0)
        assert band_edges(100.0) == (0.5, 12.0)
        low, high = band_edges(5.0)
        assert low == 0.5 and high == pytest.approx(2.25)

    def test_nyquist_guard(self):
        with pytest.raises(RateTooLowForBand):
            BandpassFilter(20.0)
