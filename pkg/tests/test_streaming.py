import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgauth import nn
from ppgauth.dataset import build_dataset
from ppgauth.errors import SequenceRegression
from ppgauth.gateway import frames
from ppgauth.protocol import FramedPacket
from ppgauth.signal_io import SignalRecord, SyntheticSubjectProfile, generate_synthetic
from ppgauth.streaming import (
    UNKNOWN,
    RawDecision,
    Session,
    StreamConfig,
    classify_window,
    count_changes,
    decide,
    majority_filter,
)

CFG = nn.ModelConfig(4, 100, 3, hidden_dim=5, num_layers=1)


@pytest.fixture(scope="module")
def params():
    return nn.init_params(CFG, 0)


@pytest.fixture(scope="module")
def record():
    return generate_synthetic(SyntheticSubjectProfile(seed=3), 600.0, 25.0, subject_id="S1")


def _replay(session, data, frame=25):
    events = []
    for pkt in frames(data, frame_samples=frame):
        events.extend(session.step(pkt))
    return events


class TestDecide:
    def test_confident(self):
        assert decide([0.9, 0.05, 0.05]) == (0, 0.9)

    def test_below_threshold(self):
        assert decide([0.5, 0.3, 0.2])[0] == UNKNOWN

    def test_uniform_over_26(self):
        verdict, conf = decide(np.full(26, 1 / 26))
        assert verdict == UNKNOWN and conf == pytest.approx(1 / 26)

    def test_exactly_at_threshold_accepts(self):
        assert decide([0.8, 0.2])[0] == 0


class TestMajority:
    def test_four_of_five(self):
        assert majority_filter(list("AABAA")) == "A"

    def test_no_clear_majority_keeps_newest(self):
        assert majority_filter(list("ABABC")) == "C"

    def test_all_unknown(self):
        assert majority_filter([UNKNOWN] * 5) == UNKNOWN

    def test_short_history(self):
        assert majority_filter(["A"]) == "A"
        assert majority_filter(["A", "B"]) == "B"
        assert majority_filter(["A", "B", "A"]) == "A"

    def test_only_last_k_considered(self):
        assert majority_filter(list("BBBBBAAA"), k=5) == "A"

    def test_empty(self):
        with pytest.raises(ValueError):
            majority_filter([])

    def test_exhaustive_small_traces(self):
        for n in range(1, 9):
            for raw in itertools.product("AB" + "U", repeat=n):
                smoothed = [majority_filter(raw[:i + 1]) for i in range(n)]
                assert count_changes(smoothed) <= count_changes(raw)

    @settings(max_examples=300, deadline=None)
    @given(raw=st.lists(st.sampled_from([0, 1, 2, UNKNOWN]), min_size=1, max_size=60),
           k=st.integers(1, 9))
    def test_smoothing_never_adds_flips(self, raw, k):
        smoothed = [majority_filter(raw[:i + 1], k) for i in range(len(raw))]
        assert count_changes(smoothed) <= count_changes(raw)


class TestCadence:
    def test_first_event_at_124s(self, params, record):
        events = _replay(Session(params, StreamConfig()), record.data[:3100])
        assert len(events) == 1
        assert events[0].sample_clock_s == pytest.approx(124.0)

    def test_nothing_before_window_fills(self, params, record):
        assert _replay(Session(params, StreamConfig()), record.data[:3099]) == []

    def test_ten_minutes_gives_239(self, params, record):
        events = _replay(Session(params, StreamConfig()), record.data)
        assert len(events) == (600 - 120 - 4) // 2 + 1 == 239
        assert [e.window_index for e in events] == list(range(239))

    def test_stride_spacing(self, params, record):
        cfg = StreamConfig(warmup_s=0)
        events = _replay(Session(params, cfg), record.data[:2000])
        clocks = np.array([e.sample_clock_s for e in events]) * cfg.rate_hz
        assert set(np.diff(clocks).round(9)) == {50.0}

    def test_one_event_per_50_samples(self, params, record):
        s = Session(params, StreamConfig(warmup_s=0))
        assert len(s.feed(record.data[:100])) == 1
        for k in range(5):
            chunk = record.data[100 + 50 * k:150 + 50 * k]
            assert len(s.feed(chunk[:49])) == 0
            assert len(s.feed(chunk[49:])) == 1

    @settings(max_examples=25, deadline=None)
    @given(cuts=st.lists(st.integers(1, 400), min_size=1, max_size=12))
    def test_chunking_does_not_matter(self, params, record, cuts):
        data = record.data[:1500]
        ref = Session(params, StreamConfig(warmup_s=2.0)).feed(data)
        s = Session(params, StreamConfig(warmup_s=2.0))
        got, pos = [], 0
        for c in cuts:
            got.extend(s.feed(data[pos:pos + c]))
            pos += c
        got.extend(s.feed(data[pos:]))
        assert [(e.sample_clock_s, e.raw.verdict) for e in got] == [(e.sample_clock_s, e.raw.verdict) for e in ref]
        for a, b in zip(got, ref):
            assert a.raw.confidence == pytest.approx(b.raw.confidence, abs=1e-12)

    def test_phase(self, params, record):
        s = Session(params, StreamConfig(warmup_s=1.0))
        s.feed(record.data[:24])
        assert s.phase == "WarmUp"
        s.feed(record.data[24:25])
        assert s.phase == "Active"


class TestSequence:
    def test_regression_resets(self, params, record):
        s = Session(params, StreamConfig(warmup_s=0))
        _replay(s, record.data[:300])
        assert s.window_index > 0
        with pytest.raises(SequenceRegression):
            s.step(FramedPacket(0, 3, record.data[:25]))
        assert s.window_index == 0 and s.samples_seen == 0 and s.last_seq is None

    def test_gap_is_tolerated(self, params, record, caplog):
        s = Session(params, StreamConfig(warmup_s=0))
        s.step(FramedPacket(0, 0, record.data[:25]))
        s.step(FramedPacket(0, 5, record.data[25:50]))
        assert s.last_seq == 5 and s.samples_seen == 50
        assert "gap" in caplog.text


class TestDegenerate:
    def test_flat_window_is_unknown(self, params):
        raw = classify_window(np.ones((100, 4)), params, at=3.0)
        assert raw == RawDecision(UNKNOWN, 0.0, 3.0)

    def test_flat_stream_records_unknown_events(self, params):
        s = Session(params, StreamConfig(warmup_s=0))
        events = s.feed(np.zeros((200, 4)))
        assert len(events) == 3
        assert all(e.raw.verdict == UNKNOWN and e.raw.confidence == 0.0 for e in events)
        assert all(e.smoothed == UNKNOWN for e in events)


class TestBatchParity:
    @pytest.mark.parametrize("warmup_s", [0.0, 120.0])
    def test_matches_batch_pipeline(self, params, record, warmup_s):
        events = _replay(Session(params, StreamConfig(warmup_s=warmup_s)), record.data[:5000], frame=37)
        ds = build_dataset([SignalRecord("S1", "Rest", 25.0, record.data[:5000])], label_names=("S1",))
        by_start = {w.origin[1]: w.values for w in ds.windows}
        assert len(events) > 0
        for ev in events:
            start = int(round(ev.sample_clock_s * 25.0)) - 100
            probs = nn.classifier_forward(by_start[start], params)
            assert abs(float(np.max(probs)) - ev.raw.confidence) < 1e-6
            assert decide(probs)[0] == ev.raw.verdict


class TestEventJson:
    def test_fields(self, params, record):
        ev = Session(params, StreamConfig(warmup_s=0), session_id=9).feed(record.data[:100])[0]
        assert set(ev.to_json()) == {"session_id", "window_index", "raw_verdict", "confidence",
                                     "smoothed_verdict", "sample_clock_s"}
        assert ev.to_json()["session_id"] == 9
