"""Per-session streaming authentication: causal filtering of incoming samples,
window cadence, open-set decisions and majority smoothing."""

import logging
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from ppgauth import nn
from ppgauth.dataset import window_length, zscore
from ppgauth.errors import DegenerateChannel, SequenceRegression
from ppgauth.signal_io import BandpassFilter, band_edges

log = logging.getLogger(__name__)

UNKNOWN = "Unknown"
OPEN_SET_THRESHOLD = 0.8
MAJORITY_K = 5


@dataclass(frozen=True)
class RawDecision:
    verdict: object  # class index or UNKNOWN
    confidence: float
    at: float  # sample clock, seconds


def decide(probs, threshold=OPEN_SET_THRESHOLD):
    """Open-set rule on a probability vector: ``(verdict, confidence)``."""
    probs = np.asarray(probs)
    best = int(np.argmax(probs))
    conf = float(probs[best])
    return (best if conf >= threshold else UNKNOWN), conf


def classify_window(window, params, threshold=OPEN_SET_THRESHOLD, at=0.0):
    """Classify one band-passed (T, C) window; z-scoring happens here.

    A window with a flat channel yields ``Unknown`` with confidence 0.
    """
    try:
        x = zscore(window)
    except DegenerateChannel:
        return RawDecision(UNKNOWN, 0.0, at)
    verdict, conf = decide(nn.classifier_forward(x, params), threshold)
    return RawDecision(verdict, conf, at)


def majority_filter(history, k=MAJORITY_K):
    """Smooth the newest verdict using the last ``k`` raw verdicts.

    A value seen more than ``floor(n / 2)`` times among the ``n`` considered
    verdicts wins; with no clear majority the newest verdict passes through.
    """
    recent = list(history)[-k:]
    if not recent:
        raise ValueError("empty verdict history")
    value, count = Counter(recent).most_common(1)[0]
    if count > len(recent) // 2:
        return value
    return recent[-1]


def count_changes(trace):
    return sum(1 for a, b in zip(trace, trace[1:]) if a != b)


@dataclass(frozen=True)
class DecisionEvent:
    session_id: int
    window_index: int
    raw: RawDecision
    smoothed: object
    sample_clock_s: float

    def to_json(self):
        return {
            "session_id": self.session_id,
            "window_index": self.window_index,
            "raw_verdict": self.raw.verdict,
            "confidence": self.raw.confidence,
            "smoothed_verdict": self.smoothed,
            "sample_clock_s": self.sample_clock_s,
        }


@dataclass(frozen=True)
class StreamConfig:
    rate_hz: float = 25.0
    window_s: float = 4.0
    overlap: float = 0.5
    warmup_s: float = 120.0
    threshold: float = OPEN_SET_THRESHOLD
    majority_k: int = MAJORITY_K
    record_samples: bool = False

    @property
    def window_samples(self):
        return window_length(self.window_s, self.rate_hz)

    @property
    def stride_samples(self):
        return max(1, int(round(self.window_samples * (1 - self.overlap))))

    @property
    def warmup_samples(self):
        return int(round(self.warmup_s * self.rate_hz))


@dataclass
class Session:
    """Mutable state of one streaming connection.

    Every received sample goes through the causal band-pass. Samples that
    arrive after the warm-up period fill the ring buffer; once it holds a
    full window, a decision is made every ``stride`` samples.
    """

    params: nn.ModelParams
    config: StreamConfig = field(default_factory=StreamConfig)
    session_id: int = 0

    def __post_init__(self):
        self.reset()

    def reset(self):
        cfg = self.config
        self.filter = BandpassFilter(cfg.rate_hz, 4, *band_edges(cfg.rate_hz))
        self.buffer = np.zeros((0, 4))
        self.samples_seen = 0
        self.last_seq = None
        self.window_index = 0
        self.history = deque(maxlen=cfg.majority_k)
        self.received = [] if cfg.record_samples else None

    @property
    def phase(self):
        return "Active" if self.samples_seen >= self.config.warmup_samples else "WarmUp"

    def step(self, packet):
        """Feed one packet; returns the decisions it triggered."""
        if self.last_seq is not None:
            if packet.seq <= self.last_seq:
                last = self.last_seq
                self.reset()
                raise SequenceRegression(
                    f"session {self.session_id}: seq {packet.seq} after {last}; state reset"
                )
            if packet.seq != self.last_seq + 1:
                log.warning("session %d: seq gap %d -> %d", self.session_id, self.last_seq, packet.seq)
        self.last_seq = packet.seq
        return self.feed(packet.samples)

    def feed(self, samples):
        cfg = self.config
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, 4)
        if self.received is not None:
            self.received.append(np.asarray(samples, dtype=np.float32))
        if len(samples) == 0:
            return []
        filtered = self.filter.process(samples)
        t_len, stride, warm = cfg.window_samples, cfg.stride_samples, cfg.warmup_samples
        start = self.samples_seen
        self.samples_seen += len(samples)

        # keep only post-warm-up samples in the buffer
        skip = max(0, warm - start)
        combined = np.concatenate([self.buffer, filtered[skip:]]) if skip < len(filtered) else self.buffer
        n_buf = len(self.buffer)
        active_before = max(0, start - warm)
        events = []
        for j in range(len(combined) - n_buf):
            active = active_before + j + 1
            if active >= t_len and (active - t_len) % stride == 0:
                end = n_buf + j + 1
                at = (warm + active) / cfg.rate_hz
                events.append(self._decide(combined[end - t_len:end], at))
        self.buffer = combined[-t_len:].copy()
        return events

    def _decide(self, window, at):
        raw = classify_window(window, self.params, self.config.threshold, at)
        self.history.append(raw.verdict)
        smoothed = majority_filter(self.history, self.config.majority_k)
        ev = DecisionEvent(self.session_id, self.window_index, raw, smoothed, at)
        self.window_index += 1
        return ev

    def received_samples(self):
        if not self.received:
            return np.zeros((0, 4), dtype=np.float32)
        return np.concatenate(self.received)


def session_step(session, packet):
    return session.step(packet)
