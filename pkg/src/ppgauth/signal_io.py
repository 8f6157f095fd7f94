"""Raw multi-channel PPG records: CSV ingestion, synthetic generation,
anti-aliased resampling and the causal 0.5-12 Hz band-pass."""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from ppgauth import kernels
from ppgauth.errors import (
    ChannelCountMismatch,
    InvalidProfile,
    MissingColumn,
    NonMonotonicTimestamp,
    NumericParse,
    RateTooLowForBand,
    UpsampleUnsupported,
)

N_CHANNELS = 4
BAND_LOW_HZ = 0.5
BAND_HIGH_HZ = 12.0
ACTIVITIES = ("Rest", "Walk", "Type", "Talk")


@dataclass(frozen=True)
class ChannelSpec:
    index: int
    wavelength_nm: int
    label: str


CHANNELS = (
    ChannelSpec(0, 526, "green1"),
    ChannelSpec(1, 526, "green2"),
    ChannelSpec(2, 660, "red"),
    ChannelSpec(3, 950, "infrared"),
)
CHANNEL_LABELS = tuple(c.label for c in CHANNELS)
CSV_HEADER = ("timestamp",) + CHANNEL_LABELS + ("subject", "activity")


def normalize_activity(name):
    """Map case variants of the known activities onto their canonical
    spelling; anything else is kept verbatim as an "Other" activity."""
    name = str(name).strip()
    for known in ACTIVITIES:
        if name.lower() == known.lower():
            return known
    return name


@dataclass(frozen=True, eq=False)
class SignalRecord:
    """A multi-channel recording. ``data`` has shape (n_samples, n_channels)."""

    subject_id: str
    activity: str
    rate_hz: float
    data: np.ndarray
    t0: float | None = None
    record_id: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("record data must be a non-empty (n_samples, n_channels) array")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if not np.all(np.isfinite(data)):
            raise ValueError("record contains NaN or Inf")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "activity", normalize_activity(self.activity))
        if not self.record_id:
            start = "" if self.t0 is None else f"@{self.t0:g}"
            object.__setattr__(self, "record_id", f"{self.subject_id}/{self.activity}{start}")

    def __len__(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def duration_s(self):
        return len(self) / self.rate_hz

    def with_data(self, data, rate_hz=None):
        return replace(self, data=data, rate_hz=self.rate_hz if rate_hz is None else rate_hz)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _estimate_rate(groups):
    diffs = []
    for rows in groups.values():
        ts = np.array([r[0] for r in rows])
        if len(ts) > 1:
            diffs.append(np.diff(ts))
    if not diffs:
        return None
    step = float(np.median(np.concatenate(diffs)))
    return round(1.0 / step, 6) if step > 0 else None


def load_csv(path, rate_hz=None):
    """Parse a PPG CSV file into one record per contiguous
    (subject, activity) session.

    Sessions are split wherever consecutive timestamps are more than two
    sample periods apart. ``rate_hz`` defaults to the median timestamp step.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        for col in ("timestamp", "subject", "activity"):
            if col not in header:
                raise MissingColumn(f"missing column {col!r}")
        chan_cols = [h for h in header if h not in ("timestamp", "subject", "activity")]
        if len(chan_cols) != N_CHANNELS:
            raise ChannelCountMismatch(
                f"expected {N_CHANNELS} channel columns, found {len(chan_cols)}: {chan_cols}"
            )
        missing = [c for c in CHANNEL_LABELS if c not in chan_cols]
        if missing:
            raise MissingColumn(f"missing channel column(s) {missing}")
        i_ts = header.index("timestamp")
        i_subj = header.index("subject")
        i_act = header.index("activity")
        i_ch = [header.index(c) for c in CHANNEL_LABELS]

        groups = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise NumericParse(lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                ts = float(row[i_ts])
                vals = [float(row[i]) for i in i_ch]
            except ValueError as exc:
                raise NumericParse(lineno, str(exc)) from None
            if not (math.isfinite(ts) and all(math.isfinite(v) for v in vals)):
                raise NumericParse(lineno, "non-finite value")
            key = (row[i_subj].strip(), normalize_activity(row[i_act]))
            rows = groups.setdefault(key, [])
            if rows and ts <= rows[-1][0]:
                raise NonMonotonicTimestamp(
                    f"row {lineno}: timestamp {ts} not after {rows[-1][0]} for {key}"
                )
            rows.append((ts, vals))

    if rate_hz is None:
        rate_hz = _estimate_rate(groups) or 25.0
    gap = 2.0 / rate_hz
    records = []
    for (subject, activity), rows in groups.items():
        ts = np.array([r[0] for r in rows])
        data = np.array([r[1] for r in rows], dtype=np.float64)
        breaks = np.flatnonzero(np.diff(ts) > gap + 1e-9) + 1
        for seg_ts, seg in zip(np.split(ts, breaks), np.split(data, breaks)):
            records.append(
                SignalRecord(subject, activity, rate_hz, seg, t0=float(seg_ts[0]))
            )
    return records


def write_csv(records, path):
    """Write records in the ingestion format (``repr`` floats, so lossless)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for rec in records:
            if rec.n_channels != N_CHANNELS:
                raise ChannelCountMismatch(f"record {rec.record_id} has {rec.n_channels} channels")
            t0 = rec.t0 or 0.0
            for k, row in enumerate(rec.data):
                ts = t0 + k / rec.rate_hz
                vals = ",".join(repr(float(v)) for v in row)
                fh.write(f"{ts!r},{vals},{rec.subject_id},{rec.activity}\n")


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

def _four(value):
    return tuple(float(v) for v in np.broadcast_to(np.asarray(value, dtype=float), (N_CHANNELS,)))


@dataclass(frozen=True)
class SyntheticSubjectProfile:
    """Parameters of a synthetic pulse waveform.

    Each beat is a systolic Gaussian plus a smaller dicrotic Gaussian
    ``notch_delay_s`` later. Channel ``k`` is delayed by ``channel_lag_s[k]``
    and has its own amplitudes, slow sinusoidal drift and white noise.
    Per-channel fields accept a scalar (broadcast) or 4 values.
    """

    seed: int = 0
    heart_rate_bpm: float = 70.0
    hr_variability: float = 0.0
    systolic_amp: tuple = (1.0, 1.0, 0.8, 0.6)
    systolic_width_s: float = 0.08
    notch_amp: tuple = (0.35, 0.35, 0.3, 0.25)
    notch_delay_s: tuple = (0.30, 0.30, 0.30, 0.30)
    notch_width_s: float = 0.06
    drift_amp: tuple = (0.2, 0.2, 0.2, 0.2)
    drift_freq_hz: tuple = (0.15, 0.15, 0.15, 0.15)
    noise_std: tuple = (0.02, 0.02, 0.02, 0.02)
    channel_lag_s: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("systolic_amp", "notch_amp", "notch_delay_s", "drift_amp",
                     "drift_freq_hz", "noise_std", "channel_lag_s"):
            try:
                object.__setattr__(self, name, _four(getattr(self, name)))
            except ValueError:
                raise InvalidProfile(f"{name} must be a scalar or {N_CHANNELS} values") from None

    def validate(self):
        if not 35.0 <= self.heart_rate_bpm <= 180.0:
            raise InvalidProfile(f"heart_rate_bpm {self.heart_rate_bpm} outside [35, 180]")
        if not self.hr_variability >= 0:
            raise InvalidProfile("hr_variability must be >= 0")
        if not (self.systolic_width_s > 0 and self.notch_width_s > 0):
            raise InvalidProfile("pulse widths must be positive")
        for name in ("noise_std", "channel_lag_s", "notch_delay_s", "drift_freq_hz"):
            if min(getattr(self, name)) < 0:
                raise InvalidProfile(f"{name} must be >= 0")
        for name in ("systolic_amp", "notch_amp", "drift_amp"):
            if not all(math.isfinite(v) for v in getattr(self, name)):
                raise InvalidProfile(f"{name} must be finite")


def _beat_times(rng, profile, duration_s, margin):
    rr = 60.0 / profile.heart_rate_bpm
    start = -margin + rng.uniform(0.0, rr)
    n_beats = int(math.ceil((duration_s + 2 * margin) / (rr * 0.5))) + 2
    jitter = rng.standard_normal(n_beats)
    if profile.hr_variability > 0:
        intervals = rr * np.clip(1.0 + profile.hr_variability * jitter, 0.3, 3.0)
    else:
        intervals = np.full(n_beats, rr)
    beats = start + np.concatenate(([0.0], np.cumsum(intervals[:-1])))
    return beats[beats < duration_s + margin]


def generate_synthetic(profile, duration_s, rate_hz, activity="Rest", subject_id=None):
    """Render ``duration_s`` seconds of 4-channel synthetic PPG.

    Deterministic: the same (profile, duration_s, rate_hz) always yields
    bit-identical data.
    """
    profile.validate()
    if not (duration_s > 0 and rate_hz > 0):
        raise InvalidProfile("duration_s and rate_hz must be positive")
    n = int(round(duration_s * rate_hz))
    if n < 1:
        raise InvalidProfile("duration_s * rate_hz must be >= 1")

    rng = np.random.default_rng(profile.seed)
    margin = 2.0 + max(profile.channel_lag_s) + max(profile.notch_delay_s)
    beats = _beat_times(rng, profile, duration_s, margin)
    drift_phase = rng.uniform(0.0, 2 * np.pi, N_CHANNELS)
    noise = rng.standard_normal((n, N_CHANNELS))

    t = np.arange(n) / rate_hz
    out = np.zeros((n, N_CHANNELS))
    sw, nw = profile.systolic_width_s, profile.notch_width_s
    reach = 5.0 * max(sw, nw)
    for ch in range(N_CHANNELS):
        lag = profile.channel_lag_s[ch]
        delay = profile.notch_delay_s[ch]
        a_s, a_n = profile.systolic_amp[ch], profile.notch_amp[ch]
        col = out[:, ch]
        for tb in beats + lag:
            lo = max(0, int(math.floor((tb - reach) * rate_hz)))
            hi = min(n, int(math.ceil((tb + delay + reach) * rate_hz)) + 1)
            if lo >= hi:
                continue
            seg = t[lo:hi]
            col[lo:hi] += a_s * np.exp(-0.5 * ((seg - tb) / sw) ** 2)
            col[lo:hi] += a_n * np.exp(-0.5 * ((seg - tb - delay) / nw) ** 2)
        col += profile.drift_amp[ch] * np.sin(
            2 * np.pi * profile.drift_freq_hz[ch] * t + drift_phase[ch]
        )
        col += profile.noise_std[ch] * noise[:, ch]

    sid = f"synth-{profile.seed}" if subject_id is None else str(subject_id)
    return SignalRecord(sid, activity, float(rate_hz), out, t0=0.0)


# --------------------------------------------------------------------------
# resampling
# --------------------------------------------------------------------------

def resampled_length(n, rate_hz, target_hz):
    return int(math.floor(n * target_hz / rate_hz + 1e-9))


def resample(record, target_hz):
    """Downsample with a causal 4th-order Butterworth low-pass at
    0.45 * target_hz, then pick samples (linear interpolation when the rate
    ratio is not an integer)."""
    rate = record.rate_hz
    if target_hz > rate * (1 + 1e-12):
        raise UpsampleUnsupported(f"cannot resample {rate} Hz up to {target_hz} Hz")
    if math.isclose(target_hz, rate, rel_tol=1e-12):
        return record
    sos = signal.butter(4, 0.45 * target_hz, btype="lowpass", fs=rate, output="sos")
    filtered = signal.sosfilt(sos, record.data, axis=0)
    n_out = resampled_length(len(record), rate, target_hz)
    ratio = rate / target_hz
    if abs(ratio - round(ratio)) < 1e-9:
        out = filtered[:: int(round(ratio))][:n_out]
    else:
        pos = np.arange(n_out) * ratio
        src = np.arange(len(record))
        out = np.column_stack([np.interp(pos, src, filtered[:, ch]) for ch in range(record.n_channels)])
    return record.with_data(out, rate_hz=float(target_hz))


# --------------------------------------------------------------------------
# band-pass
# --------------------------------------------------------------------------

def band_edges(rate_hz):
    """Pass band used by the preprocessing pipeline at ``rate_hz``.

    Above 24 Hz this is the fixed 0.5-12 Hz band. Below that the upper edge
    drops to the 0.45 * rate anti-aliasing corner so that rate sweeps down to
    5 Hz remain filterable.
    """
    if rate_hz > 2 * BAND_HIGH_HZ:
        return BAND_LOW_HZ, BAND_HIGH_HZ
    return BAND_LOW_HZ, 0.45 * rate_hz


def bandpass_coefficients(rate_hz, low_hz=BAND_LOW_HZ, high_hz=BAND_HIGH_HZ):
    """Second-order Butterworth band-pass biquad ``(b, a)``, -3 dB at both edges."""
    if rate_hz <= 2 * high_hz:
        raise RateTooLowForBand(
            f"rate {rate_hz} Hz puts Nyquist at or below the {high_hz} Hz band edge"
        )
    if not 0 < low_hz < high_hz:
        raise ValueError(f"invalid band [{low_hz}, {high_hz}]")
    b, a = signal.butter(1, [low_hz, high_hz], btype="bandpass", fs=rate_hz)
    return np.asarray(b, dtype=np.float64), np.asarray(a, dtype=np.float64)


@dataclass
class BandpassFilter:
    """Causal per-channel biquad with carried state.

    Calling :meth:`process` on consecutive chunks gives exactly the same
    output as one call on their concatenation, which is what keeps the
    streaming gateway and batch preprocessing on the same code path.
    """

    rate_hz: float
    n_channels: int = N_CHANNELS
    low_hz: float = BAND_LOW_HZ
    high_hz: float = BAND_HIGH_HZ
    b: np.ndarray = field(init=False, repr=False)
    a: np.ndarray = field(init=False, repr=False)
    state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.b, self.a = bandpass_coefficients(self.rate_hz, self.low_hz, self.high_hz)
        self.reset()

    def reset(self):
        self.state = np.zeros((self.n_channels, 2))

    def process(self, chunk):
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim == 1:
            chunk = chunk[:, None]
        y, self.state = kernels.biquad(chunk, self.b, self.a, self.state)
        return y


def bandpass(record, low_hz=BAND_LOW_HZ, high_hz=BAND_HIGH_HZ):
    """Causal Butterworth band-pass of every channel, zero initial state."""
    filt = BandpassFilter(record.rate_hz, record.n_channels, low_hz, high_hz)
    return record.with_data(filt.process(record.data))
