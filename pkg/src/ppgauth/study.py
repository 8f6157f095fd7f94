"""Batch experiments: synthetic cohorts, sampling-rate sweeps, paired
condition comparisons, and the sensor power model."""

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ppgauth.dataset import SplitSpec, build_dataset, filter_by, stratified_split, window_length
from ppgauth.errors import EmptyResult, OutOfMeasuredRange, UpsampleUnsupported
from ppgauth.metrics import metrics_report
from ppgauth.nn import ModelConfig
from ppgauth.signal_io import ACTIVITIES, SyntheticSubjectProfile, generate_synthetic, resample
from ppgauth.training import TrainConfig, evaluate, train

# --------------------------------------------------------------------------
# power model
# --------------------------------------------------------------------------

POWER_ANCHORS_MW = {25.0: 41.9, 128.0: 51.5, 512.0: 90.0}
POWER_FLOOR_RATE_HZ = 8.0
POWER_FLOOR_MW = 38.0


def power_estimate(rate_hz, floor_mw=POWER_FLOOR_MW, with_flag=False):
    """PPG module power draw in mW, piecewise-linear over the measured points.

    Exact at 25, 128 and 512 Hz. The 8 Hz end of the measured span is a
    configurable floor, not a measurement; anything between anchors is an
    estimate. With ``with_flag`` returns ``(mw, estimated)``.
    """
    if not POWER_FLOOR_RATE_HZ <= rate_hz <= 512.0:
        raise OutOfMeasuredRange(f"{rate_hz} Hz is outside the measured 8-512 Hz span")
    anchors = {POWER_FLOOR_RATE_HZ: floor_mw, **POWER_ANCHORS_MW}
    if rate_hz in POWER_ANCHORS_MW:
        mw, estimated = POWER_ANCHORS_MW[rate_hz], False
    else:
        xs = sorted(anchors)
        mw = float(np.interp(rate_hz, xs, [anchors[x] for x in xs]))
        estimated = True
    return (mw, estimated) if with_flag else mw


# --------------------------------------------------------------------------
# synthetic cohorts
# --------------------------------------------------------------------------

# heart-rate multiplier, noise multiplier, drift multiplier, RR variability
ACTIVITY_MODULATION = {
    "Rest": (1.00, 1.0, 1.0, 0.02),
    "Type": (1.08, 1.5, 1.2, 0.03),
    "Talk": (1.05, 1.3, 1.5, 0.04),
    "Walk": (1.30, 2.5, 2.0, 0.05),
}


# Heart rate is treated as a momentary state, not a trait: every record draws
# its resting rate from this shared range, so rate alone cannot identify.
HR_STATE_RANGE = (58.0, 78.0)


def random_profile(rng, seed, kind="morphology"):
    """Draw a subject profile.

    ``kind="morphology"``: subjects differ in pulse shape (systolic width,
    dicrotic notch size and width) on a common channel layout.
    ``kind="lag"``: every subject shares one pulse shape and differs only in
    per-channel lag and amplitude, so no single channel identifies anyone.
    """
    hr = rng.uniform(*HR_STATE_RANGE)
    if kind == "lag":
        return SyntheticSubjectProfile(
            seed=seed,
            heart_rate_bpm=hr,
            systolic_amp=tuple(rng.uniform(0.4, 1.6, 4)),
            systolic_width_s=0.08,
            notch_amp=0.35,
            notch_delay_s=0.30,
            notch_width_s=0.06,
            drift_amp=0.3,
            drift_freq_hz=0.15,
            noise_std=0.05,
            channel_lag_s=(0.0,) + tuple(rng.uniform(0.0, 0.16, 3)),
        )
    if kind != "morphology":
        raise ValueError(f"unknown cohort kind {kind!r}")
    return SyntheticSubjectProfile(
        seed=seed,
        heart_rate_bpm=hr,
        systolic_amp=1.0,
        systolic_width_s=rng.uniform(0.05, 0.10),
        notch_amp=rng.uniform(0.2, 0.5),
        notch_delay_s=0.30 + rng.uniform(-0.01, 0.01),
        notch_width_s=rng.uniform(0.03, 0.08),
        drift_amp=0.3,
        drift_freq_hz=0.15,
        noise_std=0.05,
        channel_lag_s=(0.0, 0.01, 0.02, 0.03),
    )


def activity_profile(profile, activity, seed, resting_hr=None):
    """Apply an activity's modulation; ``resting_hr`` overrides the profile's
    own rate as the base the activity multiplier scales."""
    hr_mul, noise_mul, drift_mul, hrv = ACTIVITY_MODULATION[activity]
    base = profile.heart_rate_bpm if resting_hr is None else resting_hr
    return replace(
        profile,
        seed=seed,
        heart_rate_bpm=float(np.clip(base * hr_mul, 35.0, 180.0)),
        hr_variability=hrv,
        noise_std=tuple(n * noise_mul for n in profile.noise_std),
        drift_amp=tuple(d * drift_mul for d in profile.drift_amp),
    )


def subject_records(profile, subject_id, minutes, rate_hz, activities=ACTIVITIES, session=0):
    """Render ``minutes`` of data for one subject, split evenly over
    ``activities``, each activity as its own record with a fresh heart-rate
    state. ``session`` selects an independent recording of the same person."""
    per = minutes * 60.0 / len(activities)
    out = []
    for k, act in enumerate(activities):
        seed = profile.seed * 1000 + session * 100 + k
        resting = float(np.random.default_rng([seed, 1]).uniform(*HR_STATE_RANGE))
        rec = generate_synthetic(activity_profile(profile, act, seed, resting), per, rate_hz,
                                 activity=act, subject_id=subject_id)
        # sessions a day apart keep CSV timestamps distinct
        out.append(replace(rec, record_id=f"{subject_id}/{act}/s{session}",
                           t0=session * 86400.0))
    return out


@dataclass
class Cohort:
    profiles: dict  # subject id -> profile
    records: list

    @property
    def subjects(self):
        return list(self.profiles)


def make_cohort(n_subjects=6, minutes=20.0, rate_hz=25.0, seed=7, kind="morphology",
                activities=ACTIVITIES, sessions=1):
    """Synthesize ``n_subjects`` subjects with ``minutes`` of data each,
    spread over ``sessions`` independent recordings of every activity."""
    rng = np.random.default_rng(seed)
    profiles = {}
    records = []
    for s in range(n_subjects):
        sid = f"S{s + 1:02d}"
        prof = random_profile(rng, seed * 100 + s + 1, kind)
        profiles[sid] = prof
        for sess in range(sessions):
            records.extend(subject_records(prof, sid, minutes / sessions, rate_hz, activities, sess))
    return Cohort(profiles, records)


# --------------------------------------------------------------------------
# pipeline runs
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    params: object
    history: list
    test: object  # EvalResult
    report: object  # MetricsReport
    train_seconds: float
    label_names: tuple


def model_config_for(dataset, **overrides):
    x0 = dataset.windows[0].values
    kw = dict(input_channels=x0.shape[1], seq_len=x0.shape[0], num_classes=dataset.class_count)
    kw.update(overrides)
    return ModelConfig(**kw)


def fit_and_score(train_set, val_set, test_set, model_kwargs=None, train_cfg=TrainConfig()):
    cfg = model_config_for(train_set, **(model_kwargs or {}))
    t0 = time.perf_counter()
    params, history = train(cfg, train_cfg, train_set, val_set)
    elapsed = time.perf_counter() - t0
    test = evaluate(params, test_set)
    report = metrics_report(test.probs, test.labels, label_names=train_set.label_names)
    return RunResult(params, history, test, report, elapsed, train_set.label_names)


def run_pipeline(records, model_kwargs=None, train_cfg=TrainConfig(), split=SplitSpec(),
                 window_s=4.0, overlap=0.5, label_names=None):
    """Filter -> window -> z-score -> stratified split -> train -> test."""
    ds = build_dataset(records, window_s, overlap, label_names=label_names)
    tr, va, te = stratified_split(ds, split)
    return fit_and_score(tr, va, te, model_kwargs, train_cfg)


@dataclass
class SweepRow:
    sampling_rate_hz: float
    test_accuracy: float
    macro_f1: float
    eer: float
    train_minutes: float
    estimated_power_mw: float | None
    power_estimated: bool | None
    seq_len: int


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows]}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path):
        cols = list(SweepRow.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([getattr(r, c) for c in cols])


def sweep_rates(records, rates, model_kwargs=None, train_cfg=TrainConfig(), split=SplitSpec(),
                window_s=4.0, overlap=0.5):
    """Resample the source records to each rate and run the full pipeline
    with identical seeds; only the window length changes with the rate."""
    source = min(r.rate_hz for r in records)
    for rate in rates:
        if rate > source * (1 + 1e-12):
            raise UpsampleUnsupported(f"sweep rate {rate} Hz exceeds source rate {source} Hz")
    label_names = sorted({r.subject_id for r in records})
    report = SweepReport()
    for rate in sorted(rates, reverse=True):
        recs = [resample(r, rate) for r in records]
        res = run_pipeline(recs, model_kwargs, train_cfg, split, window_s, overlap, label_names)
        try:
            mw, est = power_estimate(rate, with_flag=True)
        except OutOfMeasuredRange:
            mw, est = None, None
        report.rows.append(SweepRow(
            float(rate), res.test.accuracy, res.report.macro_f1, res.report.eer,
            res.train_seconds / 60.0, mw, est, window_length(window_s, rate),
        ))
    return report


@dataclass(frozen=True)
class Condition:
    """Training-side restriction: ``activities`` limits train/val windows,
    ``channels`` slices every split (the model input changes)."""

    name: str
    activities: tuple | None = None
    channels: tuple | None = None


def _apply(ds, activities, channels):
    return filter_by(ds, activities=activities, channels=channels)


def compare_conditions(dataset, cond_a, cond_b, model_kwargs=None, train_cfg=TrainConfig(),
                       split=SplitSpec(), eval_activities=None):
    """Train one model per condition on the same split and seeds and report
    test accuracy / macro-F1 / EER for each plus the B - A delta.

    ``eval_activities`` restricts the (shared) test set, e.g. to walking
    windows when comparing rest-only against mixed-activity training.
    """
    tr, va, te = stratified_split(dataset, split)
    results = []
    for cond in (cond_a, cond_b):
        try:
            c_tr = _apply(tr, cond.activities, cond.channels)
            c_va = _apply(va, cond.activities, cond.channels)
            c_te = _apply(te, eval_activities, cond.channels)
        except EmptyResult as exc:
            raise EmptyResult(f"condition {cond.name!r}: {exc}") from None
        res = fit_and_score(c_tr, c_va, c_te, model_kwargs, train_cfg)
        results.append({
            "accuracy": res.test.accuracy,
            "macro_f1": res.report.macro_f1,
            "eer": res.report.eer,
        })
    a, b = results
    delta = {k: b[k] - a[k] for k in a}
    return {"a": {"name": cond_a.name, **a}, "b": {"name": cond_b.name, **b}, "delta": delta}
