"""Synthetic elderly-health population: profiles, state labels and sensor data.

Three sources are generated per person: a smartwatch (14 features) and a
smart insole (17 features) sampled every 5 seconds, and a daily electronic
medical record (30 indicators). Feature medians, noise levels, label
sensitivities and clip ranges come from the rule table ``rules.json``.

Each day carries one :class:`StatePattern` that moves the health label from a
start level to an end level inside a transition window; every source uses the
same label series. Days ``0..89`` are history, the remaining days are test days.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

SOURCES = ("watch", "insole", "emr")
HISTORY_DAYS = 90
STEPS_PER_DAY = 17280  # 5-second cadence
SECONDS_PER_STEP = 5.0
PATTERN_KINDS = ("jump", "linear", "exponential", "logistic")
GROUP_NAMES = ("healthy", "weak", "ill")


class SchemaError(ValueError):
    pass


def load_rules() -> dict:
    return json.loads(resources.files(__package__).joinpath("rules.json").read_text())


RULES = load_rules()
FEATURES = {s: tuple(f["name"] for f in RULES[s]) for s in SOURCES}


@dataclass(frozen=True)
class PersonProfile:
    user_id: int
    age: int
    gender: str  # "M" or "F"
    height: float
    weight: float
    bmi: float

    @property
    def male(self):
        return self.gender == "M"


@dataclass(frozen=True)
class StatePattern:
    kind: str
    start: float
    end: float
    window: tuple  # (start, end) as fractions of the day

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if not (0 <= self.start <= 2 and 0 <= self.end <= 2):
            raise ValueError("pattern levels must lie in [0, 2]")
        a, b = self.window
        if not 0 <= a < b <= 1:
            raise ValueError("transition window must satisfy 0 <= start < end <= 1")

    def levels(self, s):
        """Label at day fractions ``s`` in [0, 1)."""
        s = np.asarray(s, dtype=float)
        a, b = self.window
        u = np.clip((s - a) / (b - a), 0.0, 1.0)
        if self.kind == "jump":
            w = (s >= a).astype(float)
        elif self.kind == "linear":
            w = u
        elif self.kind == "exponential":
            w = -np.expm1(-5.0 * u) / -np.expm1(-5.0)
        else:
            lo, hi = _logistic(-0.5), _logistic(0.5)
            w = (_logistic(u - 0.5) - lo) / (hi - lo)
        return np.clip(self.start + (self.end - self.start) * w, 0.0, 2.0)


def _logistic(v):
    return 1.0 / (1.0 + np.exp(-10.0 * v))


@dataclass
class SourceData:
    """Per-person data on the model grid.

    ``Z[source]`` has shape ``(days, steps, m)``; ``labels`` has shape
    ``(days, steps)`` and is the label series of every source.
    """
    Z: Dict[str, np.ndarray]
    labels: np.ndarray
    downsample: int

    def __post_init__(self):
        # a fixed memory layout keeps BLAS reductions, and hence results, bitwise stable
        self.Z = {k: np.ascontiguousarray(v, dtype=float) for k, v in self.Z.items()}
        self.labels = np.ascontiguousarray(self.labels, dtype=float)

    @property
    def days(self):
        return self.labels.shape[0]

    @property
    def steps(self):
        return self.labels.shape[1]

    def eta(self, source):
        return self.labels


@dataclass
class Person:
    profile: PersonProfile
    group: str
    patterns: List[StatePattern]
    data: SourceData


def heart_rate_baseline(age, male, sbp, hgb):
    return 70 - 0.2 * (age - 60) + 2 * float(male) + 0.05 * (sbp - 120) + 0.01 * (hgb - 140)


def weight_from_bmi(bmi, height):
    return bmi * (height / 100) ** 2


def activity_profile(hours):
    """-1 while asleep, +1 in activity windows, 0 otherwise."""
    h = np.asarray(hours, dtype=float) % 24
    s0, s1 = RULES["sleep_window_hours"]
    out = np.zeros_like(h)
    out[(h >= s0) | (h < s1)] = -1.0
    for a, b in RULES["activity_windows_hours"]:
        out[(h >= a) & (h < b)] = 1.0
    return out


def draw_profile(rng: np.random.Generator, user_id: int) -> PersonProfile:
    r = RULES["profile"]
    groups = r["age_groups"]
    g = rng.choice(len(groups), p=[w for _, _, w in groups])
    age = int(rng.integers(groups[g][0], groups[g][1]))
    gender = "M" if rng.random() < r["male_fraction"] else "F"
    mean = r["height_mean"]["male" if gender == "M" else "female"] + r["height_age_slope"] * (age - 60)
    height = float(np.clip(rng.normal(mean, r["height_sd"]), *r["height_range"]))
    bmi = float(np.clip(rng.normal(r["bmi_mean"], r["bmi_sd"]), *r["bmi_range"]))
    return PersonProfile(user_id, age, gender, height, weight_from_bmi(bmi, height), bmi)


def draw_patterns(rng: np.random.Generator, group: int, days: int) -> List[StatePattern]:
    frac = RULES["fractional_level_probability"]
    level = float(group)
    out = []
    for _ in range(days):
        if rng.random() < frac:
            end = round(float(rng.uniform(0, 2)), 1)
        else:
            end = float(np.clip(group + rng.choice([-1, 0, 0, 1]), 0, 2))
        kind = PATTERN_KINDS[rng.integers(len(PATTERN_KINDS))]
        a, b = np.sort(rng.uniform(0, 1, 2))
        if b - a < 1e-3:
            b = min(a + 0.05, 1.0)
        out.append(StatePattern(kind, level, end, (float(a), float(b))))
        level = end
    return out


def _emr_baseline(rng, profile: PersonProfile):
    factor = RULES["emr_person_sd_factor"]
    adjust = RULES["emr_adjust"]
    cov = {"age": profile.age - 60, "bmi": profile.bmi - 22, "male": float(profile.male)}
    base = {}
    for f in RULES["emr"]:
        v = f["median"] + sum(c * cov[k] for k, c in adjust.get(f["name"], {}).items())
        base[f["name"]] = v + factor * f["sd"] * rng.normal()
    return base


def _stream_features(rng, rules, base, labels, activity):
    days, steps = labels.shape
    out = np.empty((days, steps, len(rules)))
    for k, f in enumerate(rules):
        noise = rng.normal(0.0, f["sd"], size=(days, steps))
        v = base[f["name"]] + f["shift"] * labels + f["activity"] * activity[None, :] + noise
        out[:, :, k] = np.clip(v, *f["range"])
    return out


def generate_person(seed: int, user_id: int, test_days: int = 10, downsample: int = 12) -> Person:
    if STEPS_PER_DAY % downsample:
        raise ValueError("downsample must divide 17280")
    rng = np.random.default_rng([seed, user_id])
    profile = draw_profile(rng, user_id)
    group = int(rng.integers(3))
    days = HISTORY_DAYS + test_days
    patterns = draw_patterns(rng, group, days)
    steps = STEPS_PER_DAY // downsample
    frac = np.arange(steps) / steps
    labels = np.stack([p.levels(frac) for p in patterns])
    activity = activity_profile(24 * frac)

    emr0 = _emr_baseline(rng, profile)
    base = {f["name"]: f["median"] for s in ("watch", "insole") for f in RULES[s]}
    hr = RULES["heart_rate"]
    base["heart_rate"] = heart_rate_baseline(profile.age, profile.male, emr0["sbp"], emr0["hgb"])
    base["sbp"], base["dbp"] = emr0["sbp"], emr0["dbp"]
    for name, scale in RULES["weight_scaled"].items():
        base[name] = scale * profile.weight
    watch_rules = [dict(f, activity=hr["modulation"]) if f["name"] == "heart_rate" else f
                   for f in RULES["watch"]]
    Z = {
        "watch": _stream_features(rng, watch_rules, base, labels, activity),
        "insole": _stream_features(rng, RULES["insole"], base, labels, activity),
    }
    daily = labels.mean(axis=1)
    emr = np.empty((days, len(RULES["emr"])))
    for k, f in enumerate(RULES["emr"]):
        v = emr0[f["name"]] + f["shift"] * daily + rng.normal(0.0, f["sd"], size=days)
        emr[:, k] = np.clip(v, *f["range"])
    Z["emr"] = np.repeat(emr[:, None, :], steps, axis=1)
    return Person(profile, GROUP_NAMES[group], patterns, SourceData(Z, labels, downsample))


def generate_population(num_persons: int, test_days: int = 10, seed: int = 0,
                        downsample: int = 12) -> List[Person]:
    if num_persons < 1:
        raise ValueError("num_persons must be >= 1")
    if not 1 <= test_days:
        raise ValueError("test_days must be >= 1")
    return [generate_person(seed, i + 1, test_days, downsample) for i in range(num_persons)]


# -- CSV exchange ---------------------------------------------------------------

PROFILE_COLUMNS = ("user_id", "age", "gender", "height", "weight", "bmi")
GROUP_COLUMNS = ("user_id", "group", "day", "pattern", "start_level", "end_level",
                 "window_start", "window_end")
SERIES_PREFIX = ("user_id", "day", "step")
FILES = {"profiles": "user_profiles.csv", "groups": "user_groups.csv", "emr": "medical_records.csv",
         "watch": "health_data.csv", "insole": "insole_data.csv"}


def _columns(source):
    if source == "emr":
        return ("user_id", "day") + FEATURES["emr"] + ("status",)
    return SERIES_PREFIX + FEATURES[source] + ("status",)


def _write_rows(fh, prefix_rows, values):
    # repr gives the shortest string that round-trips
    for pre, row in zip(prefix_rows, values.tolist()):
        fh.write(",".join(pre + [repr(v) for v in row]) + "\n")


def write_population_csv(people: Sequence[Person], outdir) -> Dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {k: outdir / v for k, v in FILES.items()}
    with open(paths["profiles"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for p in people:
            pr = p.profile
            w.writerow([pr.user_id, pr.age, pr.gender, repr(pr.height), repr(pr.weight), repr(pr.bmi)])
    with open(paths["groups"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GROUP_COLUMNS)
        for p in people:
            for d, sp in enumerate(p.patterns):
                w.writerow([p.profile.user_id, p.group, d, sp.kind, repr(sp.start), repr(sp.end),
                            repr(sp.window[0]), repr(sp.window[1])])
    with open(paths["emr"], "w", newline="") as fh:
        fh.write(",".join(_columns("emr")) + "\n")
        for p in people:
            days = p.data.days
            vals = np.column_stack([p.data.Z["emr"][:, 0, :], p.data.labels.mean(axis=1)])
            _write_rows(fh, [[str(p.profile.user_id), str(d)] for d in range(days)], vals)
    for source in ("watch", "insole"):
        with open(paths[source], "w", newline="") as fh:
            fh.write(",".join(_columns(source)) + "\n")
            for p in people:
                days, steps = p.data.labels.shape
                vals = np.column_stack([p.data.Z[source].reshape(days * steps, -1),
                                        p.data.labels.reshape(-1)])
                uid = str(p.profile.user_id)
                pre = [[uid, str(d), str(s)] for d in range(days) for s in range(steps)]
                _write_rows(fh, pre, vals)
    return paths


def _read(path, columns):
    df = pd.read_csv(path, float_precision="round_trip")
    got = tuple(df.columns)
    if got != tuple(columns):
        missing = [c for c in columns if c not in got]
        extra = [c for c in got if c not in columns]
        raise SchemaError(f"{Path(path).name}: columns do not match schema "
                          f"(missing {missing}, unexpected {extra})")
    return df


def read_population_csv(indir, downsample: int = 12) -> List[Person]:
    """Load people written by :func:`write_population_csv` (or data with the same schemas).

    Watch and insole rows must cover ``STEPS_PER_DAY // downsample`` steps per
    day. The EMR row of a day is repeated over every step of that day.
    """
    indir = Path(indir)
    prof = _read(indir / FILES["profiles"], PROFILE_COLUMNS)
    groups = _read(indir / FILES["groups"], GROUP_COLUMNS)
    emr = _read(indir / FILES["emr"], _columns("emr"))
    series = {s: _read(indir / FILES[s], _columns(s)) for s in ("watch", "insole")}
    steps = STEPS_PER_DAY // downsample
    people = []
    for row in prof.itertuples(index=False):
        uid = int(row.user_id)
        if row.gender not in ("M", "F"):
            raise SchemaError(f"user {uid}: gender must be M or F")
        profile = PersonProfile(uid, int(row.age), row.gender, float(row.height),
                                float(row.weight), float(row.bmi))
        g = groups[groups.user_id == uid].sort_values("day")
        patterns = [StatePattern(r.pattern, float(r.start_level), float(r.end_level),
                                 (float(r.window_start), float(r.window_end)))
                    for r in g.itertuples(index=False)]
        Z = {}
        labels = None
        for s, df in series.items():
            d = df[df.user_id == uid].sort_values(["day", "step"])
            days = d.day.nunique()
            if len(d) != days * steps:
                raise SchemaError(f"{FILES[s]}: user {uid} does not have {steps} steps per day")
            Z[s] = d[list(FEATURES[s])].to_numpy().reshape(days, steps, -1)
            lab = d["status"].to_numpy().reshape(days, steps)
            if labels is None:
                labels = lab
            elif not np.array_equal(labels, lab):
                raise SchemaError(f"user {uid}: status columns disagree between sources")
        e = emr[emr.user_id == uid].sort_values("day")
        if len(e) != labels.shape[0]:
            raise SchemaError(f"{FILES['emr']}: user {uid} needs one row per day")
        Z["emr"] = np.repeat(e[list(FEATURES["emr"])].to_numpy()[:, None, :], steps, axis=1)
        group = g.group.iloc[0] if len(g) else GROUP_NAMES[0]
        people.append(Person(profile, group, patterns, SourceData(Z, labels, downsample)))
    return people
