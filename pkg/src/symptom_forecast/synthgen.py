"""Synthetic patient cohorts shaped like the clinical survey data.

Each patient gets a profile, an irregular visit timeline and a symptom
trajectory. The next level of a symptom is drawn from a mixture:

* with probability ``persistence ** (1 + gap / memory_days)`` it stays near
  the previous level (a discrete Laplace kernel of width ``noise_scale``,
  truncated to 0..10), so memory fades over long gaps between visits;
* otherwise it is drawn from a base distribution with mass ``exp(-decay * l)``
  whose decay is lowered by cancer type, age and recency of diagnosis.

For tiredness, a fraction ``coupling`` of the whole mixture is replaced by a
kernel around the previous pain level.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .domain import (
    AGE_RANGE,
    CANCER_TYPES,
    N_LEVELS,
    PatientProfile,
    SurveyRecord,
    build_transitions,
    date_split,
)

LEVELS = np.arange(N_LEVELS)


@dataclass
class CohortConfig:
    n_patients: int = 2000
    mean_visits: float = 5.95
    start_date: dt.date = dt.date(2013, 1, 1)
    end_date: dt.date = dt.date(2019, 12, 31)
    split_date: dt.date = dt.date(2017, 10, 4)
    # density of first-visit dates falls linearly by this fraction over the window
    enrollment_decline: float = 0.45
    max_gap_days: int = 365
    persistence: float = 0.7
    # None keeps the mixture weight fixed at ``persistence`` whatever the gap
    memory_days: float | None = 60.0
    noise_scale: float = 0.8
    pain_decay: float = 0.9205
    tiredness_decay: float = 0.0925
    coupling: float = 0.3
    cancer_effects: dict = field(
        default_factory=lambda: {
            "breast": {"pain": 0.0, "tiredness": 0.0},
            "head_and_neck": {"pain": 0.9, "tiredness": 0.8},
            "lymphoma": {"pain": -0.5, "tiredness": 1.2},
            "colorectal": {"pain": 0.3, "tiredness": -0.6},
        }
    )
    cancer_mix: dict = field(
        default_factory=lambda: {"breast": 0.35, "head_and_neck": 0.15, "lymphoma": 0.2, "colorectal": 0.3}
    )
    # change in log-decay per decade of age above 60
    age_effect: float = -0.15
    # extra symptom burden right after diagnosis, fading with this time scale
    treatment_effect: float = 1.0
    treatment_days: float = 180.0
    mean_days_to_first_visit: float = 365.0
    rng_seed: int = 0

    def validate(self):
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if self.mean_visits < 1:
            raise ValueError("mean_visits must be >= 1")
        if not self.start_date < self.split_date <= self.end_date:
            raise ValueError("need start_date < split_date <= end_date")
        if not 0.0 <= self.persistence <= 1.0 or not 0.0 <= self.coupling <= 1.0:
            raise ValueError("persistence and coupling must lie in [0, 1]")
        if self.noise_scale < 0 or self.pain_decay <= 0 or self.tiredness_decay <= 0:
            raise ValueError("noise_scale must be >= 0 and decays > 0")
        if not 0.0 <= self.enrollment_decline < 1.0:
            raise ValueError("enrollment_decline must lie in [0, 1)")
        if self.memory_days is not None and self.memory_days <= 0:
            raise ValueError("memory_days must be positive or None")
        if self.max_gap_days < 1:
            raise ValueError("max_gap_days must be >= 1")
        mix = np.array([self.cancer_mix[c] for c in CANCER_TYPES], dtype=float)
        if np.any(mix < 0) or not np.isclose(mix.sum(), 1.0):
            raise ValueError("cancer_mix must be a probability distribution over cancer types")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("start_date", "end_date", "split_date"):
            out[k] = out[k].isoformat()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "CohortConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown cohort config keys: {sorted(unknown)}")
        doc = dict(doc)
        for k in ("start_date", "end_date", "split_date"):
            if k in doc and isinstance(doc[k], str):
                doc[k] = dt.date.fromisoformat(doc[k])
        return cls(**doc).validate()

    @classmethod
    def from_json(cls, path) -> "CohortConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def persistence_kernel(center: float, scale: float) -> np.ndarray:
    """Discrete Laplace kernel around ``center`` on 0..10; a point mass when ``scale == 0``."""
    if scale == 0:
        out = np.zeros(N_LEVELS)
        out[int(np.clip(np.floor(center + 0.5), 0, N_LEVELS - 1))] = 1.0
        return out
    w = np.exp(-np.abs(LEVELS - center) / scale)
    return w / w.sum()


def base_distribution(decay: float) -> np.ndarray:
    w = np.exp(-decay * LEVELS)
    return w / w.sum()


def effective_decay(config: CohortConfig, symptom: str, cancer_type: str, age: int,
                    days_since_diagnosis: float) -> float:
    shift = (
        config.cancer_effects[cancer_type][symptom]
        - config.age_effect * (age - 60) / 10.0
        + config.treatment_effect * np.exp(-days_since_diagnosis / config.treatment_days)
    )
    base = config.pain_decay if symptom == "pain" else config.tiredness_decay
    return base * float(np.exp(-shift))


def persistence_weight(config: CohortConfig, gap_days: float) -> float:
    rho = config.persistence
    if config.memory_days is None or rho in (0.0, 1.0):
        return rho
    return rho ** (1.0 + gap_days / config.memory_days)


def level_distribution(config: CohortConfig, symptom: str, profile: PatientProfile,
                       days_since_diagnosis: float, prev_pain=None, prev_tiredness=None,
                       gap_days: float = 0.0) -> np.ndarray:
    """Probability of each level at a visit; ``prev_*`` is ``None`` at the first visit."""
    base = base_distribution(
        effective_decay(config, symptom, profile.cancer_type, profile.age_at_diagnosis, days_since_diagnosis)
    )
    prev = prev_pain if symptom == "pain" else prev_tiredness
    if prev is None:
        own = base
    else:
        rho = persistence_weight(config, gap_days)
        own = rho * persistence_kernel(prev, config.noise_scale) + (1 - rho) * base
    if symptom == "tiredness" and prev_pain is not None and config.coupling > 0:
        return (1 - config.coupling) * own + config.coupling * persistence_kernel(prev_pain, config.noise_scale)
    return own


def _draw(rng, probs) -> int:
    return int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), N_LEVELS - 1))


def _first_visit_offset(rng, config: CohortConfig, span_days: int, window_days: int) -> int:
    room = max(window_days - span_days, 0)
    a = config.enrollment_decline
    # inverse CDF of a density falling linearly from 1 to 1 - a over [0, 1]
    v = rng.random()
    if a == 0:
        x = v
    else:
        x = (1 - np.sqrt(1 - a * (2 - a) * v)) / a
    return int(x * room)


def _patient(index: int, config: CohortConfig):
    rng = np.random.default_rng(np.random.SeedSequence([int(config.rng_seed), index]))
    pid = f"P{index:06d}"
    cancer = CANCER_TYPES[int(rng.choice(len(CANCER_TYPES), p=[config.cancer_mix[c] for c in CANCER_TYPES]))]
    p_female = 0.99 if cancer == "breast" else 0.5
    sex = "female" if rng.random() < p_female else "male"
    age = int(np.clip(np.rint(rng.normal(60.0, 13.0)), *AGE_RANGE))

    n_visits = 1 + int(rng.poisson(config.mean_visits - 1))
    gaps = np.floor(np.exp(rng.uniform(0.0, np.log(config.max_gap_days + 1), size=n_visits - 1))).astype(int)
    gaps = np.clip(gaps, 1, config.max_gap_days)
    window = (config.end_date - config.start_date).days
    first = config.start_date + dt.timedelta(days=_first_visit_offset(rng, config, int(gaps.sum()), window))
    to_first = 5 + int(rng.exponential(config.mean_days_to_first_visit))
    profile = PatientProfile(
        patient_id=pid,
        sex=sex,
        age_at_diagnosis=age,
        cancer_type=cancer,
        diagnosis_date=first - dt.timedelta(days=to_first),
    )

    dates = [first]
    for g in gaps:
        dates.append(dates[-1] + dt.timedelta(days=int(g)))
    surveys = []
    pain = tired = None
    for i, date in enumerate(dates):
        since_dx = (date - profile.diagnosis_date).days
        gap = (date - dates[i - 1]).days if i else 0
        new_pain = _draw(rng, level_distribution(config, "pain", profile, since_dx, pain, tired, gap))
        # at the first visit tiredness couples to the same-day pain
        coupled = new_pain if pain is None else pain
        new_tired = _draw(rng, level_distribution(config, "tiredness", profile, since_dx, coupled, tired, gap))
        pain, tired = new_pain, new_tired
        surveys.append(SurveyRecord(pid, date, pain, tired))
    return profile, surveys


def generate(config: CohortConfig | None = None):
    """Generate ``(profiles, surveys)``; deterministic for a given ``rng_seed``."""
    config = (config or CohortConfig()).validate()
    profiles, surveys = [], []
    for i in range(config.n_patients):
        profile, visits = _patient(i, config)
        profiles.append(profile)
        surveys.extend(visits)
    return profiles, surveys


def audit(profiles, surveys, config: CohortConfig | None = None) -> dict:
    """Distribution summary of a cohort: level frequencies, visit counts, gaps, split ratio."""
    config = config or CohortConfig()
    n_patients = len(profiles)
    pain = np.bincount([int(r.pain) for r in surveys], minlength=N_LEVELS)
    tired = np.bincount([int(r.tiredness) for r in surveys], minlength=N_LEVELS)
    transitions = build_transitions(profiles, surveys)
    gaps = np.array([t.features.days_since_prev_survey for t in transitions], dtype=float)
    split = date_split(transitions, config.split_date)
    n_t = len(transitions)
    total = max(len(surveys), 1)
    return {
        "n_patients": n_patients,
        "n_surveys": len(surveys),
        "n_transitions": n_t,
        "mean_visits_per_patient": len(surveys) / n_patients if n_patients else 0.0,
        "pain_level_frequency": (pain / total).tolist(),
        "tiredness_level_frequency": (tired / total).tolist(),
        "gap_quantiles": {
            str(q): float(np.quantile(gaps, q)) if gaps.size else None for q in (0.0, 0.25, 0.5, 0.75, 1.0)
        },
        "split_date": config.split_date.isoformat(),
        "n_train": len(split.train),
        "n_test": len(split.test),
        "train_fraction": len(split.train) / n_t if n_t else 0.0,
        "train_patients": len({t.patient_id for t in split.train}),
    }
