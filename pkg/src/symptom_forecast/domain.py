"""Clinical data model, CSV ingestion and construction of supervised transitions.

A transition pairs two consecutive surveys of one patient: the features come
from the patient profile and the earlier visit, the label from the later one.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import hashlib
import io
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_LEVELS = 11
SEXES = ("female", "male")
CANCER_TYPES = ("breast", "head_and_neck", "lymphoma", "colorectal")
AGE_RANGE = (18, 93)

FEATURE_NAMES = (
    "sex",
    "age",
    "cancer_type",
    "days_since_diagnosis",
    "days_since_prev_survey",
    "prev_pain",
    "prev_tiredness",
)
CATEGORICAL_FEATURES = ("sex", "cancer_type")

PROFILE_HEADER = ("patient_id", "sex", "age", "cancer_type", "diagnosis_date")
SURVEY_HEADER = ("patient_id", "survey_date", "pain", "tiredness")
TRANSITION_HEADER = (
    "patient_id",
    "survey_date",
    "sex",
    "age",
    "cancer_type",
    "days_since_diagnosis",
    "days_since_prev_survey",
    "prev_pain",
    "prev_tiredness",
    "target_pain",
    "target_tiredness",
)


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class SymptomLevel(int):
    """ESAS symptom level, an integer in 0..10."""

    def __new__(cls, value):
        if isinstance(value, (bool, np.bool_)):
            raise ValueError(f"symptom level must be an integer, got {value!r}")
        if isinstance(value, (float, np.floating)) and not float(value).is_integer():
            raise ValueError(f"symptom level must be an integer, got {value!r}")
        ivalue = int(value)
        if not 0 <= ivalue < N_LEVELS:
            raise ValueError(f"symptom level must be in [0, 10], got {value!r}")
        return super().__new__(cls, ivalue)


@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    sex: str
    age_at_diagnosis: int
    cancer_type: str
    diagnosis_date: dt.date

    def __post_init__(self):
        if self.sex not in SEXES:
            raise ValueError(f"unknown sex {self.sex!r}")
        if self.cancer_type not in CANCER_TYPES:
            raise ValueError(f"unknown cancer_type {self.cancer_type!r}")


@dataclass(frozen=True)
class SurveyRecord:
    patient_id: str
    survey_date: dt.date
    pain: SymptomLevel
    tiredness: SymptomLevel

    def __post_init__(self):
        object.__setattr__(self, "pain", SymptomLevel(self.pain))
        object.__setattr__(self, "tiredness", SymptomLevel(self.tiredness))


@dataclass(frozen=True)
class FeatureVector:
    sex: str
    age: int
    cancer_type: str
    days_since_diagnosis: int
    days_since_prev_survey: int
    prev_pain: SymptomLevel
    prev_tiredness: SymptomLevel

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, name) for name in FEATURE_NAMES)


@dataclass(frozen=True)
class TransitionExample:
    features: FeatureVector
    target_pain: SymptomLevel
    target_tiredness: SymptomLevel
    survey_date: dt.date
    patient_id: str

    def target(self, symptom: str) -> int:
        return int(self.target_pain if symptom == "pain" else self.target_tiredness)


@dataclass(frozen=True)
class SplitDataset:
    train: list
    test: list
    split_date: dt.date


class ModelVariant(enum.Enum):
    """Model variants: target symptom crossed with the previous-symptom feature set."""

    LP1 = ("pain", ("prev_pain",))
    LP2 = ("pain", ("prev_pain", "prev_tiredness"))
    LT1 = ("tiredness", ("prev_tiredness",))
    LT2 = ("tiredness", ("prev_pain", "prev_tiredness"))

    def __init__(self, symptom, previous):
        self.symptom = symptom
        self.previous = previous

    @property
    def feature_names(self) -> tuple:
        clinical = FEATURE_NAMES[:5]
        return clinical + tuple(f for f in FEATURE_NAMES[5:] if f in self.previous)

    @property
    def categorical_indices(self) -> list:
        return [i for i, f in enumerate(self.feature_names) if f in CATEGORICAL_FEATURES]

    @classmethod
    def parse(cls, name: str) -> "ModelVariant":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; expected one of lp1, lp2, lt1, lt2") from None

    @classmethod
    def for_symptom(cls, symptom: str) -> tuple:
        if symptom == "pain":
            return cls.LP1, cls.LP2
        if symptom == "tiredness":
            return cls.LT1, cls.LT2
        raise ValueError(f"unknown symptom {symptom!r}")


def parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


def _read_rows(path, header: Sequence[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(header)}") from None
        if tuple(h.strip() for h in found) != tuple(header):
            raise DataError(f"{path}: bad header {found}, expected {list(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, dict(zip(header, (v.strip() for v in row)))


def _field(path, lineno, name, parse, raw):
    try:
        return parse(raw)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}:{lineno}: field {name!r}: {exc}") from None


def read_profiles(path) -> list:
    profiles = []
    seen = set()
    for lineno, row in _read_rows(path, PROFILE_HEADER):
        pid = row["patient_id"]
        if not pid:
            raise DataError(f"{path}:{lineno}: empty patient_id")
        if pid in seen:
            raise DataError(f"{path}:{lineno}: duplicate patient_id {pid!r}")
        seen.add(pid)
        if row["sex"] not in SEXES:
            raise DataError(f"{path}:{lineno}: field 'sex': unknown value {row['sex']!r}")
        if row["cancer_type"] not in CANCER_TYPES:
            raise DataError(
                f"{path}:{lineno}: field 'cancer_type': unknown value {row['cancer_type']!r}"
            )
        age = _field(path, lineno, "age", int, row["age"])
        if not AGE_RANGE[0] <= age <= AGE_RANGE[1]:
            warnings.warn(f"{path}:{lineno}: age {age} outside observed range {AGE_RANGE}")
        profiles.append(
            PatientProfile(
                patient_id=pid,
                sex=row["sex"],
                age_at_diagnosis=age,
                cancer_type=row["cancer_type"],
                diagnosis_date=_field(path, lineno, "diagnosis_date", parse_date, row["diagnosis_date"]),
            )
        )
    return profiles


def read_surveys(path, known_patients: set | None = None) -> list:
    records = []
    seen = set()
    for lineno, row in _read_rows(path, SURVEY_HEADER):
        pid = row["patient_id"]
        if known_patients is not None and pid not in known_patients:
            raise DataError(f"{path}:{lineno}: survey references unknown patient_id {pid!r}")
        date = _field(path, lineno, "survey_date", parse_date, row["survey_date"])
        if (pid, date) in seen:
            raise DataError(f"{path}:{lineno}: duplicate survey for {pid!r} on {date}")
        seen.add((pid, date))
        records.append(
            SurveyRecord(
                patient_id=pid,
                survey_date=date,
                pain=_field(path, lineno, "pain", SymptomLevel, row["pain"]),
                tiredness=_field(path, lineno, "tiredness", SymptomLevel, row["tiredness"]),
            )
        )
    return sort_surveys(records)


def sort_surveys(records: Iterable[SurveyRecord]) -> list:
    # patients keep first-appearance order, visits are sorted by date
    order = {}
    for r in records:
        order.setdefault(r.patient_id, len(order))
    return sorted(records, key=lambda r: (order[r.patient_id], r.survey_date))


def ingest_csv(profiles_path, surveys_path):
    """Read the profiles and surveys files; returns ``(profiles, surveys)``."""
    profiles = read_profiles(profiles_path)
    surveys = read_surveys(surveys_path, {p.patient_id for p in profiles})
    return profiles, surveys


def build_transitions(profiles: Sequence[PatientProfile], surveys: Sequence[SurveyRecord]) -> list:
    """Pair every survey with the same patient's previous one.

    The first visit of each patient has no previous symptoms and yields no
    example.
    """
    by_id = {p.patient_id: p for p in profiles}
    visits = defaultdict(list)
    for r in surveys:
        if r.patient_id not in by_id:
            raise DataError(f"survey references unknown patient_id {r.patient_id!r}")
        visits[r.patient_id].append(r)

    examples = []
    for pid, timeline in visits.items():
        profile = by_id[pid]
        timeline = sorted(timeline, key=lambda r: r.survey_date)
        for prev, cur in zip(timeline, timeline[1:]):
            gap = (cur.survey_date - prev.survey_date).days
            if gap < 1:
                raise DataError(f"patient {pid!r} has two surveys on {cur.survey_date}")
            since_dx = (cur.survey_date - profile.diagnosis_date).days
            if since_dx < 0:
                raise DataError(f"patient {pid!r} surveyed on {cur.survey_date} before diagnosis")
            features = FeatureVector(
                sex=profile.sex,
                age=profile.age_at_diagnosis,
                cancer_type=profile.cancer_type,
                days_since_diagnosis=since_dx,
                days_since_prev_survey=gap,
                prev_pain=prev.pain,
                prev_tiredness=prev.tiredness,
            )
            examples.append(
                TransitionExample(
                    features=features,
                    target_pain=cur.pain,
                    target_tiredness=cur.tiredness,
                    survey_date=cur.survey_date,
                    patient_id=pid,
                )
            )
    return examples


def date_split(examples: Sequence[TransitionExample], split_date) -> SplitDataset:
    """Train gets targets strictly before ``split_date``; test gets the rest."""
    if isinstance(split_date, str):
        split_date = parse_date(split_date)
    train = [e for e in examples if e.survey_date < split_date]
    test = [e for e in examples if e.survey_date >= split_date]
    return SplitDataset(train=train, test=test, split_date=split_date)


def select_features(example: TransitionExample, variant: ModelVariant):
    """Return ``(features, target)`` for one variant, features ordered as ``variant.feature_names``."""
    row = dict(zip(FEATURE_NAMES, example.features.as_tuple()))
    return tuple(row[f] for f in variant.feature_names), example.target(variant.symptom)


def encode_value(name: str, value) -> float:
    if name == "sex":
        return float(SEXES.index(value))
    if name == "cancer_type":
        return float(CANCER_TYPES.index(value))
    return float(value)


def to_matrix(examples: Sequence[TransitionExample], variant: ModelVariant):
    """Numeric design matrix and labels for ``variant``.

    Categoricals are integer-coded by their position in ``SEXES`` and
    ``CANCER_TYPES``.
    """
    names = variant.feature_names
    X = np.empty((len(examples), len(names)), dtype=np.float64)
    y = np.empty(len(examples), dtype=np.int64)
    for i, e in enumerate(examples):
        feats, target = select_features(e, variant)
        X[i] = [encode_value(n, v) for n, v in zip(names, feats)]
        y[i] = target
    return X, y


def patient_ids(examples: Sequence[TransitionExample]) -> np.ndarray:
    return np.array([e.patient_id for e in examples], dtype=object)


# --- transitions CSV -------------------------------------------------------

def _transition_row(e: TransitionExample) -> list:
    f = e.features
    return [
        e.patient_id,
        e.survey_date.isoformat(),
        f.sex,
        f.age,
        f.cancer_type,
        f.days_since_diagnosis,
        f.days_since_prev_survey,
        int(f.prev_pain),
        int(f.prev_tiredness),
        int(e.target_pain),
        int(e.target_tiredness),
    ]


def write_transitions(examples: Sequence[TransitionExample], path, synthetic=None) -> None:
    header = list(TRANSITION_HEADER)
    if synthetic is not None:
        header.append("synthetic")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, e in enumerate(examples):
            row = _transition_row(e)
            if synthetic is not None:
                row.append(int(bool(synthetic[i])))
            writer.writerow(row)


def read_transitions(path) -> list:
    examples = []
    for lineno, row in _read_rows(path, TRANSITION_HEADER):
        def get(name, parse):
            return _field(path, lineno, name, parse, row[name])

        if row["sex"] not in SEXES or row["cancer_type"] not in CANCER_TYPES:
            raise DataError(f"{path}:{lineno}: unknown categorical value")
        features = FeatureVector(
            sex=row["sex"],
            age=get("age", int),
            cancer_type=row["cancer_type"],
            days_since_diagnosis=get("days_since_diagnosis", int),
            days_since_prev_survey=get("days_since_prev_survey", int),
            prev_pain=get("prev_pain", SymptomLevel),
            prev_tiredness=get("prev_tiredness", SymptomLevel),
        )
        if features.days_since_prev_survey < 1:
            raise DataError(f"{path}:{lineno}: days_since_prev_survey must be >= 1")
        examples.append(
            TransitionExample(
                features=features,
                target_pain=get("target_pain", SymptomLevel),
                target_tiredness=get("target_tiredness", SymptomLevel),
                survey_date=get("survey_date", parse_date),
                patient_id=row["patient_id"],
            )
        )
    return examples


def dataset_hash(examples: Sequence[TransitionExample]) -> str:
    """SHA-256 over the serialized transitions, used to detect leakage or mutation."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for e in examples:
        writer.writerow(_transition_row(e))
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def write_profiles(profiles: Sequence[PatientProfile], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROFILE_HEADER)
        for p in profiles:
            writer.writerow(
                [p.patient_id, p.sex, p.age_at_diagnosis, p.cancer_type, p.diagnosis_date.isoformat()]
            )


def write_surveys(surveys: Sequence[SurveyRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SURVEY_HEADER)
        for r in surveys:
            writer.writerow([r.patient_id, r.survey_date.isoformat(), int(r.pain), int(r.tiredness)])


def ensure_path(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
