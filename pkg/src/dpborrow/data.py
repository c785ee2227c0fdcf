"""Study datasets: parsing, validation, and role bookkeeping.

Two outcome kinds are supported. Aggregated binomial summaries carry a
participant count and a response count per study; individual participant
data (IPD) carries one row per participant with an intercept-prepended
covariate vector, a treatment indicator, and a continuous outcome. A dataset
holds historical controls, exactly one current control, and at most one
current treatment arm, all sharing one outcome kind.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SchemaError",
    "ValidationError",
    "StudyRole",
    "BinomialSummary",
    "IpdPayload",
    "Study",
    "Dataset",
    "IpdColumns",
    "parse_summary_dataset",
    "parse_ipd_dataset",
    "control_subset",
    "serialize_summary_dataset",
    "serialize_ipd_dataset",
]


class SchemaError(ValueError):
    """Input document malformed: missing fields, wrong types, bad JSON/CSV."""


class ValidationError(ValueError):
    """Input well-formed but violates a dataset invariant."""


class StudyRole(Enum):
    HISTORICAL = "historical"
    CURRENT_CONTROL = "current_control"
    CURRENT_TREATMENT = "current_treatment"


@dataclass(frozen=True)
class BinomialSummary:
    n: int
    responses: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValidationError(f"participant count must be positive, got {self.n}")
        if not 0 <= self.responses <= self.n:
            raise ValidationError(
                f"responses must lie in [0, n], got {self.responses}/{self.n}"
            )

    @property
    def rate(self) -> float:
        return self.responses / self.n


@dataclass(frozen=True)
class IpdPayload:
    """Participant rows of one study arm.

    ``covariates`` is (n, p) with a leading column of ones; ``treatment`` is
    0/1 per row and must be all-zero for control-role studies; ``outcome`` is
    the continuous response.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        t = np.asarray(self.treatment, dtype=float)
        y = np.asarray(self.outcome, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValidationError("covariates must be a nonempty (n, p) matrix")
        if not np.all(x[:, 0] == 1.0):
            raise ValidationError("first covariate column must be the intercept (all ones)")
        if t.shape != (x.shape[0],) or y.shape != (x.shape[0],):
            raise ValidationError("treatment and outcome must align with covariate rows")
        if not np.all((t == 0.0) | (t == 1.0)):
            raise ValidationError("treatment indicator must be 0/1")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class Study:
    id: str
    role: StudyRole
    payload: object  # BinomialSummary or IpdPayload


@dataclass(frozen=True)
class Dataset:
    """Validated collection of studies sharing one outcome kind."""

    outcome_kind: str  # "binomial" | "ipd"
    studies: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.outcome_kind not in ("binomial", "ipd"):
            raise ValidationError(f"unknown outcome kind {self.outcome_kind!r}")
        object.__setattr__(self, "studies", tuple(self.studies))
        ids = [s.id for s in self.studies]
        if len(set(ids)) != len(ids):
            raise ValidationError("study ids must be unique")
        payload_type = BinomialSummary if self.outcome_kind == "binomial" else IpdPayload
        for s in self.studies:
            if not isinstance(s.payload, payload_type):
                raise ValidationError(
                    f"study {s.id!r} payload does not match outcome kind {self.outcome_kind!r}"
                )
        n_cc = sum(s.role is StudyRole.CURRENT_CONTROL for s in self.studies)
        n_ct = sum(s.role is StudyRole.CURRENT_TREATMENT for s in self.studies)
        if n_cc != 1:
            raise ValidationError(f"dataset needs exactly one current_control, found {n_cc}")
        if n_ct > 1:
            raise ValidationError(f"dataset allows at most one current_treatment, found {n_ct}")
        if self.outcome_kind == "ipd":
            dims = {s.payload.p for s in self.studies}
            if len(dims) != 1:
                raise ValidationError("covariate dimension must be constant across studies")
            for s in self.studies:
                if s.role is not StudyRole.CURRENT_TREATMENT and np.any(s.payload.treatment != 0):
                    raise ValidationError(
                        f"control-role study {s.id!r} contains treatment rows"
                    )

    @property
    def historical(self) -> tuple:
        return tuple(s for s in self.studies if s.role is StudyRole.HISTORICAL)

    @property
    def current_control(self) -> Study:
        return next(s for s in self.studies if s.role is StudyRole.CURRENT_CONTROL)

    @property
    def current_treatment(self) -> Optional[Study]:
        return next(
            (s for s in self.studies if s.role is StudyRole.CURRENT_TREATMENT), None
        )

    @property
    def n_historical(self) -> int:
        return len(self.historical)


_ROLES = {r.value: r for r in StudyRole}


def parse_summary_dataset(text: str) -> Dataset:
    """Parse the binomial-summary JSON document into a validated Dataset.

    Expected shape::

        {"outcome": "binomial",
         "studies": [{"id": "H1", "role": "historical", "n": 107, "responses": 23}, ...]}
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top-level JSON value must be an object")
    if doc.get("outcome") != "binomial":
        raise SchemaError('summary dataset requires "outcome": "binomial"')
    raw_studies = doc.get("studies")
    if not isinstance(raw_studies, list) or not raw_studies:
        raise SchemaError('missing or empty "studies" array')

    studies = []
    for i, entry in enumerate(raw_studies):
        if not isinstance(entry, dict):
            raise SchemaError(f"studies[{i}] must be an object")
        for key in ("id", "role", "n", "responses"):
            if key not in entry:
                raise SchemaError(f"studies[{i}] missing field {key!r}")
        role = _ROLES.get(entry["role"])
        if role is None:
            raise SchemaError(f"studies[{i}] has unknown role {entry['role']!r}")
        try:
            n = int(entry["n"])
            responses = int(entry["responses"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"studies[{i}] counts must be integers") from exc
        studies.append(Study(str(entry["id"]), role, BinomialSummary(n, responses)))
    return Dataset("binomial", tuple(studies), meta=dict(doc.get("meta", {})))


def serialize_summary_dataset(dataset: Dataset) -> str:
    """Inverse of :func:`parse_summary_dataset` (round-trips on re-parse)."""
    if dataset.outcome_kind != "binomial":
        raise ValidationError("serialize_summary_dataset requires a binomial dataset")
    doc = {
        "outcome": "binomial",
        "studies": [
            {
                "id": s.id,
                "role": s.role.value,
                "n": s.payload.n,
                "responses": s.payload.responses,
            }
            for s in dataset.studies
        ],
    }
    if dataset.meta:
        doc["meta"] = dataset.meta
    return json.dumps(doc, indent=2, sort_keys=False)


@dataclass(frozen=True)
class IpdColumns:
    """Column mapping for IPD CSV parsing.

    ``current_study`` names the current trial; when omitted, the unique study
    containing treatment-arm rows is taken as current (ambiguity is an error).
    """

    study: str = "study"
    arm: str = "arm"
    outcome: str = "outcome"
    covariates: Sequence[str] = ()
    current_study: Optional[str] = None


def parse_ipd_dataset(text: str, columns: IpdColumns) -> Dataset:
    """Parse an IPD CSV (header row required) into a validated Dataset.

    Control rows of the current trial become the current-control study and
    its treatment rows a separate current-treatment study; both share the
    trial's id with an arm suffix. An intercept column is prepended to the
    configured covariates.
    """
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("CSV is empty")
    needed = [columns.study, columns.arm, columns.outcome, *columns.covariates]
    missing = [c for c in needed if c not in reader.fieldnames]
    if missing:
        raise SchemaError(f"CSV missing required columns: {missing}")

    by_study: dict = {}
    order: list = []
    for line_no, row in enumerate(reader, start=2):
        sid = row[columns.study]
        arm = row[columns.arm].strip().lower()
        if arm not in ("control", "treatment"):
            raise ValidationError(f"line {line_no}: arm must be control/treatment, got {arm!r}")
        try:
            outcome = float(row[columns.outcome])
            covs = [float(row[c]) for c in columns.covariates]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"line {line_no}: non-numeric cell") from exc
        if sid not in by_study:
            by_study[sid] = {"control": [], "treatment": []}
            order.append(sid)
        by_study[sid][arm].append((covs, outcome))

    with_treatment = [sid for sid in order if by_study[sid]["treatment"]]
    current = columns.current_study
    if current is None:
        if len(with_treatment) > 1:
            raise ValidationError(
                f"multiple studies contain treatment rows ({with_treatment}); "
                "set current_study to disambiguate"
            )
        current = with_treatment[0] if with_treatment else order[-1]
    if current not in by_study:
        raise ValidationError(f"current study {current!r} not present in CSV")
    stray = [sid for sid in with_treatment if sid != current]
    if stray:
        raise ValidationError(f"treatment rows found in historical studies: {stray}")

    def payload(rows, treated: bool) -> IpdPayload:
        x = np.array([[1.0, *covs] for covs, _ in rows], dtype=float)
        y = np.array([outcome for _, outcome in rows], dtype=float)
        t = np.full(len(rows), 1.0 if treated else 0.0)
        return IpdPayload(x, t, y)

    studies = []
    for sid in order:
        arms = by_study[sid]
        if sid == current:
            if not arms["control"]:
                raise ValidationError(f"current study {current!r} has no control rows")
            studies.append(Study(sid, StudyRole.CURRENT_CONTROL, payload(arms["control"], False)))
            if arms["treatment"]:
                studies.append(
                    Study(f"{sid}:treatment", StudyRole.CURRENT_TREATMENT,
                          payload(arms["treatment"], True))
                )
        else:
            if not arms["control"]:
                raise ValidationError(f"study {sid!r} has no rows")
            studies.append(Study(sid, StudyRole.HISTORICAL, payload(arms["control"], False)))
    return Dataset("ipd", tuple(studies), meta={"covariate_names": list(columns.covariates)})


def serialize_ipd_dataset(dataset: Dataset, columns: Optional[IpdColumns] = None) -> str:
    """Write an IPD dataset back to CSV text (round-trips on re-parse)."""
    if dataset.outcome_kind != "ipd":
        raise ValidationError("serialize_ipd_dataset requires an IPD dataset")
    names = dataset.meta.get("covariate_names")
    if names is None:
        p = dataset.studies[0].payload.p
        names = [f"x{i}" for i in range(1, p)]
    cols = columns or IpdColumns(covariates=names)
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow([cols.study, cols.arm, cols.outcome, *names])
    trial_id = dataset.current_control.id
    for s in dataset.studies:
        if s.role is StudyRole.CURRENT_TREATMENT:
            # both arms of the current trial are one study in the CSV
            sid, arm = trial_id, "treatment"
        else:
            sid, arm = s.id.removesuffix(":treatment"), "control"
        for i in range(s.payload.n):
            row = [sid, arm, repr(float(s.payload.outcome[i]))]
            row.extend(repr(float(v)) for v in s.payload.covariates[i, 1:])
            writer.writerow(row)
    return out.getvalue()


def control_subset(dataset: Dataset) -> Dataset:
    """Dataset restricted to historical and current-control studies.

    The mixture prior applies to controls only; the current treatment arm is
    analyzed outside it. Idempotent, order-preserving.
    """
    kept = tuple(s for s in dataset.studies if s.role is not StudyRole.CURRENT_TREATMENT)
    return Dataset(dataset.outcome_kind, kept, meta=dict(dataset.meta))
