"""Multi-trial participant-level data: ingestion, validation, summaries, centering."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

TRIAL_COLUMN = "trial_id"
TREATMENT_COLUMN = "treatment"
OUTCOME_COLUMN = "outcome"

# Accepted header spellings for the three required columns, canonical name first.
COLUMN_ALIASES = {
    TRIAL_COLUMN: ("trial_id", "trial"),
    TREATMENT_COLUMN: ("treatment", "treat"),
    OUTCOME_COLUMN: ("outcome", "y"),
}

KINDS = ("binary", "continuous")

_MISSING_TOKENS = {"", "na", "nan", "null", "."}


class DatasetError(ValueError):
    """Base class for dataset problems."""


class SchemaError(DatasetError):
    """Required or declared column is absent, or a covariate kind is unsupported."""


class ParseError(DatasetError):
    """A cell could not be read as a number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ValidationError(DatasetError):
    """Values violate a domain constraint."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class MissingDataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ParticipantRecord:
    trial_id: str
    treatment: int
    outcome: float
    covariates: Mapping[str, float]


@dataclass(frozen=True)
class CenteredColumn:
    """Covariate values with the per-trial mean removed.

    ``trial_means`` maps each trial id to the arithmetic mean over all of its
    participants (both arms).
    """

    name: str
    values: np.ndarray
    trial_means: Mapping[str, float]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IpdDataset:
    """Immutable column store of participant rows from several trials.

    Row order is the order of ingestion. Trials are always reported in
    lexicographic order of their ids.
    """

    trial_ids: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariates: Mapping[str, np.ndarray]
    schema: Mapping[str, str]
    n_deleted: int = 0
    trial_index: Mapping[str, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        trial_ids = np.asarray(self.trial_ids).astype(str)
        treatment = np.asarray(self.treatment)
        outcome = np.asarray(self.outcome, dtype=float)
        n = trial_ids.shape[0]
        if treatment.shape != (n,) or outcome.shape != (n,):
            raise ValidationError("trial_ids, treatment and outcome must be 1-d and equally long")
        bad = np.flatnonzero((treatment != 0) & (treatment != 1))
        if bad.size:
            raise ValidationError(
                f"row {bad[0] + 1}: treatment must be 0 or 1, got {treatment[bad[0]]!r}", row=int(bad[0]) + 1
            )
        bad = np.flatnonzero(~np.isfinite(outcome))
        if bad.size:
            raise ValidationError(f"row {bad[0] + 1}: outcome is not finite", row=int(bad[0]) + 1)

        schema = dict(self.schema)
        covs = {}
        for name in schema:
            if name not in self.covariates:
                raise SchemaError(f"covariate {name!r} declared in schema but not supplied")
            kind = schema[name]
            if kind is None:
                kind = schema[name] = infer_kind(self.covariates[name])
            if kind not in KINDS:
                raise SchemaError(
                    f"covariate {name!r}: kind {kind!r} not supported (use 'binary' or 'continuous'; "
                    "multi-level categorical covariates must be recoded)"
                )
            v = np.asarray(self.covariates[name], dtype=float)
            if v.shape != (n,):
                raise ValidationError(f"covariate {name!r} has the wrong length")
            bad = np.flatnonzero(~np.isfinite(v))
            if bad.size:
                raise ValidationError(f"row {bad[0] + 1}: covariate {name!r} is not finite", row=int(bad[0]) + 1)
            if kind == "binary":
                bad = np.flatnonzero((v != 0) & (v != 1))
                if bad.size:
                    raise ValidationError(
                        f"row {bad[0] + 1}: binary covariate {name!r} must be 0 or 1, got {v[bad[0]]!r}",
                        row=int(bad[0]) + 1,
                    )
            covs[name] = _readonly(v)

        set_ = object.__setattr__
        set_(self, "trial_ids", _readonly(trial_ids))
        set_(self, "treatment", _readonly(treatment.astype(np.int8)))
        set_(self, "outcome", _readonly(outcome))
        set_(self, "covariates", MappingProxyType(covs))
        set_(self, "schema", MappingProxyType(schema))
        index = {t: _readonly(np.flatnonzero(trial_ids == t)) for t in sorted(set(trial_ids.tolist()))}
        set_(self, "trial_index", MappingProxyType(index))

    # ------------------------------------------------------------------ access
    @property
    def n(self) -> int:
        return int(self.outcome.shape[0])

    @property
    def trials(self) -> list[str]:
        return list(self.trial_index)

    @property
    def covariate_names(self) -> list[str]:
        return list(self.schema)

    def covariate(self, name: str) -> np.ndarray:
        try:
            return self.covariates[name]
        except KeyError:
            raise SchemaError(f"unknown covariate {name!r}; available: {', '.join(self.schema) or 'none'}") from None

    def records(self) -> Iterable[ParticipantRecord]:
        names = list(self.schema)
        for j in range(self.n):
            yield ParticipantRecord(
                str(self.trial_ids[j]),
                int(self.treatment[j]),
                float(self.outcome[j]),
                {k: float(self.covariates[k][j]) for k in names},
            )

    def subset(self, rows: np.ndarray) -> "IpdDataset":
        rows = np.asarray(rows)
        return IpdDataset(
            self.trial_ids[rows],
            self.treatment[rows],
            self.outcome[rows],
            {k: v[rows] for k, v in self.covariates.items()},
            dict(self.schema),
        )

    def trial(self, trial_id: str) -> "IpdDataset":
        return self.subset(self.trial_index[trial_id])

    def with_covariate(self, name: str, values, kind: str | None = None) -> "IpdDataset":
        """Return a copy with ``name`` added or replaced."""
        covs = dict(self.covariates)
        covs[name] = np.asarray(values, dtype=float)
        schema = dict(self.schema)
        schema[name] = kind or infer_kind(covs[name])
        return IpdDataset(self.trial_ids, self.treatment, self.outcome, covs, schema)

    def with_outcome(self, values) -> "IpdDataset":
        return IpdDataset(self.trial_ids, self.treatment, values, dict(self.covariates), dict(self.schema))

    # -------------------------------------------------------------- validation
    def require_meta_analysable(self, min_trials: int = 2) -> None:
        """Raise unless there are enough trials, each with both arms."""
        if len(self.trial_index) < min_trials:
            raise ValidationError(
                f"fewer than {min_trials} trials: meta-analysis needs at least {min_trials}, "
                f"got {len(self.trial_index)}"
            )
        for t, rows in self.trial_index.items():
            arms = set(self.treatment[rows].tolist())
            if arms != {0, 1}:
                raise ValidationError(f"trial {t!r} lacks a treated or a control participant")

    # -------------------------------------------------------------- conversion
    @classmethod
    def from_frame(cls, frame, covariates: Sequence[str] | Mapping[str, str] | None = None) -> "IpdDataset":
        """Build from a pandas DataFrame (or any mapping of columns).

        Required column names are resolved through ``COLUMN_ALIASES``. When
        ``covariates`` is None every other numeric column is taken.
        """
        cols = list(frame.keys())
        resolved = {canon: _resolve_column(cols, canon) for canon in COLUMN_ALIASES}
        schema = _normalise_schema(covariates, [c for c in cols if c not in resolved.values()], frame)
        missing = [c for c in schema if c not in cols]
        if missing:
            raise SchemaError(f"missing covariate column(s): {', '.join(missing)}")
        data = {k: np.asarray(frame[k]) for k in [*resolved.values(), *schema]}
        return cls(
            data[resolved[TRIAL_COLUMN]],
            data[resolved[TREATMENT_COLUMN]],
            data[resolved[OUTCOME_COLUMN]],
            {k: data[k] for k in schema},
            schema,
        )

    def to_frame(self):
        import pandas as pd

        cols = {
            TRIAL_COLUMN: self.trial_ids,
            TREATMENT_COLUMN: self.treatment.astype(int),
            OUTCOME_COLUMN: self.outcome,
        }
        cols.update({k: v for k, v in self.covariates.items()})
        return pd.DataFrame(cols)


def infer_kind(values) -> str:
    v = np.asarray(values, dtype=float)
    return "binary" if np.all((v == 0) | (v == 1)) else "continuous"


def _resolve_column(columns: Sequence[str], canonical: str) -> str:
    for alias in COLUMN_ALIASES[canonical]:
        if alias in columns:
            return alias
    raise SchemaError(
        f"missing required column {canonical!r} (accepted headers: {', '.join(COLUMN_ALIASES[canonical])})"
    )


def _normalise_schema(covariates, candidates, frame=None) -> dict[str, str]:
    if covariates is None:
        if frame is None:
            return {}
        out = {}
        for c in candidates:
            try:
                out[c] = infer_kind(frame[c])
            except (TypeError, ValueError):
                continue
        return out
    if isinstance(covariates, Mapping):
        return {str(k): (v if v is not None else None) for k, v in covariates.items()}
    return {str(k): None for k in covariates}


def _parse_number(token: str, row: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"row {row}: column {column!r} is not numeric: {token!r}", row=row) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: column {column!r} is not finite: {token!r}", row=row)
    return value


def ingest_csv(source: str | bytes | IO, schema: Sequence[str] | Mapping[str, str] | None = None) -> IpdDataset:
    """Read a participant-level CSV into an :class:`IpdDataset`.

    Parameters
    ----------
    source : path, bytes, or binary/text stream
        UTF-8 comma-separated data with a header row.
    schema : sequence of names or mapping name -> kind, optional
        Covariates to read. A kind of None is inferred from the values. When
        omitted, every non-required column is read.

    Rows with an empty/NA value in any analysis column are dropped and
    counted (``IpdDataset.n_deleted``) with a :class:`MissingDataWarning`.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty input: header row missing") from None
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    resolved = {canon: _resolve_column(header, canon) for canon in COLUMN_ALIASES}
    if schema is None:
        schema = [h for h in header if h not in resolved.values()]
    kinds = _normalise_schema(schema, [])
    missing = [c for c in kinds if c not in header]
    if missing:
        raise SchemaError(f"missing covariate column(s): {', '.join(missing)}")

    pos = {h: i for i, h in enumerate(header)}
    t_i, x_i, y_i = (pos[resolved[c]] for c in (TRIAL_COLUMN, TREATMENT_COLUMN, OUTCOME_COLUMN))
    cov_pos = [(name, pos[name]) for name in kinds]

    trials, treat, out = [], [], []
    covs = {name: [] for name in kinds}
    deleted = 0
    for lineno, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise ParseError(f"row {lineno}: expected {len(header)} fields, got {len(cells)}", row=lineno)
        analysis = [cells[t_i], cells[x_i], cells[y_i]] + [cells[i] for _, i in cov_pos]
        if any(c.strip().lower() in _MISSING_TOKENS for c in analysis):
            deleted += 1
            continue
        x = _parse_number(cells[x_i].strip(), lineno, resolved[TREATMENT_COLUMN])
        if x not in (0.0, 1.0):
            raise ValidationError(f"row {lineno}: treatment must be 0 or 1, got {cells[x_i].strip()!r}", row=lineno)
        trials.append(cells[t_i].strip())
        treat.append(int(x))
        out.append(_parse_number(cells[y_i].strip(), lineno, resolved[OUTCOME_COLUMN]))
        for name, i in cov_pos:
            covs[name].append(_parse_number(cells[i].strip(), lineno, name))

    if deleted:
        warnings.warn(f"{deleted} row(s) with missing analysis values were deleted", MissingDataWarning, stacklevel=2)
    arrays = {k: np.asarray(v, dtype=float) for k, v in covs.items()}
    final_kinds = {k: (kind if kind is not None else infer_kind(arrays[k])) for k, kind in kinds.items()}
    ds = IpdDataset(
        np.asarray(trials, dtype=str),
        np.asarray(treat, dtype=np.int8),
        np.asarray(out, dtype=float),
        arrays,
        final_kinds,
        n_deleted=deleted,
    )
    return ds


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8-sig", newline="") as fh:
            return fh.read()
    if hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8-sig", newline="") as fh:
            return fh.read()
    data = source.read()
    return data.decode("utf-8-sig") if isinstance(data, bytes) else data


def _fmt(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def emit_csv(dataset: IpdDataset) -> str:
    """Serialise to the canonical CSV layout; floats are written round-trip exact."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = dataset.covariate_names
    writer.writerow([TRIAL_COLUMN, TREATMENT_COLUMN, OUTCOME_COLUMN, *names])
    cols = [dataset.covariates[k] for k in names]
    for j in range(dataset.n):
        writer.writerow(
            [dataset.trial_ids[j], int(dataset.treatment[j]), _fmt(dataset.outcome[j]), *(_fmt(c[j]) for c in cols)]
        )
    return buf.getvalue()


def center_within_trial(dataset: IpdDataset, covariate: str) -> CenteredColumn:
    """Subtract each trial's own mean of ``covariate`` from its participants."""
    z = dataset.covariate(covariate)
    centered = np.empty_like(z)
    means = {}
    for t, rows in dataset.trial_index.items():
        m = float(np.mean(z[rows]))
        means[t] = m
        centered[rows] = z[rows] - m
    return CenteredColumn(covariate, _readonly(centered), MappingProxyType(means))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / denom if denom > 0 else float("nan")


def summarize(dataset: IpdDataset) -> dict:
    """Per-trial counts and covariate moments plus pairwise correlations.

    ``correlation`` is computed over all participants pooled;
    ``within_trial_correlation`` uses trial-centered values.
    """
    names = dataset.covariate_names
    trials = []
    for t, rows in dataset.trial_index.items():
        x = dataset.treatment[rows]
        entry = {
            "trial_id": t,
            "n": int(rows.size),
            "n_treated": int(x.sum()),
            "n_control": int(rows.size - x.sum()),
            "outcome_mean": float(dataset.outcome[rows].mean()),
            "covariates": {},
        }
        for k in names:
            v = dataset.covariates[k][rows]
            entry["covariates"][k] = {
                "mean": float(v.mean()),
                "sd": float(v.std(ddof=1)) if v.size > 1 else float("nan"),
            }
        trials.append(entry)

    centered = {k: center_within_trial(dataset, k).values for k in names} if names else {}
    corr, within = {}, {}
    for i, a in enumerate(names):
        for b in names[i:]:
            key = f"{a}~{b}"
            corr[key] = _pearson(dataset.covariates[a], dataset.covariates[b])
            within[key] = _pearson(centered[a], centered[b])
    return {
        "n": dataset.n,
        "n_trials": len(dataset.trial_index),
        "n_deleted": dataset.n_deleted,
        "outcome_min": float(dataset.outcome.min()) if dataset.n else float("nan"),
        "outcome_max": float(dataset.outcome.max()) if dataset.n else float("nan"),
        "trials": trials,
        "correlation": corr,
        "within_trial_correlation": within,
    }


def correlation(dataset: IpdDataset, a: str, b: str) -> float:
    """Pooled Pearson correlation between two covariates."""
    return _pearson(dataset.covariate(a), dataset.covariate(b))
