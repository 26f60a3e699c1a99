"""Treatment-covariate interaction models for IPD meta-analysis.

Four ways of involving additional covariates ``w`` when estimating the
interaction between treatment ``x`` and an effect modifier ``z``:

1. single interaction, unadjusted
2. single interaction, adjusted for the main effect(s) of ``w``
3. multiple interactions (``x*z`` and ``x*w``)
4. three-way interaction (``x*z*w`` on top of approach 3)

Each can be fitted in one stage (all participants, trial-stratified
intercepts and main effects, common treatment and interaction terms) or in
two stages (one regression per trial, then inverse-variance pooling).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import IpdDataset, SchemaError, ValidationError, center_within_trial
from .pooling import FIXED, PooledResult, pool
from .regression import DesignMatrix, FitResult, RegressionError, WaldSummary, fit_least_squares, wald, wald_from

TREATMENT = "treatment"


class ModelSpecError(ValueError):
    pass


class ModelError(ValueError):
    """The data cannot support the requested model."""


class Stage(str, enum.Enum):
    ONE = "one"
    TWO = "two"


class Handling(str, enum.Enum):
    WITHIN = "within"
    CONFLATED = "conflated"


@dataclass(frozen=True)
class Notice:
    """A machine-readable warning carried through to reports."""

    code: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


@dataclass(frozen=True)
class ModelSpec:
    approach: int
    effect_modifier: str
    additional_covariates: tuple[str, ...] = ()
    stage: Stage = Stage.TWO
    info_handling: Handling = Handling.WITHIN

    def __post_init__(self):
        object.__setattr__(self, "additional_covariates", tuple(self.additional_covariates))
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "info_handling", Handling(self.info_handling))
        w = self.additional_covariates
        if self.approach not in (1, 2, 3, 4):
            raise ModelSpecError(f"approach must be 1, 2, 3 or 4, got {self.approach!r}")
        if self.approach == 1 and w:
            raise ModelSpecError("approach 1 (unadjusted) takes no additional covariates")
        if self.approach > 1 and not w:
            raise ModelSpecError(f"approach {self.approach} needs at least one additional covariate")
        if self.approach == 4 and len(w) > 1:
            raise ModelSpecError("approach 4 supports exactly one additional covariate")
        if self.effect_modifier in w or len(set(w)) != len(w):
            raise ModelSpecError("effect modifier and additional covariates must be distinct")
        if self.stage is Stage.TWO and self.info_handling is Handling.CONFLATED:
            raise ModelSpecError("conflated handling exists only for one-stage models")

    @property
    def primary_role(self) -> str:
        return {1: "gamma", 2: "gamma", 3: "gamma1", 4: "gamma3"}[self.approach]

    def roles(self) -> dict[str, str]:
        """Map coefficient role names to design column labels."""
        z, w = self.effect_modifier, self.additional_covariates
        if self.approach in (1, 2):
            return {"gamma": f"{TREATMENT}:{z}"}
        out = {"gamma1": f"{TREATMENT}:{z}"}
        if len(w) == 1:
            out["gamma2"] = f"{TREATMENT}:{w[0]}"
        else:
            out.update({f"gamma2[{v}]": f"{TREATMENT}:{v}" for v in w})
        if self.approach == 4:
            out["gamma3"] = f"{TREATMENT}:{z}:{w[0]}"
        return out

    def to_dict(self) -> dict:
        return {
            "approach": self.approach,
            "stage": self.stage.value,
            "effect_modifier": self.effect_modifier,
            "additional_covariates": list(self.additional_covariates),
            "info_handling": self.info_handling.value,
        }


@dataclass(frozen=True)
class InteractionEstimate:
    role: str
    label: str
    gamma: float
    se: float
    wald: WaldSummary
    spec: ModelSpec

    def to_dict(self) -> dict:
        return {"role": self.role, "label": self.label, "gamma": self.gamma, "se": self.se, "wald": self.wald.to_dict()}


@dataclass(frozen=True)
class OneStageResult:
    spec: ModelSpec
    fit: FitResult
    estimates: dict[str, InteractionEstimate]
    dropped_columns: tuple[str, ...] = ()
    notices: tuple[Notice, ...] = ()

    @property
    def primary(self) -> InteractionEstimate:
        return self.estimates[self.spec.primary_role]


@dataclass(frozen=True)
class TrialFit:
    trial_id: str
    fit: FitResult
    estimates: dict[str, WaldSummary]


@dataclass(frozen=True)
class TwoStageResult:
    spec: ModelSpec
    trial_fits: tuple[TrialFit, ...]
    pooled: dict[str, PooledResult]
    estimates: dict[str, InteractionEstimate]
    excluded: tuple[tuple[str, str], ...] = ()
    notices: tuple[Notice, ...] = ()

    @property
    def primary(self) -> InteractionEstimate:
        return self.estimates[self.spec.primary_role]


def _check_covariates(dataset: IpdDataset, spec: ModelSpec) -> None:
    for name in (spec.effect_modifier, *spec.additional_covariates):
        if name not in dataset.schema:
            raise SchemaError(f"covariate {name!r} not in dataset (have: {', '.join(dataset.schema) or 'none'})")


def _constant(v: np.ndarray) -> bool:
    return v.size == 0 or bool(np.all(v == v[0]))


# ---------------------------------------------------------------------------
# one stage


def build_one_stage_design(dataset: IpdDataset, spec: ModelSpec) -> tuple[DesignMatrix, tuple[str, ...]]:
    """Trial-stratified design; returns the matrix and the labels of dropped columns.

    Column order: trial intercepts, per-trial ``z`` main effects, per-trial
    main effects for each ``w``, the treatment column, then the interaction
    columns of the approach. With within handling every covariate inside an
    interaction is centered on its trial mean.
    """
    if spec.stage is not Stage.ONE:
        raise ModelSpecError("build_one_stage_design needs a one-stage spec")
    _check_covariates(dataset, spec)
    n = dataset.n
    trials = dataset.trials
    x = dataset.treatment.astype(float)
    z_name, w_names = spec.effect_modifier, spec.additional_covariates

    labels: list[str] = []
    cols: list[np.ndarray] = []
    dropped: list[str] = []
    masks = {t: np.zeros(n, dtype=bool) for t in trials}
    for t, rows in dataset.trial_index.items():
        masks[t][rows] = True

    for t in trials:
        labels.append(f"alpha[{t}]")
        cols.append(masks[t].astype(float))
    for name in (z_name, *w_names):
        v = dataset.covariate(name)
        for t in trials:
            label = f"{name}[{t}]"
            if _constant(v[masks[t]]):
                dropped.append(label)
                continue
            labels.append(label)
            cols.append(np.where(masks[t], v, 0.0))
    labels.append(TREATMENT)
    cols.append(x)

    def term(name):
        if spec.info_handling is Handling.WITHIN:
            return center_within_trial(dataset, name).values
        return dataset.covariate(name)

    zt = term(z_name)
    inter = [(f"{TREATMENT}:{z_name}", x * zt)]
    if spec.approach >= 3:
        for name in w_names:
            inter.append((f"{TREATMENT}:{name}", x * term(name)))
    if spec.approach == 4:
        inter.append((f"{TREATMENT}:{z_name}:{w_names[0]}", x * zt * term(w_names[0])))
    for label, col in inter:
        if not np.any(col != 0):
            raise ModelError(
                f"interaction column {label!r} is all zero: the covariate is constant within every trial"
            )
        labels.append(label)
        cols.append(col)
    return DesignMatrix(tuple(labels), np.column_stack(cols)), tuple(dropped)


def fit_one_stage(dataset: IpdDataset, spec: ModelSpec) -> OneStageResult:
    """Fit the stratified one-stage model; interaction tests use the normal reference."""
    dataset.require_meta_analysable()
    X, dropped = build_one_stage_design(dataset, spec)
    fit = fit_least_squares(X, dataset.outcome)
    estimates = {}
    for role, label in spec.roles().items():
        w = wald(fit, label, "normal")
        estimates[role] = InteractionEstimate(role, label, w.estimate, w.se, w, spec)
    notices = tuple(Notice("dropped_column", f"main-effect column {c!r} is constant within its trial") for c in dropped)
    return OneStageResult(spec, fit, estimates, dropped, notices)


# ---------------------------------------------------------------------------
# two stage


def build_trial_design(dataset: IpdDataset, spec: ModelSpec) -> tuple[DesignMatrix, tuple[str, ...]]:
    """Single-trial design with uncentered covariates.

    Columns: intercept, ``z``, each ``w``, treatment, ``x*z``, and for
    approach 3/4 ``x*w``, for approach 4 ``x*z*w``. Main-effect columns of a
    ``w`` that is constant in this trial are dropped.
    """
    x = dataset.treatment.astype(float)
    z_name, w_names = spec.effect_modifier, spec.additional_covariates
    z = dataset.covariate(z_name)
    if _constant(z):
        raise ModelError(f"{z_name!r} does not vary within the trial")
    labels, cols, dropped = ["alpha", z_name], [np.ones(dataset.n), z], []
    for name in w_names:
        v = dataset.covariate(name)
        if _constant(v):
            dropped.append(name)
            continue
        labels.append(name)
        cols.append(v)
    labels.append(TREATMENT)
    cols.append(x)
    labels.append(f"{TREATMENT}:{z_name}")
    cols.append(x * z)
    if spec.approach >= 3:
        for name in w_names:
            labels.append(f"{TREATMENT}:{name}")
            cols.append(x * dataset.covariate(name))
    if spec.approach == 4:
        labels.append(f"{TREATMENT}:{z_name}:{w_names[0]}")
        cols.append(x * z * dataset.covariate(w_names[0]))
    return DesignMatrix(tuple(labels), np.column_stack(cols)), tuple(dropped)


def fit_trial(dataset: IpdDataset, spec: ModelSpec, trial_id: str) -> TrialFit:
    """Stage-1 fit for one trial; per-trial tests use t on the residual df."""
    sub = dataset.trial(trial_id)
    X, _ = build_trial_design(sub, spec)
    fit = fit_least_squares(X, sub.outcome)
    if fit.dof <= 0 or fit.sigma2 <= 0:
        raise ModelError("no residual degrees of freedom to estimate the error variance")
    return TrialFit(trial_id, fit, {role: wald(fit, label, "t") for role, label in spec.roles().items()})


def fit_two_stage(dataset: IpdDataset, spec: ModelSpec, pooling: str = FIXED) -> TwoStageResult:
    """Fit each trial separately, then pool every interaction role across trials.

    Trials whose stage-1 model cannot be estimated are excluded and listed.
    """
    if spec.stage is not Stage.TWO:
        raise ModelSpecError("fit_two_stage needs a two-stage spec")
    _check_covariates(dataset, spec)
    fits, excluded, notices = [], [], []
    for t in dataset.trials:
        sub = dataset.trial(t)
        if set(sub.treatment.tolist()) != {0, 1}:
            reason = "trial lacks a treated or a control participant"
        else:
            try:
                fits.append(fit_trial(dataset, spec, t))
                continue
            except (ModelError, RegressionError) as exc:
                reason = str(exc)
        excluded.append((t, reason))
        notices.append(Notice("excluded_trial", f"trial {t!r} excluded: {reason}"))
    if len(fits) < 2:
        raise ValidationError(f"fewer than 2 poolable trials (got {len(fits)})")

    labels = [f.trial_id for f in fits]
    pooled, estimates = {}, {}
    for role, label in spec.roles().items():
        est = [f.estimates[role].estimate for f in fits]
        ses = [f.estimates[role].se for f in fits]
        res = pool(est, ses, labels, pooling)
        pooled[role] = res
        w = wald_from(res.estimate, res.se, "normal")
        estimates[role] = InteractionEstimate(role, label, res.estimate, res.se, w, spec)
    return TwoStageResult(spec, tuple(fits), pooled, estimates, tuple(excluded), tuple(notices))


def fit_model(dataset: IpdDataset, spec: ModelSpec, pooling: str = FIXED) -> OneStageResult | TwoStageResult:
    if spec.stage is Stage.ONE:
        return fit_one_stage(dataset, spec)
    return fit_two_stage(dataset, spec, pooling)


# ---------------------------------------------------------------------------
# treatment effect and the traditional subgroup comparison


def per_trial_mean_differences(dataset: IpdDataset, rows_by_trial=None, min_per_arm: int = 1):
    """Treated-minus-control mean difference for each trial with its OLS standard error.

    Trials with fewer than ``min_per_arm`` participants in either arm, or no
    residual variance, are skipped and returned separately.
    """
    rows_by_trial = rows_by_trial if rows_by_trial is not None else dataset.trial_index
    out, skipped = [], []
    for t, rows in rows_by_trial.items():
        x = dataset.treatment[rows].astype(float)
        n1 = int(x.sum())
        if n1 < min_per_arm or x.size - n1 < min_per_arm or x.size < 3:
            skipped.append(t)
            continue
        fit = fit_least_squares(DesignMatrix(("alpha", TREATMENT), np.column_stack([np.ones(x.size), x])),
                                dataset.outcome[rows])
        se = fit.se(TREATMENT)
        if not se > 0:
            skipped.append(t)
            continue
        out.append((t, fit.coef(TREATMENT), se))
    return out, skipped


def pool_treatment_effect(dataset: IpdDataset, pooling: str = FIXED) -> PooledResult:
    """Two-stage pooled mean difference (treated minus control)."""
    dataset.require_meta_analysable()
    per, _ = per_trial_mean_differences(dataset)
    return pool([p[1] for p in per], [p[2] for p in per], [p[0] for p in per], pooling)


@dataclass(frozen=True)
class SubgroupResult:
    covariate: str
    levels: dict[float, PooledResult]
    Q_int: float
    df: int
    p_value: float
    skipped: dict[float, tuple[str, ...]] = field(default_factory=dict)

    @property
    def difference(self) -> float:
        """Pooled effect at the highest level minus that at the lowest."""
        ks = sorted(self.levels)
        return self.levels[ks[-1]].estimate - self.levels[ks[0]].estimate


def subgroup_interaction_test(estimates: Sequence[float], ses: Sequence[float]) -> tuple[float, int, float]:
    """Chi-square test comparing subgroup-specific pooled effects."""
    from .distributions import chisq_sf

    th = np.asarray(estimates, dtype=float)
    w = 1.0 / np.asarray(ses, dtype=float) ** 2
    bar = float(np.sum(w * th) / np.sum(w))
    Q = max(0.0, float(np.sum(w * (th - bar) ** 2)))
    df = th.size - 1
    return Q, df, chisq_sf(Q, df)


def subgroup_pooled_effects(dataset: IpdDataset, covariate: str, pooling: str = FIXED) -> SubgroupResult:
    """Pool the treatment effect separately within each level of a binary covariate.

    Each subgroup needs at least two trials with both arms represented.
    """
    z = dataset.covariate(covariate)
    if dataset.schema[covariate] != "binary":
        raise ModelError(f"subgroup analysis needs a binary covariate; {covariate!r} is continuous")
    levels, skipped = {}, {}
    for g in (0.0, 1.0):
        rows_by = {}
        for t, rows in dataset.trial_index.items():
            sel = rows[z[rows] == g]
            if sel.size:
                rows_by[t] = sel
        per, skip = per_trial_mean_differences(dataset, rows_by, min_per_arm=2)
        skipped[g] = tuple(skip) + tuple(t for t in dataset.trials if t not in rows_by)
        if len(per) < 2:
            raise ModelError(f"subgroup {covariate}={g:g} has fewer than 2 trials with both arms represented")
        levels[g] = pool([p[1] for p in per], [p[2] for p in per], [p[0] for p in per], pooling)
    Q, df, p = subgroup_interaction_test([r.estimate for r in levels.values()], [r.se for r in levels.values()])
    return SubgroupResult(covariate, levels, Q, df, p, skipped)
