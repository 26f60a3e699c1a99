"""scikit-learn compatible wrappers.

``WithinTrialCenterer`` is a transformer that removes per-trial covariate
means; ``InteractionMetaAnalysis`` fits one of the four interaction
approaches and exposes the result through fitted attributes.

Both accept an :class:`~ipdinteract.dataset.IpdDataset` or a pandas
DataFrame with ``trial_id``, ``treatment`` and ``outcome`` columns (the
aliases ``trial``, ``treat`` and ``y`` are also recognised).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import TRIAL_COLUMN, IpdDataset, SchemaError, ValidationError, _resolve_column
from .models import TREATMENT, Handling, ModelSpec, Stage, fit_model
from .pooling import FIXED


def check_ipd(X, covariates: Sequence[str] | None = None) -> IpdDataset:
    """Coerce ``X`` to an :class:`IpdDataset`, checking the named covariates exist."""
    if isinstance(X, IpdDataset):
        ds = X
    elif hasattr(X, "keys") and hasattr(X, "__getitem__"):
        ds = IpdDataset.from_frame(X, None if covariates is None else list(covariates))
    else:
        raise TypeError(f"expected an IpdDataset or a DataFrame, got {type(X).__name__}")
    if covariates is not None:
        for name in covariates:
            ds.covariate(name)
    return ds


class WithinTrialCenterer(TransformerMixin, BaseEstimator):
    """Subtract the per-trial mean from selected covariate columns.

    Parameters
    ----------
    columns : list of str, optional
        Columns to center. Defaults to every covariate seen in ``fit``.
    """

    def __init__(self, columns=None):
        self.columns = columns

    def fit(self, X, y=None):
        ds = check_ipd(X, self.columns)
        cols = list(self.columns) if self.columns is not None else ds.covariate_names
        self.columns_ = cols
        self.trial_means_ = {
            c: {t: float(ds.covariate(c)[rows].mean()) for t, rows in ds.trial_index.items()} for c in cols
        }
        return self

    def _offsets(self, trial_ids: np.ndarray, column: str) -> np.ndarray:
        means = self.trial_means_[column]
        unseen = sorted(set(trial_ids.tolist()) - set(means))
        if unseen:
            raise ValidationError(f"trial(s) not seen during fit: {', '.join(unseen)}")
        return np.array([means[t] for t in trial_ids], dtype=float)

    def transform(self, X):
        check_is_fitted(self, "trial_means_")
        if isinstance(X, IpdDataset):
            out = X
            for c in self.columns_:
                out = out.with_covariate(c, X.covariate(c) - self._offsets(X.trial_ids, c), kind="continuous")
            return out
        frame = X.copy()
        trial_col = _resolve_column(list(frame.keys()), TRIAL_COLUMN)
        trial_ids = np.asarray(frame[trial_col]).astype(str)
        for c in self.columns_:
            if c not in frame:
                raise SchemaError(f"missing column {c!r}")
            frame[c] = np.asarray(frame[c], dtype=float) - self._offsets(trial_ids, c)
        return frame


class InteractionMetaAnalysis(BaseEstimator):
    """Estimate a treatment-covariate interaction across trials.

    Parameters
    ----------
    modifier : str
        Effect modifier ``z``.
    adjust : sequence of str
        Additional covariates ``w`` (empty for approach 1).
    approach : {1, 2, 3, 4}
        1 unadjusted, 2 adjusted for main effects of ``w``, 3 adds ``x*w``
        interactions, 4 adds the three-way ``x*z*w`` term.
    stage : {"one", "two"}
    handling : {"within", "conflated"}
        Only one-stage models accept ``"conflated"``.
    pooling : {"fixed", "random_DL"}
        Pooling of stage-1 estimates (two-stage only).

    Attributes
    ----------
    result_ : OneStageResult or TwoStageResult
    estimates_ : dict
        Role name (``gamma``, ``gamma1``, ...) to InteractionEstimate.
    gamma_, se_, p_value_ : float
        The approach's coefficient of interest.
    """

    def __init__(self, modifier="cov1", adjust=(), approach=1, stage="two", handling="within", pooling=FIXED):
        self.modifier = modifier
        self.adjust = adjust
        self.approach = approach
        self.stage = stage
        self.handling = handling
        self.pooling = pooling

    def _spec(self) -> ModelSpec:
        return ModelSpec(int(self.approach), self.modifier, tuple(self.adjust or ()), Stage(self.stage), Handling(self.handling))

    def fit(self, X, y=None):
        spec = self._spec()
        ds = check_ipd(X, [spec.effect_modifier, *spec.additional_covariates])
        if y is not None:
            ds = ds.with_outcome(np.asarray(y, dtype=float))
        ds.require_meta_analysable()
        self.spec_ = spec
        self.result_ = fit_model(ds, spec, self.pooling)
        self.estimates_ = dict(self.result_.estimates)
        primary = self.result_.primary
        self.gamma_ = primary.gamma
        self.se_ = primary.se
        self.p_value_ = primary.wald.p_value
        self.trials_ = ds.trials
        names = [spec.effect_modifier, *spec.additional_covariates]
        self.trial_means_ = {
            c: {t: float(ds.covariate(c)[rows].mean()) for t, rows in ds.trial_index.items()} for c in names
        }
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "result_")
        out = {"spec": self.spec_.to_dict(), "estimates": {k: v.to_dict() for k, v in self.estimates_.items()}}
        pooled = getattr(self.result_, "pooled", None)
        if pooled:
            out["pooled"] = {k: v.to_dict() for k, v in pooled.items()}
        return out

    def predict(self, X):
        """Fitted mean outcome for participants of trials seen during ``fit``."""
        check_is_fitted(self, "result_")
        spec = self.spec_
        ds = check_ipd(X, [spec.effect_modifier, *spec.additional_covariates])
        unseen = sorted(set(ds.trials) - set(self.trials_))
        if unseen:
            raise ValidationError(f"trial(s) not seen during fit: {', '.join(unseen)}")
        x = ds.treatment.astype(float)
        pred = np.empty(ds.n)
        if spec.stage is Stage.TWO:
            fits = {f.trial_id: f.fit for f in self.result_.trial_fits}
            for t, rows in ds.trial_index.items():
                if t not in fits:
                    raise ValidationError(f"trial {t!r} was excluded from the fit")
                pred[rows] = _linear_predictor(fits[t], ds, rows, x, spec, per_trial=None, means=None)
            return pred
        means = None if spec.info_handling is Handling.CONFLATED else self.trial_means_
        for t, rows in ds.trial_index.items():
            pred[rows] = _linear_predictor(self.result_.fit, ds, rows, x, spec, per_trial=t, means=means)
        return pred


def _linear_predictor(fit, ds, rows, x, spec, per_trial, means):
    coef = fit.as_dict()
    names = [spec.effect_modifier, *spec.additional_covariates]
    sfx = f"[{per_trial}]" if per_trial is not None else ""
    value = np.full(rows.size, coef[f"alpha{sfx}"])
    raw = {c: ds.covariate(c)[rows] for c in names}
    for c in names:
        value += coef.get(f"{c}{sfx}", 0.0) * raw[c]
    xr = x[rows]
    value += coef[TREATMENT] * xr
    term = {c: raw[c] - means[c][per_trial] if means is not None else raw[c] for c in names}
    for label, b in coef.items():
        if label.startswith(f"{TREATMENT}:"):
            parts = label.split(":")[1:]
            col = xr.copy()
            for c in parts:
                col = col * term[c]
            value += b * col
    return value
