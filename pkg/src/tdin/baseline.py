"""Acquisition-likelihood logistic baseline and the yearly head-to-head.

Acquirer-year convention: for calendar year Y the cut-off is
t_c = Y - start_year (1 January of Y). Features are those of period Y, the
three lag counts cover calendar years Y-1, Y-2, Y-3, and the label is 1 iff
the acquirer closes at least one deal in (t_c, t_c + 1].
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import rankdata

from .data import Dataset
from .errors import InsufficientHistory, SingleClassData, ValidationError
from .model import ModelConfig, ModelParams, dataset_timelines, frozen_intensity, train
from .ppcore import expected_next_time

log = logging.getLogger(__name__)

N_LAGS = 3
TOP_PEERS = 10


@dataclass
class LabeledExample:
    acquirer: str
    year: int
    features: np.ndarray
    label: int


def neighborhood_counts(ds: Dataset, firm: str) -> dict:
    """Calendar year -> number of deals made by firm's neighbours (snapshot at deal time)."""
    counts: dict = {}
    for d in ds.deals:
        if d.acquirer == firm:
            continue
        snap = ds.snapshot(d.t)
        if firm in snap.nodes and d.acquirer in snap.neighbors(firm):
            year = ds.period_of(d.t)
            counts[year] = counts.get(year, 0) + 1
    return counts


def build_baseline_features(ds: Dataset, year: int, acquirers=None) -> list[LabeledExample]:
    """17 accounting columns, mean top-10 similarity, three neighbourhood lag counts."""
    if year - N_LAGS < ds.start_year:
        raise InsufficientHistory(f"year {year} has fewer than {N_LAGS} years of history")
    t_c = float(year - ds.start_year)
    if t_c < 0 or t_c + 1.0 > ds.n_years + 1e-9:
        raise ValidationError(f"label window of {year} leaves the observation window")
    snap = ds.graph.snapshot_at(year)
    out = []
    for firm in (ds.acquirers if acquirers is None else acquirers):
        acc = ds.features.get(firm, year).accounting
        top = snap.top_scores(firm, TOP_PEERS)
        avg_sim = float(np.mean(top)) if top else 0.0
        nb = neighborhood_counts(ds, firm)
        lags = [float(nb.get(year - k, 0)) for k in range(1, N_LAGS + 1)]
        label = int(any(d.acquirer == firm and t_c < d.t <= t_c + 1.0 for d in ds.deals))
        out.append(LabeledExample(firm, year, np.concatenate([acc, [avg_sim], lags]), label))
    return out


@dataclass
class LogisticParams:
    beta: np.ndarray     # intercept first
    mean: np.ndarray
    std: np.ndarray

    def predict_proba(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, float)) - self.mean) / self.std
        return expit(self.beta[0] + Z @ self.beta[1:])

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "mean": self.mean.tolist(), "std": self.std.tolist()}


def _stack(examples) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([e.features for e in examples], dtype=float)
    y = np.array([e.label for e in examples], dtype=float)
    return X, y


def fit_logistic(examples, l2: float = 1e-4, max_iter: int = 500, labels=None) -> LogisticParams:
    """Penalised Bernoulli maximum likelihood on standardised features.

    Accepts a list of LabeledExample, or a design matrix plus ``labels``.
    """
    if labels is None:
        X, y = _stack(examples)
    else:
        X, y = np.atleast_2d(np.asarray(examples, float)), np.asarray(labels, float)
    if y.size == 0 or y.min() == y.max():
        raise SingleClassData("logistic fit needs both classes")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Z = np.hstack([np.ones((X.shape[0], 1)), (X - mean) / std])
    n = Z.shape[0]

    def objective(beta):
        eta = Z @ beta
        nll = np.sum(np.logaddexp(0.0, eta) - y * eta) / n
        pen = 0.5 * l2 * np.dot(beta[1:], beta[1:])
        grad = Z.T @ (expit(eta) - y) / n
        grad[1:] += l2 * beta[1:]
        return nll + pen, grad

    res = minimize(objective, np.zeros(Z.shape[1]), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    return LogisticParams(res.x, mean, std)


def discretize_prediction(t_hat: float, t_c: float) -> int:
    """1 iff the predicted time falls in the next year (t_c, t_c + 1]."""
    if t_hat < t_c:
        raise ValidationError("t_hat precedes t_c")
    return int(t_hat <= t_c + 1.0)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; ties count one half."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassData("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def baseline_years(ds: Dataset, split_year: int) -> list[int]:
    return list(range(ds.start_year + N_LAGS, split_year + 1))


def default_eval_years(ds: Dataset, split_year: int) -> list[int]:
    return list(range(split_year + 1, ds.end_year + 1))


def evaluate_head_to_head(ds: Dataset, tdin_params: ModelParams, split_year: int,
                          eval_years=None, horizon: float = 5.0) -> dict:
    """Score every modeled acquirer in every evaluation year with both models.

    The logistic baseline is fit on acquirer-years whose label window ends by
    the end of ``split_year``; ``tdin_params`` should come from training on
    the same span. TDIN's AUC score is P(deal within a year) =
    1 - exp(-Lambda(t_c, t_c + 1)); its binarised expected next time gives
    the accuracy figure.
    """
    eval_years = default_eval_years(ds, split_year) if eval_years is None else list(eval_years)
    if not eval_years:
        raise ValidationError(f"split year {split_year} leaves no evaluation year")
    if max(eval_years) > ds.end_year or min(eval_years) <= split_year:
        raise ValidationError("evaluation years must follow split_year inside the window")
    train_ex = [e for y in baseline_years(ds, split_year) for e in build_baseline_features(ds, y)]
    logit = fit_logistic(train_ex)
    timelines = dataset_timelines(ds)
    rows = []
    for year in eval_years:
        t_c = float(year - ds.start_year)
        examples = build_baseline_features(ds, year)
        base_scores = logit.predict_proba(np.array([e.features for e in examples]))
        for ex, b_score in zip(examples, base_scores):
            lam = frozen_intensity(tdin_params, ds, ex.acquirer, t_c, timelines)
            prob = float(-np.expm1(-lam.integral(t_c, t_c + 1.0, tdin_params.config.n_quad)))
            t_hat = expected_next_time(lam, t_c, t_c + horizon)
            rows.append({"acquirer": ex.acquirer, "year": year, "label": ex.label,
                         "tdin_score": prob, "tdin_t_hat": t_hat,
                         "tdin_pred": discretize_prediction(t_hat, t_c),
                         "baseline_score": float(b_score)})
    labels = np.array([r["label"] for r in rows])
    tdin_auc = auc([r["tdin_score"] for r in rows], labels)
    base_auc = auc([r["baseline_score"] for r in rows], labels)
    report = {
        "baseline_auc": base_auc,
        "tdin_auc": tdin_auc,
        "auc_ratio": tdin_auc / base_auc,
        "n_eval": len(rows),
        "n_positive": int(labels.sum()),
        "split_year": split_year,
        "eval_years": eval_years,
        "tdin_accuracy": float(np.mean([r["tdin_pred"] == r["label"] for r in rows])),
        "baseline_accuracy": float(np.mean([(r["baseline_score"] > 0.5) == r["label"] for r in rows])),
    }
    return {"report": report, "rows": rows, "baseline": logit}


def run_head_to_head(ds: Dataset, cfg: ModelConfig, split_year: int, seed: int = 0,
                     eval_years=None) -> dict:
    """Train TDIN on data up to the end of ``split_year`` and evaluate both models."""
    t_end = float(split_year - ds.start_year + 1)
    params = train(ds, cfg, seed=seed, t_end=t_end)
    result = evaluate_head_to_head(ds, params, split_year, eval_years)
    result["params"] = params
    return result


def write_report(result: dict, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(result["report"], fh, indent=2, sort_keys=True)
        fh.write("\n")
    fields = ["acquirer", "year", "label", "tdin_score", "tdin_t_hat", "tdin_pred", "baseline_score"]
    with open(os.path.join(out_dir, "scores.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in result["rows"]:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
