"""Evaluation metrics (mean test log-likelihood, RMSE, 95% coverage),
replication aggregation with averaged-tie ranks, and table emission."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .likelihoods import GaussianLikelihood, ProbitLikelihood


@dataclass
class MetricsRecord:
    method: str
    dataset: str
    n_cov_features: int
    n_mean_inducing: int
    seed: int
    test_log_lik: float
    rmse: float
    coverage95: float
    wall_seconds: float

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")
        if not 0.0 <= self.coverage95 <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")


def evaluate(predictive, likelihood: GaussianLikelihood, y_test) -> dict:
    """Regression metrics; coverage intervals use the observation variance
    (latent plus noise)."""
    if not isinstance(likelihood, GaussianLikelihood):
        raise ValueError("evaluate() computes regression metrics; use "
                         "classification_metrics for probit models")
    y = np.asarray(y_test, float)
    m = np.asarray(predictive.mean, float)
    s = np.asarray(predictive.variance, float)
    if y.shape != m.shape:
        raise ValueError("prediction/target length mismatch")
    logl = float(np.mean(likelihood.predictive_log_density(y, m, s)))
    rmse = float(np.sqrt(np.mean((y - m) ** 2)))
    half = 1.96 * np.sqrt(s + likelihood.noise_variance)
    coverage = float(np.mean(np.abs(y - m) <= half))
    return {"test_log_lik": logl, "rmse": rmse, "coverage95": coverage}


def classification_metrics(predictive, likelihood: ProbitLikelihood, y_test) -> dict:
    y = np.asarray(y_test, float)
    m = np.asarray(predictive.mean, float)
    s = np.asarray(predictive.variance, float)
    logl = float(np.mean(likelihood.predictive_log_density(y, m, s)))
    acc = float(np.mean(np.sign(m) == y))
    return {"test_log_lik": logl, "accuracy": acc}


def records_frame(records) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records])


def aggregate(records) -> pd.DataFrame:
    """Per-dataset method summary with averaged-tie ranks on test log-likelihood.

    Ranks are assigned within each (dataset, seed) group across methods
    (rank 1 = best log-likelihood, ties averaged), then averaged over seeds.
    """
    df = records_frame(records) if not isinstance(records, pd.DataFrame) else records.copy()
    if df.empty:
        raise ValueError("no records to aggregate")
    df["rank"] = np.nan
    for _, idx in df.groupby(["dataset", "seed"]).groups.items():
        df.loc[idx, "rank"] = rankdata(-df.loc[idx, "test_log_lik"], method="average")
    agg = (
        df.groupby(["dataset", "method"])
        .agg(
            log_lik_mean=("test_log_lik", "mean"),
            log_lik_std=("test_log_lik", "std"),
            rmse_mean=("rmse", "mean"),
            coverage_mean=("coverage95", "mean"),
            rank_mean=("rank", "mean"),
            n_runs=("seed", "count"),
        )
        .reset_index()
    )
    return agg


def overall_mean_rank(agg: pd.DataFrame) -> pd.Series:
    return agg.groupby("method")["rank_mean"].mean().sort_values()


def format_table(agg: pd.DataFrame) -> str:
    lines = [agg.to_string(index=False, float_format=lambda v: f"{v: .4f}")]
    ranks = overall_mean_rank(agg)
    lines.append("")
    lines.append("overall mean rank by log-likelihood:")
    for method, r in ranks.items():
        lines.append(f"  {method}: {r:.3f}")
    return "\n".join(lines)


def write_metrics_csv(records, path):
    records_frame(records).to_csv(path, index=False, float_format="%.17g")
