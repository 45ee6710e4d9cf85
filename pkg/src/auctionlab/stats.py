"""Regression and summary tools for trial-level datasets.

Least squares goes through a column-pivoted QR decomposition; the
coefficient covariance is either classical or HC1 (White's sandwich scaled
by ``M / (M - p)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg as sla
import scipy.stats as sst
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, DomainError, RankDeficiencyError
from .experiment import COVARIATES, OUTCOMES
from .trial import moving_average

# column order used for the full-covariate specifications
TABLE_REGRESSORS = ("N", "alpha", "asynchronous", "decay", "design",
                    "egreedy", "feedback", "gamma", "num_actions")
SUMMARY_ORDER = ("bid2val", "episodes", "vol", "N", "alpha", "gamma", "egreedy",
                 "asynchronous", "design", "feedback", "num_actions", "decay")
CATE_MODIFIERS = ("N", "alpha", "gamma", "egreedy", "asynchronous",
                  "feedback", "num_actions", "decay")
INTERCEPT = "Intercept"


@dataclass
class DesignMatrix:
    """Outcome ``y`` and regressors ``X`` whose first column is the constant."""

    y: np.ndarray
    X: np.ndarray
    names: list
    outcome: str = "y"

    def __post_init__(self):
        self.y = check_array(self.y, ensure_2d=False, dtype=float, input_name="y")
        self.X = check_array(self.X, dtype=float, input_name="X")
        if self.y.ndim != 1 or self.y.shape[0] != self.X.shape[0]:
            raise DomainError("y must be a vector with one entry per row of X")
        if len(self.names) != self.X.shape[1]:
            raise DomainError("one name per column of X is required")
        if len(set(self.names)) != len(self.names):
            raise DomainError(f"column names must be unique: {self.names}")
        if self.X.shape[0] <= self.X.shape[1]:
            raise DomainError(f"need more observations ({self.X.shape[0]}) than regressors ({self.X.shape[1]})")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, outcome: str, regressors) -> DesignMatrix:
        cols = list(regressors)
        missing = [c for c in [outcome, *cols] if c not in df.columns]
        if missing:
            raise DomainError(f"dataset lacks columns: {', '.join(missing)}")
        X = np.column_stack([np.ones(len(df))] + [df[c].to_numpy(dtype=float) for c in cols])
        return cls(df[outcome].to_numpy(dtype=float), X, [INTERCEPT, *cols], outcome)


@dataclass
class RegressionResult:
    outcome: str
    names: list
    params: np.ndarray
    bse: np.ndarray
    tvalues: np.ndarray
    pvalues: np.ndarray
    rsquared: float
    fvalue: float
    f_df: tuple
    f_pvalue: float
    nobs: int
    robust: bool
    cov_params: np.ndarray = field(repr=False, default=None)
    resid: np.ndarray = field(repr=False, default=None)

    def coef(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"coef": self.params, "stderr": self.bse, "t": self.tvalues, "pvalue": self.pvalues},
            index=pd.Index(self.names, name="term"),
        )


def _collinear_columns(X: np.ndarray, names, tol: float) -> list:
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    _, s, vt = np.linalg.svd(X / scale, full_matrices=False)
    null = vt[s <= max(tol, s[0] * X.shape[1] * np.finfo(float).eps * 10)]
    involved = np.any(np.abs(null) > 1e-8, axis=0)
    zero = np.linalg.norm(X, axis=0) == 0
    return [n for n, hit in zip(names, involved | zero) if hit]


def _lstsq(X: np.ndarray, y: np.ndarray, names):
    """Coefficients and ``(X'X)^{-1}`` via pivoted QR, with a rank check."""
    n, p = X.shape
    Q, R, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = p * np.finfo(float).eps * diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < p:
        cols = _collinear_columns(X, names, tol)
        raise RankDeficiencyError(
            f"regressors are collinear (rank {rank} < {p}); involved columns: {', '.join(cols)}",
            cols,
        )
    beta_p = sla.solve_triangular(R, Q.T @ y)
    rinv = sla.solve_triangular(R, np.eye(p))
    inv_p = rinv @ rinv.T
    beta = np.empty(p)
    beta[piv] = beta_p
    xtx_inv = np.empty((p, p))
    xtx_inv[np.ix_(piv, piv)] = inv_p
    return beta, xtx_inv


def hc1_covariance(X: np.ndarray, resid: np.ndarray, xtx_inv: np.ndarray) -> np.ndarray:
    n, p = X.shape
    Xe = X * resid[:, None]
    meat = Xe.T @ Xe
    return n / (n - p) * xtx_inv @ meat @ xtx_inv


def ols(dm: DesignMatrix, robust: bool = True) -> RegressionResult:
    """Least squares of ``dm.y`` on ``dm.X``; t-based inference on ``M - p`` df."""
    X, y = dm.X, dm.y
    n, p = X.shape
    beta, xtx_inv = _lstsq(X, y, dm.names)
    resid = y - X @ beta
    dof = n - p
    if robust:
        cov = hc1_covariance(X, resid, xtx_inv)
    else:
        cov = (resid @ resid) / dof * xtx_inv
    bse = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = beta / bse
    pvals = 2.0 * sst.t.sf(np.abs(tvals), dof)

    centered = y - y.mean()
    sst_ = centered @ centered
    ssr = resid @ resid
    r2 = 1.0 - ssr / sst_ if sst_ > 0 else 0.0
    r2 = min(max(r2, 0.0), 1.0)
    if p > 1 and r2 < 1.0:
        fval = (r2 / (p - 1)) / ((1.0 - r2) / dof)
        fp = float(sst.f.sf(fval, p - 1, dof))
    elif p > 1:
        fval, fp = np.inf, 0.0
    else:
        fval, fp = np.nan, np.nan
    return RegressionResult(
        outcome=dm.outcome, names=list(dm.names), params=beta, bse=bse, tvalues=tvals,
        pvalues=pvals, rsquared=float(r2), fvalue=float(fval), f_df=(p - 1, dof),
        f_pvalue=fp, nobs=n, robust=robust, cov_params=cov, resid=resid,
    )


class OLSRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`ols`.

    An intercept column is prepended to ``X``. Column names come from a
    DataFrame ``X`` or from ``feature_names``.
    """

    def __init__(self, robust=True, feature_names=None):
        self.robust = robust
        self.feature_names = feature_names

    def fit(self, X, y):
        if isinstance(X, pd.DataFrame):
            names = [str(c) for c in X.columns]
        elif self.feature_names is not None:
            names = list(self.feature_names)
        else:
            names = [f"x{i}" for i in range(np.shape(X)[1])]
        Xa = check_array(X, dtype=float)
        dm = DesignMatrix(np.asarray(y, dtype=float), np.column_stack([np.ones(len(Xa)), Xa]),
                          [INTERCEPT, *names], getattr(y, "name", None) or "y")
        self.result_ = ols(dm, robust=self.robust)
        self.intercept_ = float(self.result_.params[0])
        self.coef_ = self.result_.params[1:].copy()
        self.n_features_in_ = Xa.shape[1]
        self.feature_names_in_ = np.array(names, dtype=object)
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        Xa = check_array(X, dtype=float)
        return self.intercept_ + Xa @ self.coef_


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _ok_frame(df: pd.DataFrame, columns) -> pd.DataFrame:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DomainError(f"dataset lacks columns: {', '.join(missing)}")
    clean = df.dropna(subset=list(columns))
    if clean.empty:
        raise DomainError("dataset has no complete rows")
    return clean


def summarize(df: pd.DataFrame, columns=SUMMARY_ORDER) -> pd.DataFrame:
    """Count, mean, sample std, min and max per column."""
    if len(df) == 0:
        raise DomainError("cannot summarize an empty dataset")
    cols = [c for c in columns if c in df.columns]
    data = df[cols].astype(float)
    return pd.DataFrame({
        "N": data.count(),
        "mean": data.mean(),
        "std": data.std(ddof=1).fillna(0.0),
        "min": data.min(),
        "max": data.max(),
    })


def run_paper_regressions(df: pd.DataFrame, robust: bool = True) -> dict:
    """Outcome-on-design and outcome-on-all-covariates fits per outcome."""
    df = _ok_frame(df, (*OUTCOMES, *COVARIATES))
    out = {}
    for y in OUTCOMES:
        short = ols(DesignMatrix.from_frame(df, y, ["design"]), robust)
        full = ols(DesignMatrix.from_frame(df, y, TABLE_REGRESSORS), robust)
        out[y] = (short, full)
    return out


@dataclass
class CateResult:
    table: pd.DataFrame
    outcome: str
    treatment: str
    regression: RegressionResult = field(repr=False)

    def effect(self, X: pd.DataFrame) -> np.ndarray:
        """Conditional treatment effect at each row of ``X``."""
        est = self.table["point_estimate"]
        mods = [m for m in est.index if m != "cate_intercept"]
        val = np.full(len(X), est["cate_intercept"])
        for m in mods:
            val = val + est[m] * X[m].to_numpy(dtype=float)
        return val


def interacted_cate(df: pd.DataFrame, treatment: str = "design", modifiers=CATE_MODIFIERS,
                    outcome: str = "bid2val") -> CateResult:
    """Treatment effect linear in the modifiers, fitted by one interacted OLS.

    Model: ``y ~ 1 + W + sum_j X_j + sum_j W*X_j`` with HC1 errors. The
    baseline is linear in the modifiers rather than a flexible learner.
    """
    modifiers = list(modifiers)
    df = _ok_frame(df, (outcome, treatment, *modifiers))
    w = df[treatment].to_numpy(dtype=float)
    if not set(np.unique(w)) <= {0.0, 1.0}:
        raise ConfigurationError(f"treatment {treatment!r} must be binary 0/1")
    cols = [np.ones(len(df)), w]
    names = [INTERCEPT, treatment]
    for m in modifiers:
        cols.append(df[m].to_numpy(dtype=float))
        names.append(m)
    for m in modifiers:
        cols.append(w * df[m].to_numpy(dtype=float))
        names.append(f"{treatment}:{m}")
    dm = DesignMatrix(df[outcome].to_numpy(dtype=float), np.column_stack(cols), names, outcome)
    res = ols(dm, robust=True)

    rows = [f"{treatment}:{m}" for m in modifiers] + [treatment]
    labels = modifiers + ["cate_intercept"]
    idx = [names.index(r) for r in rows]
    est = res.params[idx]
    se = res.bse[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = est / se
    table = pd.DataFrame({
        "point_estimate": est,
        "stderr": se,
        "zstat": z,
        "pvalue": 2.0 * sst.norm.sf(np.abs(z)),
        "ci_lower": est - 1.96 * se,
        "ci_upper": est + 1.96 * se,
    }, index=pd.Index(labels, name="term"))
    return CateResult(table, outcome, treatment, res)


class InteractedCATE(BaseEstimator):
    """Estimator form of :func:`interacted_cate`; ``fit(X, y)`` with W inside X."""

    def __init__(self, treatment="design", modifiers=CATE_MODIFIERS):
        self.treatment = treatment
        self.modifiers = modifiers

    def fit(self, X, y):
        if not isinstance(X, pd.DataFrame):
            raise ConfigurationError("InteractedCATE needs a DataFrame with named columns")
        df = X.copy()
        df["__y__"] = np.asarray(y, dtype=float)
        self.result_ = interacted_cate(df, self.treatment, self.modifiers, "__y__")
        self.n_features_in_ = X.shape[1]
        return self

    def effect(self, X):
        check_is_fitted(self, "result_")
        return self.result_.effect(X)


def boxplot_table(df: pd.DataFrame, by: str = "design", outcomes=OUTCOMES) -> pd.DataFrame:
    """Five-number summaries of each outcome per arm of ``by``."""
    df = _ok_frame(df, (by, *outcomes))
    rows = []
    for y in outcomes:
        for arm, grp in df.groupby(by, sort=True):
            v = grp[y].to_numpy(dtype=float)
            q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
            rows.append({"outcome": y, by: arm, "n": v.size, "min": q[0], "q1": q[1],
                         "median": q[2], "q3": q[3], "max": q[4]})
    return pd.DataFrame(rows)


def bid_series(winning_bids, window: int = 1000) -> pd.DataFrame:
    """Trailing ``window``-episode average of winning bids, indexed by end episode."""
    ma = moving_average(winning_bids, window)
    return pd.DataFrame({"episode": np.arange(window - 1, window - 1 + ma.size), "avg_bid": ma})


def render_regressions(pair, title: str = "") -> str:
    """Two-column text table with stars and robust SEs in parentheses."""
    a, b = pair
    terms = [INTERCEPT] + [t for t in b.names if t != INTERCEPT]
    width = 22

    def cell(res, term):
        if term not in res.names:
            return "", ""
        i = res.names.index(term)
        return (f"{res.params[i]:.3f}{significance_stars(res.pvalues[i])}", f"({res.bse[i]:.3f})")

    lines = []
    if title:
        lines.append(title)
    lines.append(f"Dependent variable: {a.outcome}")
    lines.append(f"{'':<14}{'(1)':>{width}}{'(2)':>{width}}")
    lines.append("-" * (14 + 2 * width))
    for t in terms:
        c1, s1 = cell(a, t)
        c2, s2 = cell(b, t)
        lines.append(f"{t:<14}{c1:>{width}}{c2:>{width}}")
        lines.append(f"{'':<14}{s1:>{width}}{s2:>{width}}")
    lines.append("-" * (14 + 2 * width))
    lines.append(f"{'Observations':<14}{a.nobs:>{width}}{b.nobs:>{width}}")
    lines.append(f"{'R2':<14}{a.rsquared:>{width}.3f}{b.rsquared:>{width}.3f}")
    for res, label in ((a, "(1)"), (b, "(2)")):
        lines.append(f"F {label}: {res.fvalue:.3f}{significance_stars(res.f_pvalue)} "
                     f"(df = {res.f_df[0]}; {res.f_df[1]})")
    lines.append(f"Note: *p<0.1; **p<0.05; ***p<0.01; {'HC1 robust' if a.robust else 'classical'} SEs")
    return "\n".join(lines)


def regression_frame(pair) -> pd.DataFrame:
    a, b = pair
    fa, fb = a.to_frame(), b.to_frame()
    return fa.join(fb, how="outer", lsuffix="_1", rsuffix="_2").reindex(b.names)


def _num(v: float) -> str:
    # five decimals when three would round a fraction to a whole number (decay 0.9999)
    r3 = round(v, 3)
    if v != r3 and r3 == round(v):
        return f"{v:,.5f}"
    return f"{v:,.3f}"


def render_summary(table: pd.DataFrame) -> str:
    lines = [f"{'Variable':<14}{'N':>6}{'Mean':>14}{'St. Dev.':>14}{'Min':>12}{'Max':>12}"]
    for name, r in table.iterrows():
        cells = "".join(f"{_num(r[c]):>{w}}" for c, w in (("mean", 14), ("std", 14), ("min", 12), ("max", 12)))
        lines.append(f"{name:<14}{int(r['N']):>6}{cells}")
    return "\n".join(lines)


def render_cate(res: CateResult) -> str:
    header = ("Treatment effect of {t} on {y}, linear in modifiers "
              "(interacted OLS, HC1 errors)").format(t=res.treatment, y=res.outcome)
    return header + "\n" + res.table.to_string(float_format=lambda v: f"{v:.3f}")
