"""Least-squares engine: OLS/WLS, just-identified 2SLS, and IRLS logit,
all with cluster-robust (sandwich) covariance.

Conventions, fixed across the toolkit:

* Collinearity is handled by a rank-revealing pivoted QR with tolerance
  1e-10 relative to the largest pivot.  Dropped columns are reported on
  the result, never fatal unless no full-rank subset remains.
* The cluster sandwich carries the small-sample factor
  [G/(G-1)] * [(N-1)/(N-K)].  With every observation its own cluster this
  reduces to the familiar N/(N-K) heteroskedasticity-robust correction.
* 2SLS covariance uses second-stage residuals computed from the original
  endogenous columns (not their first-stage fitted values).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    NoConvergence,
    Separation,
    SingularAfterDrop,
    WeakOrRankDeficientFirstStage,
)

PIVOT_RTOL = 1e-10
WEAK_F_THRESHOLD = 10.0


@dataclass
class FitResult:
    coefficients: np.ndarray  # retained columns only, original column order
    vcov: np.ndarray
    r_squared: float
    residuals: np.ndarray
    n: int
    n_clusters: int
    column_names: list[str]
    dropped_columns: list[str]
    warnings: list[str] = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def coefficient(self, name: str) -> float:
        return self.coefficients[self.column_names.index(name)]

    def se_for(self, name: str) -> float:
        return self.se[self.column_names.index(name)]

    def vcov_entry(self, a: str, b: str) -> float:
        i = self.column_names.index(a)
        j = self.column_names.index(b)
        return self.vcov[i, j]


@dataclass
class TslsResult:
    fit: FitResult  # second stage
    first_stages: list[FitResult]
    f_excluded: float


def _as_design(X, names):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise DimensionMismatch(
            f"{len(names)} column names for {X.shape[1]} columns"
        )
    return X, list(names)


def _cluster_codes(clusters, n):
    if clusters is None:
        return np.arange(n), n
    clusters = np.asarray(clusters)
    if clusters.shape[0] != n:
        raise DimensionMismatch(
            f"{clusters.shape[0]} cluster ids for {n} rows"
        )
    _, codes = np.unique(clusters, return_inverse=True)
    return codes, codes.max() + 1


def _pivoted_retained(Xw):
    """Indices of a maximal well-conditioned column subset, ascending."""
    _, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] <= 0.0:
        raise SingularAfterDrop("design matrix has no nonzero column")
    rank = int(np.sum(diag > PIVOT_RTOL * diag[0]))
    return np.sort(piv[:rank])


def _sandwich(Xr, resid, weights, codes, n_clusters, bread):
    # meat built from within-cluster score sums S_g = sum_i w_i e_i x_i
    scores = Xr * (weights * resid)[:, None]
    S = np.zeros((n_clusters, Xr.shape[1]))
    np.add.at(S, codes, scores)
    meat = S.T @ S
    n, k = Xr.shape
    if n_clusters < 2:
        raise DimensionMismatch("clustered vcov requires >= 2 clusters")
    if n <= k:
        factor = float(n_clusters) / (n_clusters - 1)
    else:
        factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - k))
    return factor * bread @ meat @ bread


def ols(X, y, weights=None, clusters=None, names=None) -> FitResult:
    """Weighted least squares with cluster-robust covariance.

    Minimizes sum_i w_i (y_i - x_i'b)^2.  With ``clusters=None`` every row
    is its own cluster, so the sandwich is the HC1-style robust estimator.
    """
    X, names = _as_design(X, names)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} rows in X but {y.shape[0]} in y")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape[0] != n:
            raise DimensionMismatch(f"{n} rows in X but {w.shape[0]} weights")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
    codes, n_clusters = _cluster_codes(clusters, n)

    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    retained = _pivoted_retained(Xw)
    dropped = [names[j] for j in range(X.shape[1]) if j not in set(retained)]
    Xr = X[:, retained]
    Xrw = Xw[:, retained]

    Q, R = scipy.linalg.qr(Xrw, mode="economic")
    beta = scipy.linalg.solve_triangular(R, Q.T @ (y * sw))
    resid = y - Xr @ beta

    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    vcov = _sandwich(Xr, resid, w, codes, n_clusters, bread)

    wsum = w.sum()
    ybar = (w * y).sum() / wsum if wsum > 0 else 0.0
    sst = (w * (y - ybar) ** 2).sum()
    ssr = (w * resid**2).sum()
    r2 = 0.0 if sst <= 0.0 else 1.0 - ssr / sst

    result = FitResult(
        coefficients=beta,
        vcov=vcov,
        r_squared=r2,
        residuals=resid,
        n=n,
        n_clusters=n_clusters,
        column_names=[names[j] for j in retained],
        dropped_columns=dropped,
    )
    if dropped:
        result.warnings.append("dropped collinear columns: " + ", ".join(dropped))
    return result


def _wald_f(fit: FitResult, block: list[str]) -> float:
    """Cluster-robust Wald F for the joint nullity of a coefficient block."""
    idx = [fit.column_names.index(b) for b in block if b in fit.column_names]
    if not idx:
        return 0.0
    b = fit.coefficients[idx]
    V = fit.vcov[np.ix_(idx, idx)]
    if np.max(np.abs(V)) <= 1e-300:
        # degenerate (e.g. sharp design with zero first-stage residuals)
        return float("inf") if np.max(np.abs(b)) > 0 else 0.0
    try:
        solved = scipy.linalg.solve(V, b, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError):
        solved = np.linalg.pinv(V) @ b
    return float(b @ solved) / len(idx)


def tsls(y, endog, instruments, exog, clusters=None, endog_names=None,
         instrument_names=None, exog_names=None) -> TslsResult:
    """Just-identified two-stage least squares.

    ``endog`` and ``instruments`` must have the same column count (one or
    two).  ``f_excluded`` is the cluster-robust Wald F of the excluded
    instrument block in the first stage of the first endogenous regressor.
    """
    endog, endog_names = _as_design(endog, endog_names)
    instruments, instrument_names = _as_design(instruments, instrument_names)
    exog, exog_names = _as_design(exog, exog_names)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    p = endog.shape[1]
    if instruments.shape[1] != p:
        raise DimensionMismatch(
            f"{instruments.shape[1]} instruments for {p} endogenous columns"
        )
    if p not in (1, 2):
        raise DimensionMismatch("tsls supports one or two endogenous columns")
    if endog.shape[0] != n or instruments.shape[0] != n or exog.shape[0] != n:
        raise DimensionMismatch("row count mismatch across tsls inputs")

    Z = np.hstack([exog, instruments])
    z_names = exog_names + instrument_names
    first_stages = []
    fitted = np.empty((n, p))
    coef_matrix = np.zeros((p, p))
    for j in range(p):
        fs = ols(Z, endog[:, j], clusters=clusters, names=z_names)
        first_stages.append(fs)
        fitted[:, j] = endog[:, j] - fs.residuals
        for i, iname in enumerate(instrument_names):
            if iname in fs.column_names:
                coef_matrix[j, i] = fs.coefficient(iname)
            else:
                raise WeakOrRankDeficientFirstStage(
                    f"instrument {iname!r} collinear in first stage of "
                    f"{endog_names[j]!r}"
                )
    svals = np.linalg.svd(coef_matrix, compute_uv=False)
    if svals[-1] <= 1e-12 * max(svals[0], 1e-300):
        raise WeakOrRankDeficientFirstStage(
            "first-stage coefficient matrix is singular"
        )

    f_excluded = _wald_f(first_stages[0], instrument_names)

    X2 = np.hstack([exog, fitted])
    x2_names = exog_names + endog_names
    second = ols(X2, y, clusters=clusters, names=x2_names)
    for name in endog_names:
        if name not in second.column_names:
            raise WeakOrRankDeficientFirstStage(
                f"instrumented column {name!r} collinear in second stage"
            )

    # structural residuals: original endogenous columns, 2SLS coefficients
    retained = [x2_names.index(c) for c in second.column_names]
    X_orig = np.hstack([exog, endog])[:, retained]
    resid = y - X_orig @ second.coefficients

    codes, n_clusters = _cluster_codes(clusters, n)
    Xhat_r = X2[:, retained]
    Q, R = scipy.linalg.qr(Xhat_r, mode="economic")
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    vcov = _sandwich(Xhat_r, resid, np.ones(n), codes, n_clusters, bread)

    ybar = y.mean()
    sst = ((y - ybar) ** 2).sum()
    r2 = 0.0 if sst <= 0.0 else 1.0 - (resid**2).sum() / sst

    warnings = list(second.warnings)
    if f_excluded < WEAK_F_THRESHOLD:
        warnings.append(f"weak first stage: excluded-instrument F = {f_excluded:.3f}")
    fit = FitResult(
        coefficients=second.coefficients,
        vcov=vcov,
        r_squared=r2,
        residuals=resid,
        n=n,
        n_clusters=n_clusters,
        column_names=second.column_names,
        dropped_columns=second.dropped_columns,
        warnings=warnings,
    )
    return TslsResult(fit=fit, first_stages=first_stages, f_excluded=f_excluded)


def _log_likelihood(y, eta):
    # y*log(p) + (1-y)*log(1-p) written via logaddexp for stability
    return float(np.sum(y * -np.logaddexp(0.0, -eta) + (1.0 - y) * -np.logaddexp(0.0, eta)))


def logit(X, y, clusters=None, names=None, max_iter=100,
          score_tol=1e-8, ll_rtol=1e-10) -> FitResult:
    """Maximum-likelihood logit via iteratively reweighted least squares.

    ``r_squared`` on the result holds McFadden's pseudo-R2 (1 - ll/ll0).
    Raises Separation when fitted probabilities pin at 0/1 with diverging
    coefficients, NoConvergence after ``max_iter`` iterations.
    """
    X, names = _as_design(X, names)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} rows in X but {y.shape[0]} in y")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("logit outcome must be binary 0/1")
    codes, n_clusters = _cluster_codes(clusters, n)

    retained = _pivoted_retained(X)
    dropped = [names[j] for j in range(X.shape[1]) if j not in set(retained)]
    Xr = X[:, retained]
    k = Xr.shape[1]

    beta = np.zeros(k)
    ll_old = _log_likelihood(y, Xr @ beta)
    converged = False
    for _ in range(max_iter):
        eta = Xr @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -35.0, 35.0)))
        pinned_hi = p >= 1.0 - 1e-10
        pinned_lo = p <= 1e-10
        if (pinned_hi | pinned_lo).any():
            if np.all(y[pinned_hi] == 1.0) and np.all(y[pinned_lo] == 0.0):
                raise Separation(
                    "fitted probabilities pinned at 0/1 with diverging coefficients"
                )
        score = Xr.T @ (y - p)
        if np.max(np.abs(score)) < score_tol:
            converged = True
            break
        w = np.clip(p * (1.0 - p), 1e-12, None)
        sw = np.sqrt(w)
        Q, R = scipy.linalg.qr(Xr * sw[:, None], mode="economic")
        z = eta + (y - p) / w
        beta = scipy.linalg.solve_triangular(R, Q.T @ (z * sw))
        ll_new = _log_likelihood(y, Xr @ beta)
        if abs(ll_new - ll_old) < ll_rtol * (abs(ll_old) + 1e-12):
            ll_old = ll_new
            converged = True
            break
        ll_old = ll_new
    if not converged:
        raise NoConvergence(f"logit did not converge in {max_iter} iterations")

    eta = Xr @ beta
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -35.0, 35.0)))
    w = np.clip(p * (1.0 - p), 1e-12, None)
    sw = np.sqrt(w)
    Q, R = scipy.linalg.qr(Xr * sw[:, None], mode="economic")
    Rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    bread = Rinv @ Rinv.T
    vcov = _sandwich(Xr, (y - p) / w, w, codes, n_clusters, bread)

    ll = _log_likelihood(y, eta)
    pbar = y.mean()
    if pbar in (0.0, 1.0):
        ll0 = 0.0
        pseudo_r2 = 0.0
    else:
        ll0 = n * (pbar * np.log(pbar) + (1 - pbar) * np.log(1 - pbar))
        pseudo_r2 = 1.0 - ll / ll0

    result = FitResult(
        coefficients=beta,
        vcov=vcov,
        r_squared=pseudo_r2,
        residuals=y - p,
        n=n,
        n_clusters=n_clusters,
        column_names=[names[j] for j in retained],
        dropped_columns=dropped,
    )
    if dropped:
        result.warnings.append("dropped collinear columns: " + ", ".join(dropped))
    return result
