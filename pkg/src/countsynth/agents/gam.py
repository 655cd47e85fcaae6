"""Poisson additive model agent: penalized B-spline smooths fit by IRLS.

lambda = exp(beta_0 + s_1(covariate) + s_2(time)), each smooth a cubic
B-spline expansion with a second-difference penalty; one shared smoothing
parameter is chosen by generalized cross-validation over a log grid.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from countsynth.agents.errors import FitError

_RIDGE = 1e-8
_ETA_CLAMP = 30.0


@dataclass
class SplineSpec:
    n_basis: int = 8
    degree: int = 3
    lambda_grid: np.ndarray = field(
        default_factory=lambda: np.logspace(-4.0, 6.0, 20)
    )
    center: bool = True          # center smooth columns; adds a free intercept
    gcv_gamma: float = 2.0       # edf inflation guarding against undersmoothing
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        if self.n_basis < self.degree + 2:
            raise ValueError("n_basis must exceed the spline degree + 1")


def _knots(xref, n_basis, degree):
    # equally spaced unclamped knots (P-spline convention): the Greville
    # points are then uniform, so the second-difference coefficient penalty
    # has exactly the linear functions of x as its null space
    lo, hi = float(np.min(xref)), float(np.max(xref))
    if hi <= lo:
        hi = lo + 1.0
    h = (hi - lo) / (n_basis - degree)
    return lo - degree * h + h * np.arange(n_basis + degree + 1)


def _basis(x, knots, degree):
    lo, hi = knots[degree], knots[-degree - 1]
    # constant extrapolation: clamp evaluation points into the fitted range
    xc = np.clip(x, lo, hi - 1e-9 * max(hi - lo, 1.0))
    return BSpline.design_matrix(xc, knots, degree).toarray()


def _second_difference_penalty(n_basis):
    D = np.diff(np.eye(n_basis), n=2, axis=0)
    return D.T @ D


def _assemble(covariates, knot_list, spec, centers=None):
    blocks = [_basis(np.asarray(c, float), t, spec.degree) for c, t in
              zip(covariates, knot_list)]
    if spec.center:
        if centers is None:
            centers = [b.mean(axis=0) for b in blocks]
        blocks = [b - mu for b, mu in zip(blocks, centers)]
        X = np.column_stack([np.ones(blocks[0].shape[0])] + blocks)
    else:
        X = np.column_stack(blocks)
    return X, centers


def _penalty_matrix(spec, lambdas):
    S1 = _second_difference_penalty(spec.n_basis)
    off = 1 if spec.center else 0
    p = off + len(lambdas) * spec.n_basis
    S = np.zeros((p, p))
    for j, lam in enumerate(lambdas):
        a = off + j * spec.n_basis
        S[a:a + spec.n_basis, a:a + spec.n_basis] = lam * S1
    return S


def _poisson_deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return 2.0 * np.sum(term - (y - mu))


def _pirls(y, X, P, spec):
    """Penalized IRLS with penalty matrix P; returns (beta, mu, edf)."""
    mu = y + 0.5
    eta = np.log(mu)
    beta = np.zeros(X.shape[1])
    dev = np.inf
    for _ in range(spec.max_iter):
        W = mu
        z = eta + (y - mu) / mu
        XtW = X.T * W
        A = XtW @ X + P + _RIDGE * np.eye(X.shape[1])
        beta = np.linalg.solve(A, XtW @ z)
        eta = np.clip(X @ beta, -_ETA_CLAMP, _ETA_CLAMP)
        mu = np.exp(eta)
        dev_new = _poisson_deviance(y, mu)
        if abs(dev_new - dev) < spec.tol * (1.0 + abs(dev_new)):
            dev = dev_new
            break
        dev = dev_new
    else:
        raise FitError("penalized IRLS did not converge")
    XtWX = (X.T * mu) @ X
    A = XtWX + P + _RIDGE * np.eye(X.shape[1])
    edf = float(np.trace(np.linalg.solve(A, XtWX)))
    return beta, mu, edf


@dataclass
class GAMFit:
    spec: SplineSpec
    knot_list: list
    centers: list | None
    beta: np.ndarray
    lambdas: np.ndarray     # one smoothing value per smooth
    edf: float
    deviance: float

    @property
    def beta0(self):
        return float(self.beta[0]) if self.spec.center else 0.0

    def linear_predictor(self, covariates):
        X, _ = _assemble(covariates, self.knot_list, self.spec, self.centers)
        return np.clip(X @ self.beta, -_ETA_CLAMP, _ETA_CLAMP)

    def predict(self, covariates):
        return np.exp(self.linear_predictor(covariates))

    def smooth_values(self, which, x):
        """Centered contribution of smooth `which` at points x."""
        B = _basis(np.asarray(x, float), self.knot_list[which], self.spec.degree)
        if self.spec.center:
            B = B - self.centers[which]
            a = 1 + which * self.spec.n_basis
        else:
            a = which * self.spec.n_basis
        return B @ self.beta[a:a + self.spec.n_basis]

    def simulate(self, rng, covariates, size=None):
        mu = self.predict(covariates)
        if size is None:
            return rng.poisson(mu)
        return rng.poisson(mu, size=(size,) + mu.shape)


def _gcv(y, X, spec, lambdas, n):
    beta, mu, edf = _pirls(y, X, _penalty_matrix(spec, lambdas), spec)
    dev = _poisson_deviance(y, mu)
    denom = max(n - spec.gcv_gamma * edf, 1e-8)
    return n * dev / denom**2, beta, edf, dev


def gam_fit(y, covariates, spec=None):
    """Fit the additive Poisson model, choosing per-smooth lambdas by GCV.

    The smoothing values are selected by coordinate descent over the grid:
    each smooth's lambda is optimized in turn holding the others fixed.
    """
    spec = spec or SplineSpec()
    y = np.asarray(y, dtype=float)
    covariates = [np.asarray(c, dtype=float) for c in covariates]
    n = y.shape[0]
    if n < 2 * spec.n_basis:
        raise ValueError(
            f"need at least {2 * spec.n_basis} observations, got {n}"
        )
    knot_list = [_knots(c, spec.n_basis, spec.degree) for c in covariates]
    X, centers = _assemble(covariates, knot_list, spec)
    n_smooth = len(covariates)
    lambdas = np.full(n_smooth, float(np.median(spec.lambda_grid)))
    best = None
    for _ in range(2):
        for j in range(n_smooth):
            for lam in spec.lambda_grid:
                trial = lambdas.copy()
                trial[j] = lam
                try:
                    gcv, beta, edf, dev = _gcv(y, X, spec, trial, n)
                except FitError:
                    continue
                if best is None or gcv < best[0] - 1e-12:
                    best = (gcv, trial.copy(), beta, edf, dev)
            if best is not None:
                lambdas = best[1].copy()
    if best is None:
        raise FitError("penalized IRLS failed on every smoothing value")
    _, lambdas, beta, edf, dev = best
    return GAMFit(
        spec=spec, knot_list=knot_list, centers=centers,
        beta=beta, lambdas=lambdas, edf=edf, deviance=dev,
    )


def fit_at_lambda(y, covariates, lam, spec=None):
    """Fit at a fixed smoothing value shared by all smooths (no GCV search)."""
    spec = spec or SplineSpec()
    y = np.asarray(y, dtype=float)
    covariates = [np.asarray(c, dtype=float) for c in covariates]
    knot_list = [_knots(c, spec.n_basis, spec.degree) for c in covariates]
    X, centers = _assemble(covariates, knot_list, spec)
    lambdas = np.full(len(covariates), float(lam))
    beta, mu, edf = _pirls(y, X, _penalty_matrix(spec, lambdas), spec)
    return GAMFit(
        spec=spec, knot_list=knot_list, centers=centers, beta=beta,
        lambdas=lambdas, edf=edf, deviance=_poisson_deviance(y, mu),
    )
