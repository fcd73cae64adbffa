"""Continuation-value surrogates: Gaussian process and thin-plate spline.

Both surrogates expose ``predict`` (posterior/fitted mean) and
``predict_gradient`` (its analytic spatial derivative); the gradient feeds
the target-level root search used for linear impulse costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import brentq, minimize

from .errors import (CholeskyFailure, DegenerateDesign, SingularSystem,
                     SolverError, TooFewSites)

_LOG2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------

@dataclass
class GpHyper:
    lengthscales: np.ndarray  # (dim,)
    signal_var: float
    noise_var: float


def _scaled(x, lengthscales):
    return np.asarray(x, dtype=float) / lengthscales


def _sqdist(a_scaled, b_scaled):
    aa = np.sum(a_scaled**2, axis=1)[:, None]
    bb = np.sum(b_scaled**2, axis=1)[None, :]
    d2 = aa + bb - 2.0 * a_scaled @ b_scaled.T
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kernel(kind, a_scaled, b_scaled, signal_var):
    d2 = _sqdist(a_scaled, b_scaled)
    if kind == "se":
        return signal_var * np.exp(-0.5 * d2)
    # matern52
    s = np.sqrt(d2)
    t = np.sqrt(5.0) * s
    return signal_var * (1.0 + t + t**2 / 3.0) * np.exp(-t)


class GpSurrogate:
    """Gaussian-process posterior mean with a constant prior mean."""

    def __init__(self, train_x, train_y, hyper: GpHyper, mean_const: float,
                 alpha: np.ndarray, nugget: float, kernel: str = "se",
                 chol=None, diag: Optional[dict] = None):
        self.train_x = np.asarray(train_x, dtype=float)
        if self.train_x.ndim == 1:
            self.train_x = self.train_x[:, None]
        self.train_y = np.asarray(train_y, dtype=float)
        self.hyper = hyper
        self.mean_const = float(mean_const)
        self.alpha = np.asarray(alpha, dtype=float)
        self.nugget = float(nugget)
        self.kernel = kernel
        self.chol = chol
        self.diag = diag or {}
        self._xs = _scaled(self.train_x, hyper.lengthscales)

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    def predict(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        ks = _kernel(self.kernel, _scaled(x, self.hyper.lengthscales), self._xs,
                     self.hyper.signal_var)
        return self.mean_const + ks @ self.alpha

    def predict_gradient(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        ls = self.hyper.lengthscales
        xs = _scaled(x, ls)
        diff = xs[:, None, :] - self._xs[None, :, :]  # (m, n, d)
        if self.kernel == "se":
            k = self.hyper.signal_var * np.exp(-0.5 * np.sum(diff**2, axis=2))
            w = -k * self.alpha[None, :]
        else:
            s = np.sqrt(np.sum(diff**2, axis=2))
            t = np.sqrt(5.0) * s
            w = -self.hyper.signal_var * (5.0 / 3.0) * (1.0 + t) * np.exp(-t)
            w = w * self.alpha[None, :]
        return np.einsum("mn,mnd->md", w, diff) / ls[None, :]


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.ndim == 1:
        x = x[:, None] if dim == 1 else x[None, :]
    if x.shape[1] != dim:
        raise ValueError(f"points must have {dim} coordinates")
    return x


def _collapse_duplicates(x, y):
    uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    if len(uniq) == len(x):
        return x, y
    out = np.empty(len(uniq))
    for g in range(len(uniq)):
        vals = y[inverse == g]
        if np.ptp(vals) != 0.0:
            raise DegenerateDesign("duplicate sites with conflicting responses")
        out[g] = vals[0]
    return uniq, out


def _chol_with_escalation(corr, signal_var, noise_var, n):
    """Cholesky of signal_var*corr + noise_var*I, escalating the jitter."""
    nugget = 1e-8 * signal_var
    while True:
        k = signal_var * corr + (noise_var + nugget) * np.eye(n)
        try:
            return cho_factor(k, lower=True), nugget
        except np.linalg.LinAlgError:
            nugget *= 10.0
            if nugget > 1e-2 * signal_var:
                raise CholeskyFailure("kernel matrix not positive definite")


def fit_gp(train_x, train_y, seed: int = 0, restarts: int = 3, kernel: str = "se",
           noise_hint: Optional[float] = None) -> GpSurrogate:
    """Fit GP hyperparameters by maximizing the marginal likelihood.

    Bounded multi-start L-BFGS over log-parameters; the constant mean is
    profiled out in closed form.  ``noise_hint`` seeds the observation-noise
    variance (e.g. replicate variance divided by n_rep).
    """
    x = np.asarray(train_x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(train_y, dtype=float)
    if len(x) < 5:
        raise TooFewSites("GP fit requires at least 5 sites")
    x, y = _collapse_duplicates(x, y)
    n, d = x.shape
    if kernel not in ("se", "matern52"):
        raise ValueError(f"unknown kernel {kernel!r}")

    ranges = np.ptp(x, axis=0)
    if np.any(ranges <= 0):
        raise DegenerateDesign("training sites are collinear along a coordinate")
    var_y = max(float(np.var(y)), 1e-12)

    lo = np.log(np.concatenate([0.05 * ranges, [1e-4 * var_y, 1e-8 * var_y]]))
    hi = np.log(np.concatenate([5.0 * ranges, [1e4 * var_y, 1.0 * var_y]]))
    bounds = list(zip(lo, hi))
    ones = np.ones(n)

    def nll(theta):
        ls = np.exp(theta[:d])
        sv, nv = np.exp(theta[d]), np.exp(theta[d + 1])
        corr = _kernel(kernel, _scaled(x, ls), _scaled(x, ls), 1.0)
        try:
            cf, _ = _chol_with_escalation(corr, sv, nv, n)
        except CholeskyFailure:
            return 1e10
        k1 = cho_solve(cf, ones)
        ky = cho_solve(cf, y)
        beta0 = (ones @ ky) / (ones @ k1)
        resid = y - beta0
        quad = resid @ cho_solve(cf, resid)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        return 0.5 * (quad + logdet + n * _LOG2PI)

    nv0 = noise_hint if noise_hint and noise_hint > 0 else 1e-2 * var_y
    nv0 = float(np.clip(nv0, 1e-8 * var_y, var_y))
    starts = [np.log(np.concatenate([0.5 * ranges, [var_y, nv0]]))]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    for _ in range(max(restarts, 3) - 1):
        starts.append(lo + rng.random(d + 2) * (hi - lo))

    best, best_val = None, np.inf
    for s0 in starts:
        res = minimize(nll, np.clip(s0, lo, hi), method="L-BFGS-B", bounds=bounds)
        if res.fun < best_val:
            best, best_val = res.x, res.fun

    ls = np.exp(best[:d])
    sv, nv = float(np.exp(best[d])), float(np.exp(best[d + 1]))
    corr = _kernel(kernel, _scaled(x, ls), _scaled(x, ls), 1.0)
    cf, nugget = _chol_with_escalation(corr, sv, nv, n)
    k1 = cho_solve(cf, ones)
    ky = cho_solve(cf, y)
    beta0 = float((ones @ ky) / (ones @ k1))
    alpha = cho_solve(cf, y - beta0)
    hyper = GpHyper(lengthscales=ls, signal_var=sv, noise_var=nv)
    diag = {"nll": float(best_val), "nugget": nugget, "restarts": len(starts)}
    return GpSurrogate(x, y, hyper, beta0, alpha, nugget, kernel=kernel,
                       chol=cf, diag=diag)


# ---------------------------------------------------------------------------
# Thin-plate / cubic spline
# ---------------------------------------------------------------------------

def _tps_eta(r2):
    """r^2 log r evaluated from squared distances, zero at r = 0."""
    out = np.zeros_like(r2)
    mask = r2 > 0
    out[mask] = 0.5 * r2[mask] * np.log(r2[mask])
    return out


class TpsSurrogate:
    """Smoothing spline f(x) = b0 + b.z + sum_n a_n eta(|z - z_n|).

    Coordinates are rescaled to the unit box internally; the radial kernel is
    r^2 log r ("tps", any dim) or |r|^3 ("cubic", dim 1 only).  Side
    conditions sum(a) = 0 and sum(a z) = 0 hold by construction.
    """

    def __init__(self, knots, coef_alpha, coef_beta, lam, lo, hi,
                 kernel: str = "tps", diag: Optional[dict] = None):
        self.knots = np.asarray(knots, dtype=float)
        if self.knots.ndim == 1:
            self.knots = self.knots[:, None]
        self.coef_alpha = np.asarray(coef_alpha, dtype=float)
        self.coef_beta = np.asarray(coef_beta, dtype=float)
        self.lam = float(lam)
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.kernel = kernel
        self.diag = diag or {}
        self._zk = (self.knots - self.lo) / (self.hi - self.lo)

    @property
    def dim(self) -> int:
        return self.knots.shape[1]

    def _z(self, x):
        x = _as_points(x, self.dim)
        return (x - self.lo) / (self.hi - self.lo)

    def predict(self, x) -> np.ndarray:
        z = self._z(x)
        out = self.coef_beta[0] + z @ self.coef_beta[1:]
        # accumulate the radial part in chunks to bound memory
        step = max(1, int(2e6) // max(len(self._zk), 1))
        for i in range(0, len(z), step):
            blk = z[i:i + step]
            if self.kernel == "cubic":
                u = blk[:, 0][:, None] - self._zk[:, 0][None, :]
                e = np.abs(u) ** 3
            else:
                d2 = _sqdist(blk, self._zk)
                e = _tps_eta(d2)
            out[i:i + step] += e @ self.coef_alpha
        return out

    def predict_gradient(self, x) -> np.ndarray:
        z = self._z(x)
        grad = np.tile(self.coef_beta[1:], (len(z), 1))
        if self.kernel == "cubic":
            u = z[:, 0][:, None] - self._zk[:, 0][None, :]
            grad[:, 0] += (3.0 * u * np.abs(u)) @ self.coef_alpha
        else:
            diff = z[:, None, :] - self._zk[None, :, :]  # (m, n, d)
            r2 = np.sum(diff**2, axis=2)
            w = np.zeros_like(r2)
            mask = r2 > 0
            w[mask] = np.log(r2[mask]) + 1.0
            grad += np.einsum("mn,mnd->md", w * self.coef_alpha[None, :], diff)
        return grad / (self.hi - self.lo)[None, :]


def fit_tps(train_x, train_y, lam="gcv", kernel: str = "tps",
            n_grid: int = 30, n_knots: Optional[int] = None) -> TpsSurrogate:
    """Fit a thin-plate smoothing spline.

    lam      "gcv" selects the penalty on a 30-point log-grid by generalized
             cross-validation; "df:N" picks the penalty whose effective
             degrees of freedom equal N (capped basis capacity, akin to a
             low-rank smoother); a float fixes it directly (0 interpolates)
    kernel   "tps" (r^2 log r) or "cubic" (|r|^3, dim 1 only)
    n_knots  optional basis-size cap: the spline is expanded on that many
             knots placed at empirical quantiles of the (collapsed) sites
             instead of one knot per site, then fitted to all sites by
             penalized least squares; None keeps the full knot set
    """
    x = np.asarray(train_x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(train_y, dtype=float)
    x, y = _collapse_duplicates(x, y)
    n, d = x.shape
    if kernel == "cubic" and d != 1:
        raise SingularSystem("cubic kernel is one-dimensional only")
    if kernel not in ("tps", "cubic"):
        raise ValueError(f"unknown kernel {kernel!r}")
    m = d + 1
    if n < m + 2:
        raise TooFewSites("spline fit requires at least dim + 3 sites")

    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.any(hi <= lo):
        raise DegenerateDesign("training sites are collinear along a coordinate")
    z = (x - lo) / (hi - lo)

    if n_knots is not None:
        qn = int(n_knots)
        if qn < m + 2:
            raise ValueError("n_knots must be at least dim + 3")
        if qn < n:
            return _fit_tps_subknots(x, y, z, lo, hi, kernel, lam, n_grid, qn)

    if kernel == "cubic":
        u = z[:, 0][:, None] - z[:, 0][None, :]
        E = np.abs(u) ** 3
    else:
        E = _tps_eta(_sqdist(z, z))
    T = np.hstack([np.ones((n, 1)), z])

    q, r = np.linalg.qr(T, mode="complete")
    r_lead = r[:m, :m]
    if np.min(np.abs(np.diag(r_lead))) < 1e-12 * max(1.0, np.max(np.abs(r_lead))):
        raise SingularSystem("polynomial part of the spline system is singular")
    q1, zbasis = q[:, :m], q[:, m:]

    B = zbasis.T @ E @ zbasis
    B = 0.5 * (B + B.T)
    try:
        w, U = np.linalg.eigh(B)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    EZU = E @ (zbasis @ U)  # (n, n-m), reused across the lambda grid
    b = U.T @ (zbasis.T @ y)

    def solve_at(lam_val):
        gamma_u = b / (w + lam_val)
        a = zbasis @ (U @ gamma_u)
        fit_radial = EZU @ gamma_u
        resid = y - fit_radial
        resid = resid - q1 @ (q1.T @ resid)
        rss = float(resid @ resid)
        df = m + float(np.sum(w / (w + lam_val)))
        return a, rss, df

    if lam == "gcv":
        wmax = max(float(np.max(np.abs(w))), 1e-12)
        grid = np.geomspace(1e-10 * wmax, 1e4 * wmax, n_grid)
        scores = []
        for lv in grid:
            _, rss, df = solve_at(lv)
            denom = max(n - df, 1e-9)
            scores.append(n * rss / denom**2)
        lam_val = float(grid[int(np.argmin(scores))])
        gcv_score = float(min(scores))
    elif isinstance(lam, str) and lam.startswith("df:"):
        target = float(lam[3:])
        if not m < target < n:
            raise ValueError(f"df target must lie in ({m}, {n})")
        wmax = max(float(np.max(np.abs(w))), 1e-12)
        lam_lo, lam_hi = 1e-10 * wmax, 1e12 * wmax

        def df_gap(lv):
            return m + float(np.sum(w / (w + lv))) - target

        if df_gap(lam_lo) <= 0.0:      # even the lightest penalty is at/below target
            lam_val = lam_lo
        else:
            lam_val = float(brentq(df_gap, lam_lo, lam_hi))
        gcv_score = np.nan
    else:
        lam_val = float(lam)
        if lam_val < 0:
            raise ValueError("lambda must be nonnegative")
        gcv_score = np.nan

    if lam_val == 0.0 and np.any(w <= 0):
        w_floor = max(float(np.max(np.abs(w))), 1.0) * 1e-12
        lam_val = w_floor  # interpolation needs a whisker of regularization
    a, rss, df = solve_at(lam_val)
    beta = np.linalg.solve(r_lead, q1.T @ (y - E @ a - lam_val * a))
    diag = {"lambda": lam_val, "df": df, "rss": rss, "gcv": gcv_score}
    return TpsSurrogate(x, a, beta, lam_val, lo, hi, kernel=kernel, diag=diag)


def _fit_tps_subknots(x, y, z, lo, hi, kernel, lam, n_grid, qn):
    """Penalized regression spline on a quantile-knot subset of the sites.

    Same radial expansion and curvature penalty as the full smoother, but
    with the basis anchored at ``qn`` knots taken index-equispaced through
    the sorted sites; all sites still enter the least-squares term.
    """
    n, d = z.shape
    m = d + 1
    order = np.lexsort(z.T[::-1])
    pick = np.unique(np.round(np.linspace(0, n - 1, qn)).astype(int))
    sel = order[pick]
    zk = z[sel]
    knots = x[sel]
    if kernel == "cubic":
        uk = zk[:, 0][:, None] - zk[:, 0][None, :]
        Ek = np.abs(uk) ** 3
        ux = z[:, 0][:, None] - zk[:, 0][None, :]
        Kx = np.abs(ux) ** 3
    else:
        Ek = _tps_eta(_sqdist(zk, zk))
        Kx = _tps_eta(_sqdist(z, zk))
    Tk = np.hstack([np.ones((len(zk), 1)), zk])
    qq, rr = np.linalg.qr(Tk, mode="complete")
    r_lead = rr[:m, :m]
    if np.min(np.abs(np.diag(r_lead))) < 1e-12 * max(1.0, np.max(np.abs(r_lead))):
        raise SingularSystem("knot polynomial block is singular")
    null_b = qq[:, m:]                      # (q, q - m)
    G = np.hstack([np.ones((n, 1)), z, Kx @ null_b])
    p = G.shape[1]
    S = np.zeros((p, p))
    pen = null_b.T @ Ek @ null_b
    S[m:, m:] = 0.5 * (pen + pen.T)
    Qg, Rg = np.linalg.qr(G, mode="reduced")
    rdiag = np.abs(np.diag(Rg))
    if np.min(rdiag) < 1e-14 * np.max(rdiag):
        raise SingularSystem("regression-spline basis is rank deficient")
    W1 = solve_triangular(Rg.T, S, lower=True)        # R^{-T} S
    C = solve_triangular(Rg.T, W1.T, lower=True).T    # R^{-T} S R^{-1}
    C = 0.5 * (C + C.T)
    dvals, V = np.linalg.eigh(C)
    dvals = np.clip(dvals, 0.0, None)
    t = V.T @ (Qg.T @ y)
    M = Qg @ V                              # fitted values = M @ shrunk coords

    def solve_at(lam_val):
        shrink = 1.0 / (1.0 + lam_val * dvals)
        ghat = M @ (t * shrink)
        rss = float(np.sum((y - ghat) ** 2))
        df = float(np.sum(shrink))
        return shrink, rss, df

    dmax = max(float(dvals.max()), 1e-300)
    dpos = dvals[dvals > dmax * 1e-15]
    dmin = float(dpos.min()) if len(dpos) else dmax
    lam_lo, lam_hi = 1e-10 / dmax, 1e4 / dmin
    if lam == "gcv":
        grid = np.geomspace(lam_lo, lam_hi, n_grid)
        scores = []
        for lv in grid:
            _, rss, df = solve_at(lv)
            denom = max(n - df, 1e-9)
            scores.append(n * rss / denom**2)
        lam_val = float(grid[int(np.argmin(scores))])
        gcv_score = float(min(scores))
    elif isinstance(lam, str) and lam.startswith("df:"):
        target = float(lam[3:])
        if not m < target < p:
            raise ValueError(f"df target must lie in ({m}, {p})")

        def df_gap(lv):
            return solve_at(lv)[2] - target

        if df_gap(lam_lo) <= 0.0:
            lam_val = lam_lo
        else:
            lam_val = float(brentq(df_gap, lam_lo, 1e12 / dmin))
        gcv_score = np.nan
    else:
        lam_val = float(lam)
        if lam_val < 0:
            raise ValueError("lambda must be nonnegative")
        gcv_score = np.nan

    shrink, rss, df = solve_at(lam_val)
    coef = solve_triangular(Rg, V @ (t * shrink), lower=False)
    beta = coef[:m]
    alpha = null_b @ coef[m:]
    diag = {"lambda": lam_val, "df": df, "rss": rss, "gcv": gcv_score,
            "n_knots": len(zk)}
    return TpsSurrogate(knots, alpha, beta, lam_val, lo, hi, kernel=kernel,
                        diag=diag)


# ---------------------------------------------------------------------------
# Per-step stack
# ---------------------------------------------------------------------------

def predict(surrogate, x):
    return surrogate.predict(x)


def predict_gradient(surrogate, x):
    return surrogate.predict_gradient(x)


@dataclass
class SurrogateStack:
    """Fitted continuation surrogates per step plus the terminal map.

    ``predict(K, x)`` evaluates the terminal condition; each fitted entry
    approximates the pure continuation value Qhat(k, x) — the discounted
    reward collected strictly after t_k, excluding the running reward
    pi(x) dt accrued at t_k itself.  Steps without a fitted entry (the
    trainer skips step 0 on multi-period problems) hold ``None``.
    ``domains[k]`` records the training box used at step k (decision
    queries are clamped into it).
    """

    n_steps: int
    dim: int
    fits: list
    terminal: Callable
    domains: np.ndarray  # (K, dim, 2)
    zfits: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.fits) != self.n_steps:
            raise ValueError("need one surrogate per step")
        if not self.zfits:
            self.zfits = [None] * self.n_steps

    def predict(self, k: int, x) -> np.ndarray:
        if k == self.n_steps:
            return np.asarray(self.terminal(_as_points(x, self.dim)), dtype=float)
        if self.fits[k] is None:
            raise SolverError(f"no surrogate fitted at step {k}")
        return self.fits[k].predict(x)

    def gradient(self, k: int, x) -> np.ndarray:
        if k == self.n_steps:
            raise ValueError("terminal gradient not available")
        if self.fits[k] is None:
            raise SolverError(f"no surrogate fitted at step {k}")
        return self.fits[k].predict_gradient(x)

    def domain(self, k: int) -> np.ndarray:
        return self.domains[min(k, self.n_steps - 1)]

    @property
    def has_zhat(self) -> bool:
        return any(f is not None for f in self.zfits)
