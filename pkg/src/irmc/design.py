"""Training designs: where the regression responses are simulated.

A design is a set of distinct sites in a box domain, each replicated n_rep
times.  Responses are pre-averaged across replicates before fitting, which
divides the effective observation noise by n_rep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import qmc

from .errors import DomainDegenerate, TooFewSites


class DesignScheme(str, Enum):
    EXPLICIT_LATTICE = "explicit_lattice"
    IID_UNIFORM = "iid_uniform"
    LATIN_HYPERCUBE = "latin_hypercube"
    SOBOL = "sobol"


@dataclass(frozen=True)
class TrainingDesign:
    unique_sites: np.ndarray  # (n_unique, dim)
    n_rep: int
    scheme: DesignScheme
    domain: np.ndarray  # (dim, 2) lower/upper bounds

    @property
    def n_unique(self) -> int:
        return self.unique_sites.shape[0]

    @property
    def dim(self) -> int:
        return self.unique_sites.shape[1]

    def replicated(self) -> np.ndarray:
        """Sites repeated n_rep times, replicates of site i contiguous."""
        return np.repeat(self.unique_sites, self.n_rep, axis=0)


def _check_domain(domain) -> np.ndarray:
    dom = np.atleast_2d(np.asarray(domain, dtype=float))
    if dom.shape[1] != 2:
        raise DomainDegenerate("domain must be a list of (low, high) pairs")
    if np.any(~np.isfinite(dom)) or np.any(dom[:, 1] <= dom[:, 0]):
        raise DomainDegenerate("domain bounds must be finite with high > low")
    return dom


def build_design(
    scheme,
    domain,
    n_unique: int,
    n_rep: int,
    seed=None,
    sites=None,
) -> TrainingDesign:
    """Construct a training design.

    scheme    one of DesignScheme (or its string value)
    domain    (dim, 2) bounds; explicit sites must fall inside
    n_unique  number of distinct sites (ignored when sites are given)
    n_rep     replicates per site, >= 1
    seed      randomizes iid/LHS draws and scrambles Sobol; None leaves
              Sobol unscrambled
    sites     explicit site list for the EXPLICIT_LATTICE scheme
    """
    scheme = DesignScheme(scheme)
    dom = _check_domain(domain)
    dim = dom.shape[0]
    if n_rep < 1:
        raise TooFewSites("n_rep must be >= 1")

    if scheme == DesignScheme.EXPLICIT_LATTICE:
        if sites is None:
            raise TooFewSites("explicit_lattice requires a site list")
        pts = np.asarray(sites, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[1] != dim:
            raise DomainDegenerate("site dimension does not match the domain")
        if np.any(pts < dom[:, 0] - 1e-12) or np.any(pts > dom[:, 1] + 1e-12):
            raise DomainDegenerate("explicit sites fall outside the domain")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise TooFewSites("explicit sites must be pairwise distinct")
    else:
        if n_unique < 2:
            raise TooFewSites("need at least 2 unique sites")
        if scheme == DesignScheme.IID_UNIFORM:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
            unit = rng.random((n_unique, dim))
        elif scheme == DesignScheme.LATIN_HYPERCUBE:
            unit = qmc.LatinHypercube(d=dim, seed=seed).random(n_unique)
        else:  # SOBOL
            eng = qmc.Sobol(d=dim, scramble=seed is not None, seed=seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                unit = eng.random(n_unique)
        pts = dom[:, 0] + unit * (dom[:, 1] - dom[:, 0])

    if len(pts) < 2:
        raise TooFewSites("need at least 2 unique sites")
    return TrainingDesign(unique_sites=pts, n_rep=int(n_rep), scheme=scheme, domain=dom)


def pre_average(responses: np.ndarray):
    """Average replicate responses per site.

    responses  (n_unique, n_rep)
    returns    (means, emp_var): per-site sample mean and variance (ddof=1;
               zero when n_rep == 1)
    """
    y = np.asarray(responses, dtype=float)
    if y.ndim != 2:
        raise ValueError("responses must be (n_unique, n_rep)")
    means = y.mean(axis=1)
    if y.shape[1] > 1:
        emp_var = y.var(axis=1, ddof=1)
    else:
        emp_var = np.zeros(y.shape[0])
    return means, emp_var


def federico_lattice() -> np.ndarray:
    """The 600-site production lattice: dense below 18, sparse up to 90."""
    return np.concatenate([np.linspace(1.0, 18.0, 350), np.linspace(18.2, 90.0, 250)])


def faustmann_lattice() -> np.ndarray:
    """The 100-site stand-value lattice: evenly spaced on [-0.25, 2.5]."""
    return np.linspace(-0.25, 2.5, 100)
