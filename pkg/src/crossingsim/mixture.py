"""Box-truncated Gaussian mixture models.

Implements the interaction-model machinery: density evaluation, maximum
likelihood fitting by expectation-maximization with truncation-aware
moment corrections, BIC-based component selection, marginalization,
exact Gaussian conditioning, seeded sampling, and mode search on 1-D
conditionals.

Truncation convention: a truncated mixture is the untruncated mixture
density restricted to an axis-aligned box and renormalized by the total
box mass ``c = sum_k w_k * mass_k``.  This matches data produced by
rejection: draw from the untruncated mixture, keep points inside the
box.  The EM treats the discarded draws as missing data, which yields
closed-form M-step corrections built from the first and second moments
of each component over the box.

Moment evaluation is exact for one-dimensional components and Monte
Carlo (seeded rejection sampling) otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp, ndtr

from crossingsim.seeds import derive_seed

__all__ = [
    "TruncationBox",
    "GaussianComponent",
    "GaussianMixture",
    "TruncatedMoments",
    "FitConfig",
    "FitDiagnostics",
    "SelectionResult",
    "DegenerateTruncationError",
    "ConditioningError",
    "truncated_moments",
    "em_fit",
    "bic",
    "select_components",
    "conditional_mode",
]

_LOG_2PI = math.log(2.0 * math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Internal master seed for model-level normalization constants.  Fixed so
# that two models with identical parameters report identical densities in
# every process.
_MASS_SEED = 0x63726F73


class DegenerateTruncationError(ValueError):
    """The truncation box captures essentially no probability mass."""


class ConditioningError(ValueError):
    """Conditioning failed because the observed-block covariance is singular."""


# ---------------------------------------------------------------------------
# Truncation box
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationBox:
    """Axis-aligned truncation region ``lower[i] <= y[i] <= upper[i]``.

    Bounds may be infinite on either side; ``lower`` must be strictly
    below ``upper`` in every dimension.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.isnan(lower).any() or np.isnan(upper).any():
            raise ValueError("box bounds must not be NaN")
        if not (lower < upper).all():
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

    @classmethod
    def positive_orthant(cls, dim: int) -> "TruncationBox":
        """Box [0, inf) in every dimension."""
        return cls(np.zeros(dim), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def is_unbounded(self) -> bool:
        return bool(np.isneginf(self.lower).all() and np.isposinf(self.upper).all())

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean inclusion test; accepts one point or a stack of rows."""
        pts = np.asarray(points, dtype=float)
        squeeze = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, box has {self.dim}")
        inside = ((pts >= self.lower) & (pts <= self.upper)).all(axis=1)
        return bool(inside[0]) if squeeze else inside

    def sliced(self, dims: Sequence[int]) -> "TruncationBox":
        """Box restricted to a subset of dimensions, in the given order."""
        idx = np.asarray(dims, dtype=int)
        return TruncationBox(self.lower[idx].copy(), self.upper[idx].copy())


# ---------------------------------------------------------------------------
# Components and moments
# ---------------------------------------------------------------------------


def _validate_covariance(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {cov.shape}")
    if not np.isfinite(cov).all():
        raise ValueError(f"{what} must be finite")
    scale = float(np.abs(cov).max()) or 1.0
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} must be positive definite") from exc
    return cov


@dataclass(frozen=True)
class GaussianComponent:
    """Mean vector and symmetric positive-definite covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1:
            raise ValueError("mean must be a 1-D array")
        if not np.isfinite(mean).all():
            raise ValueError("mean must be finite")
        cov = _validate_covariance(self.covariance, "covariance")
        if cov.shape[0] != mean.shape[0]:
            raise ValueError("mean and covariance dimensions disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        self.mean.setflags(write=False)
        self.covariance.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class TruncatedMoments:
    """Box mass plus mean and covariance of the box-restricted normal."""

    mass: float
    mean: np.ndarray
    covariance: np.ndarray


def _std_pdf(x: float) -> float:
    if math.isinf(x):
        return 0.0
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def _x_times_pdf(x: float) -> float:
    # x * phi(x) -> 0 in both tails; guard the inf * 0 indeterminate form.
    if math.isinf(x):
        return 0.0
    return x * _std_pdf(x)


def _interval_mass(alpha: float, beta: float) -> float:
    # Difference of normal CDFs, evaluated on whichever tail avoids cancellation.
    if alpha >= 0.0:
        return float(ndtr(-alpha) - ndtr(-beta))
    return float(ndtr(beta) - ndtr(alpha))


def _moments_1d(mean: float, var: float, lo: float, hi: float) -> TruncatedMoments:
    """Closed-form mass, mean, and variance of a box-truncated 1-D normal."""
    sigma = math.sqrt(var)
    alpha = (lo - mean) / sigma if math.isfinite(lo) else -math.inf
    beta = (hi - mean) / sigma if math.isfinite(hi) else math.inf
    mass = _interval_mass(alpha, beta)
    if mass < 1e-300:
        raise DegenerateTruncationError(
            f"box [{lo}, {hi}] captures mass {mass} of N({mean}, {var})"
        )
    pdf_lo, pdf_hi = _std_pdf(alpha), _std_pdf(beta)
    ratio = (pdf_lo - pdf_hi) / mass
    t_mean = mean + sigma * ratio
    t_var = var * (1.0 + (_x_times_pdf(alpha) - _x_times_pdf(beta)) / mass - ratio * ratio)
    return TruncatedMoments(
        mass=mass, mean=np.array([t_mean]), covariance=np.array([[t_var]])
    )


def _moments_mc(
    mean: np.ndarray,
    cov: np.ndarray,
    box: TruncationBox,
    n_accepted: int,
    seed: int,
    max_draws: Optional[int] = None,
) -> TruncatedMoments:
    """Rejection-sampled moments of a box-truncated multivariate normal."""
    dim = mean.shape[0]
    rng = np.random.Generator(np.random.PCG64(seed))
    chol = np.linalg.cholesky(cov)
    budget = max_draws if max_draws is not None else max(200 * n_accepted, 2_000_000)
    kept: list[np.ndarray] = []
    drawn = 0
    accepted = 0
    chunk = max(4 * n_accepted, 8192)
    while accepted < n_accepted and drawn < budget:
        take = min(chunk, budget - drawn)
        z = rng.standard_normal((take, dim))
        x = mean + z @ chol.T
        inside = box.contains(x)
        drawn += take
        hits = x[inside]
        if hits.size:
            kept.append(hits)
            accepted += hits.shape[0]
        # Scale the next chunk to the observed acceptance rate.
        rate = max(accepted / drawn, 1e-3)
        chunk = int(min(max((n_accepted - accepted) / rate * 1.2, 8192), 4_000_000))
    if accepted < max(2, n_accepted // 200):
        raise DegenerateTruncationError(
            f"rejection sampling accepted {accepted}/{drawn} draws; "
            "box mass is too small to estimate"
        )
    sample = np.concatenate(kept, axis=0)
    mass = accepted / drawn
    t_mean = sample.mean(axis=0)
    centered = sample - t_mean
    t_cov = centered.T @ centered / sample.shape[0]
    return TruncatedMoments(mass=mass, mean=t_mean, covariance=t_cov)


def truncated_moments(
    component: GaussianComponent,
    box: TruncationBox,
    method: str = "auto",
    n_accepted: int = 20_000,
    seed: int = 0,
) -> TruncatedMoments:
    """Mass, mean, and covariance of a component restricted to a box.

    Args:
        component: untruncated Gaussian parameters.
        box: truncation region; must match the component dimension.
        method: "exact" (1-D closed forms, or any dimension with an
            unbounded box), "mc" (seeded rejection sampling), or "auto"
            which picks exact where available and Monte Carlo otherwise.
        n_accepted: accepted-draw target for the Monte Carlo path.
        seed: Monte Carlo seed; identical inputs give identical output.

    Raises:
        DegenerateTruncationError: box mass below 1e-300 (exact path) or
            too few accepted draws within the sampling budget (MC path).
    """
    if box.dim != component.dim:
        raise ValueError("box dimension does not match component dimension")
    if method not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown method {method!r}")
    if box.is_unbounded and method != "mc":
        return TruncatedMoments(
            mass=1.0, mean=component.mean.copy(), covariance=component.covariance.copy()
        )
    if method == "exact" or (method == "auto" and component.dim == 1):
        if component.dim != 1 and not box.is_unbounded:
            raise ValueError("exact moments are only available for 1-D components")
        return _moments_1d(
            float(component.mean[0]),
            float(component.covariance[0, 0]),
            float(box.lower[0]),
            float(box.upper[0]),
        )
    return _moments_mc(component.mean, component.covariance, box, n_accepted, seed)


# ---------------------------------------------------------------------------
# Mixture model
# ---------------------------------------------------------------------------

_WEIGHT_SUM_TOL = 1e-12


class GaussianMixture:
    """Weighted Gaussian mixture, optionally truncated to a box.

    Instances are treated as immutable: parameter arrays are stored
    read-only and derived quantities (Cholesky factors, box masses) are
    cached on first use, so concurrent reads are safe.
    """

    def __init__(
        self,
        weights: np.ndarray,
        means: np.ndarray,
        covariances: np.ndarray,
        truncation: Optional[TruncationBox] = None,
        fit_seed: Optional[int] = None,
    ) -> None:
        weights = np.asarray(weights, dtype=float).copy()
        means = np.asarray(means, dtype=float).copy()
        covariances = np.asarray(covariances, dtype=float).copy()
        if weights.ndim != 1:
            raise ValueError("weights must be 1-D")
        n_components = weights.shape[0]
        if n_components == 0:
            raise ValueError("mixture needs at least one component")
        if means.ndim != 2 or means.shape[0] != n_components:
            raise ValueError("means must have shape (n_components, dim)")
        dim = means.shape[1]
        if covariances.shape != (n_components, dim, dim):
            raise ValueError("covariances must have shape (n_components, dim, dim)")
        if not np.isfinite(weights).all() or (weights < 0).any():
            raise ValueError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        if not np.isfinite(means).all():
            raise ValueError("means must be finite")
        for k in range(n_components):
            _validate_covariance(covariances[k], f"covariance[{k}]")
        if truncation is not None and truncation.dim != dim:
            raise ValueError("truncation box dimension does not match model")
        for arr in (weights, means, covariances):
            arr.setflags(write=False)
        self.weights = weights
        self.means = means
        self.covariances = covariances
        self.truncation = truncation
        self.fit_seed = fit_seed
        self._chols: Optional[np.ndarray] = None
        self._box_masses: Optional[np.ndarray] = None

    # -- basic introspection ------------------------------------------------

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(self.means[k].copy(), self.covariances[k].copy())
            for k in range(self.n_components)
        ]

    def __repr__(self) -> str:
        kind = "truncated" if self.truncation is not None else "untruncated"
        return f"GaussianMixture(K={self.n_components}, d={self.dim}, {kind})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        same_box = (self.truncation is None) == (other.truncation is None)
        if same_box and self.truncation is not None:
            same_box = np.array_equal(
                self.truncation.lower, other.truncation.lower
            ) and np.array_equal(self.truncation.upper, other.truncation.upper)
        return (
            same_box
            and self.fit_seed == other.fit_seed
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.covariances, other.covariances)
        )

    # -- density ------------------------------------------------------------

    def _cholesky_factors(self) -> np.ndarray:
        if self._chols is None:
            self._chols = np.linalg.cholesky(self.covariances)
        return self._chols

    def _component_log_densities(self, rows: np.ndarray) -> np.ndarray:
        """Untruncated per-component log densities, shape (n, K)."""
        chols = self._cholesky_factors()
        n = rows.shape[0]
        out = np.empty((n, self.n_components))
        for k in range(self.n_components):
            chol = chols[k]
            solved = solve_triangular(
                chol, (rows - self.means[k]).T, lower=True, check_finite=False
            )
            log_det = np.log(np.diagonal(chol)).sum()
            out[:, k] = -0.5 * self.dim * _LOG_2PI - log_det - 0.5 * (solved * solved).sum(axis=0)
        return out

    def component_box_masses(self, n_accepted: int = 20_000) -> np.ndarray:
        """Per-component probability mass inside the truncation box.

        Exact for 1-D or unbounded boxes; otherwise seeded Monte Carlo.
        The default-precision result is cached because it normalizes
        every truncated density evaluation.
        """
        if self.truncation is None or self.truncation.is_unbounded:
            return np.ones(self.n_components)
        if self._box_masses is not None and n_accepted == 20_000:
            return self._box_masses
        masses = np.array(
            [
                truncated_moments(
                    GaussianComponent(self.means[k], self.covariances[k]),
                    self.truncation,
                    n_accepted=n_accepted,
                    seed=derive_seed(_MASS_SEED, "box-mass", k),
                ).mass
                for k in range(self.n_components)
            ]
        )
        if n_accepted == 20_000:
            self._box_masses = masses
        return masses

    def normalization(self) -> float:
        """Total mixture mass inside the truncation box (1 when untruncated)."""
        if self.truncation is None:
            return 1.0
        return float(self.weights @ self.component_box_masses())

    def _as_rows(self, y: object) -> tuple[np.ndarray, bool]:
        arr = np.asarray(y, dtype=float)
        if arr.ndim == 0:
            if self.dim != 1:
                raise ValueError("scalar input only valid for 1-D models")
            return arr.reshape(1, 1), True
        if arr.ndim == 1:
            if arr.shape[0] != self.dim:
                raise ValueError(f"point has length {arr.shape[0]}, model dim is {self.dim}")
            return arr.reshape(1, self.dim), True
        if arr.ndim == 2 and arr.shape[1] == self.dim:
            return arr, False
        raise ValueError(f"cannot interpret shape {arr.shape} as points of dim {self.dim}")

    def log_density_rows(self, rows: np.ndarray) -> np.ndarray:
        """Log mixture density per row; -inf outside the truncation box."""
        rows = np.asarray(rows, dtype=float)
        # Conditioning can underflow a weight to exactly 0; log it as -inf
        # without tripping numpy's divide warning.
        log_w = np.where(self.weights > 0, np.log(np.maximum(self.weights, 1e-300)), -np.inf)
        log_mix = logsumexp(self._component_log_densities(rows) + log_w, axis=1)
        if self.truncation is not None:
            log_mix = log_mix - math.log(self.normalization())
            log_mix = np.where(self.truncation.contains(rows), log_mix, -np.inf)
        return log_mix

    def density(self, y: object) -> np.ndarray | float:
        """Mixture density at one point (scalar result) or stacked rows."""
        rows, single = self._as_rows(y)
        values = np.exp(self.log_density_rows(rows))
        return float(values[0]) if single else values

    def log_likelihood(self, data: np.ndarray) -> float:
        """Sum of log densities; 0.0 for an empty data set.

        Raises:
            ValueError: under truncation, if any row falls outside the box
                (its contribution would be -inf).
        """
        rows = np.asarray(data, dtype=float)
        if rows.size == 0:
            return 0.0
        rows = np.atleast_2d(rows)
        if rows.shape[1] != self.dim:
            raise ValueError(f"data has dimension {rows.shape[1]}, model has {self.dim}")
        if self.truncation is not None:
            inside = self.truncation.contains(rows)
            if not inside.all():
                bad = int(np.flatnonzero(~inside)[0])
                raise ValueError(f"row {bad} lies outside the truncation box")
        return float(self.log_density_rows(rows).sum())

    # -- structure operations ------------------------------------------------

    def marginalize(self, dims: Sequence[int]) -> "GaussianMixture":
        """Marginal mixture over ``dims``, in the order given.

        Weights carry over unchanged; under truncation the box is sliced
        to the retained dimensions.
        """
        idx = np.asarray(dims, dtype=int)
        if idx.size == 0:
            raise ValueError("must keep at least one dimension")
        if idx.size != np.unique(idx).size:
            raise ValueError("dims must be unique")
        if (idx < 0).any() or (idx >= self.dim).any():
            raise ValueError(f"dims out of range for model of dim {self.dim}")
        box = self.truncation.sliced(idx) if self.truncation is not None else None
        return GaussianMixture(
            self.weights.copy(),
            self.means[:, idx],
            self.covariances[np.ix_(range(self.n_components), idx, idx)],
            truncation=box,
            fit_seed=self.fit_seed,
        )

    def condition(
        self, observed_dims: Sequence[int], observed_values: Sequence[float]
    ) -> "GaussianMixture":
        """Exact conditional mixture given values on a subset of dimensions.

        Per component the conditional mean and covariance follow the
        Gaussian conditioning identities; component weights are
        reweighted by the untruncated marginal density of the observed
        values (computed in log space, so far-out conditioning values
        still renormalize) and the box is sliced to the free dimensions.

        Raises:
            ValueError: bad dimension subset, or observed values outside
                the truncation box.
            ConditioningError: observed-block covariance is singular.
        """
        obs = np.asarray(observed_dims, dtype=int)
        vals = np.asarray(observed_values, dtype=float)
        if obs.size == 0 or obs.size != np.unique(obs).size:
            raise ValueError("observed_dims must be non-empty and unique")
        if (obs < 0).any() or (obs >= self.dim).any():
            raise ValueError(f"observed_dims out of range for dim {self.dim}")
        if obs.size >= self.dim:
            raise ValueError("observed_dims must be a proper subset of dimensions")
        if vals.shape != (obs.size,) or not np.isfinite(vals).all():
            raise ValueError("observed_values must be finite and match observed_dims")
        free = np.setdiff1d(np.arange(self.dim), obs)
        if self.truncation is not None:
            obs_box = self.truncation.sliced(obs)
            if not obs_box.contains(vals):
                raise ValueError("observed values lie outside the truncation box")

        n_k = self.n_components
        cond_means = np.empty((n_k, free.size))
        cond_covs = np.empty((n_k, free.size, free.size))
        log_w = np.empty(n_k)
        for k in range(n_k):
            mu_o = self.means[k, obs]
            mu_f = self.means[k, free]
            sig_oo = self.covariances[k][np.ix_(obs, obs)]
            sig_fo = self.covariances[k][np.ix_(free, obs)]
            sig_ff = self.covariances[k][np.ix_(free, free)]
            try:
                chol_oo = np.linalg.cholesky(sig_oo)
            except np.linalg.LinAlgError as exc:
                raise ConditioningError(
                    f"observed-block covariance of component {k} is singular"
                ) from exc
            delta = vals - mu_o
            solved_delta = solve_triangular(chol_oo, delta, lower=True, check_finite=False)
            solved_cross = solve_triangular(chol_oo, sig_fo.T, lower=True, check_finite=False)
            cond_means[k] = mu_f + solved_cross.T @ solved_delta
            cond_cov = sig_ff - solved_cross.T @ solved_cross
            cond_covs[k] = 0.5 * (cond_cov + cond_cov.T)
            log_det = np.log(np.diagonal(chol_oo)).sum()
            log_w[k] = (
                math.log(self.weights[k]) if self.weights[k] > 0 else -np.inf
            ) - 0.5 * obs.size * _LOG_2PI - log_det - 0.5 * float(solved_delta @ solved_delta)
        log_w = log_w - logsumexp(log_w)
        new_w = np.exp(log_w)
        new_w = new_w / new_w.sum()
        box = self.truncation.sliced(free) if self.truncation is not None else None
        return GaussianMixture(new_w, cond_means, cond_covs, truncation=box)

    # -- sampling -----------------------------------------------------------

    def sample(self, count: int, seed: int) -> np.ndarray:
        """Draw ``count`` rows with a dedicated seeded generator.

        Under truncation, rejected draws are regenerated (component
        re-picked each round) so the accepted sample follows the
        box-renormalized mixture exactly.

        Raises:
            RuntimeError: acceptance rate below 1e-6 after a bounded
                number of attempts.
        """
        if count < 0:
            raise ValueError("count must be nonnegative")
        if count == 0:
            return np.empty((0, self.dim))
        rng = np.random.Generator(np.random.PCG64(seed))
        chols = self._cholesky_factors()
        out = np.empty((count, self.dim))
        filled = 0
        drawn = 0
        while filled < count:
            need = count - filled
            idx = rng.choice(self.n_components, size=need, p=self.weights)
            z = rng.standard_normal((need, self.dim))
            pts = self.means[idx] + np.einsum("nij,nj->ni", chols[idx], z)
            drawn += need
            if self.truncation is not None:
                keep = self.truncation.contains(pts)
                pts = pts[keep]
            accepted = filled + pts.shape[0]
            out[filled:accepted] = pts
            filled = accepted
            if drawn >= 1_000_000 and filled / drawn < 1e-6:
                raise RuntimeError(
                    f"truncation acceptance rate {filled / drawn:.2e} below 1e-6 "
                    f"after {drawn} draws"
                )
        return out

    # -- serialization --------------------------------------------------------

    def to_text(self) -> str:
        """Serialize to a self-describing JSON document.

        Finite values round-trip bit-exactly (shortest-repr floats);
        infinite box bounds are encoded as nulls.
        """
        if self.truncation is None:
            box_doc = None
        else:
            box_doc = {
                "lower": [None if math.isinf(v) else v for v in self.truncation.lower],
                "upper": [None if math.isinf(v) else v for v in self.truncation.upper],
            }
        doc = {
            "format": "crossingsim-mixture",
            "version": 1,
            "dim": self.dim,
            "n_components": self.n_components,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            # Row-major flattening of each component covariance.
            "covariances": [self.covariances[k].reshape(-1).tolist() for k in range(self.n_components)],
            "truncation": box_doc,
            "fit_seed": self.fit_seed,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GaussianMixture":
        """Inverse of :meth:`to_text`; validates the document shape."""
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"model document is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format") != "crossingsim-mixture":
            raise ValueError("not a crossingsim mixture document")
        if doc.get("version") != 1:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        dim = int(doc["dim"])
        n_components = int(doc["n_components"])
        weights = np.asarray(doc["weights"], dtype=float)
        means = np.asarray(doc["means"], dtype=float)
        covs_flat = doc["covariances"]
        if len(covs_flat) != n_components:
            raise ValueError("covariance count does not match n_components")
        covariances = np.asarray(
            [np.asarray(flat, dtype=float).reshape(dim, dim) for flat in covs_flat]
        )
        box_doc = doc.get("truncation")
        truncation = None
        if box_doc is not None:
            lower = np.array(
                [-np.inf if v is None else float(v) for v in box_doc["lower"]]
            )
            upper = np.array(
                [np.inf if v is None else float(v) for v in box_doc["upper"]]
            )
            truncation = TruncationBox(lower, upper)
        fit_seed = doc.get("fit_seed")
        return cls(
            weights,
            means.reshape(n_components, dim),
            covariances,
            truncation=truncation,
            fit_seed=None if fit_seed is None else int(fit_seed),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_text())

    @classmethod
    def load(cls, path) -> "GaussianMixture":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_text(handle.read())


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """EM fitting knobs.

    truncation_mode selects between a plain mixture fit ("none") and the
    missing-data corrected fit over a box ("truncated").
    mc_moment_draws is the accepted-draw target for Monte Carlo moment
    evaluations inside the truncated M-step (dimensions above one).
    """

    n_components: int
    max_iterations: int = 300
    loglik_tolerance: float = 1e-10
    restarts: int = 1
    covariance_floor: float = 1e-6
    seed: int = 0
    truncation_mode: str = "none"
    mc_moment_draws: int = 20_000

    def __post_init__(self) -> None:
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.loglik_tolerance <= 0:
            raise ValueError("loglik_tolerance must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.covariance_floor < 0:
            raise ValueError("covariance_floor must be >= 0")
        if self.truncation_mode not in ("none", "truncated"):
            raise ValueError(f"unknown truncation_mode {self.truncation_mode!r}")
        if self.mc_moment_draws < 100:
            raise ValueError("mc_moment_draws must be >= 100")


@dataclass
class FitDiagnostics:
    """What happened during the winning EM run."""

    loglik_trace: list[float]
    final_loglik: float
    n_iterations: int
    converged: bool
    restart_index: int
    restart_logliks: list[float]
    reinit_events: list[tuple[int, int]] = field(default_factory=list)


def _kmeanspp_means(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial means according to squared distance."""
    n = data.shape[0]
    means = np.empty((k, data.shape[1]))
    means[0] = data[rng.integers(n)]
    closest_sq = ((data - means[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            means[j] = data[rng.integers(n)]
        else:
            means[j] = data[rng.choice(n, p=closest_sq / total)]
        closest_sq = np.minimum(closest_sq, ((data - means[j]) ** 2).sum(axis=1))
    return means


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    return cov + floor * np.eye(cov.shape[0])


class _EmState:
    """Mutable parameters of one EM run."""

    def __init__(self, weights, means, covs):
        self.weights = weights
        self.means = means
        self.covs = covs


def _complement_moments(
    mean: np.ndarray, cov: np.ndarray, mom: TruncatedMoments
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the component outside the box.

    Derived from the total-moment decomposition
    E[X] = mass * E_in[X] + (1 - mass) * E_out[X] and its second-moment
    analogue, so it works for any region shape.
    """
    rest = 1.0 - mom.mass
    m_out = (mean - mom.mass * mom.mean) / rest
    second_total = cov + np.outer(mean, mean)
    second_in = mom.covariance + np.outer(mom.mean, mom.mean)
    second_out = (second_total - mom.mass * second_in) / rest
    v_out = second_out - np.outer(m_out, m_out)
    return m_out, 0.5 * (v_out + v_out.T)


def em_fit(
    data: np.ndarray,
    config: FitConfig,
    box: Optional[TruncationBox] = None,
) -> tuple[GaussianMixture, FitDiagnostics]:
    """Fit a Gaussian mixture by (truncation-aware) EM.

    Initialization per restart: k-means++ mean seeding, pooled sample
    covariance, uniform weights.  Every M-step floors covariances by
    ``covariance_floor * I``; a component whose covariance still fails
    Cholesky, or whose responsibility mass collapses, is reinitialized
    from a random data point and the event recorded.

    In truncated mode the M-step treats draws rejected by the box as
    missing data: each component's update blends the responsibility-
    weighted data statistics with the moments of the component outside
    the box, which de-biases means pulled toward the box interior.

    Args:
        data: (n, d) observations; in truncated mode all rows must lie
            inside the box.
        config: fitting knobs; ``config.seed`` drives initialization,
            restarts, and Monte Carlo moments.
        box: truncation region for truncated mode (defaults to the
            positive orthant); ignored in mode "none".

    Returns:
        (model, diagnostics) for the restart with the best final
        log-likelihood.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("data must be a non-empty (n, d) array")
    if not np.isfinite(data).all():
        raise ValueError("data must be finite")
    n, dim = data.shape
    if n < config.n_components:
        raise ValueError(
            f"need at least n_components={config.n_components} rows, got {n}"
        )
    truncated = config.truncation_mode == "truncated"
    if truncated:
        if box is None:
            box = TruncationBox.positive_orthant(dim)
        if box.dim != dim:
            raise ValueError("box dimension does not match data")
        if not box.contains(data).all():
            raise ValueError("all training rows must lie inside the truncation box")
        if box.is_unbounded:
            truncated = False
    k = config.n_components
    pooled = np.cov(data, rowvar=False, bias=True).reshape(dim, dim)
    pooled = _floor_covariance(pooled, max(config.covariance_floor, 1e-10))

    best: Optional[tuple[float, _EmState, FitDiagnostics]] = None
    restart_lls: list[float] = []
    for restart in range(config.restarts):
        rng = np.random.Generator(
            np.random.PCG64(derive_seed(config.seed, "em-init", restart))
        )
        state = _EmState(
            weights=np.full(k, 1.0 / k),
            means=_kmeanspp_means(data, k, rng),
            covs=np.repeat(pooled[None, :, :], k, axis=0),
        )
        trace: list[float] = []
        reinits: list[tuple[int, int]] = []
        converged = False
        prev_ll = -np.inf
        for iteration in range(config.max_iterations + 1):
            model_like = GaussianMixture(
                state.weights / state.weights.sum(), state.means, state.covs
            )
            log_dens = model_like._component_log_densities(data)
            log_weighted = log_dens + np.log(state.weights)
            row_ll = logsumexp(log_weighted, axis=1)
            moments = None
            if truncated:
                # Moment seeds are fixed per restart and component (not per
                # iteration): with common random numbers the Monte Carlo
                # log-likelihood is a deterministic function of the
                # parameters, so the convergence test sees real progress
                # instead of resampling noise.
                moments = [
                    truncated_moments(
                        GaussianComponent(state.means[j], state.covs[j]),
                        box,
                        n_accepted=config.mc_moment_draws,
                        seed=derive_seed(config.seed, f"em-mc-{restart}", j),
                    )
                    for j in range(k)
                ]
                masses = np.array([m.mass for m in moments])
                total_mass = float(state.weights @ masses)
                ll = float(row_ll.sum()) - n * math.log(total_mass)
            else:
                ll = float(row_ll.sum())
            trace.append(ll)
            if iteration > 0 and abs(ll - prev_ll) / n < config.loglik_tolerance:
                converged = True
                break
            if iteration == config.max_iterations:
                break
            prev_ll = ll

            # E-step responsibilities, then the mode-dependent M-step.
            resp = np.exp(log_weighted - row_ll[:, None])
            resp_mass = resp.sum(axis=0)
            new_weights = np.empty(k)
            for j in range(k):
                if resp_mass[j] < 1e-8:
                    state.means[j] = data[rng.integers(n)]
                    state.covs[j] = pooled.copy()
                    new_weights[j] = 1.0 / k
                    reinits.append((iteration, j))
                    continue
                ybar = resp[:, j] @ data / resp_mass[j]
                diff = data - ybar
                scatter = (resp[:, j][:, None] * diff).T @ diff / resp_mass[j]
                if truncated and moments[j].mass < 1.0 - 1e-12:
                    mom = moments[j]
                    m_out, v_out = _complement_moments(
                        state.means[j], state.covs[j], mom
                    )
                    virtual = n * state.weights[j] * (1.0 - mom.mass) / total_mass
                    w_data, w_virt = resp_mass[j], virtual
                    mu_new = (w_data * ybar + w_virt * m_out) / (w_data + w_virt)
                    d1 = ybar - mu_new
                    d2 = m_out - mu_new
                    sigma_new = (
                        w_data * (scatter + np.outer(d1, d1))
                        + w_virt * (v_out + np.outer(d2, d2))
                    ) / (w_data + w_virt)
                    new_weights[j] = (
                        total_mass * resp_mass[j] / n
                        + state.weights[j] * (1.0 - mom.mass)
                    )
                else:
                    mu_new = ybar
                    sigma_new = scatter
                    new_weights[j] = resp_mass[j] / n
                state.means[j] = mu_new
                state.covs[j] = _floor_covariance(sigma_new, config.covariance_floor)
                try:
                    np.linalg.cholesky(state.covs[j])
                except np.linalg.LinAlgError:
                    state.means[j] = data[rng.integers(n)]
                    state.covs[j] = pooled.copy()
                    new_weights[j] = 1.0 / k
                    reinits.append((iteration, j))
            state.weights = new_weights / new_weights.sum()

        final_ll = trace[-1]
        restart_lls.append(final_ll)
        if best is None or final_ll > best[0]:
            diag = FitDiagnostics(
                loglik_trace=trace,
                final_loglik=final_ll,
                n_iterations=len(trace) - 1,
                converged=converged,
                restart_index=restart,
                restart_logliks=[],
                reinit_events=reinits,
            )
            best = (final_ll, state, diag)

    assert best is not None
    _, state, diag = best
    diag.restart_logliks = restart_lls
    model = GaussianMixture(
        state.weights,
        state.means,
        state.covs,
        truncation=box if truncated else None,
        fit_seed=config.seed,
    )
    return model, diag


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


def bic(model: GaussianMixture, data: np.ndarray) -> float:
    """Bayesian information criterion: -2 log L + p log n.

    The parameter count p is (K-1) free weights plus K*d means plus
    K*d*(d+1)/2 covariance entries.  Uses the model's own (possibly
    truncated) likelihood.
    """
    rows = np.atleast_2d(np.asarray(data, dtype=float))
    n = rows.shape[0]
    if n == 0 or rows.size == 0:
        raise ValueError("BIC undefined for empty data")
    k, d = model.n_components, model.dim
    p = (k - 1) + k * d + k * d * (d + 1) // 2
    return -2.0 * model.log_likelihood(rows) + p * math.log(n)


@dataclass(frozen=True)
class SelectionCurvePoint:
    n_components: int
    bic_value: float
    change_rate: Optional[float]  # None for the first fitted K


@dataclass
class SelectionResult:
    selected_k: int
    model: GaussianMixture
    curve: list[SelectionCurvePoint]
    failures: list[tuple[int, str]]


def select_components(
    data: np.ndarray,
    k_range: Iterable[int],
    config: FitConfig,
    rate_threshold: float = 0.10,
) -> SelectionResult:
    """Sweep component counts and pick where the BIC curve flattens.

    Fits each K in ascending order (per-K seeds derived from
    ``config.seed``) and computes the relative BIC improvement over the
    previous fitted K.  Selected is the smallest K whose improvement
    falls below ``rate_threshold``; if none qualifies (including the
    degenerate threshold 0) the argmin-BIC K is returned.  Fit failures
    (e.g. K exceeding the sample size) are recorded and skipped.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1:
        raise ValueError("k_range must contain positive integers")
    curve: list[SelectionCurvePoint] = []
    failures: list[tuple[int, str]] = []
    models: dict[int, GaussianMixture] = {}
    prev_bic: Optional[float] = None
    for k in ks:
        cfg = replace(config, n_components=k, seed=derive_seed(config.seed, "select-k", k))
        try:
            model, _ = em_fit(data, cfg)
            value = bic(model, data)
        except (ValueError, DegenerateTruncationError) as exc:
            failures.append((k, str(exc)))
            continue
        rate = None
        if prev_bic is not None:
            rate = (prev_bic - value) / abs(prev_bic)
        curve.append(SelectionCurvePoint(k, value, rate))
        models[k] = model
        prev_bic = value
    if not curve:
        raise ValueError("every requested component count failed to fit")
    selected = None
    if rate_threshold > 0:
        for point in curve:
            if point.change_rate is not None and point.change_rate < rate_threshold:
                selected = point.n_components
                break
    if selected is None:
        selected = min(curve, key=lambda p: p.bic_value).n_components
    return SelectionResult(
        selected_k=selected, model=models[selected], curve=curve, failures=failures
    )


# ---------------------------------------------------------------------------
# Mode search
# ---------------------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def conditional_mode(
    model: GaussianMixture,
    interval: tuple[float, float],
    grid_points: int = 2048,
    refine_tolerance: float = 1e-9,
) -> float:
    """Highest-density point of a 1-D mixture on a closed interval.

    Scans a uniform grid (endpoints included) and refines the best
    bracket by golden-section search.  Exact ties resolve toward the
    lower value, and the result never has lower density than any grid
    point.
    """
    if model.dim != 1:
        raise ValueError("conditional_mode requires a 1-D model")
    lo, hi = float(interval[0]), float(interval[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise ValueError(f"interval must be finite with lo < hi, got ({lo}, {hi})")
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    grid = np.linspace(lo, hi, grid_points)
    dens = np.exp(model.log_density_rows(grid[:, None]))
    best_idx = int(np.argmax(dens))  # first max -> ties toward lower value
    best_x = float(grid[best_idx])
    best_f = float(dens[best_idx])

    a = float(grid[max(best_idx - 1, 0)])
    b = float(grid[min(best_idx + 1, grid_points - 1)])

    def f(x: float) -> float:
        return float(np.exp(model.log_density_rows(np.array([[x]])))[0])

    while b - a > refine_tolerance:
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        if f(c) >= f(d):
            b = d
        else:
            a = c
    refined = 0.5 * (a + b)
    refined_f = f(refined)
    if refined_f > best_f or (refined_f == best_f and refined < best_x):
        return refined
    return best_x
