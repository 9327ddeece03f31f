"""One-factor market model with Heston volatility and block-correlated residuals.

The simulated universe has ``d`` assets observed on the equidistant grid
``t_h = h/n`` of the unit interval.  Asset ``d`` (the last row) is the factor,
driven by a square-root stochastic variance process; the remaining
``d_under = d - 1`` assets load linearly on the factor and carry Brownian
residuals whose covariance matrix is block diagonal.  Because the residual
covariance is exact (no discretization error enters it), every simulated path
comes with an analytic truth sidecar: the true quadratic covariation matrix,
the true pair statistics, and the exact set of true null hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HestonParams",
    "ResidualStructure",
    "SimScenario",
    "TrueQuantities",
    "PathGrid",
    "DEFAULT_HESTON",
    "draw_residual_structure",
    "sample_stationary_variance",
    "simulate_paths",
    "true_quantities",
    "make_scenario",
    "scenario_to_config",
    "scenario_from_config",
    "write_price_csv",
]


@dataclass(frozen=True)
class HestonParams:
    """Square-root variance dynamics for the factor.

    Parameters
    ----------
    mu : float
        Drift of the factor per unit time.
    kappa : float
        Mean-reversion rate of the variance.
    theta : float
        Long-run variance level.
    eta : float
        Volatility of variance.
    rho : float
        Correlation between the factor shock and the variance shock.
    """

    mu: float
    kappa: float
    theta: float
    eta: float
    rho: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if abs(self.rho) > 1:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")

    @property
    def feller_satisfied(self) -> bool:
        """Whether 2*kappa*theta > eta**2, keeping the variance strictly positive."""
        return 2.0 * self.kappa * self.theta > self.eta**2


#: Baseline factor dynamics used throughout the Monte Carlo study.
DEFAULT_HESTON = HestonParams(mu=0.05, kappa=3.0, theta=0.09, eta=0.3, rho=-0.6)


@dataclass(frozen=True)
class ResidualStructure:
    """Block-diagonal residual loading matrix.

    ``gamma`` is lower triangular with ``gamma @ gamma.T`` block diagonal;
    off-block covariances are exactly zero by construction.
    """

    d_under: int
    gamma: np.ndarray
    block_sizes: tuple[int, ...]
    rho_gamma: float

    @property
    def covariance(self) -> np.ndarray:
        """Residual covariance matrix (d_under x d_under)."""
        return self.gamma @ self.gamma.T

    def block_of(self, i: int) -> int:
        """Index of the block containing asset i."""
        edges = np.cumsum(self.block_sizes)
        return int(np.searchsorted(edges, i, side="right"))


@dataclass(frozen=True)
class SimScenario:
    """Complete description of one simulated market."""

    n: int
    d: int
    heston: HestonParams
    structure: ResidualStructure
    betas: np.ndarray
    fine_factor: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if self.d < 3:
            raise ValueError(f"d must be >= 3, got {self.d}")
        if self.fine_factor < 1:
            raise ValueError(f"fine_factor must be >= 1, got {self.fine_factor}")
        if self.structure.d_under != self.d - 1:
            raise ValueError(
                f"structure dimension {self.structure.d_under} does not match d-1={self.d - 1}"
            )
        if len(self.betas) != self.d - 1:
            raise ValueError(f"betas must have length d-1={self.d - 1}")

    @property
    def d_under(self) -> int:
        return self.d - 1


@dataclass(frozen=True)
class TrueQuantities:
    """Analytic truth attached to a simulated path.

    ``tau[i, j]`` is the population value of the pair statistic for assets
    (i, j); it equals ``-Gamma[i, j] * integrated_variance`` and is zero
    exactly when the residual covariance entry is zero.  ``null_truth`` marks
    the pairs for which the no-residual-covariation null holds.
    """

    integrated_variance: float
    qv: np.ndarray
    tau: np.ndarray
    null_truth: np.ndarray


@dataclass(frozen=True)
class PathGrid:
    """Log-prices on the observation grid: d rows, n+1 columns (column 0 = start)."""

    prices: np.ndarray
    n: int
    d: int
    truth: TrueQuantities | None = field(default=None, compare=False)


def draw_residual_structure(d_under, num_blocks, rho_gamma, rng, diagonals=None):
    """Draw a block-diagonal residual structure.

    Within each block the correlation is constant (``rho_gamma``) and the
    variances are iid Uniform[0.2, 0.5]; across blocks the covariance is
    exactly zero.  ``gamma`` is assembled from per-block Cholesky factors.

    Parameters
    ----------
    d_under : int
        Number of residual assets; must be divisible by ``num_blocks``.
    num_blocks : int
        Number of equally sized diagonal blocks.
    rho_gamma : float
        Common within-block correlation, in (-1/(block_size-1), 1).
    rng : numpy.random.Generator
    diagonals : array_like, optional
        Pins the d_under variance diagonal instead of drawing it (tests).
    """
    if d_under < 1 or num_blocks < 1 or d_under % num_blocks != 0:
        raise ValueError(
            f"num_blocks={num_blocks} must divide d_under={d_under} into equal blocks"
        )
    size = d_under // num_blocks
    if size > 1 and not (-1.0 / (size - 1) < rho_gamma < 1.0):
        raise ValueError(
            f"rho_gamma={rho_gamma} outside ({-1.0 / (size - 1):.4f}, 1) "
            f"for block size {size}"
        )
    if diagonals is None:
        diagonals = rng.uniform(0.2, 0.5, size=d_under)
    else:
        diagonals = np.asarray(diagonals, dtype=float)
        if diagonals.shape != (d_under,):
            raise ValueError("diagonals must have length d_under")

    corr = np.full((size, size), rho_gamma)
    np.fill_diagonal(corr, 1.0)
    gamma = np.zeros((d_under, d_under))
    for b in range(num_blocks):
        lo = b * size
        sd = np.sqrt(diagonals[lo : lo + size])
        block = corr * np.outer(sd, sd)
        try:
            gamma[lo : lo + size, lo : lo + size] = np.linalg.cholesky(block)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                f"residual block {b} is not positive definite "
                f"(rho_gamma={rho_gamma}, block size {size})"
            ) from exc
    return ResidualStructure(
        d_under=d_under,
        gamma=gamma,
        block_sizes=(size,) * num_blocks,
        rho_gamma=float(rho_gamma),
    )


def sample_stationary_variance(heston, rng):
    """One draw from the stationary law of the variance process.

    The stationary distribution is Gamma with shape ``2*kappa*theta/eta**2``
    and rate ``2*kappa/eta**2`` (mean ``theta``).  With ``eta == 0`` the
    stationary law degenerates to the point mass at ``theta``.
    """
    if heston.eta == 0.0:
        return heston.theta
    shape = 2.0 * heston.kappa * heston.theta / heston.eta**2
    rate = 2.0 * heston.kappa / heston.eta**2
    return float(rng.gamma(shape, 1.0 / rate))


def true_quantities(structure, betas, integrated_variance):
    """Analytic quadratic covariation, pair statistics and null set.

    ``qv[i, j] = betas[i] * betas[j] * IV + Gamma[i, j]`` for residual assets,
    with the factor column ``qv[i, d-1] = betas[i] * IV`` and corner
    ``qv[d-1, d-1] = IV``.  The bilinear pair statistic then collapses to
    ``tau[i, j] = -Gamma[i, j] * IV``.
    """
    if not integrated_variance > 0:
        raise ValueError("integrated_variance must be positive")
    betas = np.asarray(betas, dtype=float)
    gam = structure.covariance
    du = structure.d_under
    d = du + 1
    qv = np.empty((d, d))
    qv[:du, :du] = np.outer(betas, betas) * integrated_variance + gam
    qv[:du, du] = betas * integrated_variance
    qv[du, :du] = qv[:du, du]
    qv[du, du] = integrated_variance
    tau = -gam * integrated_variance
    null_truth = gam == 0.0
    return TrueQuantities(
        integrated_variance=float(integrated_variance),
        qv=qv,
        tau=tau,
        null_truth=null_truth,
    )


def simulate_paths(scenario, rng):
    """Simulate one path of the factor model on the observation grid.

    The joint system is advanced on a fine grid of ``n * fine_factor`` steps:
    the variance by a full-truncation Euler scheme (negative excursions are
    floored at zero before entering any square root or drift evaluation), the
    factor by Euler with the left-point variance, and the residuals exactly
    (they are linear in the driving Brownian motion).  Observations are the
    fine path subsampled every ``fine_factor`` steps; the truth sidecar uses
    the left Riemann sum of the truncated variance for the integrated
    variance.

    Brownian coordinates: rows ``0..d_under-1`` drive the residuals, row
    ``d_under`` drives the factor, row ``d_under+1`` the orthogonal part of
    the variance shock.
    """
    hp = scenario.heston
    du = scenario.d_under
    n_fine = scenario.n * scenario.fine_factor
    dt = 1.0 / n_fine

    db = rng.normal(0.0, math.sqrt(dt), size=(scenario.d + 1, n_fine))
    v0 = sample_stationary_variance(hp, rng)

    dw_v = hp.rho * db[du] + math.sqrt(1.0 - hp.rho**2) * db[du + 1]
    v = np.empty(n_fine + 1)
    v[0] = v0
    kdt = hp.kappa * dt
    for k in range(n_fine):
        vp = v[k] if v[k] > 0.0 else 0.0
        v[k + 1] = v[k] + kdt * (hp.theta - vp) + hp.eta * math.sqrt(vp) * dw_v[k]
    v_plus = np.maximum(v[:n_fine], 0.0)

    d_factor = hp.mu * dt + np.sqrt(v_plus) * db[du]
    d_resid = scenario.structure.gamma @ db[:du]
    dy = np.empty((scenario.d, n_fine))
    dy[:du] = scenario.betas[:, None] * d_factor[None, :] + d_resid
    dy[du] = d_factor

    fine_prices = np.concatenate(
        [np.zeros((scenario.d, 1)), np.cumsum(dy, axis=1)], axis=1
    )
    prices = fine_prices[:, :: scenario.fine_factor]

    iv = float(v_plus.sum() * dt)
    truth = true_quantities(scenario.structure, scenario.betas, iv)
    return PathGrid(prices=prices, n=scenario.n, d=scenario.d, truth=truth)


def make_scenario(
    n,
    d_under,
    num_blocks,
    rho_gamma,
    heston=DEFAULT_HESTON,
    fine_factor=10,
    seed=0,
    rng=None,
    structure=None,
    betas=None,
):
    """Assemble a scenario, drawing the residual structure and factor loadings.

    The loadings are iid Uniform[0.25, 2.25].  Passing ``structure``/``betas``
    pins them (used to hold the cross-sectional design fixed across Monte
    Carlo replications); otherwise they are drawn from ``rng`` (or from a
    generator derived from ``seed``).
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))
    if structure is None:
        structure = draw_residual_structure(d_under, num_blocks, rho_gamma, rng)
    if betas is None:
        betas = rng.uniform(0.25, 2.25, size=d_under)
    return SimScenario(
        n=int(n),
        d=d_under + 1,
        heston=heston,
        structure=structure,
        betas=np.asarray(betas, dtype=float),
        fine_factor=int(fine_factor),
        seed=int(seed),
    )


# Flat key-value serialization.  Only generator inputs are stored; the drawn
# structure and loadings are reproduced from the seed.
_SCENARIO_FIELDS = (
    "n",
    "d",
    "num_blocks",
    "rho_gamma",
    "mu",
    "kappa",
    "theta",
    "eta",
    "rho",
    "fine_factor",
    "seed",
)


def scenario_to_config(scenario):
    """Flatten a scenario into a string->value mapping."""
    hp = scenario.heston
    return {
        "n": scenario.n,
        "d": scenario.d,
        "num_blocks": len(scenario.structure.block_sizes),
        "rho_gamma": scenario.structure.rho_gamma,
        "mu": hp.mu,
        "kappa": hp.kappa,
        "theta": hp.theta,
        "eta": hp.eta,
        "rho": hp.rho,
        "fine_factor": scenario.fine_factor,
        "seed": scenario.seed,
    }


def scenario_from_config(mapping):
    """Rebuild a scenario from a flat mapping (inverse of scenario_to_config)."""
    unknown = set(mapping) - set(_SCENARIO_FIELDS)
    if unknown:
        raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
    get = lambda k, dflt: mapping.get(k, dflt)
    heston = HestonParams(
        mu=float(get("mu", DEFAULT_HESTON.mu)),
        kappa=float(get("kappa", DEFAULT_HESTON.kappa)),
        theta=float(get("theta", DEFAULT_HESTON.theta)),
        eta=float(get("eta", DEFAULT_HESTON.eta)),
        rho=float(get("rho", DEFAULT_HESTON.rho)),
    )
    d = int(get("d", 21))
    return make_scenario(
        n=int(get("n", 390)),
        d_under=d - 1,
        num_blocks=int(get("num_blocks", 10)),
        rho_gamma=float(get("rho_gamma", 0.5)),
        heston=heston,
        fine_factor=int(get("fine_factor", 10)),
        seed=int(get("seed", 0)),
    )


def default_asset_names(d, factor_name="FACTOR"):
    """Asset ids for simulated panels: A001..A<d-1> plus the factor."""
    width = max(3, len(str(d - 1)))
    return [f"A{i + 1:0{width}d}" for i in range(d - 1)] + [factor_name]


def write_price_csv(grid, path, asset_ids=None):
    """Write a path grid as CSV: header of asset ids, one row per time point.

    Floats are written with round-trip precision so that reloading the file
    reproduces the in-memory increments bit for bit.
    """
    if asset_ids is None:
        asset_ids = default_asset_names(grid.d)
    if len(asset_ids) != grid.d:
        raise ValueError("asset_ids length must equal d")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(asset_ids) + "\n")
        for h in range(grid.n + 1):
            fh.write(",".join(repr(float(x)) for x in grid.prices[:, h]) + "\n")
