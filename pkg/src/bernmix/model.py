"""Multivariate Bernoulli mixture: likelihoods, priors, and full conditionals.

Units carry p binary indicators; component k has a probability column
theta[:, k] and weight pi[k].  All conjugate structure lives here: the
Dirichlet weight update, the Beta update per (variable, component) cell,
the categorical allocation update, and the collapsed allocation density
with weights and probability columns integrated out.  Everything is on
the natural-log scale and supports missing cells via an observedness mask.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .dataset import BinaryDataset

# Probability columns are clamped away from {0, 1} so log terms stay finite.
THETA_FLOOR = 1e-12

K_PRIOR_KINDS = ("truncated_poisson", "uniform")
WEIGHT_PRIOR_KINDS = ("unit", "one_over_kmax")


@dataclass(frozen=True)
class Priors:
    """Hyperparameters for the component count, weights, and probabilities.

    The component count K is capped at k_max and given either a truncated
    Poisson(lam) or a uniform prior on {1..k_max}.  Weights are symmetric
    Dirichlet with concentration gamma per component (gamma = 1/k_max under
    the 'one_over_kmax' variant).  Each theta cell is Beta(alpha, beta).
    """

    lam: float = 1.0
    k_max: int = 50
    gamma: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    k_prior_kind: str = "truncated_poisson"
    weight_prior_kind: str = "unit"

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if min(self.gamma, self.alpha, self.beta) <= 0:
            raise ValueError("gamma, alpha, beta must be positive")
        if self.k_prior_kind not in K_PRIOR_KINDS:
            raise ValueError(f"unknown k prior {self.k_prior_kind!r}")
        if self.weight_prior_kind not in WEIGHT_PRIOR_KINDS:
            raise ValueError(f"unknown weight prior {self.weight_prior_kind!r}")

    @property
    def gamma_value(self) -> float:
        if self.weight_prior_kind == "one_over_kmax":
            return 1.0 / self.k_max
        return self.gamma

    def log_k_prior(self) -> np.ndarray:
        """Normalized log pmf over K = 1..k_max (index k-1 is p(K=k)).

        Cached per (frozen) instance; the returned array is read-only.
        """
        return _log_k_prior_table(self)


@functools.lru_cache(maxsize=64)
def _log_k_prior_table(priors: Priors) -> np.ndarray:
    ks = np.arange(1, priors.k_max + 1)
    if priors.k_prior_kind == "uniform":
        raw = np.zeros(priors.k_max)
    else:
        raw = ks * np.log(priors.lam) - gammaln(ks + 1)
    table = raw - logsumexp(raw)
    table.flags.writeable = False
    return table


@dataclass
class MixtureState:
    """One point of the chain: allocations, weights, probabilities, stats.

    counts[k] is the occupancy of component k over all units.  successes
    and cell_counts are (p, k): number of ones and number of counted cells
    per variable and component.  With imputation on, every cell counts and
    x_work holds observed values plus the current imputations; with
    imputation off only observed cells count and x_work is zero elsewhere.
    """

    k: int
    z: np.ndarray
    pi: np.ndarray
    theta: np.ndarray
    x_work: np.ndarray
    impute: bool
    counts: np.ndarray = field(default=None)
    successes: np.ndarray = field(default=None)
    cell_counts: np.ndarray = field(default=None)

    @property
    def k_nonempty(self) -> int:
        return int((self.counts > 0).sum())


def _clamp_theta(theta: np.ndarray) -> np.ndarray:
    return np.clip(theta, THETA_FLOOR, 1.0 - THETA_FLOOR)


def _clamp_weights(pi: np.ndarray) -> np.ndarray:
    pi = np.clip(pi, 1e-300, None)
    return pi / pi.sum()


def _check_theta_domain(theta: np.ndarray) -> None:
    if np.any(theta <= 0.0) or np.any(theta >= 1.0):
        raise ValueError("theta entries must lie strictly inside (0, 1)")


def _split_indicators(data: BinaryDataset):
    """Observed-cell indicators (ones, zeros) as float64, cached on the dataset.

    Datasets are read-only once built, so the cast is done once per instance.
    """
    cached = getattr(data, "_indicator_cache", None)
    if cached is None:
        x1 = data.x.astype(np.float64)
        x0 = data.observed.astype(np.float64) - x1
        x1.flags.writeable = False
        x0.flags.writeable = False
        cached = (x1, x0)
        data._indicator_cache = cached
    return cached


def per_component_log_likelihood(data: BinaryDataset, theta: np.ndarray) -> np.ndarray:
    """(n, k) matrix of sum_j log Bern(x_ij | theta_jk) over observed cells.

    theta must lie strictly inside (0, 1); every producer in this module
    clamps, so no per-call domain check (this sits in the sweep hot path).
    """
    x1, x0 = _split_indicators(data)
    return x1 @ np.log(theta) + x0 @ np.log1p(-theta)


def log_observed_likelihood(data: BinaryDataset, pi: np.ndarray, theta: np.ndarray) -> float:
    """Log of prod_i sum_k pi_k prod_j Bern(x_ij | theta_jk), observed cells only."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.min() < 0:
        raise ValueError("pi entries must be nonnegative")
    with np.errstate(divide="ignore"):
        logits = per_component_log_likelihood(data, theta) + np.log(pi)[None, :]
    # row-wise logsumexp by hand: scipy's adds ~50us of dispatch per call
    top = logits.max(axis=1, keepdims=True)
    return float((top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))).sum())


def log_complete_likelihood(
    data: BinaryDataset,
    z: np.ndarray,
    pi: np.ndarray,
    theta: np.ndarray,
    x_work: np.ndarray | None = None,
) -> float:
    """Log of prod_i pi_{z_i} prod_j Bern(x_ij | theta_j z_i).

    Covers observed cells, plus current imputations when x_work is given
    (x_work supplies the values at unobserved cells).
    """
    _check_theta_domain(theta)
    pi = np.asarray(pi, dtype=np.float64)
    z = np.asarray(z)
    if np.any(pi[z] <= 0.0):
        raise ValueError("allocation points at a zero-probability component")
    if x_work is None:
        x1 = data.x.astype(np.float64)
        x0 = data.observed.astype(np.float64) - x1
    else:
        x1 = x_work.astype(np.float64)
        x0 = 1.0 - x1
    theta_rows = theta[:, z].T  # (n, p)
    cell_terms = x1 * np.log(theta_rows) + x0 * np.log1p(-theta_rows)
    return float(np.log(pi[z]).sum() + cell_terms.sum())


def allocation_log_probabilities(
    data: BinaryDataset, pi: np.ndarray, theta: np.ndarray, heat: float = 1.0
) -> np.ndarray:
    """(n, k) normalized log P(z_i = k | x_i, pi, theta) over observed cells.

    Under heat < 1 the likelihood factor is raised to that power; the
    categorical collapses to the weights as heat -> 0.
    """
    pi = _clamp_weights(np.asarray(pi, dtype=np.float64))
    logits = np.log(pi)[None, :] + heat * per_component_log_likelihood(data, theta)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def log_collapsed_allocation_posterior(
    data: BinaryDataset, z: np.ndarray, k: int, priors: Priors
) -> float:
    """Log p(z, K = k | x) up to the model constant, weights and thetas out.

    Three closed-form pieces: the K prior, the Dirichlet-multinomial weight
    of the allocation vector, and a Beta-binomial normalizer per (variable,
    component) over observed cells only.
    """
    z = np.asarray(z)
    n = data.n_units
    if z.shape != (n,):
        raise ValueError(f"z has shape {z.shape}, expected ({n},)")
    if k < 1 or k > priors.k_max:
        raise ValueError(f"k={k} outside 1..{priors.k_max}")
    if z.size and (z.min() < 0 or z.max() >= k):
        raise ValueError("allocation labels outside 0..k-1")
    gamma = priors.gamma_value
    counts = np.bincount(z, minlength=k)
    log_pk = priors.log_k_prior()[k - 1]
    log_alloc = (
        gammaln(k * gamma)
        - gammaln(n + k * gamma)
        + (gammaln(counts + gamma) - gammaln(gamma)).sum()
    )
    x1, x0 = _split_indicators(data)
    ones = x1.T @ _one_hot(z, k)  # (p, k) observed ones
    cells = (x1 + x0).T @ _one_hot(z, k)  # (p, k) observed cells
    log_cells = (
        betaln(priors.alpha + ones, priors.beta + cells - ones)
        - betaln(priors.alpha, priors.beta)
    ).sum()
    return float(log_pk + log_alloc + log_cells)


def _one_hot(z: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((z.shape[0], k))
    out[np.arange(z.shape[0]), z] = 1.0
    return out


def log_joint(data: BinaryDataset, state: MixtureState, priors: Priors) -> float:
    """Unnormalized log posterior density of a draw.

    K prior + Dirichlet weight density + Beta densities + allocation prior
    + observed-data likelihood.  Imputed cells are auxiliary and excluded.
    """
    gamma = priors.gamma_value
    k = state.k
    log_pk = float(priors.log_k_prior()[k - 1])
    log_pi_prior = float(
        gammaln(k * gamma) - k * gammaln(gamma) + (gamma - 1.0) * np.log(state.pi).sum()
    )
    log_theta_prior = float(
        (
            (priors.alpha - 1.0) * np.log(state.theta)
            + (priors.beta - 1.0) * np.log1p(-state.theta)
            - betaln(priors.alpha, priors.beta)
        ).sum()
    )
    log_alloc = float(np.log(state.pi[state.z]).sum())
    x1, x0 = _split_indicators(data)
    theta_rows = state.theta[:, state.z].T
    loglik = float(
        (x1 * np.log(theta_rows) + x0 * np.log1p(-theta_rows)).sum()
    )
    return log_pk + log_pi_prior + log_theta_prior + log_alloc + loglik


def refresh_statistics(state: MixtureState, data: BinaryDataset) -> None:
    """Recompute counts, successes, and cell_counts from (z, x_work)."""
    n, p = data.x.shape
    k = state.k
    state.counts = np.bincount(state.z, minlength=k)
    successes = np.empty((p, k))
    if state.impute:
        values = state.x_work.astype(np.float64)
        for j in range(p):
            successes[j] = np.bincount(state.z, weights=values[:, j], minlength=k)
        cell_counts = np.broadcast_to(
            state.counts.astype(np.float64), (p, k)
        ).copy()
    else:
        x1, _ = _split_indicators(data)
        obs = data.observed.astype(np.float64)
        cell_counts = np.empty((p, k))
        for j in range(p):
            successes[j] = np.bincount(state.z, weights=x1[:, j], minlength=k)
            cell_counts[j] = np.bincount(state.z, weights=obs[:, j], minlength=k)
    state.successes = successes
    state.cell_counts = cell_counts


def validate_statistics(state: MixtureState, data: BinaryDataset) -> None:
    """Exact-recompute check of the incremental statistics (debug aid)."""
    expected_counts = np.bincount(state.z, minlength=state.k)
    if not np.array_equal(state.counts, expected_counts):
        raise ValueError("component occupancy counts out of sync with z")
    saved = (state.counts, state.successes, state.cell_counts)
    probe = MixtureState(
        k=state.k,
        z=state.z,
        pi=state.pi,
        theta=state.theta,
        x_work=state.x_work,
        impute=state.impute,
    )
    refresh_statistics(probe, data)
    if not (
        np.allclose(probe.successes, saved[1])
        and np.allclose(probe.cell_counts, saved[2])
    ):
        raise ValueError("sufficient statistics out of sync with (z, x_work)")


def init_state(
    data: BinaryDataset, priors: Priors, rng: np.random.Generator, impute: bool = True
) -> MixtureState:
    """Draw a starting point from the priors.

    k from the K prior, z uniform over the k components, weights and theta
    from their priors, missing cells imputed from the initial theta.
    """
    n, p = data.x.shape
    k = int(rng.choice(np.arange(1, priors.k_max + 1), p=np.exp(priors.log_k_prior())))
    gamma = priors.gamma_value
    pi = _clamp_weights(rng.dirichlet(np.full(k, gamma)))
    theta = _clamp_theta(rng.beta(priors.alpha, priors.beta, size=(p, k)))
    z = rng.integers(0, k, size=n)
    x_work = data.x.copy()
    state = MixtureState(
        k=k, z=z, pi=pi, theta=theta, x_work=x_work, impute=impute
    )
    if impute:
        _draw_imputations(state, data, rng)
    refresh_statistics(state, data)
    return state


def _draw_imputations(state, data: BinaryDataset, rng: np.random.Generator) -> None:
    miss_i, miss_j = np.nonzero(~data.observed)
    if miss_i.size == 0:
        return
    probs = state.theta[miss_j, state.z[miss_i]]
    state.x_work[miss_i, miss_j] = rng.random(miss_i.size) < probs


def gibbs_update_pi(
    state: MixtureState, priors: Priors, rng: np.random.Generator
) -> np.ndarray:
    """Draw weights from Dirichlet(gamma + counts); conjugate, heat-free."""
    state.pi = _clamp_weights(
        rng.dirichlet(priors.gamma_value + state.counts.astype(np.float64))
    )
    return state.pi


def gibbs_update_theta(
    state: MixtureState, priors: Priors, rng: np.random.Generator
) -> np.ndarray:
    """Draw each theta cell from Beta(alpha + s, beta + m - s).

    s and m are the per-(variable, component) ones and counted cells; a
    missing cell contributes only while imputation is on.
    """
    a = priors.alpha + state.successes
    b = priors.beta + state.cell_counts - state.successes
    state.theta = _clamp_theta(rng.beta(a, b))
    return state.theta


def gibbs_update_z(
    state: MixtureState,
    data: BinaryDataset,
    rng: np.random.Generator,
    heat: float = 1.0,
) -> np.ndarray:
    """Redraw every allocation from its categorical conditional.

    Uses observed cells only (current imputations are marginalized out and
    redrawn afterwards).  The likelihood term is raised to `heat`; the
    Gumbel-max trick picks the component per unit.  Refreshes statistics.
    """
    logits = np.log(state.pi)[None, :] + heat * per_component_log_likelihood(
        data, state.theta
    )
    state.z = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
    refresh_statistics(state, data)
    return state.z


def impute_missing(
    state: MixtureState, data: BinaryDataset, rng: np.random.Generator
) -> None:
    """Redraw unobserved cells from Bernoulli(theta[j, z_i]), update stats."""
    if not state.impute:
        return
    miss_i, miss_j = np.nonzero(~data.observed)
    if miss_i.size == 0:
        return
    old = state.x_work[miss_i, miss_j].astype(np.float64)
    probs = state.theta[miss_j, state.z[miss_i]]
    new = (rng.random(miss_i.size) < probs).astype(np.int8)
    state.x_work[miss_i, miss_j] = new
    np.add.at(state.successes, (miss_j, state.z[miss_i]), new - old)
