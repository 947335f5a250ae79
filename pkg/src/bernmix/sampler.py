"""Coupled tempered Gibbs sampling over allocations and component count.

One chain per heat runs the full mixture sweep; only the cold chain is
recorded.  Heats flatten the likelihood (priors stay cold), so hot chains
cross between allocation modes more easily and feed improved states to the
cold chain through Metropolis state exchanges.

Randomness contract: a run is driven by a single seed.  The seed sequence
is split into one stream per chain plus one orchestration stream for swap
decisions, so chains could advance concurrently without changing results;
reruns with the same config are bit-identical.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .dataset import BinaryDataset
from .model import (
    MixtureState,
    Priors,
    gibbs_update_pi,
    gibbs_update_theta,
    gibbs_update_z,
    impute_missing,
    init_state,
    log_joint,
    log_observed_likelihood,
)

logger = logging.getLogger(__name__)

SWAP_PAIR_SCHEMES = ("adjacent", "any")

# Tuning target for the exchange acceptance rate between adjacent chains;
# delta_t should be adjusted until the realized rate lands inside.
TARGET_SWAP_ACCEPTANCE = (0.20, 0.60)


@dataclass(frozen=True)
class Mc3Config:
    """Run-length, tempering, and bookkeeping settings for one run."""

    n_iterations: int = 15000
    burn_in_iterations: int = 5000
    thin: int = 10
    n_chains: int = 4
    delta_t: float = 0.025
    swap_attempts_per_iteration: int = 1
    k_move_probability: float = 1.0
    impute: bool = True
    swap_pair_scheme: str = "adjacent"
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if not 0 <= self.burn_in_iterations < self.n_iterations:
            raise ValueError("burn_in_iterations must be in [0, n_iterations)")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.delta_t < 0:
            raise ValueError("delta_t must be nonnegative")
        if self.swap_attempts_per_iteration < 0:
            raise ValueError("swap_attempts_per_iteration must be nonnegative")
        if not 0.0 <= self.k_move_probability <= 1.0:
            raise ValueError("k_move_probability must be in [0, 1]")
        if self.swap_pair_scheme not in SWAP_PAIR_SCHEMES:
            raise ValueError(f"unknown swap pair scheme {self.swap_pair_scheme!r}")

    @property
    def n_retained(self) -> int:
        """Retained cold-chain draws: floor((n_iterations - burn_in) / thin)."""
        return (self.n_iterations - self.burn_in_iterations) // self.thin


def heat_schedule(n_chains: int, delta_t: float) -> np.ndarray:
    """Heats h_m = 1 / (1 + delta_t * m) for m = 0..n_chains-1.

    The first chain is cold (h = 1); larger delta_t spreads the ladder.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    if delta_t < 0:
        raise ValueError("delta_t must be nonnegative")
    return 1.0 / (1.0 + delta_t * np.arange(n_chains))


def propose_k_move(
    state: MixtureState,
    data: BinaryDataset,
    priors: Priors,
    heat: float,
    rng: np.random.Generator,
) -> bool:
    """One birth/death move on the component count via empty components.

    Birth appends an empty component: a fresh theta column from its prior
    and a weight u ~ Beta(gamma, k*gamma) spliced in by scaling existing
    weights by (1 - u).  Death removes a uniformly chosen empty component.
    Both are Metropolis moves against the K prior, the collapsed allocation
    weight (1-u)^n, and the count of candidate empties; the likelihood
    factor cancels exactly because the component is empty, so the move is
    heat-free.  Birth at k_max and death with no empty component (or at
    k = 1) auto-reject.  Returns True when the proposal is accepted.
    """
    del heat  # empty components carry no data; the tempered factor is 1
    n = data.n_units
    p = data.n_variables
    gamma = priors.gamma_value
    log_pk = priors.log_k_prior()
    k = state.k

    if rng.random() < 0.5:  # birth
        if k == priors.k_max:
            return False
        u = float(np.clip(rng.beta(gamma, k * gamma), 1e-12, 1.0 - 1e-12))
        theta_col = np.clip(
            rng.beta(priors.alpha, priors.beta, size=p), 1e-12, 1.0 - 1e-12
        )
        n_empty_after = int((state.counts == 0).sum()) + 1
        log_accept = (
            log_pk[k] - log_pk[k - 1]
            + n * np.log1p(-u)
            + np.log(k + 1)
            - np.log(n_empty_after)
        )
        if np.log(rng.random()) >= log_accept:
            return False
        pi = np.append(state.pi * (1.0 - u), u)
        state.pi = pi / pi.sum()
        state.theta = np.concatenate([state.theta, theta_col[:, None]], axis=1)
        state.counts = np.append(state.counts, 0)
        state.successes = np.concatenate(
            [state.successes, np.zeros((p, 1))], axis=1
        )
        state.cell_counts = np.concatenate(
            [state.cell_counts, np.zeros((p, 1))], axis=1
        )
        state.k = k + 1
        return True

    # death
    empties = np.flatnonzero(state.counts == 0)
    if k == 1 or empties.size == 0:
        return False
    target = int(rng.choice(empties))
    u = float(state.pi[target])
    log_accept = (
        log_pk[k - 2] - log_pk[k - 1]
        - n * np.log1p(-u)
        + np.log(empties.size)
        - np.log(k)
    )
    if np.log(rng.random()) >= log_accept:
        return False
    pi = np.delete(state.pi, target)
    state.pi = pi / pi.sum()
    state.theta = np.delete(state.theta, target, axis=1)
    state.counts = np.delete(state.counts, target)
    state.successes = np.delete(state.successes, target, axis=1)
    state.cell_counts = np.delete(state.cell_counts, target, axis=1)
    state.z = np.where(state.z > target, state.z - 1, state.z)
    state.k = k - 1
    return True


def sweep(
    state: MixtureState,
    data: BinaryDataset,
    priors: Priors,
    heat: float,
    rng: np.random.Generator,
    k_move_probability: float = 1.0,
) -> tuple[MixtureState, bool | None]:
    """One full update of a chain at the given heat.

    Order: weights, probability columns, allocations (tempered), missing
    cells, then a birth/death move on the component count.  Returns the
    state and the K-move outcome (None when no move was attempted).
    """
    gibbs_update_pi(state, priors, rng)
    gibbs_update_theta(state, priors, rng)
    gibbs_update_z(state, data, rng, heat=heat)
    impute_missing(state, data, rng)
    accepted = None
    if k_move_probability >= 1.0 or rng.random() < k_move_probability:
        accepted = propose_k_move(state, data, priors, heat, rng)
    return state, accepted


def propose_swap(
    chain_states: list[MixtureState],
    heats: np.ndarray,
    data: BinaryDataset,
    rng: np.random.Generator,
    scheme: str = "adjacent",
) -> tuple[int, int, bool]:
    """Attempt one full-state exchange between two chains.

    The pair is adjacent (m, m+1) chosen uniformly by default; the 'any'
    scheme draws an arbitrary pair.  Acceptance is
    min(1, exp[(h_a - h_b) * (l_b - l_a)]) on the untempered log observed
    likelihoods, so a hotter chain holding a higher-likelihood state tends
    to pass it down the ladder.  Returns (a, b, accepted).
    """
    m = len(chain_states)
    if m < 2:
        raise ValueError("need at least two chains to swap")
    if scheme == "adjacent":
        a = int(rng.integers(0, m - 1))
        b = a + 1
    elif scheme == "any":
        a, b = sorted(int(v) for v in rng.choice(m, size=2, replace=False))
    else:
        raise ValueError(f"unknown swap pair scheme {scheme!r}")
    log_a = log_observed_likelihood(data, chain_states[a].pi, chain_states[a].theta)
    log_b = log_observed_likelihood(data, chain_states[b].pi, chain_states[b].theta)
    log_accept = (heats[a] - heats[b]) * (log_b - log_a)
    accepted = np.log(rng.random()) < log_accept
    if accepted:
        chain_states[a], chain_states[b] = chain_states[b], chain_states[a]
    return a, b, bool(accepted)


@dataclass
class PosteriorSamples:
    """Retained cold-chain draws plus run diagnostics.

    Ragged per-draw weights and theta matrices are kept as lists because
    the component count varies over the run.  z rows are 0-based labels.
    """

    n_units: int
    n_variables: int
    k_max: int
    iterations: np.ndarray
    k: np.ndarray
    k_nonempty: np.ndarray
    z: np.ndarray  # (T, n) int16
    pi: list
    theta: list
    log_posterior: np.ndarray
    log_observed: np.ndarray
    swap_attempts: np.ndarray | None = None  # (M, M) upper-triangular tallies
    swap_accepts: np.ndarray | None = None
    k_move_attempts: np.ndarray | None = None  # per chain
    k_move_accepts: np.ndarray | None = None
    elapsed_seconds: float | None = None
    config: Mc3Config | None = None
    priors: Priors | None = None

    @property
    def n_draws(self) -> int:
        return int(self.k.shape[0])

    def k_nonempty_distribution(self, k_max: int | None = None) -> np.ndarray:
        """Empirical pmf of the occupied-component count, index = count."""
        k_max = k_max or self.k_max
        return np.bincount(self.k_nonempty, minlength=k_max + 1) / self.n_draws

    def swap_acceptance_rate(self) -> float | None:
        if self.swap_attempts is None or self.swap_attempts.sum() == 0:
            return None
        return float(self.swap_accepts.sum() / self.swap_attempts.sum())

    def save_jsonl(self, path) -> None:
        """One JSON record per retained draw, deterministic byte-for-byte."""
        with open(path, "w") as fh:
            for t in range(self.n_draws):
                record = {
                    "iteration": int(self.iterations[t]),
                    "k": int(self.k[t]),
                    "k_nonempty": int(self.k_nonempty[t]),
                    "z": self.z[t].tolist(),
                    "pi": self.pi[t].tolist(),
                    "theta": self.theta[t].tolist(),
                    "log_posterior": float(self.log_posterior[t]),
                    "log_observed_likelihood": float(self.log_observed[t]),
                }
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def load_jsonl(cls, path) -> "PosteriorSamples":
        iterations, ks, k_nonempty, zs, pis, thetas, lps, lls = (
            [], [], [], [], [], [], [], [],
        )
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                iterations.append(rec["iteration"])
                ks.append(rec["k"])
                k_nonempty.append(rec["k_nonempty"])
                zs.append(rec["z"])
                pis.append(np.asarray(rec["pi"], dtype=np.float64))
                thetas.append(np.asarray(rec["theta"], dtype=np.float64))
                lps.append(rec["log_posterior"])
                lls.append(rec["log_observed_likelihood"])
        if not ks:
            raise ValueError(f"{path}: no draw records")
        z = np.asarray(zs, dtype=np.int16)
        return cls(
            n_units=z.shape[1],
            n_variables=thetas[0].shape[0],
            k_max=int(max(ks)),
            iterations=np.asarray(iterations, dtype=np.int64),
            k=np.asarray(ks, dtype=np.int64),
            k_nonempty=np.asarray(k_nonempty, dtype=np.int64),
            z=z,
            pi=pis,
            theta=thetas,
            log_posterior=np.asarray(lps, dtype=np.float64),
            log_observed=np.asarray(lls, dtype=np.float64),
        )


def run_mc3(
    data: BinaryDataset,
    priors: Priors,
    config: Mc3Config,
    progress: bool = False,
) -> PosteriorSamples:
    """Run the coupled chains and collect thinned post-burn-in cold draws.

    Draw t of the cold chain is retained when t > burn_in and
    (t - burn_in) % thin == 0, giving exactly n_retained draws.  Chains use
    disjoint child streams of the seed; swaps use a separate orchestration
    stream, so the schedule of random numbers per chain is fixed no matter
    how sweeps are interleaved.
    """
    start = time.perf_counter()
    m = config.n_chains
    heats = heat_schedule(m, config.delta_t)
    seeds = np.random.SeedSequence(config.seed).spawn(m + 1)
    chain_rngs = [np.random.default_rng(s) for s in seeds[:m]]
    swap_rng = np.random.default_rng(seeds[m])

    states = [
        init_state(data, priors, chain_rngs[i], impute=config.impute)
        for i in range(m)
    ]

    n_retained = config.n_retained
    n = data.n_units
    iterations = np.empty(n_retained, dtype=np.int64)
    k_draws = np.empty(n_retained, dtype=np.int64)
    k_nonempty = np.empty(n_retained, dtype=np.int64)
    z_draws = np.empty((n_retained, n), dtype=np.int16)
    pi_draws: list[np.ndarray] = []
    theta_draws: list[np.ndarray] = []
    log_post = np.empty(n_retained, dtype=np.float64)
    log_obs = np.empty(n_retained, dtype=np.float64)

    swap_attempts = np.zeros((m, m), dtype=np.int64)
    swap_accepts = np.zeros((m, m), dtype=np.int64)
    k_move_attempts = np.zeros(m, dtype=np.int64)
    k_move_accepts = np.zeros(m, dtype=np.int64)

    report_every = max(1, config.n_iterations // 10)
    t_out = 0
    for t in range(1, config.n_iterations + 1):
        for i in range(m):
            _, accepted = sweep(
                states[i],
                data,
                priors,
                heats[i],
                chain_rngs[i],
                k_move_probability=config.k_move_probability,
            )
            if accepted is not None:
                k_move_attempts[i] += 1
                k_move_accepts[i] += int(accepted)
        if m > 1:
            for _ in range(config.swap_attempts_per_iteration):
                a, b, accepted = propose_swap(
                    states, heats, data, swap_rng, scheme=config.swap_pair_scheme
                )
                swap_attempts[a, b] += 1
                swap_accepts[a, b] += int(accepted)
        if (
            t > config.burn_in_iterations
            and (t - config.burn_in_iterations) % config.thin == 0
            and t_out < n_retained
        ):
            cold = states[0]
            iterations[t_out] = t
            k_draws[t_out] = cold.k
            k_nonempty[t_out] = cold.k_nonempty
            z_draws[t_out] = cold.z
            pi_draws.append(cold.pi.copy())
            theta_draws.append(cold.theta.copy())
            log_post[t_out] = log_joint(data, cold, priors)
            log_obs[t_out] = log_observed_likelihood(data, cold.pi, cold.theta)
            t_out += 1
        if progress and t % report_every == 0:
            logger.info(
                "iteration %d/%d cold k_nonempty=%d",
                t,
                config.n_iterations,
                states[0].k_nonempty,
            )

    return PosteriorSamples(
        n_units=n,
        n_variables=data.n_variables,
        k_max=priors.k_max,
        iterations=iterations,
        k=k_draws,
        k_nonempty=k_nonempty,
        z=z_draws,
        pi=pi_draws,
        theta=theta_draws,
        log_posterior=log_post,
        log_observed=log_obs,
        swap_attempts=swap_attempts,
        swap_accepts=swap_accepts,
        k_move_attempts=k_move_attempts,
        k_move_accepts=k_move_accepts,
        elapsed_seconds=time.perf_counter() - start,
        config=config,
        priors=priors,
    )


def swap_acceptance_sweep(
    data: BinaryDataset,
    priors: Priors,
    base_config: Mc3Config,
    delta_ts,
    n_iterations: int = 2000,
) -> list[dict]:
    """Short pilot runs over a delta_t grid, reporting swap acceptance.

    Manual tuning helper: pick a delta_t whose realized acceptance lands in
    TARGET_SWAP_ACCEPTANCE.
    """
    rows = []
    for delta_t in delta_ts:
        cfg = replace(
            base_config,
            delta_t=float(delta_t),
            n_iterations=n_iterations,
            burn_in_iterations=min(base_config.burn_in_iterations, n_iterations // 2),
        )
        samples = run_mc3(data, priors, cfg)
        rows.append(
            {
                "delta_t": float(delta_t),
                "swap_acceptance": samples.swap_acceptance_rate(),
                "in_target_band": (
                    samples.swap_acceptance_rate() is not None
                    and TARGET_SWAP_ACCEPTANCE[0]
                    <= samples.swap_acceptance_rate()
                    <= TARGET_SWAP_ACCEPTANCE[1]
                ),
            }
        )
    return rows
