"""Ground-truth machinery: synthetic data and exact enumeration posteriors.

The enumeration oracle normalizes the collapsed allocation density over
every (K, z) pair, which is only feasible on tiny instances; the guard is
deliberate and loud.  Sampler output is compared against these exact
distributions, never against another sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .dataset import BinaryDataset
from .model import Priors

ORACLE_MAX_UNITS = 10
ORACLE_MAX_COMPONENTS = 4

_CHUNK = 65536


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings: mixture truth plus an MCAR missingness rate."""

    pi: tuple
    theta: tuple  # (p, k_true) rows = variables
    n_units: int
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        if not np.isclose(pi.sum(), 1.0):
            raise ValueError("mixture weights must sum to 1")
        if theta.ndim != 2 or theta.shape[1] != pi.size:
            raise ValueError("theta must be (p, k) with k matching pi")
        if np.any((theta <= 0) | (theta >= 1)):
            raise ValueError("theta entries must lie strictly inside (0, 1)")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must be in [0, 1)")


def generate_synthetic(spec: SyntheticSpec) -> tuple[BinaryDataset, np.ndarray]:
    """Draw allocations, indicators, and an MCAR mask; returns truth too."""
    rng = np.random.default_rng(spec.seed)
    pi = np.asarray(spec.pi, dtype=np.float64)
    theta = np.asarray(spec.theta, dtype=np.float64)
    n = spec.n_units
    p = theta.shape[0]
    z_true = rng.choice(pi.size, size=n, p=pi)
    x = (rng.random((n, p)) < theta[:, z_true].T).astype(np.int8)
    observed = rng.random((n, p)) >= spec.missing_rate
    x[~observed] = 0
    unit_ids = [f"u{i:04d}" for i in range(n)]
    column_names = [f"v{j:02d}" for j in range(p)]
    dataset = BinaryDataset(
        x=x, observed=observed, unit_ids=unit_ids, column_names=column_names
    )
    return dataset, z_true


@dataclass
class ExactPosterior:
    """Exact posterior summaries from full enumeration.

    p_k_nonempty[c] is P(#occupied components = c) for c = 0..k_max.
    coclustering[i, j] is P(z_i = z_j).  partition_probs maps canonical
    allocation tuples (first-occurrence relabeling) to probabilities when
    requested.
    """

    k_max: int
    p_k_nonempty: np.ndarray
    coclustering: np.ndarray
    log_normalizer: float
    partition_probs: dict | None = None


def _decode_allocations(codes: np.ndarray, n: int, k: int) -> np.ndarray:
    """Base-k digits of each code, shape (len(codes), n)."""
    powers = k ** np.arange(n, dtype=np.int64)
    return (codes[:, None] // powers[None, :]) % k


def canonical_partition(z: np.ndarray) -> tuple:
    """Relabel by first occurrence so label identity drops out."""
    mapping: dict[int, int] = {}
    out = []
    for label in z:
        label = int(label)
        if label not in mapping:
            mapping[label] = len(mapping)
        out.append(mapping[label])
    return tuple(out)


def brute_force_posterior(
    data: BinaryDataset, priors: Priors, include_partitions: bool = False
) -> ExactPosterior:
    """Enumerate all (K, z) states and normalize the collapsed density.

    Refuses instances beyond n = 10 units or k_max = 4 components; the
    state count is sum_K K^n and grows past any reasonable budget there.
    """
    n, p = data.x.shape
    if n > ORACLE_MAX_UNITS:
        raise ValueError(
            f"enumeration limited to n <= {ORACLE_MAX_UNITS} units, got {n}"
        )
    if priors.k_max > ORACLE_MAX_COMPONENTS:
        raise ValueError(
            f"enumeration limited to k_max <= {ORACLE_MAX_COMPONENTS}, "
            f"got {priors.k_max}"
        )

    x1 = data.x.astype(np.float64)
    cells = data.observed.astype(np.float64)
    gamma = priors.gamma_value
    log_pk = priors.log_k_prior()

    log_p_occupied = np.full(priors.k_max + 1, -np.inf)
    log_cocluster = np.full((n, n), -np.inf)
    partitions: dict[tuple, float] = {}
    total = -np.inf

    for k in range(1, priors.k_max + 1):
        n_states = k**n
        base = (
            log_pk[k - 1]
            + gammaln(k * gamma)
            - gammaln(n + k * gamma)
            - k * gammaln(gamma)
        )
        for start in range(0, n_states, _CHUNK):
            codes = np.arange(start, min(start + _CHUNK, n_states), dtype=np.int64)
            z_chunk = _decode_allocations(codes, n, k)
            one_hot = np.zeros((codes.size, n, k))
            rows = np.arange(codes.size)[:, None]
            one_hot[rows, np.arange(n)[None, :], z_chunk] = 1.0
            counts = one_hot.sum(axis=1)
            log_alloc = gammaln(counts + gamma).sum(axis=1)
            ones = np.einsum("cnk,nj->cjk", one_hot, x1)
            m = np.einsum("cnk,nj->cjk", one_hot, cells)
            log_cells = (
                betaln(priors.alpha + ones, priors.beta + m - ones)
                - betaln(priors.alpha, priors.beta)
            ).sum(axis=(1, 2))
            w = base + log_alloc + log_cells

            total = np.logaddexp(total, logsumexp(w))
            occupied = (counts > 0).sum(axis=1).astype(int)
            for c in np.unique(occupied):
                log_p_occupied[c] = np.logaddexp(
                    log_p_occupied[c], logsumexp(w[occupied == c])
                )
            for i in range(n):
                for j in range(i + 1, n):
                    same = z_chunk[:, i] == z_chunk[:, j]
                    if same.any():
                        log_cocluster[i, j] = np.logaddexp(
                            log_cocluster[i, j], logsumexp(w[same])
                        )
            if include_partitions:
                for row, lw in zip(z_chunk, w):
                    key = canonical_partition(row)
                    prev = partitions.get(key, -np.inf)
                    partitions[key] = np.logaddexp(prev, lw)

    p_occ = np.exp(log_p_occupied - total)
    cocluster = np.exp(log_cocluster - total)
    cocluster = cocluster + cocluster.T
    np.fill_diagonal(cocluster, 1.0)
    partition_probs = None
    if include_partitions:
        partition_probs = {
            key: float(np.exp(lw - total)) for key, lw in partitions.items()
        }
    return ExactPosterior(
        k_max=priors.k_max,
        p_k_nonempty=p_occ,
        coclustering=cocluster,
        log_normalizer=float(total),
        partition_probs=partition_probs,
    )


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support vector")
    return float(0.5 * np.abs(p - q).sum())


def adjusted_rand_index(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Chance-corrected agreement between two hard clusterings."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape:
        raise ValueError("label vectors differ in length")
    n = labels_a.size
    _, a_idx = np.unique(labels_a, return_inverse=True)
    _, b_idx = np.unique(labels_b, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, b_idx.max() + 1))
    np.add.at(table, (a_idx, b_idx), 1)

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    expected = sum_rows * sum_cols / comb2(n)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
