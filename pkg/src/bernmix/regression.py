"""Bayesian logistic regression of a binary outcome on profile membership.

Profile labels and categorical covariates are dummy-coded against
reference levels; coefficients get independent Normal(0, prior_sd^2)
priors and are sampled with an adaptive random-walk Metropolis whose
proposal covariance is tuned toward a 23% acceptance rate during burn-in
and frozen afterwards.  Effects are reported as odds ratios with
equal-tailed credible intervals.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

logger = logging.getLogger(__name__)

SEPARATION_MEAN_BOUND = 10.0
SEPARATION_MIN_ESS = 50.0


@dataclass(frozen=True)
class CovariateSpec:
    """Categorical covariate with an explicit level order, reference first."""

    name: str
    levels: tuple

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError(f"covariate {self.name!r} needs at least two levels")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"covariate {self.name!r} has duplicate levels")

    @property
    def reference(self):
        return self.levels[0]


@dataclass
class PatientTable:
    """Per-patient rows: outcome, profile label, categorical covariates."""

    patient_ids: list
    outcome: np.ndarray  # (n,) 0/1
    profile: list  # raw labels, usually "1".."K"
    covariates: dict  # name -> list of raw level values

    def __post_init__(self):
        n = len(self.patient_ids)
        if self.outcome.shape != (n,):
            raise ValueError("outcome length does not match patient ids")
        if not np.isin(self.outcome, (0, 1)).all():
            raise ValueError("outcome column must be 0/1")
        if len(self.profile) != n:
            raise ValueError("profile length does not match patient ids")
        for name, values in self.covariates.items():
            if len(values) != n:
                raise ValueError(f"covariate {name!r} length mismatch")


def load_patient_table(
    path,
    outcome_column: str,
    profile_column: str = "profile",
    covariate_columns: tuple = (),
    id_column: str | None = None,
    delimiter: str = ",",
) -> PatientTable:
    """Read the patient CSV; outcome cells must be 0 or 1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if id_column is None:
            id_column = header[0]
        for needed in (id_column, outcome_column, profile_column, *covariate_columns):
            if needed not in header:
                raise ValueError(f"column {needed!r} not in header {header}")
        pos = {name: header.index(name) for name in header}
        ids, outcome, profile = [], [], []
        covariates = {name: [] for name in covariate_columns}
        for row_number, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ValueError(
                    f"row {row_number}: expected {len(header)} fields, got {len(row)}"
                )
            ids.append(row[pos[id_column]].strip())
            raw = row[pos[outcome_column]].strip()
            if raw not in ("0", "1"):
                raise ValueError(
                    f"row {row_number}: outcome must be 0 or 1, got {raw!r}"
                )
            outcome.append(int(raw))
            profile.append(row[pos[profile_column]].strip())
            for name in covariate_columns:
                covariates[name].append(row[pos[name]].strip())
    if not ids:
        raise ValueError(f"{path}: no data rows")
    return PatientTable(
        patient_ids=ids,
        outcome=np.asarray(outcome, dtype=np.int64),
        profile=profile,
        covariates=covariates,
    )


@dataclass
class DesignMatrix:
    matrix: np.ndarray  # (n, d) float64
    names: list  # column names, "intercept" first


def levels_from_data(values) -> tuple:
    """Level order by first appearance; the first becomes the reference."""
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return tuple(seen)


def _dummy_columns(name, values, spec: CovariateSpec):
    index = {level: i for i, level in enumerate(spec.levels)}
    unseen = sorted({v for v in values if v not in index})
    if unseen:
        raise ValueError(
            f"covariate {name!r} has values {unseen} outside declared levels "
            f"{list(spec.levels)}"
        )
    codes = np.asarray([index[v] for v in values])
    cols = []
    names = []
    for i, level in enumerate(spec.levels):
        if i == 0:
            continue  # reference level
        cols.append((codes == i).astype(np.float64))
        names.append(f"{name}_{level}")
    return cols, names


def build_design(
    table: PatientTable,
    profile_spec: CovariateSpec | None = None,
    covariate_specs: dict | None = None,
    profile_column_name: str = "profile",
) -> DesignMatrix:
    """Intercept plus dummy columns for profile and each covariate.

    Level specs default to first-appearance order (reference = first seen);
    pass explicit specs to control references.  Values outside declared
    levels raise with the offending value named.
    """
    covariate_specs = dict(covariate_specs or {})
    if profile_spec is None:
        profile_spec = CovariateSpec(
            profile_column_name, _sorted_profile_levels(table.profile)
        )
    cols = [np.ones(len(table.patient_ids))]
    names = ["intercept"]
    c, nm = _dummy_columns(profile_column_name, table.profile, profile_spec)
    cols.extend(c)
    names.extend(nm)
    for name in table.covariates:
        spec = covariate_specs.get(name) or CovariateSpec(
            name, levels_from_data(table.covariates[name])
        )
        c, nm = _dummy_columns(name, table.covariates[name], spec)
        cols.extend(c)
        names.extend(nm)
    return DesignMatrix(matrix=np.column_stack(cols), names=names)


def _sorted_profile_levels(values) -> tuple:
    """Numeric sort when labels are integers, so profile 1 is the reference."""
    unique = sorted(set(values))
    try:
        return tuple(sorted(unique, key=int))
    except ValueError:
        return tuple(unique)


def check_full_rank(design: DesignMatrix) -> None:
    """Raise on collinear columns, naming the ones a pivoted QR rejects."""
    x = design.matrix
    rank = np.linalg.matrix_rank(x)
    if rank == x.shape[1]:
        return
    _, _, pivots = qr(x, mode="economic", pivoting=True)
    dependent = sorted(design.names[i] for i in pivots[rank:])
    raise ValueError(
        f"design matrix is rank deficient (rank {rank} of {x.shape[1]}); "
        f"collinear columns: {dependent}"
    )


@dataclass
class CoefficientSamples:
    """Posterior draws of the log-odds coefficients plus diagnostics."""

    names: list
    draws: np.ndarray  # (T, d)
    acceptance_rate: float
    ess: np.ndarray  # (d,)
    prior_sd: float

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


def effective_sample_size(x: np.ndarray) -> float:
    """Initial-positive-sequence estimator on one scalar chain."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # pair consecutive lags; stop at the first nonpositive pair sum
    tau = 1.0
    m = 1
    prev = np.inf
    while m + 1 < n:
        gamma = rho[m] + rho[m + 1]
        if gamma <= 0:
            break
        gamma = min(gamma, prev)  # enforce monotone decrease
        tau += 2.0 * gamma
        prev = gamma
        m += 2
    return float(np.clip(n / tau, 1.0, n))


def fit_logistic(
    design: DesignMatrix,
    outcome: np.ndarray,
    prior_sd: float = 5.0,
    n_iterations: int = 15000,
    burn_in: int = 5000,
    thin: int = 5,
    seed: int = 0,
    target_acceptance: float = 0.23,
) -> CoefficientSamples:
    """Adaptive random-walk Metropolis over the coefficient vector.

    The proposal is a multivariate normal whose covariance tracks the
    empirical covariance of the burn-in history, scaled toward the target
    acceptance rate; both are frozen when burn-in ends.  Warns about
    probable separation when a coefficient combines a large posterior mean
    with a tiny effective sample size.
    """
    check_full_rank(design)
    x = design.matrix
    y = np.asarray(outcome, dtype=np.float64)
    n, d = x.shape
    if y.shape != (n,):
        raise ValueError("outcome length does not match design matrix")
    rng = np.random.default_rng(seed)

    def log_post(beta, eta):
        ll = float(y @ eta - np.logaddexp(0.0, eta).sum())
        return ll - 0.5 * float(beta @ beta) / prior_sd**2

    beta = np.zeros(d)
    eta = x @ beta
    current = log_post(beta, eta)

    log_scale = np.log(2.38 / np.sqrt(d))
    chol = np.eye(d)
    history = np.empty((burn_in, d))
    adapt_interval = 100
    batch_accepts = 0
    batch_count = 0

    kept = (n_iterations - burn_in) // thin
    draws = np.empty((kept, d))
    accepted_after = 0
    t_out = 0

    for t in range(1, n_iterations + 1):
        step = np.exp(log_scale) * (chol @ rng.standard_normal(d))
        proposal = beta + step
        eta_prop = x @ proposal
        cand = log_post(proposal, eta_prop)
        if np.log(rng.random()) < cand - current:
            beta, eta, current = proposal, eta_prop, cand
            batch_accepts += 1
            if t > burn_in:
                accepted_after += 1
        batch_count += 1

        if t <= burn_in:
            history[t - 1] = beta
            if t % adapt_interval == 0:
                rate = batch_accepts / batch_count
                gain = min(0.5, 5.0 / np.sqrt(t / adapt_interval))
                log_scale += gain * (rate - target_acceptance)
                batch_accepts = batch_count = 0
                if t >= 2 * adapt_interval:
                    cov = np.cov(history[:t].T).reshape(d, d)
                    cov += 1e-8 * np.eye(d)
                    chol = np.linalg.cholesky(cov)
        elif (t - burn_in) % thin == 0 and t_out < kept:
            draws[t_out] = beta
            t_out += 1

    acceptance = accepted_after / max(1, n_iterations - burn_in)
    ess = np.asarray([effective_sample_size(draws[:, j]) for j in range(d)])
    means = draws.mean(axis=0)
    flagged = [
        design.names[j]
        for j in range(d)
        if abs(means[j]) > SEPARATION_MEAN_BOUND and ess[j] < SEPARATION_MIN_ESS
    ]
    if flagged:
        warnings.warn(
            f"possible separation: coefficients {flagged} have posterior "
            f"mean beyond {SEPARATION_MEAN_BOUND} with effective sample size "
            f"under {SEPARATION_MIN_ESS:.0f}",
            RuntimeWarning,
            stacklevel=2,
        )
    return CoefficientSamples(
        names=list(design.names),
        draws=draws,
        acceptance_rate=float(acceptance),
        ess=ess,
        prior_sd=prior_sd,
    )


def odds_ratios(
    samples: CoefficientSamples,
    level: float = 0.95,
    point: str = "mean",
) -> list[dict]:
    """Odds ratios with equal-tailed credible intervals per coefficient.

    point = 'mean' exponentiates the posterior mean log-odds; 'median'
    uses the posterior median (the credible interval is unchanged).
    """
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    if point not in ("mean", "median"):
        raise ValueError("point must be 'mean' or 'median'")
    lo_q = (1.0 - level) / 2.0
    hi_q = 1.0 - lo_q
    rows = []
    for j, name in enumerate(samples.names):
        chain = samples.draws[:, j]
        center = chain.mean() if point == "mean" else np.median(chain)
        lo, hi = np.quantile(chain, [lo_q, hi_q])
        rows.append(
            {
                "name": name,
                "odds_ratio": float(np.exp(center)),
                "lower": float(np.exp(lo)),
                "upper": float(np.exp(hi)),
                "log_odds_mean": float(chain.mean()),
                "ess": float(samples.ess[j]),
                "level": level,
            }
        )
    return rows


def export_odds_ratios_csv(rows: list[dict], path, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(
            ["name", "odds_ratio", "lower", "upper", "log_odds_mean", "ess"]
        )
        for row in rows:
            writer.writerow(
                [
                    row["name"],
                    "%.6f" % row["odds_ratio"],
                    "%.6f" % row["lower"],
                    "%.6f" % row["upper"],
                    "%.6f" % row["log_odds_mean"],
                    "%.1f" % row["ess"],
                ]
            )


def forest_payload(rows: list[dict], title: str = "") -> dict:
    """Forest-plot-ready JSON: one entry per non-intercept coefficient."""
    return {
        "title": title,
        "reference_line": 1.0,
        "rows": [
            {
                "label": row["name"],
                "odds_ratio": row["odds_ratio"],
                "lower": row["lower"],
                "upper": row["upper"],
            }
            for row in rows
            if row["name"] != "intercept"
        ],
    }
