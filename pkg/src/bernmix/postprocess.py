"""From raw draws to profiles: relabeling, summaries, and exports.

Mixture draws are only identified up to label permutations, so summaries
first pick the modal number of occupied components, restrict to draws with
that count, and align each draw to a pivot allocation by solving an
assignment problem per draw.  Tiny profiles can then be dissolved into the
remaining ones for reporting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataset import BinaryDataset
from .sampler import PosteriorSamples

PROBABILITY_FORMAT = "%.6f"


def infer_k_map(samples: PosteriorSamples) -> int:
    """Posterior mode of the occupied-component count, ties to the smaller."""
    if samples.n_draws == 0:
        raise ValueError("no retained draws")
    counts = np.bincount(samples.k_nonempty)
    return int(counts.argmax())


def _reduce_draw(z, pi, theta, k):
    """Drop empty components; relabel occupants 0..c-1 by original index."""
    occ_counts = np.bincount(z, minlength=k)
    occupied = np.flatnonzero(occ_counts > 0)
    new_z = np.searchsorted(occupied, z)
    pi_occ = pi[occupied]
    return new_z, pi_occ / pi_occ.sum(), theta[:, occupied]


@dataclass
class RelabeledSamples:
    """Draws with k_map occupied components, aligned to the pivot.

    permutations[t] maps the reduced draw's label a to permutations[t][a];
    applying it to the stored pre-alignment draws reproduces z, pi, theta.
    """

    k_map: int
    draw_indices: np.ndarray
    pivot_draw_index: int
    z: np.ndarray  # (T, n)
    pi: np.ndarray  # (T, k_map)
    theta: np.ndarray  # (T, p, k_map)
    permutations: np.ndarray  # (T, k_map)

    @property
    def n_draws(self) -> int:
        return int(self.z.shape[0])


def _canonical_labels(z: np.ndarray) -> np.ndarray:
    """First-occurrence relabeling: unit 0's label becomes 0, and so on.

    Applied to the pivot so the alignment target, and with it every output,
    does not depend on the arbitrary label numbering of the input draws.
    """
    _, first, inverse = np.unique(z, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse]


def _match_counts(z: np.ndarray, pivot: np.ndarray, k: int) -> np.ndarray:
    table = np.zeros((k, k))
    np.add.at(table, (z, pivot), 1.0)
    return table


def best_permutation(z: np.ndarray, pivot: np.ndarray, k: int) -> np.ndarray:
    """Permutation of draw labels minimizing disagreement with the pivot.

    Exact solution of the k x k assignment problem maximizing the count of
    units whose relabeled allocation equals the pivot's.
    """
    table = _match_counts(z, pivot, k)
    _, cols = linear_sum_assignment(-table)
    return cols


def ecr_relabel(samples: PosteriorSamples, k_map: int | None = None) -> RelabeledSamples:
    """Align all draws with k_map occupied components to a pivot allocation.

    The pivot is the reduced allocation of the highest-log-posterior draw
    among those with exactly k_map occupied components, put into
    first-occurrence canonical form so relabeling the inputs cannot move
    the outputs.  Draws with any other occupied count are discarded here;
    the k_nonempty histogram is the place to look when that discards too
    much.
    """
    if k_map is None:
        k_map = infer_k_map(samples)
    keep = np.flatnonzero(samples.k_nonempty == k_map)
    if keep.size == 0:
        raise ValueError(
            f"no draws have {k_map} occupied components; inspect the "
            "k_nonempty histogram before summarizing"
        )
    reduced = [
        _reduce_draw(
            samples.z[t], samples.pi[t], samples.theta[t], int(samples.k[t])
        )
        for t in keep
    ]
    pivot_pos = int(np.argmax(samples.log_posterior[keep]))
    pivot_z = _canonical_labels(reduced[pivot_pos][0])

    n = samples.n_units
    p = samples.n_variables
    big_t = keep.size
    z_out = np.empty((big_t, n), dtype=np.int64)
    pi_out = np.empty((big_t, k_map))
    theta_out = np.empty((big_t, p, k_map))
    perms = np.empty((big_t, k_map), dtype=np.int64)
    for t, (z, pi, theta) in enumerate(reduced):
        perm = best_permutation(z, pivot_z, k_map)
        perms[t] = perm
        z_out[t] = perm[z]
        pi_out[t, perm] = pi
        theta_out[t][:, perm] = theta
    return RelabeledSamples(
        k_map=k_map,
        draw_indices=keep,
        pivot_draw_index=int(keep[pivot_pos]),
        z=z_out,
        pi=pi_out,
        theta=theta_out,
        permutations=perms,
    )


def posterior_means(relabeled: RelabeledSamples) -> tuple[np.ndarray, np.ndarray]:
    """Per-profile indicator probabilities (p, k) and weights (k,)."""
    return relabeled.theta.mean(axis=0), relabeled.pi.mean(axis=0)


def assign_profiles(relabeled: RelabeledSamples) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit profile frequencies across aligned draws, and the argmax.

    Ties in the argmax go to the lowest profile index.
    """
    n = relabeled.z.shape[1]
    probs = np.zeros((n, relabeled.k_map))
    for t in range(relabeled.n_draws):
        probs[np.arange(n), relabeled.z[t]] += 1.0
    probs /= relabeled.n_draws
    return probs, probs.argmax(axis=1)


@dataclass
class ProfileSummary:
    """Reporting bundle: profile parameters, memberships, bookkeeping.

    Profiles are 0-based in the arrays and 1-based in every export.  When
    reclassification ran, `pre` holds the untouched summary and
    `reclassification` records dissolved profiles, unit moves (original
    labels), and the final relabeling.
    """

    k_profiles: int
    theta_mean: np.ndarray  # (p, k)
    pi_mean: np.ndarray  # (k,)
    assignment_probability: np.ndarray  # (n, k), rows sum to 1
    hard_assignment: np.ndarray  # (n,)
    unit_ids: list
    column_names: list
    k_map: int
    reclassification: dict | None = None
    pre: "ProfileSummary | None" = None

    def __post_init__(self):
        rows = self.assignment_probability.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-9):
            raise ValueError("assignment probability rows must sum to 1")
        if not np.array_equal(
            self.hard_assignment, self.assignment_probability.argmax(axis=1)
        ):
            raise ValueError("hard assignment must be the row argmax")

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.hard_assignment, minlength=self.k_profiles)


def build_summary(
    relabeled: RelabeledSamples,
    unit_ids: list,
    column_names: list,
) -> ProfileSummary:
    theta_mean, pi_mean = posterior_means(relabeled)
    probs, hard = assign_profiles(relabeled)
    return ProfileSummary(
        k_profiles=relabeled.k_map,
        theta_mean=theta_mean,
        pi_mean=pi_mean,
        assignment_probability=probs,
        hard_assignment=hard,
        unit_ids=list(unit_ids),
        column_names=list(column_names),
        k_map=relabeled.k_map,
    )


def reclassify_small(
    summary: ProfileSummary, threshold_fraction: float = 0.05
) -> ProfileSummary:
    """Dissolve profiles holding under threshold_fraction of units.

    Iterates smallest-first: each unit of a dissolved profile moves to the
    surviving profile where its assignment probability is highest (ties to
    the lowest index).  Units of profiles meeting the threshold never move.
    Survivors are renumbered by descending size.  Raises when every profile
    falls below the threshold.
    """
    if not 0.0 <= threshold_fraction < 1.0:
        raise ValueError("threshold_fraction must be in [0, 1)")
    n = len(summary.unit_ids)
    cutoff = threshold_fraction * n
    probs = summary.assignment_probability
    assignment = summary.hard_assignment.copy()
    alive = list(range(summary.k_profiles))
    moves: list[dict] = []
    dissolved: list[int] = []

    while True:
        sizes = np.bincount(assignment, minlength=summary.k_profiles)
        small = [c for c in alive if sizes[c] < cutoff]
        if not small:
            break
        if len(small) == len(alive):
            raise ValueError(
                f"every profile holds under {threshold_fraction:.0%} of units; "
                "nothing left to absorb them"
            )
        victim = min(small, key=lambda c: (sizes[c], c))
        alive.remove(victim)
        dissolved.append(victim)
        members = np.flatnonzero(assignment == victim)
        alive_arr = np.asarray(alive)
        dest = alive_arr[np.argmax(probs[members][:, alive_arr], axis=1)]
        for unit, to in zip(members, dest):
            moves.append(
                {
                    "unit_id": summary.unit_ids[unit],
                    "from_profile": int(victim) + 1,
                    "to_profile": int(to) + 1,
                }
            )
        assignment[members] = dest

    final_sizes = np.bincount(assignment, minlength=summary.k_profiles)
    order = sorted(alive, key=lambda c: (-final_sizes[c], c))
    relabel = {old: new for new, old in enumerate(order)}

    new_probs = probs[:, order]
    row_mass = new_probs.sum(axis=1)
    new_probs = np.where(
        row_mass[:, None] > 0, new_probs / np.where(row_mass == 0, 1, row_mass)[:, None], 0.0
    )
    new_assignment = np.asarray([relabel[c] for c in assignment])
    degenerate = np.flatnonzero(row_mass == 0)
    for unit in degenerate:
        new_probs[unit] = 0.0
        new_probs[unit, new_assignment[unit]] = 1.0

    return ProfileSummary(
        k_profiles=len(order),
        theta_mean=summary.theta_mean[:, order],
        pi_mean=summary.pi_mean[order] / summary.pi_mean[order].sum(),
        assignment_probability=new_probs,
        hard_assignment=new_assignment,
        unit_ids=summary.unit_ids,
        column_names=summary.column_names,
        k_map=summary.k_map,
        reclassification={
            "threshold_fraction": threshold_fraction,
            "dissolved_profiles": [d + 1 for d in dissolved],
            "moves": moves,
            "relabel_map": {old + 1: new + 1 for old, new in relabel.items()},
        },
        pre=summary,
    )


def summarize_samples(
    samples: PosteriorSamples,
    unit_ids: list | None = None,
    column_names: list | None = None,
    reclassify_threshold: float = 0.05,
    k_map: int | None = None,
) -> ProfileSummary:
    """Full chain: k_map, relabeling, summaries, then reclassification.

    Returns the post-reclassification summary; the untouched one is on
    `.pre`.  Pass reclassify_threshold = 0 to skip dissolution entirely.
    """
    if unit_ids is None:
        unit_ids = [f"u{i:04d}" for i in range(samples.n_units)]
    if column_names is None:
        column_names = [f"v{j:02d}" for j in range(samples.n_variables)]
    relabeled = ecr_relabel(samples, k_map=k_map)
    summary = build_summary(relabeled, unit_ids, column_names)
    if reclassify_threshold <= 0:
        return summary
    return reclassify_small(summary, reclassify_threshold)


def imputation_summary(
    samples: PosteriorSamples, data: BinaryDataset
) -> list[dict]:
    """Posterior-mean probability for each unobserved cell.

    Averages theta[j, z_i] over all retained draws; `value` is the mean
    thresholded at 0.5.
    """
    miss_i, miss_j = np.nonzero(~data.observed)
    if miss_i.size == 0:
        return []
    acc = np.zeros(miss_i.size)
    for t in range(samples.n_draws):
        theta = samples.theta[t]
        acc += theta[miss_j, samples.z[t][miss_i]]
    acc /= samples.n_draws
    return [
        {
            "unit_id": data.unit_ids[i],
            "column": data.column_names[j],
            "posterior_mean": float(m),
            "value": int(m > 0.5),
        }
        for i, j, m in zip(miss_i, miss_j, acc)
    ]


def export_assignments_csv(summary: ProfileSummary, path, delimiter: str = ",") -> None:
    """Wide per-unit table: hard profile plus per-profile probabilities."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(
            ["unit_id", "profile"]
            + [f"prob_profile_{c + 1}" for c in range(summary.k_profiles)]
        )
        for i, uid in enumerate(summary.unit_ids):
            writer.writerow(
                [uid, int(summary.hard_assignment[i]) + 1]
                + [
                    PROBABILITY_FORMAT % v
                    for v in summary.assignment_probability[i]
                ]
            )


def export_theta_csv(summary: ProfileSummary, path, delimiter: str = ",") -> None:
    """Variables x profiles matrix of posterior indicator probabilities."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(
            ["variable"] + [f"profile_{c + 1}" for c in range(summary.k_profiles)]
        )
        for j, name in enumerate(summary.column_names):
            writer.writerow(
                [name] + [PROBABILITY_FORMAT % v for v in summary.theta_mean[j]]
            )


def export_profile_weights_csv(summary: ProfileSummary, path, delimiter: str = ",") -> None:
    sizes = summary.sizes
    n = len(summary.unit_ids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["profile", "weight_mean", "units", "share"])
        for c in range(summary.k_profiles):
            writer.writerow(
                [
                    c + 1,
                    PROBABILITY_FORMAT % summary.pi_mean[c],
                    int(sizes[c]),
                    PROBABILITY_FORMAT % (sizes[c] / n),
                ]
            )


def export_reclassification_csv(summary: ProfileSummary, path, delimiter: str = ",") -> None:
    moves = (summary.reclassification or {}).get("moves", [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["unit_id", "from_profile", "to_profile"])
        for move in moves:
            writer.writerow(
                [move["unit_id"], move["from_profile"], move["to_profile"]]
            )


def export_imputations_csv(rows: list[dict], path, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["unit_id", "column", "posterior_mean", "value"])
        for row in rows:
            writer.writerow(
                [
                    row["unit_id"],
                    row["column"],
                    PROBABILITY_FORMAT % row["posterior_mean"],
                    row["value"],
                ]
            )


def geojson_join(
    boundaries: dict,
    unit_ids: list,
    profiles: np.ndarray,
    probabilities: np.ndarray,
    key: str = "GEOID",
) -> tuple[dict, int, list]:
    """Annotate GeoJSON features with profile membership by unit id.

    `profiles` holds 1-based labels aligned to unit_ids.  Returns the
    updated object, the match count, and the unit ids absent from the
    boundary file.  Features without a match are left untouched.
    """
    if boundaries.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    index = {str(uid): i for i, uid in enumerate(unit_ids)}
    matched = set()
    for feature in boundaries.get("features", []):
        props = feature.setdefault("properties", {})
        uid = props.get(key)
        if uid is None or str(uid) not in index:
            continue
        i = index[str(uid)]
        matched.add(str(uid))
        props["profile"] = int(profiles[i])
        for c in range(probabilities.shape[1]):
            props[f"prob_profile_{c + 1}"] = round(float(probabilities[i, c]), 6)
    unmatched = [uid for uid in unit_ids if str(uid) not in matched]
    return boundaries, len(matched), unmatched


def load_assignments_csv(path, delimiter: str = ",") -> tuple[list, np.ndarray, np.ndarray]:
    """Read a table written by export_assignments_csv back into arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader)
        prob_cols = [i for i, h in enumerate(header) if h.startswith("prob_profile_")]
        if header[:2] != ["unit_id", "profile"] or not prob_cols:
            raise ValueError(f"{path}: not an assignments table (header {header})")
        unit_ids, profiles, probs = [], [], []
        for row in reader:
            unit_ids.append(row[0])
            profiles.append(int(row[1]))
            probs.append([float(row[i]) for i in prob_cols])
    return unit_ids, np.asarray(profiles), np.asarray(probs)
