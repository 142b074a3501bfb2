import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform

from affine_dpm.constants import credible_level

__doc__ = r"""
# Overview
Point estimation and uncertainty quantification on the space of partitions, from the allocations retained by the sampler.

## Posterior similarity matrix
[psm](#psm) returns $p_{ij}$, the fraction of retained draws in which observations $i$ and $j$ share a cluster.

## Variation of information
For partitions $p_1, p_2$ of $n$ items with block-count contingency table $n_{ab}$,
$VI(p_1, p_2) = H(p_1) + H(p_2) - 2 I(p_1, p_2)$, with natural logarithms throughout.

## Optimal partition
[optimal_partition](#optimal_partition) minimises the lower bound of the posterior expected VI

$$\frac{1}{n}\sum_i \left[\log \sum_j 1\{c_j = c_i\} + \log\sum_j p_{ij} - 2\log\sum_j 1\{c_j = c_i\}\,p_{ij}\right]$$

over every sampled partition and every cut of the average-linkage tree built on $1 - p_{ij}$. Ties go to fewer clusters, then to the candidate found first.

## Credible ball
The credible ball of level $\gamma$ around a centre $\hat c$ is the smallest VI ball holding a fraction $\gamma$ of the sampled partitions.
Its vertical lower bound is the in-ball partition with the most blocks that is farthest from $\hat c$; its vertical upper bound the one with the fewest blocks that is farthest from $\hat c$; its horizontal bound the farthest in-ball partition.
"""

tie_tol = 1e-12


def canonical_labels(labels):
    """Relabels so that the first item has label 0 and each new label is the smallest unused integer."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty vector")
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=int)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[inverse.ravel()]


class Partition:
    """A partition of n items, stored as canonical labels.

    Parameters
    ----------
    labels : array-like of length n
        Any hashable labels. Two label vectors describing the same blocks give equal partitions.
    """

    __slots__ = ("labels",)

    def __init__(self, labels):
        labels = canonical_labels(labels)
        labels.setflags(write=False)
        self.labels = labels

    @property
    def n(self):
        return len(self.labels)

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1

    def __len__(self):
        return self.n

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.labels.tobytes())

    def __repr__(self):
        return f"Partition(n={self.n}, n_clusters={self.n_clusters})"

    def to_dict(self):
        return {"labels": self.labels.tolist(), "n_clusters": self.n_clusters}


def as_partition(p):
    return p if isinstance(p, Partition) else Partition(p)


def _allocations(draws):
    if isinstance(draws, np.ndarray):
        matrix = np.atleast_2d(draws)
    elif hasattr(draws, "allocation_matrix"):
        if not len(draws):
            raise ValueError("the draw set is empty")
        matrix = draws.allocation_matrix()
    else:
        matrix = np.array([as_partition(p).labels for p in draws])
    if matrix.size == 0:
        raise ValueError("no partitions were given")
    return matrix


def sampled_partitions(draws):
    """Canonical partitions of every retained draw, in draw order."""
    return [Partition(row) for row in _allocations(draws)]


def n_clusters(p):
    return as_partition(p).n_clusters


def block_sizes(p):
    return np.bincount(as_partition(p).labels)


def _one_hot(labels):
    z = np.zeros((len(labels), labels.max() + 1))
    z[np.arange(len(labels)), labels] = 1.0
    return z


def psm(draws):
    """Posterior similarity matrix.

    Parameters
    ----------
    draws : DrawSet, np.ndarray of shape (S, n) or list of Partition

    Returns
    -------
    np.ndarray of shape (n, n)
        Symmetric, unit diagonal, entries in [0, 1].
    """
    matrix = _allocations(draws)
    n = matrix.shape[1]
    total = np.zeros((n, n))
    for labels in matrix:
        z = _one_hot(canonical_labels(labels))
        total += z @ z.T
    return total / matrix.shape[0]


def contingency(p1, p2):
    p1, p2 = as_partition(p1), as_partition(p2)
    if p1.n != p2.n:
        raise ValueError(f"partitions have different lengths ({p1.n} and {p2.n})")
    table = np.zeros((p1.n_clusters, p2.n_clusters))
    np.add.at(table, (p1.labels, p2.labels), 1.0)
    return table


def vi(p1, p2):
    """Variation of information in nats."""
    table = contingency(p1, p2) / len(as_partition(p1))
    rows = table.sum(axis=1, keepdims=True)
    cols = table.sum(axis=0, keepdims=True)
    nz = table > 0
    joint = table[nz]
    row_part = np.broadcast_to(rows, table.shape)[nz]
    col_part = np.broadcast_to(cols, table.shape)[nz]
    value = -np.sum(joint * (np.log(joint / row_part) + np.log(joint / col_part)))
    return max(float(value), 0.0)


def mean_vi(candidate, draws):
    """Exact posterior mean VI of `candidate` over the sampled partitions."""
    return float(np.mean([vi(candidate, p) for p in sampled_partitions(draws)]))


def expected_vi_bound(candidate, similarity):
    """Lower bound of the posterior expected VI of `candidate`, from the PSM.

    Parameters
    ----------
    candidate : Partition or array-like of labels
    similarity : np.ndarray of shape (n, n)

    Returns
    -------
    float
    """
    labels = as_partition(candidate).labels
    similarity = np.asarray(similarity, dtype=float)
    if similarity.shape != (len(labels), len(labels)):
        raise ValueError(
            f"PSM of shape {similarity.shape} does not match a partition of {len(labels)} items"
        )
    z = _one_hot(labels)
    own_size = z.sum(axis=0)[labels]
    row_mass = similarity.sum(axis=1)
    shared = (similarity @ z)[np.arange(len(labels)), labels]
    return float(np.mean(np.log(own_size) + np.log(row_mass) - 2.0 * np.log(shared)))


def linkage_cuts(similarity):
    """Partitions from cutting the average-linkage tree of 1 - PSM at every merge height."""
    n = similarity.shape[0]
    if n == 1:
        return [Partition([0])]
    dissimilarity = np.clip(1.0 - similarity, 0.0, None)
    np.fill_diagonal(dissimilarity, 0.0)
    tree = linkage(squareform(dissimilarity, checks=False), method="average")
    cuts = cut_tree(tree)
    return [Partition(cuts[:, k]) for k in range(cuts.shape[1])]


def _select(values, candidates):
    values = np.asarray(values)
    best = values.min()
    tied = [k for k in range(len(values)) if values[k] <= best + tie_tol]
    return min(tied, key=lambda k: (candidates[k].n_clusters, k))


def optimal_partition(draws, similarity=None):
    """Minimiser of `expected_vi_bound` over sampled partitions and linkage cuts.

    Parameters
    ----------
    draws : DrawSet, np.ndarray of shape (S, n) or list of Partition
    similarity : np.ndarray, optional
        The PSM of `draws`; computed when omitted

    Returns
    -------
    Partition
    """
    similarity = psm(draws) if similarity is None else similarity
    candidates = list(dict.fromkeys(sampled_partitions(draws)))
    seen = set(candidates)
    candidates += [p for p in dict.fromkeys(linkage_cuts(similarity)) if p not in seen]
    values = [expected_vi_bound(p, similarity) for p in candidates]
    best = candidates[_select(values, candidates)]
    logging.info(
        f"Optimal partition among {len(candidates)} candidates has {best.n_clusters} clusters"
    )
    return best


def largest_block(p):
    """Boolean indicator of the largest block (the first one on ties)."""
    p = as_partition(p)
    return p.labels == int(np.argmax(block_sizes(p)))


@dataclass(frozen=True)
class CredibleBall:
    center: Partition
    radius: float
    level: float
    vertical_lower: Partition
    vertical_upper: Partition
    horizontal: Partition

    def report(self):
        """Block counts and largest-block sizes of every bound."""
        rows = {}
        for name in ("center", "vertical_lower", "vertical_upper", "horizontal"):
            p = getattr(self, name)
            rows[name] = {
                "n_clusters": p.n_clusters,
                "largest_block": int(block_sizes(p).max()),
                "vi_to_center": vi(p, self.center),
            }
        overlap = largest_block(self.vertical_lower) & largest_block(self.vertical_upper)
        return {"bounds": rows, "vertical_largest_block_overlap": int(overlap.sum())}

    def to_dict(self):
        return {
            "radius": self.radius,
            "level": self.level,
            "vi_log_base": "e",
            "center": self.center.to_dict(),
            "vertical_lower": self.vertical_lower.to_dict(),
            "vertical_upper": self.vertical_upper.to_dict(),
            "horizontal": self.horizontal.to_dict(),
            "report": self.report(),
        }


def credible_ball(draws, center, level=credible_level):
    """Credible ball of the given level around `center`, searched over the sampled partitions.

    Parameters
    ----------
    draws : DrawSet, np.ndarray of shape (S, n) or list of Partition
    center : Partition
    level : float, default=0.95

    Returns
    -------
    CredibleBall
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    center = as_partition(center)
    partitions = sampled_partitions(draws)
    distance = np.array([vi(center, p) for p in partitions])
    order = np.sort(distance)
    radius = float(order[int(np.ceil(level * len(order) - 1e-9)) - 1])
    inside = [k for k in range(len(partitions)) if distance[k] <= radius]
    blocks = np.array([partitions[k].n_clusters for k in inside])

    def farthest(candidates):
        best = max(distance[k] for k in candidates)
        tied = [k for k in candidates if distance[k] >= best - tie_tol]
        return partitions[min(tied, key=lambda k: (partitions[k].n_clusters, k))]

    lower = farthest([k for k, b in zip(inside, blocks) if b == blocks.max()])
    upper = farthest([k for k, b in zip(inside, blocks) if b == blocks.min()])
    return CredibleBall(
        center=center,
        radius=radius,
        level=level,
        vertical_lower=lower,
        vertical_upper=upper,
        horizontal=farthest(inside),
    )


def _size_order(labels):
    labels = pd.Series(labels).reset_index(drop=True)
    sizes = labels.value_counts(sort=False)
    first = labels.drop_duplicates()
    first = pd.Series(first.index, index=first.values)
    return sorted(sizes.index, key=lambda lab: (-sizes[lab], first[lab]))


def confusion_matrix(p, reference):
    """Cross-tabulation of estimated blocks (rows) against reference labels (columns).

    Rows and columns are ordered by decreasing size, ties by first occurrence.

    Parameters
    ----------
    p : Partition or array-like of labels
    reference : array-like of labels

    Returns
    -------
    pd.DataFrame
    """
    estimated = as_partition(p).labels
    reference = np.asarray(reference)
    if len(reference) != len(estimated):
        raise ValueError(
            f"partition has {len(estimated)} items but the reference has {len(reference)}"
        )
    table = pd.crosstab(
        pd.Series(estimated, name="estimated"), pd.Series(reference, name="reference")
    )
    return table.loc[_size_order(estimated), _size_order(reference)]


def write_psm_csv(similarity, path):
    pd.DataFrame(similarity).to_csv(path, index=False, header=False, float_format="%.17g")
    logging.info(f"Wrote {similarity.shape[0]}x{similarity.shape[0]} similarity matrix to {path}")


def read_psm_csv(path):
    return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=float)
