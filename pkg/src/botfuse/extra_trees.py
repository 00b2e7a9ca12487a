"""Extremely randomized trees for binary node classification.

Every tree is grown on the full training sample (no bootstrap). At each node
a subset of attributes is drawn without replacement among the attributes that
are non-constant in the node, one uniform random cut-point is drawn per
attribute strictly inside the node's value range, and the cut with the best
information gain wins. Splitting stops at purity, at min_samples_split, or
when no attribute admits a cut.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ENSEMBLE_FORMAT = "botfuse-trees"
ENSEMBLE_FORMAT_VERSION = 1

DEFAULT_N_TREES = 100
DEFAULT_MIN_SAMPLES_SPLIT = 2

_LEAF = -1


@dataclass
class TreeEnsemble:
    """Fitted forest: flat node arrays per tree plus the fit parameters."""

    n_features: int
    n_trees: int
    k_features: int
    min_samples_split: int
    seed: int
    trees: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.trees) != self.n_trees:
            raise ValueError(
                f"ensemble declares {self.n_trees} trees but holds {len(self.trees)}"
            )


def _entropy(c0: int, c1: int) -> float:
    # Summed smaller-count-first so swapping the classes gives the identical
    # float, keeping tie-breaks stable under label inversion.
    n = c0 + c1
    h = 0.0
    for c in sorted((c0, c1)):
        if c:
            p = c / n
            h -= p * math.log2(p)
    return h


def _draw_cut(rng: np.random.Generator, lo: float, hi: float) -> float | None:
    # Threshold must fall strictly inside (lo, hi); routing is < left, >= right.
    u = rng.uniform(lo, hi)
    if lo < u < hi:
        return float(u)
    u = 0.5 * (lo + hi)
    if lo < u < hi:
        return float(u)
    u = float(np.nextafter(lo, hi))
    return u if lo < u < hi else None


def _choose_split(X, y, idx, k, min_split, rng, c0, c1):
    n = idx.size
    if n < min_split or c0 == 0 or c1 == 0:
        return None
    sub = X[idx]
    mins = sub.min(axis=0)
    maxs = sub.max(axis=0)
    candidates = np.nonzero(mins < maxs)[0]
    if candidates.size == 0:
        return None
    k_eff = min(k, candidates.size)
    chosen = rng.choice(candidates, size=k_eff, replace=False)

    parent_h = _entropy(c0, c1)
    best = None
    for f in chosen:
        t = _draw_cut(rng, float(mins[f]), float(maxs[f]))
        if t is None:
            continue
        lmask = sub[:, f] < t
        nl = int(lmask.sum())
        nr = n - nl
        l1 = int(y[idx[lmask]].sum())
        l0 = nl - l1
        gain = (
            parent_h
            - (nl / n) * _entropy(l0, l1)
            - (nr / n) * _entropy(c0 - l0, c1 - l1)
        )
        if best is None or gain > best[0]:
            best = (gain, int(f), t, lmask)
    if best is None:
        return None
    _, f, t, lmask = best
    return f, t, idx[lmask], idx[~lmask]


def _build_tree(X, y, k, min_split, rng) -> dict:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[list[int]] = []

    # Explicit stack, left child processed first: node ids follow a fixed
    # pre-order so identical draws give identical arrays.
    stack: list[tuple[np.ndarray, int, bool]] = [(np.arange(y.size), _LEAF, False)]
    while stack:
        idx, parent, is_left = stack.pop()
        node_id = len(feature)
        if parent != _LEAF:
            (left if is_left else right)[parent] = node_id
        c1 = int(y[idx].sum())
        c0 = idx.size - c1
        counts.append([c0, c1])
        split = _choose_split(X, y, idx, k, min_split, rng, c0, c1)
        if split is None:
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            continue
        f, t, idx_l, idx_r = split
        feature.append(f)
        threshold.append(t)
        left.append(_LEAF)
        right.append(_LEAF)
        stack.append((idx_r, node_id, False))
        stack.append((idx_l, node_id, True))

    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "counts": np.asarray(counts, dtype=np.int64),
    }


def fit(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = DEFAULT_N_TREES,
    k_features: int | None = None,
    min_samples_split: int = DEFAULT_MIN_SAMPLES_SPLIT,
    seed: int = 0,
) -> TreeEnsemble:
    """Grow the ensemble on the full sample with per-tree derived seeds."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X {X.shape} and y {y.shape} do not align")
    n, d = X.shape
    if d == 0:
        raise ValueError("cannot fit on zero features")
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    classes = np.unique(y)
    if not np.array_equal(classes, [0, 1]):
        if classes.size == 1:
            raise ValueError("training data contains a single class")
        raise ValueError(f"labels must be binary 0/1, got classes {classes.tolist()}")
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    if min_samples_split < 2:
        raise ValueError(f"min_samples_split must be >= 2, got {min_samples_split}")
    k = math.ceil(math.sqrt(d)) if k_features is None else k_features
    if not 1 <= k <= d:
        raise ValueError(f"k_features must be in [1, {d}], got {k}")

    y = y.astype(np.int64)
    trees = []
    for i in range(n_trees):
        # Derived per-tree stream: tree i gets the same draws whether the
        # forest is grown serially or in parallel.
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        trees.append(_build_tree(X, y, k, min_samples_split, rng))

    return TreeEnsemble(
        n_features=d,
        n_trees=n_trees,
        k_features=k,
        min_samples_split=min_samples_split,
        seed=seed,
        trees=trees,
    )


def route(tree: dict, X: np.ndarray) -> np.ndarray:
    """Leaf index reached by each row (routing rule: value < threshold goes left)."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    feature = tree["feature"]
    threshold = tree["threshold"]
    left = tree["left"]
    right = tree["right"]
    active = feature[node] != _LEAF
    while active.any():
        rows = np.nonzero(active)[0]
        cur = node[rows]
        goleft = X[rows, feature[cur]] < threshold[cur]
        node[rows] = np.where(goleft, left[cur], right[cur])
        active = feature[node] != _LEAF
    return node


def _check_input(ensemble: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ensemble.n_features:
        raise ValueError(
            f"expected n x {ensemble.n_features} input, got {X.shape}"
        )
    return X


def predict_proba(ensemble: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    """Probability of the positive class: unweighted mean of leaf frequencies."""
    X = _check_input(ensemble, X)
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for tree in ensemble.trees:
        leaves = route(tree, X)
        c = tree["counts"][leaves]
        acc += c[:, 1] / c.sum(axis=1)
    return acc / ensemble.n_trees


def predict(ensemble: TreeEnsemble, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(ensemble, X) >= threshold).astype(np.int64)


def serialize_ensemble(ensemble: TreeEnsemble) -> bytes:
    """Canonical JSON encoding (sorted keys, no whitespace) for stable bytes."""
    payload = {
        "format": ENSEMBLE_FORMAT,
        "version": ENSEMBLE_FORMAT_VERSION,
        "n_features": ensemble.n_features,
        "n_trees": ensemble.n_trees,
        "k_features": ensemble.k_features,
        "min_samples_split": ensemble.min_samples_split,
        "seed": ensemble.seed,
        "trees": [
            {
                "feature": t["feature"].tolist(),
                "threshold": t["threshold"].tolist(),
                "left": t["left"].tolist(),
                "right": t["right"].tolist(),
                "counts": t["counts"].tolist(),
            }
            for t in ensemble.trees
        ],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def deserialize_ensemble(data: bytes) -> TreeEnsemble:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"ensemble payload is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != ENSEMBLE_FORMAT:
        raise ValueError("ensemble payload has wrong format marker")
    if payload.get("version") != ENSEMBLE_FORMAT_VERSION:
        raise ValueError(f"unsupported ensemble version {payload.get('version')!r}")
    required = ("n_features", "n_trees", "k_features", "min_samples_split", "seed", "trees")
    for key in required:
        if key not in payload:
            raise ValueError(f"ensemble payload missing field {key!r}")
    trees = []
    for t in payload["trees"]:
        trees.append(
            {
                "feature": np.asarray(t["feature"], dtype=np.int64),
                "threshold": np.asarray(t["threshold"], dtype=np.float64),
                "left": np.asarray(t["left"], dtype=np.int64),
                "right": np.asarray(t["right"], dtype=np.int64),
                "counts": np.asarray(t["counts"], dtype=np.int64),
            }
        )
    return TreeEnsemble(
        n_features=int(payload["n_features"]),
        n_trees=int(payload["n_trees"]),
        k_features=int(payload["k_features"]),
        min_samples_split=int(payload["min_samples_split"]),
        seed=int(payload["seed"]),
        trees=trees,
    )


def save_ensemble(ensemble: TreeEnsemble, path) -> None:
    Path(path).write_bytes(serialize_ensemble(ensemble))


def load_ensemble(path) -> TreeEnsemble:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"ensemble file not found: {path}")
    return deserialize_ensemble(path.read_bytes())
