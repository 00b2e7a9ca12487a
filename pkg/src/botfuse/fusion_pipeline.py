"""End-to-end orchestration: window to features to graph to frozen-network
embedding to normalization to tree classifier, for both training and
detection."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import extra_trees
from .comm_graph import LABEL_BOT, LABEL_LEGIT, CommGraph, build_graph, propagation_matrix
from .extra_trees import TreeEnsemble
from .flow_features import extract_node_features
from .flow_ingest import Label, WindowSlice, derive_node_labels
from .gcn_core import NORM_MODES, NORM_PER_DIMENSION, NORM_PER_VECTOR, GcnModel, forward
from .pretrain import ARCH_DEPTH, ARCHITECTURES

DEFAULT_THRESHOLD = 0.5


@dataclass
class PipelineConfig:
    architecture: str = "c2"
    depth: int | None = None
    window_len: float = 60.0
    stride: float = 10.0
    norm_mode: str = NORM_PER_VECTOR
    threshold: float = DEFAULT_THRESHOLD
    model_path: str | None = None
    ensemble_path: str | None = None

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.depth is None:
            self.depth = ARCH_DEPTH[self.architecture]
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"unknown normalization mode {self.norm_mode!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")


@dataclass
class NodeEmbedding:
    """Final-hidden-layer activations for one window's nodes."""

    graph: CommGraph
    vectors: np.ndarray

    @property
    def nodes(self) -> list[str]:
        return self.graph.nodes


@dataclass
class NodeVerdict:
    node_id: str
    bot_probability: float
    verdict: bool


@dataclass
class WindowReport:
    window_start: float
    n_nodes: int
    n_flagged: int
    verdicts: list[NodeVerdict]
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class DetectionReport:
    architecture: str
    threshold: float
    windows: list[WindowReport]
    total_seconds: float = 0.0

    def to_json_lines(self, include_timings: bool = True) -> str:
        import json

        lines = []
        for w in self.windows:
            obj = {
                "window_start": w.window_start,
                "architecture": self.architecture,
                "threshold": self.threshold,
                "n_nodes": w.n_nodes,
                "n_flagged": w.n_flagged,
                "nodes": [
                    {
                        "node_id": v.node_id,
                        "bot_probability": v.bot_probability,
                        "verdict": v.verdict,
                    }
                    for v in w.verdicts
                ],
            }
            if include_timings:
                obj["timings"] = w.timings
            lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"


def normalize_fused(v: np.ndarray) -> np.ndarray:
    """Min-max rescale of one feature vector onto [0, 100].

    A constant vector maps to all zeros (the rescale is undefined there and
    zero is the stable, order-consistent choice).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty feature vector")
    if not np.isfinite(v).all():
        raise ValueError("non-finite values in feature vector")
    lo = v.min()
    hi = v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo) * 100.0


def normalize_embedding(M: np.ndarray, mode: str = NORM_PER_VECTOR) -> np.ndarray:
    """Apply the min-max rescale to a node-embedding matrix.

    per_vector rescales each node's vector independently (its own min and
    max); per_dimension rescales each column over the window's node set.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D embedding matrix, got shape {M.shape}")
    if mode == NORM_PER_VECTOR:
        return np.vstack([normalize_fused(row) for row in M]) if M.shape[0] else M.copy()
    if mode == NORM_PER_DIMENSION:
        lo = M.min(axis=0, keepdims=True)
        hi = M.max(axis=0, keepdims=True)
        span = hi - lo
        out = np.zeros_like(M)
        nz = span[0] != 0
        out[:, nz] = (M[:, nz] - lo[:, nz]) / span[:, nz] * 100.0
        return out
    raise ValueError(f"unknown normalization mode {mode!r}")


def embed_window(
    window: WindowSlice,
    model: GcnModel,
    node_labels: dict[str, Label] | None = None,
) -> NodeEmbedding:
    """Window flows through graph construction and the frozen network."""
    if not model.frozen:
        raise ValueError("embedding requires a frozen model")
    feats = extract_node_features(window)
    graph = build_graph(window, feats, node_labels=node_labels)
    P = propagation_matrix(graph)
    vectors = forward(model, P, graph.features, with_head=False)
    return NodeEmbedding(graph=graph, vectors=vectors)


VARIANT_FUSED = "fused"
VARIANT_TOPOLOGY = "topology_only"
VARIANT_FLOW = "flow_only"
VARIANTS = (VARIANT_FUSED, VARIANT_TOPOLOGY, VARIANT_FLOW)


def pool_labeled_rows(
    windows: list[WindowSlice],
    model: GcnModel,
    node_labels: dict[str, Label],
    norm_mode: str = NORM_PER_VECTOR,
    variant: str = VARIANT_FUSED,
):
    """Normalized per-node rows pooled across windows, labeled 1 = bot.

    Variants select what feeds the classifier: `fused` runs flow features
    through the frozen network, `topology_only` runs all-ones features
    through it instead, and `flow_only` skips the network and uses the raw
    window features.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown feature variant {variant!r}")
    X_parts = []
    y_parts = []
    for window in windows:
        feats = extract_node_features(window)
        graph = build_graph(window, feats, node_labels=node_labels)
        if variant == VARIANT_FLOW:
            vectors = graph.features
        else:
            if not model.frozen:
                raise ValueError("embedding requires a frozen model")
            P = propagation_matrix(graph)
            X0 = graph.features if variant == VARIANT_FUSED else np.ones_like(graph.features)
            vectors = forward(model, P, X0, with_head=False)
        norm = normalize_embedding(vectors, norm_mode)
        labels = graph.labels
        keep = (labels == LABEL_BOT) | (labels == LABEL_LEGIT)
        if keep.any():
            X_parts.append(norm[keep])
            y_parts.append((labels[keep] == LABEL_BOT).astype(np.int64))
    if not X_parts:
        raise ValueError("no labeled nodes in the training windows")
    return np.vstack(X_parts), np.concatenate(y_parts)


def _pool_labeled(
    windows: list[WindowSlice],
    model: GcnModel,
    node_labels: dict[str, Label],
    norm_mode: str,
):
    return pool_labeled_rows(windows, model, node_labels, norm_mode, VARIANT_FUSED)


def train_detector(
    windows: list[WindowSlice],
    model: GcnModel,
    node_labels: dict[str, Label] | None = None,
    norm_mode: str = NORM_PER_VECTOR,
    n_trees: int = extra_trees.DEFAULT_N_TREES,
    seed: int = 0,
) -> TreeEnsemble:
    """Fit the tree ensemble on pooled normalized embeddings of labeled nodes.

    Labels default to the source-of-bot-flows rule derived over all windows;
    unknown nodes are excluded from the training pool.
    """
    if not windows:
        raise ValueError("no training windows")
    if node_labels is None:
        pooled = [r for w in windows for r in w.records]
        node_labels = derive_node_labels(pooled)
    X, y = _pool_labeled(windows, model, node_labels, norm_mode)
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class")
    return extra_trees.fit(X, y, n_trees=n_trees, seed=seed)


def detect(
    windows: list[WindowSlice],
    model: GcnModel,
    ensemble: TreeEnsemble,
    config: PipelineConfig | None = None,
) -> DetectionReport:
    """Per-window verdicts with stage timings; no cross-window aggregation."""
    config = config or PipelineConfig()
    if not windows:
        raise ValueError("no windows to detect on")
    if model.input_dim != 5:
        raise ValueError(f"model expects {model.input_dim}-dim input, pipeline produces 5")
    if model.depth != config.depth:
        raise ValueError(
            f"model depth {model.depth} does not match pipeline depth {config.depth}"
        )
    if ensemble.n_features != model.hidden_dim:
        raise ValueError(
            f"ensemble expects {ensemble.n_features} features, "
            f"model emits {model.hidden_dim}"
        )

    t_run = time.perf_counter()
    reports = []
    for window in windows:
        t0 = time.perf_counter()
        feats = extract_node_features(window)
        t1 = time.perf_counter()
        graph = build_graph(window, feats)
        P = propagation_matrix(graph)
        t2 = time.perf_counter()
        vectors = forward(model, P, graph.features, with_head=False)
        t3 = time.perf_counter()
        norm = normalize_embedding(vectors, config.norm_mode)
        t4 = time.perf_counter()
        probs = extra_trees.predict_proba(ensemble, norm)
        verdicts = [
            NodeVerdict(
                node_id=node,
                bot_probability=float(p),
                verdict=bool(p >= config.threshold),
            )
            for node, p in zip(graph.nodes, probs)
        ]
        n_flagged = sum(v.verdict for v in verdicts)
        t5 = time.perf_counter()

        reports.append(
            WindowReport(
                window_start=window.window_start,
                n_nodes=graph.n,
                n_flagged=n_flagged,
                verdicts=verdicts,
                timings={
                    "features": t1 - t0,
                    "graph": t2 - t1,
                    "embed": t3 - t2,
                    "normalize": t4 - t3,
                    "classify": t5 - t4,
                },
            )
        )
    return DetectionReport(
        architecture=config.architecture,
        threshold=config.threshold,
        windows=reports,
        total_seconds=time.perf_counter() - t_run,
    )
