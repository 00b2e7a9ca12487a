"""Per-node flow features aggregated within one time window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from botfuse.flow_ingest import FlowRecord, WindowSlice

FEATURE_NAMES = ("conn", "fail_conn", "dur", "src_bytes_avg", "dst_bytes_avg")
FEATURE_DIM = len(FEATURE_NAMES)


@dataclass
class NodeFlowFeatures:
    """Connection counts, mean duration, and mean byte volumes for one node.

    ``conn``/``fail_conn`` count flows where the node is either endpoint;
    ``dur`` averages duration over the node's successful flows only;
    ``src_bytes_avg``/``dst_bytes_avg`` average the bytes the node sent and
    received over all of its flows, successful or not.
    """

    node_id: str
    conn: int
    fail_conn: int
    dur: float
    src_bytes_avg: float
    dst_bytes_avg: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.conn, self.fail_conn, self.dur, self.src_bytes_avg, self.dst_bytes_avg],
            dtype=np.float64,
        )


def classify_flow_success(record: FlowRecord) -> bool:
    """A flow counts as successful when payload moved in both directions."""
    return record.src_bytes > 0 and record.dst_bytes > 0


class _Accumulator:
    __slots__ = ("conn", "fail", "dur_sum", "sent_sum", "recv_sum", "n_flows")

    def __init__(self) -> None:
        self.conn = 0
        self.fail = 0
        self.dur_sum = 0.0
        self.sent_sum = 0.0
        self.recv_sum = 0.0
        self.n_flows = 0

    def add(self, success: bool, duration: float, sent: int, received: int) -> None:
        if success:
            self.conn += 1
            self.dur_sum += duration
        else:
            self.fail += 1
        self.sent_sum += sent
        self.recv_sum += received
        self.n_flows += 1


def extract_node_features(window: WindowSlice) -> dict[str, NodeFlowFeatures]:
    """Aggregate one window's flows into the five per-node features.

    Every node appearing as source or destination of any record gets an
    entry. A flow contributes to both of its endpoints (for a degenerate
    self-addressed flow, to the same node in both roles, which keeps the
    endpoint-participation accounting exact).
    """
    if not window.records:
        raise ValueError("cannot extract features from an empty window")

    acc: dict[str, _Accumulator] = {}
    for record in window.records:
        success = classify_flow_success(record)
        src = acc.setdefault(record.src_ip, _Accumulator())
        src.add(success, record.duration, record.src_bytes, record.dst_bytes)
        dst = acc.setdefault(record.dst_ip, _Accumulator())
        dst.add(success, record.duration, record.dst_bytes, record.src_bytes)

    features: dict[str, NodeFlowFeatures] = {}
    for node_id, a in acc.items():
        features[node_id] = NodeFlowFeatures(
            node_id=node_id,
            conn=a.conn,
            fail_conn=a.fail,
            dur=a.dur_sum / a.conn if a.conn else 0.0,
            src_bytes_avg=a.sent_sum / a.n_flows if a.n_flows else 0.0,
            dst_bytes_avg=a.recv_sum / a.n_flows if a.n_flows else 0.0,
        )
    return features
