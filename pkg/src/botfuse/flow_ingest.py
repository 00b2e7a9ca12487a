"""Flow-record ingestion: file parsing, protocol filtering, sliding-window slicing."""

from __future__ import annotations

import bisect
import csv
import enum
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_WINDOW_LEN = 60.0
DEFAULT_STRIDE = 10.0

CANONICAL_COLUMNS = (
    "ts_start",
    "duration",
    "proto",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "src_bytes",
    "dst_bytes",
    "label",
)


class Proto(enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    OTHER = "other"


class Label(enum.Enum):
    BOT = "bot"
    LEGIT = "legit"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class FlowRecord:
    """One five-tuple communication flow with byte counts and timing."""

    ts_start: float
    duration: float
    proto: Proto
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    src_bytes: int
    dst_bytes: int
    label: Label = Label.UNKNOWN


@dataclass
class WindowSlice:
    """All flows whose start time falls inside one sliding-window interval."""

    window_start: float
    window_len: float
    records: list[FlowRecord]


@dataclass
class ParseResult:
    """Records recovered from a flow file plus a count of skipped lines."""

    records: list[FlowRecord]
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _parse_proto(text: str) -> Proto:
    text = text.strip().lower()
    if text == "tcp":
        return Proto.TCP
    if text == "udp":
        return Proto.UDP
    return Proto.OTHER


def _parse_label(text: str) -> Label:
    text = text.strip().lower()
    if text == "bot":
        return Label.BOT
    if text == "legit":
        return Label.LEGIT
    if text in ("", "unknown"):
        return Label.UNKNOWN
    raise ValueError(f"unrecognized label {text!r}")


def _parse_port(text: str) -> int:
    text = text.strip()
    if not text:
        return 0
    port = int(text, 16) if text.lower().startswith("0x") else int(text)
    if not 0 <= port <= 65535:
        raise ValueError(f"port {port} out of range")
    return port


def _validated(record: FlowRecord) -> FlowRecord:
    if record.duration < 0:
        raise ValueError("negative duration")
    if record.src_bytes < 0 or record.dst_bytes < 0:
        raise ValueError("negative byte count")
    if not record.src_ip or not record.dst_ip:
        raise ValueError("empty endpoint id")
    return record


def _parse_canonical_row(row: Sequence[str]) -> FlowRecord:
    if len(row) not in (9, 10):
        raise ValueError(f"expected 9 or 10 columns, got {len(row)}")
    label = _parse_label(row[9]) if len(row) == 10 else Label.UNKNOWN
    return _validated(
        FlowRecord(
            ts_start=float(row[0]),
            duration=float(row[1]),
            proto=_parse_proto(row[2]),
            src_ip=row[3].strip(),
            src_port=_parse_port(row[4]),
            dst_ip=row[5].strip(),
            dst_port=_parse_port(row[6]),
            src_bytes=int(row[7]),
            dst_bytes=int(row[8]),
            label=label,
        )
    )


def _binetflow_label(text: str) -> Label:
    lowered = text.lower()
    if "botnet" in lowered:
        return Label.BOT
    if "normal" in lowered:
        return Label.LEGIT
    return Label.UNKNOWN


def _parse_binetflow_row(row: Sequence[str]) -> FlowRecord:
    # StartTime,Dur,Proto,SrcAddr,Sport,Dir,DstAddr,Dport,State,sTos,dTos,
    # TotPkts,TotBytes,SrcBytes,Label
    if len(row) < 14:
        raise ValueError(f"expected >= 14 columns, got {len(row)}")
    started = datetime.strptime(row[0].strip(), "%Y/%m/%d %H:%M:%S.%f")
    ts_start = started.replace(tzinfo=timezone.utc).timestamp()
    tot_bytes = int(row[12])
    src_bytes = int(row[13])
    if src_bytes > tot_bytes:
        raise ValueError("src bytes exceed total bytes")
    label = _binetflow_label(row[14]) if len(row) > 14 else Label.UNKNOWN
    return _validated(
        FlowRecord(
            ts_start=ts_start,
            duration=float(row[1]),
            proto=_parse_proto(row[2]),
            src_ip=row[3].strip(),
            src_port=_parse_port(row[4]),
            dst_ip=row[6].strip(),
            dst_port=_parse_port(row[7]),
            src_bytes=src_bytes,
            dst_bytes=tot_bytes - src_bytes,
            label=label,
        )
    )


_ROW_PARSERS = {
    "canonical": _parse_canonical_row,
    "binetflow": _parse_binetflow_row,
}


def parse_flow_file(path: str | Path, format_descriptor: str = "canonical") -> ParseResult:
    """Parse a flow-record file into FlowRecords.

    Two column mappings are supported: ``canonical`` (CSV columns
    ts_start,duration,proto,src_ip,src_port,dst_ip,dst_port,src_bytes,
    dst_bytes[,label], header optional) and ``binetflow`` (CTU-13 flow
    export layout). Malformed lines are skipped and counted in the result;
    a file whose every line fails to parse is an error.
    """
    try:
        parse_row = _ROW_PARSERS[format_descriptor]
    except KeyError:
        raise ValueError(
            f"unknown format descriptor {format_descriptor!r}; "
            f"expected one of {sorted(_ROW_PARSERS)}"
        ) from None

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"flow file not found: {path}")

    records: list[FlowRecord] = []
    malformed = 0
    with path.open(newline="") as handle:
        for lineno, row in enumerate(csv.reader(handle)):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                records.append(parse_row(row))
            except (ValueError, IndexError):
                if lineno == 0 and _looks_like_header(row):
                    continue
                malformed += 1
    if not records:
        raise ValueError(f"no parseable flow records in {path} ({malformed} malformed lines)")
    return ParseResult(records=records, malformed=malformed)


def _looks_like_header(row: Sequence[str]) -> bool:
    try:
        float(row[0])
    except (ValueError, IndexError):
        return True
    return False


def filter_tcp_udp(records: Iterable[FlowRecord]) -> list[FlowRecord]:
    """Keep only TCP and UDP flows, preserving input order."""
    return [r for r in records if r.proto in (Proto.TCP, Proto.UDP)]


def slice_windows(
    records: Sequence[FlowRecord],
    window_len: float = DEFAULT_WINDOW_LEN,
    stride: float = DEFAULT_STRIDE,
) -> list[WindowSlice]:
    """Split flows into overlapping sliding windows keyed by flow start time.

    Window starts are aligned to stride boundaries at or before the earliest
    flow; a flow belongs to every window whose half-open interval
    [start, start + window_len) contains its start time. Windows that would
    contain no flows are omitted.
    """
    if window_len <= 0 or stride <= 0:
        raise ValueError(f"window_len and stride must be positive, got {window_len}/{stride}")
    if stride > window_len:
        raise ValueError(f"stride {stride} exceeds window length {window_len}")
    if not records:
        return []

    ordered = sorted(records, key=lambda r: r.ts_start)
    times = [r.ts_start for r in ordered]
    first = math.floor(times[0] / stride) * stride
    last = times[-1]

    windows: list[WindowSlice] = []
    n_starts = int(math.floor((last - first) / stride)) + 1
    for k in range(n_starts):
        start = first + k * stride
        lo = bisect.bisect_left(times, start)
        hi = bisect.bisect_left(times, start + window_len)
        if hi > lo:
            windows.append(WindowSlice(start, window_len, ordered[lo:hi]))
    return windows


def derive_node_labels(records: Iterable[FlowRecord]) -> dict[str, Label]:
    """Assign per-node labels from per-flow labels.

    A node is BOT when it originates at least one bot-labeled flow, LEGIT
    when it originates legitimate flows only, and UNKNOWN otherwise (flows
    received from a bot do not taint the receiving node).
    """
    bot_sources: set[str] = set()
    legit_sources: set[str] = set()
    nodes: set[str] = set()
    for r in records:
        nodes.add(r.src_ip)
        nodes.add(r.dst_ip)
        if r.label is Label.BOT:
            bot_sources.add(r.src_ip)
        elif r.label is Label.LEGIT:
            legit_sources.add(r.src_ip)
    labels: dict[str, Label] = {}
    for node in nodes:
        if node in bot_sources:
            labels[node] = Label.BOT
        elif node in legit_sources:
            labels[node] = Label.LEGIT
        else:
            labels[node] = Label.UNKNOWN
    return labels


def write_flows_csv(records: Iterable[FlowRecord], path: str | Path, header: bool = True) -> None:
    """Write flows in the canonical CSV column order."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        if header:
            writer.writerow(CANONICAL_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    repr(r.ts_start),
                    repr(r.duration),
                    r.proto.value,
                    r.src_ip,
                    r.src_port,
                    r.dst_ip,
                    r.dst_port,
                    r.src_bytes,
                    r.dst_bytes,
                    r.label.value if r.label is not Label.UNKNOWN else "",
                ]
            )
