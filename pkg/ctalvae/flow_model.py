"""
Flow Model - flow ingestion, normalization and receiver-keyed sequencing

Parses flow CSVs into FlowRecords, fits per-domain z-score statistics and
cuts each receiver's time-ordered traffic into fixed-length windows.
"""

import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence as SequenceT, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from utils.logger import get_logger

from .errors import DataValidationError, FlowParseError, SchemaMismatchError

logger = get_logger("ctalvae.flow_model")

REQUIRED_COLUMNS = ("ts", "src_ip", "dst_ip")
STD_FLOOR = 1e-8
DEFAULT_SEQUENCE_LENGTH = 30

FlowSource = Union[str, Path, TextIO]


class Label(Enum):
    """Ground-truth class of a flow or sequence (evaluation only)"""
    BENIGN = "benign"
    ANOMALOUS = "anomalous"


@dataclass(frozen=True)
class FlowRecord:
    """One network flow"""
    ts: float
    src: str
    dst: str
    features: Tuple[float, ...]


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature column names of one domain"""
    names: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'names', tuple(self.names))
        if not self.names:
            raise DataValidationError("feature schema needs at least one column")
        if len(set(self.names)) != len(self.names):
            raise DataValidationError(f"duplicate feature names in schema: {list(self.names)}")

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def generic(cls, dim: int, prefix: str = "f") -> 'FeatureSchema':
        """Schema with names f0..f{dim-1}"""
        return cls(tuple(f"{prefix}{i}" for i in range(dim)))


@dataclass(eq=False)
class Normalizer:
    """Per-feature z-score statistics"""
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DataValidationError("normalizer mean/std must be vectors of equal length")
        if np.any(self.std < STD_FLOOR):
            raise DataValidationError(f"normalizer std must be >= {STD_FLOOR}")

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @classmethod
    def identity(cls, dim: int) -> 'Normalizer':
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(x - mean) / std, broadcasting over leading axes"""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise SchemaMismatchError("cannot normalize features", self.dim, x.shape[-1])
        return (x - self.mean) / self.std


@dataclass(eq=False)
class Sequence:
    """
    Fixed-length window of normalized flows for one receiver

    Rows with mask=False are zero padding and always trail the real rows.
    flow_ids holds the input position of each real row.
    """
    receiver: str
    start_ts: float
    data: np.ndarray
    mask: np.ndarray
    flow_ids: Tuple[int, ...] = ()
    label: Optional[Label] = None

    @property
    def length(self) -> int:
        return int(self.mask.sum())

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def _read_frame(source: FlowSource) -> pd.DataFrame:
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise FlowParseError("missing header row")
    except pd.errors.ParserError as e:
        raise FlowParseError(f"malformed CSV: {e}")


def _feature_columns(columns: Iterable[str]) -> List[str]:
    columns = [str(c) for c in columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise FlowParseError(f"missing required column(s): {', '.join(missing)}")
    return [c for c in columns if c not in REQUIRED_COLUMNS]


def schema_from_header(source: FlowSource) -> FeatureSchema:
    """
    Derive the feature schema from a flow CSV header

    Args:
        source: Path or text stream positioned at the header

    Returns:
        FeatureSchema of every non-required column, in file order
    """
    if isinstance(source, (str, Path)):
        with open(source, 'r', encoding='utf-8') as f:
            header = f.readline()
    else:
        header = source.readline()
    frame = _read_frame(io.StringIO(header))
    return FeatureSchema(tuple(_feature_columns(frame.columns)))


def _to_numeric(frame: pd.DataFrame, columns: List[str]) -> np.ndarray:
    values = frame[columns].apply(pd.to_numeric, errors='coerce').to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raw = frame[columns[col]].iloc[row]
        # header is line 1
        raise FlowParseError(f"column {columns[col]!r} value {raw!r} is not a finite number", row=int(row) + 2)
    # correctly rounded decimal parse so written values read back bit-exact
    return frame[columns].to_numpy(dtype=str).astype(np.float64)


def parse_flows(source: FlowSource, schema: Optional[FeatureSchema] = None) -> List[FlowRecord]:
    """
    Parse flow records from the CSV contract

    Args:
        source: Path or readable text stream; first row is the header
        schema: Expected feature schema; derived from the header when omitted

    Returns:
        One FlowRecord per data row, input order preserved
    """
    frame = _read_frame(source)
    features = _feature_columns(frame.columns)

    if schema is not None:
        if len(features) != schema.dim:
            raise SchemaMismatchError("feature column count does not match schema", schema.dim, len(features))
        if tuple(features) != schema.names:
            raise SchemaMismatchError(
                f"feature columns {features} do not match schema {list(schema.names)}"
            )

    if frame.empty:
        return []

    ts = _to_numeric(frame, ["ts"])[:, 0]
    values = _to_numeric(frame, features) if features else np.zeros((len(frame), 0))

    src = frame["src_ip"].tolist()
    dst = frame["dst_ip"].tolist()
    flows = [
        FlowRecord(float(ts[i]), src[i], dst[i], tuple(float(v) for v in values[i]))
        for i in range(len(frame))
    ]
    logger.debug(f"Parsed {len(flows)} flows with {len(features)} features")
    return flows


def write_flows(destination: FlowSource, flows: SequenceT[FlowRecord], schema: FeatureSchema) -> None:
    """Write flows in the CSV contract (lossless float text)"""
    matrix = _feature_matrix(flows, schema.dim)
    frame = pd.DataFrame(matrix, columns=list(schema.names))
    frame.insert(0, "dst_ip", [f.dst for f in flows])
    frame.insert(0, "src_ip", [f.src for f in flows])
    frame.insert(0, "ts", [f.ts for f in flows])
    frame.to_csv(destination, index=False, lineterminator="\n")


def _feature_matrix(flows: SequenceT[FlowRecord], dim: int) -> np.ndarray:
    if not flows:
        return np.zeros((0, dim))
    for flow in flows:
        if len(flow.features) != dim:
            raise SchemaMismatchError("flow feature length does not match", dim, len(flow.features))
    return np.asarray([f.features for f in flows], dtype=np.float64).reshape(len(flows), dim)


def fit_normalizer(flows: SequenceT[FlowRecord]) -> Normalizer:
    """
    Fit per-feature mean and (population) standard deviation

    Args:
        flows: At least two flows of one domain

    Returns:
        Normalizer with std floored at 1e-8
    """
    if len(flows) < 2:
        raise DataValidationError(f"fit_normalizer needs at least 2 flows, got {len(flows)}")
    matrix = _feature_matrix(flows, len(flows[0].features))
    mean = matrix.mean(axis=0)
    std = np.sqrt(((matrix - mean) ** 2).mean(axis=0))
    return Normalizer(mean, np.maximum(std, STD_FLOOR))


def group_by_receiver(flows: SequenceT[FlowRecord]) -> Dict[str, List[int]]:
    """
    Input positions per receiver, ordered by ts (stable on ties)

    Receivers are returned in sorted order.
    """
    groups: Dict[str, List[int]] = {}
    for i, flow in enumerate(flows):
        groups.setdefault(flow.dst, []).append(i)
    return {
        dst: sorted(groups[dst], key=lambda i: flows[i].ts)
        for dst in sorted(groups)
    }


def build_sequences(
    flows: SequenceT[FlowRecord],
    normalizer: Normalizer,
    T: int = DEFAULT_SEQUENCE_LENGTH
) -> List[Sequence]:
    """
    Cut each receiver's flows into consecutive non-overlapping windows

    Args:
        flows: Flow records of one domain
        normalizer: Statistics applied as (x - mean) / std
        T: Window length

    Returns:
        Sequences ordered by receiver then time; the last window of a
        receiver is zero-padded with mask=False rows
    """
    if T < 1:
        raise DataValidationError(f"sequence length must be >= 1, got {T}")

    matrix = normalizer.apply(_feature_matrix(flows, normalizer.dim))
    sequences: List[Sequence] = []

    for receiver, order in group_by_receiver(flows).items():
        for start in range(0, len(order), T):
            rows = order[start:start + T]
            data = np.zeros((T, normalizer.dim))
            data[:len(rows)] = matrix[rows]
            mask = np.zeros(T, dtype=bool)
            mask[:len(rows)] = True
            sequences.append(Sequence(
                receiver=receiver,
                start_ts=flows[rows[0]].ts,
                data=data,
                mask=mask,
                flow_ids=tuple(rows),
            ))

    logger.debug(f"Built {len(sequences)} sequences (T={T}) from {len(flows)} flows")
    return sequences


def label_sequences(sequences: SequenceT[Sequence], flow_labels: SequenceT[Label]) -> List[Label]:
    """A sequence is anomalous iff any of its real rows is"""
    return [
        Label.ANOMALOUS if any(flow_labels[i] is Label.ANOMALOUS for i in seq.flow_ids) else Label.BENIGN
        for seq in sequences
    ]


def stack_sequences(sequences: SequenceT[Sequence]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (N, T, dim) data and (N, T) mask arrays"""
    if not sequences:
        raise DataValidationError("no sequences to stack")
    dims = {seq.data.shape for seq in sequences}
    if len(dims) != 1:
        raise SchemaMismatchError(f"sequences disagree on shape: {sorted(dims)}")
    data = np.stack([seq.data for seq in sequences]).astype(np.float64)
    mask = np.stack([seq.mask for seq in sequences]).astype(bool)
    return data, mask
