"""Packet trace ingestion: CSV parsing, per-packet raw features, sequence
segmentation, normalization, and seen/unseen device partitioning.

Canonical input is a packet metadata CSV with header
``timestamp,src_port,dst_port,src_internal,dst_internal,proto,size,direction,device_id``
(proto in {tcp,udp,other}, direction in {in,out}, booleans as 0/1).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger("zest.ingest")

CSV_HEADER = ["timestamp", "src_port", "dst_port", "src_internal",
              "dst_internal", "proto", "size", "direction", "device_id"]

NUM_FEATURES = 8

# feature column layout
COL_SRC_INTERNAL = 0
COL_DST_INTERNAL = 1
COL_PORT_CATEGORY = 2
COL_PROTO = 3
COL_APP_PROTO = 4
COL_INTER_ARRIVAL = 5
COL_SIZE = 6
COL_DIRECTION = 7

LOG1P_COLUMNS = (COL_INTER_ARRIVAL, COL_SIZE)

# service-port categories: named well-known services, then coarse range
# buckets for everything else. The ephemeral (non-service) port is dropped,
# i.e. replaced by a constant that never reaches the feature row.
PORT_CATEGORY_CODES = {
    53: 0,     # dns
    123: 1,    # ntp
    80: 2,     # http
    443: 3,    # https
    1883: 4,   # mqtt
    5353: 5,   # mdns
    67: 6,     # dhcp
    68: 6,     # dhcp
}
BUCKET_WELL_KNOWN = 7    # 0..1023
BUCKET_REGISTERED = 8    # 1024..49151
BUCKET_DYNAMIC = 9       # >= 49152

APP_DNS, APP_NTP, APP_HTTP, APP_HTTPS, APP_MQTT, APP_OTHER = range(6)
APP_PROTO_CODES = {
    53: APP_DNS, 5353: APP_DNS, 123: APP_NTP,
    80: APP_HTTP, 443: APP_HTTPS, 1883: APP_MQTT,
}

PROTO_CODES = {"tcp": 0, "udp": 1, "other": 2}
DIRECTION_CODES = {"in": 0, "out": 1}


class IngestError(RuntimeError):
    pass


class Transport(Enum):
    TCP = "tcp"
    UDP = "udp"
    OTHER = "other"


class Direction(Enum):
    INBOUND = "in"
    OUTBOUND = "out"


@dataclass
class PacketRecord:
    """One packet's metadata as read from a trace file."""

    timestamp: float
    src_port: int
    dst_port: int
    src_internal: bool
    dst_internal: bool
    transport_proto: Transport
    packet_size: int
    direction: Direction
    device_id: str


@dataclass
class DataPoint:
    """One n-by-f feature sequence, optionally labeled with a class index."""

    features: np.ndarray
    device_id: str
    label: int | None = None


def port_category(port: int) -> int:
    code = PORT_CATEGORY_CODES.get(port)
    if code is not None:
        return code
    if port <= 1023:
        return BUCKET_WELL_KNOWN
    if port <= 49151:
        return BUCKET_REGISTERED
    return BUCKET_DYNAMIC


def app_protocol(service_port: int) -> int:
    return APP_PROTO_CODES.get(service_port, APP_OTHER)


def _parse_row(row: list[str]) -> PacketRecord:
    if len(row) != len(CSV_HEADER):
        raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    ts = float(row[0])
    if not np.isfinite(ts):
        raise ValueError(f"non-finite timestamp {row[0]!r}")
    src_port, dst_port = int(row[1]), int(row[2])
    for port in (src_port, dst_port):
        if not 0 <= port <= 65535:
            raise ValueError(f"port {port} out of range")
    src_internal, dst_internal = row[3], row[4]
    if src_internal not in ("0", "1") or dst_internal not in ("0", "1"):
        raise ValueError("internal flags must be 0/1")
    proto = row[5].lower()
    if proto not in PROTO_CODES:
        raise ValueError(f"unknown proto {row[5]!r}")
    size = int(row[6])
    if size < 0:
        raise ValueError(f"negative packet size {size}")
    direction = row[7].lower()
    if direction not in DIRECTION_CODES:
        raise ValueError(f"unknown direction {row[7]!r}")
    device_id = row[8]
    if not device_id:
        raise ValueError("empty device_id")
    return PacketRecord(
        timestamp=ts,
        src_port=src_port,
        dst_port=dst_port,
        src_internal=src_internal == "1",
        dst_internal=dst_internal == "1",
        transport_proto=Transport(proto),
        packet_size=size,
        direction=Direction(direction),
        device_id=device_id,
    )


def parse_packet_csv(path: str | Path) -> list[PacketRecord]:
    """Read packet records in file order, skipping malformed rows with a
    warning. Aborts when more than 1% of rows (and more than one row) fail."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"packet CSV not found: {path}")
    records: list[PacketRecord] = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise IngestError(
                f"{path}: header {header} does not match {CSV_HEADER}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                records.append(_parse_row(row))
            except (ValueError, KeyError) as exc:
                skipped += 1
                logger.warning("%s:%d skipped: %s", path, line_no, exc)
    total = len(records) + skipped
    if skipped > max(1, 0.01 * total):
        raise IngestError(
            f"{path}: {skipped}/{total} rows unparseable (limit 1%)")
    if skipped:
        logger.warning("%s: skipped %d of %d rows", path, skipped, total)
    return records


def featurize(records: list[PacketRecord]) -> np.ndarray:
    """Raw per-packet features for one device's records, sorted by time.

    Columns: src_internal, dst_internal, service-port category, transport
    proto, app proto, inter-arrival time, packet size, direction.
    """
    rows = np.zeros((len(records), NUM_FEATURES), dtype=np.float64)
    prev_ts: float | None = None
    for i, rec in enumerate(records):
        if prev_ts is not None and rec.timestamp < prev_ts:
            raise IngestError(
                f"records not sorted by timestamp at index {i} "
                f"(device {rec.device_id})")
        service_port = min(rec.src_port, rec.dst_port)
        rows[i, COL_SRC_INTERNAL] = 1.0 if rec.src_internal else 0.0
        rows[i, COL_DST_INTERNAL] = 1.0 if rec.dst_internal else 0.0
        rows[i, COL_PORT_CATEGORY] = port_category(service_port)
        rows[i, COL_PROTO] = PROTO_CODES[rec.transport_proto.value]
        rows[i, COL_APP_PROTO] = app_protocol(service_port)
        rows[i, COL_INTER_ARRIVAL] = 0.0 if prev_ts is None else rec.timestamp - prev_ts
        rows[i, COL_SIZE] = rec.packet_size
        rows[i, COL_DIRECTION] = DIRECTION_CODES[rec.direction.value]
        prev_ts = rec.timestamp
    return rows


def segment(feature_rows: np.ndarray, n: int, device_id: str,
            label: int | None = None) -> list[DataPoint]:
    """Split one device's feature rows into non-overlapping windows of n rows;
    the trailing remainder is dropped."""
    if n < 1:
        raise IngestError(f"sequence length must be >= 1, got {n}")
    count = feature_rows.shape[0] // n
    return [
        DataPoint(
            features=feature_rows[i * n:(i + 1) * n].astype(np.float32),
            device_id=device_id,
            label=label,
        )
        for i in range(count)
    ]


@dataclass
class Normalizer:
    """Per-feature min-max scaling, with log1p first for heavy-tailed columns."""

    mins: np.ndarray
    maxs: np.ndarray
    log1p_columns: tuple = LOG1P_COLUMNS

    def _transform(self, features: np.ndarray) -> np.ndarray:
        out = features.astype(np.float64, copy=True)
        for col in self.log1p_columns:
            out[:, col] = np.log1p(out[:, col])
        return out

    def apply(self, features: np.ndarray) -> np.ndarray:
        t = self._transform(features)
        span = self.maxs - self.mins
        scaled = np.where(span > 0, (t - self.mins) / np.where(span > 0, span, 1.0), 0.0)
        return np.clip(scaled, 0.0, 1.0).astype(np.float32)

    def to_dict(self) -> dict:
        return {
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "log1p_columns": list(self.log1p_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            mins=np.asarray(d["mins"], dtype=np.float64),
            maxs=np.asarray(d["maxs"], dtype=np.float64),
            log1p_columns=tuple(d["log1p_columns"]),
        )


def fit_normalizer(train_points: list[DataPoint]) -> Normalizer:
    """Fit per-feature ranges; call only on training-split data of seen devices."""
    if not train_points:
        raise IngestError("cannot fit normalizer on empty training data")
    stacked = np.concatenate([p.features for p in train_points], axis=0)
    stacked = stacked.astype(np.float64)
    for col in LOG1P_COLUMNS:
        stacked[:, col] = np.log1p(stacked[:, col])
    return Normalizer(mins=stacked.min(axis=0), maxs=stacked.max(axis=0))


def apply_normalizer(normalizer: Normalizer,
                     points: list[DataPoint]) -> list[DataPoint]:
    return [
        DataPoint(features=normalizer.apply(p.features),
                  device_id=p.device_id, label=p.label)
        for p in points
    ]


@dataclass
class DevicePartition:
    """Disjoint split of all device class indices into seen and unseen."""

    seen: set[int]
    unseen: set[int]
    seed: int

    def to_dict(self) -> dict:
        return {"seen": sorted(self.seen), "unseen": sorted(self.unseen),
                "seed": self.seed}


def make_partition(device_ids: list[str], num_unseen: int,
                   seed: int) -> DevicePartition:
    """Randomly designate num_unseen device classes as unseen; deterministic
    per seed."""
    num_devices = len(device_ids)
    if not 1 <= num_unseen < num_devices:
        raise IngestError(
            f"num_unseen={num_unseen} must be in [1, {num_devices - 1}]")
    rng = np.random.default_rng(seed)
    unseen = set(rng.choice(num_devices, size=num_unseen, replace=False).tolist())
    seen = set(range(num_devices)) - unseen
    return DevicePartition(seen=seen, unseen=unseen, seed=seed)


def split_indices(device_per_point: list[str],
                  ratios: tuple = (0.6, 0.2, 0.2),
                  seed: int = 0) -> dict[str, list[int]]:
    """Index arrays for a train/val/test split, shuffled within each device
    class; deterministic per seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise IngestError(f"split ratios {ratios} must sum to 1")
    rng = np.random.default_rng(seed)
    by_device: dict[str, list[int]] = {}
    for idx, dev in enumerate(device_per_point):
        by_device.setdefault(dev, []).append(idx)
    out: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for device in sorted(by_device):
        group = by_device[device]
        order = rng.permutation(len(group))
        m = len(group)
        i1 = int(m * ratios[0])
        i2 = int(m * (ratios[0] + ratios[1]))
        out["train"].extend(group[j] for j in order[:i1])
        out["val"].extend(group[j] for j in order[i1:i2])
        out["test"].extend(group[j] for j in order[i2:])
    return out


def train_val_test_split(points: list[DataPoint],
                         ratios: tuple = (0.6, 0.2, 0.2),
                         seed: int = 0) -> tuple[list[DataPoint], list[DataPoint], list[DataPoint]]:
    """Shuffle within each device class and split by the given ratios."""
    idx = split_indices([p.device_id for p in points], ratios, seed)
    return ([points[i] for i in idx["train"]],
            [points[i] for i in idx["val"]],
            [points[i] for i in idx["test"]])


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Segmented raw-feature sequences for all devices plus class mapping."""

    points: list[DataPoint]
    class_map: dict[str, int]
    n: int
    f: int = NUM_FEATURES
    normalizer: Normalizer | None = None

    @property
    def device_ids(self) -> list[str]:
        return sorted(self.class_map, key=self.class_map.get)

    def points_for_class(self, label: int) -> list[DataPoint]:
        return [p for p in self.points if p.label == label]


def build_dataset(records: list[PacketRecord], n: int) -> Dataset:
    """Group records by device, featurize, segment, and assign class indices
    by sorted device id."""
    by_device: dict[str, list[PacketRecord]] = {}
    for rec in records:
        by_device.setdefault(rec.device_id, []).append(rec)
    class_map = {dev: idx for idx, dev in enumerate(sorted(by_device))}
    points: list[DataPoint] = []
    for dev in sorted(by_device):
        recs = sorted(by_device[dev], key=lambda r: r.timestamp)
        rows = featurize(recs)
        points.extend(segment(rows, n, dev, label=class_map[dev]))
    return Dataset(points=points, class_map=class_map, n=n)


def save_dataset(dataset: Dataset, npz_path: str | Path,
                 manifest_path: str | Path) -> None:
    features = np.stack([p.features for p in dataset.points])
    labels = np.array([p.label if p.label is not None else -1
                       for p in dataset.points], dtype=np.int64)
    device_idx = np.array([dataset.class_map[p.device_id]
                           for p in dataset.points], dtype=np.int64)
    np.savez(npz_path, features=features, labels=labels, device_idx=device_idx)
    manifest = {
        "n": dataset.n,
        "f": dataset.f,
        "num_points": len(dataset.points),
        "class_map": dataset.class_map,
        "normalizer": dataset.normalizer.to_dict() if dataset.normalizer else None,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(npz_path: str | Path, manifest_path: str | Path) -> Dataset:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    data = np.load(npz_path)
    class_map = {k: int(v) for k, v in manifest["class_map"].items()}
    inverse = {v: k for k, v in class_map.items()}
    points = [
        DataPoint(features=data["features"][i],
                  device_id=inverse[int(data["device_idx"][i])],
                  label=int(data["labels"][i]) if data["labels"][i] >= 0 else None)
        for i in range(data["features"].shape[0])
    ]
    normalizer = None
    if manifest.get("normalizer"):
        normalizer = Normalizer.from_dict(manifest["normalizer"])
    return Dataset(points=points, class_map=class_map, n=manifest["n"],
                   f=manifest["f"], normalizer=normalizer)
