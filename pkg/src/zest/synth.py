"""Parameterized synthetic IoT traffic generation and a maximum-likelihood
Bayes oracle.

Each device profile draws per-packet transport protocol, service port, and
direction from categorical distributions, and packet size / inter-arrival
time from log-normals. The oracle classifies feature sequences under the true
generator parameters and serves as the accuracy ceiling for calibrating
model thresholds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ingest import (APP_PROTO_CODES, CSV_HEADER, COL_DIRECTION,
                     COL_INTER_ARRIVAL, COL_PORT_CATEGORY, COL_PROTO,
                     COL_SIZE, DIRECTION_CODES, PROTO_CODES, DataPoint,
                     PacketRecord, Direction, Transport, port_category)

_EPHEMERAL_LOW = 49152
_EPHEMERAL_HIGH = 65536
_BASE_TIMESTAMP = 1_700_000_000.0
_NUM_PORT_CATEGORIES = 10


class SynthError(RuntimeError):
    pass


@dataclass
class DeviceProfile:
    """Generator parameters for one synthetic device."""

    device_id: str
    proto_probs: dict[str, float]       # over {"tcp", "udp", "other"}
    port_probs: dict[int, float]        # over service port numbers
    direction_probs: dict[str, float]   # over {"in", "out"}
    size_log_mean: float
    size_log_sigma: float
    iat_log_mean: float
    iat_log_sigma: float
    sessions: int = 60
    packets_per_session: int = 200

    def validate(self) -> None:
        for name, probs in (("proto", self.proto_probs),
                            ("port", self.port_probs),
                            ("direction", self.direction_probs)):
            total = sum(probs.values())
            if abs(total - 1.0) > 1e-9 or any(p < 0 for p in probs.values()):
                raise SynthError(
                    f"{self.device_id}: {name} probabilities sum to {total}")
        if self.size_log_sigma <= 0 or self.iat_log_sigma <= 0:
            raise SynthError(f"{self.device_id}: log-normal sigma must be > 0")
        if self.sessions < 1 or self.packets_per_session < 1:
            raise SynthError(f"{self.device_id}: session counts must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["port_probs"] = {str(k): v for k, v in self.port_probs.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        d = dict(d)
        d["port_probs"] = {int(k): v for k, v in d["port_probs"].items()}
        return cls(**d)


def load_profiles(path: str | Path) -> list[DeviceProfile]:
    with open(path) as fh:
        raw = json.load(fh)
    return [DeviceProfile.from_dict(d) for d in raw]


def save_profiles(profiles: list[DeviceProfile], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([p.to_dict() for p in profiles], fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_records(profiles: list[DeviceProfile],
                     seed: int) -> list[PacketRecord]:
    """All devices' packets with per-device derived seeds and monotone
    timestamps; deterministic per seed."""
    if len(profiles) < 2:
        raise SynthError("need at least 2 profiles")
    records: list[PacketRecord] = []
    for dev_idx, profile in enumerate(sorted(profiles,
                                             key=lambda p: p.device_id)):
        profile.validate()
        rng = np.random.default_rng([seed, dev_idx])
        count = profile.sessions * profile.packets_per_session

        protos = rng.choice(list(profile.proto_probs),
                            p=list(profile.proto_probs.values()), size=count)
        ports = rng.choice(list(profile.port_probs),
                           p=list(profile.port_probs.values()), size=count)
        directions = rng.choice(list(profile.direction_probs),
                                p=list(profile.direction_probs.values()),
                                size=count)
        sizes = np.maximum(
            1, np.round(rng.lognormal(profile.size_log_mean,
                                      profile.size_log_sigma, size=count))
        ).astype(np.int64)
        iats = rng.lognormal(profile.iat_log_mean, profile.iat_log_sigma,
                             size=count)
        ephemerals = rng.integers(_EPHEMERAL_LOW, _EPHEMERAL_HIGH, size=count)
        timestamps = _BASE_TIMESTAMP + np.cumsum(iats)

        for i in range(count):
            outbound = directions[i] == "out"
            service = int(ports[i])
            ephemeral = int(ephemerals[i])
            records.append(PacketRecord(
                timestamp=float(timestamps[i]),
                src_port=ephemeral if outbound else service,
                dst_port=service if outbound else ephemeral,
                src_internal=outbound,
                dst_internal=not outbound,
                transport_proto=Transport(protos[i]),
                packet_size=int(sizes[i]),
                direction=Direction.OUTBOUND if outbound else Direction.INBOUND,
                device_id=profile.device_id,
            ))
    return records


def write_csv(records: list[PacketRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for r in records:
            fh.write(f"{r.timestamp:.6f},{r.src_port},{r.dst_port},"
                     f"{int(r.src_internal)},{int(r.dst_internal)},"
                     f"{r.transport_proto.value},{r.packet_size},"
                     f"{r.direction.value},{r.device_id}\n")


def generate_csv(profiles: list[DeviceProfile], seed: int,
                 path: str | Path) -> None:
    write_csv(generate_records(profiles, seed), path)


# ---------------------------------------------------------------------------
# Bayes oracle
# ---------------------------------------------------------------------------

def _profile_log_tables(profile: DeviceProfile) -> dict:
    p_cat = np.zeros(_NUM_PORT_CATEGORIES)
    for port, p in profile.port_probs.items():
        p_cat[port_category(port)] += p
    p_proto = np.zeros(len(PROTO_CODES))
    for proto, p in profile.proto_probs.items():
        p_proto[PROTO_CODES[proto]] = p
    p_dir = np.zeros(len(DIRECTION_CODES))
    for direction, p in profile.direction_probs.items():
        p_dir[DIRECTION_CODES[direction]] = p
    with np.errstate(divide="ignore"):
        return {
            "log_cat": np.log(p_cat),
            "log_proto": np.log(p_proto),
            "log_dir": np.log(p_dir),
            "size_mu": profile.size_log_mean,
            "size_sigma": profile.size_log_sigma,
            "iat_mu": profile.iat_log_mean,
            "iat_sigma": profile.iat_log_sigma,
        }


def _lognormal_logpdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return (-np.log(x * sigma * np.sqrt(2 * np.pi))
            - (np.log(x) - mu) ** 2 / (2 * sigma ** 2))


def _sequence_loglik(features: np.ndarray, table: dict) -> float:
    """Log-likelihood of one raw feature sequence. The application protocol
    and internal flags are deterministic given the port category and
    direction, so they contribute no extra terms; inter-arrival rows equal to
    the first-packet sentinel 0 are skipped."""
    f = features.astype(np.float64)
    cats = f[:, COL_PORT_CATEGORY].astype(np.int64)
    protos = f[:, COL_PROTO].astype(np.int64)
    dirs = f[:, COL_DIRECTION].astype(np.int64)
    ll = (table["log_cat"][cats].sum() + table["log_proto"][protos].sum()
          + table["log_dir"][dirs].sum())
    sizes = f[:, COL_SIZE]
    ll += _lognormal_logpdf(sizes, table["size_mu"], table["size_sigma"]).sum()
    iats = f[:, COL_INTER_ARRIVAL]
    valid = iats > 0
    if valid.any():
        ll += _lognormal_logpdf(iats[valid], table["iat_mu"],
                                table["iat_sigma"]).sum()
    return float(ll)


def oracle_predict(profiles: list[DeviceProfile],
                   points: list[DataPoint]) -> np.ndarray:
    """Class index (by sorted device id) with maximum log-likelihood per
    sequence; ties break to the lowest index."""
    ordered = sorted(profiles, key=lambda p: p.device_id)
    tables = [_profile_log_tables(p) for p in ordered]
    preds = np.empty(len(points), dtype=np.int64)
    for i, point in enumerate(points):
        lls = np.array([_sequence_loglik(point.features, t) for t in tables])
        preds[i] = int(lls.argmax())
    return preds


def bayes_oracle(profiles: list[DeviceProfile],
                 points: list[DataPoint]) -> float:
    """Accuracy of the true-parameter maximum-likelihood classifier; an upper
    bound (up to sampling noise) for any model on the same data."""
    preds = oracle_predict(profiles, points)
    labels = np.array([p.label for p in points], dtype=np.int64)
    return float((preds == labels).mean())


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def separable_profiles(sessions: int = 60,
                       packets_per_session: int = 200) -> list[DeviceProfile]:
    """Twelve devices with near-disjoint traffic signatures; the oracle and a
    trained classifier should both be near-perfect."""
    specs = [
        # (dominant port, proto mix, out prob, size log-mean, iat log-mean)
        (53, {"udp": 0.9, "tcp": 0.1}, 0.5, 4.4, -3.5),
        (443, {"tcp": 0.95, "udp": 0.05}, 0.7, 6.8, -1.0),
        (123, {"udp": 1.0}, 0.5, 4.0, 1.0),
        (1883, {"tcp": 1.0}, 0.8, 4.8, -0.5),
        (80, {"tcp": 0.9, "other": 0.1}, 0.6, 6.2, -2.0),
        (5353, {"udp": 1.0}, 0.4, 5.0, 0.0),
        (67, {"udp": 0.95, "other": 0.05}, 0.3, 5.4, 0.5),
        (8080, {"tcp": 1.0}, 0.65, 6.5, -2.5),
        (22, {"tcp": 1.0}, 0.55, 5.8, -1.5),
        (25, {"tcp": 0.8, "udp": 0.2}, 0.75, 6.0, -3.0),
        (31000, {"udp": 0.7, "tcp": 0.3}, 0.45, 4.2, -0.8),
        (990, {"tcp": 0.85, "other": 0.15}, 0.35, 7.0, 0.8),
    ]
    profiles = []
    for idx, (port, protos, p_out, size_mu, iat_mu) in enumerate(specs):
        port_probs = {port: 0.85, 53: 0.1, 123: 0.05}
        if port == 53:
            port_probs = {53: 0.95, 123: 0.05}
        elif port == 123:
            port_probs = {123: 0.9, 53: 0.1}
        profiles.append(DeviceProfile(
            device_id=f"device-{idx:02d}",
            proto_probs=_fill_protos(protos),
            port_probs=port_probs,
            direction_probs={"out": p_out, "in": 1.0 - p_out},
            size_log_mean=size_mu,
            size_log_sigma=0.35,
            iat_log_mean=iat_mu,
            iat_log_sigma=0.5,
            sessions=sessions,
            packets_per_session=packets_per_session,
        ))
    return profiles


def hard_profiles(sessions: int = 40,
                  packets_per_session: int = 200) -> list[DeviceProfile]:
    """Twelve devices drawing from a shared port pool with overlapping size
    and timing distributions; methods spread out below the oracle ceiling."""
    shared_ports = [53, 443, 80, 123, 1883, 8080]
    rng = np.random.default_rng(1234)
    profiles = []
    for idx in range(12):
        weights = rng.dirichlet(np.full(len(shared_ports), 1.2))
        port_probs = {p: float(w) for p, w in zip(shared_ports, weights)}
        p_tcp = float(rng.uniform(0.35, 0.75))
        p_udp = float(rng.uniform(0.15, 1.0 - p_tcp - 0.05))
        p_out = float(rng.uniform(0.35, 0.65))
        profiles.append(DeviceProfile(
            device_id=f"device-{idx:02d}",
            proto_probs={"tcp": p_tcp, "udp": p_udp,
                         "other": 1.0 - p_tcp - p_udp},
            port_probs=port_probs,
            direction_probs={"out": p_out, "in": 1.0 - p_out},
            size_log_mean=float(rng.uniform(5.0, 6.4)),
            size_log_sigma=0.8,
            iat_log_mean=float(rng.uniform(-2.0, -0.5)),
            iat_log_sigma=1.0,
            sessions=sessions,
            packets_per_session=packets_per_session,
        ))
    return profiles


def _fill_protos(partial: dict[str, float]) -> dict[str, float]:
    probs = {"tcp": 0.0, "udp": 0.0, "other": 0.0}
    probs.update(partial)
    return probs


PRESETS = {
    "separable-12": separable_profiles,
    "hard-12": hard_profiles,
}


def preset_profiles(name: str, sessions: int | None = None,
                    packets_per_session: int = 200) -> list[DeviceProfile]:
    if name not in PRESETS:
        raise SynthError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    factory = PRESETS[name]
    if sessions is None:
        return factory(packets_per_session=packets_per_session)
    return factory(sessions=sessions, packets_per_session=packets_per_session)
