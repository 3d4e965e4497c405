"""Seeded synthetic grid dataset: topology, hourly sensor series, masking.

The physics surrogate is deliberately simple but fully known: active power
balances renewables against demand, reactive power follows a 0.9 power
factor, and voltages respond linearly to injections through a low-gain
sensitivity matrix derived from the topology Laplacian. Ground truth is
therefore exact, which the evaluation layer relies on.
"""

from __future__ import annotations

import base64
import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import SchemaError
from .partition import ConnectivityGraph, laplacian
from .seeds import substream

KINDS = ("voltage", "p", "q", "demand", "solar", "wind")
KIND_INDEX = {k: i for i, k in enumerate(KINDS)}
POWER_FACTOR = 0.9
REACTIVE_RATIO = math.tan(math.acos(POWER_FACTOR))
NOISE_SIGMA = {
    "voltage": 1e-5,
    "p": 1e-3,
    "q": 1e-3,
    "demand": 1e-3,
    "solar": 1e-3,
    "wind": 1e-3,
}
DATASET_SCHEMA_VERSION = 1

MEASUREMENTS_FILE = "measurements.csv"
TRUTH_FILE = "ground_truth.csv"
TOPOLOGY_FILE = "topology.csv"
META_FILE = "meta.json"


@dataclass(frozen=True)
class AnomalyRecord:
    bus: int
    kind: str
    factor: float


@dataclass(frozen=True)
class GridDataset:
    """Hourly sensor series over (hour, bus, kind) with availability masks."""

    topology: ConnectivityGraph
    series: np.ndarray  # (hours, buses, kinds) measured values, NaN if unknown
    mask: np.ndarray  # True where a measurement is available
    ground_truth: Optional[np.ndarray]  # noiseless values (synthetic data)
    noise_sigma: dict[str, float]
    has_solar: np.ndarray
    has_wind: np.ndarray
    voltage_gain: Optional[np.ndarray] = None  # buses x buses injection response
    seed: Optional[int] = None
    anomalies: tuple[AnomalyRecord, ...] = ()

    @property
    def n_hours(self) -> int:
        return self.series.shape[0]

    @property
    def n_buses(self) -> int:
        return self.series.shape[1]

    def kind_series(self, bus: int, kind: str) -> np.ndarray:
        return self.series[:, bus, KIND_INDEX[kind]]


def _ar1(rng: np.random.Generator, hours: int, buses: int, rho: float, sigma: float) -> np.ndarray:
    shocks = rng.normal(0.0, sigma, size=(hours, buses))
    out = np.empty((hours, buses))
    state = shocks[0] / math.sqrt(max(1.0 - rho * rho, 1e-12))
    out[0] = state
    for t in range(1, hours):
        state = rho * state + shocks[t]
        out[t] = state
    return out


def generate(n_buses: int, n_hours: int, seed: int) -> GridDataset:
    """Build a seeded synthetic grid dataset.

    Topology is a random spanning tree plus ~15% extra edges. Demand mixes
    daily and weekly cycles with AR(1) noise; solar follows a clipped diurnal
    bell scaled by season and a shared cloud factor; wind is a squashed
    slow AR(1) weather process. Measurement noise uses sigma 1e-3 for power
    kinds and 1e-5 for voltage.
    """
    if n_buses < 2:
        raise ValueError("need at least 2 buses")
    if n_hours < 24:
        raise ValueError("need at least 24 hours")

    rng_top = substream(seed, "topology")
    edges = [(i, int(rng_top.integers(0, i))) for i in range(1, n_buses)]
    extra = math.ceil(0.15 * n_buses)
    added = 0
    while added < extra:
        a, b = rng_top.integers(0, n_buses, size=2)
        if a == b:
            continue
        edges.append((min(int(a), int(b)), max(int(a), int(b))))
        added += 1
    topology = ConnectivityGraph.from_edges(n_buses, edges)

    t = np.arange(n_hours)
    hour_of_day = t % 24

    rng_dem = substream(seed, "demand")
    base = rng_dem.uniform(0.4, 1.0, n_buses)
    phase = rng_dem.uniform(0.0, 24.0, n_buses)
    daily = 1.0 + 0.35 * np.sin(2 * np.pi * (t[:, None] + phase[None, :]) / 24.0)
    weekly = 1.0 + 0.12 * np.sin(2 * np.pi * t[:, None] / 168.0 + rng_dem.uniform(0, 2 * np.pi, n_buses)[None, :])
    demand = base[None, :] * daily * weekly + _ar1(rng_dem, n_hours, n_buses, 0.85, 0.03)
    demand = np.clip(demand, 0.05, None)

    rng_sol = substream(seed, "solar")
    has_solar = rng_sol.random(n_buses) < 0.6
    if not has_solar.any():
        has_solar[0] = True
    solar_cap = np.where(has_solar, rng_sol.uniform(0.3, 0.9, n_buses), 0.0)
    bell = np.clip(np.sin(np.pi * (hour_of_day - 6.0) / 12.0), 0.0, None)
    seasonal = 1.0 + 0.25 * np.sin(2 * np.pi * t / (24.0 * 365.0) + rng_sol.uniform(0, 2 * np.pi))
    n_days = n_hours // 24 + 1
    cloud_day = 0.55 + 0.45 * rng_sol.random(n_days)  # shared across buses
    cloud = cloud_day[t // 24]
    jitter = 0.95 + 0.1 * rng_sol.random((n_days, n_buses))
    solar = solar_cap[None, :] * (bell * seasonal * cloud)[:, None] * jitter[t // 24]

    rng_wind = substream(seed, "wind")
    has_wind = rng_wind.random(n_buses) < 0.7
    if not has_wind.any():
        has_wind[-1] = True
    wind_cap = np.where(has_wind, rng_wind.uniform(0.2, 0.7, n_buses), 0.0)
    weather = _ar1(rng_wind, n_hours, 1, 0.97, 0.12)[:, 0]
    squash = 1.0 / (1.0 + np.exp(-1.5 * weather))
    local = 1.0 + 0.1 * _ar1(rng_wind, n_hours, n_buses, 0.9, 0.05)
    wind = np.clip(wind_cap[None, :] * (0.15 + 0.85 * squash)[:, None] * local, 0.0, None)

    p = solar + wind - demand
    q = REACTIVE_RATIO * p

    rng_volt = substream(seed, "voltage-map")
    pseudo = np.linalg.pinv(laplacian(topology))
    row_scale = rng_volt.uniform(0.8, 1.2, n_buses)
    gain_raw = row_scale[:, None] * pseudo
    spread = np.abs(gain_raw @ p.T).max()
    gain = gain_raw * (6e-3 / max(spread, 1e-12))
    voltage = 1.0 + p @ gain.T

    truth = np.stack([voltage, p, q, demand, solar, wind], axis=2)
    rng_noise = substream(seed, "noise")
    sigma_vec = np.array([NOISE_SIGMA[k] for k in KINDS])
    series = truth + rng_noise.normal(0.0, 1.0, truth.shape) * sigma_vec[None, None, :]

    return GridDataset(
        topology=topology,
        series=series,
        mask=np.ones(series.shape, dtype=bool),
        ground_truth=truth,
        noise_sigma=dict(NOISE_SIGMA),
        has_solar=has_solar,
        has_wind=has_wind,
        voltage_gain=gain,
        seed=int(seed),
    )


def inject_anomaly(dataset: GridDataset, bus: int, kind: str = "solar", factor: float = 2.0) -> GridDataset:
    """Scale one bus's solar generation physically while its sensor lies.

    Power, reactive power and voltages are recomputed from the scaled
    generation (same noise realizations); the solar *measurement* at the bus
    keeps reporting the original level, reproducing an unaccounted-generation
    scenario.
    """
    if kind != "solar":
        raise ValueError(f"only solar injections are supported, got {kind!r}")
    if dataset.ground_truth is None or dataset.voltage_gain is None:
        raise ValueError("anomaly injection needs a synthetic dataset with ground truth")
    bus = int(bus)
    solar_truth = dataset.ground_truth[:, bus, KIND_INDEX["solar"]]
    if not dataset.has_solar[bus] or not np.any(solar_truth > 0):
        raise ValueError(f"bus {bus} has no solar series")
    if factor == 1.0:
        return dataset

    noise = dataset.series - dataset.ground_truth
    truth = dataset.ground_truth.copy()
    delta = (float(factor) - 1.0) * solar_truth
    truth[:, bus, KIND_INDEX["solar"]] += delta
    truth[:, bus, KIND_INDEX["p"]] += delta
    truth[:, bus, KIND_INDEX["q"]] = REACTIVE_RATIO * truth[:, bus, KIND_INDEX["p"]]
    truth[:, :, KIND_INDEX["voltage"]] += np.outer(delta, dataset.voltage_gain[:, bus])

    series = truth + noise
    # the stale sensor: measurement stays at the pre-injection level
    series[:, bus, KIND_INDEX["solar"]] = dataset.series[:, bus, KIND_INDEX["solar"]]
    return replace(
        dataset,
        series=series,
        ground_truth=truth,
        anomalies=dataset.anomalies + (AnomalyRecord(bus, kind, float(factor)),),
    )


def mask_missing(dataset: GridDataset, ratio: float, seed: int) -> GridDataset:
    """Drop a uniformly random fraction of entries from the availability mask."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"missing ratio must be in [0, 1), got {ratio}")
    if ratio == 0.0:
        return dataset
    rng = substream(seed, "mask")
    keep = rng.random(dataset.series.shape) >= ratio
    return replace(dataset, mask=dataset.mask & keep)


# ---------------------------------------------------------------------------
# CSV interfaces


def _fmt(x: float) -> str:
    return "NA" if not np.isfinite(x) else f"{x:.12g}"


def save_csv(dataset: GridDataset, directory) -> None:
    """Write the dataset as CSV files plus a JSON metadata sidecar.

    Layout: ``measurements.csv`` (hour,bus,kind,value,observed),
    ``ground_truth.csv`` (synthetic only), ``topology.csv`` (from,to) and
    ``meta.json``. All values print at 12 significant digits.
    """
    os.makedirs(directory, exist_ok=True)
    H, B, _ = dataset.series.shape
    with open(os.path.join(directory, MEASUREMENTS_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("hour,bus,kind,value,observed\n")
        for h in range(H):
            for b in range(B):
                for k, kind in enumerate(KINDS):
                    fh.write(
                        f"{h},{b},{kind},{_fmt(dataset.series[h, b, k])},"
                        f"{1 if dataset.mask[h, b, k] else 0}\n"
                    )
    if dataset.ground_truth is not None:
        with open(os.path.join(directory, TRUTH_FILE), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("hour,bus,kind,value\n")
            for h in range(H):
                for b in range(B):
                    for k, kind in enumerate(KINDS):
                        fh.write(f"{h},{b},{kind},{_fmt(dataset.ground_truth[h, b, k])}\n")
    with open(os.path.join(directory, TOPOLOGY_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("from,to\n")
        for a, b in dataset.topology.edges:
            fh.write(f"{a},{b}\n")
    meta = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "n_hours": H,
        "n_buses": B,
        "kinds": list(KINDS),
        "noise_sigma": {k: dataset.noise_sigma[k] for k in KINDS},
        "has_solar": [bool(x) for x in dataset.has_solar],
        "has_wind": [bool(x) for x in dataset.has_wind],
        "seed": dataset.seed,
        "anomalies": [
            {"bus": a.bus, "kind": a.kind, "factor": a.factor} for a in dataset.anomalies
        ],
    }
    if dataset.voltage_gain is not None:
        meta["voltage_gain"] = {
            "shape": list(dataset.voltage_gain.shape),
            "data": base64.b64encode(
                np.ascontiguousarray(dataset.voltage_gain, dtype=np.float64).tobytes()
            ).decode("ascii"),
        }
    with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _read_value_table(path, *, with_observed: bool):
    expected = ["hour", "bus", "kind", "value"] + (["observed"] if with_observed else [])
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [c.strip() for c in header]
        for col in expected:
            if col not in header:
                raise SchemaError(f"{path}: missing column '{col}'")
        pos = {c: header.index(c) for c in expected}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                hour = int(row[pos["hour"]])
                bus = int(row[pos["bus"]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: non-integer hour or bus") from exc
            kind = row[pos["kind"]].strip()
            if kind not in KIND_INDEX:
                raise SchemaError(f"{path}:{lineno}: unknown kind '{kind}'")
            raw = row[pos["value"]].strip()
            if raw == "NA":
                value = math.nan
            else:
                try:
                    value = float(raw)
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: non-numeric value '{raw}'") from exc
            observed = True
            if with_observed:
                flag = row[pos["observed"]].strip()
                if flag not in ("0", "1"):
                    raise SchemaError(f"{path}:{lineno}: observed must be 0 or 1")
                observed = flag == "1"
            rows.append((hour, bus, kind, value, observed))
    return rows


def load_csv(directory) -> GridDataset:
    """Load a dataset directory written by :func:`save_csv`.

    ``NA`` values are treated as masked entries, never as errors.
    """
    meas_path = os.path.join(directory, MEASUREMENTS_FILE)
    if not os.path.exists(meas_path):
        raise SchemaError(f"{directory}: no {MEASUREMENTS_FILE} found")
    rows = _read_value_table(meas_path, with_observed=True)
    n_hours = max(r[0] for r in rows) + 1
    n_buses = max(r[1] for r in rows) + 1
    series = np.full((n_hours, n_buses, len(KINDS)), np.nan)
    mask = np.zeros(series.shape, dtype=bool)
    for hour, bus, kind, value, observed in rows:
        k = KIND_INDEX[kind]
        series[hour, bus, k] = value
        mask[hour, bus, k] = observed and np.isfinite(value)

    truth = None
    truth_path = os.path.join(directory, TRUTH_FILE)
    if os.path.exists(truth_path):
        truth = np.full(series.shape, np.nan)
        for hour, bus, kind, value, _ in _read_value_table(truth_path, with_observed=False):
            truth[hour, bus, KIND_INDEX[kind]] = value

    topo_path = os.path.join(directory, TOPOLOGY_FILE)
    if os.path.exists(topo_path):
        from .partition import load_edges_csv

        topo_graph = load_edges_csv(topo_path)
        if topo_graph.n < n_buses:
            topo_graph = ConnectivityGraph.from_edges(n_buses, topo_graph.edges)
    else:
        topo_graph = ConnectivityGraph.from_edges(n_buses, [])

    meta_path = os.path.join(directory, META_FILE)
    noise = dict(NOISE_SIGMA)
    has_solar = np.ones(n_buses, dtype=bool)
    has_wind = np.ones(n_buses, dtype=bool)
    seed = None
    anomalies: tuple[AnomalyRecord, ...] = ()
    gain = None
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{meta_path}: invalid JSON ({exc})") from exc
        noise = {k: float(v) for k, v in meta.get("noise_sigma", NOISE_SIGMA).items()}
        if "has_solar" in meta:
            has_solar = np.asarray(meta["has_solar"], dtype=bool)
        if "has_wind" in meta:
            has_wind = np.asarray(meta["has_wind"], dtype=bool)
        seed = meta.get("seed")
        anomalies = tuple(
            AnomalyRecord(int(a["bus"]), str(a["kind"]), float(a["factor"]))
            for a in meta.get("anomalies", [])
        )
        if "voltage_gain" in meta:
            spec = meta["voltage_gain"]
            gain = (
                np.frombuffer(base64.b64decode(spec["data"]), dtype=np.float64)
                .reshape(spec["shape"])
                .copy()
            )
    return GridDataset(
        topology=topo_graph,
        series=series,
        mask=mask,
        ground_truth=truth,
        noise_sigma=noise,
        has_solar=has_solar,
        has_wind=has_wind,
        voltage_gain=gain,
        seed=seed,
        anomalies=anomalies,
    )
