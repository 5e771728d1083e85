"""SCADA data handling: CSV ingestion with a user-editable schema, event-based
filtering, feature normalization, and a synthetic fleet simulator.

Timestamps are ISO-8601 UTC everywhere and stored internally as naive-UTC
``numpy.datetime64``. Wind-direction angles are replaced at ingestion by
their sine and cosine, so direction wraps cleanly at 0/360 degrees.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, SchemaError

logger = logging.getLogger(__name__)

ROW_STATUSES = ("normal", "standby", "warning", "stop", "forced_outage", "pre_outage_window")
EVENT_CATEGORIES = ("standby", "warning", "stop", "forced_outage")

SCHEMA_FORMAT_VERSION = 1
TRUTH_FORMAT_VERSION = 1


@dataclass
class TurbineDataset:
    """Time-indexed features and power for one unit.

    ``timestamps`` must be strictly increasing; gaps are allowed, duplicates
    are not. ``row_status`` tags each interval (all "normal" at ingestion;
    event labelling fills in the rest).
    """

    unit_id: str
    timestamps: np.ndarray  # datetime64[s], naive UTC
    features: np.ndarray  # (n, d0) float64
    target_power: np.ndarray  # (n,) float64, kW
    feature_names: list[str]
    row_status: np.ndarray | None = None  # (n,) object/str
    cadence_minutes: float = 10.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.target_power = np.asarray(self.target_power, dtype=np.float64)
        if self.row_status is None:
            self.row_status = np.full(len(self.timestamps), "normal", dtype=object)
        else:
            self.row_status = np.asarray(self.row_status, dtype=object)
        n = len(self.timestamps)
        if not (self.features.shape[0] == n == len(self.target_power) == len(self.row_status)):
            raise DataError(
                f"row counts differ: {n} timestamps, {self.features.shape[0]} feature rows, "
                f"{len(self.target_power)} targets, {len(self.row_status)} statuses"
            )
        if self.features.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match feature columns")
        if n > 1:
            deltas = np.diff(self.timestamps).astype("timedelta64[s]").astype(np.int64)
            if np.any(deltas <= 0):
                raise DataError(f"timestamps must be strictly increasing (unit {self.unit_id})")
            if self.cadence_minutes:
                step = int(round(self.cadence_minutes * 60))
                if np.any(deltas % step != 0):
                    raise DataError(
                        f"timestamps of unit {self.unit_id} are not aligned to "
                        f"the {self.cadence_minutes}-minute cadence"
                    )

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "TurbineDataset":
        """Row subset in the given order (re-validated, so keep it sorted)."""
        idx = np.asarray(indices)
        return TurbineDataset(
            unit_id=self.unit_id,
            timestamps=self.timestamps[idx],
            features=self.features[idx],
            target_power=self.target_power[idx],
            feature_names=list(self.feature_names),
            row_status=self.row_status[idx],
            cadence_minutes=self.cadence_minutes,
        )

    def slice_rows(self, start: int, stop: int) -> "TurbineDataset":
        return self.take(np.arange(start, stop))


@dataclass(frozen=True)
class Event:
    unit_id: str
    start: np.datetime64
    end: np.datetime64
    category: str

    def __post_init__(self):
        if self.category not in EVENT_CATEGORIES:
            raise DataError(f"unknown event category {self.category!r}")
        if self.start > self.end:
            raise DataError(f"event start {self.start} after end {self.end}")


@dataclass
class EventLog:
    events: list[Event] = field(default_factory=list)

    def for_unit(self, unit_id: str) -> list[Event]:
        return [e for e in self.events if e.unit_id == unit_id]

    def __len__(self) -> int:
        return len(self.events)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "unit_id": [e.unit_id for e in self.events],
                "start": [iso_utc(e.start) for e in self.events],
                "end": [iso_utc(e.end) for e in self.events],
                "category": [e.category for e in self.events],
            }
        )

    def save_csv(self, path):
        df = self.to_frame()
        from .ioutil import atomic_write_text

        atomic_write_text(path, df.to_csv(index=False))

    @classmethod
    def load_csv(cls, path) -> "EventLog":
        df = pd.read_csv(path)
        required = {"unit_id", "start", "end", "category"}
        missing = required - set(df.columns)
        if missing:
            raise SchemaError(f"events file missing column(s): {sorted(missing)}")
        events = [
            Event(
                unit_id=str(r.unit_id),
                start=parse_time(r.start),
                end=parse_time(r.end),
                category=str(r.category),
            )
            for r in df.itertuples()
        ]
        return cls(events)


def iso_utc(ts: np.datetime64) -> str:
    return np.datetime_as_string(np.datetime64(ts, "s"), unit="s") + "Z"


def parse_time(value) -> np.datetime64:
    ts = pd.to_datetime(value, utc=True)
    return np.datetime64(ts.tz_convert(None), "s")


# ---------------------------------------------------------------------------
# Schema-driven ingestion
# ---------------------------------------------------------------------------

@dataclass
class Schema:
    """Maps logical feature names to the column headers of a SCADA export.

    ``features`` are used as-is; each entry of ``angles_deg`` is an angle in
    degrees that expands into two engineered features, sin_<name> and
    cos_<name>. The engineered feature order is: plain features in mapping
    order, then sin/cos pairs in mapping order.
    """

    timestamp: str
    power: str
    features: dict[str, str]
    angles_deg: dict[str, str] = field(default_factory=dict)
    cadence_minutes: float = 10.0

    @property
    def feature_names(self) -> list[str]:
        names = list(self.features)
        for angle in self.angles_deg:
            names.append(f"sin_{angle}")
            names.append(f"cos_{angle}")
        return names

    @property
    def n_features(self) -> int:
        return len(self.features) + 2 * len(self.angles_deg)

    def to_dict(self) -> dict:
        return {
            "format_version": SCHEMA_FORMAT_VERSION,
            "timestamp": self.timestamp,
            "power": self.power,
            "features": self.features,
            "angles_deg": self.angles_deg,
            "cadence_minutes": self.cadence_minutes,
        }

    def save(self, path):
        from .ioutil import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        for key in ("timestamp", "power", "features"):
            if key not in d:
                raise SchemaError(f"schema is missing the {key!r} entry")
        return cls(
            timestamp=d["timestamp"],
            power=d["power"],
            features=dict(d["features"]),
            angles_deg=dict(d.get("angles_deg", {})),
            cadence_minutes=d.get("cadence_minutes", 10.0),
        )

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# The 41-feature engineered set used on real SCADA exports: 35 plain columns
# plus sine/cosine of the three wind-direction summaries. Headers on the
# right are placeholders; edit the saved schema file to match an export.
_STANDARD_PLAIN_FEATURES = [
    "avg_wind_speed", "stdev_wind_speed", "min_wind_speed", "max_wind_speed",
    "avg_front_bearing_temp", "stdev_front_bearing_temp",
    "min_front_bearing_temp", "max_front_bearing_temp",
    "avg_rear_bearing_temp", "stdev_rear_bearing_temp",
    "min_rear_bearing_temp", "max_rear_bearing_temp",
    "avg_rotor_bearing_temp", "avg_stator1_temp",
    "avg_nacelle_ambient_temp", "avg_nacelle_temp",
    "avg_transformer_temp", "avg_gear_oil_inlet_temp", "avg_gear_oil_temp",
    "avg_top_box_temp", "avg_conv_ambient_temp",
    "avg_drive_train_acceleration", "avg_hub_temp",
    "avg_transformer_cell_temp", "avg_motor_axis1_temp",
    "avg_motor_axis2_temp", "avg_cpu_temp",
    "avg_blade_angle_pitch_a", "avg_blade_angle_pitch_b",
    "avg_blade_angle_pitch_c",
    "avg_gear_oil_inlet_press", "avg_gear_oil_pump_press",
    "tower_acceleration_x", "tower_acceleration_y",
    "stdev_wind_dir",
]
_STANDARD_ANGLES = ["avg_wind_dir", "max_wind_dir", "min_wind_dir"]


def standard_scada_schema() -> Schema:
    """The full 41-feature schema template (d0 = 35 + 2*3 = 41)."""
    return Schema(
        timestamp="timestamp",
        power="power_kw",
        features={name: name for name in _STANDARD_PLAIN_FEATURES},
        angles_deg={name: name for name in _STANDARD_ANGLES},
    )


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_kept: int = 0
    rows_dropped_missing: int = 0
    rows_dropped_unparseable: int = 0


def ingest(csv_path, schema: Schema, unit_id: str | None = None) -> tuple[TurbineDataset, IngestReport]:
    """Read a raw SCADA CSV and build the engineered feature matrix.

    Rows with any missing or unparseable required field are dropped and
    counted in the report. Raises SchemaError naming the first missing
    column.
    """
    df = pd.read_csv(csv_path)
    required = [schema.timestamp, schema.power, *schema.features.values(), *schema.angles_deg.values()]
    for col in required:
        if col not in df.columns:
            raise SchemaError(f"input file is missing column {col!r}")

    report = IngestReport(rows_read=len(df))

    times = pd.to_datetime(df[schema.timestamp], utc=True, errors="coerce")
    numeric = df[required[1:]].apply(pd.to_numeric, errors="coerce")
    parse_failed = times.isna() | (numeric.isna() & ~df[required[1:]].isna()).any(axis=1)
    missing = df[required].isna().any(axis=1) & ~parse_failed
    keep = ~(parse_failed | missing)
    report.rows_dropped_unparseable = int(parse_failed.sum())
    report.rows_dropped_missing = int(missing.sum())
    report.rows_kept = int(keep.sum())
    if report.rows_kept == 0:
        raise DataError(f"no usable rows in {csv_path}")
    if report.rows_kept < report.rows_read:
        logger.info(
            "ingest %s: dropped %d unparseable and %d incomplete of %d rows",
            csv_path, report.rows_dropped_unparseable, report.rows_dropped_missing,
            report.rows_read,
        )

    times = times[keep]
    numeric = numeric[keep]

    cols = [numeric[schema.features[name]].to_numpy() for name in schema.features]
    for angle_name in schema.angles_deg:
        radians = np.deg2rad(numeric[schema.angles_deg[angle_name]].to_numpy())
        cols.append(np.sin(radians))
        cols.append(np.cos(radians))
    features = np.column_stack(cols) if cols else np.empty((report.rows_kept, 0))

    if unit_id is None:
        from pathlib import Path

        unit_id = Path(csv_path).stem

    dataset = TurbineDataset(
        unit_id=unit_id,
        timestamps=times.dt.tz_convert(None).to_numpy().astype("datetime64[s]"),
        features=features,
        target_power=numeric[schema.power].to_numpy(),
        feature_names=schema.feature_names,
        cadence_minutes=schema.cadence_minutes,
    )
    return dataset, report


# ---------------------------------------------------------------------------
# Processed dataset files (canonical CSV: timestamp, power, features, status)
# ---------------------------------------------------------------------------

def save_dataset(dataset: TurbineDataset, path):
    """Write the canonical processed-CSV form of a dataset."""
    df = pd.DataFrame({"timestamp": [iso_utc(t) for t in dataset.timestamps]})
    df["power_kw"] = dataset.target_power
    for j, name in enumerate(dataset.feature_names):
        df[name] = dataset.features[:, j]
    df["status"] = dataset.row_status
    from .ioutil import atomic_write_text

    atomic_write_text(path, df.to_csv(index=False))


def load_dataset(path, unit_id: str | None = None, cadence_minutes: float = 10.0) -> TurbineDataset:
    """Read a processed-CSV dataset written by :func:`save_dataset`."""
    if str(path).endswith((".ndjson", ".jsonl")):
        df = pd.read_json(path, lines=True)
    else:
        df = pd.read_csv(path)
    for col in ("timestamp", "power_kw"):
        if col not in df.columns:
            raise SchemaError(f"processed dataset is missing column {col!r}")
    status = df["status"].to_numpy() if "status" in df.columns else None
    feature_names = [c for c in df.columns if c not in ("timestamp", "power_kw", "status")]
    if unit_id is None:
        from pathlib import Path

        unit_id = Path(path).stem
    times = pd.to_datetime(df["timestamp"], utc=True)
    return TurbineDataset(
        unit_id=unit_id,
        timestamps=times.dt.tz_convert(None).to_numpy().astype("datetime64[s]"),
        features=df[feature_names].to_numpy(dtype=np.float64),
        target_power=df["power_kw"].to_numpy(dtype=np.float64),
        feature_names=feature_names,
        row_status=status,
        cadence_minutes=cadence_minutes,
    )


# ---------------------------------------------------------------------------
# Event-based filtering
# ---------------------------------------------------------------------------

@dataclass
class FilterReport:
    removed: dict[str, int] = field(default_factory=dict)
    rows_in: int = 0
    rows_out: int = 0


def label_events(
    dataset: TurbineDataset, events: EventLog, pre_outage_days: float = 7.0
) -> TurbineDataset:
    """Return a copy with row_status set from the event log.

    A row is tagged with an event's category when its instant lies inside
    [start, end]. Rows in the window [outage_start - pre_outage_days,
    outage_start) before each forced outage are tagged pre_outage_window.
    Later tags do not overwrite earlier ones except that concrete event
    categories win over the pre-outage tag.
    """
    status = dataset.row_status.copy()
    ts = dataset.timestamps
    pre_window = np.timedelta64(int(round(pre_outage_days * 86400)), "s")
    for event in events.for_unit(dataset.unit_id):
        if event.category == "forced_outage":
            pre_mask = (ts >= event.start - pre_window) & (ts < event.start)
            status[pre_mask & (status == "normal")] = "pre_outage_window"
            in_mask = (ts >= event.start) & (ts <= event.end)
            status[in_mask] = "forced_outage"
        else:
            mask = (ts >= event.start) & (ts <= event.end)
            status[mask & (status != "forced_outage")] = event.category
    return replace(dataset, row_status=status)


def filter_events(
    dataset: TurbineDataset, events: EventLog, pre_outage_days: float = 7.0
) -> tuple[TurbineDataset, FilterReport]:
    """Drop rows affected by events; keep only healthy-operation rows.

    Rows inside standby/warning/stop intervals, inside forced outages, and in
    the window preceding each forced outage are removed. Surviving rows keep
    their original order and timestamps. Returns the filtered dataset and
    per-category removal counts.
    """
    labelled = label_events(dataset, events, pre_outage_days)
    keep = labelled.row_status == "normal"
    report = FilterReport(rows_in=len(dataset), rows_out=int(keep.sum()))
    for tag in ROW_STATUSES[1:]:
        count = int(np.sum(labelled.row_status == tag))
        if count:
            report.removed[tag] = count
    if report.rows_out == 0:
        logger.warning("filter_events removed every row of unit %s", dataset.unit_id)
    return labelled.take(np.flatnonzero(keep)), report


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass
class NormalizationStats:
    """Per-feature z-score statistics, fitted on the training split only."""

    feature_names: list[str]
    mean: np.ndarray
    std: np.ndarray
    dropped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            feature_names=list(d["feature_names"]),
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            dropped=list(d.get("dropped", [])),
        )


def fit_normalization(train, on_constant: str = "drop") -> NormalizationStats:
    """Compute per-feature mean and stddev on the training split.

    ``train`` is anything with ``features`` and ``feature_names`` (a unit's
    dataset or a pooled training set). Constant features carry no information
    and would divide by zero; they are dropped with a warning by default, or
    rejected with ``on_constant="error"``.
    """
    if len(train.features) == 0:
        raise DataError("cannot fit normalization on an empty dataset")
    if train.feature_names is None:
        raise DataError("training rows carry no feature names")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    constant = std == 0.0
    if constant.any():
        names = [n for n, c in zip(train.feature_names, constant) if c]
        if on_constant == "error":
            raise DataError(f"constant feature column(s): {names}")
        logger.warning("dropping constant feature column(s): %s", names)
    keep = ~constant
    return NormalizationStats(
        feature_names=[n for n, k in zip(train.feature_names, keep) if k],
        mean=mean[keep],
        std=std[keep],
        dropped=[n for n, k in zip(train.feature_names, keep) if not k],
    )


def apply_normalization(dataset, stats: NormalizationStats):
    """Z-score features with the fitted statistics; targets stay in kW.

    Works on any dataclass with ``features`` and ``feature_names``; returns
    the same type with features replaced.
    """
    name_to_col = {n: j for j, n in enumerate(dataset.feature_names)}
    missing = [n for n in stats.feature_names if n not in name_to_col]
    if missing:
        raise SchemaError(f"dataset lacks feature column(s) {missing} required by the stats")
    cols = [name_to_col[n] for n in stats.feature_names]
    features = (dataset.features[:, cols] - stats.mean) / stats.std
    return replace(dataset, features=features, feature_names=list(stats.feature_names))


# ---------------------------------------------------------------------------
# Synthetic fleet simulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimFault:
    """A power mean-shift of ``shift_sigma`` noise units over rows
    [start_row, start_row + n_rows); the forced-outage event is recorded at
    the end of the window."""

    unit_index: int
    start_row: int
    n_rows: int
    shift_sigma: float = -2.0
    kind: str = "mean_shift"


@dataclass
class SimConfig:
    n_units: int = 1
    rows_per_unit: int | list[int] = 5000
    start_time: str = "2021-01-01T00:00:00Z"
    cadence_minutes: float = 10.0
    # power curve
    cut_in: float = 3.0
    rated_speed: float = 12.0
    rated_power: float = 2050.0
    # per-unit perturbations of the shared curve
    rated_power_jitter: float = 0.02
    cut_in_jitter: float = 0.15
    # heteroscedastic noise, as fractions of rated power
    noise_floor_frac: float = 0.01
    noise_amp_frac: float = 0.12
    # wind process
    wind_mean: float = 7.5
    wind_daily_amplitude: float = 2.0
    wind_ar_coeff: float = 0.97
    wind_innovation_sd: float = 0.45
    faults: list[SimFault] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.rated_power <= 0:
            raise ConfigError("rated_power must be positive")
        if not self.cut_in < self.rated_speed:
            raise ConfigError("cut_in must be below rated_speed")
        if self.n_units < 1:
            raise ConfigError("n_units must be at least 1")
        for f in self.faults:
            if f.n_rows < 1:
                raise ConfigError("fault n_rows must be positive")
            if not 0 <= f.unit_index < self.n_units:
                raise ConfigError(f"fault unit_index {f.unit_index} out of range")

    def rows_for(self, j: int) -> int:
        if isinstance(self.rows_per_unit, int):
            return self.rows_per_unit
        return self.rows_per_unit[j]


SIM_FEATURES = ["avg_wind_speed", "stdev_wind_speed", "ambient_temp"]
SIM_ANGLES = ["avg_wind_dir"]


def sim_schema(cadence_minutes: float = 10.0) -> Schema:
    """Schema matching the simulator's raw CSV output."""
    return Schema(
        timestamp="timestamp",
        power="power_kw",
        features={name: name for name in SIM_FEATURES},
        angles_deg={name: name for name in SIM_ANGLES},
        cadence_minutes=cadence_minutes,
    )


@dataclass
class UnitTruth:
    """Exact generating functions for one simulated unit."""

    unit_id: str
    cut_in: float
    rated_speed: float
    rated_power: float
    noise_floor: float
    noise_amp: float

    def _ramp(self, wind):
        u = (np.asarray(wind, dtype=np.float64) - self.cut_in) / (self.rated_speed - self.cut_in)
        return np.clip(u, 0.0, 1.0)

    def mu(self, wind):
        """Mean power (kW): smoothstep rise from cut-in to rated."""
        u = self._ramp(wind)
        return self.rated_power * u * u * u * (u * (6.0 * u - 15.0) + 10.0)

    def sigma(self, wind):
        """Noise stddev (kW): smallest at the flat ends, peaked mid-ramp."""
        u = self._ramp(wind)
        return self.noise_floor + self.noise_amp * 4.0 * u * (1.0 - u)

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "cut_in": self.cut_in,
            "rated_speed": self.rated_speed,
            "rated_power": self.rated_power,
            "noise_floor": self.noise_floor,
            "noise_amp": self.noise_amp,
        }


@dataclass
class FleetTruth:
    units: list[UnitTruth]
    rated_power: float

    def unit(self, unit_id: str) -> UnitTruth:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(unit_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": TRUTH_FORMAT_VERSION,
                "rated_power": self.rated_power,
                "units": [u.to_dict() for u in self.units],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "FleetTruth":
        doc = json.loads(text)
        return cls(
            units=[UnitTruth(**u) for u in doc["units"]],
            rated_power=doc["rated_power"],
        )


def simulate_fleet(config: SimConfig) -> tuple[list[TurbineDataset], EventLog, FleetTruth]:
    """Generate a fleet of units sharing one power curve.

    Each unit gets its own wind-speed process (slow daily cycle plus a
    mean-reverting component), a slightly perturbed copy of the shared curve,
    and heteroscedastic Gaussian noise whose stddev follows the curve's
    slope. Scheduled faults shift the mean power by ``shift_sigma`` local
    noise units and are recorded as forced-outage events at the end of each
    fault window. With no faults, every row is tagged normal.
    """
    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, 2])
    start = parse_time(config.start_time)
    step = np.timedelta64(int(round(config.cadence_minutes * 60)), "s")
    steps_per_day = 24.0 * 60.0 / config.cadence_minutes

    datasets: list[TurbineDataset] = []
    events: list[Event] = []
    truths: list[UnitTruth] = []

    for j in range(config.n_units):
        n = config.rows_for(j)
        unit_id = f"unit{j + 1}"
        truth = UnitTruth(
            unit_id=unit_id,
            cut_in=config.cut_in + rng.uniform(-config.cut_in_jitter, config.cut_in_jitter),
            rated_speed=config.rated_speed,
            rated_power=config.rated_power
            * (1.0 + rng.uniform(-config.rated_power_jitter, config.rated_power_jitter)),
            noise_floor=config.noise_floor_frac * config.rated_power,
            noise_amp=config.noise_amp_frac * config.rated_power,
        )
        truths.append(truth)

        # wind: daily sinusoid + AR(1) around the configured mean
        phase = rng.uniform(0.0, 2.0 * math.pi)
        t_idx = np.arange(n)
        seasonal = config.wind_daily_amplitude * np.sin(2.0 * math.pi * t_idx / steps_per_day + phase)
        ar = np.empty(n)
        innov = rng.normal(0.0, config.wind_innovation_sd, size=n)
        level = 0.0
        for i in range(n):
            level = config.wind_ar_coeff * level + innov[i]
            ar[i] = level
        wind = np.clip(config.wind_mean + seasonal + ar, 0.0, 30.0)

        mu_star = truth.mu(wind)
        sigma_star = truth.sigma(wind)
        power = mu_star + sigma_star * rng.standard_normal(n)

        status = np.full(n, "normal", dtype=object)
        timestamps = start + step * t_idx
        for fault in config.faults:
            if fault.unit_index != j:
                continue
            lo, hi = fault.start_row, min(fault.start_row + fault.n_rows, n)
            if lo >= n:
                raise ConfigError(f"fault start_row {lo} beyond unit {unit_id} length {n}")
            power[lo:hi] += fault.shift_sigma * sigma_star[lo:hi]
            status[lo:hi] = "pre_outage_window"
            onset = timestamps[hi - 1] + step
            events.append(Event(unit_id=unit_id, start=onset, end=onset, category="forced_outage"))

        features = np.column_stack(
            [
                wind,
                np.abs(rng.normal(0.5, 0.2, size=n)),  # within-interval wind spread
                12.0 + 8.0 * np.sin(2.0 * math.pi * t_idx / (steps_per_day * 30.0))
                + rng.normal(0.0, 1.0, size=n),  # ambient temperature, no power effect
            ]
        )
        direction = np.cumsum(rng.normal(0.0, 8.0, size=n)) % 360.0
        features = np.column_stack(
            [features, np.sin(np.deg2rad(direction)), np.cos(np.deg2rad(direction))]
        )

        datasets.append(
            TurbineDataset(
                unit_id=unit_id,
                timestamps=timestamps,
                features=features,
                target_power=power,
                feature_names=[*SIM_FEATURES, "sin_avg_wind_dir", "cos_avg_wind_dir"],
                row_status=status,
                cadence_minutes=config.cadence_minutes,
            )
        )

    return datasets, EventLog(events), FleetTruth(units=truths, rated_power=config.rated_power)


def save_raw_csv(dataset: TurbineDataset, path):
    """Write a simulated dataset in the raw SCADA layout read by ingest.

    The engineered sin/cos direction features are folded back into a single
    angle column so the file goes through the same ingestion path as a real
    export.
    """
    names = dataset.feature_names
    df = pd.DataFrame({"timestamp": [iso_utc(t) for t in dataset.timestamps]})
    df["power_kw"] = dataset.target_power
    handled = set()
    for j, name in enumerate(names):
        if name.startswith("sin_"):
            angle = name[4:]
            if angle in handled:
                continue
            cos_col = names.index(f"cos_{angle}")
            degrees = np.rad2deg(np.arctan2(dataset.features[:, j], dataset.features[:, cos_col])) % 360.0
            df[angle] = degrees
            handled.add(angle)
        elif name.startswith("cos_"):
            continue
        else:
            df[name] = dataset.features[:, j]
    from .ioutil import atomic_write_text

    atomic_write_text(path, df.to_csv(index=False))
