"""Synthetic water-network panels with planted spatial and lagged coupling.

Each sensor owns a local disturbance process ``u`` (AR(1) increments with
mean reversion, plus pump events injected at booster stations).  Sensor i sees

    flow_i(t)     = base_i + daily_i(t) + sum_j C[i, j] u_j(t - lag[i, j]) + noise
    pressure_i(t) = base_i + w_i(t) - sum_{j flow} C[i, j] q_j(t - lag[i, j]) + noise

where ``daily`` is a two-harmonic profile with period 48 (one day at 30
minutes), ``q_j = daily_j + u_j`` is the demand carried by flow sensor j and
``w_i`` is the pressure sensor's own random-walk disturbance.  Every coupling
is linear, so a unit impulse at j reaches i after exactly ``lag[i, j]`` steps
with gain ``C[i, j]``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError
from .pipeline import CADENCE, SeriesPanel, make_panel


@dataclass
class Sensor:
    id: str
    kind: str  # "flow" or "pressure"
    x: float = 0.0
    y: float = 0.0
    station: bool = False
    base: float = 100.0
    amplitude: float = 20.0
    phase: float = 0.0
    innovation_std: float = 1.0
    innovation_ar: float = 0.5
    mean_reversion: float = 0.98

    def __post_init__(self):
        if self.kind not in ("flow", "pressure"):
            raise ConfigurationError(f"sensor {self.id}: kind must be 'flow' or 'pressure', got {self.kind!r}")


@dataclass
class Event:
    time: int
    magnitude: float
    source: int


@dataclass
class NetworkSpec:
    """Sensors plus coupling gains ``coupling[i, j]`` (j acting on i) and integer lags."""

    sensors: list
    coupling: np.ndarray
    lags: np.ndarray
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.coupling = np.asarray(self.coupling, dtype=np.float64)
        self.lags = np.asarray(self.lags)
        self.validate()

    @property
    def n(self) -> int:
        return len(self.sensors)

    @property
    def ids(self) -> list:
        return [s.id for s in self.sensors]

    def index(self, sensor_id: str) -> int:
        return self.ids.index(sensor_id)

    def validate(self) -> None:
        n = self.n
        if self.coupling.shape != (n, n) or self.lags.shape != (n, n):
            raise ConfigurationError(
                f"coupling {self.coupling.shape} and lags {self.lags.shape} must both be ({n}, {n})"
            )
        if not np.all(np.diag(self.coupling) == 1.0):
            raise ConfigurationError("coupling diagonal must be 1")
        if np.any(self.lags < 0) or not np.all(np.equal(np.mod(self.lags, 1), 0)):
            raise ConfigurationError("lags must be nonnegative integers")
        for i, si in enumerate(self.sensors):
            for j, sj in enumerate(self.sensors):
                if i != j and sj.kind == "pressure" and self.coupling[i, j] != 0.0:
                    raise ConfigurationError(f"{si.id} <- {sj.id}: only flow sensors can drive others")
        for ev in self.events:
            if not 0 <= ev.source < n:
                raise ConfigurationError(f"event source {ev.source} outside 0..{n - 1}")

    def distances(self) -> np.ndarray:
        xy = np.array([[s.x, s.y] for s in self.sensors])
        return np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))

    def to_dict(self) -> dict:
        return {
            "sensors": [dataclasses.asdict(s) for s in self.sensors],
            "coupling": self.coupling.tolist(),
            "lags": self.lags.astype(int).tolist(),
            "events": [dataclasses.asdict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            sensors=[Sensor(**s) for s in d["sensors"]],
            coupling=np.array(d["coupling"], dtype=np.float64),
            lags=np.array(d["lags"], dtype=np.int64),
            events=[Event(**e) for e in d.get("events", [])],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class GeneratorConfig:
    length: int = 48 * 60
    period: int = 48
    noise_std: float | list = 0.2
    seed: int = 0
    events_per_day: float = 2.0
    event_scale: float = 5.0
    start: str = "2020-01-01T00:00"
    ratios: tuple = (4, 1, 1)

    def __post_init__(self):
        if self.length < 4 * self.period:
            raise ConfigurationError(f"length {self.length} is below 4 periods ({4 * self.period})")


def distance_kernel(distances: np.ndarray, length_scale: float = 2.0, cutoff: float = np.inf) -> np.ndarray:
    """Gain ``exp(-d / length_scale)``, zero beyond ``cutoff``; 1 on the diagonal."""
    g = np.exp(-np.asarray(distances) / length_scale)
    g[np.asarray(distances) > cutoff] = 0.0
    np.fill_diagonal(g, 1.0)
    return g


def spec_from_layout(sensors: list, length_scale: float = 2.0, cutoff: float = np.inf,
                     lag_per_unit: float = 1.5, events=()) -> NetworkSpec:
    """Couple sensors through the distance kernel; only flow sensors act as sources."""
    xy = np.array([[s.x, s.y] for s in sensors])
    dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
    gain = distance_kernel(dist, length_scale, cutoff)
    lags = np.rint(dist * lag_per_unit).astype(np.int64)
    np.fill_diagonal(lags, 0)
    for j, s in enumerate(sensors):
        if s.kind == "pressure":
            gain[:, j] = 0.0
            gain[j, j] = 1.0
    return NetworkSpec(sensors=list(sensors), coupling=gain, lags=lags, events=list(events))


def default_wds_spec() -> NetworkSpec:
    """18 sensors (F1-F11, P1-P7) around target F8 at the origin.

    F1/P1, F2/P2 and F3/P3 sit on booster-station outlets; F3/P3 is the
    nearest station.  F4 is one short pipe away from F8.  F5 is remote and
    only weakly coupled; F6 lies outside every coupling radius, so it carries
    nothing but its own disturbance.
    """
    layout = [
        ("F1", "flow", 7.0, 6.0, True), ("F2", "flow", -7.0, 6.0, True), ("F3", "flow", 2.0, 1.0, True),
        ("F4", "flow", 0.8, 0.0, False), ("F5", "flow", 9.0, -6.0, False), ("F6", "flow", -12.0, -10.0, False),
        ("F7", "flow", -2.0, 2.5, False), ("F8", "flow", 0.0, 0.0, False), ("F9", "flow", 3.0, -2.5, False),
        ("F10", "flow", -3.0, -1.5, False), ("F11", "flow", 1.5, 3.5, False),
        ("P1", "pressure", 7.0, 6.2, True), ("P2", "pressure", -7.0, 6.2, True), ("P3", "pressure", 2.0, 1.2, True),
        ("P4", "pressure", 0.5, -1.0, False), ("P5", "pressure", -1.0, 1.0, False),
        ("P6", "pressure", 4.0, 2.0, False), ("P7", "pressure", -4.0, -3.0, False),
    ]
    # the target is driven mostly by its neighbours; F4 is the dominant one
    own_std = {"F4": 2.0, "F8": 0.3, "F1": 1.5, "F2": 1.5, "F3": 1.5}
    # mains flow is smoothed by the pipe network; the isolated F6 is not
    own_ar = {"F4": 0.8, "F6": 0.0, "F5": 0.2}
    rng = np.random.default_rng(1848)
    sensors = []
    for sid, kind, x, y, station in layout:
        if kind == "flow":
            sensors.append(Sensor(sid, kind, x, y, station, base=float(rng.uniform(80, 160)),
                                  amplitude=float(rng.uniform(15, 40)), phase=float(rng.uniform(-0.4, 0.4)),
                                  innovation_std=own_std.get(sid, 1.0), innovation_ar=own_ar.get(sid, 0.5),
                                  mean_reversion=0.98))
        else:
            sensors.append(Sensor(sid, kind, x, y, station, base=float(rng.uniform(30, 45)), amplitude=0.0,
                                  innovation_std=0.3, innovation_ar=0.3, mean_reversion=1.0))
    spec = spec_from_layout(sensors, length_scale=2.0, cutoff=11.0, lag_per_unit=1.5)
    # pressure responds to flow at a much smaller scale than flow itself
    for i, s in enumerate(spec.sensors):
        if s.kind == "pressure":
            row = spec.coupling[i].copy()
            row[np.arange(spec.n) != i] *= 0.05
            spec.coupling[i] = row
    spec.validate()
    return spec


def daily_profile(sensor: Sensor, t: np.ndarray, period: int) -> np.ndarray:
    # phase from t mod period keeps the series exactly periodic in floating point
    angle = 2.0 * np.pi * (np.mod(t, period) / period) + sensor.phase
    return sensor.amplitude * (np.sin(angle) + 0.5 * np.sin(2.0 * angle + 0.3))


def generate_panel(spec: NetworkSpec, config: GeneratorConfig) -> SeriesPanel:
    """Sample one panel; fully determined by ``spec`` and ``config.seed``."""
    spec.validate()
    rng = np.random.default_rng(config.seed)
    n, L, period = spec.n, config.length, config.period
    pad = int(spec.lags.max()) if n else 0
    total = L + pad
    t_full = np.arange(total) - pad  # output step index of every padded sample

    events = list(spec.events)
    if config.events_per_day > 0:
        stations = [k for k, s in enumerate(spec.sensors) if s.station and s.kind == "flow"]
        n_events = rng.poisson(config.events_per_day * L / period) if stations else 0
        for _ in range(n_events):
            events.append(Event(int(rng.integers(0, L)), float(rng.normal(0.0, config.event_scale)),
                                int(rng.choice(stations))))

    eps = rng.standard_normal((n, total))
    u = np.zeros((n, total))
    for k, s in enumerate(spec.sensors):
        impulses = np.zeros(total)
        for ev in events:
            if ev.source == k:
                impulses[ev.time + pad] += ev.magnitude
        v = lfilter([1.0], [1.0, -s.innovation_ar], s.innovation_std * eps[k])
        u[k] = lfilter([1.0], [1.0, -s.mean_reversion], v + impulses)

    daily = np.stack([daily_profile(s, t_full, period) for s in spec.sensors])
    out = np.zeros((n, L))
    for i, si in enumerate(spec.sensors):
        out[i] = si.base
        for j, sj in enumerate(spec.sensors):
            g = spec.coupling[i, j]
            if g == 0.0:
                continue
            idx = np.arange(L) + pad - int(spec.lags[i, j])
            if i == j:
                out[i] += u[i, idx] + (daily[i, idx] if si.kind == "flow" else 0.0)
            elif si.kind == "flow":
                out[i] += g * u[j, idx]
            else:
                out[i] -= g * (daily[j, idx] + u[j, idx])

    noise = np.broadcast_to(np.asarray(config.noise_std, dtype=np.float64), (n,))
    out += noise[:, None] * rng.standard_normal((n, L))
    return make_panel(out, sensor_ids=spec.ids, start=config.start, ratios=config.ratios,
                      kinds=[s.kind for s in spec.sensors], cadence=CADENCE)


def lagged_dependency_spec(lag: int = 40, gain: float = 3.0, n_noise: int = 1) -> NetworkSpec:
    """A driver flow whose disturbance reaches the target ``lag`` steps later.

    Sensors: ``D`` (driver), ``Y`` (target, small own disturbance), then
    ``n_noise`` unrelated flow sensors.  Driver increments are strongly
    autocorrelated, so nearby encoder steps carry most of the signal.
    """
    sensors = [
        Sensor("D", "flow", amplitude=10.0, innovation_std=1.0, innovation_ar=0.8, mean_reversion=0.99),
        Sensor("Y", "flow", amplitude=10.0, phase=1.0, innovation_std=0.2, innovation_ar=0.0, mean_reversion=0.9),
    ]
    sensors += [Sensor(f"N{k + 1}", "flow", amplitude=10.0, phase=0.5 * k, innovation_std=1.0, innovation_ar=0.8,
                       mean_reversion=0.99) for k in range(n_noise)]
    n = len(sensors)
    coupling = np.eye(n)
    lags = np.zeros((n, n), dtype=np.int64)
    coupling[1, 0] = gain
    lags[1, 0] = lag
    return NetworkSpec(sensors, coupling, lags)


def persistent_target_spec(ar: float = 0.95) -> NetworkSpec:
    """Target ``Y`` whose increments follow a strongly persistent AR(1), plus one noise flow ``N``.

    After differencing, Y's residual is close to AR(1) with coefficient ``ar``,
    so the best h-step error grows like ``1 - ar**(2h)``.
    """
    if not 0.0 <= ar < 1.0:
        raise ConfigurationError(f"ar must lie in [0, 1), got {ar}")
    sensors = [
        Sensor("Y", "flow", amplitude=10.0, innovation_std=1.0, innovation_ar=ar, mean_reversion=1.0),
        Sensor("N", "flow", amplitude=10.0, phase=1.0, innovation_std=1.0, innovation_ar=0.5, mean_reversion=0.98),
    ]
    return NetworkSpec(sensors, np.eye(2), np.zeros((2, 2), dtype=np.int64))
