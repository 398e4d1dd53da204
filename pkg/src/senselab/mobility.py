"""Mobile users, path loss, Rayleigh fading, and raw sensing signals.

A single licensed transmitter (PU) and S multi-antenna sensors (SUs) move
inside a rectangle under the random-waypoint model: wait out a pause,
pick a uniform destination and a uniform speed, travel in a straight
line, pause again on arrival.  One mobility step spans one sensing
period; positions and channel gains are frozen within a period.

Per period, each SU antenna observes either fading-scaled transmitter
signal plus local noise (PU active) or local noise alone, optionally
passed through an imperfect reporting channel toward the fusion centre:

    active:  y = h_r * (a * h * w + eta_s) + eta_c
    idle:    y = h_r * eta_s + eta_c

with ``a`` the path-loss amplitude at the current PU-SU distance, ``h``
and ``h_r`` per-antenna Rayleigh gains redrawn each period, ``w`` the
shared transmit waveform, and ``eta`` circular complex Gaussian noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, replace

import numpy as np

# substream tags: one numpy Generator per (seed, tag, index) triple so that
# datasets are identical no matter how generation work is divided
STREAM_MOBILITY = 0
STREAM_PERIOD = 1
STREAM_LABELS = 2
STREAM_INIT = 3
STREAM_TRAIN = 4
STREAM_EVAL = 5


def substream(seed, *path):
    """Independent, reproducible Generator for a namespaced purpose."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, path)])


@dataclass
class ScenarioConfig:
    """Physical and simulation constants; defaults match the standard setup."""

    area: tuple = (1000.0, 1000.0)       # metres (width, height)
    v_min: float = 20.0                  # m/s
    v_max: float = 25.0
    pause_s: float = 1e-3
    period_s: float = 1.0                # mobility advances one period per step
    num_su: int = 3                      # S
    num_antennas: int = 15               # M
    samples_per_period: int = 100        # N
    seq_len: int = 20                    # covariance matrices per sample
    pt_dbm: float = float(10.0 * np.log10(200.0))   # 200 mW transmitter
    alpha: float = 3.8                   # path-loss exponent
    beta: float = 10.0 ** 3.453          # path-loss constant
    n0_dbm_per_hz: float = -150.0
    bw_hz: float = 10e6
    sensing_fading_scale: tuple = ()     # per-SU Rayleigh scales, default all 1
    reporting_fading_scale: tuple = ()
    reporting: str = "perfect"           # or "imperfect"
    seed: int = 0

    def __post_init__(self):
        if not self.sensing_fading_scale:
            self.sensing_fading_scale = (1.0,) * self.num_su
        if not self.reporting_fading_scale:
            self.reporting_fading_scale = (1.0,) * self.num_su
        self.validate()

    def validate(self):
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        positive = {
            "area width": self.area[0], "area height": self.area[1],
            "v_min": self.v_min, "period_s": self.period_s,
            "num_su": self.num_su, "num_antennas": self.num_antennas,
            "samples_per_period": self.samples_per_period, "seq_len": self.seq_len,
            "beta": self.beta, "alpha": self.alpha, "bw_hz": self.bw_hz,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.pause_s < 0:
            raise ValueError("pause_s must be nonnegative")
        if self.reporting not in ("perfect", "imperfect"):
            raise ValueError(f"reporting must be 'perfect' or 'imperfect', got {self.reporting!r}")
        if len(self.sensing_fading_scale) != self.num_su:
            raise ValueError("sensing_fading_scale needs one entry per SU")
        if len(self.reporting_fading_scale) != self.num_su:
            raise ValueError("reporting_fading_scale needs one entry per SU")

    @property
    def noise_power_mw(self):
        """N0 * BW in linear milliwatts."""
        return 10.0 ** ((self.n0_dbm_per_hz + 10.0 * np.log10(self.bw_hz)) / 10.0)

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)

    def to_dict(self):
        d = asdict(self)
        d["area"] = list(self.area)
        d["sensing_fading_scale"] = list(self.sensing_fading_scale)
        d["reporting_fading_scale"] = list(self.reporting_fading_scale)
        return d

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MobilityState:
    position: tuple
    destination: tuple
    speed: float = 0.0
    pause_remaining: float = 0.0
    phase: str = "paused"  # "moving" | "paused"


@dataclass
class SignalMatrix:
    """Complex M x N received-sample matrix for one SU and one period."""

    entries: np.ndarray
    su_index: int
    period_index: int
    label: int


def initial_state(cfg, rng):
    """Uniform starting position; users begin by waiting out a pause."""
    pos = (rng.uniform(0.0, cfg.area[0]), rng.uniform(0.0, cfg.area[1]))
    return MobilityState(position=pos, destination=pos,
                         pause_remaining=cfg.pause_s, phase="paused")


def step_waypoint(state, dt, cfg, rng):
    """Advance one random-waypoint step of duration dt seconds.

    Paused users burn pause time and, once it expires, pick a uniform
    destination inside the area and a uniform speed (movement starts on
    the next step).  Moving users head straight for their destination;
    arrival within the step snaps to it and starts a new pause.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.phase == "paused":
        remaining = state.pause_remaining - dt
        if remaining > 0:
            return MobilityState(state.position, state.destination, 0.0, remaining, "paused")
        dest = (rng.uniform(0.0, cfg.area[0]), rng.uniform(0.0, cfg.area[1]))
        speed = rng.uniform(cfg.v_min, cfg.v_max)
        return MobilityState(state.position, dest, speed, 0.0, "moving")

    x, y = state.position
    dx, dy = state.destination[0] - x, state.destination[1] - y
    dist = float(np.hypot(dx, dy))
    travel = state.speed * dt
    if travel >= dist:
        return MobilityState(state.destination, state.destination,
                             0.0, cfg.pause_s, "paused")
    theta = np.arctan2(dy, dx)
    new_pos = (x + travel * np.cos(theta), y + travel * np.sin(theta))
    return MobilityState(new_pos, state.destination, state.speed, 0.0, "moving")


def simulate_trajectories(cfg, num_periods):
    """Positions of the PU and all SUs over num_periods sensing periods.

    Returns (pu_xy[T,2], su_xy[T,S,2]).  Driven by its own substream so
    trajectories do not depend on how signal generation is parallelized.
    """
    rng = substream(cfg.seed, STREAM_MOBILITY)
    users = [initial_state(cfg, rng) for _ in range(1 + cfg.num_su)]
    pu_xy = np.empty((num_periods, 2))
    su_xy = np.empty((num_periods, cfg.num_su, 2))
    for t in range(num_periods):
        users = [step_waypoint(u, cfg.period_s, cfg, rng) for u in users]
        pu_xy[t] = users[0].position
        for s in range(cfg.num_su):
            su_xy[t, s] = users[1 + s].position
    return pu_xy, su_xy


def received_power_dbm(pt_dbm, distance_m, alpha, beta):
    """Log-distance path loss: Pt - (10 log10(beta) + 10 alpha log10(d))."""
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return pt_dbm - (10.0 * np.log10(beta) + 10.0 * alpha * np.log10(distance_m))


def instantaneous_snr(pr_dbm, n0_dbm_per_hz, bw_hz):
    """Linear receive SNR: received power over total in-band noise power."""
    if bw_hz <= 0:
        raise ValueError("bandwidth must be positive")
    noise_dbm = n0_dbm_per_hz + 10.0 * np.log10(bw_hz)
    return 10.0 ** ((pr_dbm - noise_dbm) / 10.0)


def draw_channel_gain(scale, rng, size=None):
    """Circularly-symmetric complex gain; |h| Rayleigh with E|h|^2 = scale^2."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    std = scale / np.sqrt(2.0)
    return std * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def _complex_noise(variance_mw, rng, size):
    std = np.sqrt(variance_mw / 2.0)
    return std * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def generate_period(cfg, pu_pos, su_positions, pu_active, rng, period_index=0):
    """Raw received-signal matrices for every SU in one sensing period.

    The transmit waveform is one shared i.i.d. complex Gaussian draw of
    transmit-power variance; the per-SU path-loss amplitude brings its
    received power to the log-distance value at the current distance
    (times the squared sensing fading scale, the severity knob).  Under
    perfect reporting the fusion centre sees the SU signal untouched.
    """
    m, n = cfg.num_antennas, cfg.samples_per_period
    s_count = cfg.num_su
    noise_mw = cfg.noise_power_mw

    h_sense = np.empty((s_count, m), dtype=np.complex128)
    for s in range(s_count):
        h_sense[s] = draw_channel_gain(cfg.sensing_fading_scale[s], rng, m)
    waveform = _complex_noise(10.0 ** (cfg.pt_dbm / 10.0), rng, n)
    eta_s = _complex_noise(noise_mw, rng, (s_count, m, n))
    if cfg.reporting == "imperfect":
        h_report = np.empty((s_count, m), dtype=np.complex128)
        for s in range(s_count):
            h_report[s] = draw_channel_gain(cfg.reporting_fading_scale[s], rng, m)
        eta_c = _complex_noise(noise_mw, rng, n)
    else:
        h_report = np.ones((s_count, m), dtype=np.complex128)
        eta_c = np.zeros(n, dtype=np.complex128)

    out = []
    label = 1 if pu_active else 0
    for s in range(s_count):
        if pu_active:
            # far-field clamp: the log-distance law is not meant for d < 1 m
            d = max(float(np.hypot(pu_pos[0] - su_positions[s][0],
                                   pu_pos[1] - su_positions[s][1])), 1.0)
            pr_dbm = received_power_dbm(cfg.pt_dbm, d, cfg.alpha, cfg.beta)
            amp = 10.0 ** ((pr_dbm - cfg.pt_dbm) / 20.0)
            sensed = amp * h_sense[s][:, None] * waveform[None, :] + eta_s[s]
        else:
            sensed = eta_s[s]
        entries = h_report[s][:, None] * sensed + eta_c[None, :]
        out.append(SignalMatrix(entries=entries, su_index=s,
                                period_index=period_index, label=label))
    return out


def period_rng(seed, period_index):
    """Stream for one sensing period; identical across worker layouts."""
    return substream(seed, STREAM_PERIOD, period_index)
