"""Covariance-sequence datasets: build, standardize, persist.

Raw M x N signal matrices are compressed into M x M sample covariance
matrices, grouped into non-overlapping length-``lam`` sequences sharing
one PU-state label, converted to real channel planes (real part,
imaginary part, magnitude) zero-padded to H x H, and stored in a binary
container with a JSON header.  Planes are stored unstandardized; the
training code computes per-channel statistics on its train split and
carries them in the model checkpoint.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import mobility
from .mobility import ScenarioConfig, SignalMatrix

_MAGIC = b"SENSELAB-DS\x00"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Container bytes do not parse as a dataset."""


class DatasetVersionError(ValueError):
    """Container is valid but was built from a different configuration."""


@dataclass
class CovarianceMatrix:
    entries: np.ndarray          # complex M x M
    period_index: int
    su_index: int
    label: int


@dataclass
class SampleSequence:
    """lam consecutive covariance matrices from one SU, one shared label."""

    cms: list
    label: int


@dataclass
class CssSample:
    """Aligned per-SU sequences sharing a single PU-state label."""

    per_su: list

    @property
    def label(self):
        return self.per_su[0].label


def covariance(sig: SignalMatrix) -> CovarianceMatrix:
    """Sample covariance (1/N) Y Y^H of one received-signal matrix."""
    y = sig.entries
    n = y.shape[1]
    if n < 1:
        raise ValueError("signal matrix needs at least one sample column")
    r = (y @ y.conj().T) / n
    return CovarianceMatrix(entries=r, period_index=sig.period_index,
                            su_index=sig.su_index, label=sig.label)


def assemble_sequences(cms, lam):
    """Group a label-ordered CM stream into length-lam sequences.

    Consecutive non-overlapping blocks of lam matrices become one
    sequence each; a trailing partial block is dropped.  Labels must be
    constant inside a block (the generator arranges PU state that way).
    """
    cms = list(cms)
    out = []
    for start in range(0, len(cms) - lam + 1, lam):
        block = cms[start:start + lam]
        labels = {c.label for c in block}
        if len(labels) != 1:
            raise ValueError(f"mixed labels inside block starting at {start}: {sorted(labels)}")
        out.append(SampleSequence(cms=block, label=block[0].label))
    return out


def cm_to_planes(entries, h_pad, channels=3):
    """Zero-pad one complex CM to h_pad and split into real planes."""
    m = entries.shape[0]
    if m > h_pad:
        raise ValueError(f"cannot pad {m}x{m} covariance into {h_pad}x{h_pad} planes")
    padded = np.zeros((h_pad, h_pad), dtype=np.complex128)
    padded[:m, :m] = entries
    planes = [padded.real, padded.imag]
    if channels == 3:
        planes.append(np.abs(padded))
    elif channels != 2:
        raise ValueError("channels must be 2 (real, imag) or 3 (real, imag, magnitude)")
    return np.stack(planes, axis=-1)


def to_channel_planes(seq: SampleSequence, h_pad, channels=3):
    """Stack one sequence's CMs into a (lam, H, H, C) real tensor."""
    return np.stack([cm_to_planes(c.entries, h_pad, channels) for c in seq.cms])


def compute_standardization(planes):
    """Per-channel mean/std over a training array of any leading shape."""
    flat = planes.reshape(-1, planes.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return {"mean": mean.tolist(), "std": std.tolist()}


def apply_standardization(planes, stats):
    mean = np.asarray(stats["mean"], dtype=np.float64)
    std = np.asarray(stats["std"], dtype=np.float64)
    return (planes - mean) / std


# ---------------------------------------------------------------------------
# end-to-end generation
# ---------------------------------------------------------------------------

def _block_labels(num_samples, label_mode, seed):
    if label_mode == "alternate":
        return np.arange(num_samples, dtype=np.uint8) % 2
    if label_mode == "h0":
        return np.zeros(num_samples, dtype=np.uint8)
    if label_mode == "h1":
        return np.ones(num_samples, dtype=np.uint8)
    if label_mode == "random":
        rng = mobility.substream(seed, mobility.STREAM_LABELS)
        return rng.integers(0, 2, size=num_samples).astype(np.uint8)
    raise ValueError(f"unknown label_mode {label_mode!r}")


def generate_planes(cfg: ScenarioConfig, num_samples, h_pad=None, channels=3,
                    label_mode="alternate", seed=None, start_period=0,
                    trajectories=None):
    """Simulate num_samples CSS samples and return plane tensors.

    Returns (planes[K,S,lam,H,H,C], labels[K], period_start[K]).  The PU
    state is held constant inside each lam-period block; mobility runs
    continuously underneath.  Every period draws from its own seed
    substream, so results do not depend on chunking.  Callers chunking a
    long run can pass precomputed ``trajectories`` (pu_xy, su_xy) slices
    covering [start_period, start_period + num_samples * lam).
    """
    seed = cfg.seed if seed is None else seed
    lam, s_count = cfg.seq_len, cfg.num_su
    h_pad = cfg.num_antennas if h_pad is None else h_pad
    total_periods = num_samples * lam
    if trajectories is None:
        pu_xy, su_xy = simulate_span(cfg, start_period, total_periods)
    else:
        pu_xy, su_xy = trajectories
        if len(pu_xy) < total_periods:
            raise ValueError("trajectory slice shorter than the requested span")
    labels = _block_labels(num_samples, label_mode, seed)

    planes = np.empty((num_samples, s_count, lam, h_pad, h_pad, channels))
    for u in range(num_samples):
        active = bool(labels[u])
        for t in range(lam):
            local = u * lam + t
            period = start_period + local
            rng = mobility.period_rng(seed, period)
            mats = mobility.generate_period(cfg, pu_xy[local], su_xy[local],
                                            active, rng, period_index=period)
            for s, mat in enumerate(mats):
                planes[u, s, t] = cm_to_planes(covariance(mat).entries, h_pad, channels)
    period_start = start_period + np.arange(num_samples, dtype=np.int64) * lam
    return planes, labels, period_start


def simulate_span(cfg, start_period, count):
    """Trajectory slice covering [start_period, start_period + count)."""
    pu_xy, su_xy = mobility.simulate_trajectories(cfg, start_period + count)
    return pu_xy[start_period:], su_xy[start_period:]


def generate_css_samples(cfg: ScenarioConfig, num_samples, label_mode="alternate",
                         seed=None, start_period=0):
    """Object-level pipeline: CssSamples with real CovarianceMatrix lists."""
    seed = cfg.seed if seed is None else seed
    lam = cfg.seq_len
    total = num_samples * lam
    pu_xy, su_xy = simulate_span(cfg, start_period, total)
    labels = _block_labels(num_samples, label_mode, seed)
    out = []
    for u in range(num_samples):
        active = bool(labels[u])
        per_su_cms = [[] for _ in range(cfg.num_su)]
        for t in range(lam):
            local = u * lam + t
            period = start_period + local
            rng = mobility.period_rng(seed, period)
            mats = mobility.generate_period(cfg, pu_xy[local], su_xy[local],
                                            active, rng, period_index=period)
            for s, mat in enumerate(mats):
                per_su_cms[s].append(covariance(mat))
        out.append(CssSample(per_su=[SampleSequence(cms=cms, label=int(labels[u]))
                                     for cms in per_su_cms]))
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_dataset(path, cfg: ScenarioConfig, planes, labels, period_start,
                 h_pad=None, channels=None, label_mode="alternate", extra=None):
    """Write the binary container: magic, JSON header, raw arrays."""
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    period_start = np.ascontiguousarray(period_start, dtype=np.int64)
    k, s_count, lam, h1, h2, c = planes.shape
    header = {
        "format_version": FORMAT_VERSION,
        "scenario": cfg.to_dict(),
        "scenario_hash": cfg.content_hash(),
        "num_samples": int(k),
        "S": int(s_count),
        "M": int(cfg.num_antennas),
        "N": int(cfg.samples_per_period),
        "lam": int(lam),
        "H": int(h1),
        "channels": int(c),
        "label_mode": label_mode,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        f.write(planes.tobytes())
        f.write(labels.tobytes())
        f.write(period_start.tobytes())
    return header


def load_dataset(path, expected_scenario_hash=None, mmap=False):
    """Read a container back; returns (header, planes, labels, period_start).

    Raises DatasetFormatError on malformed/truncated bytes and
    DatasetVersionError when the stored scenario hash differs from
    ``expected_scenario_hash``.
    """
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DatasetFormatError(f"{path}: not a senselab dataset container")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise DatasetFormatError(f"{path}: truncated header length")
        hlen = int(np.frombuffer(raw_len, dtype=np.uint32)[0])
        blob = f.read(hlen)
        if len(blob) != hlen:
            raise DatasetFormatError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DatasetFormatError(f"{path}: header is not valid JSON") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise DatasetFormatError(f"{path}: unsupported format version")
        if expected_scenario_hash is not None and header["scenario_hash"] != expected_scenario_hash:
            raise DatasetVersionError(
                f"{path}: scenario hash {header['scenario_hash']} does not match "
                f"expected {expected_scenario_hash}")

        k = header["num_samples"]
        shape = (k, header["S"], header["lam"], header["H"], header["H"], header["channels"])
        n_planes = int(np.prod(shape))
        offset = f.tell()
        f.seek(0, 2)
        available = f.tell() - offset
        expected = n_planes * 8 + k * 1 + k * 8
        if available != expected:
            raise DatasetFormatError(
                f"{path}: payload is {available} bytes, header promises {expected}")

    if mmap:
        planes = np.memmap(path, dtype=np.float64, mode="r", offset=offset, shape=shape)
        off2 = offset + n_planes * 8
        labels = np.fromfile(path, dtype=np.uint8, count=k, offset=off2)
        period_start = np.fromfile(path, dtype=np.int64, count=k, offset=off2 + k)
    else:
        with open(path, "rb") as f:
            f.seek(offset)
            planes = np.fromfile(f, dtype=np.float64, count=n_planes).reshape(shape)
            labels = np.fromfile(f, dtype=np.uint8, count=k)
            period_start = np.fromfile(f, dtype=np.int64, count=k)
    return header, planes, labels, period_start


def export_index_csv(path, header, labels, period_start):
    """Human-readable index: one row per (sample, SU) sequence."""
    lam = header["lam"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample", "su", "label", "period_start", "period_end"])
        for u, (lab, p0) in enumerate(zip(labels, period_start)):
            for s in range(header["S"]):
                writer.writerow([u, s, int(lab), int(p0), int(p0) + lam - 1])


def sequence_traces(planes, num_antennas):
    """Per-sequence mean per-antenna power from raw (unstandardized) planes.

    The diagonal of the real plane is the CM diagonal (covariances are
    Hermitian), so the trace survives the plane encoding.  Accepts
    (..., lam, H, H, C) and reduces the trailing four axes to a scalar.
    """
    diag = np.einsum("...iic->...ic", planes[..., :1])[..., 0]
    trace = diag[..., :num_antennas].sum(axis=-1)
    return trace.mean(axis=-1) / num_antennas
