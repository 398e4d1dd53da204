"""Likelihood-ratio detection, Monte-Carlo thresholds, and metrics.

The trained network emits class probabilities; the detector works with
the log-odds log j1 - log j0, a monotone transform of the likelihood
ratio that survives j0 -> 0.  Thresholds come from the empirical
distribution of the statistic on PU-idle (H0) data: sort the Q values
ascending and read off the element at rank round(Q * (1 - pfa)).  The
same machinery calibrates the energy-detection baseline, whose statistic
is the mean per-antenna power of a covariance sequence.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from .autodiff import Tensor
from .mobility import substream, STREAM_EVAL

OPERATING_PFA = 0.09


def default_pfa_grid():
    """0.01 .. 0.30 in steps of 0.01 (includes the 0.09 operating point)."""
    return tuple(np.round(np.arange(1, 31) * 0.01, 2))


def test_statistic(probs):
    """Log-odds of PU-active vs idle; monotone in the likelihood ratio."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    p = np.clip(p, 1e-12, 1.0)
    return np.log(p[..., 1]) - np.log(p[..., 0])


def statistic_from_logits(logits):
    """The same log-odds straight from pre-softmax scores.

    log j1 - log j0 = z1 - z0 (the log-sum-exp cancels), so this is the
    exact statistic without the float64 saturation that hits probability
    pairs once a logit gap passes ~36.
    """
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return z[..., 1] - z[..., 0]


class ThresholdTable:
    """Sorted H0 statistics with the rank-based threshold rule."""

    def __init__(self, h0_stats):
        self.stats = np.sort(np.asarray(h0_stats, dtype=np.float64))
        if self.stats.size < 1:
            raise ValueError("threshold table needs at least one H0 statistic")

    @property
    def size(self):
        return self.stats.size

    def gamma(self, pfa):
        """Threshold achieving (approximately) the target false-alarm rate."""
        q = self.stats.size
        if pfa > 0 and q < 1.0 / pfa:
            warnings.warn(f"only {q} H0 statistics for pfa={pfa}; "
                          "calibration will be coarse", stacklevel=2)
        index = int(np.floor(q * (1.0 - pfa) + 0.5))  # round half up, 1-based
        if index < 1 or index > q:
            warnings.warn(f"threshold rank {index} clamped into [1, {q}]", stacklevel=2)
            index = min(max(index, 1), q)
        return float(self.stats[index - 1])


def calibrate_threshold(h0_stats, pfa):
    return ThresholdTable(h0_stats).gamma(pfa)


def decide(stat, gamma):
    """1 (PU active) iff stat > gamma; ties decide idle, capping false alarms."""
    return (np.asarray(stat) > gamma).astype(int)


def roc_curve(h0_stats, h1_stats, pfa_grid=None):
    """ROC points and trapezoidal AUC from separate H0/H1 statistic pools.

    Thresholds follow the calibration rule on ``h0_stats`` for every grid
    pfa plus the 0 and 1 endpoints, so the curve is anchored and the AUC
    of a chance-level detector comes out near one half.
    """
    if len(h0_stats) == 0 or len(h1_stats) == 0:
        raise ValueError("roc_curve needs statistics under both hypotheses")
    grid = default_pfa_grid() if pfa_grid is None else tuple(pfa_grid)
    grid = sorted(set(grid) | {0.0, 1.0})
    table = ThresholdTable(h0_stats)
    h1 = np.asarray(h1_stats)
    points = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # endpoint ranks clamp by design
        for pfa in grid:
            gamma = table.gamma(pfa)
            pd = float(np.mean(h1 > gamma))
            points.append((float(pfa), pd))
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    auc = float(np.trapezoid(ys, xs))
    return points, auc


def sensing_metrics(decisions, labels):
    """(sensing_error, accuracy, Pd, Pfa) from paired decisions and truth."""
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape:
        raise ValueError("decisions and labels must align")
    h1 = labels == 1
    h0 = ~h1
    p_md = float(np.mean(decisions[h1] == 0)) if h1.any() else 0.0
    p_fa = float(np.mean(decisions[h0] == 1)) if h0.any() else 0.0
    accuracy = float(np.mean(decisions == labels))
    return (p_md + p_fa) / 2.0, accuracy, 1.0 - p_md, p_fa


def energy_statistic(planes, num_antennas):
    """Mean per-antenna power of each sequence, straight off raw planes."""
    return ds.sequence_traces(planes, num_antennas)


def group_energy_statistic(planes, num_antennas):
    """Fusion-centre energy detector: average the per-SU statistics."""
    return energy_statistic(planes, num_antennas).mean(axis=-1)


def model_statistics(model, planes, stats, batch_size=256):
    """Log-odds statistic of the group detector for every sample."""
    z = ds.apply_standardization(planes, stats)
    out = np.empty(len(z))
    with ad.no_grad():
        for start in range(0, len(z), batch_size):
            logits = []
            model.group_forward(z[start:start + batch_size], collect_logits=logits)
            stat = statistic_from_logits(logits[0])
            out[start:start + len(stat)] = stat
    return out


# ---------------------------------------------------------------------------
# full evaluation sweep
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    pfa_grid: tuple = field(default_factory=default_pfa_grid)
    n0_list: tuple = (-150.0,)
    calib_size: int = 5000       # H0 pool for thresholds
    test_size: int = 1000        # balanced fresh test pool
    baseline_ed: bool = True
    chunk: int = 250             # generation/evaluation chunk, memory bound
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["pfa_grid"] = list(self.pfa_grid)
        d["n0_list"] = list(self.n0_list)
        return d

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass
class DetectionReport:
    """Everything the evaluation sweep measured, ready for CSV/JSON."""

    entries: list = field(default_factory=list)    # per (method, n0, pfa)
    summaries: list = field(default_factory=list)  # per (method, n0)
    rocs: dict = field(default_factory=dict)       # (method, n0) -> points

    def add_entry(self, method, n0, pfa, gamma, pd, pfa_emp):
        for prob in (pd, pfa_emp):
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"probability {prob} outside [0, 1]")
        self.entries.append({"method": method, "n0_dbm_per_hz": n0,
                             "pfa_target": pfa, "gamma": gamma,
                             "pd": pd, "pfa_empirical": pfa_emp})

    def add_summary(self, method, n0, auc, operating):
        self.summaries.append({"method": method, "n0_dbm_per_hz": n0,
                               "auc": auc, **operating})

    def pd_at(self, method, n0, pfa=OPERATING_PFA):
        for e in self.entries:
            if (e["method"], e["n0_dbm_per_hz"], e["pfa_target"]) == (method, n0, pfa):
                return e["pd"]
        raise KeyError((method, n0, pfa))

    def auc(self, method, n0):
        for s in self.summaries:
            if (s["method"], s["n0_dbm_per_hz"]) == (method, n0):
                return s["auc"]
        raise KeyError((method, n0))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "n0_dbm_per_hz", "pfa_target", "gamma",
                             "pd", "pfa_empirical"])
            for e in self.entries:
                writer.writerow([e["method"], repr(e["n0_dbm_per_hz"]),
                                 repr(e["pfa_target"]), repr(e["gamma"]),
                                 repr(e["pd"]), repr(e["pfa_empirical"])])

    def roc_csv(self, path, method, n0):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["pfa", "pd"])
            for pfa, pd in self.rocs[(method, n0)]:
                writer.writerow([repr(pfa), repr(pd)])

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump({"summaries": self.summaries, "entries": self.entries},
                      f, indent=2, sort_keys=True)
            f.write("\n")


def _generate_pool(scenario, count, label_mode, seed, h_pad, channels, chunk):
    """Chunked generation; one trajectory pass, bounded peak memory."""
    lam = scenario.seq_len
    pu_xy, su_xy = ds.simulate_span(scenario.with_overrides(seed=seed), 0, count * lam)
    pieces, labels = [], []
    for start in range(0, count, chunk):
        n = min(chunk, count - start)
        sl = slice(start * lam, (start + n) * lam)
        planes, labs, _ = ds.generate_planes(
            scenario, n, h_pad=h_pad, channels=channels, label_mode=label_mode,
            seed=seed, start_period=start * lam,
            trajectories=(pu_xy[sl], su_xy[sl]))
        pieces.append(planes)
        labels.append(labs)
    return np.concatenate(pieces), np.concatenate(labels)


def evaluate_detector(model, standardization, scenario, eval_cfg: EvalConfig,
                      h_pad=None, channels=None):
    """Calibrate and score the model (and ED baseline) across noise levels.

    For every noise density in ``n0_list``: draw a fresh H0 calibration
    pool and a fresh balanced test pool, calibrate thresholds for every
    pfa on the grid, and record Pd, empirical false alarm, ROC and AUC,
    plus accuracy/sensing error at the 0.09 operating point.
    """
    cfg = model.config
    h_pad = cfg.h_pad if h_pad is None else h_pad
    channels = cfg.channels if channels is None else channels
    report = DetectionReport()

    for i, n0 in enumerate(eval_cfg.n0_list):
        scn = scenario.with_overrides(n0_dbm_per_hz=float(n0))
        calib_seed = _derived_seed(eval_cfg.seed, 1, i)
        test_seed = _derived_seed(eval_cfg.seed, 2, i)
        calib_planes, _ = _generate_pool(scn, eval_cfg.calib_size, "h0",
                                         calib_seed, h_pad, channels, eval_cfg.chunk)
        test_planes, test_labels = _generate_pool(scn, eval_cfg.test_size, "alternate",
                                                  test_seed, h_pad, channels,
                                                  eval_cfg.chunk)

        methods = {"model": (
            model_statistics(model, calib_planes, standardization, eval_cfg.chunk),
            model_statistics(model, test_planes, standardization, eval_cfg.chunk))}
        if eval_cfg.baseline_ed:
            methods["ed"] = (group_energy_statistic(calib_planes, scn.num_antennas),
                             group_energy_statistic(test_planes, scn.num_antennas))

        for method, (calib_stats, test_stats) in methods.items():
            table = ThresholdTable(calib_stats)
            h0_test = test_stats[test_labels == 0]
            h1_test = test_stats[test_labels == 1]
            points, auc = roc_curve(calib_stats, h1_test, eval_cfg.pfa_grid)
            report.rocs[(method, float(n0))] = points
            for pfa in eval_cfg.pfa_grid:
                gamma = table.gamma(pfa)
                pd = float(np.mean(h1_test > gamma))
                pfa_emp = float(np.mean(h0_test > gamma))
                report.add_entry(method, float(n0), float(pfa), gamma, pd, pfa_emp)
            gamma_op = table.gamma(OPERATING_PFA)
            err, acc, pd_op, pfa_op = sensing_metrics(
                decide(test_stats, gamma_op), test_labels)
            report.add_summary(method, float(n0), auc, {
                "operating_pfa": OPERATING_PFA, "pd_at_operating": pd_op,
                "pfa_at_operating": pfa_op, "sensing_error": err,
                "accuracy": acc})
    return report


def _derived_seed(seed, *path):
    return int(substream(seed, STREAM_EVAL, *path).integers(0, 2 ** 62))
