"""Neyman-Pearson thresholding by Monte Carlo, end to end.

Calibrates the detection threshold from PU-idle statistics at several
target false-alarm rates, verifies the empirical rates on fresh draws,
and compares the learned detector's ROC against energy detection.
"""

import warnings

import numpy as np

from senselab import dataset as ds
from senselab import detection as det
from senselab import training as tr
from senselab.mobility import ScenarioConfig
from senselab.model import ModelConfig, TieredModel

scenario = ScenarioConfig(area=(10.0, 10.0), v_min=1.0, v_max=1.5, alpha=2.0,
                          pt_dbm=-35.0, num_antennas=4, samples_per_period=32,
                          seq_len=4, num_su=2, reporting="imperfect",
                          sensing_fading_scale=(1.2, 0.8), seed=21)
config = ModelConfig(seq_len=4, h_pad=4, channels=3, num_su=2, embed_dim=8,
                     num_heads=2, su_layers=2, collab_layers=1,
                     encoder_mlp=(16, 8), head_mlp=(16, 8))
tcfg = tr.TrainConfig(lr=1e-3, batch_size=16, epochs=10, seed=21)

planes, labels, _ = ds.generate_planes(scenario, 320, h_pad=4)
model = TieredModel(config, seed=21)
_, stats = tr.train_stage1(planes, labels, model, tcfg)
tr.train_stage2(planes, labels, model, tcfg, stats)
print("trained a small detector for the demo\n")

# --- threshold rule --------------------------------------------------------
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    calib, _ = det._generate_pool(scenario, 1200, "h0", 901, 4, 3, 300)
    fresh, _ = det._generate_pool(scenario, 1200, "h0", 902, 4, 3, 300)
    table = det.ThresholdTable(det.model_statistics(model, calib, stats))
    fresh_stats = det.model_statistics(model, fresh, stats)

print("rank-rule thresholds from 1200 idle statistics, checked on 1200 fresh:")
print("  target pfa   threshold    empirical pfa")
for pfa in (0.05, 0.09, 0.1, 0.2):
    gamma = table.gamma(pfa)
    emp = float(np.mean(fresh_stats > gamma))
    print(f"    {pfa:.2f}      {gamma:9.4f}     {emp:.4f}")

# --- ROC comparison --------------------------------------------------------
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    test, test_labels = det._generate_pool(scenario, 600, "alternate", 903, 4, 3, 300)
    model_stats = det.model_statistics(model, test, stats)
    ed_stats = det.group_energy_statistic(test, scenario.num_antennas)
    ed_calib = det.group_energy_statistic(calib, scenario.num_antennas)

    model_roc, model_auc = det.roc_curve(
        det.model_statistics(model, calib, stats), model_stats[test_labels == 1])
    ed_roc, ed_auc = det.roc_curve(ed_calib, ed_stats[test_labels == 1])

print(f"\nAUC: learned detector {model_auc:.4f}, energy detector {ed_auc:.4f}")
print("ROC points at a few false-alarm targets (pfa: Pd_model / Pd_ed):")
points = {p: pd for p, pd in model_roc}
ed_points = {p: pd for p, pd in ed_roc}
for pfa in (0.01, 0.05, 0.09, 0.2, 0.3):
    print(f"  {pfa:.2f}:  {points[pfa]:.3f} / {ed_points[pfa]:.3f}")

gamma_op = table.gamma(det.OPERATING_PFA)
err, acc, pd, pfa_emp = det.sensing_metrics(
    det.decide(model_stats, gamma_op), test_labels)
print(f"\nat the 0.09 operating point: Pd {pd:.3f}, empirical pfa {pfa_emp:.3f}, "
      f"sensing error {err:.3f}, accuracy {acc:.3f}")
