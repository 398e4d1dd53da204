"""Threshold calibration, decisions, ROC construction, and metrics."""

import warnings

import numpy as np
import pytest

from senselab import detection as det
from senselab.autodiff import Tensor
from senselab.dataset import generate_planes
from senselab.mobility import ScenarioConfig
from senselab.model import ModelConfig, TieredModel


class TestStatistic:
    def test_even_odds_zero(self):
        assert det.test_statistic(np.array([[0.5, 0.5]]))[0] == 0.0

    def test_log_nine(self):
        stat = det.test_statistic(np.array([[0.1, 0.9]]))[0]
        assert stat == pytest.approx(np.log(9.0))

    def test_strictly_increasing_in_j1(self):
        j1 = np.linspace(0.01, 0.99, 99)
        probs = np.stack([1.0 - j1, j1], axis=-1)
        stats = det.test_statistic(probs)
        assert np.all(np.diff(stats) > 0)

    def test_degenerate_probs_stay_finite(self):
        stats = det.test_statistic(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.all(np.isfinite(stats))

    def test_accepts_tensor(self):
        assert det.test_statistic(Tensor([[0.5, 0.5]]))[0] == 0.0

    def test_logit_path_matches_probability_path(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(50, 2)) * 3.0
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        probs = e / e.sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(det.statistic_from_logits(logits),
                                   det.test_statistic(probs), atol=1e-9)

    def test_logit_path_survives_saturation(self):
        # a logit gap of 200 saturates probabilities to exactly (0, 1);
        # the logit-difference statistic keeps the ordering
        logits = np.array([[0.0, 200.0], [0.0, 300.0]])
        stats = det.statistic_from_logits(logits)
        assert stats[1] > stats[0]


class TestThresholdTable:
    def test_rank_rule_examples(self):
        table = det.ThresholdTable(np.arange(1.0, 101.0))
        assert table.gamma(0.1) == 90.0
        assert table.gamma(0.5) == 50.0

    def test_gamma_non_increasing_in_pfa(self):
        rng = np.random.default_rng(0)
        table = det.ThresholdTable(rng.normal(size=4000))
        grid = np.linspace(0.01, 0.99, 50)
        gammas = [table.gamma(p) for p in grid]
        assert np.all(np.diff(gammas) <= 0)

    def test_monte_carlo_calibration_accuracy(self):
        rng = np.random.default_rng(7)
        table = det.ThresholdTable(rng.normal(size=5000))
        fresh = rng.normal(size=5000)
        for pfa in (0.05, 0.1, 0.2):
            gamma = table.gamma(pfa)
            emp = np.mean(fresh > gamma)
            assert abs(emp - pfa) <= 0.02

    def test_small_pool_warns(self):
        table = det.ThresholdTable(np.arange(10.0))
        with pytest.warns(UserWarning):
            table.gamma(0.01)

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            det.ThresholdTable([])

    def test_calibrate_threshold_helper(self):
        assert det.calibrate_threshold(np.arange(1.0, 101.0), 0.1) == 90.0


class TestDecide:
    def test_tie_decides_idle(self):
        assert det.decide(5.0, 5.0) == 0

    def test_just_above_decides_active(self):
        assert det.decide(5.0 + 1e-12, 5.0) == 1

    def test_monotone_in_statistic(self):
        stats = np.linspace(-1.0, 1.0, 100)
        decisions = det.decide(stats, 0.0)
        assert np.all(np.diff(decisions) >= 0)


class TestRoc:
    def test_perfect_separation(self):
        h0 = np.linspace(0.0, 1.0, 500)
        h1 = np.linspace(2.0, 3.0, 500)
        points, auc = det.roc_curve(h0, h1)
        assert auc == 1.0
        assert all(pd == 1.0 for _, pd in points)

    def test_chance_level(self):
        rng = np.random.default_rng(12)
        h0 = rng.normal(size=4000)
        h1 = rng.normal(size=4000)
        _, auc = det.roc_curve(h0, h1)
        assert auc == pytest.approx(0.5, abs=0.05)

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(4)
        points, _ = det.roc_curve(rng.normal(size=2000),
                                  rng.normal(size=2000) + 0.5)
        pds = [pd for _, pd in points]
        assert np.all(np.diff(pds) >= 0)

    def test_monotone_transform_invariance(self):
        # log-odds and the raw probability ratio induce identical ROCs
        rng = np.random.default_rng(3)
        j1_h0 = rng.beta(2, 5, size=3000)
        j1_h1 = rng.beta(5, 2, size=3000)

        def ratio(j1):
            return j1 / (1.0 - j1)

        def logodds(j1):
            return np.log(j1) - np.log(1.0 - j1)

        pts_ratio, auc_ratio = det.roc_curve(ratio(j1_h0), ratio(j1_h1))
        pts_lo, auc_lo = det.roc_curve(logodds(j1_h0), logodds(j1_h1))
        assert pts_ratio == pts_lo and auc_ratio == auc_lo

    def test_needs_both_classes(self):
        with pytest.raises(ValueError):
            det.roc_curve([], [1.0])


class TestSensingMetrics:
    def test_all_correct(self):
        err, acc, pd, pfa = det.sensing_metrics([0, 1, 0, 1], [0, 1, 0, 1])
        assert (err, acc, pd, pfa) == (0.0, 1.0, 1.0, 0.0)

    def test_always_idle_on_balanced(self):
        err, acc, pd, pfa = det.sensing_metrics([0, 0, 0, 0], [0, 1, 0, 1])
        assert (err, acc, pd, pfa) == (0.5, 0.5, 0.0, 0.0)

    def test_random_decisions_near_half(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 2, size=20_000)
        decisions = rng.integers(0, 2, size=20_000)
        _, acc, _, _ = det.sensing_metrics(decisions, labels)
        assert acc == pytest.approx(0.5, abs=0.02)


class TestEnergyDetector:
    def test_pure_noise_statistic(self):
        cfg = ScenarioConfig(num_antennas=4, samples_per_period=64, seq_len=4,
                             num_su=2, seed=31)
        planes, _, _ = generate_planes(cfg, 40, h_pad=4, label_mode="h0")
        stat = det.group_energy_statistic(planes, 4)
        assert stat.mean() == pytest.approx(cfg.noise_power_mw, rel=0.05)

    def test_quadratic_scaling(self):
        cfg = ScenarioConfig(num_antennas=4, samples_per_period=16, seq_len=2,
                             num_su=2, seed=32)
        planes, _, _ = generate_planes(cfg, 4, h_pad=4, label_mode="h0")
        base = det.group_energy_statistic(planes, 4)
        # scaling the signal by c scales every covariance entry by c^2
        scaled = det.group_energy_statistic(planes * 9.0, 4)
        np.testing.assert_allclose(scaled, 9.0 * base, rtol=1e-12)

    def test_zero_db_snr_doubles_statistic(self):
        from senselab.dataset import cm_to_planes, covariance
        from senselab.mobility import generate_period, substream

        cfg = ScenarioConfig(num_antennas=4, samples_per_period=64, seq_len=4,
                             num_su=2, seed=33)
        noise_dbm = cfg.n0_dbm_per_hz + 10.0 * np.log10(cfg.bw_hz)
        log_d = (cfg.pt_dbm - noise_dbm - 10.0 * np.log10(cfg.beta)) / (10.0 * cfg.alpha)
        d = 10.0 ** log_d  # exact 0 dB receive SNR distance
        su_pos = [(500.0 + d, 500.0)] * cfg.num_su
        rng = substream(33, 0)
        stats = {0: [], 1: []}
        for active in (0, 1):
            for _ in range(60):
                planes = np.stack([
                    np.stack([cm_to_planes(covariance(mat).entries, 4)
                              for mat in generate_period(cfg, (500.0, 500.0),
                                                         su_pos, bool(active), rng)])
                    for _ in range(cfg.seq_len)], axis=1)
                stats[active].append(det.group_energy_statistic(planes[None], 4)[0])
        ratio = np.mean(stats[1]) / np.mean(stats[0])
        assert ratio == pytest.approx(2.0, rel=0.25)


@pytest.fixture(scope="module")
def tiny_eval():
    scenario = ScenarioConfig(area=(8.0, 8.0), v_min=1.0, v_max=1.5,
                              alpha=2.0, pt_dbm=-25.0, num_antennas=4,
                              samples_per_period=16, seq_len=2, num_su=2,
                              seed=41)
    mc = ModelConfig(seq_len=2, h_pad=4, channels=3, num_su=2, embed_dim=8,
                     num_heads=2, su_layers=1, collab_layers=1,
                     encoder_mlp=(16, 8), head_mlp=(16, 8))
    model = TieredModel(mc, seed=1)
    stats = {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}
    ecfg = det.EvalConfig(pfa_grid=(0.05, 0.09, 0.2), n0_list=(-150.0, -145.0),
                          calib_size=60, test_size=40, chunk=25, seed=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # tiny pools warn about coarse pfa
        report = det.evaluate_detector(model, stats, scenario, ecfg)
    return report, ecfg


class TestEvaluateDetector:

    def test_report_covers_methods_and_noise_levels(self, tiny_eval):
        report, ecfg = tiny_eval
        keys = {(e["method"], e["n0_dbm_per_hz"]) for e in report.entries}
        assert keys == {("model", -150.0), ("model", -145.0),
                        ("ed", -150.0), ("ed", -145.0)}
        assert len(report.entries) == 4 * len(ecfg.pfa_grid)
        assert len(report.summaries) == 4

    def test_probabilities_in_range(self, tiny_eval):
        report, _ = tiny_eval
        for e in report.entries:
            assert 0.0 <= e["pd"] <= 1.0 and 0.0 <= e["pfa_empirical"] <= 1.0
        for s in report.summaries:
            assert 0.0 <= s["auc"] <= 1.0

    def test_ed_baseline_informative_on_hot_scenario(self, tiny_eval):
        report, _ = tiny_eval
        assert report.auc("ed", -150.0) > 0.9
        # the untrained model is a fixed random projection: any AUC is legal,
        # it just has to be a probability
        assert 0.0 <= report.auc("model", -150.0) <= 1.0

    def test_csv_and_json_emission(self, tiny_eval, tmp_path):
        report, _ = tiny_eval
        report.to_csv(tmp_path / "d.csv")
        report.to_json(tmp_path / "d.json")
        report.roc_csv(tmp_path / "roc.csv", "ed", -150.0)
        header = (tmp_path / "d.csv").read_text().splitlines()[0]
        assert header == "method,n0_dbm_per_hz,pfa_target,gamma,pd,pfa_empirical"
        assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "pfa,pd"

    def test_lookup_helpers(self, tiny_eval):
        report, _ = tiny_eval
        assert report.pd_at("ed", -150.0, 0.09) == report.entries[
            [i for i, e in enumerate(report.entries)
             if e["method"] == "ed" and e["n0_dbm_per_hz"] == -150.0
             and e["pfa_target"] == 0.09][0]]["pd"]
