"""Closed-form complexity evaluators, FLOPs walker, and latency bench."""

from dataclasses import asdict, replace

import numpy as np
import pytest

from senselab import complexity as cx
from senselab.mobility import ScenarioConfig
from senselab.model import ModelConfig, TieredModel


def unit_inputs():
    fields = {name: 1 for name in asdict(cx.ComplexityInputs())}
    return cx.ComplexityInputs(**fields)


class TestClosedForms:
    def test_cnn_lstm_unit_value(self):
        assert cx.complexity_cnn_lstm(unit_inputs()) == 11

    def test_3dcnn_unit_value(self):
        assert cx.complexity_3dcnn(unit_inputs()) == 4

    def test_two_tier_unit_value(self):
        assert cx.complexity_two_tier(unit_inputs()) == 4

    def test_cnn_lstm_lambda_scales_first_two_terms(self):
        base = unit_inputs()
        doubled = replace(base, lam=2)
        # conv (1) and lstm (8) double; the dense tail (2) stays
        assert cx.complexity_cnn_lstm(doubled) == 2 * (1 + 8) + 2

    def test_3dcnn_lambda_linearity(self):
        i1 = cx.ComplexityInputs()
        i2 = replace(i1, lam=2 * i1.lam)
        conv1 = cx.complexity_3dcnn(i1) - (i1.c3_n_f2 * i1.c3_d_fc1
                                           + i1.c3_d_fc1 * i1.c3_d_fc2)
        conv2 = cx.complexity_3dcnn(i2) - (i1.c3_n_f2 * i1.c3_d_fc1
                                           + i1.c3_d_fc1 * i1.c3_d_fc2)
        assert conv2 == 2 * conv1

    def test_two_tier_symmetric_in_tier_swap(self):
        a = cx.ComplexityInputs(l1=3, l2=7, h_att1=2, h_att2=8,
                                d_emb1=16, d_emb2=32, d_fc1=10, d_fc2=20)
        b = cx.ComplexityInputs(l1=7, l2=3, h_att1=8, h_att2=2,
                                d_emb1=32, d_emb2=16, d_fc1=20, d_fc2=10)
        assert cx.complexity_two_tier(a) == cx.complexity_two_tier(b)

    @pytest.mark.parametrize("fn", [cx.complexity_cnn_lstm, cx.complexity_3dcnn,
                                    cx.complexity_two_tier])
    def test_monotone_in_every_input(self, fn):
        base = cx.ComplexityInputs()
        v0 = fn(base)
        for name in asdict(base):
            bumped = replace(base, **{name: getattr(base, name) + 1})
            assert fn(bumped) >= v0, f"not monotone in {name}"

    def test_nonpositive_inputs_rejected(self):
        with pytest.raises(ValueError):
            cx.complexity_cnn_lstm(replace(cx.ComplexityInputs(), lam=0))

    def test_standard_config_magnitudes(self):
        # informational comparison: same order of magnitude as the
        # published totals, no exact-match requirement
        i = cx.ComplexityInputs()
        assert 1e6 < cx.complexity_cnn_lstm(i) < 1e8
        assert 1e7 < cx.complexity_3dcnn(i) < 1e9
        assert 1e6 < cx.complexity_two_tier(i) < 1e8


class TestFlopsWalker:
    def test_patch_embedding_two_channel_reference_exact(self):
        config = ModelConfig(channels=2)
        breakdown = cx.count_model_flops(config)
        assert breakdown.row_value("su", "Patch Embedding") == 245_760

    def test_layer_norm_and_head_match_reference(self):
        breakdown = cx.count_model_flops(ModelConfig())
        assert breakdown.row_value("su", "Layer Normalization") == 24_576
        assert breakdown.row_value("su", "MLP Head") == 11_392

    def test_totals_equal_sum_of_parts(self):
        breakdown = cx.count_model_flops(ModelConfig())
        for tier, layers in (("su", 5), ("col", 4)):
            rows = {r["layer"]: r["flops"] for r in breakdown.tier_rows(tier)}
            expected = (rows["Patch Embedding"]
                        + rows["Total FLOPs for Encoder Layer"]
                        + rows["Sequence Pooling"] + rows["MLP Head"])
            assert rows["Total FLOPs"] == expected
            assert rows["Total FLOPs for Encoder Layer"] == layers * (
                rows["MSA"] + rows["MLP in Encoder"] + rows["Layer Normalization"])
        assert breakdown.total_flops == (breakdown.tier_total("su")
                                         + breakdown.tier_total("col"))

    def test_zero_layer_config_only_embed_pool_head(self):
        config = ModelConfig(su_layers=0, collab_layers=0)
        breakdown = cx.count_model_flops(config)
        for tier in ("su", "col"):
            rows = {r["layer"]: r["flops"] for r in breakdown.tier_rows(tier)}
            assert rows["Total FLOPs for Encoder Layer"] == 0
            assert rows["Total FLOPs"] == (rows["Patch Embedding"]
                                           + rows["Sequence Pooling"]
                                           + rows["MLP Head"])

    def test_reference_deltas_present_for_standard_config(self):
        breakdown = cx.count_model_flops(ModelConfig())
        msa = [r for r in breakdown.tier_rows("su") if r["layer"] == "MSA"][0]
        assert msa["reference"] == 1_376_256
        assert msa["delta"] == msa["flops"] - 1_376_256

    def test_param_split_reported(self):
        breakdown = cx.count_model_flops(ModelConfig())
        assert breakdown.params["total"] == (breakdown.params["su"]
                                             + breakdown.params["col"])
        model = TieredModel(ModelConfig(), seed=0)
        total = sum(p.size for p in model.params.values())
        assert breakdown.params["total"] == total

    def test_preprocessing_macs(self):
        assert cx.cm_preprocessing_macs(15, 100) == 22_500

    def test_text_and_csv_render(self, tmp_path):
        breakdown = cx.count_model_flops(ModelConfig())
        text = breakdown.to_text()
        for label in ("Patch Embedding", "MSA", "MLP in Encoder",
                      "Layer Normalization", "Sequence Pooling", "MLP Head",
                      "Total FLOPs"):
            assert label in text
        breakdown.to_csv(tmp_path / "flops.csv")
        header = (tmp_path / "flops.csv").read_text().splitlines()[0]
        assert header == "tier,layer,flops,reference,delta"


@pytest.fixture(scope="module")
def bench_result():
    scenario = ScenarioConfig(area=(8.0, 8.0), v_min=1.0, v_max=1.5,
                              alpha=2.0, pt_dbm=-25.0, num_antennas=4,
                              samples_per_period=16, seq_len=2, num_su=2,
                              seed=51)
    config = ModelConfig(seq_len=2, h_pad=4, channels=3, num_su=2,
                         embed_dim=8, num_heads=2, su_layers=1,
                         collab_layers=1, encoder_mlp=(16, 8), head_mlp=(16, 8))
    model = TieredModel(config, seed=0)
    stats = {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}
    return cx.bench_inference(model, stats, scenario, repetitions=20)


class TestBench:

    def test_median_not_above_p95(self, bench_result):
        assert bench_result.preprocess_median_ms <= bench_result.preprocess_p95_ms
        assert bench_result.inference_median_ms <= bench_result.inference_p95_ms

    def test_single_repetition_flagged(self):
        scenario = ScenarioConfig(area=(8.0, 8.0), num_antennas=4,
                                  samples_per_period=16, seq_len=2, num_su=2,
                                  seed=52)
        config = ModelConfig(seq_len=2, h_pad=4, channels=3, num_su=2,
                             embed_dim=8, num_heads=2, su_layers=1,
                             collab_layers=1, encoder_mlp=(16, 8), head_mlp=(16, 8))
        model = TieredModel(config, seed=0)
        result = cx.bench_inference(model, {"mean": [0.0] * 3, "std": [1.0] * 3},
                                    scenario, repetitions=1)
        assert result.low_confidence and result.repetitions == 1

    def test_warmup_precondition(self):
        with pytest.raises(ValueError):
            cx.bench_inference(None, None, None, repetitions=1, warmup=5)

    def test_meets_evacuation_bound_on_tiny_model(self, bench_result):
        assert bench_result.meets_evacuation_bound
        assert bench_result.inference_median_ms < cx.EVACUATION_BOUND_MS
