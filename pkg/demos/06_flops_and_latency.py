"""Inference-cost accounting: per-layer FLOPs, closed forms, wall clock.

Walks the standard architecture, prints our MAC counts beside the
published reference figures, evaluates the closed-form dominant terms
for all three detector families, and times one sample end to end.
"""

from senselab import complexity as cx
from senselab.mobility import ScenarioConfig
from senselab.model import ModelConfig, TieredModel

print("per-layer MAC counts, standard configuration (3-channel input):")
print(cx.count_model_flops(ModelConfig()).to_text())

print("\nsame architecture in 2-channel mode (patch embedding matches the"
      " reference exactly):")
two_ch = cx.count_model_flops(ModelConfig(channels=2))
row = [r for r in two_ch.tier_rows("su") if r["layer"] == "Patch Embedding"][0]
print(f"  Patch Embedding: {row['flops']:,} (reference {row['reference']:,}, "
      f"delta {row['delta']:+,})")

inputs = cx.ComplexityInputs()
print("\nclosed-form dominant terms at the standard symbol values:")
print(f"  cnn-lstm:             {cx.complexity_cnn_lstm(inputs):>12,} "
      f"(published total {cx.REFERENCE_BASELINE_TOTALS['cnn_lstm']:,})")
print(f"  3-d cnn:              {cx.complexity_3dcnn(inputs):>12,} "
      f"(published total {cx.REFERENCE_BASELINE_TOTALS['cnn_3d']:,})")
print(f"  two-tier transformer: {cx.complexity_two_tier(inputs):>12,} "
      f"(published total {cx.REFERENCE_TOTAL_FLOPS:,})")
print("  (big-O expressions drop constants, so deltas against the counted"
      " totals are expected)")

# --- wall clock on the desk-profile model ----------------------------------
scenario = ScenarioConfig(area=(15.0, 15.0), v_min=1.0, v_max=1.5, alpha=2.0,
                          pt_dbm=-42.0, num_antennas=8, samples_per_period=100,
                          seq_len=10, num_su=3, seed=1)
config = ModelConfig(seq_len=10, h_pad=8, channels=3, num_su=3)
model = TieredModel(config, seed=1)
stats = {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}
result = cx.bench_inference(model, stats, scenario, repetitions=30)
print("\ndesk-profile latency per sample (30 repetitions):")
print(f"  preprocessing: median {result.preprocess_median_ms:.3f} ms, "
      f"p95 {result.preprocess_p95_ms:.3f} ms")
print(f"  inference:     median {result.inference_median_ms:.3f} ms, "
      f"p95 {result.inference_p95_ms:.3f} ms")
print(f"  2-second evacuation bound: "
      f"{'PASS' if result.meets_evacuation_bound else 'FAIL'}")
