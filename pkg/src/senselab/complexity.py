"""Closed-form complexity terms, per-layer FLOPs accounting, and timing.

FLOPs are counted as multiply-accumulates (1 MAC = 1 FLOP entry), biases
and softmax exponentials excluded; layer normalization is charged two
operations per element.  Published reference figures for the standard
configuration are printed next to our counts with deltas: the reference
counting convention for attention/MLP rows is not documented anywhere,
so nothing forces an exact match.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from . import mobility
from .model import param_specs

# published totals for the standard configuration, shown beside our counts
REFERENCE_FLOPS_SU = {
    "Patch Embedding": 245_760, "MSA": 1_376_256, "MLP in Encoder": 1_179_648,
    "Layer Normalization": 24_576, "Sequence Pooling": 12_864,
    "MLP Head": 11_392, "Total FLOPs": 13_172_416,
}
REFERENCE_FLOPS_COLLAB = {
    "Patch Embedding": 576, "MSA": 1_376_256, "MLP in Encoder": 1_179_648,
    "Layer Normalization": 24_576, "Sequence Pooling": 12_864,
    "MLP Head": 11_392, "Total FLOPs": 10_346_752,
}
REFERENCE_TOTAL_FLOPS = 23_519_168
REFERENCE_TOTAL_PARAMS = 74_414
REFERENCE_PARAMS_PER_TIER = {"su": 42_667, "col": 31_747}
REFERENCE_BASELINE_TOTALS = {"cnn_lstm": 9_830_400, "cnn_3d": 203_836_544}


@dataclass
class ComplexityInputs:
    """Symbol values for the closed-form big-O expressions.

    Defaults reproduce the standard published configuration: a 20-step
    sequence of 16x16 inputs, 3 SUs, conv baselines with 32/24 kernels,
    and the 5+4-layer two-tier transformer at width 24.
    """

    lam: int = 20
    m: int = 16                # spatial size of the (padded) covariance input
    s: int = 3
    n: int = 100
    # CNN-LSTM terms
    n_f1: int = 32             # first-layer kernel count
    n_s1: int = 3              # first-layer kernel spatial size
    n_l: int = 32              # LSTM gate dimension
    n_fc1: int = 128
    n_fc2: int = 2
    # 3-D CNN terms
    c3_n_f1: int = 32
    c3_n_f2: int = 24
    c3_m_s1: int = 3           # kernel spatial sizes
    c3_m_s2: int = 3
    c3_d_fc1: int = 64
    c3_d_fc2: int = 2
    # two-tier transformer terms
    l1: int = 5
    l2: int = 4
    h_att1: int = 4
    h_att2: int = 4
    d_emb1: int = 24
    d_emb2: int = 24
    d_fc1: int = 48            # encoder MLP hidden width, tier 1
    d_fc2: int = 48

    def validate(self):
        for name, value in asdict(self).items():
            if int(value) != value or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value}")

    def to_dict(self):
        return asdict(self)


def complexity_cnn_lstm(inputs: ComplexityInputs):
    """Dominant-term count for the CNN-LSTM detector."""
    inputs.validate()
    i = inputs
    conv = i.lam * i.m ** 2 * i.n_f1 * i.n_s1 ** 2 * i.s
    lstm = 4 * i.lam * i.n_l * (i.n_f1 + i.n_l)
    dense = i.n_f1 * i.n_fc1 + i.n_l * i.n_fc2
    return conv + lstm + dense


def complexity_3dcnn(inputs: ComplexityInputs):
    """Dominant-term count for the two-layer 3-D CNN detector."""
    inputs.validate()
    i = inputs
    conv = i.lam * i.m ** 2 * (i.c3_n_f1 * i.c3_m_s1 ** 3 * i.s
                               + i.c3_n_f1 * i.c3_n_f2 * i.c3_m_s2 ** 3)
    dense = i.c3_n_f2 * i.c3_d_fc1 + i.c3_d_fc1 * i.c3_d_fc2
    return conv + dense


def complexity_two_tier(inputs: ComplexityInputs):
    """Dominant-term count for the two-tier transformer detector."""
    inputs.validate()
    i = inputs
    tier1 = i.l1 * i.h_att1 * i.m ** 2 * i.lam * i.d_emb1 + i.l1 * i.m * i.d_fc1
    tier2 = i.l2 * i.h_att2 * i.m ** 2 * i.lam * i.d_emb2 + i.l2 * i.m * i.d_fc2
    return tier1 + tier2


def cm_preprocessing_macs(m, n):
    """Complex MACs to turn one M x N snapshot into its covariance."""
    return m * m * n


@dataclass
class FlopsBreakdown:
    """Per-layer MAC counts for both tiers, plus parameter totals."""

    rows: list = field(default_factory=list)   # dicts: tier, layer, flops, reference
    params: dict = field(default_factory=dict)
    preprocessing_macs: int = 0

    def add(self, tier, layer, flops, reference=None):
        self.rows.append({"tier": tier, "layer": layer, "flops": int(flops),
                          "reference": reference,
                          "delta": None if reference is None else int(flops) - reference})

    def tier_rows(self, tier):
        return [r for r in self.rows if r["tier"] == tier]

    def tier_total(self, tier):
        for r in self.tier_rows(tier):
            if r["layer"] == "Total FLOPs":
                return r["flops"]
        raise KeyError(tier)

    @property
    def total_flops(self):
        return self.tier_total("su") + self.tier_total("col")

    def row_value(self, tier, layer):
        for r in self.tier_rows(tier):
            if r["layer"] == layer:
                return r["flops"]
        raise KeyError((tier, layer))

    def to_text(self):
        lines = [f"{'tier':6} {'layer':28} {'flops':>14} {'reference':>14} {'delta':>12}"]
        for r in self.rows:
            ref = "-" if r["reference"] is None else f"{r['reference']:,}"
            delta = "-" if r["delta"] is None else f"{r['delta']:+,}"
            lines.append(f"{r['tier']:6} {r['layer']:28} {r['flops']:>14,} "
                         f"{ref:>14} {delta:>12}")
        lines.append("")
        lines.append(f"combined total FLOPs: {self.total_flops:,} "
                     f"(reference {REFERENCE_TOTAL_FLOPS:,})")
        lines.append(f"parameters: su={self.params.get('su', 0):,} "
                     f"(reference {REFERENCE_PARAMS_PER_TIER['su']:,}), "
                     f"col={self.params.get('col', 0):,} "
                     f"(reference {REFERENCE_PARAMS_PER_TIER['col']:,}), "
                     f"total={self.params.get('total', 0):,} "
                     f"(reference {REFERENCE_TOTAL_PARAMS:,})")
        lines.append(f"covariance preprocessing: {self.preprocessing_macs:,} "
                     "complex MACs per snapshot")
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["tier", "layer", "flops", "reference", "delta"])
            for r in self.rows:
                writer.writerow([r["tier"], r["layer"], r["flops"],
                                 "" if r["reference"] is None else r["reference"],
                                 "" if r["delta"] is None else r["delta"]])


def count_model_flops(config, scenario_n=100):
    """Walk the concrete architecture and count MACs layer by layer."""
    nt, d = config.n_tokens, config.embed_dim
    m1, m2 = config.encoder_mlp
    h1, h2 = config.head_mlp
    msa = 4 * nt * d * d + 2 * nt * nt * d
    mlp = nt * (d * m1 + m1 * m2)
    ln = 4 * nt * d  # two normalizations, two ops per element
    pool = 2 * nt * d
    head = d * h1 + h1 * h2 + h2 * 2

    is_reference_shape = (nt, d, config.num_heads) == (256, 24, 4) \
        and config.encoder_mlp == (48, 24) and config.head_mlp == (128, 64)

    def ref(table, layer):
        return table.get(layer) if is_reference_shape else None

    out = FlopsBreakdown()
    embed_su = nt * d * config.tube_volume
    ref_embed = REFERENCE_FLOPS_SU["Patch Embedding"] if (
        is_reference_shape and config.channels == 2) else None
    out.add("su", "Patch Embedding", embed_su, ref_embed)
    for tier, layers, embed_flops in (("su", config.su_layers, None),
                                      ("col", config.collab_layers, nt * d * d)):
        table = REFERENCE_FLOPS_SU if tier == "su" else REFERENCE_FLOPS_COLLAB
        if tier == "col":
            out.add("col", "Patch Embedding", embed_flops, ref(table, "Patch Embedding"))
        out.add(tier, "MSA", msa, ref(table, "MSA"))
        out.add(tier, "MLP in Encoder", mlp, ref(table, "MLP in Encoder"))
        out.add(tier, "Layer Normalization", ln, ref(table, "Layer Normalization"))
        out.add(tier, "Total FLOPs for Encoder Layer", layers * (msa + mlp + ln))
        out.add(tier, "Sequence Pooling", pool, ref(table, "Sequence Pooling"))
        out.add(tier, "MLP Head", head, ref(table, "MLP Head"))
        embed = embed_su if tier == "su" else embed_flops
        total = embed + layers * (msa + mlp + ln) + pool + head
        out.add(tier, "Total FLOPs", total, ref(table, "Total FLOPs"))

    counts = {"su": 0, "col": 0}
    for name, shape, _ in param_specs(config):
        counts[name.split(".")[0]] += int(np.prod(shape))
    out.params = {"su": counts["su"], "col": counts["col"],
                  "total": counts["su"] + counts["col"]}
    out.preprocessing_macs = cm_preprocessing_macs(config.h_pad, scenario_n)
    return out


@dataclass
class BenchResult:
    preprocess_median_ms: float
    preprocess_p95_ms: float
    inference_median_ms: float
    inference_p95_ms: float
    repetitions: int
    meets_evacuation_bound: bool
    low_confidence: bool

    def to_dict(self):
        return asdict(self)


EVACUATION_BOUND_MS = 2000.0  # spectrum must be vacated within two seconds


def bench_inference(model, standardization, scenario, repetitions=100, warmup=10):
    """Per-sample wall-clock latency of preprocessing and inference.

    Preprocessing covers covariance construction plus plane conversion
    for one sample (S SUs x lam periods); inference is one group forward
    pass.  Warmup iterations are discarded; medians and p95s are reported
    over ``repetitions`` timed runs of the same sample.
    """
    if warmup < 10:
        raise ValueError("benchmark warmup must be at least 10 iterations")
    cfg = model.config
    lam, s_count = scenario.seq_len, scenario.num_su
    pu_xy, su_xy = ds.simulate_span(scenario, 0, lam)
    period_mats = [mobility.generate_period(scenario, pu_xy[t], su_xy[t], True,
                                            mobility.period_rng(scenario.seed, t),
                                            period_index=t)
                   for t in range(lam)]

    def preprocess():
        planes = np.empty((1, s_count, lam, cfg.h_pad, cfg.h_pad, cfg.channels))
        for t, mats in enumerate(period_mats):
            for s, mat in enumerate(mats):
                planes[0, s, t] = ds.cm_to_planes(ds.covariance(mat).entries,
                                                  cfg.h_pad, cfg.channels)
        return planes

    planes = preprocess()
    z = ds.apply_standardization(planes, standardization)

    def infer():
        with ad.no_grad():
            model.group_forward(z)

    pre_times, inf_times = [], []
    for i in range(warmup + repetitions):
        t0 = time.perf_counter()
        preprocess()
        t1 = time.perf_counter()
        infer()
        t2 = time.perf_counter()
        if i >= warmup:
            pre_times.append((t1 - t0) * 1e3)
            inf_times.append((t2 - t1) * 1e3)

    pre = np.array(pre_times)
    inf = np.array(inf_times)
    return BenchResult(
        preprocess_median_ms=float(np.median(pre)),
        preprocess_p95_ms=float(np.percentile(pre, 95)),
        inference_median_ms=float(np.median(inf)),
        inference_p95_ms=float(np.percentile(inf, 95)),
        repetitions=repetitions,
        meets_evacuation_bound=bool(np.median(inf) < EVACUATION_BOUND_MS),
        low_confidence=repetitions < 2,
    )
