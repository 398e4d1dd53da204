"""Anatomy of one forward pass through the two-tier detector.

Traces tokens, attention maps, sequence-pool weights, the max fusion,
and the invariances those pieces guarantee.
"""

import itertools

import numpy as np

from senselab import autodiff as ad
from senselab.model import ModelConfig, TieredModel

config = ModelConfig(seq_len=10, h_pad=8, channels=3, num_su=3)
model = TieredModel(config, seed=1)
print(f"tokens per SU: {config.n_tokens} "
      f"(tube {config.tube} over a {config.seq_len}x{config.h_pad}x{config.h_pad} volume)")
print(f"embedding dim {config.embed_dim}, heads {config.num_heads}, "
      f"encoder depth {config.su_layers}+{config.collab_layers}")
su = sum(p.size for n, p in model.params.items() if n.startswith('su.'))
col = sum(p.size for n, p in model.params.items() if n.startswith('col.'))
print(f"parameters: per-SU tier {su:,}, fusion tier {col:,}, total {su + col:,}")

rng = np.random.default_rng(5)
planes = rng.normal(size=(2, 3, 10, 8, 8, 3))

trace = []
with ad.no_grad():
    group, su_probs, k_seqs = model.group_forward(planes, trace)

print(f"\ngroup probabilities (idle, active): {group.data[0].round(4)}"
      f"  sum={group.data[0].sum():.12f}")
for s, probs in enumerate(su_probs):
    print(f"SU {s} head: {probs.data[0].round(4)}")

# --- attention maps -------------------------------------------------------
attn = [(name, arr) for name, arr in trace if name.endswith(".attn")]
print(f"\n{len(attn)} attention maps collected; every row is a distribution:")
name, arr = attn[0]
print(f"  {name}: shape {arr.shape} (batch, head, query, key), "
      f"max |row sum - 1| = {np.abs(arr.sum(-1) - 1).max():.2e}")

pool = [(name, arr) for name, arr in trace if name.endswith(".pool")]
name, arr = pool[0]
top = np.argsort(arr[0, 0])[-3:][::-1]
print(f"  {name}: token weights sum {arr[0, 0].sum():.12f}, "
      f"heaviest tokens {top.tolist()}")

# --- fusion is an elementwise max across SUs ------------------------------
fused = model.fuse(k_seqs)
manual = np.max(np.stack([k.data for k in k_seqs]), axis=0)
print(f"\nfusion equals elementwise max: {np.array_equal(fused.data, manual)}")

outs = []
with ad.no_grad():
    for perm in itertools.permutations(range(3)):
        out, _, _ = model.group_forward(planes[:, perm])
        outs.append(out.data)
print("group output identical under all 6 SU orderings:",
      all(np.array_equal(outs[0], o) for o in outs[1:]))

# --- gradients reach every tensor -----------------------------------------
group, su_probs, _ = model.group_forward(planes)
onehot = np.eye(2)[[0, 1]]
picked = ad.reduce_sum(ad.mul(group, ad.Tensor(onehot)), axis=-1)
loss = ad.scale(ad.reduce_mean(ad.log(ad.clamp_min(picked, 1e-12))), -1.0)
for probs in su_probs:
    p = ad.reduce_sum(ad.mul(probs, ad.Tensor(onehot)), axis=-1)
    loss = ad.add(loss, ad.scale(ad.reduce_mean(ad.log(ad.clamp_min(p, 1e-12))), -1 / 3))
ad.backward(loss)
with_grad = sum(1 for p in model.params.values()
                if p.grad is not None and np.any(p.grad))
print(f"parameter tensors with nonzero gradient: {with_grad}/{len(model.params)}")
