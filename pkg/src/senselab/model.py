"""Two-tier transformer detector over covariance-plane sequences.

Tier one (the per-SU encoder) turns each SU's (lam, H, H, C) plane stack
into tokens by slicing non-overlapping tubes, linearly embedding them,
and running a stack of pre-norm encoder layers; attention-based sequence
pooling plus an MLP head gives the SU-level PU-state probabilities.  The
same weights serve every SU.

Tier two fuses the per-SU token sequences by an elementwise max across
the SU axis, projects, adds its own positional embedding, runs a second
encoder stack, pools, and classifies the group-level PU state.  The max
fusion makes the group output exactly invariant to SU ordering.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_MAGIC = b"SENSELAB-CK\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint missing, malformed, or built for a different config."""


@dataclass
class ModelConfig:
    seq_len: int = 20            # lam, temporal length of one sample
    h_pad: int = 16              # padded spatial size H
    channels: int = 3
    num_su: int = 3
    tube: tuple = ()             # (t, h, w); default spans the full temporal axis
    embed_dim: int = 24
    num_heads: int = 4
    su_layers: int = 5
    collab_layers: int = 4
    encoder_mlp: tuple = (48, 24)
    head_mlp: tuple = (128, 64)

    def __post_init__(self):
        if not self.tube:
            self.tube = (self.seq_len, 1, 1)
        self.validate()

    def validate(self):
        d, heads = self.embed_dim, self.num_heads
        if d % heads != 0:
            raise ValueError(f"embed_dim {d} must be divisible by num_heads {heads}")
        t, h, w = self.tube
        for size, step, name in ((self.seq_len, t, "temporal"),
                                 (self.h_pad, h, "height"),
                                 (self.h_pad, w, "width")):
            if step <= 0 or size % step != 0:
                raise ValueError(f"tube {name} extent {step} must divide {size}")
        if self.encoder_mlp[-1] != d:
            raise ValueError("encoder MLP must project back to embed_dim")
        if self.channels not in (2, 3):
            raise ValueError("channels must be 2 or 3")

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def n_tokens(self):
        t, h, w = self.tube
        return (self.seq_len // t) * (self.h_pad // h) * (self.h_pad // w)

    @property
    def tube_volume(self):
        t, h, w = self.tube
        return t * h * w * self.channels

    def to_dict(self):
        d = asdict(self)
        for key in ("tube", "encoder_mlp", "head_mlp"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("tube", "encoder_mlp", "head_mlp"):
            d[key] = tuple(d[key])
        return cls(**d)

    def content_hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        cfg = replace(self, **kw)
        if "seq_len" in kw or "h_pad" in kw:
            if "tube" not in kw:
                cfg = replace(cfg, tube=(cfg.seq_len, 1, 1))
        return cfg


def _truncated_normal(rng, shape, std=0.02):
    """Normal(0, std) redrawn until within 2 std (conventional init)."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while np.any(bad):
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def _encoder_param_specs(prefix, cfg):
    d = cfg.embed_dim
    m1, m2 = cfg.encoder_mlp
    specs = []
    for l in range(cfg.su_layers if prefix == "su" else cfg.collab_layers):
        base = f"{prefix}.enc{l}"
        specs += [
            (f"{base}.ln1.g", (d,), "ones"), (f"{base}.ln1.b", (d,), "zeros"),
            (f"{base}.wq", (d, d), "w"), (f"{base}.bq", (d,), "zeros"),
            (f"{base}.wk", (d, d), "w"), (f"{base}.bk", (d,), "zeros"),
            (f"{base}.wv", (d, d), "w"), (f"{base}.bv", (d,), "zeros"),
            (f"{base}.wo", (d, d), "w"), (f"{base}.bo", (d,), "zeros"),
            (f"{base}.ln2.g", (d,), "ones"), (f"{base}.ln2.b", (d,), "zeros"),
            (f"{base}.mlp.w1", (d, m1), "w"), (f"{base}.mlp.b1", (m1,), "zeros"),
            (f"{base}.mlp.w2", (m1, m2), "w"), (f"{base}.mlp.b2", (m2,), "zeros"),
        ]
    return specs


def _head_param_specs(prefix, cfg):
    d = cfg.embed_dim
    h1, h2 = cfg.head_mlp
    return [
        (f"{prefix}.pool.w", (d, 1), "w"), (f"{prefix}.pool.b", (1,), "zeros"),
        (f"{prefix}.head.w1", (d, h1), "w"), (f"{prefix}.head.b1", (h1,), "zeros"),
        (f"{prefix}.head.w2", (h1, h2), "w"), (f"{prefix}.head.b2", (h2,), "zeros"),
        (f"{prefix}.head.w3", (h2, 2), "w"), (f"{prefix}.head.b3", (2,), "zeros"),
    ]


def param_specs(cfg: ModelConfig):
    """Ordered (name, shape, init) triples for every learnable tensor."""
    d, nt = cfg.embed_dim, cfg.n_tokens
    specs = [
        ("su.embed.w", (cfg.tube_volume, d), "w"), ("su.embed.b", (d,), "zeros"),
        ("su.pos", (nt, d), "w"),
    ]
    specs += _encoder_param_specs("su", cfg)
    specs += _head_param_specs("su", cfg)
    specs += [
        ("col.proj.w", (d, d), "w"), ("col.proj.b", (d,), "zeros"),
        ("col.pos", (nt, d), "w"),
    ]
    specs += _encoder_param_specs("col", cfg)
    specs += _head_param_specs("col", cfg)
    return specs


def init_params(cfg: ModelConfig, seed=0):
    """Fresh parameter dict: truncated-normal weights, zero biases, unit gains."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x9E37])
    params = {}
    for name, shape, kind in param_specs(cfg):
        if kind == "w":
            data = _truncated_normal(rng, shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def parameter_count(params, prefix=None):
    return sum(p.size for name, p in params.items()
               if prefix is None or name.startswith(prefix))


def extract_tubes(planes, tube):
    """Rearrange (B, lam, H, H, C) planes into flattened non-overlapping tubes."""
    b, lam, h1, w1, c = planes.shape
    t, h, w = tube
    nt, nh, nw = lam // t, h1 // h, w1 // w
    x = planes.reshape(b, nt, t, nh, h, nw, w, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return np.ascontiguousarray(x.reshape(b, nt * nh * nw, t * h * w * c))


class TieredModel:
    """Forward passes for both tiers over a shared parameter dict.

    ``trace``, when given, is a list that collects (name, ndarray) pairs
    for every attention map and sequence-pool weight vector, so tests can
    audit the normalization invariants directly.
    """

    def __init__(self, config: ModelConfig, params=None, seed=0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params

    def tokenize(self, planes):
        """Embed non-overlapping tubes and add the positional embedding."""
        cfg = self.config
        b, lam, h1, w1, c = planes.shape
        if (lam, h1, w1, c) != (cfg.seq_len, cfg.h_pad, cfg.h_pad, cfg.channels):
            raise ValueError(
                f"plane dims {(lam, h1, w1, c)} do not match config "
                f"{(cfg.seq_len, cfg.h_pad, cfg.h_pad, cfg.channels)}")
        tubes = Tensor(extract_tubes(planes, cfg.tube))
        tokens = ad.dense(tubes, self.params["su.embed.w"], self.params["su.embed.b"])
        return ad.add(tokens, self.params["su.pos"])

    def _attention(self, z, base, trace=None):
        cfg = self.config
        b, n, d = z.shape
        heads, dk = cfg.num_heads, cfg.head_dim
        p = self.params

        def split(x):
            return ad.permute(ad.reshape(x, (b, n, heads, dk)), (0, 2, 1, 3))

        q = split(ad.dense(z, p[f"{base}.wq"], p[f"{base}.bq"]))
        k = split(ad.dense(z, p[f"{base}.wk"], p[f"{base}.bk"]))
        v = split(ad.dense(z, p[f"{base}.wv"], p[f"{base}.bv"]))
        scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(dk))
        attn = ad.softmax_lastdim(scores)
        if trace is not None:
            trace.append((f"{base}.attn", attn.data))
        ctx = ad.reshape(ad.permute(ad.matmul(attn, v), (0, 2, 1, 3)), (b, n, d))
        return ad.dense(ctx, p[f"{base}.wo"], p[f"{base}.bo"])

    def _encoder_layer(self, z, base, trace=None):
        p = self.params
        attended = self._attention(
            ad.layernorm(z, p[f"{base}.ln1.g"], p[f"{base}.ln1.b"]), base, trace)
        c = ad.add(attended, z)
        hidden = ad.layernorm(c, p[f"{base}.ln2.g"], p[f"{base}.ln2.b"])
        hidden = ad.gelu(ad.dense(hidden, p[f"{base}.mlp.w1"], p[f"{base}.mlp.b1"]))
        hidden = ad.dense(hidden, p[f"{base}.mlp.w2"], p[f"{base}.mlp.b2"])
        return ad.add(hidden, c)

    def _encoder_stack(self, z, prefix, layers, trace=None):
        for l in range(layers):
            z = self._encoder_layer(z, f"{prefix}.enc{l}", trace)
        return z

    def sequence_pool(self, z, prefix, trace=None):
        """Softmax-weighted token average: importance scores from a linear map."""
        p = self.params
        b, n, d = z.shape
        scores = ad.dense(z, p[f"{prefix}.pool.w"], p[f"{prefix}.pool.b"])
        weights = ad.softmax_lastdim(ad.transpose_last2(scores))
        if trace is not None:
            trace.append((f"{prefix}.pool", weights.data))
        return ad.reshape(ad.matmul(weights, z), (b, d))

    def _head(self, pooled, prefix, collect_logits=None):
        p = self.params
        x = ad.gelu(ad.dense(pooled, p[f"{prefix}.head.w1"], p[f"{prefix}.head.b1"]))
        x = ad.gelu(ad.dense(x, p[f"{prefix}.head.w2"], p[f"{prefix}.head.b2"]))
        logits = ad.dense(x, p[f"{prefix}.head.w3"], p[f"{prefix}.head.b3"])
        if collect_logits is not None:
            collect_logits.append(logits.data)
        return ad.softmax_lastdim(logits)

    def su_forward(self, planes, trace=None):
        """One SU's standardized planes -> (probs (B,2), token sequence K)."""
        tokens = self.tokenize(planes)
        k_seq = self._encoder_stack(tokens, "su", self.config.su_layers, trace)
        probs = self._head(self.sequence_pool(k_seq, "su", trace), "su")
        return probs, k_seq

    @staticmethod
    def fuse(k_seqs):
        """Elementwise max across the SU axis; order-invariant by construction."""
        shapes = {k.shape for k in k_seqs}
        if len(shapes) != 1:
            raise ad.ShapeError(f"fused sequences must share a shape, got {sorted(shapes)}")
        if len(k_seqs) == 1:
            return k_seqs[0]
        return ad.reduce_max_axis0(ad.stack(k_seqs, axis=0))

    def collab_forward(self, fused, trace=None, collect_logits=None):
        """Fused token sequence -> group-level (B, 2) probabilities."""
        p = self.params
        z = ad.add(ad.dense(fused, p["col.proj.w"], p["col.proj.b"]), p["col.pos"])
        z = self._encoder_stack(z, "col", self.config.collab_layers, trace)
        return self._head(self.sequence_pool(z, "col", trace), "col", collect_logits)

    def group_forward(self, planes, trace=None, collect_logits=None):
        """Full pass over (B, S, lam, H, H, C) planes.

        Returns (group_probs, per-SU probs list, per-SU token sequences).
        ``collect_logits``, when a list, receives the pre-softmax group
        logits (the detection statistic works on those: the log-odds
        log j1 - log j0 equals the logit difference exactly, with no
        float saturation for confident inputs).
        """
        b, s_count = planes.shape[:2]
        if s_count != self.config.num_su:
            raise ValueError(f"expected {self.config.num_su} SUs, got {s_count}")
        su_probs, k_seqs = [], []
        for s in range(s_count):
            probs, k_seq = self.su_forward(planes[:, s], trace)
            su_probs.append(probs)
            k_seqs.append(k_seq)
        group = self.collab_forward(self.fuse(k_seqs), trace, collect_logits)
        return group, su_probs, k_seqs


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, config: ModelConfig, params, standardization,
                    meta=None):
    """Deterministic single-file checkpoint: JSON header + raw tensors."""
    names = sorted(params)
    header = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model": config.to_dict(),
        "model_hash": config.content_hash(),
        "standardization": standardization,
        "tensors": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
    }
    if meta:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n].data, dtype=np.float64).tobytes())
    return header


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Read a checkpoint; returns (config, params, standardization, header)."""
    try:
        f = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: not a senselab checkpoint")
        hlen = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        header = json.loads(f.read(hlen).decode())
        if header.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version")
        config = ModelConfig.from_dict(header["model"])
        if expected_config is not None and config != expected_config:
            raise CheckpointError(
                f"{path}: checkpoint config {config.content_hash()} does not match "
                f"expected {expected_config.content_hash()}")
        params = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.fromfile(f, dtype=np.float64, count=count)
            if data.size != count:
                raise CheckpointError(f"{path}: truncated tensor payload at {spec['name']}")
            params[spec["name"]] = Tensor(data.reshape(shape), requires_grad=True)
    return config, params, header["standardization"], header
