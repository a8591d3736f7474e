"""Two-stage cross-attention fusion network with gated text imagination.

Stage 1: a learnable 1-row query per modality attends over that modality's
projected sequence. An attention-gathering MLP over the concatenated modality
representations yields softmax weights, which build seven multi-view queries
(3 unimodal, 3 bimodal, 1 trimodal weighted sums). Stage 2: the 7-row query
attends over each modality sequence again; a second gathering MLP fuses the
three results per row, the 7 rows are averaged into the final representation,
and an affine head regresses the valence.

All forward functions accept an optional leading batch axis: per-sample
shapes are [q, D]/[S, D], batched shapes [B, q, D]/[B, S, D].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagination import MIAParams, mia_forward
from .nn import AffineLayer, ParamStore, gaussian_leaf, init_affine, zeros_leaf
from .tensor import Tensor, concat, softmax

MODALITIES = ("a", "v", "t")  # audio, vision, text; order fixed

# Multi-view query rows, in fixed order.
SUBSETS = (("a",), ("v",), ("t",), ("a", "v"), ("a", "t"), ("v", "t"), ("a", "v", "t"))


@dataclass
class ModelConfig:
    dim: int = 32
    mia_hidden: int = 16
    seq_len: int = 8
    raw_dim_a: int = 20
    raw_dim_v: int = 16
    raw_dim_t: int = 24
    tau_attn: float | None = None  # None -> sqrt(dim)

    def __post_init__(self):
        for name in ("dim", "mia_hidden", "seq_len", "raw_dim_a", "raw_dim_v", "raw_dim_t"):
            if getattr(self, name) <= 0:
                raise ValueError(f"model config: {name} must be positive")
        if self.mia_hidden >= 3 * self.dim:
            raise ValueError("model config: mia_hidden must be smaller than 3*dim")
        if self.tau_attn is None:
            self.tau_attn = math.sqrt(self.dim)
        if self.tau_attn <= 0:
            raise ValueError("model config: tau_attn must be positive")

    def raw_dim(self, m):
        return {"a": self.raw_dim_a, "v": self.raw_dim_v, "t": self.raw_dim_t}[m]


@dataclass
class AttentionMaps:
    key: AffineLayer
    value: AffineLayer


@dataclass
class UMCAParams:
    proj: dict  # modality -> AffineLayer raw_dim -> D
    query: dict  # modality -> Tensor [1, D]
    stage1: dict  # modality -> AttentionMaps
    stage2: dict  # modality -> AttentionMaps
    afg1: AffineLayer  # 3D -> 3
    afg2: AffineLayer  # 3D -> 3
    head: AffineLayer  # D -> 1
    tau: float


@dataclass
class FlowOutputs:
    stage1: dict  # modality -> Tensor [..., 1, D], text post-imagination when gated
    afg1_w: Tensor  # [..., 1, 3]
    q_multv: Tensor  # [..., 7, D]
    seq: dict  # modality -> Tensor [..., 7, D], text post-imagination when gated
    r: Tensor  # [..., D]
    y_hat: Tensor  # [...]


def init_model(config, seed):
    """All learnable weights, Gaussian N(0, 0.02^2), zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d = config.dim
    for m in MODALITIES:
        init_affine(rng, store, f"proj.{m}", config.raw_dim(m), d)
    for m in MODALITIES:
        store.register(f"query.{m}", gaussian_leaf(rng, (1, d)))
    for stage in ("s1", "s2"):
        for m in MODALITIES:
            init_affine(rng, store, f"{stage}.{m}.val", d, d)
            init_affine(rng, store, f"{stage}.{m}.key", d, d)
    init_affine(rng, store, "afg1", 3 * d, 3)
    init_affine(rng, store, "afg2", 3 * d, 3)
    init_affine(rng, store, "head", d, 1)
    for tag in ("mia1", "mia2"):
        store.register(f"{tag}.W1", gaussian_leaf(rng, (3 * d, config.mia_hidden)))
        store.register(f"{tag}.b1", zeros_leaf((config.mia_hidden,)))
        store.register(f"{tag}.W2", gaussian_leaf(rng, (config.mia_hidden, d)))
        store.register(f"{tag}.b2", zeros_leaf((d,)))
    return store


def param_views(params, config):
    """Build typed views over a name->Tensor mapping (store or detached copy)."""

    def affine(prefix):
        return AffineLayer(params[f"{prefix}.W"], params[f"{prefix}.b"])

    umca = UMCAParams(
        proj={m: affine(f"proj.{m}") for m in MODALITIES},
        query={m: params[f"query.{m}"] for m in MODALITIES},
        stage1={m: AttentionMaps(affine(f"s1.{m}.key"), affine(f"s1.{m}.val")) for m in MODALITIES},
        stage2={m: AttentionMaps(affine(f"s2.{m}.key"), affine(f"s2.{m}.val")) for m in MODALITIES},
        afg1=affine("afg1"),
        afg2=affine("afg2"),
        head=affine("head"),
        tau=config.tau_attn,
    )
    mia1 = MIAParams(params["mia1.W1"], params["mia1.b1"], params["mia1.W2"], params["mia1.b2"])
    mia2 = MIAParams(params["mia2.W1"], params["mia2.b1"], params["mia2.W2"], params["mia2.b2"])
    return umca, mia1, mia2


def project_modality(raw, m, umca):
    """Map raw per-modality features [..., S, raw_dim] into the shared dimension."""
    layer = umca.proj[m]
    if raw.shape[-1] != layer.in_dim:
        raise ValueError(
            f"project: modality '{m}' raw dim {raw.shape[-1]} != configured {layer.in_dim}"
        )
    return layer(raw)


def cross_attend(Q, E, maps, tau):
    """R = softmax(Q K^T / tau) V with K = tanh(affine(V)), V = affine(E)."""
    V = maps.value(E)
    K = maps.key(V).tanh()
    scores = Q @ K.transpose()
    attn = softmax(scores, axis=-1, tau=tau)
    return attn @ V


def afg_weights(R_a, R_v, R_t, afg):
    """Softmax fusion weights over the three modalities, per leading position."""
    if R_a.shape != R_v.shape or R_a.shape != R_t.shape:
        raise ValueError(f"afg: representations must share shape, got {R_a.shape}, {R_v.shape}, {R_t.shape}")
    x = concat([R_a, R_v, R_t], axis=-1)
    return softmax(afg(x), axis=-1)


def multiview_queries(R, w):
    """Seven weighted-sum query rows over modality subsets.

    R[m] is [..., 1, D]; w is [..., 1, 3] ordered (a, v, t). Subset rows use
    the retained modalities' weights unchanged (no renormalization).
    """
    weighted = {
        m: w.narrow(-1, i, i + 1) * R[m]  # [..., 1, 1] * [..., 1, D]
        for i, m in enumerate(MODALITIES)
    }
    rows = []
    for subset in SUBSETS:
        row = weighted[subset[0]]
        for m in subset[1:]:
            row = row + weighted[m]
        rows.append(row)
    return concat(rows, axis=-2)


def _pool_seq(R_seq, afg2):
    """Per-row fusion weights, modality-weighted sum, then mean over rows."""
    w = afg_weights(R_seq["a"], R_seq["v"], R_seq["t"], afg2)  # [..., 7, 3]
    fused = None
    for i, m in enumerate(MODALITIES):
        term = w.narrow(-1, i, i + 1) * R_seq[m]
        fused = term if fused is None else fused + term
    return fused.mean(axis=-2)


def stage2_fuse(q_multv, E, umca, rewrite_text=None):
    """Second attention stage plus pooling into the final representation r."""
    R_seq = {m: cross_attend(q_multv, E[m], umca.stage2[m], umca.tau) for m in MODALITIES}
    if rewrite_text is not None:
        R_seq["t"] = rewrite_text(R_seq)
    r = _pool_seq(R_seq, umca.afg2)
    return R_seq, r


def regress(r, head):
    """Affine valence head; output is unbounded (no clamping to the label range)."""
    out = head(r)  # [..., 1]
    return out.reshape(r.shape[:-1])


def umca_forward(E, umca, mia=None):
    """Full two-stage pipeline; `mia` = (stage1 params, stage2 params) gates imagination.

    With mia=None (complete flow) the text representations pass through
    untouched; with the gate on, both text representations are rewritten from
    audio+vision context before fusion.
    """
    R = {m: cross_attend(umca.query[m], E[m], umca.stage1[m], umca.tau) for m in MODALITIES}
    if mia is not None:
        R["t"] = mia_forward(R["v"], R["a"], R["t"], mia[0])
    w1 = afg_weights(R["a"], R["v"], R["t"], umca.afg1)
    q_multv = multiview_queries(R, w1)
    rewrite = None
    if mia is not None:
        rewrite = lambda seq: mia_forward(seq["v"], seq["a"], seq["t"], mia[1])
    R_seq, r = stage2_fuse(q_multv, E, umca, rewrite)
    y_hat = regress(r, umca.head)
    return FlowOutputs(stage1=R, afg1_w=w1, q_multv=q_multv, seq=R_seq, r=r, y_hat=y_hat)
