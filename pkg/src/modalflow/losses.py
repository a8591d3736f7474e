"""The four training losses and an independent brute-force rank-contrast oracle.

- task: MSE between labels and predictions.
- mkd (x2): RMSE between a detached teacher representation and the student's
  reconstructed one; gradients reach only the student's ancestry.
- rs: same RMSE form with no detach, pulling both flows' final
  representations together.
- rnc: rank contrast over the 2N concatenated final representations of both
  flows, ordering representation distances by label distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class LossWeights:
    alpha: float = 0.3  # mkd1
    beta: float = 0.3  # mkd2
    gamma: float = 1.0  # rs
    delta: float = 0.1  # rnc
    tau_rnc: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            w = getattr(self, name)
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"loss weight {name} must be finite and non-negative, got {w}")
        if not self.tau_rnc > 0:
            raise ValueError(f"tau_rnc must be positive, got {self.tau_rnc}")


@dataclass
class LossReport:
    task: float
    mkd1: float
    mkd2: float
    rs: float
    rnc: float
    total: float

    def as_row(self):
        return [self.task, self.mkd1, self.mkd2, self.rs, self.rnc, self.total]


def task_loss(y, y_hat):
    """Mean squared error over a batch of valence predictions."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.shape != y_hat.shape:
        raise ValueError(f"task_loss: label shape {y.shape} != prediction shape {y_hat.shape}")
    if y.size == 0:
        raise ValueError("task_loss: empty batch")
    return (y - y_hat).square().mean()


def _rmse(a, b, detach_first):
    if a.shape != b.shape:
        raise ValueError(f"rmse: shapes differ, {a.shape} vs {b.shape}")
    first = a.detach() if detach_first else a
    diff = first - b
    return (diff.square().sum() * (1.0 / diff.size)).sqrt()


def mkd_loss(R_real, R_sim):
    """Distillation RMSE; the real (teacher) representation is detached.

    N is the total element count of the representation tensor, batch included,
    so the loss is scale-free in batch size.
    """
    return _rmse(R_real, R_sim, detach_first=True)


def rs_loss(r, r_hat):
    """Final-representation alignment RMSE; gradients flow to both flows."""
    return _rmse(r, r_hat, detach_first=False)


def _rank_mask(labels):
    """M[i, j, k] = (|y_i - y_k| >= |y_i - y_j|) and k != i.

    The candidate set for anchor i and positive j: j itself always qualifies
    (distance equal), the anchor never does.
    """
    y = np.asarray(labels, dtype=np.float64)
    dist = np.abs(y[:, None] - y[None, :])
    mask = dist[:, None, :] >= dist[:, :, None]
    idx = np.arange(len(y))
    mask[idx, :, idx] = False
    return mask.astype(np.float64)


def rnc_loss(reps, labels, tau_rnc):
    """Rank contrast over 2N representations with duplicated labels.

    sim(a, b) = -||a - b||_2. Per anchor i and positive j != i, the positive
    competes against every k whose label distance to i is >= that of j; the
    total applies the -1/(2N-1) factor and the 1/(2N) average.
    """
    reps = reps if isinstance(reps, Tensor) else Tensor(reps)
    labels = np.asarray(labels, dtype=np.float64)
    if reps.ndim != 2:
        raise ValueError(f"rnc_loss: reps must be [2N, D], got {reps.shape}")
    n = reps.shape[0]
    if n < 2:
        raise ValueError(f"rnc_loss: need at least 2 representations, got {n}")
    if labels.shape != (n,):
        raise ValueError(f"rnc_loss: labels shape {labels.shape} != ({n},)")
    if tau_rnc <= 0:
        raise ValueError(f"rnc_loss: tau must be positive, got {tau_rnc}")

    sq = reps.square().sum(axis=1, keepdims=True)  # [2N, 1]
    gram = reps @ reps.transpose()
    d2 = (sq + sq.transpose() - gram * 2.0).relu()
    # Diagonal gets +1 so sqrt stays differentiable there (excluded downstream);
    # the tiny epsilon keeps ties between distinct rows finite-gradient.
    d = (d2 + Tensor(np.eye(n) + 1e-30)).sqrt()
    e = (d * (-1.0 / tau_rnc)).exp()  # exp(sim / tau), [2N, 2N]

    mask = Tensor(_rank_mask(labels))  # [2N, 2N, 2N]
    denom = (e.reshape((n, 1, n)) * mask).sum(axis=2)  # [2N, 2N]
    ratio = e / denom
    off_diag = Tensor(1.0 - np.eye(n))
    log_terms = (ratio.log() * off_diag).sum()
    return log_terms * (-1.0 / (n * (n - 1)))


def rnc_oracle(reps, labels, tau_rnc):
    """Naive O((2N)^3) reimplementation with explicit set construction; value only."""
    reps = np.asarray(reps.values if isinstance(reps, Tensor) else reps, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = reps.shape[0]
    if n < 2:
        raise ValueError(f"rnc_oracle: need at least 2 representations, got {n}")
    if tau_rnc <= 0:
        raise ValueError(f"rnc_oracle: tau must be positive, got {tau_rnc}")

    total = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            num = math.exp(-np.linalg.norm(reps[i] - reps[j]) / tau_rnc)
            # candidate set: all k != i at label distance >= that of j (j always in)
            candidates = [
                k for k in range(n)
                if k != i and abs(labels[i] - labels[k]) >= abs(labels[i] - labels[j])
            ]
            den = sum(math.exp(-np.linalg.norm(reps[i] - reps[k]) / tau_rnc) for k in candidates)
            total += math.log(num / den)
    return -total / (n * (n - 1))


def total_loss(task, weights, mkd1=None, mkd2=None, rs=None, rnc=None):
    """Weighted sum; ablated terms pass None and contribute exactly zero."""
    total = task
    for term, w in ((mkd1, weights.alpha), (mkd2, weights.beta), (rs, weights.gamma), (rnc, weights.delta)):
        if term is not None:
            total = total + term * w
    return total


def make_report(task, weights, mkd1=None, mkd2=None, rs=None, rnc=None):
    """Per-term float report; total satisfies the Eq-style weighted-sum identity."""

    def val(t):
        return 0.0 if t is None else (t.item() if isinstance(t, Tensor) else float(t))

    t, m1, m2, r, rn = val(task), val(mkd1), val(mkd2), val(rs), val(rnc)
    total = t + weights.alpha * m1 + weights.beta * m2 + weights.gamma * r + weights.delta * rn
    return LossReport(task=t, mkd1=m1, mkd2=m2, rs=r, rnc=rn, total=total)
