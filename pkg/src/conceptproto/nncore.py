"""Minimal differentiable numerical stack with hand-coded gradients.

Implements the fixed two-layer MLP backbone (dense -> batch norm -> ReLU ->
dropout -> dense), squared-Euclidean and cosine distance kernels, a
numerically stable softmax / negative log-likelihood, and Adam. There is no
autodiff graph: the backward pass is written analytically for this one
architecture and verified against finite differences in the test suite.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionError, NumericError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# Trainable fields of MlpParams, in a fixed order used by Adam and the
# gradient checks. Running BN statistics are deliberately excluded.
PARAM_FIELDS = ("w1", "b1", "bn_gamma", "bn_beta", "w2", "b2")


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


class DistanceKind(str, Enum):
    SQ_EUCLIDEAN = "sq_euclidean"
    COSINE = "cosine"


@dataclass
class MlpParams:
    """Parameters of the two-layer backbone, input dim D -> hidden H -> out M."""

    w1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    bn_gamma: np.ndarray  # (H,)
    bn_beta: np.ndarray  # (H,)
    bn_running_mean: np.ndarray  # (H,)
    bn_running_var: np.ndarray  # (H,)
    w2: np.ndarray  # (H, M)
    b2: np.ndarray  # (M,)
    dropout_rate: float = 0.2

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def hidden_dim(self):
        return self.w1.shape[1]

    @property
    def embed_dim(self):
        return self.w2.shape[1]

    def copy(self):
        return MlpParams(
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            bn_gamma=self.bn_gamma.copy(),
            bn_beta=self.bn_beta.copy(),
            bn_running_mean=self.bn_running_mean.copy(),
            bn_running_var=self.bn_running_var.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
            dropout_rate=self.dropout_rate,
        )


@dataclass
class ParamGrads:
    """Gradients for every trainable field of MlpParams."""

    w1: np.ndarray
    b1: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def add_(self, other):
        for name in PARAM_FIELDS:
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    @staticmethod
    def zeros_like(params):
        return ParamGrads(
            w1=np.zeros_like(params.w1),
            b1=np.zeros_like(params.b1),
            bn_gamma=np.zeros_like(params.bn_gamma),
            bn_beta=np.zeros_like(params.bn_beta),
            w2=np.zeros_like(params.w2),
            b2=np.zeros_like(params.b2),
        )


@dataclass
class ForwardCache:
    """Intermediates saved by mlp_forward for the backward pass."""

    params: MlpParams
    mode: Mode
    x: np.ndarray
    xhat: np.ndarray  # normalized pre-activation
    inv_std: np.ndarray  # 1/sqrt(var + eps) used for normalization
    relu_mask: np.ndarray
    dropout_mask: np.ndarray | None  # None when dropout inactive
    h: np.ndarray  # hidden activation fed to the output layer
    # Fresh running statistics computed in TRAIN mode; the caller decides
    # whether to commit them to the parameter struct.
    new_running_mean: np.ndarray | None = None
    new_running_var: np.ndarray | None = None


def init_mlp(input_dim, hidden_dim, embed_dim, rng, dropout_rate=0.2):
    """He-initialized backbone parameters."""
    if not 0.0 <= dropout_rate < 1.0:
        raise NumericError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden_dim))
    w2 = rng.normal(0.0, np.sqrt(2.0 / hidden_dim), size=(hidden_dim, embed_dim))
    return MlpParams(
        w1=w1,
        b1=np.zeros(hidden_dim),
        bn_gamma=np.ones(hidden_dim),
        bn_beta=np.zeros(hidden_dim),
        bn_running_mean=np.zeros(hidden_dim),
        bn_running_var=np.ones(hidden_dim),
        w2=w2,
        b2=np.zeros(embed_dim),
        dropout_rate=dropout_rate,
    )


def mlp_forward(params, x, mode, rng=None):
    """Run the backbone on a batch x of shape (n, D).

    Returns (out, cache) where out has shape (n, M). TRAIN mode uses batch
    statistics for normalization and applies (inverted) dropout; EVAL mode
    uses the stored running statistics and is deterministic.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-d batch, got shape {x.shape}")
    n, d = x.shape
    if d != params.input_dim:
        raise DimensionError(
            f"input dim mismatch: batch has {d} features, params expect {params.input_dim}"
        )
    if n < 1:
        raise DimensionError("empty batch")
    if mode is Mode.TRAIN and n < 2:
        raise DimensionError("TRAIN mode needs a batch of at least 2 rows for batch statistics")

    z = x @ params.w1 + params.b1

    new_rm = new_rv = None
    if mode is Mode.TRAIN:
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        # Unbiased variance for the running estimate, matching the usual
        # batch-norm convention.
        var_unbiased = var * n / (n - 1)
        new_rm = (1 - BN_MOMENTUM) * params.bn_running_mean + BN_MOMENTUM * mu
        new_rv = (1 - BN_MOMENTUM) * params.bn_running_var + BN_MOMENTUM * var_unbiased
    else:
        inv_std = 1.0 / np.sqrt(params.bn_running_var + BN_EPS)
        xhat = (z - params.bn_running_mean) * inv_std

    a = params.bn_gamma * xhat + params.bn_beta
    relu_mask = a > 0
    r = a * relu_mask

    dropout_mask = None
    if mode is Mode.TRAIN and params.dropout_rate > 0.0:
        if rng is None:
            raise NumericError("TRAIN mode with dropout requires an RNG stream")
        keep = 1.0 - params.dropout_rate
        dropout_mask = (rng.random(r.shape) < keep) / keep
        h = r * dropout_mask
    else:
        h = r

    out = h @ params.w2 + params.b2
    cache = ForwardCache(
        params=params,
        mode=mode,
        x=x,
        xhat=xhat,
        inv_std=inv_std,
        relu_mask=relu_mask,
        dropout_mask=dropout_mask,
        h=h,
        new_running_mean=new_rm,
        new_running_var=new_rv,
    )
    return out, cache


def commit_running_stats(params, cache):
    """Copy the batch statistics gathered during a TRAIN forward into params."""
    if cache.new_running_mean is not None:
        params.bn_running_mean = cache.new_running_mean
        params.bn_running_var = cache.new_running_var


def mlp_backward(cache, grad_out):
    """Backpropagate grad_out (n, M) through a cached forward pass."""
    p = cache.params
    grad_out = np.asarray(grad_out, dtype=float)
    if grad_out.shape != (cache.x.shape[0], p.embed_dim):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({cache.x.shape[0]}, {p.embed_dim})"
        )

    db2 = grad_out.sum(axis=0)
    dw2 = cache.h.T @ grad_out
    dh = grad_out @ p.w2.T

    if cache.dropout_mask is not None:
        dr = dh * cache.dropout_mask
    else:
        dr = dh
    da = dr * cache.relu_mask

    dgamma = (da * cache.xhat).sum(axis=0)
    dbeta = da.sum(axis=0)
    dxhat = da * p.bn_gamma

    if cache.mode is Mode.TRAIN:
        n = cache.x.shape[0]
        # Batch statistics participate in the graph.
        dz = (cache.inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=0)
            - cache.xhat * (dxhat * cache.xhat).sum(axis=0)
        )
    else:
        dz = dxhat * cache.inv_std

    db1 = dz.sum(axis=0)
    dw1 = cache.x.T @ dz
    return ParamGrads(w1=dw1, b1=db1, bn_gamma=dgamma, bn_beta=dbeta, w2=dw2, b2=db2)


@dataclass
class AdamState:
    """Per-parameter-set Adam moments plus step counter."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params, lr=1e-3, weight_decay=0.0):
        zeros = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
        return AdamState(
            m={k: v.copy() for k, v in zeros.items()},
            v=zeros,
            lr=lr,
            weight_decay=weight_decay,
        )

    def copy(self):
        return AdamState(
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            step=self.step,
            lr=self.lr,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )


def adam_step(params, grads, state):
    """In-place Adam update with bias correction; BN running stats untouched."""
    state.step += 1
    t = state.step
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        value = getattr(params, name)
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * value
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def distance(kind, a, b):
    """Distance between two vectors; SQ_EUCLIDEAN is the training default."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"vector shape mismatch: {a.shape} vs {b.shape}")
    if kind is DistanceKind.SQ_EUCLIDEAN:
        diff = a - b
        return float(diff @ diff)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        # Degenerate embedding: treat as maximally dissimilar instead of
        # aborting evaluation.
        return 1.0
    return float(1.0 - (a @ b) / (na * nb))


def pairwise_distance(kind, q, p):
    """Distance matrix (n, k) between query rows q (n, M) and rows p (k, M)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape[1] != p.shape[1]:
        raise DimensionError(f"embedding dim mismatch: {q.shape[1]} vs {p.shape[1]}")
    if kind is DistanceKind.SQ_EUCLIDEAN:
        diff = q[:, None, :] - p[None, :, :]
        return np.einsum("nkm,nkm->nk", diff, diff)
    nq = np.linalg.norm(q, axis=1)
    np_ = np.linalg.norm(p, axis=1)
    denom = nq[:, None] * np_[None, :]
    dots = q @ p.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return 1.0 - cos


def softmax_rows(scores):
    """Row-wise stable softmax."""
    scores = np.asarray(scores, dtype=float)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_nll(neg_scores, true_class):
    """Softmax over neg_scores plus negative log-likelihood of true_class."""
    neg_scores = np.asarray(neg_scores, dtype=float)
    if neg_scores.ndim != 1 or neg_scores.shape[0] < 2:
        raise DimensionError("neg_scores must be a vector of length >= 2")
    if not np.all(np.isfinite(neg_scores)):
        raise NumericError("non-finite scores")
    k = neg_scores.shape[0]
    if not 0 <= true_class < k:
        raise IndexError(f"true_class {true_class} out of range for {k} classes")
    shifted = neg_scores - neg_scores.max()
    log_z = np.log(np.exp(shifted).sum())
    log_probs = shifted - log_z
    return np.exp(log_probs), float(-log_probs[true_class])
