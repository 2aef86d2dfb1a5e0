"""Distillation and behaviour-cloning losses.

Public ``loss_*`` functions take the student's outputs in their natural
space (action vectors, or probability vectors for the stochastic losses)
and return the scalar loss.  :func:`loss_and_grad` is the training-side
entry point: it takes raw network outputs (logits for the stochastic
losses), applies the softmax head where needed and returns the loss
together with its gradient with respect to the raw outputs.  It works on
stacked member arrays of shape ``(..., n, d)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

PROB_FLOOR = 1e-8
LOSS_KINDS = ("mse_scalar", "mse_vector", "prob_regression", "kl_entropy", "bc_log")


@dataclass(frozen=True)
class LossSpec:
    kind: str
    entropy_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.entropy_weight < 0:
            raise ContractError("entropy_weight must be >= 0")
        if self.entropy_weight and self.kind != "kl_entropy":
            raise ContractError("entropy_weight only applies to kl_entropy")

    @property
    def softmax_head(self):
        return self.kind in ("prob_regression", "kl_entropy", "bc_log")

    @property
    def target_kind(self):
        """``'vector'``, ``'prob'`` or ``'index'``: the dataset target this loss consumes."""
        if self.kind in ("mse_scalar", "mse_vector"):
            return "vector"
        if self.kind == "bc_log":
            return "index"
        return "prob"


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _as_batch(outputs, targets):
    out = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if out.shape[-2] == 0:
        raise ContractError("empty batch")
    if out.shape != tgt.shape:
        raise ContractError(f"outputs {out.shape} and targets {tgt.shape} differ in shape")
    return out, tgt


def _check_prob(q):
    if np.any(q < 0) or not np.allclose(q.sum(axis=-1), 1.0, atol=1e-9):
        raise ContractError("probability targets must be non-negative and sum to 1")


def loss_mse(outputs, targets):
    """Mean over samples of the squared L2 distance between action vectors."""
    out, tgt = _as_batch(outputs, targets)
    return float(np.mean(np.sum((out - tgt) ** 2, axis=-1)))


def loss_prob(outputs, targets):
    """Mean squared L2 distance between student and teacher probability vectors."""
    out, tgt = _as_batch(outputs, targets)
    _check_prob(tgt)
    return float(np.mean(np.sum((out - tgt) ** 2, axis=-1)))


def loss_kl(outputs, targets, lam=0.0):
    """Mean of KL(student || teacher) plus ``lam`` times the mean student entropy."""
    out, tgt = _as_batch(outputs, targets)
    _check_prob(tgt)
    log_p = np.log(np.maximum(out, PROB_FLOOR))
    log_q = np.log(np.maximum(tgt, PROB_FLOOR))
    kl = np.sum(out * (log_p - log_q), axis=-1)
    ent = -np.sum(out * log_p, axis=-1)
    return float(np.mean(kl) + lam * np.mean(ent))


def loss_bc(outputs, targets):
    """Negative log-likelihood of the taken actions, summed over the batch."""
    out = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    idx = np.atleast_1d(np.asarray(targets)).astype(np.int64)
    if out.shape[0] == 0:
        raise ContractError("empty batch")
    if idx.shape != (out.shape[0],) or np.any(idx < 0) or np.any(idx >= out.shape[1]):
        raise ContractError("action indices out of range")
    p = out[np.arange(len(idx)), idx]
    return float(-np.sum(np.log(np.maximum(p, PROB_FLOOR))))


def _softmax_backward(p, g):
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))


def loss_and_grad(spec, raw, targets):
    """Loss and d(loss)/d(raw) for raw outputs of shape ``(..., n, d)``.

    ``targets`` is ``(n, d)`` for vector/probability targets or ``(n,)``
    integer indices for ``bc_log``; it broadcasts over leading axes of
    ``raw``.  Returns ``(loss, grad)`` with ``loss`` of shape ``raw.shape[:-2]``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n = raw.shape[-2]
    if n == 0:
        raise ContractError("empty batch")
    kind = spec.kind
    if kind in ("mse_scalar", "mse_vector"):
        r = raw - targets
        return np.sum(r * r, axis=(-2, -1)) / n, 2.0 * r / n

    p = softmax(raw)
    if kind == "prob_regression":
        r = p - targets
        return np.sum(r * r, axis=(-2, -1)) / n, _softmax_backward(p, 2.0 * r / n)

    if kind == "kl_entropy":
        lam = spec.entropy_weight
        log_p = np.log(np.maximum(p, PROB_FLOOR))
        log_q = np.log(np.maximum(targets, PROB_FLOOR))
        kl = np.sum(p * (log_p - log_q), axis=(-2, -1)) / n
        ent = -np.sum(p * log_p, axis=(-2, -1)) / n
        g = ((log_p - log_q + 1.0) - lam * (log_p + 1.0)) / n
        return kl + lam * ent, _softmax_backward(p, g)

    # bc_log: sum over the batch of -ln p(a|s)
    idx = np.asarray(targets).astype(np.int64)
    onehot = np.eye(p.shape[-1])[idx]
    p_taken = np.sum(p * onehot, axis=-1)
    loss = -np.sum(np.log(np.maximum(p_taken, PROB_FLOOR)), axis=-1)
    active = (p_taken > PROB_FLOOR)[..., None]
    return loss, np.where(active, p - onehot, 0.0)
