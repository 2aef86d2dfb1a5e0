"""Student training: mini-batch distillation of a fixed dataset into fresh networks.

Ensembles train as one stacked tensor program (leading member axis), but
every member keeps its own initialisation and shuffle stream, so a
member's parameters do not depend on which other members share the stack.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from . import nn
from .errors import ConfigError, ContractError, NumericError
from .losses import (LOSS_KINDS, PROB_FLOOR, LossSpec, loss_and_grad, loss_bc, loss_kl,  # noqa: F401
                     loss_mse, loss_prob, softmax)
from .seeding import rng_for

OPTIMIZERS = ("adam", "sgd")
SHUFFLE_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 6
    lr: float = 1e-4
    optimizer: str = "adam"
    shuffle_seed: int = 0

    def __post_init__(self):
        if int(self.epochs) < 1 or int(self.batch_size) < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")

    def with_(self, **kw):
        return replace(self, **kw)


# (env, dataset kind, loss family) -> (epochs, batch, lr)
_PRESETS = {
    ("reacher", None, "distill"): (500, 6, 1e-4),
    ("fourrooms", "teacher", "distill"): (100, 64, 1e-4),
    ("fourrooms", "explore_go", "distill"): (50, 512, 1e-3),
    ("fourrooms", "mixed", "distill"): (50, 256, 1e-3),
    ("fourrooms", "teacher", "bc"): (1, 64, 1e-3),
    ("fourrooms", "explore_go", "bc"): (1, 64, 1e-3),
    ("fourrooms", "mixed", "bc"): (2, 256, 1e-3),
}


def default_config(env, dataset_kind=None, loss_kind="mse_vector"):
    """Published hyperparameters for an (env, dataset, loss) combination."""
    family = "bc" if loss_kind == "bc_log" else "distill"
    key = (env, None if env == "reacher" else dataset_kind, family)
    if key not in _PRESETS:
        raise ConfigError(f"no default hyperparameters for {key}")
    epochs, batch, lr = _PRESETS[key]
    return TrainConfig(epochs, batch, lr)


@dataclass(frozen=True, eq=False)
class TrainResult:
    stack: nn.ParamStack
    curves: np.ndarray          # (epochs, M) mean batch loss per epoch

    def members(self):
        return self.stack.members()


def _check_targets(data, loss):
    if loss.target_kind != data.target_kind:
        raise ContractError(f"loss {loss.kind!r} needs {loss.target_kind!r} targets, "
                            f"dataset has {data.target_kind!r}")
    if len(data) == 0:
        raise ContractError("empty dataset")


SPARSE_MIN_DIM = 256
SPARSE_MAX_DENSITY = 0.25


def _use_sparse(x):
    return x.shape[1] >= SPARSE_MIN_DIM and np.count_nonzero(x) <= SPARSE_MAX_DENSITY * x.size


def _first_layer(x_csr, w0, b0, idx):
    """Per-member first-layer pre-activations for sparse inputs: ``(M, B, H)``."""
    return np.stack([x_csr[i] @ w for i, w in zip(idx, w0)]) + b0[:, None, :]


def train_ensemble(data, arch, loss, cfg, seeds, features=None):
    """Train ``len(seeds)`` students on ``data``; returns a :class:`TrainResult`.

    ``features`` may pass precomputed network inputs for ``data``.  Wide,
    mostly-zero inputs (such as egocentric grid maps) take a sparse path
    for the first layer; the arithmetic is the same up to summation order.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ContractError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ContractError("ensemble seeds must be distinct")
    _check_targets(data, loss)
    x = data.features() if features is None else np.asarray(features, dtype=np.float64)
    y = data.targets
    n = len(x)
    if x.shape[1] != arch.input_dim:
        raise ContractError(f"architecture expects {arch.input_dim} inputs, data has {x.shape[1]}")
    x_csr = sparse.csr_matrix(x) if _use_sparse(x) else None
    stack = nn.ParamStack.init(arch, seeds)
    params = [np.array(a) for a in stack.weights + stack.biases]
    n_layers = arch.n_layers
    rngs = [rng_for(s, SHUFFLE_STREAM, cfg.shuffle_seed) for s in seeds]
    m = len(seeds)
    bs = int(cfg.batch_size)
    curves = np.zeros((int(cfg.epochs), m))
    opt_state = None
    for epoch in range(int(cfg.epochs)):
        order = np.stack([r.permutation(n) for r in rngs])
        total = np.zeros(m)
        n_batches = 0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[:, start:start + bs]
            ws, bias = params[:n_layers], params[n_layers:]
            if x_csr is None:
                out, cache = nn._forward(ws, bias, x[idx])
            else:
                z0 = _first_layer(x_csr, ws[0], bias[0], idx)
                out, cache = nn._forward(ws[1:], bias[1:], np.maximum(z0, 0.0))
            value, dout = loss_and_grad(loss, out, y[idx])
            if not np.all(np.isfinite(value)):
                bad = seeds[int(np.flatnonzero(~np.isfinite(value))[0])]
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b} (member seed {bad})")
            if x_csr is None:
                gw, gb = nn._backward(ws, cache, dout)
            else:
                gw, gb, dh0 = nn._backward(ws[1:], cache, dout, input_grad=True)
                dz0 = dh0 * (z0 > 0)
                gw = [np.stack([x_csr[i].T @ d for i, d in zip(idx, dz0)])] + list(gw)
                gb = [dz0.sum(axis=-2)] + list(gb)
            grads = list(gw) + list(gb)
            if cfg.optimizer == "adam":
                opt_state = nn.adam_update_inplace(params, grads, opt_state, cfg.lr)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.lr * g
            total += value
            n_batches += 1
        curves[epoch] = total / n_batches
    trained = nn.ParamStack(arch, params[:n_layers], params[n_layers:], seeds)
    return TrainResult(trained, curves)


def train_student(data, arch, loss, cfg, seed, return_curve=False):
    """Train one student; returns its :class:`~distillgen.nn.Params` (and loss curve)."""
    res = train_ensemble(data, arch, loss, cfg, [seed])
    p = res.stack.members()[0]
    return (p, res.curves[:, 0]) if return_curve else p


def curve_csv(curve):
    """``epoch,loss`` CSV text for a 1-D loss curve."""
    rows = ["epoch,loss"] + [f"{i},{float(v):.17g}" for i, v in enumerate(np.asarray(curve).ravel())]
    return "\n".join(rows) + "\n"
