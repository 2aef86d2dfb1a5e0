"""Dense ReLU networks with exact backpropagation.

Weights are stored as ``(n_in, n_out)`` matrices, so a layer computes
``h @ W + b``.  Every routine here also accepts *stacked* parameters with
a leading member axis, which is how ensembles are trained and evaluated
in one pass (see :class:`ParamStack`).
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .losses import loss_and_grad


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(w) < 1 for w in widths):
            raise ConfigError(f"all layer widths must be >= 1, got {widths}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def sizes(self):
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def n_layers(self):
        return len(self.hidden) + 1

    @property
    def n_params(self):
        s = self.sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "output_dim": self.output_dim, "activation": self.activation}


@dataclass(frozen=True, eq=False)
class Params:
    arch: Architecture
    seed: int
    weights: tuple
    biases: tuple

    def __post_init__(self):
        for w in self.weights + self.biases:
            w.flags.writeable = False

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def to_json(self):
        layers = [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)]
        return json.dumps({"arch": self.arch.to_dict(), "seed": self.seed, "layers": layers})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        arch = Architecture(**obj["arch"])
        ws = tuple(np.array(layer["w"], dtype=np.float64).reshape(a, b)
                   for layer, a, b in zip(obj["layers"], arch.sizes[:-1], arch.sizes[1:]))
        bs = tuple(np.array(layer["b"], dtype=np.float64) for layer in obj["layers"])
        return cls(arch, int(obj["seed"]), ws, bs)


@dataclass(frozen=True, eq=False)
class GradientBundle:
    weights: tuple
    biases: tuple
    loss: float

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def init(arch, seed):
    """Gaussian fan-in initialisation: W ~ N(0, 1/n_in), b = 0."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0]))
    ws, bs = [], []
    for n_in, n_out in zip(arch.sizes[:-1], arch.sizes[1:]):
        ws.append(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))
        bs.append(np.zeros(n_out))
    return Params(arch, int(seed), tuple(ws), tuple(bs))


# -- core math, shared by single and stacked parameters -------------------

def _forward(weights, biases, x):
    """Forward pass returning the output and the cache needed for backprop."""
    h = x
    cache = [x]
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b[..., None, :]
        if i < last:
            cache.append(z)
            h = np.maximum(z, 0.0)
            cache.append(h)
        else:
            h = z
    return h, cache


def _backward(weights, cache, dout, input_grad=False):
    """Gradients of ``sum(dout * output)`` w.r.t. every weight and bias.

    With ``input_grad`` the gradient w.r.t. the network input is appended.
    """
    n = len(weights)
    dws, dbs = [None] * n, [None] * n
    dz = dout
    for i in range(n - 1, -1, -1):
        h_prev = cache[2 * i]
        dws[i] = np.swapaxes(h_prev, -1, -2) @ dz
        dbs[i] = dz.sum(axis=-2)
        if i:
            # relu'(0) := 0
            dz = (dz @ np.swapaxes(weights[i], -1, -2)) * (cache[2 * i - 1] > 0)
    if input_grad:
        return dws, dbs, dz @ np.swapaxes(weights[0], -1, -2)
    return dws, dbs


def _check_input(arch, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != arch.input_dim:
        raise ContractError(f"input has dimension {x.shape[-1]}, network expects {arch.input_dim}")
    return x


def forward(p, x):
    """Network output for a single input vector or a batch ``(B, input_dim)``."""
    x = _check_input(p.arch, x)
    out, _ = _forward(p.weights, p.biases, np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def grad(p, states, targets, loss):
    """Exact gradient of the mean batch loss (``bc_log`` keeps its batch sum)."""
    x = _check_input(p.arch, np.atleast_2d(states))
    if x.shape[0] == 0:
        raise ContractError("empty batch")
    out, cache = _forward(p.weights, p.biases, x)
    bad = ~np.all(np.isfinite(out), axis=-1)
    if bad.any():
        raise NumericError(f"non-finite network output at sample {int(np.argmax(bad))}")
    value, dout = loss_and_grad(loss, out, np.asarray(targets))
    dws, dbs = _backward(p.weights, cache, dout)
    return GradientBundle(tuple(dws), tuple(dbs), float(value))


def adam_update(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step on lists of arrays; returns (new_params, new_state)."""
    t = state["t"] + 1 if state else 1
    ms = state["m"] if state else [np.zeros_like(g) for g in grads]
    vs = state["v"] if state else [np.zeros_like(g) for g in grads]
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, ms, vs):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, {"t": t, "m": new_m, "v": new_v}


def adam_update_inplace(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam on arrays owned by the caller; returns the updated state.

    Folds the bias corrections into the step size and epsilon, which is
    algebraically identical to :func:`adam_update` and avoids temporaries.
    """
    if not state:
        state = {"t": 0, "m": [np.zeros_like(g) for g in grads], "v": [np.zeros_like(g) for g in grads]}
    t = state["t"] + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    step_size = lr * np.sqrt(c2) / c1
    eps_hat = eps * np.sqrt(c2)
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        np.multiply(g, g, out=g)
        v *= beta2
        v += (1.0 - beta2) * g
        np.sqrt(v, out=g)
        g += eps_hat
        np.divide(m, g, out=g)
        g *= step_size
        p -= g
    state["t"] = t
    return state


def step(p, g, opt="sgd", lr=1e-3, opt_state=None):
    """Apply one optimiser update; returns ``(new_params, new_opt_state)``."""
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    for a, b in zip(p.weights + p.biases, g.weights + g.biases):
        if a.shape != b.shape:
            raise ContractError(f"gradient shape {b.shape} does not match parameter shape {a.shape}")
    n = len(p.weights)
    params = list(p.weights) + list(p.biases)
    grads = list(g.weights) + list(g.biases)
    if opt == "sgd":
        new = [a - lr * b for a, b in zip(params, grads)]
        state = opt_state
    elif opt == "adam":
        new, state = adam_update(params, grads, opt_state, lr)
    else:
        raise ConfigError(f"unknown optimiser {opt!r}")
    return Params(p.arch, p.seed, tuple(new[:n]), tuple(new[n:])), state


def per_layer_grads(p, x):
    """Per-layer flattened gradients of the scalar output at ``x``.

    Layer ``l`` contributes ``concat(dW_l.ravel(), db_l)``; concatenating
    the list gives the full parameter gradient in :meth:`Params.flat` order.
    """
    if p.arch.output_dim != 1:
        raise ContractError("per_layer_grads needs a scalar-output network")
    x = _check_input(p.arch, x).reshape(1, -1)
    _, cache = _forward(p.weights, p.biases, x)
    dws, dbs = _backward(p.weights, cache, np.ones((1, 1)))
    return [np.concatenate([dw.ravel(), db.ravel()]) for dw, db in zip(dws, dbs)]


class ParamStack:
    """``M`` networks of one architecture stored with a leading member axis."""

    def __init__(self, arch, weights, biases, seeds):
        self.arch = arch
        self.weights = list(weights)
        self.biases = list(biases)
        self.seeds = tuple(int(s) for s in seeds)

    @classmethod
    def from_params(cls, members):
        members = list(members)
        if not members:
            raise ContractError("need at least one member")
        arch = members[0].arch
        if any(m.arch != arch for m in members):
            raise ContractError("members have differing architectures")
        ws = [np.stack([m.weights[i] for m in members]) for i in range(arch.n_layers)]
        bs = [np.stack([m.biases[i] for m in members]) for i in range(arch.n_layers)]
        return cls(arch, ws, bs, [m.seed for m in members])

    @classmethod
    def init(cls, arch, seeds):
        return cls.from_params(init(arch, s) for s in seeds)

    def __len__(self):
        return len(self.seeds)

    def members(self):
        return [Params(self.arch, s, tuple(w[i].copy() for w in self.weights),
                       tuple(b[i].copy() for b in self.biases))
                for i, s in enumerate(self.seeds)]

    def subset(self, n):
        return ParamStack(self.arch, [w[:n] for w in self.weights], [b[:n] for b in self.biases],
                          self.seeds[:n])

    def select(self, idx):
        idx = [int(i) for i in np.atleast_1d(idx)]
        return ParamStack(self.arch, [w[idx] for w in self.weights], [b[idx] for b in self.biases],
                          [self.seeds[i] for i in idx])

    def forward(self, x):
        """Outputs of every member: ``(M, B, output_dim)`` for ``x`` of shape ``(B, d)`` or ``(M, B, d)``."""
        x = _check_input(self.arch, x)
        out, _ = _forward(self.weights, self.biases, x)
        return out
