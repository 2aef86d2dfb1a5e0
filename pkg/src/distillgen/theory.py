"""Kernel regime of wide ensembles, Monte-Carlo tail bounds and performance bounds.

Kernels follow the convention that gradient descent on
``0.5 * sum_i (f(x_i) - y_i)**2`` with step ``eta`` gives, in the
infinite-width limit, ``df/dt = -eta * Theta (f - y)``.  The transient
factor is therefore ``T_t = I - exp(-eta * Theta * t)``, which decays to
the interpolating solution as ``t`` grows.
"""

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import ContractError, HypothesisError, NumericError
from .groups import apply
from .seeding import rng_for

RIDGE = 1e-10
MAX_COND = 1e14
PSD_TOL = 1e-8


# ---------------------------------------------------------------- kernels

@dataclass(frozen=True, eq=False)
class KernelMatrices:
    theta: np.ndarray = None     # NTK estimate (n, n)
    K: np.ndarray = None         # NNGP estimate (n, n)
    points: np.ndarray = None
    M: int = 0


def init_seeds(seed, M):
    """Member seeds ``seed * 1_000_003 + m``, shared by kernel estimation and ensemble training."""
    return [int(seed) * 1_000_003 + m for m in range(int(M))]


def layer_grams(p, x):
    """Per-layer Gram matrices of parameter gradients of a scalar network at inputs ``x``.

    For a dense layer ``z = h W + b`` the gradient of the output is
    ``h (outer) delta`` for ``W`` and ``delta`` for ``b``, so the Gram
    matrix is ``(H H^T + 1) * (D D^T)`` elementwise.
    """
    if p.arch.output_dim != 1:
        raise ContractError("kernels need a scalar-output network")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _, cache = nn._forward(p.weights, p.biases, x)
    n_layers = len(p.weights)
    delta = np.ones((len(x), 1))
    grams = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        h = cache[2 * i]
        grams[i] = (h @ h.T + 1.0) * (delta @ delta.T)
        if i:
            delta = (delta @ p.weights[i].T) * (cache[2 * i - 1] > 0)
    return grams


def ntk_gram(p, x):
    """Empirical NTK of a single network: the layer-summed gradient Gram matrix."""
    return sum(layer_grams(p, x))


def _kernels(arch, points, M, seed, ntk=True, nngp=True):
    if arch.output_dim != 1:
        raise ContractError("kernels need a scalar-output network")
    if int(M) < 1:
        raise ContractError("need at least one initialisation")
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(x)
    theta = np.zeros((n, n))
    k = np.zeros((n, n))
    for s in init_seeds(seed, M):
        p = nn.init(arch, s)
        if ntk:
            theta += ntk_gram(p, x)
        if nngp:
            f = nn.forward(p, x)[:, 0]
            k += np.outer(f, f)
    theta = 0.5 * (theta + theta.T) / M
    k = 0.5 * (k + k.T) / M
    return KernelMatrices(theta if ntk else None, k if nngp else None, x, int(M))


def empirical_ntk(arch, points, M, seed=0):
    """Average over ``M`` initialisations of the layer-summed gradient inner products."""
    return _kernels(arch, points, M, seed, nngp=False)


def empirical_nngp(arch, points, M, seed=0):
    """Monte-Carlo estimate of ``E[f(x) f(x')]`` at initialisation."""
    return _kernels(arch, points, M, seed, ntk=False)


def empirical_kernels(arch, points, M, seed=0):
    """Both kernels from the same ``M`` initialisations."""
    return _kernels(arch, points, M, seed)


# ---------------------------------------------------------------- closed-form ensemble

def _transient(theta_train, eta, t):
    """``Theta^-1 T_t`` through a symmetric eigendecomposition."""
    theta = np.asarray(theta_train, dtype=np.float64)
    if eta < 0 or t < 0:
        raise ContractError("eta and t must be non-negative")
    lam, vec = np.linalg.eigh(0.5 * (theta + theta.T))
    lam = np.clip(lam, 0.0, None)
    if lam.min() < RIDGE:
        lam = lam + RIDGE
    if lam.max() / lam.min() > MAX_COND:
        raise NumericError(f"NTK matrix is numerically singular (condition number {lam.max() / lam.min():.3g})")
    if np.isinf(t):
        factor = 1.0 / lam
    else:
        factor = -np.expm1(-eta * lam * t) / lam
    return (vec * factor) @ vec.T


def gp_mean(theta_train, theta_cross, y, eta, t):
    """Mean prediction ``Theta(x, X) Theta^-1 (I - exp(-eta Theta t)) Y`` for each row of ``theta_cross``.

    ``t = np.inf`` gives the interpolating limit.
    """
    a = np.atleast_2d(theta_cross) @ _transient(theta_train, eta, t)
    return a @ np.asarray(y, dtype=np.float64)


def gp_variance(theta_train, theta_cross, k_train, k_cross, k_query, eta, t,
                theta_cross2=None, k_cross2=None):
    """Covariance of the trained infinite ensemble between query sets ``x`` and ``x'``.

    ``Sigma = K(x, x') + A K(X, X) A'^T - (A K(X, x') + K(x, X) A'^T)``
    with ``A = Theta(x, X) Theta^-1 T_t``.  ``theta_cross2``/``k_cross2``
    describe ``x'`` and default to ``x``; for a square query the result is
    projected onto the PSD cone, and a negative eigenvalue beyond
    tolerance raises :class:`NumericError`.
    """
    same = theta_cross2 is None
    tc1 = np.atleast_2d(theta_cross)
    tc2 = tc1 if same else np.atleast_2d(theta_cross2)
    kc1 = np.atleast_2d(k_cross)
    kc2 = kc1 if k_cross2 is None else np.atleast_2d(k_cross2)
    trans = _transient(theta_train, eta, t)
    a1 = tc1 @ trans
    a2 = tc2 @ trans
    sigma1 = a1 @ np.asarray(k_train) @ a2.T
    sigma2 = a1 @ kc2.T
    cov = np.atleast_2d(k_query) + sigma1 - (sigma2 + kc1 @ a2.T)
    if not same:
        return cov
    cov = 0.5 * (cov + cov.T)
    lam, vec = np.linalg.eigh(cov)
    tol = PSD_TOL * max(1.0, float(np.max(np.abs(np.diag(np.atleast_2d(k_query))))))
    if lam.min() < -tol:
        raise NumericError(f"covariance has a negative eigenvalue {lam.min():.3g}")
    if lam.min() < 0:
        cov = (vec * np.clip(lam, 0.0, None)) @ vec.T
    return cov


# ---------------------------------------------------------------- invariance

def invariance_deviation(f, s, angles, per_state=False):
    """Largest ``|f(s) - f(g s)|`` over the rotation angles ``angles``.

    ``f`` maps a batch of 6-D states to outputs; an object with a
    ``mean_output`` method (an ensemble) is accepted as well.
    """
    fn = f.mean_output if hasattr(f, "mean_output") else f
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    base = np.asarray(fn(s)).reshape(len(s), -1)
    dev = np.zeros(len(s))
    for g in np.atleast_1d(angles):
        out = np.asarray(fn(apply(float(g), s))).reshape(len(s), -1)
        dev = np.maximum(dev, np.abs(out - base).max(axis=1))
    return dev if per_state else float(dev.max())


# ---------------------------------------------------------------- Monte-Carlo tail bound

def mc_tail_bound(sigma, delta):
    """Gaussian tail bound ``sqrt(2/pi) (sigma/delta) exp(-delta^2 / (2 sigma^2))``.

    Bounds ``P[|X - mu| > delta]`` for ``X ~ N(mu, sigma^2)``; the raw value
    may exceed 1.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(sigma <= 0) or np.any(delta <= 0):
        raise ContractError("sigma and delta must be positive")
    out = np.sqrt(2.0 / np.pi) * (sigma / delta) * np.exp(-delta ** 2 / (2.0 * sigma ** 2))
    return float(out) if out.ndim == 0 else out


def lambert_w0(x, tol=1e-12, max_iter=100):
    """Principal branch of Lambert W for ``x >= 0`` by Newton's method."""
    x = float(x)
    if x < 0:
        raise ContractError("lambert_w0 is implemented for x >= 0")
    w = np.log1p(x)
    for _ in range(max_iter):
        ew = np.exp(w)
        step = (w * ew - x) / (ew * (w + 1.0))
        w -= step
        if abs(step) <= tol * max(1.0, abs(w)):
            return float(w)
    raise NumericError(f"Lambert W iteration did not converge for x={x!r}")


def hoorfar_upper(x):
    """Upper bound ``ln((2x + 1) / (1 + ln(x + 1)))`` on ``W0(x)``."""
    return float(np.log((2.0 * x + 1.0) / (1.0 + np.log1p(x))))


def delta_for_confidence(sigma, eps):
    """Threshold where the tail bound equals ``eps``: ``(delta_exact, delta_upper)``."""
    if not 0.0 < eps < 1.0:
        raise ContractError("eps must lie in (0, 1)")
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    x = 2.0 / (np.pi * eps ** 2)
    return sigma * np.sqrt(lambert_w0(x)), sigma * np.sqrt(hoorfar_upper(x))


# ---------------------------------------------------------------- performance bounds

def _lipschitz_factor(L_T, L_R, L_pi, gamma):
    if not 0.0 <= gamma < 1.0:
        raise ContractError("gamma must lie in [0, 1)")
    product = gamma * L_T * (1.0 + L_pi)
    if product >= 1.0:
        raise HypothesisError(
            f"gamma * L_T * (1 + L_pi) = {product:.17g} must be < 1 for the bound to hold", product)
    return L_R / ((1.0 - gamma) * (1.0 - product))


def maran_bound(L_T, L_R, L_pi, gamma, expected_W):
    """Return-gap bound for Lipschitz MDPs and policies, linear in the expected Wasserstein distance."""
    return _lipschitz_factor(L_T, L_R, L_pi, gamma) * float(expected_W)


def gti_bound(kappa, C_theta, C_sigma, N, eps, L_T, L_R, L_pi, gamma):
    """Student return-gap bound: the Lipschitz factor times ``kappa C_theta + C_sigma / sqrt(N)``."""
    if int(N) < 1:
        raise ContractError("N must be >= 1")
    if not 0.0 < eps < 1.0:
        raise ContractError("eps must lie in (0, 1)")
    return _lipschitz_factor(L_T, L_R, L_pi, gamma) * (kappa * C_theta + C_sigma / np.sqrt(N))


def wasserstein_deterministic(pi1, pi2, states):
    """Mean ``|pi1(s) - pi2(s)|`` over ``states``: W1 between Dirac action distributions."""
    s = np.asarray(states, dtype=np.float64)
    return float(np.mean(np.abs(np.asarray(pi1(s), dtype=np.float64) - np.asarray(pi2(s), dtype=np.float64))))


def visitation_sample(env, policy, gamma, n, rng, init=None, return_steps=False):
    """States from the gamma-discounted visitation distribution of ``policy``.

    Each sample draws a stopping step ``t`` with ``P(t) = (1 - gamma) gamma^t``,
    starts an episode from ``init(rng)`` and returns the state reached at
    step ``t`` (or the last state if the episode ends first).  ``policy``
    maps an observation to an action.
    """
    if not 0.0 <= gamma < 1.0:
        raise ContractError("gamma must lie in [0, 1)")
    init = init or (lambda r: r.uniform(-1.0, 1.0))
    out, steps = [], []
    for _ in range(int(n)):
        stop = int(rng.geometric(1.0 - gamma)) - 1
        ctx = init(rng)
        state = env.reset(ctx)
        t = 0
        while t < stop:
            res = env.step(state, ctx, policy(env.observe(state, ctx)))
            if res.terminated:
                break
            state = res.state
            t += 1
            if res.truncated:
                break
        out.append(env.observe(state, ctx))
        steps.append(t)
    states = np.array(out)
    return (states, np.array(steps)) if return_steps else states


def lipschitz_estimate(f, x1, x2):
    """Largest sampled ratio ``|f(x1) - f(x2)| / |x1 - x2|``; a lower bound on the true constant."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    num = np.asarray(f(x1), dtype=np.float64) - np.asarray(f(x2), dtype=np.float64)
    num = np.linalg.norm(num.reshape(len(x1), -1), axis=1)
    den = np.linalg.norm((x1 - x2).reshape(len(x1), -1), axis=1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if ok.any() else 0.0


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class BoundReport:
    kappa: float
    k: int
    N: int
    eps: float
    gamma: float
    L_T: float
    L_R: float
    L_pi: float
    C_theta_emp: float
    C_sigma_emp: float
    thm1_rhs: float
    thm3_rhs: float
    emp_gap: float
    emp_max_inv_dev: float

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not np.isfinite(v):
                raise NumericError(f"bound report field {name} is not finite")
        if not 0.0 < self.eps < 1.0:
            raise ContractError("eps must lie in (0, 1)")


BOUND_COLUMNS = ("kappa", "k", "N", "eps", "C_theta_emp", "C_sigma_emp", "thm1_rhs", "thm3_rhs", "emp_gap",
                 "emp_max_inv_dev")


def bound_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUND_COLUMNS)
    for r in reports:
        d = asdict(r)
        w.writerow([d[c] if c in ("k", "N") else f"{float(d[c]):.17g}" for c in BOUND_COLUMNS])
    return buf.getvalue()
