"""End-to-end experiment drivers shared by the CLI, the demos and the acceptance tests.

Each driver is a pure function of its arguments: every random stream is
derived from the integer seeds passed in, so reruns reproduce results
bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import groups, nn, theory
from .data import build_explore_go, build_mixed, build_plus_ck, build_plus_random, build_training_contexts
from .distill import TrainConfig, train_ensemble
from .ensemble import Ensemble, EnsemblePolicy, EvalReport, evaluate
from .envs import fourrooms as fr
from .envs.micro import L_R, L_T, MicroMDP, micro_returns, optimal_action
from .envs.reacher import DEFAULT_POSE, ReacherContext, ReacherEnv, random_pose, subgroup_contexts
from .errors import ConfigError
from .losses import LossSpec
from .seeding import rng_for
from .teachers import GridPlanner, HandcraftedReacher, IKReacher, PureExplorer

REACHER_HIDDEN = (64, 64, 32)
GRID_HIDDEN = (128, 128)
REACHER_TRAIN = TrainConfig(epochs=500, batch_size=6, lr=1e-3)
# Desk-scale grid schedule: one setting for every dataset kind and loss.
GRID_TRAIN = TrainConfig(epochs=10, batch_size=256, lr=1e-3)
GRID_KINDS = ("teacher", "explore_go", "mixed")
GRID_LOSSES = ("prob_regression", "bc_log")

# Stream tags for rng_for, kept apart so no two experiments share a stream.
_TEST_STREAM = 5
_BASE_STREAM = 11
_RANDOM_STREAM = 12
_POLICY_STREAM = 21
_VISIT_STREAM = 22
_TAIL_STREAM = 31
_HOORFAR_STREAM = 32


def reacher_arch():
    return nn.Architecture(6, REACHER_HIDDEN, 2)


def member_seeds(seed, n):
    """Initialisation seeds of the ``n`` students trained under experiment seed ``seed``."""
    return [int(seed) * 1000 + j for j in range(int(n))]


def make_reacher_teacher(name="ik", env=None):
    if name == "ik":
        return IKReacher(env.cfg if env is not None else None)
    if name == "handcrafted":
        return HandcraftedReacher()
    raise ConfigError(f"unknown reacher teacher {name!r}; expected 'ik' or 'handcrafted'")


def reacher_test_contexts(n=100, seed=0, random_poses=False, stream=0):
    """``n`` contexts at uniform shoulder angles; the arm starts in the default pose unless ``random_poses``.

    Different ``stream`` values give disjoint draws (validation versus test).
    """
    rng = rng_for(seed, _TEST_STREAM, int(random_poses), stream)
    angles = rng.uniform(0.0, 2 * np.pi, size=int(n))
    return [ReacherContext(float(a), random_pose(rng) if random_poses else DEFAULT_POSE) for a in angles]


def single_member_report(ens, contexts, env):
    """Per-context returns of each student alone, averaged over the students of ``ens``."""
    reps = [evaluate(EnsemblePolicy(ens.member(j)), contexts, env=env) for j in range(len(ens))]
    return EvalReport(*(np.mean([getattr(r, f) for r in reps], axis=0)
                        for f in ("returns", "discounted", "success")))


def _prefix_reports(ens, sizes, contexts, env):
    # N=1 uses every trained student rather than the first one, which lowers the variance of the estimate
    return {n: single_member_report(ens, contexts, env) if n == 1
            else evaluate(EnsemblePolicy(ens.subset(n)), contexts, env=env) for n in sizes}


@dataclass
class TrendResult:
    """Per-seed evaluation reports keyed by condition, for test and train contexts."""

    test: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def add(self, key, test_report, train_report):
        self.test.setdefault(key, []).append(test_report)
        self.train.setdefault(key, []).append(train_report)

    def means(self, split="test"):
        reports = self.test if split == "test" else self.train
        return {k: float(np.mean([r.mean for r in v])) for k, v in reports.items()}

    def stds(self, split="test"):
        reports = self.test if split == "test" else self.train
        return {k: float(np.std([r.mean for r in v], ddof=1)) for k, v in reports.items()}


# ---------------------------------------------------------------- reacher trends

def ensemble_size_trend(seeds=range(10), sizes=(1, 10, 100), k=4, teacher="ik", cfg=REACHER_TRAIN, n_test=100,
                        test_seed=0):
    """Test return of nested ensembles (prefixes of one trained stack) on C_k data."""
    sizes = sorted(int(n) for n in sizes)
    env = ReacherEnv()
    train_ctx = subgroup_contexts(k)
    data = build_training_contexts(env, make_reacher_teacher(teacher, env), train_ctx)
    test_ctx = reacher_test_contexts(n_test, test_seed)
    out = TrendResult()
    for seed in seeds:
        res = train_ensemble(data, reacher_arch(), LossSpec("mse_vector"), cfg, member_seeds(seed, sizes[-1]))
        ens = Ensemble(res.stack)
        test = _prefix_reports(ens, sizes, test_ctx, env)
        train = _prefix_reports(ens, sizes, train_ctx, env)
        for n in sizes:
            out.add(n, test[n], train[n])
    return out


def subgroup_trend(seeds=range(10), ks=(2, 4, 8), n_members=1, teacher="ik", cfg=REACHER_TRAIN, n_test=100,
                   test_seed=0):
    """Test and train return of students trained on the C_k training contexts, for each ``k``."""
    env = ReacherEnv()
    test_ctx = reacher_test_contexts(n_test, test_seed)
    out = TrendResult()
    for k in ks:
        train_ctx = subgroup_contexts(k)
        data = build_training_contexts(env, make_reacher_teacher(teacher, env), train_ctx)
        for seed in seeds:
            res = train_ensemble(data, reacher_arch(), LossSpec("mse_vector"), cfg, member_seeds(seed, n_members))
            pol = EnsemblePolicy(Ensemble(res.stack))
            out.add(int(k), evaluate(pol, test_ctx, env=env), evaluate(pol, train_ctx, env=env))
    return out


def base_contexts(seed, n_base=4):
    """``n_base`` training contexts at the C_{n_base} shoulder angles with random joint poses."""
    rng = rng_for(seed, _BASE_STREAM)
    return [ReacherContext(float(a), random_pose(rng)) for a in 2 * np.pi * np.arange(n_base) / n_base]


def diversity_datasets(seed, env, teacher, n_base=4, k=4):
    """The three reacher datasets compared for data diversity, under experiment seed ``seed``."""
    base = base_contexts(seed, n_base)
    tc = build_training_contexts(env, teacher, base)
    ck = build_plus_ck(env, teacher, base, k)
    rnd = build_plus_random(env, teacher, base, target_size=len(ck), rng=rng_for(seed, _RANDOM_STREAM), k=k)
    return base, {"training_contexts": tc, "plus_c4" if k == 4 else "plus_ck": ck, "plus_random": rnd}


def data_diversity_trend(seeds=range(10), n_base=4, k=4, n_members=1, teacher="ik", cfg=REACHER_TRAIN,
                         n_test=100, test_seed=0):
    """Training contexts alone versus the two augmented variants, tested on random poses."""
    env = ReacherEnv()
    t = make_reacher_teacher(teacher, env)
    test_ctx = reacher_test_contexts(n_test, test_seed, random_poses=True)
    out = TrendResult()
    for seed in seeds:
        base, sets = diversity_datasets(seed, env, t, n_base, k)
        for kind, data in sets.items():
            res = train_ensemble(data, reacher_arch(), LossSpec("mse_vector"), cfg, member_seeds(seed, n_members))
            pol = EnsemblePolicy(Ensemble(res.stack))
            out.add(kind, evaluate(pol, test_ctx, env=env), evaluate(pol, base, env=env))
    return out


def so2_probe(n_angles=72):
    return np.linspace(0.0, 2 * np.pi, int(n_angles), endpoint=False)


def invariance_trend(seeds=range(5), ks=(2, 4, 8), n_members=10, teacher="ik", cfg=REACHER_TRAIN, n_angles=72):
    """Max invariance deviation of ensembles trained on C_k-augmented data, per ``k`` and seed.

    Each seed's data is one teacher trajectory from the default-pose
    context, fully augmented under C_k.  The probe is the dataset's own
    base trajectory rotated over an SO(2) grid.  Returns
    ``({k: [deviation per seed]}, spearman rho of deviation against kappa)``.
    """
    env = ReacherEnv()
    base = build_training_contexts(env, make_reacher_teacher(teacher, env), [ReacherContext(0.0, DEFAULT_POSE)])
    angles = so2_probe(n_angles)
    dev = {}
    for k in ks:
        data = groups.augment(base, groups.CyclicSubgroup(int(k)))
        for seed in seeds:
            res = train_ensemble(data, reacher_arch(), LossSpec("mse_vector"), cfg, member_seeds(seed, n_members))
            ens = Ensemble(res.stack)
            d = theory.invariance_deviation(ens.mean_output, base.states, angles)
            dev.setdefault(int(k), []).append(float(d))
    kap = [groups.kappa(groups.CyclicSubgroup(k)) for k in dev for _ in dev[k]]
    vals = [v for k in dev for v in dev[k]]
    rho = float(stats.spearmanr(vals, kap).statistic)
    return dev, rho


def bound_reports(ks=(2, 4, 8), N=10, eps=0.05, gamma=0.3, L_T=1.0, L_R=1.0, L_pi=1.0, seed=0, teacher="ik",
                  cfg=REACHER_TRAIN, n_angles=72, n_test=100, n_visits=2000):
    """Assemble both return-gap bounds for reacher ensembles trained on C_k-augmented data.

    The constants are empirical: C_theta is the least-squares slope
    (through the origin) of the measured invariance deviation against
    kappa across ``ks``; C_sigma is the Lambert-W threshold factor times the
    largest member spread seen on the probe states.  E[W] uses states from
    the teacher's discounted visitation distribution on test contexts.
    Raises :class:`~distillgen.errors.HypothesisError` before training if
    ``gamma * L_T * (1 + L_pi) >= 1``.
    """
    theory.maran_bound(L_T, L_R, L_pi, gamma, 0.0)
    env = ReacherEnv()
    t = make_reacher_teacher(teacher, env)
    base = build_training_contexts(env, t, [ReacherContext(0.0, DEFAULT_POSE)])
    test_ctx = reacher_test_contexts(n_test, seed)
    angles = so2_probe(n_angles)
    probe = np.concatenate([groups.apply(float(a), base.states) for a in angles])

    def act(obs):
        return t.act_batch(np.asarray(obs)[None], np.zeros((1, 2)))[0]

    visits = theory.visitation_sample(env, act, gamma, n_visits, rng_for(seed, _VISIT_STREAM),
                                      init=lambda r: test_ctx[int(r.integers(len(test_ctx)))])
    teacher_ret = evaluate(t, test_ctx, gamma=gamma, env=env).disc_mean
    x = 2.0 / (np.pi * eps ** 2)
    rows = []
    for k in ks:
        data = groups.augment(base, groups.CyclicSubgroup(int(k)))
        res = train_ensemble(data, reacher_arch(), LossSpec("mse_vector"), cfg, member_seeds(seed, N))
        ens = Ensemble(res.stack)
        dev = theory.invariance_deviation(ens.mean_output, base.states, angles)
        spread = float(ens.member_outputs(probe).std(axis=0).max()) if N > 1 else 0.0
        w = float(np.mean(np.linalg.norm(t.act_batch(visits, np.zeros((len(visits), 2))) - ens.mean_output(visits),
                                         axis=1)))
        gap = abs(teacher_ret - evaluate(EnsemblePolicy(ens), test_ctx, gamma=gamma, env=env).disc_mean)
        rows.append(dict(k=int(k), kappa=groups.kappa(int(k)), dev=float(dev), spread=spread, W=w, gap=gap))
    kap = np.array([r["kappa"] for r in rows])
    devs = np.array([r["dev"] for r in rows])
    c_theta = float(kap @ devs / (kap @ kap))
    c_sigma = max(r["spread"] for r in rows) * np.sqrt(N) * np.sqrt(theory.hoorfar_upper(x))
    return [theory.BoundReport(kappa=r["kappa"], k=r["k"], N=int(N), eps=float(eps), gamma=float(gamma),
                               L_T=float(L_T), L_R=float(L_R), L_pi=float(L_pi), C_theta_emp=c_theta,
                               C_sigma_emp=float(c_sigma),
                               thm1_rhs=theory.gti_bound(r["kappa"], c_theta, c_sigma, N, eps, L_T, L_R, L_pi, gamma),
                               thm3_rhs=theory.maran_bound(L_T, L_R, L_pi, gamma, r["W"]),
                               emp_gap=r["gap"], emp_max_inv_dev=r["dev"])
            for r in rows]


# ---------------------------------------------------------------- four rooms

def grid_arch(env):
    return nn.Architecture(env.obs_dim, GRID_HIDDEN, fr.N_ACTIONS)


def grid_datasets(env, contexts, seed, size=20000, K=50, temperature=0.5):
    """Teacher, Explore-Go and Mixed datasets with distillation targets; BC uses ``retarget('index')``."""
    teacher, explorer = GridPlanner(temperature), PureExplorer()
    return {
        "teacher": build_training_contexts(env, teacher, contexts, size, seed=seed),
        "explore_go": build_explore_go(env, teacher, explorer, K, size, contexts, seed=seed),
        "mixed": build_mixed(env, teacher, explorer, size, contexts, seed=seed),
    }


def fourrooms_trend(seeds=range(5), n_members=10, sizes=(1, 10), context_seed=0, n_train=20, n_val=8, n_test=20,
                    size=20000, K=50, kinds=GRID_KINDS, losses=GRID_LOSSES, cfg=GRID_TRAIN, grid_size=13):
    """Test returns for every (loss, dataset kind, N) over experiment seeds.

    The contexts are fixed by ``context_seed``; each experiment seed
    draws fresh datasets and student initialisations.  Keys of the result
    are ``(loss, kind, N)``.
    """
    env = fr.FourRoomsEnv(grid_size)
    train_ctx, _, test_ctx = fr.fourrooms_generate(context_seed, n_train, n_val, n_test, size=grid_size)
    arch = grid_arch(env)
    out = TrendResult()
    for seed in seeds:
        sets = grid_datasets(env, train_ctx, seed, size, K)
        for kind in kinds:
            x = sets[kind].features()
            for loss in losses:
                data = sets[kind] if loss != "bc_log" else sets[kind].retarget("index")
                res = train_ensemble(data, arch, LossSpec(loss), cfg, member_seeds(seed, max(sizes)), features=x)
                ens = Ensemble(res.stack, "probability_vector")
                test = _prefix_reports(ens, sizes, test_ctx, env)
                train = _prefix_reports(ens, sizes, train_ctx, env)
                for n in sizes:
                    out.add((loss, kind, n), test[n], train[n])
    return out


# ---------------------------------------------------------------- theory checks

def kappa_check(ks=range(1, 17), resolution=1e-4):
    """``(k, analytic kappa, grid-search kappa)`` rows."""
    return [(int(k), groups.kappa(groups.CyclicSubgroup(int(k))), groups.kappa_grid(int(k), resolution))
            for k in ks]


@dataclass(frozen=True)
class NTKCheck:
    ensemble_mean: np.ndarray     # trained ensemble mean at the probes
    gp: np.ndarray                # closed-form mean at the probes
    max_abs: float
    interp_error: float           # max |gp_mean(t = inf) - y| on the training inputs
    eta: float
    steps: int


def ntk_points(n_points=3, n_probes=5, radius=0.3, seed=0):
    """Training inputs on a circle of ``radius``, probes at varied radii, and scalar targets."""
    rng = rng_for(seed, 41)
    a = 2 * np.pi * np.arange(n_points) / n_points + rng.uniform(0, 0.5)
    x = radius * np.stack([np.cos(a), np.sin(a)], axis=1)
    b = rng.uniform(0, 2 * np.pi, size=n_probes)
    r = radius * rng.uniform(0.5, 1.2, size=n_probes)
    probes = r[:, None] * np.stack([np.cos(b), np.sin(b)], axis=1)
    y = rng.uniform(-0.3, 0.3, size=n_points)
    return x, y, probes


def ntk_check(width=2048, members=100, n_points=3, n_probes=5, steps=300, eta_scale=0.2, radius=0.3, seed=0):
    """Train a one-hidden-layer ensemble by full-batch gradient descent and compare to the closed form.

    The loss is ``0.5 * sum (f - y)^2`` and the step size is ``eta_scale``
    over the largest NTK eigenvalue, so ``steps`` gradient steps
    correspond to time ``t = steps`` in the closed form.  The NTK is
    estimated from the same initialisations that are trained.
    """
    x, y, probes = ntk_points(n_points, n_probes, radius, seed)
    arch = nn.Architecture(2, (int(width),), 1)
    km = theory.empirical_ntk(arch, np.vstack([x, probes]), members, seed)
    n = len(x)
    theta_train, theta_cross = km.theta[:n, :n], km.theta[n:, :n]
    eta = eta_scale / float(np.linalg.eigvalsh(theta_train).max())
    stack = nn.ParamStack.init(arch, theory.init_seeds(seed, members))
    params = [np.array(a) for a in stack.weights + stack.biases]
    xb = np.broadcast_to(x, (members,) + x.shape)
    for _ in range(int(steps)):
        out, cache = nn._forward(params[:2], params[2:], xb)
        gw, gb = nn._backward(params[:2], cache, out - y[:, None])
        for p, g in zip(params, list(gw) + list(gb)):
            p -= eta * g
    out, _ = nn._forward(params[:2], params[2:], np.broadcast_to(probes, (members,) + probes.shape))
    mean = out[..., 0].mean(axis=0)
    gp = theory.gp_mean(theta_train, theta_cross, y, eta, steps)
    interp = theory.gp_mean(theta_train, theta_train, y, eta, np.inf)
    return NTKCheck(mean, gp, float(np.max(np.abs(mean - gp))), float(np.max(np.abs(interp - y))), eta, int(steps))


@dataclass(frozen=True)
class TailCheck:
    deltas: np.ndarray            # thresholds in units of sigma
    empirical: np.ndarray         # exceedance frequency per threshold
    bound: np.ndarray             # analytic tail bound per threshold
    hoorfar_ok: bool              # Hoorfar threshold >= Newton threshold on every draw


def tail_check(n_ensembles=100_000, n_members=10, n_deltas=20, n_pairs=1000, seed=0):
    """Exceedance of synthetic Gaussian ensemble means against the Monte-Carlo tail bound.

    Members are drawn from ``N(0, 1)``, so the ensemble mean has
    ``sigma = 1 / sqrt(n_members)``; thresholds span 0.1 to 2.5 sigma.
    """
    rng = rng_for(seed, _TAIL_STREAM)
    means = np.zeros(n_ensembles)
    for start in range(0, n_ensembles, 10_000):
        stop = min(start + 10_000, n_ensembles)
        means[start:stop] = rng.standard_normal((stop - start, n_members)).mean(axis=1)
    sigma = 1.0 / np.sqrt(n_members)
    deltas = np.linspace(0.1, 2.5, n_deltas)
    emp = np.array([np.mean(np.abs(means) > d * sigma) for d in deltas])
    bound = theory.mc_tail_bound(sigma, deltas * sigma)
    r2 = rng_for(seed, _HOORFAR_STREAM)
    ok = True
    for s, e in zip(r2.uniform(0.01, 10.0, n_pairs), r2.uniform(1e-4, 0.99, n_pairs)):
        exact, upper = theory.delta_for_confidence(float(s), float(e))
        ok &= upper >= exact
    return TailCheck(deltas, emp, np.asarray(bound), bool(ok))


@dataclass(frozen=True)
class BoundCheck:
    gaps: np.ndarray              # |J(pi*) - J(pi)| per perturbed policy
    bounds: np.ndarray            # maran_bound with the sampled E[W]
    bound_se: np.ndarray          # standard error of the bound from E[W] sampling
    lipschitz: np.ndarray         # Lipschitz constants of the perturbed policies (upper bounds)


def perturbed_policy(rng, max_lipschitz=2.0):
    """``pi(s) = clip(-2 s (1 - a) + beta sin(w s + phi) + b)``; its Lipschitz constant stays below ``max_lipschitz``.

    Returns ``(policy, lipschitz upper bound)``.
    """
    a = rng.uniform(0.0, 0.5)
    w = rng.uniform(1.0, 10.0)
    slack = max_lipschitz - 2.0 * (1.0 - a)
    beta = rng.uniform(0.0, slack / w)
    phi = rng.uniform(0.0, 2 * np.pi)
    b = rng.uniform(-0.3, 0.3)

    def pi(s):
        return np.clip(-2.0 * np.asarray(s) * (1.0 - a) + beta * np.sin(w * np.asarray(s) + phi) + b, -1.0, 1.0)

    return pi, 2.0 * (1.0 - a) + beta * w


def micro_bound_check(n_policies=20, gamma=0.3, n_visits=10_000, n_starts=20_001, seed=0):
    """Return gaps of perturbed policies on the micro MDP against the Lipschitz bound.

    Initial states are uniform on [-1, 1]; returns are averaged over a
    dense grid of starts and E[W] is sampled from the optimal policy's
    discounted visitation distribution.
    """
    env = MicroMDP()
    s0 = np.linspace(-1.0, 1.0, int(n_starts))
    j_star, _ = micro_returns(optimal_action, s0, gamma)
    visits = theory.visitation_sample(env, lambda o: float(optimal_action(o[0])), gamma, n_visits,
                                      rng_for(seed, _VISIT_STREAM))[:, 0]
    rng = rng_for(seed, _POLICY_STREAM)
    gaps, bounds, ses, lips = [], [], [], []
    for _ in range(int(n_policies)):
        pi, lip = perturbed_policy(rng)
        j, _ = micro_returns(pi, s0, gamma)
        w = np.abs(optimal_action(visits) - pi(visits))
        gaps.append(abs(float(j_star.mean() - j.mean())))
        bounds.append(theory.maran_bound(L_T, L_R, lip, gamma, w.mean()))
        ses.append(theory.maran_bound(L_T, L_R, lip, gamma, w.std(ddof=1) / np.sqrt(len(w))))
        lips.append(lip)
    return BoundCheck(np.array(gaps), np.array(bounds), np.array(ses), np.array(lips))
