"""Finite-difference check of every differentiable operator and both training losses."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as tc
from .hmvae import ArchConfig, GaussianParams, LatentPair, Targets, decode, encode, kl_divergence, loss_total, \
    make_variant, reparameterize
from .kinematics import forward_kinematics
from .rotation import rot6d_to_matrix
from .skeleton import build_pooling_plan, neighbors_within, random_tree, skeleton_conv, skeleton_pool, \
    skeleton_unpool, toy7
from .tensor import Tensor
from .trajectory import TrajectoryConfig, integrate_trajectory, make_trajectory_model, predict_root_velocity, \
    trajectory_loss

F64_TOL = 1e-5

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _p(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _case(build) -> Case:
    """Wrap ``build(rng) -> (outputs_fn, params)`` with a frozen random probe."""
    def case(rng):
        fn, params = build(rng)
        w = Tensor(rng.standard_normal(fn().shape))
        return (lambda: (fn() * w).sum()), params
    return case


def _binary(op, b_shape=(4,), positive_b=False):
    def build(rng):
        a = _p(rng, 3, 4)
        b = _p(rng, *b_shape, lo=0.5 if positive_b else -1.0, hi=1.5 if positive_b else 1.0)
        return (lambda: op(a, b)), [a, b]
    return _case(build)


def _elementwise(op, lo=-1.0, hi=1.0):
    def build(rng):
        a = _p(rng, 3, 4, lo=lo, hi=hi)
        # keep leaky_relu inputs away from the kink
        if op is tc.leaky_relu:
            a.data[np.abs(a.data) < 1e-3] = 0.1
        return (lambda: op(a)), [a]
    return _case(build)


def _getitem(rng):
    a = _p(rng, 5, 3)
    idx = np.array([0, 2, 2, 4, 0])
    return (lambda: a[idx, 1:]), [a]


def _concat(rng):
    a, b = _p(rng, 2, 3), _p(rng, 2, 5)
    return (lambda: tc.concat([a, b], axis=1)), [a, b]


def _stack(rng):
    a, b = _p(rng, 2, 3), _p(rng, 2, 3)
    return (lambda: tc.stack([a, b], axis=1)), [a, b]


def _scatter(rng):
    a = _p(rng, 6, 2)
    idx = np.array([0, 3, 3, 1, 0, 2])
    return (lambda: tc.scatter(a, idx, 4)), [a]


def _cumsum(rng):
    a = _p(rng, 2, 5, 3)
    return (lambda: tc.cumsum(a, axis=1)), [a]


def _matmul(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    return (lambda: a @ b), [a, b]


def _cross(rng):
    a, b = _p(rng, 4, 3), _p(rng, 4, 3)
    return (lambda: tc.cross(a, b)), [a, b]


def _linear(rng):
    x, w, b = _p(rng, 2, 5), _p(rng, 5, 3), _p(rng, 3)
    return (lambda: tc.linear(x, w, b)), [x, w, b]


def _reductions(rng):
    a = _p(rng, 3, 4, 2)
    return (lambda: tc.concat([a.sum(axis=1).reshape(6), tc.mean(a, axis=(0, 2)), a.transpose((2, 0, 1)).reshape(24)])), [a]


def _conv(padding, stride):
    def build(rng):
        x, w, b = _p(rng, 2, 9, 3), _p(rng, 3, 3, 4), _p(rng, 4)
        return (lambda: tc.conv1d_temporal(x, w, b, stride=stride, padding=padding)), [x, w, b]
    return _case(build)


def _upsample(rng):
    x = _p(rng, 2, 3, 4)
    return (lambda: tc.upsample_temporal(x, 2)), [x]


def _skel_conv(rng):
    sk = random_tree(6, rng)
    nb = neighbors_within(sk, 2)
    x = _p(rng, 2, 6, sk.n_joints, 3)
    w, b = _p(rng, nb.n_pairs, 3, 3, 2), _p(rng, nb.n_pairs, 2)
    return (lambda: skeleton_conv(x, w, b, nb, stride=2)), [x, w, b]


def _skel_pool(rng):
    plan = build_pooling_plan(toy7())
    x = _p(rng, 2, 3, plan.n_source, 4)
    return (lambda: skeleton_pool(x, plan)), [x]


def _skel_unpool(rng):
    plan = build_pooling_plan(toy7())
    x = _p(rng, 2, 3, plan.n_groups, 4)
    return (lambda: skeleton_unpool(x, plan)), [x]


def _rot6d(rng):
    x = _p(rng, 4, 6)
    return (lambda: rot6d_to_matrix(x)), [x]


def _fk(rng):
    sk = random_tree(7, rng)
    x, root = _p(rng, 3, sk.n_joints, 6), _p(rng, 3, 3)
    return (lambda: forward_kinematics(x, sk, root)), [x, root]


def _kl(rng):
    mu, lv = _p(rng, 3, 5), _p(rng, 3, 5)
    return (lambda: kl_divergence(GaussianParams(mu, lv)).reshape(1)), [mu, lv]


def _integrate(rng):
    v = _p(rng, 2, 6, 3)
    return (lambda: integrate_trajectory(v)), [v]


def _model_loss(variant: str) -> Case:
    def case(rng):
        arch = ArchConfig(variant=variant, window=8, widths=(4, 4, 6, 6), strides=(2, 2, 1, 1),
                          latent_local=3, latent_global=3)
        model = make_variant(arch, toy7(), seed=int(rng.integers(1 << 30)), dtype=np.float64)
        x = rot6d_like(rng, (2, 8, 7))
        targets = Targets.from_windows(x, model.skeleton, np.float64)
        noise_g = rng.standard_normal((2, 3))
        noise_l = rng.standard_normal((2, 3))

        def loss():
            pl, pg = encode(model, Tensor(x))
            zg = reparameterize(pg, noise_g)
            zl = reparameterize(pl, noise_l) if pl is not None else None
            return loss_total(model, x, decode(model, LatentPair(zl, zg)), pl, pg, 0.003, 10.0, targets)[0]
        return loss, list(model.params.values())
    return case


def _trajectory_loss(rng):
    model = make_trajectory_model(TrajectoryConfig(widths=(3, 3, 4, 4)), toy7(),
                                  seed=int(rng.integers(1 << 30)), dtype=np.float64)
    P = rng.standard_normal((2, 6, 7, 3)) * 0.3
    V = rng.standard_normal((2, 6, 3)) * 0.05

    def loss():
        Vp = predict_root_velocity(model, Tensor(P))
        return trajectory_loss(Vp, V, integrate_trajectory(Vp), integrate_trajectory(V))
    return loss, list(model.params.values())


def rot6d_like(rng, shape) -> np.ndarray:
    """Random 6D inputs near valid rotations (columns of a perturbed identity)."""
    base = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    return base + 0.3 * rng.standard_normal(tuple(shape) + (6,))


def cases() -> dict[str, tuple[Case, int | None]]:
    """Name -> (case builder, coordinates sampled per parameter or None for all)."""
    return {
        "add": (_binary(tc.add), None),
        "sub": (_binary(tc.sub), None),
        "mul": (_binary(tc.mul), None),
        "div": (_binary(tc.div, positive_b=True), None),
        "power": (_elementwise(lambda a: tc.power(a, 3.0)), None),
        "square": (_elementwise(tc.square), None),
        "exp": (_elementwise(tc.exp), None),
        "sqrt": (_elementwise(tc.sqrt, lo=0.5, hi=2.0), None),
        "leaky_relu": (_elementwise(tc.leaky_relu), None),
        "sum_mean_reshape_transpose": (_case(_reductions), None),
        "getitem": (_case(_getitem), None),
        "concat": (_case(_concat), None),
        "stack": (_case(_stack), None),
        "scatter": (_case(_scatter), None),
        "cumsum": (_case(_cumsum), None),
        "matmul": (_case(_matmul), None),
        "cross": (_case(_cross), None),
        "linear": (_case(_linear), None),
        "conv1d_same_stride2": (_conv("same", 2), None),
        "conv1d_valid": (_conv("valid", 1), None),
        "upsample_temporal": (_case(_upsample), None),
        "skeleton_conv": (_case(_skel_conv), 40),
        "skeleton_pool": (_case(_skel_pool), None),
        "skeleton_unpool": (_case(_skel_unpool), None),
        "rot6d_to_matrix": (_case(_rot6d), None),
        "forward_kinematics": (_case(_fk), None),
        "kl_divergence": (_case(_kl), None),
        "integrate_trajectory": (_case(_integrate), None),
        "loss_hmvae": (_model_loss("HM-VAE"), 4),
        "loss_mvae": (_model_loss("M-VAE"), 3),
        "loss_tcnvae": (_model_loss("TCN-VAE"), 3),
        "loss_trajectory": (_trajectory_loss, 4),
    }


def run_case(name: str, seed: int) -> float:
    build, coords = cases()[name]
    rng = np.random.default_rng(seed)
    fn, params = build(rng)
    return tc.grad_check(fn, params, max_coords=coords, seed=seed)


def run_suite(seeds: int = 20, seed: int = 0, names: list[str] | None = None, tol: float = F64_TOL) -> list[dict]:
    """Check each case at ``seeds`` seeds in float64; one result dict per case."""
    results = []
    for name in names or list(cases()):
        errs = [run_case(name, seed * 1000 + s) for s in range(seeds)]
        worst = float(max(errs))
        results.append({"name": name, "max_rel_err": worst, "tol": tol, "seeds": seeds, "passed": worst < tol})
    return results
