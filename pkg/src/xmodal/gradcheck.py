"""Central finite-difference gradient checking for every differentiable op.

Each check builds a scalar function of one input, compares the reverse-mode
gradient against central differences with step 1e-5 in float64, and reports
the worst relative error. The numerical side never calls backward, so the
two routes stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn_ops, tensor as T

FD_STEP = 1e-5
OP_TOL = 1e-4


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function, one element at a time."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise |a-n| / max(1, |a|, |n|)."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


def check_scalar_fn(fn: Callable[[T.Tensor], T.Tensor], x0: np.ndarray, step: float = FD_STEP) -> float:
    """Compare backward() against central differences for loss = fn(x)."""
    xt = T.Tensor(x0.astype(np.float64), requires_grad=True)
    loss = fn(xt)
    T.backward(loss)
    analytic = xt.grad.copy()

    def value(arr):
        with T.no_grad():
            return fn(T.Tensor(arr)).item()

    numeric = numerical_gradient(value, x0.astype(np.float64), step)
    return rel_error(analytic, numeric)


def _weighted_sum(t: T.Tensor, rng: np.random.Generator) -> tuple[np.ndarray, Callable]:
    # random projection to a scalar so every output element is exercised
    w = rng.standard_normal(t.shape)

    def reduce(out: T.Tensor) -> T.Tensor:
        return T.tsum(T.mul(out, T.Tensor(w)))

    return w, reduce


@dataclass
class OpReport:
    op: str
    max_rel_err: float
    cases: int
    tol: float = OP_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


@dataclass
class GradcheckReport:
    ops: list[OpReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.ops)


def _check_many(name: str, cases, tol: float = OP_TOL) -> OpReport:
    worst = 0.0
    n = 0
    for fn, x0 in cases:
        worst = max(worst, check_scalar_fn(fn, x0))
        n += 1
    return OpReport(name, worst, n, tol)


def op_cases(seed: int = 0, cases_per_op: int = 20):
    """Yield (op_name, [(scalar_fn, input), ...]) for every differentiable op."""
    rng = np.random.default_rng(seed)

    def rand(*shape):
        return rng.standard_normal(shape)

    def conv2d_case():
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        k = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        weight = T.Tensor(rand(cout, cin, k, k))
        bias = T.Tensor(rand(cout))
        x0 = rand(1, cin, h, w)
        _, reduce = _weighted_sum(
            nn_ops.conv2d(T.Tensor(x0), weight, bias, stride, pad), rng
        )
        return (lambda x: reduce(nn_ops.conv2d(x, weight, bias, stride, pad))), x0

    def conv2d_weight_case():
        x = T.Tensor(rand(1, 2, 5, 5))
        bias = T.Tensor(rand(2))
        w0 = rand(2, 2, 3, 3)
        _, reduce = _weighted_sum(nn_ops.conv2d(x, T.Tensor(w0), bias, 1, 1), rng)
        return (lambda w: reduce(nn_ops.conv2d(x, w, bias, 1, 1))), w0

    def conv3d_case():
        gin, gout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        d, h, w = int(rng.integers(3, 5)), int(rng.integers(3, 5)), int(rng.integers(3, 5))
        k = int(rng.choice([1, 3]))
        stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
        pad = (k // 2,) * 3
        weight = T.Tensor(rand(gout, gin, k, k, k))
        bias = T.Tensor(rand(gout))
        x0 = rand(1, gin, d, h, w)
        _, reduce = _weighted_sum(
            nn_ops.conv3d(T.Tensor(x0), weight, bias, stride, pad), rng
        )
        return (lambda x: reduce(nn_ops.conv3d(x, weight, bias, stride, pad))), x0

    def conv3d_weight_case():
        x = T.Tensor(rand(1, 2, 3, 4, 4))
        bias = T.Tensor(rand(2))
        w0 = rand(2, 2, 3, 3, 3)
        _, reduce = _weighted_sum(nn_ops.conv3d(x, T.Tensor(w0), bias, (1, 1, 1), (1, 1, 1)), rng)
        return (lambda w: reduce(nn_ops.conv3d(x, w, bias, (1, 1, 1), (1, 1, 1)))), w0

    def relu_case():
        x0 = rand(int(rng.integers(2, 6)), int(rng.integers(2, 6)))
        x0[np.abs(x0) < 1e-3] += 0.1  # stay away from the kink
        _, reduce = _weighted_sum(T.Tensor(x0), rng)
        return (lambda x: reduce(T.relu(x))), x0

    def add_case():
        shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        y = T.Tensor(rand(*shape))
        x0 = rand(*shape)
        _, reduce = _weighted_sum(y, rng)
        return (lambda x: reduce(T.add(T.mul(x, x), y))), x0

    def concat_case():
        n = int(rng.integers(2, 5))
        other = T.Tensor(rand(3, n))
        x0 = rand(2, n)
        out0 = T.concat([T.Tensor(x0), other], axis=0)
        _, reduce = _weighted_sum(out0, rng)
        return (lambda x: reduce(T.concat([x, other], axis=0))), x0

    def gap_case():
        x0 = rand(2, int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        _, reduce = _weighted_sum(nn_ops.global_avg_pool(T.Tensor(x0)), rng)
        return (lambda x: reduce(nn_ops.global_avg_pool(x))), x0

    def fc_case():
        fin, fout = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        w = T.Tensor(rand(fin, fout))
        b = T.Tensor(rand(fout))
        x0 = rand(3, fin)
        _, reduce = _weighted_sum(nn_ops.fully_connected(T.Tensor(x0), w, b), rng)
        return (lambda x: reduce(nn_ops.fully_connected(x, w, b))), x0

    def fc_weight_case():
        x = T.Tensor(rand(3, 4))
        b = T.Tensor(rand(5))
        w0 = rand(4, 5)
        _, reduce = _weighted_sum(nn_ops.fully_connected(x, T.Tensor(w0), b), rng)
        return (lambda w: reduce(nn_ops.fully_connected(x, w, b))), w0

    def l2norm_case():
        x0 = rand(3, int(rng.integers(2, 6)))
        _, reduce = _weighted_sum(T.Tensor(x0), rng)
        return (lambda x: reduce(nn_ops.l2_normalize(x))), x0

    def ce_case():
        n_id = int(rng.integers(2, 8))
        b = int(rng.integers(1, 5))
        targets = rng.integers(0, n_id, size=b)
        x0 = rand(b, n_id)
        return (lambda x: nn_ops.softmax_cross_entropy(x, targets)), x0

    def reshape_case():
        x0 = rand(2, 3, 4)
        _, reduce = _weighted_sum(T.Tensor(x0.reshape(4, 6)), rng)
        return (lambda x: reduce(T.reshape_view(T.reshape_view(x, (24,)), (4, 6)))), x0

    def sum_case():
        x0 = rand(3, 4)
        axis = int(rng.integers(0, 2))
        _, reduce = _weighted_sum(T.tsum(T.Tensor(x0), axis=axis), rng)
        return (lambda x: reduce(T.tsum(T.mul(x, x), axis=axis))), x0

    def index_rows_case():
        x0 = rand(5, 3)
        idx = rng.integers(0, 5, size=6)
        _, reduce = _weighted_sum(T.index_rows(T.Tensor(x0), idx), rng)
        return (lambda x: reduce(T.index_rows(x, idx))), x0

    builders = {
        "conv2d": conv2d_case,
        "conv2d_weight": conv2d_weight_case,
        "conv3d": conv3d_case,
        "conv3d_weight": conv3d_weight_case,
        "relu": relu_case,
        "add_mul": add_case,
        "concat": concat_case,
        "global_avg_pool": gap_case,
        "fully_connected": fc_case,
        "fully_connected_weight": fc_weight_case,
        "l2_normalize": l2norm_case,
        "softmax_cross_entropy": ce_case,
        "reshape_view": reshape_case,
        "sum": sum_case,
        "index_rows": index_rows_case,
    }
    for name, build in builders.items():
        yield name, [build() for _ in range(cases_per_op)]


def run_op_suite(seed: int = 0, cases_per_op: int = 20) -> GradcheckReport:
    report = GradcheckReport()
    for name, cases in op_cases(seed, cases_per_op):
        report.ops.append(_check_many(name, cases))
    return report


def _micro_model(seed: int = 0):
    from .network import Model, NetConfig

    config = NetConfig(
        image_shape=(1, 6, 4),
        backbone_channels=(2, 2, 4),
        backbone_strides=(1, 1, 1),
        appearance_channels=(2, 2),
        depth=2,
        relation_channels=2,
        num_parts=2,
        num_identities=2,
        embed_dim=3,
    )
    return Model.initialize(config, seed)


def check_network(seed: int = 0, step: float = FD_STEP) -> dict[str, float]:
    """End-to-end check on a tiny two-identity model: loss = sum of all
    part embeddings; every parameter's reverse-mode gradient is compared
    against central differences. Returns max relative error per group."""
    model = _micro_model(seed)
    mods = np.array([0, 1])

    # pick an input whose relu pre-activations all sit well away from the
    # kink, so central differences never straddle a nondifferentiable point
    images = None
    for trial in range(64):
        rng = np.random.default_rng(seed + 1000 * trial)
        candidate = rng.standard_normal((2,) + model.config.image_shape)
        with T.no_grad(), T.trace_relu_margins() as margins:
            model.forward(candidate, mods)
        if min(margins) > 200 * step:
            images = candidate
            break
    if images is None:
        raise RuntimeError("could not find a kink-free input for the network check")

    def loss_value() -> float:
        bundle = model.forward(images, mods)
        return T.add(
            T.tsum(T.concat([bundle.parts[k] for k in sorted(bundle.parts)], axis=1)), 0.0
        )

    loss = loss_value()
    T.backward(loss)
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for n, t in model.params.items()}
    for _, t in model.params.items():
        t.zero_grad()

    worst: dict[str, float] = {}
    with T.no_grad():
        for name, t in model.params.items():
            numeric = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            nf = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = loss_value().item()
                flat[i] = orig - step
                fm = loss_value().item()
                flat[i] = orig
                nf[i] = (fp - fm) / (2 * step)
            group = model.params.group_of(name)
            err = rel_error(analytic[name], numeric)
            worst[group] = max(worst.get(group, 0.0), err)
    return worst


NETWORK_TOL = 1e-3


def run_full_suite(seed: int = 0, cases_per_op: int = 20) -> GradcheckReport:
    """Op-level checks plus the end-to-end network check."""
    report = run_op_suite(seed, cases_per_op)
    for group, err in check_network(seed).items():
        report.ops.append(OpReport(f"network[{group}]", err, 1, NETWORK_TOL))
    return report
