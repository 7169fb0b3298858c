"""Central finite-difference verification of tape gradients.

Errors are measured norm-wise per leaf: ``|g_tape - g_fd| / max(|g_tape|, |g_fd|)``
(Euclidean norms), treating two all-zero gradients as an exact match.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import losses
from . import tensor as tn
from .model import Architecture, TdmModel, VideoCube
from .tensor import ContractError, Tensor

STEP = 1e-5
RTOL = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    per_leaf: dict[str, float]
    rtol: float = RTOL

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.rtol)

    def to_dict(self) -> dict:
        return {"name": self.name, "max_rel_error": self.max_rel_error, "passed": self.passed}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / scale


def numeric_grad(f: Callable[[], Tensor], leaf: Tensor, step: float = STEP) -> np.ndarray:
    """d f / d leaf by central differences, perturbing ``leaf.data`` in place."""
    g = np.zeros_like(leaf.data)
    flat, gflat = leaf.data.reshape(-1), g.reshape(-1)
    with tn.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
    return g


def check(f: Callable[[], Tensor], leaves: Sequence[Tensor], name: str = "fn",
          step: float = STEP, rtol: float = RTOL) -> GradcheckResult:
    """Compare tape gradients of the scalar ``f()`` with central differences for each leaf."""
    for leaf in leaves:
        if leaf.dtype != np.float64:
            raise ContractError("gradcheck needs 64-bit leaves")
        leaf.zero_grad()
    tn.backward(f())
    errs = {}
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad.copy()
        errs[leaf.name or f"leaf{i}"] = relative_error(analytic, numeric_grad(f, leaf, step))
    return GradcheckResult(name, max(errs.values()), errs, rtol)


# -- op catalogue ------------------------------------------------------------------

def _leaf(rng, shape, name, lo=None):
    data = rng.standard_normal(shape) if lo is None else rng.uniform(lo, lo + 1.5, shape)
    return Tensor(data, requires_grad=True, dtype=np.float64, name=name)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    # fixed random projection turns any output into a scalar with a generic gradient
    r = Tensor(rng.standard_normal(out.shape))
    return lambda y: tn.sum_(y * r)


def _unary(op, positive=False):
    def build(rng):
        x = _leaf(rng, (3, 4), "x", lo=0.5 if positive else None)
        return (lambda: op(x)), [x]
    return build


def _binary(op, positive_b=False):
    def build(rng):
        a = _leaf(rng, (3, 4), "a")
        b = _leaf(rng, (4,), "b", lo=0.5 if positive_b else None)  # broadcast
        return (lambda: op(a, b)), [a, b]
    return build


def _abs(rng):
    x = _leaf(rng, (3, 4), "x")
    x.data += np.sign(x.data) * 0.1  # keep away from the kink
    return (lambda: tn.abs_(x)), [x]


def _max(rng):
    x = _leaf(rng, (3, 5), "x")
    return (lambda: tn.max_(x, axis=1)), [x]


def _conv2d(rng):
    x = _leaf(rng, (2, 3, 5, 6), "x")
    w = _leaf(rng, (4, 3, 3, 3), "weight")
    b = _leaf(rng, (4,), "bias")
    return (lambda: tn.conv2d(x, w, b)), [x, w, b]


def _conv1d_fixed(rng):
    x = _leaf(rng, (3, 12), "x")
    k = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    return (lambda: tn.conv1d_fixed(x, k)), [x]


def _batchnorm(rng):
    x = _leaf(rng, (3, 2, 4, 4), "x")
    g = _leaf(rng, (2,), "gamma")
    b = _leaf(rng, (2,), "beta")
    rm, rv = np.zeros(2), np.ones(2)
    return (lambda: tn.batchnorm2d(x, g, b, rm, rv, training=True)), [x, g, b]


def _batchnorm_eval(rng):
    x = _leaf(rng, (3, 2, 4, 4), "x")
    g = _leaf(rng, (2,), "gamma")
    b = _leaf(rng, (2,), "beta")
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
    return (lambda: tn.batchnorm2d(x, g, b, rm, rv, training=False)), [x, g, b]


def _avgpool(rng):
    x = _leaf(rng, (2, 3, 5, 7), "x")
    return (lambda: tn.avgpool2d(x)), [x]


def _spatial_mean(rng):
    x = _leaf(rng, (4, 3, 2, 3), "x")
    return (lambda: tn.spatial_mean(x)), [x]


def _concat(rng):
    a, b = _leaf(rng, (2, 5), "a"), _leaf(rng, (3, 5), "b")
    return (lambda: tn.concat_channels([a, b])), [a, b]


def _stack(rng):
    a, b = _leaf(rng, (5,), "a"), _leaf(rng, (5,), "b")
    return (lambda: tn.stack([a, b])), [a, b]


def _conv1x1(rng):
    x = _leaf(rng, (4, 9), "x")
    w = _leaf(rng, (2, 4), "weight")
    b = _leaf(rng, (2,), "bias")
    return (lambda: tn.conv1x1(x, w, b)), [x, w, b]


def _mse(rng):
    a, b = _leaf(rng, (10,), "a"), _leaf(rng, (10,), "b")
    return (lambda: tn.mse_reduce(a, b)), [a, b]


def _npc(rng):
    a, b = _leaf(rng, (16,), "y_hat"), _leaf(rng, (16,), "y")
    return (lambda: losses.npc_loss(a, b)), [a]


def _mcc(rng):
    a, b = _leaf(rng, (40,), "y_hat"), _leaf(rng, (40,), "y")
    return (lambda: losses.mcc_loss(a, b.data, fs=10.0)), [a]


def _talos(rng):
    y_hat = _leaf(rng, (40,), "y_hat")
    y = rng.standard_normal(40)
    dist = losses.ShiftDistribution("s", losses.shift_values(10.0))
    dist.logits.data[...] = rng.standard_normal(dist.logits.shape)
    dist.logits.name = "theta"
    return (lambda: losses.talos_loss(y_hat, y, dist)), [y_hat, dist.logits]


OPS: dict[str, Callable] = {
    "add": _binary(tn.add),
    "sub": _binary(tn.sub),
    "mul": _binary(tn.mul),
    "div": _binary(tn.div, positive_b=True),
    "neg": _unary(tn.neg),
    "pow": _unary(lambda x: tn.pow_(x, 3.0)),
    "sqrt": _unary(tn.sqrt, positive=True),
    "exp": _unary(tn.exp),
    "log": _unary(tn.log, positive=True),
    "tanh": _unary(tn.tanh),
    "abs": _abs,
    "sum": _unary(lambda x: tn.sum_(x, axis=0)),
    "mean": _unary(lambda x: tn.mean(x, axis=1, keepdims=True)),
    "max": _max,
    "reshape": _unary(lambda x: tn.reshape(x, (4, 3))),
    "transpose": _unary(tn.transpose),
    "getitem": _unary(lambda x: x[1:, ::2]),
    "shift": _unary(lambda x: tn.shift(x, 2)),
    "softmax": _unary(tn.softmax),
    "conv2d": _conv2d,
    "conv1d_fixed": _conv1d_fixed,
    "batchnorm2d": _batchnorm,
    "batchnorm2d_eval": _batchnorm_eval,
    "avgpool2d": _avgpool,
    "spatial_mean": _spatial_mean,
    "concat_channels": _concat,
    "stack": _stack,
    "conv1x1": _conv1x1,
    "mse_reduce": _mse,
    "npc_loss": _npc,
    "mcc_loss": _mcc,
    "talos_loss": _talos,
}


def check_op(name: str, seed: int = 0, step: float = STEP, rtol: float = RTOL) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    fn, leaves = OPS[name](rng)
    out = fn()
    if out.size == 1:
        scalar = fn
    else:
        proj = _project(out, rng)
        scalar = lambda: proj(fn())  # noqa: E731
    return check(scalar, leaves, name=name, step=step, rtol=rtol)


def check_model_talos(seed: int = 0, arch: Architecture | None = None, frames: int = 6,
                      step: float = STEP, rtol: float = RTOL) -> GradcheckResult:
    """Full forward (training-mode BN) through TALOS on a tiny random video."""
    arch = arch or Architecture(height=8, width=8)
    rng = np.random.default_rng(seed)
    model = TdmModel(arch, seed=seed)
    video = VideoCube(rng.uniform(0.0, 1.0, (frames, 3, arch.height, arch.width)))
    y = rng.standard_normal(frames)
    dist = losses.ShiftDistribution("toy", np.arange(-2, 3))
    dist.logits.data[...] = rng.standard_normal(5)
    dist.logits.name = "theta"
    fn = lambda: losses.talos_loss(model(video, "train"), y, dist)  # noqa: E731
    return check(fn, model.parameters() + [dist.logits], name="model+talos", step=step, rtol=rtol)


def run_all(seeds: Sequence[int] = (0,), include_model: bool = True,
            model_arch: Architecture | None = None) -> list[GradcheckResult]:
    results = []
    for seed in seeds:
        results.extend(check_op(name, seed) for name in OPS)
        if include_model:
            results.append(check_model_talos(seed, model_arch))
    return results
