"""Random small instances of every differentiable op for finite-difference checks."""
import numpy as np

from echolatent import ops
from echolatent.tensor import Tensor, backward, parameter
from oracles import numeric_grad, rel_error

KINDS = (
    "add", "sub", "mul", "div", "log", "relu", "sigmoid", "softmax", "dense", "concat",
    "reduce_sum", "reduce_mean", "dropout", "bce_with_logits", "softmax_cross_entropy",
    "conv3d", "transposed_conv3d", "maxpool3d",
)


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def make_case(kind, rng):
    """Return (leaves, fn) where fn(*tensors) builds the op output."""
    n = int(rng.integers(3, 11))
    if kind in ("add", "sub", "mul"):
        a, b = rng.normal(size=(2, n)), rng.normal(size=(1, n))  # broadcast on axis 0
        return [a, b], getattr(ops, kind)
    if kind == "div":
        return [rng.normal(size=n), rng.uniform(0.5, 2.0, n) * rng.choice([-1, 1], n)], ops.div
    if kind == "log":
        return [rng.uniform(0.2, 3.0, n)], ops.log
    if kind == "relu":
        return [_away_from_zero(rng, n)], ops.relu
    if kind == "sigmoid":
        return [rng.normal(size=n) * 3], ops.sigmoid
    if kind == "softmax":
        return [rng.normal(size=(2, n))], lambda x: ops.softmax(x, axis=1)
    if kind == "dense":
        i, o = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        return [rng.normal(size=(2, i)), rng.normal(size=(i, o)), rng.normal(size=o)], ops.dense
    if kind == "concat":
        return [rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 1, 3))], lambda a, b: ops.concat([a, b], axis=1)
    if kind == "reduce_sum":
        return [rng.normal(size=(2, n))], lambda x: ops.reduce_sum(x, axis=1)
    if kind == "reduce_mean":
        return [rng.normal(size=(2, n))], lambda x: ops.reduce_mean(x, axis=0)
    if kind == "dropout":
        seed = int(rng.integers(1 << 30))
        # same seed on every call so the mask is fixed across finite-difference evaluations
        return [rng.normal(size=n)], lambda x: ops.dropout(x, 0.5, np.random.default_rng(seed), training=True)
    if kind == "bce_with_logits":
        t = rng.uniform(0, 1, n)
        return [rng.normal(size=n) * 2], lambda z: ops.bce_with_logits(z, t)
    if kind == "softmax_cross_entropy":
        y = np.eye(2)[rng.integers(0, 2, 5)]
        return [rng.normal(size=(5, 2))], lambda z: ops.softmax_cross_entropy(z, y)
    if kind == "conv3d":
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        x = rng.normal(size=(1, 2, 3, 4, 4))
        w = rng.normal(size=(2, 2, 2, 2, 2))
        b = rng.normal(size=2)
        return [x, w, b], lambda x, w, b: ops.conv3d(x, w, b, stride=s, padding=p)
    if kind == "transposed_conv3d":
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        x = rng.normal(size=(1, 2, 2, 3, 3))
        w = rng.normal(size=(2, 2, 2, 2, 2))
        b = rng.normal(size=2)
        return [x, w, b], lambda x, w, b: ops.conv_transpose3d(x, w, b, stride=s, padding=p)
    if kind == "maxpool3d":
        # distinct values spaced well beyond the finite-difference step
        x = rng.permutation(2 * 4 * 4 * 4).reshape(1, 2, 4, 4, 4) * 0.01 + rng.normal(size=(1, 2, 4, 4, 4)) * 1e-4
        return [x], lambda x: ops.maxpool3d(x, 2)
    raise KeyError(kind)


def check_case(kind, rng, h=1e-5):
    """Relative error between autodiff and central differences for one random instance."""
    arrays, fn = make_case(kind, rng)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe_shape = fn(*[Tensor(a) for a in arrays]).shape
    R = rng.normal(size=probe_shape)

    def scalar(*ts):
        out = fn(*ts)
        return ops.reduce_sum(ops.mul(out, Tensor(R)))

    leaves = [parameter(a) for a in arrays]
    analytic = backward(scalar(*leaves), leaves)
    worst = 0.0
    for i, a in enumerate(arrays):
        def f():
            return scalar(*[Tensor(b) for b in arrays]).item()
        worst = max(worst, rel_error(analytic[i], numeric_grad(f, a, h)))
    return worst
