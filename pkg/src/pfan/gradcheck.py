"""Central-difference gradient checks for every differentiable operator and the toy model.

Each scope builds small random 64-bit inputs, a function of them, and a fixed
random projection that turns the output into a scalar. Analytic gradients come
from the tape; numeric ones from central differences with step 1e-5. Inputs are
drawn away from kinks (ReLU at 0, integer sampling coordinates, clip bounds),
and any entry whose two probes change a discrete decision of a piecewise op
(a ReLU sign, a pooling argmax, a bilinear sampling cell, ...) is skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .losses import LossConfig, content_loss, frequency_loss
from .tensor import (
    GradientTape,
    Tensor,
    absolute,
    backward,
    clip,
    concat_channels,
    exp,
    leaky_relu,
    precision,
    record_branches,
    reduce_mean,
    reduce_sum,
    relu,
    repeat_batch,
    scale,
    square,
    take,
)

STEP = 1e-5
OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
FLOOR = 1e-8


@dataclass
class CheckResult:
    scope: str
    errors: dict          # input / parameter class -> max relative error
    tolerance: float
    checked: int          # number of scalar entries compared
    skipped: int = 0      # entries whose difference probes straddled a kink

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list:
        out = [f"{self.scope:<16} {name:<40} {err:.3e}" for name, err in self.errors.items()]
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"{self.scope:<16} {'max':<40} {self.max_error:.3e}  (tol {self.tolerance:g}, "
                   f"{self.checked} entries, {self.skipped} kink-straddling skipped) {verdict}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    """max |a - n| / max(|a|, |n|) over entries where |a| + |n| >= floor."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    keep = np.abs(a) + np.abs(n) >= floor
    if not keep.any():
        return 0.0
    a, n = a[keep], n[keep]
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a), np.abs(n))))


def _project(out, weights: np.ndarray) -> Tensor:
    if isinstance(out, tuple):
        parts = [reduce_sum(o * Tensor(w), axis=(0, 1, 2, 3), keepdims=True) for o, w in zip(out, weights)]
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        return total
    return reduce_sum(out * Tensor(weights), axis=tuple(range(out.data.ndim)), keepdims=True)


def _central(value, flat: np.ndarray, i: int, step: float) -> tuple:
    """Central difference at ``flat[i]``; also reports whether the two probes
    took different branches of a piecewise operation than the base point."""
    orig = flat[i]
    with record_branches() as base:
        value()
    flat[i] = orig + step
    with record_branches() as up:
        hi = value()
    flat[i] = orig - step
    with record_branches() as down:
        lo = value()
    flat[i] = orig
    kinked = not (_same(base, up) and _same(base, down))
    return (hi - lo) / (2 * step), kinked


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _compare(analytic: np.ndarray, flat: np.ndarray, value, rng, entries, step):
    """Relative error over up to ``entries`` kink-free positions (all when None)."""
    order = np.arange(flat.size) if entries is None else rng.permutation(flat.size)
    kept, numeric, skipped = [], [], 0
    for i in order:
        if entries is not None and len(kept) >= entries:
            break
        n, kinked = _central(value, flat, int(i), step)
        if kinked:
            skipped += 1
            continue
        kept.append(int(i))
        numeric.append(n)
    if not kept:
        return 0.0, 0, skipped
    return relative_error(analytic.reshape(-1)[kept], np.array(numeric)), len(kept), skipped


def check_function(fn, inputs: dict, rng: np.random.Generator, entries: int | None = None,
                   step: float = STEP) -> dict:
    """Max relative error per input of ``fn(**tensors)`` against central differences.

    ``entries`` limits the number of randomly chosen positions per input.
    Returns ``{name: (error, count)}``.
    """
    with precision(np.float64):
        leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in inputs.items()}
        out = fn(**leaves)
        proj = ([rng.normal(size=o.dims) for o in out] if isinstance(out, tuple)
                else rng.normal(size=out.dims))
        with GradientTape() as tape:
            out = fn(**leaves)
            root = _project(out, proj)
        grads = backward(tape, root)

        def value() -> float:
            return float(_project(fn(**leaves), proj).data.sum())

        result = {}
        for name, leaf in leaves.items():
            analytic = grads.get(leaf, np.zeros(leaf.dims))
            err, count, _ = _compare(analytic, leaf.data.reshape(-1), value, rng, entries, step)
            result[name] = (err, count)
    return result


# ------------------------------------------------------------------ scopes


def _away(rng, shape, margin=0.1, low=-1.0, high=1.0):
    """Uniform values whose magnitude is at least ``margin`` (avoids kinks at 0)."""
    x = rng.uniform(margin, max(abs(low), high), size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _frac_offsets(rng, shape, span=2):
    """Offsets whose fractional part stays in [0.05, 0.95]."""
    return rng.integers(-span, span, size=shape) + rng.uniform(0.05, 0.95, size=shape)


def _shape(rng, c=None):
    n = int(rng.integers(1, 3))
    c = c or int(rng.integers(1, 4))
    return (n, c, int(rng.integers(2, 6)), int(rng.integers(2, 6)))


def _even_shape(rng):
    return (int(rng.integers(1, 3)), int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3)))


def _scope_builders():
    def binary(op):
        def build(rng):
            s = _shape(rng)
            t = (s[0], 1, s[2], s[3]) if rng.random() < 0.5 else s
            return {"a": rng.normal(size=s), "b": rng.uniform(0.5, 2.0, size=t)}, op
        return build

    def unary(op, sampler=None):
        def build(rng):
            s = _shape(rng)
            x = sampler(rng, s) if sampler else rng.normal(size=s)
            return {"x": x}, lambda x: op(x)
        return build

    def conv(stride):
        def build(rng):
            s = _shape(rng)
            cout = int(rng.integers(1, 4))
            k = int(rng.choice([1, 3]))
            inputs = {"x": rng.normal(size=s), "w": rng.normal(size=(cout, s[1], k, k)),
                      "b": rng.normal(size=(cout,))}
            return inputs, lambda x, w, b: ops.conv2d(x, w, b, stride=stride)
        return build

    def deform(rng):
        n, c, h, w = _shape(rng)
        g = 2 if c % 2 == 0 and rng.random() < 0.5 else 1
        k = 3
        cout = int(rng.integers(1, 4))
        inputs = {
            "x": rng.normal(size=(n, c, h, w)),
            "w": rng.normal(size=(cout, c, k, k)),
            "b": rng.normal(size=(cout,)),
            "offset": _frac_offsets(rng, (n, 2 * g * k * k, h, w)),
            "mask": rng.uniform(0.1, 1.0, size=(n, g * k * k, h, w)),
        }
        return inputs, lambda x, w, b, offset, mask: ops.deform_conv(x, w, b, offset, mask, groups=g)

    def maxpool(rng):
        s = _even_shape(rng)
        x = rng.permutation(np.prod(s)).reshape(s) * 0.1 + rng.uniform(0, 0.01, size=s)
        return {"x": x}, lambda x: ops.max_pool_2x2(x)

    def resample(op):
        def build(rng):
            return {"x": rng.normal(size=_even_shape(rng))}, lambda x: op(x)
        return build

    def fft(rng):
        return {"x": rng.normal(size=_shape(rng))}, lambda x: ops.fft2(x)

    def concat(rng):
        s = _shape(rng)
        t = (s[0], int(rng.integers(1, 4)), s[2], s[3])
        return {"a": rng.normal(size=s), "b": rng.normal(size=t)}, lambda a, b: concat_channels([a, b])

    def slicing(rng):
        s = _shape(rng, c=3)
        return {"x": rng.normal(size=s)}, lambda x: take(x, 1, 3, axis=1)

    def repeat(rng):
        return {"x": rng.normal(size=_shape(rng))}, lambda x: repeat_batch(x, 3)

    def reductions(rng):
        return {"x": rng.normal(size=_shape(rng))}, lambda x: (
            reduce_sum(x, axis=1, keepdims=True), reduce_mean(x, axis=(2, 3), keepdims=True))

    def losses(kind):
        def build(rng):
            s = _even_shape(rng)
            fine = rng.normal(size=s)
            coarse = rng.normal(size=(s[0], s[1], s[2] // 2, s[3] // 2))
            targets = [Tensor(rng.normal(size=fine.shape)), Tensor(rng.normal(size=coarse.shape))]
            cfg = LossConfig(supervised=(1, 2))
            f = content_loss if kind == "content" else frequency_loss
            return {"s1": fine, "s2": coarse}, lambda s1, s2: f([s1, s2], targets, cfg)
        return build

    return {
        "add": binary(lambda a, b: a + b),
        "sub": binary(lambda a, b: a - b),
        "mul": binary(lambda a, b: a * b),
        "div": binary(lambda a, b: a / b),
        "relu": unary(relu, _away),
        "leaky_relu": unary(leaky_relu, _away),
        "square": unary(square),
        "abs": unary(absolute, _away),
        "exp": unary(exp),
        "scale": unary(lambda x: scale(x, -1.7)),
        "clip": unary(lambda x: clip(x, -0.5, 0.5),
                      lambda rng, s: rng.choice([-1, 1], size=s) * rng.choice([0.2, 0.8], size=s)
                      + rng.uniform(-0.05, 0.05, size=s)),
        "sigmoid": unary(ops.sigmoid),
        "reductions": reductions,
        "concat": concat,
        "take": slicing,
        "repeat": repeat,
        "conv2d": conv(1),
        "conv2d_stride2": conv(2),
        "deform_conv": deform,
        "max_pool": maxpool,
        "down2": resample(ops.down2),
        "up2": resample(ops.up2),
        "fft2": fft,
        "content_loss": losses("content"),
        "frequency_loss": losses("frequency"),
    }


OP_SCOPES = tuple(_scope_builders())


def check_op(scope: str, seed: int = 0, trials: int = 3) -> CheckResult:
    builders = _scope_builders()
    if scope not in builders:
        raise KeyError(f"unknown gradcheck scope {scope!r}; choose from {', '.join(builders)} or model")
    rng = np.random.default_rng(seed)
    errors: dict = {}
    count = 0
    for _ in range(trials):
        inputs, fn = builders[scope](rng)
        for name, (err, n) in check_function(fn, inputs, rng).items():
            errors[name] = max(errors.get(name, 0.0), err)
            count += n
    return CheckResult(scope, errors, OP_TOLERANCE, count)


def toy_model(seed: int = 0):
    """Two-level, three-frame network with small widths; offset and mask heads
    are given random final layers so sampling leaves integer coordinates."""
    from .model import PFAN, ModelConfig

    with precision(np.float64):
        model = PFAN(ModelConfig(levels=2, widths=(4, 6), blocks=1, radius=1), seed=seed)
    rng = np.random.default_rng(seed + 7)
    for lvl in model.aligner.levels:
        for head in (lvl.offset_net, lvl.mask_net):
            head.conv2.weight.data = rng.normal(0.0, 0.3, size=head.conv2.weight.dims)
            head.conv2.bias.data = rng.uniform(0.05, 0.45, size=head.conv2.bias.dims)
    for head in model.decoder.heads:
        head.weight.data = rng.normal(0.0, 0.1, size=head.weight.dims)
    return model


def check_model(seed: int = 0, size: int = 16, entries: int = 4) -> CheckResult:
    """Full-network check: content loss of a 16x16, K=2, N=1 toy model against
    random targets, at ``entries`` random positions of every parameter tensor."""
    model = toy_model(seed)
    rng = np.random.default_rng(seed + 11)
    frames = [Tensor(rng.uniform(0, 1, size=(1, 3, size, size))) for _ in range(3)]
    targets = [Tensor(rng.uniform(0, 1, size=(1, 3, size, size))),
               Tensor(rng.uniform(0, 1, size=(1, 3, size // 2, size // 2)))]
    cfg = LossConfig(supervised=(1, 2))
    params = dict(model.named_parameters())
    errors = {}
    count = skipped = 0
    with precision(np.float64):
        for name, p in params.items():
            p.data = p.data.astype(np.float64)
        with GradientTape() as tape:
            root = content_loss(model(frames).images, targets, cfg)
        grads = backward(tape, root)

        def value() -> float:
            return float(content_loss(model(frames).images, targets, cfg).data.sum())

        for name, p in params.items():
            analytic = grads.get(p, np.zeros(p.dims))
            err, n, k = _compare(analytic, p.data.reshape(-1), value, rng, entries, STEP)
            cls = _param_class(name)
            errors[cls] = max(errors.get(cls, 0.0), err)
            count += n
            skipped += k
    return CheckResult("model", errors, MODEL_TOLERANCE, count, skipped)


def _param_class(name: str) -> str:
    """Group parameter names by module path with list indices removed."""
    parts = [p for p in name.split(".") if not p.isdigit()]
    return ".".join(parts)


def run(scope: str, seed: int = 0) -> list:
    """Results for one scope, every op scope ("ops"), or everything ("all")."""
    if scope in ("model", "full-model"):
        return [check_model(seed)]
    if scope == "ops":
        return [check_op(s, seed) for s in OP_SCOPES]
    if scope == "all":
        return [check_op(s, seed) for s in OP_SCOPES] + [check_model(seed)]
    return [check_op(scope, seed)]
