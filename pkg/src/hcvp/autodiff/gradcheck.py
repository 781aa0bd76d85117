"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import functional as F
from .tensor import Tensor, concat

# Relative error floor: below this gradient magnitude the comparison is
# effectively absolute, so finite-difference noise on near-zero entries
# does not show up as a large ratio.
_REL_FLOOR = 1e-3


@dataclass
class GradcheckReport:
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0

    def failures(self, tol: float = 1e-4) -> dict[str, float]:
        return {k: v for k, v in self.per_tensor.items() if v > tol}

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in sorted(self.per_tensor.items())]
        lines.append(f"max: {self.max_error:.3e}")
        return "\n".join(lines)


def gradcheck(
    build_loss: Callable[[], Tensor],
    wrt: dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradcheckReport:
    """Compare analytic gradients of a scalar loss against central differences.

    ``build_loss`` must rebuild the loss from scratch on every call, reading
    the tensors in ``wrt`` (it is invoked 2 times per checked coordinate).
    When ``max_coords`` is given, that many coordinates are sampled per
    tensor; otherwise every coordinate is perturbed.
    """
    for t in wrt.values():
        t.grad = None
    loss = build_loss()
    if not np.isfinite(loss.item()):
        raise FloatingPointError("gradcheck: loss is not finite")
    loss.backward()
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else np.array(t.grad, copy=True))
        for name, t in wrt.items()
    }
    for t in wrt.values():
        t.grad = None

    report = GradcheckReport()
    for name, t in wrt.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        ref = analytic[name].reshape(-1)
        for idx in coords:
            saved = flat[idx]
            flat[idx] = saved + h
            up = build_loss().item()
            flat[idx] = saved - h
            down = build_loss().item()
            flat[idx] = saved
            numeric = (up - down) / (2.0 * h)
            a = ref[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
            if err > worst:
                worst = err
        report.per_tensor[name] = worst
    return report


# ----------------------------------------------------------------------
# built-in suite over every primitive

def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _away_from_kink(rng, *shape) -> Tensor:
    # keep inputs off the relu corner so the central difference is valid
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < 0.1, x + 0.2, x)
    return Tensor(x, requires_grad=True)


def _positive(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(0.5, 2.0, shape), requires_grad=True)


def primitive_checks(seed: int = 0) -> list[tuple[str, Callable[[], GradcheckReport]]]:
    """One named gradcheck per primitive, on randomized shapes up to 4-d."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, Callable[[], GradcheckReport]]] = []

    def simple(name, inputs: dict[str, Tensor], expr):
        # fixed projection weights so build_loss is the same function on
        # every finite-difference evaluation
        w = Tensor(np.random.default_rng(seed + 1 + len(checks)).standard_normal(expr().shape))

        def run():
            return gradcheck(lambda: (expr() * w).sum(), inputs)

        checks.append((name, run))

    a2 = _rand(rng, 3, 4)
    b2 = _rand(rng, 3, 4)
    a4 = _rand(rng, 2, 3, 2, 4)
    b4 = _rand(rng, 2, 3, 2, 4)
    brow = _rand(rng, 4)

    simple("add", {"a": a2, "b": b2}, lambda: a2 + b2)
    simple("add_broadcast", {"a": a4, "b": brow}, lambda: a4 + brow)
    simple("sub", {"a": a4, "b": b4}, lambda: a4 - b4)
    simple("mul", {"a": a4, "b": b4}, lambda: a4 * b4)
    dpos = _positive(rng, 2, 3, 2, 4)
    simple("div", {"a": a4, "b": dpos}, lambda: a4 / dpos)
    simple("scalar_ops", {"a": a4}, lambda: (2.5 * a4 + 1.0) / 2.0 - (1.0 - a4))
    simple("rdiv_scalar", {"a": dpos}, lambda: 3.0 / dpos)
    simple("pow", {"a": dpos}, lambda: dpos ** 1.7)
    rk = _away_from_kink(rng, 2, 3, 2, 4)
    simple("relu", {"a": rk}, lambda: rk.relu())
    simple("gelu", {"a": a4}, lambda: F.gelu(a4))
    simple("exp", {"a": a2}, lambda: a2.exp())
    simple("log", {"a": dpos}, lambda: dpos.log())
    simple("sqrt", {"a": dpos}, lambda: dpos.sqrt())

    ma = _rand(rng, 3, 5)
    mb = _rand(rng, 5, 4)
    simple("matmul", {"a": ma, "b": mb}, lambda: ma @ mb)
    sa = _rand(rng, 2, 3, 4, 5)
    sb = _rand(rng, 2, 3, 5, 2)
    simple("matmul_batched", {"a": sa, "b": sb}, lambda: sa @ sb)

    simple("reshape", {"a": a4}, lambda: a4.reshape((6, 8)))
    simple("transpose", {"a": a4}, lambda: a4.transpose((3, 1, 0, 2)))
    simple("broadcast_to", {"a": brow}, lambda: brow.broadcast_to((2, 3, 4)))
    simple("narrow", {"a": a4}, lambda: a4.narrow(1, 1, 2))
    ca = _rand(rng, 2, 2, 4)
    cb = _rand(rng, 2, 3, 4)
    simple("concat", {"a": ca, "b": cb}, lambda: concat([ca, cb], axis=1))

    simple("sum_all", {"a": a4}, lambda: a4.sum())
    simple("sum_axis", {"a": a4}, lambda: a4.sum(axis=(1, 3)))
    simple("mean_keepdims", {"a": a4}, lambda: a4.mean(axis=2, keepdims=True))

    sm = _rand(rng, 2, 3, 7)
    simple("softmax", {"a": sm}, lambda: F.softmax(sm))
    simple("log_softmax", {"a": sm}, lambda: F.log_softmax(sm))
    simple("logsumexp", {"a": sm}, lambda: F.logsumexp(sm, axis=-1))
    gm = _rand(rng, 6)
    be = _rand(rng, 6)
    ln_in = _rand(rng, 2, 5, 6)
    simple("layer_norm", {"x": ln_in, "gamma": gm, "beta": be}, lambda: F.layer_norm(ln_in, gm, be))
    gp = _rand(rng, 2, 3, 4, 4)
    simple("global_avg_pool", {"a": gp}, lambda: F.global_avg_pool(gp))
    rd_a = _rand(rng, 3, 5)
    rd_b = _rand(rng, 3, 5)
    simple("row_dot", {"a": rd_a, "b": rd_b}, lambda: F.row_dot(rd_a, rd_b))

    cx = _rand(rng, 2, 3, 6, 5)
    ck = _rand(rng, 4, 3, 3, 3)
    simple("conv2d", {"x": cx, "k": ck}, lambda: F.conv2d(cx, ck, stride=1, padding=1))
    simple("conv2d_stride2", {"x": cx, "k": ck}, lambda: F.conv2d(cx, ck, stride=2, padding=1))

    ax = _rand(rng, 2, 5, 6)
    aw = _rand(rng, 6, 18)
    ab = _rand(rng, 18)
    ow_ = _rand(rng, 6, 6)
    ob = _rand(rng, 6)
    simple(
        "multi_head_attention",
        {"x": ax, "wqkv": aw, "bqkv": ab, "wo": ow_, "bo": ob},
        lambda: F.multi_head_attention(ax, aw, ab, ow_, ob, heads=2),
    )

    tb = {
        "x": _rand(rng, 2, 5, 6),
        "ln1_gamma": _positive(rng, 6),
        "ln1_beta": _rand(rng, 6),
        "wqkv": _rand(rng, 6, 18),
        "bqkv": _rand(rng, 18),
        "wo": _rand(rng, 6, 6),
        "bo": _rand(rng, 6),
        "ln2_gamma": _positive(rng, 6),
        "ln2_beta": _rand(rng, 6),
        "w1": _rand(rng, 6, 12),
        "b1": _rand(rng, 12),
        "w2": _rand(rng, 12, 6),
        "b2": _rand(rng, 6),
    }
    simple("transformer_block", tb, lambda: F.transformer_block(**tb, heads=2))
    return checks


def run_primitive_suite(seed: int = 0) -> GradcheckReport:
    """Gradcheck every primitive; the report carries one entry per check."""
    combined = GradcheckReport()
    for name, run in primitive_checks(seed):
        combined.per_tensor[name] = run().max_error
    return combined
