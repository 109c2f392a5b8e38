"""Central-difference verification of every differentiable primitive.

Each case projects the op's output onto a fixed random direction so the
scalar loss has well-conditioned, order-one gradients. All auxiliary
tensors are drawn once per case; the checked function must be a fixed
deterministic map. Shared between the CLI and the acceptance suite.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import GradCheckReport, Tensor, finite_diff_check


def _cases(rng: np.random.Generator) -> dict[str, tuple[Callable, Tensor]]:
    u = lambda *s: Tensor(rng.uniform(-1.0, 1.0, size=s))
    upos = lambda *s: Tensor(rng.uniform(0.5, 1.5, size=s))
    proj = lambda *s: Tensor(rng.normal(size=s))

    cases: dict[str, tuple[Callable, Tensor]] = {}

    def case(name, f, x):
        cases[name] = (f, x)

    r34 = proj(3, 4)
    other = Tensor(rng.normal(size=(3, 4)))
    case("add", lambda x: T.reduce_sum((x + other) * r34), u(3, 4))
    case("sub", lambda x: T.reduce_sum((other - x) * r34), u(3, 4))
    case("mul", lambda x: T.reduce_sum(x * other * r34), u(3, 4))
    case("div", lambda x: T.reduce_sum((other / x) * r34), upos(3, 4))
    case("neg", lambda x: T.reduce_sum(-x * r34), u(3, 4))
    case("pow", lambda x: T.reduce_sum((x ** 3) * r34), u(3, 4))
    case("exp", lambda x: T.reduce_sum(T.exp(x) * r34), u(3, 4))
    case("log", lambda x: T.reduce_sum(T.log(x) * r34), upos(3, 4))
    case("sqrt", lambda x: T.reduce_sum(T.sqrt(x) * r34), upos(3, 4))
    case("tanh", lambda x: T.reduce_sum(T.tanh(x) * r34), u(3, 4))
    case("sigmoid", lambda x: T.reduce_sum(T.sigmoid(x) * r34), u(3, 4))
    case("gelu", lambda x: T.reduce_sum(T.gelu(x) * r34), u(3, 4))
    case("softmax", lambda x: T.reduce_sum(T.softmax(x, axis=-1) * r34), u(3, 4))

    r44 = proj(4, 4)
    mm_w = Tensor(rng.normal(size=(5, 4)))
    case("matmul", lambda x: T.reduce_sum(T.matmul(x, mm_w) * r44), u(4, 5))
    r233 = proj(2, 3, 3)
    bm_w = Tensor(rng.normal(size=(2, 4, 3)))
    case("matmul_batched", lambda x: T.reduce_sum(T.matmul(x, bm_w) * r233), u(2, 3, 4))

    r26 = proj(2, 6)
    case("reshape", lambda x: T.reduce_sum(x.reshape(2, 6) * r26), u(3, 4))
    r43 = proj(4, 3)
    case("permute", lambda x: T.reduce_sum(T.permute(x, (1, 0)) * r43), u(3, 4))
    cc = Tensor(rng.normal(size=(2, 4)))
    rcat = proj(4, 4)
    case("concat", lambda x: T.reduce_sum(T.concat([x, cc], axis=0) * rcat), u(2, 4))
    r24 = proj(2, 4)
    case("split", lambda x: T.reduce_sum(T.split(x, [2, 3], axis=0)[0] * r24), u(5, 4))
    r56 = proj(5, 6)
    case("pad", lambda x: T.reduce_sum(T.pad(x, ((1, 1), (1, 2))) * r56), u(3, 3))
    case("roll", lambda x: T.reduce_sum(T.roll(x, 2, 1) * r34), u(3, 4))
    gi = rng.integers(0, 4, size=6)
    r63 = proj(6, 3)
    case("gather_rows", lambda x: T.reduce_sum(T.gather_rows(x, gi) * r63), u(4, 3))

    case("sum", lambda x: T.reduce_sum(x * x), u(3, 4))
    case("mean", lambda x: T.reduce_sum(T.reduce_mean(x * x, axis=1)), u(3, 4))
    # spread values so argmax ties have probability zero
    case("max", lambda x: T.reduce_sum(T.reduce_max(x * 3.0, axis=1) ** 2), u(4, 5))

    ln_g = Tensor(rng.uniform(0.5, 1.5, size=6))
    ln_b = Tensor(rng.normal(size=6) * 0.1)
    r46 = proj(4, 6)
    case("layer_norm", lambda x: T.reduce_sum(T.layer_norm(x, ln_g, ln_b) * r46), u(4, 6))
    gn_g = Tensor(rng.uniform(0.5, 1.5, size=8))
    gn_b = Tensor(rng.normal(size=8) * 0.1)
    r338 = proj(3, 3, 8)
    case("group_norm",
         lambda x: T.reduce_sum(T.group_norm(x, gn_g, gn_b, 4) * r338), u(3, 3, 8))

    k2 = Tensor(rng.normal(size=(3, 3, 2, 3)) * 0.4)
    b2 = Tensor(rng.normal(size=3) * 0.1)
    r553 = proj(5, 5, 3)
    case("conv2d", lambda x: T.reduce_sum(T.conv2d(x, k2, b2, 1, 1) * r553), u(5, 5, 2))
    cx = Tensor(rng.uniform(-1, 1, size=(5, 5, 2)))
    r223 = proj(2, 2, 3)
    case("conv2d_weight",
         lambda w: T.reduce_sum(T.conv2d(cx, w, None, 2, 0) * r223),
         Tensor(rng.normal(size=(3, 3, 2, 3)) * 0.4))
    k3 = Tensor(rng.normal(size=(3, 3, 3, 2, 2)) * 0.4)
    b3 = Tensor(rng.normal(size=2) * 0.1)
    r3442 = proj(3, 4, 4, 2)
    case("conv3d", lambda x: T.reduce_sum(T.conv3d(x, k3, b3, 1, 1) * r3442),
         u(3, 4, 4, 2))

    r222 = proj(2, 2, 2)
    case("avg_pool2d", lambda x: T.reduce_sum(T.avg_pool2d(x, 2) * r222), u(4, 4, 2))
    r752 = proj(7, 5, 2)
    case("upsample_bilinear2d",
         lambda x: T.reduce_sum(T.upsample_bilinear2d(x, (7, 5)) * r752), u(4, 4, 2))

    grid = Tensor(rng.uniform(-0.85, 0.85, size=(6, 2)))
    r62 = proj(6, 2)
    case("grid_sample_data",
         lambda x: T.reduce_sum(T.grid_sample_bilinear(x, grid) * r62), u(6, 6, 2))
    gs_x = Tensor(rng.uniform(-1, 1, size=(6, 6, 2)))
    case("grid_sample_coords",
         lambda g: T.reduce_sum(T.grid_sample_bilinear(gs_x, g) * r62),
         Tensor(rng.uniform(-0.85, 0.85, size=(6, 2))))
    return cases


def primitive_case_names() -> list[str]:
    return sorted(_cases(np.random.default_rng(0)))


def check_primitive(name: str, seeds: int = 10, eps: float = 1e-6,
                    tol: float = 1e-5) -> GradCheckReport:
    """Worst report over the seeds for one primitive case."""
    worst: GradCheckReport | None = None
    for seed in range(seeds):
        f, x = _cases(np.random.default_rng(1000 + seed))[name]
        rep = finite_diff_check(f, x, eps=eps, tol=tol)
        if worst is None or rep.max_rel_err > worst.max_rel_err or not rep.passed:
            worst = rep
        if not rep.passed:
            break
    return worst


def run_primitive_suite(seeds: int = 10, eps: float = 1e-6,
                        tol: float = 1e-5) -> dict[str, GradCheckReport]:
    return {name: check_primitive(name, seeds, eps, tol)
            for name in primitive_case_names()}
