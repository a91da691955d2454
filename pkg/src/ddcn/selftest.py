"""Invariant suites run by ``ddcn gradcheck`` / ``ddcn selftest`` and by the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ddcn.core import (
    BatchNormState,
    Tensor,
    batchnorm,
    bicubic_resize,
    concat,
    conv2d,
    conv3d,
    gaussian_blur,
    grad_check,
    mean_abs_error,
    pixel_shuffle,
    relative_error,
    relu,
    softmax_axis,
)
from ddcn.core.rng import SplitMix64
from ddcn.model import REDUCED, ModelConfig, Trace, forward, init_params, is_trainable
from ddcn.model.params import RECON_WEIGHT, kaiming_like


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} (tol {self.tolerance:.0e}){extra}"


def _kink_free(r: np.random.Generator, shape, margin: float) -> np.ndarray:
    x = r.normal(size=shape)
    return np.where(np.abs(x) < margin, np.where(x < 0, -margin, margin) + x, x)


def operator_cases(r: np.random.Generator, eps: float) -> list[tuple[str, Callable, np.ndarray]]:
    """(name, scalar function of one tensor argument, probe point) per op and argument."""
    margin = 10 * eps
    cases = []

    def weighted(op_out_shape):
        return r.normal(size=op_out_shape)

    x2, w2, b2 = r.normal(size=(2, 5, 4)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)
    wt2 = weighted((3, 5, 4))
    cases += [
        ("conv2d.input", lambda t: (conv2d(t, Tensor(w2), Tensor(b2)) * wt2).sum(), x2),
        ("conv2d.weight", lambda t: (conv2d(Tensor(x2), t, Tensor(b2)) * wt2).sum(), w2),
        ("conv2d.bias", lambda t: (conv2d(Tensor(x2), Tensor(w2), t) * wt2).sum(), b2),
    ]
    x3, w3, b3 = r.normal(size=(2, 3, 4, 3)), r.normal(size=(2, 2, 3, 3, 3)), r.normal(size=2)
    wt3 = weighted((2, 3, 4, 3))
    cases += [
        ("conv3d.input", lambda t: (conv3d(t, Tensor(w3), Tensor(b3)) * wt3).sum(), x3),
        ("conv3d.weight", lambda t: (conv3d(Tensor(x3), t, Tensor(b3)) * wt3).sum(), w3),
        ("conv3d.bias", lambda t: (conv3d(Tensor(x3), Tensor(w3), t) * wt3).sum(), b3),
    ]
    xb = r.normal(size=(3, 2, 4, 4))
    gam, bet = r.uniform(0.5, 1.5, 3), r.normal(size=3)
    rm, rv = r.normal(size=3), r.uniform(0.5, 2, 3)
    wtb = weighted(xb.shape)

    def bn(mode, which):
        def f(t):
            args = {"x": Tensor(xb), "g": Tensor(gam), "b": Tensor(bet)}
            args[which] = t
            out, _ = batchnorm(args["x"], BatchNormState(args["g"], args["b"], rm, rv), mode)
            return (out * wtb).sum()
        return f

    for mode in ("train", "eval"):
        cases += [(f"batchnorm.{mode}.input", bn(mode, "x"), xb),
                  (f"batchnorm.{mode}.gamma", bn(mode, "g"), gam),
                  (f"batchnorm.{mode}.beta", bn(mode, "b"), bet)]
    xr = _kink_free(r, (3, 4, 4), margin)
    wtr = weighted(xr.shape)
    cases.append(("relu", lambda t: (relu(t) * wtr).sum(), xr))
    xs = r.normal(size=(4, 3, 3))
    wts = weighted(xs.shape)
    cases.append(("softmax_axis", lambda t: (softmax_axis(t, 0) * wts).sum(), xs))
    xp = r.normal(size=(8, 3, 2))
    wtp = weighted((2, 6, 4))
    cases.append(("pixel_shuffle", lambda t: (pixel_shuffle(t, 2) * wtp).sum(), xp))
    xc = r.normal(size=(2, 5, 6))
    wtc = weighted((2, 20, 24))
    cases.append(("bicubic_resize", lambda t: (bicubic_resize(t, 4) * wtc).sum(), xc))
    xg = r.normal(size=(2, 9, 8))
    wtg = weighted(xg.shape)
    cases.append(("gaussian_blur", lambda t: (gaussian_blur(t, 1.6) * wtg).sum(), xg))
    xl = r.normal(size=(3, 4, 4))
    tgt = xl - _kink_free(r, xl.shape, margin)
    cases.append(("mean_abs_error", lambda t: mean_abs_error(t, Tensor(tgt)), xl))
    xa, xb2 = r.normal(size=(2, 3)), r.normal(size=(3, 3))
    wtk = weighted((5, 3))
    cases.append(("concat", lambda t: (concat([t, Tensor(xb2)], 0) * wtk).sum(), xa))
    return cases


def operator_gradient_suite(trials: int = 5, seed: int = 0, eps: float = 1e-3,
                            tol: float = 1e-4) -> list[CheckResult]:
    """Every differentiable op and argument, ``trials`` random probe points each."""
    worst: dict[str, float] = {}
    for trial in range(trials):
        r = np.random.default_rng(seed * 1000 + trial)
        for name, f, x in operator_cases(r, eps):
            rep = grad_check(f, x, eps, name=name)
            worst[name] = max(worst.get(name, 0.0), rep.max_rel_error)
    return [CheckResult(f"gradcheck {k}", v < tol, v, tol, f"{trials} trials")
            for k, v in worst.items()]


def randomized_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Fresh parameters with a random (non-zero) final conv so every layer gets gradient."""
    params = init_params(config, seed)
    params[RECON_WEIGHT] = kaiming_like(params[RECON_WEIGHT].shape, SplitMix64(seed + 1))
    return params


def end_to_end_gradcheck(config: ModelConfig = REDUCED, size: int = 8, samples: int = 50,
                         eps: float = 1e-5, tol: float = 1e-3, seed: int = 0) -> CheckResult:
    """Scalar L1 of the full forward pass against central differences on sampled parameters."""
    r = np.random.default_rng(seed)
    params = randomized_params(config, seed)
    frames = [r.random((3, size, size)) for _ in range(config.frames)]
    target = r.random((3, size * config.scale, size * config.scale))

    def loss(p):
        return mean_abs_error(forward(frames, p, config, mode="train", stats={}), target)

    leaves = {k: Tensor(v, requires_grad=is_trainable(k)) for k, v in params.items()}
    loss(leaves).backward()
    names = [k for k in params if is_trainable(k)]
    sizes = np.array([params[k].size for k in names], dtype=np.float64)
    worst, where = 0.0, ""
    for _ in range(samples):
        name = names[r.choice(len(names), p=sizes / sizes.sum())]
        idx = np.unravel_index(int(r.integers(params[name].size)), params[name].shape)
        probe = dict(params)
        plus, minus = params[name].copy(), params[name].copy()
        plus[idx] += eps
        minus[idx] -= eps
        probe[name] = plus
        fp = loss(probe).item()
        probe[name] = minus
        fm = loss(probe).item()
        err = float(relative_error(leaves[name].grad[idx], (fp - fm) / (2 * eps)))
        if err > worst:
            worst, where = err, f"{name}{tuple(int(i) for i in idx)}"
    return CheckResult("end-to-end gradcheck", worst < tol, worst, tol,
                       f"{samples} params, worst at {where}")


def channel_growth_check(config: ModelConfig, size: int = 6) -> CheckResult:
    """Compare traced channel counts with the dense-growth arithmetic."""
    r = np.random.default_rng(0)
    trace = Trace()
    frames = [r.random((3, size, size)) for _ in range(config.frames)]
    forward(frames, init_params(config, 0), config, trace=trace)
    expected_inner = config.inner_trajectory()
    problems = []
    for site, seen in trace.channels.items():
        if site.startswith("d3.block") and site.endswith(".dense"):
            if seen != expected_inner:
                problems.append(f"{site} {seen}")
        elif site.startswith("d2.block") and site.endswith(".dense"):
            if seen != expected_inner + [config.outer_growth]:
                problems.append(f"{site} {seen}")
    for site, blocks in (("d3.outer", config.outer_blocks_3d), ("d2.outer", config.outer_blocks_2d)):
        if trace.channels.get(site) != config.outer_inputs(blocks):
            problems.append(f"{site} {trace.channels.get(site)}")
        final = config.base_channels + blocks * config.outer_growth
        if trace.channels.get(f"{site}.final") != [final]:
            problems.append(f"{site}.final {trace.channels.get(site + '.final')}")
    if trace.channels.get("fusion.depth") != [config.fusion_depth]:
        problems.append(f"fusion depth {trace.channels.get('fusion.depth')}")
    return CheckResult(f"channel growth {config.base_channels}/{config.inner_growth}/"
                       f"{config.outer_growth}", not problems, float(len(problems)), 0.5,
                       "; ".join(problems))


def attention_normalization_check(config: ModelConfig = REDUCED, size: int = 6,
                                  seed: int = 0, tol: float = 1e-12) -> CheckResult:
    r = np.random.default_rng(seed)
    trace = Trace()
    frames = [r.random((3, size, size)) for _ in range(config.frames)]
    forward(frames, randomized_params(config, seed), config, trace=trace)
    sites = {s for s, _ in trace.attention}
    worst = max(float(np.max(np.abs(w.sum(axis=0) - 1.0))) for _, w in trace.attention)
    expected_sites = (2 if config.attention_in_extraction else 0) + \
        (config.outer_blocks_3d if config.attention_in_fusion else 0)
    ok = worst <= tol and len(sites) == expected_sites
    return CheckResult("attention weights sum to 1", ok, worst, tol,
                       f"{len(sites)} sites: {', '.join(sorted(sites))}")


def residual_identity_check(config: ModelConfig = REDUCED, size: int = 8, trials: int = 10,
                            seed: int = 0) -> CheckResult:
    r = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        frames = [r.random((3, size, size)) for _ in range(config.frames)]
        out = forward(frames, init_params(config, seed + t), config).data
        bic = bicubic_resize(Tensor(frames[config.T]), config.scale).data
        worst = max(worst, float(np.max(np.abs(out - bic))))
    return CheckResult("fresh model == bicubic(reference)", worst == 0.0, worst, 0.0)


def loss_gradient_equivalence_check(config: ModelConfig = REDUCED, size: int = 8,
                                    seed: int = 0, tol: float = 1e-12) -> CheckResult:
    from ddcn.trainer import sample_gradients
    from ddcn.video import FrameSequence, TrainingPair

    r = np.random.default_rng(seed)
    params = randomized_params(config, seed)
    pair = TrainingPair(FrameSequence([r.random((3, size, size)) for _ in range(config.frames)]),
                        r.random((3, size * config.scale, size * config.scale)))
    l0, g0, _ = sample_gradients(pair, params, config, 0.0)
    l1, g1, _ = sample_gradients(pair, params, config, 0.01)
    grad_diff = max(float(np.max(np.abs(g0[k] - g1[k]))) for k in g0)
    total_diff = abs((l1.total - l0.total) - 0.01 * l1.l_up)
    worst = max(grad_diff, total_diff)
    return CheckResult("loss-gradient equivalence (lambda 0 vs 0.01)", worst <= tol, worst, tol,
                       f"grad diff {grad_diff:.1e}, total diff {total_diff:.1e}")


def random_configs(count: int, seed: int) -> list[ModelConfig]:
    rng = SplitMix64(seed)
    out = []
    for _ in range(count):
        out.append(ModelConfig(
            T=1 + rng.randint(2), base_channels=4 + rng.randint(8), inner_growth=2 + rng.randint(5),
            outer_growth=3 + rng.randint(8), inner_units=2 + rng.randint(3),
            outer_blocks_3d=1 + rng.randint(3), outer_blocks_2d=1 + rng.randint(3)))
    return out


def run_gradcheck(seed: int = 0) -> list[CheckResult]:
    return operator_gradient_suite(seed=seed) + [end_to_end_gradcheck(seed=seed)]


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = run_gradcheck(seed)
    for cfg in [ModelConfig()] + random_configs(3, seed):
        results.append(channel_growth_check(cfg))
    results.append(attention_normalization_check(seed=seed))
    results.append(residual_identity_check(seed=seed))
    results.append(loss_gradient_equivalence_check(seed=seed))
    return results
