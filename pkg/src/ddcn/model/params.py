"""Parameter manifest and deterministic initialization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ddcn.core.rng import SplitMix64
from ddcn.model.config import ModelConfig

BUFFER_SUFFIXES = (".running_mean", ".running_var")
RECON_WEIGHT = "recon.conv.weight"


@dataclass(frozen=True)
class Entry:
    name: str
    shape: tuple[int, ...]
    kind: str  # weight | bias | gamma | beta | mean | var | zero


def _conv(out: list[Entry], name: str, shape: tuple[int, ...], bias: bool = True):
    out.append(Entry(f"{name}.weight", shape, "weight"))
    if bias:
        out.append(Entry(f"{name}.bias", (shape[0],), "bias"))


def _bn(out: list[Entry], name: str, c: int):
    out += [Entry(f"{name}.gamma", (c,), "gamma"), Entry(f"{name}.beta", (c,), "beta"),
            Entry(f"{name}.running_mean", (c,), "mean"), Entry(f"{name}.running_var", (c,), "var")]


def manifest(config: ModelConfig) -> list[Entry]:
    """Every parameter name and shape implied by ``config``, in a fixed order."""
    c, gi, go, units = (config.base_channels, config.inner_growth,
                        config.outer_growth, config.inner_units)
    wide = c + units * gi
    out: list[Entry] = []

    _conv(out, "ref.conv1", (c, 3, 3, 3))
    for i in range(2, 6):
        _conv(out, f"ref.conv{i}", (c, c, 3, 3))

    for branch in ("pre", "post"):
        cin = 3
        for k in range(1, 5):
            # BN follows, so the conv bias would be redundant
            _conv(out, f"{branch}.cell{k}.conv", (c, cin, 1, 3, 3), bias=False)
            _bn(out, f"{branch}.cell{k}.bn", c)
            cin = c
        if config.attention_in_extraction:
            out.append(Entry(f"{branch}.attn.proj", (1, c, 1, 1, 1), "weight"))
        _conv(out, f"{branch}.compress", (c, c, 1, 3, 3))

    for k, cin in enumerate(config.outer_inputs(config.outer_blocks_3d), start=1):
        p = f"d3.block{k}"
        _conv(out, f"{p}.entry", (c, cin, 1, 1, 1))
        for i, ui in enumerate(config.inner_trajectory()[:-1], start=1):
            _conv(out, f"{p}.unit{i}", (gi, ui, 3, 3, 3))
        if config.attention_in_fusion:
            out.append(Entry(f"{p}.attn.proj", (1, wide, 1, 1, 1), "weight"))
        _conv(out, f"{p}.exit", (go, wide, 1, 1, 1))
    _conv(out, "d3.compress", (c, c + config.outer_blocks_3d * go, 1, 1, 1))

    _conv(out, "fuse.conv", (c, c * config.fusion_depth, 3, 3))

    for k, cin in enumerate(config.outer_inputs(config.outer_blocks_2d), start=1):
        p = f"d2.block{k}"
        _conv(out, f"{p}.entry", (c, cin, 1, 1))
        for i, ui in enumerate(config.inner_trajectory()[:-1], start=1):
            _conv(out, f"{p}.unit{i}.reduce", (config.bottleneck, ui, 1, 1))
            _conv(out, f"{p}.unit{i}.conv", (gi, config.bottleneck, 3, 3))
        _conv(out, f"{p}.exit", (go, wide, 3, 3))
    _conv(out, "d2.compress", (c, c + config.outer_blocks_2d * go, 1, 1))

    out.append(Entry(RECON_WEIGHT, (3 * config.scale ** 2, c, 3, 3), "zero"))
    out.append(Entry("recon.conv.bias", (3 * config.scale ** 2,), "bias"))
    return out


def manifest_lines(config: ModelConfig) -> list[str]:
    return [f"{e.name} {'x'.join(map(str, e.shape))}" for e in manifest(config)]


def is_trainable(name: str) -> bool:
    return not name.endswith(BUFFER_SUFFIXES)


def count_parameters(config: ModelConfig) -> int:
    return sum(math.prod(e.shape) for e in manifest(config) if is_trainable(e.name))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Kaiming-uniform conv weights drawn in manifest order from one SplitMix64 stream.

    Biases and BN shifts start at zero, BN scales at one, and the final
    reconstruction conv at zero so the fresh network reproduces the bicubic
    upsample of the reference frame.
    """
    rng = SplitMix64(seed)
    params: dict[str, np.ndarray] = {}
    for e in manifest(config):
        if e.kind == "weight":
            fan_in = math.prod(e.shape[1:])
            bound = math.sqrt(6.0 / fan_in)
            u = rng.uniform(math.prod(e.shape)).reshape(e.shape)
            params[e.name] = (2.0 * u - 1.0) * bound
        elif e.kind in ("gamma", "var"):
            params[e.name] = np.ones(e.shape)
        else:
            params[e.name] = np.zeros(e.shape)
    return params


def kaiming_like(shape: tuple[int, ...], rng: SplitMix64) -> np.ndarray:
    bound = math.sqrt(6.0 / math.prod(shape[1:]))
    return (2.0 * rng.uniform(math.prod(shape)).reshape(shape) - 1.0) * bound
