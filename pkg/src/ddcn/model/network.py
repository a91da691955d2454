"""The dual dense connection network: grouping, extraction, fusion, reconstruction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ddcn.core import (
    BatchNormState,
    Tensor,
    astensor,
    batchnorm,
    bicubic_resize,
    concat,
    conv2d,
    conv3d,
    pixel_shuffle,
    relu,
    softmax_axis,
    stack,
)
from ddcn.errors import DimensionError
from ddcn.model.config import ModelConfig

Params = Mapping[str, "Tensor | np.ndarray"]


@dataclass
class Trace:
    """Optional recorder of intermediate channel counts and attention weights."""

    channels: dict[str, list[int]] = field(default_factory=dict)
    attention: list[tuple[str, np.ndarray]] = field(default_factory=list)

    def add_channels(self, site: str, n: int) -> None:
        self.channels.setdefault(site, []).append(n)


@dataclass
class TemporalGroups:
    pre: Tensor
    reference: Tensor
    post: Tensor


def _p(params: Params, name: str) -> Tensor:
    try:
        return astensor(params[name])
    except KeyError:
        raise DimensionError(f"missing parameter {name!r}") from None


def _conv(x: Tensor, params: Params, name: str, op=conv2d) -> Tensor:
    bias = params.get(f"{name}.bias")
    w = _p(params, f"{name}.weight")
    try:
        return op(x, w, None if bias is None else astensor(bias))
    except DimensionError as exc:
        raise DimensionError(f"{name}: {exc}") from None


def build_groups(frames: Sequence, T: int) -> TemporalGroups:
    """Split 2T+1 frames into the pre group (ending at the reference) and the
    post group (starting at it)."""
    n = len(frames)
    if n % 2 == 0:
        raise DimensionError(f"frame count must be odd, got {n}")
    if n != 2 * T + 1:
        raise DimensionError(f"expected 2T+1 = {2 * T + 1} frames for T={T}, got {n}")
    frames = [astensor(f) for f in frames]
    return TemporalGroups(pre=stack(frames[:T + 1], axis=1), reference=frames[T],
                          post=stack(frames[T:], axis=1))


def temporal_attention(features: Tensor, projection: Tensor, trace: Trace | None = None,
                       site: str = "") -> Tensor:
    """Reweight each of the N frames of (C,N,H,W) features by a per-pixel softmax over N.

    The one-channel score map comes from a bias-free 1x1x1 projection.
    """
    features, projection = astensor(features), astensor(projection)
    if projection.shape != (1, features.shape[0], 1, 1, 1):
        raise DimensionError(f"attention projection {projection.shape} does not match "
                             f"{features.shape[0]} feature channels")
    scores = conv3d(features, projection)
    weights = softmax_axis(scores, axis=1)
    if trace is not None:
        trace.attention.append((site, weights.data[0].copy()))
    return features * weights


def extract_reference_features(frame: Tensor, params: Params) -> Tensor:
    x = astensor(frame)
    for i in range(1, 6):
        x = _conv(x, params, f"ref.conv{i}")
        if i < 5:
            x = relu(x)
    return x


def extract_group_features(group: Tensor, params: Params, branch: str, attention_on: bool,
                           mode: str = "eval", stats: dict | None = None,
                           trace: Trace | None = None) -> Tensor:
    """Four conv(1x3x3)+BN+ReLU cells, attention after the second, then a 1x3x3 compression."""
    x = astensor(group)
    for k in range(1, 5):
        x = _conv(x, params, f"{branch}.cell{k}.conv", conv3d)
        bn = f"{branch}.cell{k}.bn"
        state = BatchNormState(_p(params, f"{bn}.gamma"), _p(params, f"{bn}.beta"),
                               astensor(params[f"{bn}.running_mean"]).data,
                               astensor(params[f"{bn}.running_var"]).data)
        x, new_state = batchnorm(x, state, mode)
        if stats is not None and mode == "train":
            stats[f"{bn}.running_mean"] = new_state.running_mean
            stats[f"{bn}.running_var"] = new_state.running_var
        x = relu(x)
        if k == 2 and attention_on:
            x = temporal_attention(x, _p(params, f"{branch}.attn.proj"), trace, f"{branch}.attn")
    return _conv(x, params, f"{branch}.compress", conv3d)


def ddcn_inner_3d(x: Tensor, params: Params, prefix: str, config: ModelConfig,
                  attention_on: bool, trace: Trace | None = None) -> Tensor:
    feats = _conv(astensor(x), params, f"{prefix}.entry", conv3d)
    if trace is not None:
        trace.add_channels(f"{prefix}.dense", feats.shape[0])
    for i in range(1, config.inner_units + 1):
        new = relu(_conv(feats, params, f"{prefix}.unit{i}", conv3d))
        feats = concat([feats, new], axis=0)
        if trace is not None:
            trace.add_channels(f"{prefix}.dense", feats.shape[0])
    if attention_on:
        feats = temporal_attention(feats, _p(params, f"{prefix}.attn.proj"), trace,
                                   f"{prefix}.attn")
    return _conv(feats, params, f"{prefix}.exit", conv3d)


def ddcn_inner_2d(x: Tensor, params: Params, prefix: str, config: ModelConfig,
                  trace: Trace | None = None) -> Tensor:
    feats = _conv(astensor(x), params, f"{prefix}.entry")
    if trace is not None:
        trace.add_channels(f"{prefix}.dense", feats.shape[0])
    for i in range(1, config.inner_units + 1):
        h = relu(_conv(feats, params, f"{prefix}.unit{i}.reduce"))
        new = relu(_conv(h, params, f"{prefix}.unit{i}.conv"))
        feats = concat([feats, new], axis=0)
        if trace is not None:
            trace.add_channels(f"{prefix}.dense", feats.shape[0])
    out = _conv(feats, params, f"{prefix}.exit")
    if trace is not None:
        trace.add_channels(f"{prefix}.dense", out.shape[0])
    return out


def ddcn_outer(x: Tensor, inner: Callable[[int, Tensor], Tensor], blocks: int,
               compress: Callable[[Tensor], Tensor], growth: int | None = None,
               trace: Trace | None = None, site: str = "outer") -> Tensor:
    """Densely circulate ``inner``: block k sees concat(x, out_1, ..., out_{k-1}).

    The final concat of the input and every block output is passed to ``compress``.
    """
    x = astensor(x)
    outputs = [x]
    for k in range(1, blocks + 1):
        block_in = outputs[0] if len(outputs) == 1 else concat(outputs, axis=0)
        if trace is not None:
            trace.add_channels(site, block_in.shape[0])
        out = inner(k, block_in)
        if growth is not None and out.shape[0] != growth:
            raise DimensionError(f"inner block {k} produced {out.shape[0]} channels, "
                                 f"expected {growth}")
        outputs.append(out)
    final = concat(outputs, axis=0)
    if trace is not None:
        trace.add_channels(f"{site}.final", final.shape[0])
    return compress(final)


def fuse_groups(pre: Tensor, ref: Tensor, post: Tensor, params: Params, config: ModelConfig,
                trace: Trace | None = None) -> Tensor:
    """Stack [pre, ref, post] in time, run DDCN3D, fold time into channels, conv to base width."""
    pre, ref, post = astensor(pre), astensor(ref), astensor(post)
    c = config.base_channels
    if pre.shape[0] != c or post.shape != pre.shape or ref.shape != (c,) + pre.shape[2:]:
        raise DimensionError(f"inconsistent fusion inputs {pre.shape}, {ref.shape}, {post.shape}")
    seq = concat([pre, ref.reshape((c, 1) + ref.shape[1:]), post], axis=1)
    if trace is not None:
        trace.add_channels("fusion.depth", seq.shape[1])

    def inner(k, t):
        return ddcn_inner_3d(t, params, f"d3.block{k}", config, config.attention_in_fusion, trace)

    fused = ddcn_outer(seq, inner, config.outer_blocks_3d,
                       lambda t: _conv(t, params, "d3.compress", conv3d),
                       growth=config.outer_growth, trace=trace, site="d3.outer")
    depth, h, w = fused.shape[1:]
    return _conv(fused.reshape(c * depth, h, w), params, "fuse.conv")


def reconstruct(features: Tensor, reference: Tensor, params: Params, config: ModelConfig,
                trace: Trace | None = None) -> Tensor:
    def inner(k, t):
        return ddcn_inner_2d(t, params, f"d2.block{k}", config, trace)

    x = ddcn_outer(features, inner, config.outer_blocks_2d,
                   lambda t: _conv(t, params, "d2.compress"),
                   growth=config.outer_growth, trace=trace, site="d2.outer")
    residual = pixel_shuffle(_conv(x, params, "recon.conv"), config.scale)
    return residual + bicubic_resize(reference, config.scale)


def forward(frames: Sequence, params: Params, config: ModelConfig, mode: str = "eval",
            stats: dict | None = None, trace: Trace | None = None) -> Tensor:
    """Super-resolve the centre frame of ``frames`` (2T+1 tensors of shape (3,H,W)).

    In ``mode="train"`` batch norm uses batch statistics; pass ``stats`` to
    receive the updated running statistics keyed by parameter name.
    """
    groups = build_groups(frames, config.T)
    ref_feat = extract_reference_features(groups.reference, params)
    pre_feat = extract_group_features(groups.pre, params, "pre", config.attention_in_extraction,
                                      mode, stats, trace)
    post_feat = extract_group_features(groups.post, params, "post",
                                       config.attention_in_extraction, mode, stats, trace)
    fused = fuse_groups(pre_feat, ref_feat, post_feat, params, config, trace)
    return reconstruct(fused, groups.reference, params, config, trace)
