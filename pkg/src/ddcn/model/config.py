from __future__ import annotations

from dataclasses import dataclass, fields

from ddcn.errors import DimensionError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``T`` is the half window: the network consumes ``2T+1`` frames and each
    temporal group holds ``T+1`` of them.
    """

    T: int = 2
    base_channels: int = 64
    inner_growth: int = 16
    outer_growth: int = 64
    inner_units: int = 4
    outer_blocks_3d: int = 3
    outer_blocks_2d: int = 3
    scale: int = 4
    attention_in_extraction: bool = True
    attention_in_fusion: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise DimensionError(f"T must be >= 1, got {self.T}")
        if self.scale != 4:
            raise DimensionError(f"only x4 magnification is supported, got {self.scale}")
        for name in ("base_channels", "inner_growth", "outer_growth", "inner_units",
                     "outer_blocks_3d", "outer_blocks_2d"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be positive")

    @property
    def frames(self) -> int:
        return 2 * self.T + 1

    @property
    def group_len(self) -> int:
        return self.T + 1

    @property
    def fusion_depth(self) -> int:
        """Temporal depth of the stacked [pre, ref, post] features."""
        return 2 * self.group_len + 1

    @property
    def bottleneck(self) -> int:
        """Width of the 1x1 reduction inside each 2-D dense unit."""
        return 4 * self.inner_growth

    def inner_trajectory(self) -> list[int]:
        return [self.base_channels + i * self.inner_growth for i in range(self.inner_units + 1)]

    def outer_inputs(self, blocks: int) -> list[int]:
        return [self.base_channels + k * self.outer_growth for k in range(blocks)]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def receptive_radius(self) -> int:
        """Spatial reach, in LR pixels, of the deepest path through the network."""
        extract = 5
        d3 = self.outer_blocks_3d * self.inner_units
        d2 = self.outer_blocks_2d * (self.inner_units + 1)
        return extract + d3 + 1 + d2 + 1


# Small configuration used by the end-to-end gradient check.
REDUCED = ModelConfig(T=1, base_channels=8, inner_growth=4, outer_growth=8,
                      outer_blocks_3d=1, outer_blocks_2d=1)
