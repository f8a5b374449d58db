"""
Multiply-accumulate and parameter accounting per named block.

Conv MACs = output elements * in_channels * kh * kw; batch-norm layers
count 4 * C parameters (affine pair plus running statistics).
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Tuple

from src.model.layers import Conv2d, ConvTranspose2d, Layer, count_conv_macs, layer_param_count
from src.model.std_model import StdModel
from src.utils.error_handling import require_shape


@dataclass
class BlockCost:
    macs: int = 0
    params: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {"macs": self.macs, "params": self.params}


def _conv_layers(layer: Layer):
    if isinstance(layer, (Conv2d, ConvTranspose2d)):
        yield layer
    for child in layer._children.values():
        yield from _conv_layers(child)


def _macs_at(layer: Layer, out_h: int, out_w: int) -> int:
    """MACs of every conv inside `layer`, all producing an out_h x out_w map"""
    return sum(count_conv_macs(conv.spec, out_h, out_w) for conv in _conv_layers(layer))


def count_flops_params(model: StdModel, input_size: Tuple[int, int]) -> "OrderedDict[str, BlockCost]":
    """
    Per-block MACs and parameters for an (H, W) input, plus a "total" entry.
    """
    height, width = input_size
    require_shape(height % 32 == 0 and width % 32 == 0, f"input size {height}x{width} is not divisible by 32",
                  "count_flops_params")
    cfg = model.config
    costs: "OrderedDict[str, BlockCost]" = OrderedDict()
    s4 = (height // 4, width // 4)

    backbone = model.backbone
    macs = _macs_at(backbone.stem, height // 2, width // 2)
    for index, stage in enumerate(backbone.stages, 1):
        macs += _macs_at(stage, height // 2 ** (index + 1), width // 2 ** (index + 1))
    costs["backbone"] = BlockCost(macs, layer_param_count(backbone))

    for index, block in enumerate(model.miem, 1):
        scale = (height // 2 ** (index + 1), width // 2 ** (index + 1))
        costs[f"miem{index}"] = BlockCost(_macs_at(block, *scale), layer_param_count(block))

    fpn = model.fpn
    macs = 0
    for index, (lateral, smooth) in enumerate(zip(fpn.laterals, fpn.smooth), 1):
        scale = (height // 2 ** (index + 1), width // 2 ** (index + 1))
        macs += _macs_at(lateral, *scale) + _macs_at(smooth, *scale)
    macs += _macs_at(fpn.reduce, *s4)
    costs["fpn"] = BlockCost(macs, layer_param_count(fpn))

    costs["coarse_head"] = BlockCost(_macs_at(model.coarse_head, *s4), layer_param_count(model.coarse_head))

    if cfg.use_scm:
        costs["cpfsm"] = BlockCost(_macs_at(model.cpfsm, *s4), layer_param_count(model.cpfsm))
        head = model.refined_head
        macs = _macs_at(head.hidden, *s4)
        macs += count_conv_macs(head.up1.spec, height // 2, width // 2)
        macs += count_conv_macs(head.up2.spec, height, width)
        costs["refined_head"] = BlockCost(macs, layer_param_count(head))
        costs["alpha"] = BlockCost(0, int(model.alpha.data.size))

    costs["total"] = BlockCost(sum(c.macs for c in costs.values()), sum(c.params for c in costs.values()))
    return costs


def format_cost_table(costs: Dict[str, BlockCost]) -> str:
    lines = [f"{'block':<14}{'GMACs':>12}{'params':>12}"]
    for name, cost in costs.items():
        lines.append(f"{name:<14}{cost.macs / 1e9:>12.4f}{cost.params:>12d}")
    return "\n".join(lines)
