from .grid import TokenGrid
from .windows import window_partition, window_reverse, build_shift_attention_mask
from .net import GatedSegNet, GatedPrediction, gate, save_checkpoint, load_checkpoint

__all__ = [
    "TokenGrid",
    "window_partition",
    "window_reverse",
    "build_shift_attention_mask",
    "GatedSegNet",
    "GatedPrediction",
    "gate",
    "save_checkpoint",
    "load_checkpoint",
]
