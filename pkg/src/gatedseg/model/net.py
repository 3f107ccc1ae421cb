"""The full gated multi-head segmentation network and its checkpoint format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from ..config import ModelConfig
from ..errors import ConfigError, ShapeError
from .blocks import PatchEmbed, PatchExpand, PatchMerge, SkipFuse, make_stage_blocks
from .context import ContextEncoder, ContextFusion
from .grid import TokenGrid
from .heads import DetectionHead, SegmentationHead, broadcast_det_probs

CHECKPOINT_VERSION = 1


@dataclass
class GatedPrediction:
    """Model output after gating.

    seg_probs are sigmoid probabilities after the gating rule; seg_logits are
    kept ungated so losses and alternative thresholds stay available.
    """

    seg_probs: torch.Tensor   # (B, num_classes, H, W)
    seg_logits: torch.Tensor  # (B, num_classes, H, W)
    det_probs: torch.Tensor   # (B, num_roi)
    gating_mode: str
    gating_threshold: float
    det_logits: torch.Tensor | None = None


def gate(seg_logits: torch.Tensor, det_probs: torch.Tensor, mode: str,
         threshold: float = 0.5) -> GatedPrediction:
    """Modulate segmentation probabilities by slice-level detection confidence.

    none: probs = sigmoid(logits).
    soft: probs scaled elementwise by the class detection probability.
    hard: class planes with detection probability below the threshold are
          exactly zeroed; the rest pass through unchanged.
    """
    if mode not in ("none", "soft", "hard"):
        raise ConfigError(f"unknown gating mode {mode!r}")
    if det_probs.min() < 0 or det_probs.max() > 1:
        raise ConfigError("det_probs must lie in [0, 1]")
    probs = torch.sigmoid(seg_logits)
    if mode != "none":
        scale = broadcast_det_probs(det_probs, seg_logits.shape[1])
        if mode == "soft":
            probs = probs * scale[:, :, None, None]
        else:
            keep = (scale >= threshold).to(probs.dtype)
            probs = probs * keep[:, :, None, None]
    return GatedPrediction(probs, seg_logits, det_probs, mode, threshold)


class GatedSegNet(nn.Module):
    """Swin-style encoder/decoder with previous-slice context fusion, a
    parallel slice-level detection head, and detection-gated output.

    Encoder stage s runs its attention blocks, then (stages 1-3) a patch
    merge; context tokens from the previous-slice mask are fused into each
    stage output by cross-attention. The decoder mirrors with patch expands
    and skip fusion. When the detection stream is context-free the encoder
    is run a second time with fusion bypassed (shared weights) and the
    detection head reads that pass.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        bh, bw = config.base_grid

        self.patch_embed = PatchEmbed(config.in_channels, config.patch_size, d)

        # encoder blocks run at the stage INPUT grid; merges end stages 1-3
        block_grids = [(bh, bw), (bh // 2, bw // 2), (bh // 4, bw // 4), (bh // 8, bw // 8)]
        block_dims = [d, 2 * d, 4 * d, 8 * d]
        self.enc_blocks = nn.ModuleList(
            nn.ModuleList(
                make_stage_blocks(block_dims[s], config.stage_depths[s], config.num_heads[s],
                                  config.window_size, block_grids[s], config.mlp_ratio,
                                  config.qkv_bias)
            )
            for s in range(4)
        )
        self.merges = nn.ModuleList(PatchMerge(block_dims[s]) for s in range(3))

        if config.context_enabled:
            self.context_encoder = ContextEncoder(config)
            self.context_fusions = nn.ModuleList(
                ContextFusion(config.stage_channels(s), config.num_heads[s - 1], config.qkv_bias)
                for s in (1, 2, 3, 4)
            )
        else:
            self.context_encoder = None
            self.context_fusions = None

        self.detection_head = DetectionHead(config.stage_channels(4), config.det_hidden,
                                            config.num_roi)

        # decoder: expand, fuse with the matching encoder skip, blocks
        self.expands = nn.ModuleList(PatchExpand(dim) for dim in (8 * d, 4 * d, 2 * d))
        self.skip_fuses = nn.ModuleList(SkipFuse(dim) for dim in (4 * d, 2 * d, d))
        dec_grids = [(bh // 4, bw // 4), (bh // 2, bw // 2), (bh, bw), (bh, bw)]
        dec_dims = [4 * d, 2 * d, d, d]
        dec_heads = [config.num_heads[2], config.num_heads[1], config.num_heads[0],
                     config.num_heads[0]]
        self.dec_blocks = nn.ModuleList(
            nn.ModuleList(
                make_stage_blocks(dec_dims[i], config.decoder_depths[3 - i], dec_heads[i],
                                  config.window_size, dec_grids[i], config.mlp_ratio,
                                  config.qkv_bias)
            )
            for i in range(4)
        )
        self.seg_head = SegmentationHead(d, config.num_classes, config.patch_size)

    _trace: list | None = None

    def _check(self, grid: TokenGrid, stage: str, n: int, c: int):
        if grid.tokens.shape[1] != n or grid.tokens.shape[2] != c:
            raise ShapeError(
                f"{stage}: expected tokens (B, {n}, {c}), "
                f"got {tuple(grid.tokens.shape)}"
            )
        if self._trace is not None:
            self._trace.append((stage, tuple(grid.tokens.shape)))

    def forward_traced(self, image, prev_mask=None):
        """Forward pass that also returns [(stage name, shape), ...]."""
        self._trace = []
        try:
            pred = self.forward(image, prev_mask)
            trace = list(self._trace)
        finally:
            self._trace = None
        trace.append(("detection head", tuple(pred.det_probs.shape)))
        trace.append(("segmentation output", tuple(pred.seg_probs.shape)))
        return pred, trace

    def _encode(self, tokens: TokenGrid, context: dict[int, TokenGrid] | None):
        """Run the four encoder stages; returns (stage4 output, skip list)."""
        cfg = self.config
        bh, bw = cfg.base_grid
        x = tokens
        skips = []
        for s in range(4):
            for block in self.enc_blocks[s]:
                x = block(x)
            if s < 3:
                skips.append(x)
                x = self.merges[s](x)
            gh, gw = cfg.stage_grid(s + 1)
            self._check(x, f"encoder stage {s + 1}", gh * gw, cfg.stage_channels(s + 1))
            if context is not None:
                x = self.context_fusions[s](x, context[s + 1])
        return x, skips

    def forward(self, image: torch.Tensor, prev_mask: torch.Tensor | None = None
                ) -> GatedPrediction:
        cfg = self.config
        if tuple(image.shape[-2:]) != cfg.image_size:
            raise ShapeError(
                f"image spatial dims {tuple(image.shape[-2:])} != image_size {cfg.image_size}"
            )
        if image.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"image channels {image.shape[1]} != in_channels {cfg.in_channels}"
            )

        tokens = self.patch_embed(image)
        bh, bw = cfg.base_grid
        self._check(tokens, "patch embedding", bh * bw, cfg.embed_dim)

        context = None
        if cfg.context_enabled:
            if prev_mask is None:
                prev_mask = image.new_zeros(image.shape[0], cfg.num_classes, *cfg.image_size)
            context = self.context_encoder(prev_mask)

        x, skips = self._encode(tokens, context)

        if cfg.detection_context_free and cfg.context_enabled:
            det_feats, _ = self._encode(tokens, None)
        else:
            det_feats = x
        det_logits = self.detection_head(det_feats)
        det_probs = torch.sigmoid(det_logits)

        d = x
        dec_dims = (4 * cfg.embed_dim, 2 * cfg.embed_dim, cfg.embed_dim)
        dec_factors = (4, 2, 1)
        for i in range(3):
            d = self.expands[i](d)
            d = self.skip_fuses[i](d, skips[2 - i])
            for block in self.dec_blocks[i]:
                d = block(d)
            n = (bh // dec_factors[i]) * (bw // dec_factors[i])
            self._check(d, f"decoder stage {4 - i}", n, dec_dims[i])
        for block in self.dec_blocks[3]:
            d = block(d)
        self._check(d, "decoder stage 1", bh * bw, cfg.embed_dim)

        seg_logits = self.seg_head(d)
        pred = gate(seg_logits, det_probs, cfg.gating_mode, cfg.gating_threshold)
        pred.det_logits = det_logits
        return pred


def save_checkpoint(path: str | Path, model: GatedSegNet, extra: dict | None = None):
    """Single-file archive: version tag, full model config, named tensors."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> tuple[GatedSegNet, dict]:
    """Rebuild the model from an archive, validating version and tensor shapes."""
    path = Path(path)
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unknown checkpoint version {version!r} in {path}")
    config = ModelConfig.from_dict(payload["model_config"])
    model = GatedSegNet(config)
    expected = model.state_dict()
    stored = payload["state_dict"]
    for name, tensor in expected.items():
        if name not in stored:
            raise ConfigError(f"checkpoint {path} missing tensor {name!r}")
        if stored[name].shape != tensor.shape:
            raise ShapeError(
                f"checkpoint tensor {name!r} has shape {tuple(stored[name].shape)}, "
                f"config implies {tuple(tensor.shape)}"
            )
    unknown = set(stored) - set(expected)
    if unknown:
        raise ConfigError(f"checkpoint {path} has unexpected tensors: {sorted(unknown)[:5]}")
    model.load_state_dict(stored)
    model.eval()
    return model, payload.get("extra", {})
