"""Reference torch models with the exact tensor signatures the pipeline
graphs must expose.

These are compact stand-ins used when the external checkpoints are not
available locally: a multi-stage conv scorer whose per-stage linear
adapters (1x1 convs) can be trained on pixel annotations, an image
encoder producing a C x S/4 x S/4 feature grid, and a nonparametric
prompt decoder that segments by feature similarity to the prompted
points, honors a box window, and folds a dense low-resolution logit
prompt back in. Everything is scriptable and exportable.
"""

from __future__ import annotations

from typing import Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn


class ReferenceImageEncoder(nn.Module):
    """Image [1,3,S,S] -> embeddings [1,C,S/4,S/4].

    The spatial mean feature is subtracted so embeddings carry local
    appearance deviations rather than a shared DC component; without
    this, cosine similarity between any two cells saturates near 1 and
    point prompts cannot discriminate regions.
    """

    def __init__(self, channels: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, channels, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(channels, channels, 3, padding=1)
        self.channels = channels

    def forward(self, image: Tensor) -> Tensor:
        y = F.relu(self.conv1(image))
        y = F.relu(self.conv2(y))
        y = self.conv3(y)
        return y - y.mean(dim=(2, 3), keepdim=True)


class ScorerStage(nn.Module):
    """One tapped depth: a stride-2 conv plus its 1x1 linear adapter.

    The base anomaly signal is the per-pixel feature deviation from the
    stage's global mean feature (works untrained); the adapter starts at
    zero so an unadapted export is purely deviation-based.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        self.adapter = nn.Conv2d(out_channels, 1, 1)
        nn.init.zeros_(self.adapter.weight)
        nn.init.zeros_(self.adapter.bias)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        y = F.relu(self.conv(x))
        mu = y.mean(dim=(2, 3), keepdim=True)
        deviation = (y - mu).pow(2).mean(dim=1, keepdim=True).sqrt()
        return y, deviation + self.adapter(y)


class ReferenceScorer(nn.Module):
    """Image [1,3,S,S] -> anomaly map [1,1,S,S] with values in [0,1].

    Four conv stages stand in for the tapped encoder depths; their
    per-stage logits are upsampled, averaged, and min-max normalized.
    """

    def __init__(self):
        super().__init__()
        widths = (16, 24, 32, 48)
        stages = []
        prev = 3
        for width in widths:
            stages.append(ScorerStage(prev, width))
            prev = width
        self.stages = nn.ModuleList(stages)

    def stage_logits(self, image: Tensor) -> Tensor:
        """Pre-normalization anomaly logits [1,1,S,S] (training target)."""
        size = int(image.size(2))
        total = torch.zeros(
            (image.size(0), 1, size, size), dtype=image.dtype, device=image.device
        )
        y = image
        count = 0
        for stage in self.stages:
            y, adapted = stage(y)
            total = total + F.interpolate(
                adapted, size=(size, size), mode="bilinear", align_corners=False
            )
            count = count + 1
        return total / float(count)

    def forward(self, image: Tensor) -> Tensor:
        logits = self.stage_logits(image)
        lo = logits.amin(dim=(2, 3), keepdim=True)
        hi = logits.amax(dim=(2, 3), keepdim=True)
        return (logits - lo) / (hi - lo + 1e-8)

    def adapter_state(self) -> dict:
        return {str(i): s.adapter.state_dict() for i, s in enumerate(self.stages)}

    def load_adapter_state(self, state: dict) -> None:
        for i, stage in enumerate(self.stages):
            stage.adapter.load_state_dict(state[str(i)])

    def adapter_parameters(self):
        for stage in self.stages:
            yield from stage.adapter.parameters()


class ReferencePromptDecoder(nn.Module):
    """Embeddings + prompt tensors -> (masks, iou_predictions, low_res_masks).

    Signature (all float32):
      image_embeddings [1,C,h,w], point_coords [1,N,2] (x,y at working
      resolution), point_labels [1,N] (1 pos / 0 neg / 2 box TL / 3 box
      BR), mask_input [1,1,L,L], has_mask_input [1]
      -> masks [1,3,S,S] logits, iou_predictions [1,3], low_res_masks
      [1,3,L,L]. Candidate 0 is the single-mask head; 1 and 2 are looser
      and stricter alternatives.
    """

    def __init__(
        self,
        working_resolution: int = 256,
        logit_resolution: int = 64,
        margin: float = 0.35,
        sharpness: float = 8.0,
    ):
        super().__init__()
        self.working_resolution = working_resolution
        self.logit_resolution = logit_resolution
        self.margin = margin
        self.sharpness = sharpness

    def forward(
        self,
        image_embeddings: Tensor,
        point_coords: Tensor,
        point_labels: Tensor,
        mask_input: Tensor,
        has_mask_input: Tensor,
    ) -> Tuple[Tensor, Tensor, Tensor]:
        size = self.working_resolution
        feats = image_embeddings / (
            torch.sqrt((image_embeddings * image_embeddings).sum(dim=1, keepdim=True)) + 1e-6
        )

        # Sample features under each prompt point (nearest feature cell).
        gx = (point_coords[:, :, 0] + 0.5) / float(size) * 2.0 - 1.0
        gy = (point_coords[:, :, 1] + 0.5) / float(size) * 2.0 - 1.0
        grid = torch.stack((gx, gy), dim=-1).unsqueeze(1)  # [1,1,N,2]
        sampled = F.grid_sample(feats, grid, mode="nearest", align_corners=False)
        pts = sampled[:, :, 0, :]  # [1,C,N]

        w_pos = (point_labels == 1.0).to(feats.dtype)
        w_neg = (point_labels == 0.0).to(feats.dtype)
        pos_proto = (pts * w_pos.unsqueeze(1)).sum(dim=2) / (
            w_pos.sum(dim=1, keepdim=True) + 1e-6
        )
        neg_proto = (pts * w_neg.unsqueeze(1)).sum(dim=2) / (
            w_neg.sum(dim=1, keepdim=True) + 1e-6
        )
        pos_proto = pos_proto / (
            torch.sqrt((pos_proto * pos_proto).sum(dim=1, keepdim=True)) + 1e-6
        )
        neg_proto = neg_proto / (
            torch.sqrt((neg_proto * neg_proto).sum(dim=1, keepdim=True)) + 1e-6
        )

        sim_pos = (feats * pos_proto.unsqueeze(-1).unsqueeze(-1)).sum(dim=1, keepdim=True)
        sim_neg = (feats * neg_proto.unsqueeze(-1).unsqueeze(-1)).sum(dim=1, keepdim=True)
        has_neg = (w_neg.sum(dim=1) > 0).to(feats.dtype).reshape(1, 1, 1, 1)
        score = sim_pos - self.margin - 0.75 * has_neg * sim_neg.clamp(min=0.0)

        # Dense low-resolution logit prompt refines the feature-space score.
        fh = int(feats.size(2))
        fw = int(feats.size(3))
        dense = F.interpolate(mask_input, size=(fh, fw), mode="bilinear", align_corners=False)
        has_mask = has_mask_input.reshape(1, 1, 1, 1)
        score = score + has_mask * 0.4 * torch.tanh(dense)

        logits = F.interpolate(
            score * self.sharpness, size=(size, size), mode="bilinear", align_corners=False
        )

        # Box prompt: heavily penalize everything outside the window.
        w_tl = (point_labels == 2.0).to(feats.dtype)
        w_br = (point_labels == 3.0).to(feats.dtype)
        has_box = (w_tl.sum(dim=1) > 0).to(feats.dtype).reshape(1, 1, 1, 1)
        x0 = (point_coords[:, :, 0] * w_tl).sum(dim=1) / (w_tl.sum(dim=1) + 1e-6)
        y0 = (point_coords[:, :, 1] * w_tl).sum(dim=1) / (w_tl.sum(dim=1) + 1e-6)
        x1 = (point_coords[:, :, 0] * w_br).sum(dim=1) / (w_br.sum(dim=1) + 1e-6)
        y1 = (point_coords[:, :, 1] * w_br).sum(dim=1) / (w_br.sum(dim=1) + 1e-6)
        xs = torch.arange(size, dtype=feats.dtype, device=feats.device).reshape(1, 1, 1, size)
        ys = torch.arange(size, dtype=feats.dtype, device=feats.device).reshape(1, 1, size, 1)
        inside_x = (xs >= x0.reshape(1, 1, 1, 1)) & (xs <= x1.reshape(1, 1, 1, 1))
        inside_y = (ys >= y0.reshape(1, 1, 1, 1)) & (ys <= y1.reshape(1, 1, 1, 1))
        inside = (inside_x & inside_y).to(feats.dtype)
        logits = logits + has_box * (inside - 1.0) * 20.0 * self.sharpness

        masks = torch.cat(
            (logits, logits + 0.1 * self.sharpness, logits - 0.1 * self.sharpness), dim=1
        )
        low_res = F.interpolate(
            masks,
            size=(self.logit_resolution, self.logit_resolution),
            mode="bilinear",
            align_corners=False,
        )
        iou = torch.sigmoid(masks).mean(dim=3).mean(dim=2)
        return masks, iou, low_res


class ModelUnavailableError(RuntimeError):
    """Raised when a recipe names a model whose weights are not local."""


def build_scorer(recipe) -> ReferenceScorer:
    if recipe.scorer_model != "reference-tiny":
        raise ModelUnavailableError(
            f"weights for scorer {recipe.scorer_model!r} are not available locally; "
            f"only the bundled 'reference-tiny' model can be built offline"
        )
    torch.manual_seed(recipe.seed)
    model = ReferenceScorer().eval()
    if recipe.adapter_checkpoint is not None:
        state = torch.load(recipe.adapter_checkpoint, map_location="cpu", weights_only=True)
        model.load_adapter_state(state)
    return model


def build_segmenter(recipe) -> tuple[ReferenceImageEncoder, ReferencePromptDecoder]:
    if recipe.segmenter_model != "reference-tiny":
        raise ModelUnavailableError(
            f"weights for segmenter {recipe.segmenter_model!r} are not available locally; "
            f"only the bundled 'reference-tiny' model can be built offline"
        )
    torch.manual_seed(recipe.seed + 1)
    encoder = ReferenceImageEncoder().eval()
    decoder = ReferencePromptDecoder(
        working_resolution=recipe.input_size, logit_resolution=recipe.input_size // 4
    ).eval()
    return encoder, decoder
