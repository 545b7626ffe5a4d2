"""Serialize the scorer and segmenter to ONNX or TorchScript.

ONNX graphs carry preprocessing constants in the model metadata keys
``mean``, ``std``, ``input_size`` (plus ``unaligned`` on a scorer
exported without adapters). TorchScript modules carry the same
information in a ``backend.json`` extra file.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .nets import build_scorer, build_segmenter
from .recipe import ExportRecipe


class ExportUnavailableError(RuntimeError):
    """The requested serialization format lacks its runtime dependency."""


def _onnx_or_raise():
    try:
        import onnx  # noqa: PLC0415

        return onnx
    except ImportError as exc:
        raise ExportUnavailableError(
            "ONNX export requires the 'onnx' package (install the 'onnx' extra); "
            "use graph_format='torchscript' where the ONNX toolchain is unavailable"
        ) from exc


def _export_onnx(model, args, path: Path, input_names, output_names, dynamic_axes, metadata):
    onnx = _onnx_or_raise()
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.onnx.export(
        model,
        args,
        str(path),
        input_names=list(input_names),
        output_names=list(output_names),
        opset_version=17,
        dynamic_axes=dynamic_axes,
        dynamo=False,
    )
    graph = onnx.load(str(path))
    for key, value in metadata.items():
        entry = graph.metadata_props.add()
        entry.key = key
        entry.value = json.dumps(value) if isinstance(value, (list, tuple)) else str(value)
    onnx.save(graph, str(path))


def _export_torchscript(model, path: Path, metadata):
    path.parent.mkdir(parents=True, exist_ok=True)
    scripted = torch.jit.script(model)
    extra = {"backend.json": json.dumps(metadata, sort_keys=True)}
    torch.jit.save(scripted, str(path), _extra_files=extra)


def _preproc_metadata(recipe: ExportRecipe) -> dict:
    return {
        "input_size": recipe.input_size,
        "mean": list(recipe.mean),
        "std": list(recipe.std),
    }


def export_segmenter(recipe: ExportRecipe) -> tuple[Path, Path]:
    """Write encoder + decoder graphs; returns their paths."""
    encoder, decoder = build_segmenter(recipe)
    size = recipe.input_size
    enc_path = recipe.path("encoder")
    dec_path = recipe.path("decoder")
    feature_dims = [encoder.channels, size // 4, size // 4]
    if recipe.graph_format == "onnx":
        image = torch.zeros(1, 3, size, size)
        _export_onnx(
            encoder,
            (image,),
            enc_path,
            ["image"],
            ["image_embeddings"],
            None,
            {**_preproc_metadata(recipe), "feature_dims": feature_dims},
        )
        embeddings = encoder(image)
        coords = torch.tensor([[[10.0, 12.0], [40.0, 50.0]]])
        labels = torch.tensor([[1.0, 0.0]])
        mask_in = torch.zeros(1, 1, size // 4, size // 4)
        has_mask = torch.zeros(1)
        _export_onnx(
            decoder,
            (embeddings, coords, labels, mask_in, has_mask),
            dec_path,
            ["image_embeddings", "point_coords", "point_labels", "mask_input", "has_mask_input"],
            ["masks", "iou_predictions", "low_res_masks"],
            {"point_coords": {1: "points"}, "point_labels": {1: "points"}},
            {"working_resolution": size, "logit_resolution": size // 4},
        )
    else:
        _export_torchscript(
            encoder, enc_path, {**_preproc_metadata(recipe), "feature_dims": feature_dims}
        )
        _export_torchscript(
            decoder,
            dec_path,
            {"working_resolution": size, "logit_resolution": size // 4},
        )
    return enc_path, dec_path


def export_scorer(recipe: ExportRecipe) -> Path:
    """Write the scorer graph; flags it unaligned without adapters."""
    scorer = build_scorer(recipe)
    path = recipe.path("scorer")
    unaligned = recipe.adapter_checkpoint is None
    metadata = {
        **_preproc_metadata(recipe),
        "unaligned": "true" if unaligned else "false",
        "tapped_layers": list(recipe.tapped_layers),
    }
    if recipe.graph_format == "onnx":
        image = torch.zeros(1, 3, recipe.input_size, recipe.input_size)
        _export_onnx(scorer, (image,), path, ["image"], ["anomaly_map"], None, metadata)
    else:
        _export_torchscript(scorer, path, metadata)
    return path
