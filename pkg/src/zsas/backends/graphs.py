"""Serialized-graph inference backends.

ONNX graphs provide full scorer/segmenter backends (requires the
optional ``onnxruntime`` dependency); TorchScript modules can serve as
decode-only delegates for the file backend (requires ``torch``). Both
share one prompt wire format:

  - ``point_coords`` float32 [1, N, 2] — (x, y) at working resolution;
  - ``point_labels`` float32 [1, N] — 1 positive, 0 negative, and a box
    is encoded as its two corner points with labels 2 (top-left) and
    3 (bottom-right);
  - ``mask_input`` float32 [1, 1, L, L] plus ``has_mask_input`` [1] —
    the dense low-resolution logit prompt, zeros when absent.

Decoder graphs take ``image_embeddings`` [1, C, h, w] plus the prompt
tensors and return ``masks`` [1, K, S, S] (logits at working
resolution), ``iou_predictions`` [1, K], and ``low_res_masks``
[1, K, L, L]. Candidate 0 is the single-mask output; candidates 1..K-1
are the multimask alternatives.

Encoder graphs map a preprocessed ``image`` [1, 3, S, S] to
``image_embeddings``; scorer graphs map ``image`` to ``anomaly_map``
[1, 1, S', S'] with values already normalized to [0, 1]. Images are
loaded as RGB, scaled to [0, 1], resized to the metadata ``input_size``
and normalized with the metadata ``mean``/``std`` constants.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import BackendError, DataError, SignatureError
from ..types import BinaryMask, FeatureGrid, PromptSet, ScoreGrid
from .base import Candidate, ScorerBackend, SegmenterBackend, check_candidates, require_positive

ENCODER_SIGNATURE = ({"image"}, {"image_embeddings"})
DECODER_SIGNATURE = (
    {"image_embeddings", "point_coords", "point_labels", "mask_input", "has_mask_input"},
    {"masks", "iou_predictions", "low_res_masks"},
)
SCORER_SIGNATURE = ({"image"}, {"anomaly_map"})


def _require_onnxruntime():
    try:
        import onnxruntime  # noqa: PLC0415

        return onnxruntime
    except ImportError as exc:
        raise BackendError(
            "onnxruntime is required for graph backends; install the 'onnx' extra"
        ) from exc


def prompt_arrays(
    prompts: PromptSet, logit_resolution: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Encode a prompt set into the shared decoder wire format."""
    require_positive(prompts)
    coords = [(float(p.x), float(p.y)) for p in prompts.points]
    labels = [1.0 if p.is_positive else 0.0 for p in prompts.points]
    if prompts.box is not None:
        coords.append((float(prompts.box.x_min), float(prompts.box.y_min)))
        labels.append(2.0)
        coords.append((float(prompts.box.x_max), float(prompts.box.y_max)))
        labels.append(3.0)
    point_coords = np.asarray(coords, dtype=np.float32)[None]
    point_labels = np.asarray(labels, dtype=np.float32)[None]
    if prompts.dense_logit is not None:
        dense = prompts.dense_logit.values
        if dense.shape != (logit_resolution, logit_resolution):
            raise DataError(
                f"dense logit prompt {dense.shape} != ({logit_resolution}, {logit_resolution})"
            )
        mask_input = dense[None, None].astype(np.float32)
        has_mask = np.ones(1, dtype=np.float32)
    else:
        mask_input = np.zeros((1, 1, logit_resolution, logit_resolution), dtype=np.float32)
        has_mask = np.zeros(1, dtype=np.float32)
    return point_coords, point_labels, mask_input, has_mask


def parse_candidates(
    masks: np.ndarray, iou: np.ndarray, low_res: np.ndarray, multimask: bool
) -> list[Candidate]:
    """Turn raw decoder outputs into candidates.

    Candidate 0 is the single-mask head; with ``multimask`` the
    remaining heads are returned instead (all heads when the graph only
    has one).
    """
    if masks.ndim != 4 or low_res.ndim != 4 or iou.ndim != 2:
        raise BackendError(
            f"decoder output ranks masks={masks.ndim} iou={iou.ndim} low_res={low_res.ndim}"
        )
    k = masks.shape[1]
    candidates = [
        Candidate(
            BinaryMask(masks[0, i] > 0.0),
            ScoreGrid(low_res[0, i].astype(np.float32)),
            float(iou[0, i]),
        )
        for i in range(k)
    ]
    if multimask:
        return candidates[1:] if k > 1 else candidates
    return [candidates[0]]


def _check_signature(kind: str, found_in: set, found_out: set, expected) -> None:
    exp_in, exp_out = expected
    if not exp_in <= found_in or not exp_out <= found_out:
        raise SignatureError(
            f"{kind} graph signature mismatch: expected inputs {sorted(exp_in)} "
            f"outputs {sorted(exp_out)}, found inputs {sorted(found_in)} "
            f"outputs {sorted(found_out)}"
        )


def _load_session(path: str | Path):
    ort = _require_onnxruntime()
    path = Path(path)
    if not path.exists():
        raise DataError(f"graph file not found: {path}")
    try:
        opts = ort.SessionOptions()
        opts.inter_op_num_threads = 1
        opts.intra_op_num_threads = 1
        return ort.InferenceSession(str(path), sess_options=opts, providers=["CPUExecutionProvider"])
    except Exception as exc:
        raise SignatureError(f"{path} is not a loadable ONNX graph: {exc}") from exc


def _metadata(session) -> dict:
    return dict(session.get_modelmeta().custom_metadata_map)


def _preprocess(image_ref: str, input_size: int, mean, std) -> np.ndarray:
    path = Path(str(image_ref))
    if not path.exists():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    mean = np.asarray(mean, dtype=np.float32).reshape(1, 1, 3)
    std = np.asarray(std, dtype=np.float32).reshape(1, 1, 3)
    arr = (arr - mean) / std
    return np.ascontiguousarray(arr.transpose(2, 0, 1))[None]


def _parse_preproc(meta: dict, path) -> tuple[int, list, list]:
    try:
        input_size = int(meta["input_size"])
        mean = json.loads(meta["mean"])
        std = json.loads(meta["std"])
    except (KeyError, ValueError) as exc:
        raise SignatureError(
            f"{path}: graph metadata must define input_size, mean, std; found {sorted(meta)}"
        ) from exc
    return input_size, mean, std


def _static_shape(node) -> tuple:
    shape = []
    for d in node.shape:
        if not isinstance(d, int):
            return ()
        shape.append(d)
    return tuple(shape)


class OnnxScorer(ScorerBackend):
    def __init__(self, graph_path: str | Path):
        self._session = _load_session(graph_path)
        self.name = f"onnx-scorer:{Path(graph_path).name}"
        ins = {i.name for i in self._session.get_inputs()}
        outs = {o.name for o in self._session.get_outputs()}
        _check_signature("scorer", ins, outs, SCORER_SIGNATURE)
        self._input_size, self._mean, self._std = _parse_preproc(_metadata(self._session), graph_path)
        out_shape = _static_shape(self._session.get_outputs()[0])
        self.native_resolution = out_shape[-1] if out_shape else self._input_size
        self.unaligned = _metadata(self._session).get("unaligned") == "true"

    def score(self, image_ref: str) -> ScoreGrid:
        x = _preprocess(image_ref, self._input_size, self._mean, self._std)
        (out,) = self._session.run(["anomaly_map"], {"image": x})
        values = np.clip(out[0, 0].astype(np.float32), 0.0, 1.0)
        return ScoreGrid(values, normalized=True)


class OnnxDecoder:
    """Decode-only wrapper around a decoder graph (file-backend delegate)."""

    def __init__(self, graph_path: str | Path):
        self._session = _load_session(graph_path)
        self.name = f"onnx-decoder:{Path(graph_path).name}"
        ins = {i.name for i in self._session.get_inputs()}
        outs = {o.name for o in self._session.get_outputs()}
        _check_signature("decoder", ins, outs, DECODER_SIGNATURE)
        by_name = {i.name: i for i in self._session.get_inputs()}
        mask_shape = _static_shape(by_name["mask_input"])
        if len(mask_shape) != 4:
            raise SignatureError(f"{graph_path}: mask_input must be rank-4 [1,1,L,L]")
        self.logit_resolution = mask_shape[-1]
        out_by_name = {o.name: o for o in self._session.get_outputs()}
        masks_shape = _static_shape(out_by_name["masks"])
        self.working_resolution = masks_shape[-1] if masks_shape else 0

    def decode(self, features: FeatureGrid, prompts: PromptSet, multimask: bool) -> list[Candidate]:
        coords, labels, mask_input, has_mask = prompt_arrays(prompts, self.logit_resolution)
        masks, iou, low_res = self._session.run(
            ["masks", "iou_predictions", "low_res_masks"],
            {
                "image_embeddings": features.values[None],
                "point_coords": coords,
                "point_labels": labels,
                "mask_input": mask_input,
                "has_mask_input": has_mask,
            },
        )
        return parse_candidates(masks, iou, low_res, multimask)


class OnnxSegmenter(SegmenterBackend):
    def __init__(self, encoder_path: str | Path, decoder_path: str | Path):
        self._session = _load_session(encoder_path)
        self.name = f"onnx-segmenter:{Path(encoder_path).name}"
        ins = {i.name for i in self._session.get_inputs()}
        outs = {o.name for o in self._session.get_outputs()}
        _check_signature("encoder", ins, outs, ENCODER_SIGNATURE)
        self._input_size, self._mean, self._std = _parse_preproc(
            _metadata(self._session), encoder_path
        )
        emb_shape = _static_shape(self._session.get_outputs()[0])
        if len(emb_shape) != 4:
            raise SignatureError(f"{encoder_path}: image_embeddings must be rank-4 [1,C,h,w]")
        self.feature_dims = emb_shape[1:]
        self._decoder = OnnxDecoder(decoder_path)
        self.working_resolution = self._decoder.working_resolution or self._input_size
        self.logit_resolution = self._decoder.logit_resolution

    def encode(self, image_ref: str) -> FeatureGrid:
        x = _preprocess(image_ref, self._input_size, self._mean, self._std)
        (emb,) = self._session.run(["image_embeddings"], {"image": x})
        grid = FeatureGrid(emb[0])
        if grid.values.shape != self.feature_dims:
            raise BackendError(
                f"encoder produced {grid.values.shape}, graph declares {self.feature_dims}"
            )
        return grid

    def decode(self, features: FeatureGrid, prompts: PromptSet, multimask: bool) -> list[Candidate]:
        return check_candidates(self, self._decoder.decode(features, prompts, multimask))


class TorchscriptDecoder:
    """Decode-only delegate backed by a TorchScript module.

    The module must implement the shared decoder signature; its logit
    and working resolutions travel in a ``backend.json`` extra file.
    """

    def __init__(self, graph_path: str | Path):
        try:
            import torch  # noqa: PLC0415
        except ImportError as exc:
            raise BackendError(
                "torch is required for torchscript decoders; install the 'torch' extra"
            ) from exc
        path = Path(graph_path)
        if not path.exists():
            raise DataError(f"graph file not found: {path}")
        extra = {"backend.json": ""}
        try:
            self._module = torch.jit.load(str(path), map_location="cpu", _extra_files=extra)
        except Exception as exc:
            raise SignatureError(f"{path} is not a loadable TorchScript module: {exc}") from exc
        try:
            meta = json.loads(extra["backend.json"])
            self.logit_resolution = int(meta["logit_resolution"])
            self.working_resolution = int(meta["working_resolution"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SignatureError(
                f"{path}: backend.json extra file must define logit_resolution and "
                f"working_resolution"
            ) from exc
        self._torch = torch
        self.name = f"torchscript-decoder:{path.name}"

    def decode(self, features: FeatureGrid, prompts: PromptSet, multimask: bool) -> list[Candidate]:
        torch = self._torch
        coords, labels, mask_input, has_mask = prompt_arrays(prompts, self.logit_resolution)
        with torch.no_grad():
            masks, iou, low_res = self._module(
                torch.from_numpy(features.values[None].copy()),
                torch.from_numpy(coords),
                torch.from_numpy(labels),
                torch.from_numpy(mask_input),
                torch.from_numpy(has_mask),
            )
        return parse_candidates(masks.numpy(), iou.numpy(), low_res.numpy(), multimask)


def graph_backend_load(
    encoder_graph: str | Path, decoder_graph: str | Path, scorer_graph: str | Path
) -> tuple[OnnxScorer, OnnxSegmenter]:
    """Load ONNX graphs into (scorer, segmenter) backends.

    Signature mismatches raise :class:`SignatureError` listing expected
    vs found tensors; malformed files raise the same error instead of
    crashing.
    """
    scorer = OnnxScorer(scorer_graph)
    segmenter = OnnxSegmenter(encoder_graph, decoder_graph)
    return scorer, segmenter
