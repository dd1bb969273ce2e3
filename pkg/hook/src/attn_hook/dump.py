"""Run a vision-language model with attention capture and dump ATTN1 files.

For each benchmark sample the hook generates an answer greedily with
``output_attentions=True``, keeps only the answer-token query rows, locates
the image-token span from the expanded input ids, and writes one ATTN1 file
per (sample, condition).  All statistical reduction happens downstream in
the analytics that consume these files; the hook records raw weights only.

The ATTN1 writer is deliberately self-contained: the file format is the
entire contract with the analytics side, so capture and analysis can run in
different environments.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger("attn_hook")

MAGIC = b"ATTN1\n"

CONDITION_NAMES = (
    "image_only",
    "image_plus_ocr",
    "image_plus_structured",
    "ocr_only",
    "structured_only",
)
# the hook records attention over image tokens, so the input must have some
IMAGE_CONDITIONS = ("image_only", "image_plus_ocr", "image_plus_structured")


class HookError(Exception):
    pass


@dataclass(frozen=True)
class HookConfig:
    model: str  # HF model id or local checkpoint directory
    manifest: Path  # sample JSONL, same schema the eval harness reads
    condition: str
    out_dir: Path
    assets_dir: Path
    device: str = "cpu"
    layers: tuple[int, ...] | None = None  # None = all layers
    max_new_tokens: int = 16

    def __post_init__(self) -> None:
        if self.condition not in CONDITION_NAMES:
            raise HookError(f"unknown condition {self.condition!r}")
        if self.condition not in IMAGE_CONDITIONS:
            raise HookError(
                f"condition {self.condition!r} has no image tokens to profile"
            )
        if self.max_new_tokens < 1:
            raise HookError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class Sample:
    sample_id: str
    doc_id: str
    question: str
    page: int


def load_samples(path: Path) -> list[Sample]:
    """Minimal reader for the harness manifest JSONL: one sample per line,
    evidence page = first listed page, or the top-scoring retrieved page."""
    samples = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            pages = obj.get("evidence_pages")
            if pages:
                page = int(pages[0])
            else:
                scores = {int(k): float(v)
                          for k, v in obj["retrieval_scores"].items()}
                page = min(scores, key=lambda p: (-scores[p], p))
            samples.append(Sample(
                sample_id=str(obj["sample_id"]),
                doc_id=str(obj["doc_id"]),
                question=str(obj["question"]),
                page=page,
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise HookError(f"{path} line {i + 1}: {exc}") from exc
    if not samples:
        raise HookError(f"{path}: no samples")
    return samples


def write_attn_file(path: Path, sample_id: str, condition: str,
                    weights: np.ndarray, image_span: tuple[int, int],
                    grid: tuple[int, int]) -> None:
    L, H, Q, K = weights.shape
    header = {
        "sample_id": sample_id,
        "condition": condition,
        "L": L, "H": H, "Q": Q, "K": K,
        "image_span": list(image_span),
        "grid": list(grid),
        "dtype": "f32",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(weights, dtype="<f4").tobytes())


@dataclass
class _Runner:
    """Loaded model + processor, shared across samples."""

    model: object
    processor: object
    image_token_id: int
    grid: tuple[int, int]

    @classmethod
    def load(cls, model_id: str, device: str) -> "_Runner":
        from transformers import AutoModelForImageTextToText, AutoProcessor

        model = AutoModelForImageTextToText.from_pretrained(model_id)
        model.set_attn_implementation("eager")  # capture needs real weights
        model.to(device).eval()
        processor = AutoProcessor.from_pretrained(model_id)
        token_id = getattr(model.config, "image_token_id", None)
        if token_id is None:
            token_id = getattr(model.config, "image_token_index", None)
        if token_id is None:
            raise HookError(f"{model_id}: config exposes no image token id")
        vis = model.config.vision_config
        side = vis.image_size // vis.patch_size
        return cls(model=model, processor=processor,
                   image_token_id=int(token_id), grid=(side, side))

    def prompt(self, condition: str, question: str, ocr: str | None,
               structured: str | None) -> str:
        image_token = self.processor.tokenizer.convert_ids_to_tokens(
            self.image_token_id
        )
        parts = [image_token]
        if condition == "image_plus_ocr":
            parts.append(ocr or "")
        elif condition == "image_plus_structured":
            parts.append(structured or "")
        parts.append(question)
        return "\n".join(parts)

    def capture(self, image: Image.Image, text: str,
                max_new_tokens: int) -> tuple[np.ndarray, tuple[int, int]]:
        """Generate greedily; return (L, H, Q, K) answer-token attention and
        the image-token span over the key axis."""
        inputs = self.processor(images=image, text=text, return_tensors="pt")
        inputs = {k: v.to(self.model.device) for k, v in inputs.items()}
        positions = (
            (inputs["input_ids"][0] == self.image_token_id)
            .nonzero(as_tuple=True)[0]
            .tolist()
        )
        if not positions:
            raise HookError("prompt contains no image tokens")
        start, end = positions[0], positions[-1] + 1
        if positions != list(range(start, end)):
            raise HookError("image-token span is not contiguous")
        if end - start != self.grid[0] * self.grid[1]:
            raise HookError(
                f"processor produced {end - start} image tokens, "
                f"expected grid {self.grid[0]}x{self.grid[1]}"
            )

        with torch.no_grad():
            out = self.model.generate(
                **inputs,
                max_new_tokens=max_new_tokens,
                do_sample=False,
                output_attentions=True,
                return_dict_in_generate=True,
            )
        steps = out.attentions  # per generated token: tuple over layers
        n_layers = len(steps[0])
        n_heads = steps[0][0].shape[1]
        Q = len(steps)
        K = steps[-1][0].shape[-1]
        weights = np.zeros((n_layers, n_heads, Q, K), dtype=np.float32)
        for q, step in enumerate(steps):
            for li, layer in enumerate(step):
                # step 0 carries the whole prompt; only its last query row
                # (the one that produced the first answer token) is answer-side
                row = layer[0, :, -1, :].to(torch.float32).cpu().numpy()
                weights[li, :, q, : row.shape[-1]] = row
        return weights, (start, end)


def dump_attention(cfg: HookConfig) -> Path:
    """Process every sample in the manifest; returns the hook manifest path.

    Per-sample failures are logged and skipped; raises HookError only when
    no sample succeeds.
    """
    samples = load_samples(Path(cfg.manifest))
    runner = _Runner.load(cfg.model, cfg.device)
    layer_ids = _resolve_layers(cfg.layers, n_layers=_model_layers(runner))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    failures = []
    for sample in samples:
        try:
            entries.append(_dump_one(cfg, runner, layer_ids, sample))
        except (HookError, OSError, ValueError) as exc:
            log.warning("sample %s failed: %s", sample.sample_id, exc)
            failures.append((sample.sample_id, str(exc)))
    if not entries:
        raise HookError(
            f"all {len(samples)} samples failed; first: {failures[0][1]}"
        )

    manifest_path = cfg.out_dir / "hook_manifest.json"
    manifest_path.write_text(json.dumps({
        "model": cfg.model,
        "condition": cfg.condition,
        "layers": list(layer_ids),
        "files": entries,
        "failures": [{"sample_id": s, "error": e} for s, e in failures],
    }, indent=2), encoding="utf-8")
    return manifest_path


def _model_layers(runner: _Runner) -> int:
    return int(runner.model.config.text_config.num_hidden_layers)


def _resolve_layers(layers: tuple[int, ...] | None,
                    n_layers: int) -> tuple[int, ...]:
    if layers is None:
        return tuple(range(n_layers))
    bad = [l for l in layers if not 0 <= l < n_layers]
    if bad:
        raise HookError(f"layer indices {bad} out of range 0..{n_layers - 1}")
    return tuple(dict.fromkeys(layers))  # dedupe, keep order


def _dump_one(cfg: HookConfig, runner: _Runner, layer_ids: tuple[int, ...],
              sample: Sample) -> dict:
    page_dir = Path(cfg.assets_dir) / sample.doc_id
    image_path = page_dir / f"p{sample.page}.png"
    if not image_path.exists():
        raise HookError(f"missing page image {image_path}")
    image = Image.open(image_path).convert("RGB")

    ocr = structured = None
    if cfg.condition == "image_plus_ocr":
        ocr = (page_dir / f"p{sample.page}.txt").read_text(encoding="utf-8")
    elif cfg.condition == "image_plus_structured":
        structured = (page_dir / f"p{sample.page}.tex").read_text(
            encoding="utf-8"
        )

    text = runner.prompt(cfg.condition, sample.question, ocr, structured)
    weights, span = runner.capture(image, text, cfg.max_new_tokens)
    weights = weights[list(layer_ids)]

    out_path = cfg.out_dir / f"{sample.sample_id}__{cfg.condition}.attn"
    write_attn_file(out_path, sample.sample_id, cfg.condition, weights,
                    span, runner.grid)
    L, H, Q, K = weights.shape
    return {
        "sample_id": sample.sample_id,
        "path": out_path.name,
        "grid": list(runner.grid),
        "image_span": list(span),
        "L": L, "H": H, "Q": Q, "K": K,
    }
