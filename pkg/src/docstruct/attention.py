"""Attention analytics over exported ATTN1 tensors.

Computes the three statistics used to study how structured text changes
where a model looks: the border profile (share of image attention landing
on the boundary ring of the vision-token grid), per-layer image-attention
curves, and condition-vs-condition comparisons with histogram data.  A
heatmap exporter renders the image-token marginal over the page.

ATTN1 is a self-describing binary format: ``ATTN1\\n`` magic, an 8-byte
little-endian header length, a UTF-8 JSON header, then the L*H*Q*K float32
weights in (layer, head, query, key) row-major order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ATTN1\n"
ROW_SUM_TOL = 1e-4
HISTOGRAM_EDGES = [round(i * 0.05, 2) for i in range(21)]

CONDITION_NAMES = (
    "image_only",
    "image_plus_ocr",
    "image_plus_structured",
    "ocr_only",
    "structured_only",
)


class AttentionError(Exception):
    pass


class MalformedTensor(AttentionError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class NormalizationViolation(AttentionError):
    def __init__(self, max_deviation: float):
        self.max_deviation = max_deviation
        super().__init__(f"attention rows deviate from 1 by up to {max_deviation:g}")


class ShapeMismatch(AttentionError):
    def __init__(self, offenders: list[str]):
        self.offenders = offenders
        super().__init__(f"tensors with mismatched shapes: {offenders}")


@dataclass(frozen=True)
class AttentionTensor:
    sample_id: str
    condition: str
    weights: np.ndarray  # (L, H, Q, K), float32, rows sum to 1
    image_span: tuple[int, int]  # [start, end) over key axis
    grid: tuple[int, int]  # rows x cols == image_span length

    def __post_init__(self) -> None:
        w = self.weights
        if w.ndim != 4:
            raise MalformedTensor(f"weights must be 4-D, got shape {w.shape}")
        if self.condition not in CONDITION_NAMES:
            raise MalformedTensor(f"unknown condition {self.condition!r}")
        start, end = self.image_span
        if not 0 <= start < end <= w.shape[3]:
            raise MalformedTensor(
                f"image_span {self.image_span} out of key range {w.shape[3]}"
            )
        rows, cols = self.grid
        if rows * cols != end - start:
            raise MalformedTensor(
                f"grid {rows}x{cols} != image span length {end - start}"
            )
        if np.any(w < 0):
            raise MalformedTensor("negative attention weights")
        deviation = float(np.abs(w.sum(axis=3) - 1.0).max())
        if deviation > ROW_SUM_TOL:
            raise NormalizationViolation(deviation)

    @property
    def layers(self) -> int:
        return self.weights.shape[0]

    @property
    def heads(self) -> int:
        return self.weights.shape[1]

    @property
    def queries(self) -> int:
        return self.weights.shape[2]

    @property
    def keys(self) -> int:
        return self.weights.shape[3]

    def image_marginal(self) -> np.ndarray:
        """Mean over layers/heads/queries of mass on each image token."""
        start, end = self.image_span
        return self.weights[:, :, :, start:end].astype(np.float64).mean(
            axis=(0, 1, 2)
        )


def write_attn(tensor: AttentionTensor, path: str | Path) -> None:
    header = {
        "sample_id": tensor.sample_id,
        "condition": tensor.condition,
        "L": tensor.layers,
        "H": tensor.heads,
        "Q": tensor.queries,
        "K": tensor.keys,
        "image_span": list(tensor.image_span),
        "grid": list(tensor.grid),
        "dtype": "f32",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(tensor.weights, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_attn(path: str | Path) -> AttentionTensor:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise MalformedTensor("bad magic; not an ATTN1 file")
    offset = len(MAGIC)
    if len(data) < offset + 8:
        raise MalformedTensor("truncated before header length")
    (header_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    if len(data) < offset + header_len:
        raise MalformedTensor("truncated inside header")
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedTensor(f"invalid JSON header: {exc}") from exc
    offset += header_len
    try:
        dims = tuple(int(header[k]) for k in ("L", "H", "Q", "K"))
        sample_id = str(header["sample_id"])
        condition = str(header["condition"])
        image_span = tuple(int(v) for v in header["image_span"])
        grid = tuple(int(v) for v in header["grid"])
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedTensor(f"bad header field: {exc}") from exc
    if dtype != "f32":
        raise MalformedTensor(f"unsupported dtype {dtype!r}")
    if len(image_span) != 2 or len(grid) != 2:
        raise MalformedTensor("image_span and grid must each have 2 entries")
    if any(d <= 0 for d in dims):
        raise MalformedTensor(f"non-positive dims {dims}")
    expected = 4 * math.prod(dims)
    if len(data) - offset != expected:
        raise MalformedTensor(
            f"payload has {len(data) - offset} bytes, expected {expected}"
        )
    weights = np.frombuffer(data, dtype="<f4", offset=offset).reshape(dims)
    if not np.all(np.isfinite(weights)):
        raise MalformedTensor("non-finite attention weights")
    return AttentionTensor(
        sample_id=sample_id,
        condition=condition,
        weights=weights,
        image_span=(image_span[0], image_span[1]),
        grid=(grid[0], grid[1]),
    )


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BorderProfile:
    border_share: float
    body_share: float
    image_mass: float
    entropy: float


def border_mask(rows: int, cols: int, ring_width: int = 1) -> np.ndarray:
    mask = np.zeros((rows, cols), dtype=bool)
    r = ring_width
    mask[:r, :] = True
    mask[-r:, :] = True
    mask[:, :r] = True
    mask[:, -r:] = True
    return mask


def border_profile(t: AttentionTensor, ring_width: int = 1) -> BorderProfile:
    """Aggregate image-token marginal into border/body mass plus entropy."""
    m = t.image_marginal()
    rows, cols = t.grid
    grid = m.reshape(rows, cols)
    mask = border_mask(rows, cols, ring_width)
    image_mass = float(m.sum())
    border = float(grid[mask].sum())
    total = m.sum()
    if total > 0:
        p = m / total
        nz = p[p > 0]
        entropy = float(-(nz * np.log(nz)).sum())
    else:
        entropy = 0.0
    return BorderProfile(
        border_share=border,
        body_share=image_mass - border,
        image_mass=image_mass,
        entropy=entropy,
    )


def layer_curve(t: AttentionTensor) -> list[float]:
    """Per-layer image-attention fraction: mean over heads and queries of
    the total mass answer tokens place on the image span."""
    start, end = t.image_span
    per_layer = (
        t.weights[:, :, :, start:end].astype(np.float64)
        .sum(axis=3).mean(axis=(1, 2))
    )
    return [float(v) for v in per_layer]


@dataclass(frozen=True)
class ConditionStats:
    n: int
    border_share_mean: float
    border_share_std: float
    entropy_mean: float
    entropy_std: float
    layer_curve_mean: list[float]
    border_share_histogram: list[int]  # counts per HISTOGRAM_EDGES bin


@dataclass(frozen=True)
class ComparisonReport:
    a: ConditionStats
    b: ConditionStats
    delta_border_share: float
    delta_entropy: float
    delta_layer_curve: list[float]
    histogram_edges: list[float]

    def to_dict(self) -> dict:
        return {
            "a": self.a.__dict__,
            "b": self.b.__dict__,
            "delta_border_share": self.delta_border_share,
            "delta_entropy": self.delta_entropy,
            "delta_layer_curve": self.delta_layer_curve,
            "histogram_edges": self.histogram_edges,
        }


def _condition_stats(tensors: list[AttentionTensor], ring_width: int) -> ConditionStats:
    shares = []
    entropies = []
    curves = []
    for t in tensors:
        prof = border_profile(t, ring_width)
        shares.append(prof.border_share)
        entropies.append(prof.entropy)
        curves.append(layer_curve(t))
    shares_arr = np.array(shares)
    ent_arr = np.array(entropies)
    hist, _ = np.histogram(shares_arr, bins=HISTOGRAM_EDGES)
    max_layers = max(len(c) for c in curves)
    curve_mean = [
        float(np.mean([c[i] for c in curves if len(c) > i]))
        for i in range(max_layers)
    ]
    return ConditionStats(
        n=len(tensors),
        border_share_mean=float(shares_arr.mean()),
        border_share_std=float(shares_arr.std()),
        entropy_mean=float(ent_arr.mean()),
        entropy_std=float(ent_arr.std()),
        layer_curve_mean=curve_mean,
        border_share_histogram=[int(c) for c in hist],
    )


def compare_conditions(
    a: list[AttentionTensor],
    b: list[AttentionTensor],
    ring_width: int = 1,
) -> ComparisonReport:
    if not a or not b:
        raise ValueError("both tensor sets must be non-empty")
    grids = {t.grid for t in a} | {t.grid for t in b}
    if len(grids) > 1:
        offenders = [
            f"{t.sample_id}/{t.condition}:{t.grid[0]}x{t.grid[1]}"
            for t in (*a, *b)
        ]
        raise ShapeMismatch(offenders)
    stats_a = _condition_stats(a, ring_width)
    stats_b = _condition_stats(b, ring_width)
    n_layers = max(len(stats_a.layer_curve_mean), len(stats_b.layer_curve_mean))

    def at(curve: list[float], i: int) -> float:
        return curve[i] if i < len(curve) else float("nan")

    return ComparisonReport(
        a=stats_a,
        b=stats_b,
        delta_border_share=stats_b.border_share_mean - stats_a.border_share_mean,
        delta_entropy=stats_b.entropy_mean - stats_a.entropy_mean,
        delta_layer_curve=[
            at(stats_b.layer_curve_mean, i) - at(stats_a.layer_curve_mean, i)
            for i in range(n_layers)
        ],
        histogram_edges=list(HISTOGRAM_EDGES),
    )


# --------------------------------------------------------------------------
# Heatmap export
# --------------------------------------------------------------------------


def heatmap_export(
    t: AttentionTensor,
    out_path: str | Path,
    page_image: bytes | None = None,
    upscale: int = 32,
) -> Path:
    """Write a PNG of the image-token marginal plus a sidecar CSV grid.

    The marginal is min-max normalized and mapped through viridis; with a
    page image it is alpha-blended (0.5) on top at the page's resolution,
    otherwise nearest-neighbor upscaled.
    """
    import io

    from matplotlib import colormaps
    from PIL import Image

    out_path = Path(out_path)
    rows, cols = t.grid
    grid = t.image_marginal().reshape(rows, cols)
    lo, hi = grid.min(), grid.max()
    norm = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)
    rgba = (colormaps["viridis"](norm) * 255).astype(np.uint8)
    heat = Image.fromarray(rgba, mode="RGBA")

    out_path.parent.mkdir(parents=True, exist_ok=True)
    if page_image is not None:
        page = Image.open(io.BytesIO(page_image)).convert("RGBA")
        heat = heat.resize(page.size, resample=Image.NEAREST)
        blended = Image.blend(page, heat, alpha=0.5)
    else:
        blended = heat.resize((cols * upscale, rows * upscale), resample=Image.NEAREST)
    blended.convert("RGB").save(out_path, format="PNG")

    csv_path = out_path.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        for r in range(rows):
            fh.write(",".join(f"{grid[r, c]:.8f}" for c in range(cols)) + "\n")
    return out_path
