"""Synthetic-page generators and mock plumbing shared across suites."""

from __future__ import annotations

import json
import random

import httpx
import numpy as np

from docstruct.attention import AttentionTensor
from docstruct.doc_model import BoundingBox, OcrPage, OcrToken
from docstruct.gateway import Gateway

PAGE = 512  # unit page side for synthetic layouts


def token(text, x0, y0, x1, y1, font=None):
    return OcrToken(
        text=text, box=BoundingBox(x0, y0, x1, y1), font_size_hint=font
    )


def make_page(tokens, page_id="page_1", w=PAGE, h=PAGE):
    return OcrPage(page_id=page_id, width=w, height=h, tokens=tuple(tokens))


# -- guillotine layout generator (for the XY-cut oracle suite) -------------


def _fill_cell(rng, x0, y0, x1, y1, counter):
    """Dense token grid in a cell: internal gaps stay below any valley."""
    tokens = []
    tw, th, gap = 9, 7, 1
    y = y0
    while y + th <= y1:
        x = x0
        while x + tw <= x1:
            tokens.append(token(f"w{next(counter)}", x, y, x + tw, y + th))
            x += tw + gap
        y += th + gap
    if not tokens:  # cell too small for the grid; one token filling it
        tokens.append(
            token(f"w{next(counter)}", x0, y0, max(x0 + 1, x1), max(y0 + 1, y1))
        )
    return tokens


def guillotine_layout(seed, valley_min=0.02, page=PAGE):
    """Random recursive guillotine partition with qualifying gutters."""
    rng = random.Random(seed)
    min_gap = int(valley_min * page) + 2
    from itertools import count

    counter = count()
    tokens = []

    def split(x0, y0, x1, y1, depth):
        w, h = x1 - x0, y1 - y0
        can_v = w >= 2 * 40 + min_gap
        can_h = h >= 2 * 30 + min_gap
        if depth >= 3 or (not can_v and not can_h) or rng.random() < 0.25:
            tokens.extend(_fill_cell(rng, x0, y0, x1, y1, counter))
            return
        if can_v and (not can_h or rng.random() < 0.5):
            cut = rng.randint(x0 + 40, x1 - 40 - min_gap)
            split(x0, y0, cut, y1, depth + 1)
            split(cut + min_gap, y0, x1, y1, depth + 1)
        else:
            cut = rng.randint(y0 + 30, y1 - 30 - min_gap)
            split(x0, y0, x1, cut, depth + 1)
            split(x0, cut + min_gap, x1, y1, depth + 1)

    split(4, 4, page - 4, page - 4, 0)
    return make_page(tokens, page_id=f"g{seed}")


# -- jittered line-grid generator ------------------------------------------


def line_grid_page(seed, n_lines=5, tokens_per_line=10, page=PAGE):
    """Known n-line layout with y jitter that keeps lines unambiguous.

    Line height 20, pitch 40; jitter up to 4 keeps same-line overlap >= 0.5
    of the smaller height and cross-line overlap at 0.
    """
    rng = random.Random(seed)
    tokens = []
    truth = []
    for li in range(n_lines):
        base = 30 + li * 40
        line_tokens = []
        for ti in range(tokens_per_line):
            jitter = rng.uniform(-4, 4)
            y0 = base + jitter
            x0 = 10 + ti * 45 + rng.uniform(0, 5)
            t = token(f"l{li}t{ti}", x0, y0, x0 + 38, y0 + 20)
            tokens.append(t)
            line_tokens.append(t)
        truth.append(line_tokens)
    rng.shuffle(tokens)
    return make_page(tokens, page_id=f"lines{seed}"), truth


# -- jittered table-grid generator -----------------------------------------


def table_grid_page(seed, n_rows, n_cols, page=PAGE, jitter_frac=0.9):
    """R x C token grid with per-token x jitter below the cluster tolerance."""
    rng = random.Random(seed)
    tol = 0.01 * page  # matches LayoutParams.table_col_jitter default
    jitter = jitter_frac * tol
    col_pitch = max(4 * tol, (page - 40) / max(n_cols, 1))
    row_pitch = 24
    tokens = []
    for r in range(n_rows):
        for c in range(n_cols):
            x0 = 20 + c * col_pitch + rng.uniform(-jitter, jitter)
            y0 = 20 + r * row_pitch + rng.uniform(-2, 2)
            tokens.append(token(f"r{r}c{c}", x0, y0, x0 + 30, y0 + 16))
    return make_page(tokens, page_id=f"tbl{seed}")


# -- figure planting generator ---------------------------------------------


def planted_figure_page(seed, page=PAGE):
    """Token-tiled page with 1-2 planted empty rectangles of >= 5% area."""
    rng = random.Random(seed)
    n_figs = rng.randint(1, 2)
    planted = []
    attempts = 0
    while len(planted) < n_figs and attempts < 50:
        attempts += 1
        w = rng.randint(int(0.25 * page), int(0.5 * page))
        h = rng.randint(int(0.25 * page), int(0.5 * page))
        x0 = rng.randint(0, page - w)
        y0 = rng.randint(0, page - h)
        rect = (x0, y0, x0 + w, y0 + h)
        if all(
            rect[2] + 40 <= p[0] or p[2] + 40 <= rect[0]
            or rect[3] + 40 <= p[1] or p[3] + 40 <= rect[1]
            for p in planted
        ):
            planted.append(rect)

    tokens = []
    tw, th, gx, gy = 18, 10, 2, 2
    i = 0
    y = 0
    while y + th <= page:
        x = 0
        while x + tw <= page:
            inside = any(
                x + tw > r[0] and x < r[2] and y + th > r[1] and y < r[3]
                for r in planted
            )
            if not inside:
                tokens.append(token(f"t{i}", x, y, x + tw, y + th))
                i += 1
            x += tw + gx
        y += th + gy
    return make_page(tokens, page_id=f"fig{seed}"), planted


# -- random layout trees (for encoder round-trip suites) -------------------

_SPECIALS = "&%$#_{}\\~^"


def _rand_word(rng):
    word = "".join(rng.choice("abcdefgXYZ0123") for _ in range(rng.randint(1, 6)))
    if rng.random() < 0.35:
        pos = rng.randrange(len(word) + 1)
        word = word[:pos] + rng.choice(_SPECIALS) + word[pos:]
    return word


def random_layout_tree(seed, page=PAGE):
    """Synthetic LayoutTree with mixed leaf kinds and hostile characters."""
    from docstruct.doc_model import (
        BoundingBox,
        FigureRegion,
        LayoutTree,
        Line,
        Table,
        TextBlock,
    )

    rng = random.Random(seed)
    roots = []
    y = 10.0
    rank = 0

    def text_block(role, n_lines):
        nonlocal y, rank
        lines = []
        for _ in range(n_lines):
            toks = []
            x = 10.0
            for _ in range(rng.randint(1, 5)):
                w = rng.uniform(15, 60)
                toks.append(token(_rand_word(rng), x, y, x + w, y + 12))
                x += w + 4
            box = toks[0].box
            for t in toks[1:]:
                box = box.union(t.box)
            lines.append(Line(tokens=tuple(toks), box=box))
            y += 16
        box = lines[0].box
        for line in lines[1:]:
            box = box.union(line.box)
        blk = TextBlock(lines=tuple(lines), role=role, box=box, reading_rank=rank)
        rank += 1
        y += 8
        return blk

    def table_block():
        nonlocal y, rank
        n_rows, n_cols = rng.randint(2, 4), rng.randint(2, 3)
        cells = []
        for r in range(n_rows):
            row = []
            filled = rng.randrange(n_cols)  # guaranteed non-empty cell
            for c in range(n_cols):
                if c != filled and rng.random() < 0.15:
                    row.append(())
                    continue
                x0 = 10 + c * 160
                row.append(
                    tuple(
                        token(_rand_word(rng), x0 + k * 50, y, x0 + k * 50 + 45, y + 12)
                        for k in range(rng.randint(1, 2))
                    )
                )
            cells.append(tuple(row))
            y += 16
        tbl = Table(
            cells=tuple(cells),
            box=BoundingBox(10, y - n_rows * 16, 500, y),
            reading_rank=rank,
        )
        rank += 1
        y += 8
        return tbl

    def figure_block():
        nonlocal y, rank
        h = rng.uniform(40, 90)
        caption = None
        if rng.random() < 0.6:
            caption = "Figure: " + " ".join(
                _rand_word(rng) for _ in range(rng.randint(1, 5))
            )
        fig = FigureRegion(
            box=BoundingBox(10, y, 500, y + h),
            reading_rank=rank,
            nearby_caption=caption,
        )
        rank += 1
        y += h + 8
        return fig

    if rng.random() < 0.5:
        roots.append(text_block("title", 1))
    for _ in range(rng.randint(1, 7)):
        kind = rng.choice(["para", "para", "heading", "caption", "table", "figure"])
        if kind == "table":
            roots.append(table_block())
        elif kind == "figure":
            roots.append(figure_block())
        elif kind == "heading":
            roots.append(text_block("heading", 1))
        else:
            roots.append(text_block("caption" if kind == "caption" else "paragraph",
                                    rng.randint(1, 3)))
    return LayoutTree(page_id=f"page_{seed % 9 + 1}", roots=tuple(roots))


def iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter) if inter else 0.0


# -- attention tensors ------------------------------------------------------


def random_tensor(seed, L=3, H=2, Q=4, rows=4, cols=4, extra_keys=6,
                  condition="image_only", sample_id=None):
    rng = np.random.default_rng(seed)
    K = rows * cols + extra_keys
    w = rng.random((L, H, Q, K)).astype(np.float32)
    w /= w.sum(axis=3, keepdims=True)
    return AttentionTensor(
        sample_id=sample_id or f"s{seed}",
        condition=condition,
        weights=w,
        image_span=(extra_keys // 2, extra_keys // 2 + rows * cols),
        grid=(rows, cols),
    )


def uniform_image_tensor(rows=4, cols=4, L=1, H=1, Q=1):
    """All attention mass spread uniformly over the image tokens."""
    n = rows * cols
    w = np.zeros((L, H, Q, n), dtype=np.float32)
    w[:] = 1.0 / n
    return AttentionTensor(
        sample_id="uniform",
        condition="image_only",
        weights=w,
        image_span=(0, n),
        grid=(rows, cols),
    )


# -- mock gateway ----------------------------------------------------------


def completion_body(text, prompt_tokens=7, completion_tokens=3):
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        },
    }


class ScriptedHandler:
    """httpx MockTransport handler replaying scripted (status, text) turns."""

    def __init__(self, turns):
        self.turns = list(turns)
        self.requests = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(json.loads(request.content))
        status, text = (
            self.turns.pop(0) if self.turns else (200, "OK")
        )
        if status != 200:
            return httpx.Response(status, json={"error": text})
        return httpx.Response(200, json=completion_body(text))


def mock_gateway(tmp_path, turns, **kwargs):
    handler = ScriptedHandler(turns)
    gw = Gateway(
        audit_log=tmp_path / "audit.jsonl",
        client=httpx.Client(transport=httpx.MockTransport(handler)),
        **kwargs,
    )
    return gw, handler
