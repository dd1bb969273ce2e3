"""Geometric layout analysis: flat OCR tokens -> hierarchical LayoutTree.

The pipeline is: cluster tokens into lines, recursively split the page on
whitespace valleys (XY-cut) to get blocks and reading order, then run table
and figure detectors over the result.  Everything is driven by geometry
alone, so shuffling token input order or rescaling the page never changes
the structure.

All thresholds live in :class:`LayoutParams` and are expressed relative to
page dimensions or the median line height, which is what makes the analysis
scale invariant.
"""

from __future__ import annotations

import dataclasses
import re
import statistics
from dataclasses import dataclass, field

from .doc_model import (
    BoundingBox,
    Column,
    FigureRegion,
    LayoutNode,
    LayoutTree,
    Line,
    OcrPage,
    OcrToken,
    Table,
    TextBlock,
)

CAPTION_RE = re.compile(r"^(fig\.?|figure|chart|table)\b", re.IGNORECASE)

# occupancy raster resolution for figure detection (cells per page side)
_FIGURE_GRID = 200
_FIGURE_MIN_AREA_FRAC = 0.05


@dataclass(frozen=True)
class LayoutParams:
    line_y_overlap_min: float = 0.5
    block_gap_factor: float = 1.5
    xycut_valley_min: float = 0.02
    table_col_jitter: float = 0.01
    table_min_rows: int = 2
    table_min_cols: int = 2
    heading_size_ratio: float = 1.2

    def __post_init__(self) -> None:
        for name in ("line_y_overlap_min", "xycut_valley_min", "table_col_jitter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        for name in ("block_gap_factor", "heading_size_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("table_min_rows", "table_min_cols"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LayoutParams":
        return cls(**d)


def _token_sort_key(t: OcrToken):
    return (t.box.y0, t.box.x0, t.box.y1, t.box.x1, t.text)


def _v_overlap_ratio(a: BoundingBox, b: BoundingBox) -> float:
    """Vertical overlap relative to the smaller box height.

    Degenerate (zero-height) boxes count as fully overlapping when their y
    lies inside the other box's y-extent.
    """
    overlap = min(a.y1, b.y1) - max(a.y0, b.y0)
    smaller = min(a.height, b.height)
    if smaller == 0:
        return 1.0 if overlap >= 0 else 0.0
    return max(overlap, 0.0) / smaller


def _make_line(tokens: list[OcrToken]) -> Line:
    tokens = sorted(tokens, key=lambda t: (t.box.x0, t.box.x1, t.text))
    box = tokens[0].box
    for t in tokens[1:]:
        box = box.union(t.box)
    return Line(tokens=tuple(tokens), box=box)


def group_lines(page: OcrPage, params: LayoutParams) -> list[Line]:
    """Partition tokens into lines via transitive vertical-overlap clustering.

    Two tokens belong to the same line iff they are connected through pairs
    whose overlap ratio meets ``line_y_overlap_min``.  Uses a y-sorted sweep
    so only vertically-near pairs are compared.
    """
    tokens = sorted(page.tokens, key=_token_sort_key)
    n = len(tokens)
    if n == 0:
        return []

    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    # tokens sorted by y0: token j can only overlap earlier token i if
    # tokens[i].y1 > tokens[j].y0, so scan back until y1 falls behind.
    order = sorted(range(n), key=lambda i: tokens[i].box.y0)
    active: list[int] = []
    for j in order:
        bj = tokens[j].box
        still_active = []
        for i in active:
            if tokens[i].box.y1 >= bj.y0:
                still_active.append(i)
                if _v_overlap_ratio(tokens[i].box, bj) >= params.line_y_overlap_min:
                    union(i, j)
        active = still_active + [j]

    groups: dict[int, list[OcrToken]] = {}
    for i, t in enumerate(tokens):
        groups.setdefault(find(i), []).append(t)
    lines = [_make_line(g) for g in groups.values()]
    lines.sort(key=lambda ln: (ln.box.y0, ln.box.x0))
    return lines


# --------------------------------------------------------------------------
# XY-cut
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LeafBlock:
    """Terminal XY-cut region: its lines plus the assigned reading rank."""

    lines: tuple[Line, ...]
    box: BoundingBox
    reading_rank: int


@dataclass(frozen=True)
class SplitNode:
    children: tuple["SplitNode | LeafBlock", ...]
    box: BoundingBox


def _union_box(boxes: list[BoundingBox]) -> BoundingBox:
    box = boxes[0]
    for b in boxes[1:]:
        box = box.union(b)
    return box


def _projection_gaps(
    intervals: list[tuple[float, float]], lo: float, hi: float
) -> list[tuple[float, float]]:
    """Maximal uncovered gaps strictly inside [lo, hi]."""
    ivs = sorted(intervals)
    gaps = []
    cursor = lo
    for a, b in ivs:
        if a > cursor:
            gaps.append((cursor, a))
        cursor = max(cursor, b)
    # region box is the union bbox, so content touches both edges; any
    # trailing span would be numerically empty.
    return [(a, b) for a, b in gaps if b - a > 0 and a > lo and b < hi]


def _best_valley(
    tokens: list[OcrToken], box: BoundingBox, page: OcrPage, params: LayoutParams
) -> tuple[str, float, float] | None:
    """Widest qualifying whitespace valley in a region.

    Returns (orientation, gap_lo, gap_hi) or None.  Ties: wider valley
    first, then vertical before horizontal, then smaller coordinate.
    """
    candidates: list[tuple[float, int, float, float, str]] = []
    v_gaps = _projection_gaps(
        [(t.box.x0, t.box.x1) for t in tokens], box.x0, box.x1
    )
    for a, b in v_gaps:
        if b - a >= params.xycut_valley_min * page.width:
            candidates.append((b - a, 0, a, b, "v"))
    h_gaps = _projection_gaps(
        [(t.box.y0, t.box.y1) for t in tokens], box.y0, box.y1
    )
    for a, b in h_gaps:
        if b - a >= params.xycut_valley_min * page.height:
            candidates.append((b - a, 1, a, b, "h"))
    if not candidates:
        return None
    width, _, a, b, orient = max(
        candidates, key=lambda c: (c[0], -c[1], -c[2])
    )
    return orient, a, b


def _split_lines_vertically(
    lines: list[Line], cut: float
) -> tuple[list[Line], list[Line]]:
    """Split lines at a vertical valley, re-forming lines that straddle it."""
    left: list[Line] = []
    right: list[Line] = []
    for line in lines:
        lt = [t for t in line.tokens if t.box.x1 <= cut]
        rt = [t for t in line.tokens if t.box.x1 > cut]
        if lt:
            left.append(_make_line(lt))
        if rt:
            right.append(_make_line(rt))
    return left, right


def _cut(
    lines: list[Line], page: OcrPage, params: LayoutParams
) -> SplitNode | LeafBlock:
    tokens = [t for line in lines for t in line.tokens]
    box = _union_box([t.box for t in tokens])
    valley = _best_valley(tokens, box, page, params)
    if valley is None:
        ordered = sorted(lines, key=lambda ln: (ln.box.y0, ln.box.x0))
        return LeafBlock(lines=tuple(ordered), box=box, reading_rank=-1)
    orient, a, b = valley
    mid = (a + b) / 2.0
    if orient == "v":
        first, second = _split_lines_vertically(lines, mid)
    else:
        first = [ln for ln in lines if ln.box.y1 <= mid]
        second = [ln for ln in lines if ln.box.y1 > mid]
    children = (_cut(first, page, params), _cut(second, page, params))
    return SplitNode(children=children, box=box)


def _assign_ranks(
    node: SplitNode | LeafBlock, counter: list[int]
) -> SplitNode | LeafBlock:
    if isinstance(node, LeafBlock):
        rank = counter[0]
        counter[0] += 1
        return dataclasses.replace(node, reading_rank=rank)
    return dataclasses.replace(
        node, children=tuple(_assign_ranks(c, counter) for c in node.children)
    )


def xy_cut(
    lines: list[Line], page: OcrPage, params: LayoutParams
) -> SplitNode | LeafBlock | None:
    """Recursive XY-cut over lines; vertical cuts order left column first.

    Reading ranks are assigned depth-first, so all leaves of a left column
    precede all leaves of the right column, top-to-bottom within each.
    """
    if not lines:
        return None
    root = _cut(list(lines), page, params)
    return _assign_ranks(root, [0])


def leaf_blocks(node: SplitNode | LeafBlock | None) -> list[LeafBlock]:
    if node is None:
        return []
    if isinstance(node, LeafBlock):
        return [node]
    out: list[LeafBlock] = []
    for child in node.children:
        out.extend(leaf_blocks(child))
    return out


# --------------------------------------------------------------------------
# Table detection
# --------------------------------------------------------------------------


def detect_tables(
    block: LeafBlock, page: OcrPage, params: LayoutParams
) -> Table | None:
    """Recover a tabular grid from a leaf block, or None.

    Column anchors are single-linkage clusters of token left edges; an
    anchor counts only if tokens from at least ``table_min_rows`` distinct
    lines support it.  The whole block must fit the grid: every token within
    jitter of a supported anchor.  Multi-word cells are out of scope.
    """
    lines = block.lines
    if len(lines) < params.table_min_rows:
        return None
    tol = params.table_col_jitter * page.width
    entries = sorted(
        ((t.box.x0, li, t) for li, line in enumerate(lines) for t in line.tokens),
        key=lambda e: (e[0], e[1], e[2].text),
    )
    clusters: list[list[tuple[float, int, OcrToken]]] = []
    for e in entries:
        if clusters and e[0] - clusters[-1][-1][0] <= 2 * tol:
            clusters[-1].append(e)
        else:
            clusters.append([e])

    anchors: list[tuple[float, list[tuple[float, int, OcrToken]]]] = []
    stray: list[tuple[float, int, OcrToken]] = []
    for cl in clusters:
        if len({li for _, li, _ in cl}) >= params.table_min_rows:
            center = sum(x for x, _, _ in cl) / len(cl)
            anchors.append((center, cl))
        else:
            stray.extend(cl)
    if len(anchors) < params.table_min_cols:
        return None
    if stray:
        return None
    for center, cl in anchors:
        # membership tolerance mirrors the linkage gap (2 * tol): a cluster
        # of jittered edges can legitimately spread that far around its mean
        if any(abs(x - center) > 2 * tol for x, _, _ in cl):
            return None

    anchors.sort(key=lambda a: a[0])
    cells: list[list[list[OcrToken]]] = [
        [[] for _ in anchors] for _ in lines
    ]
    for ci, (_, cl) in enumerate(anchors):
        for _, li, tok in cl:
            cells[li][ci].append(tok)
    matrix = tuple(
        tuple(tuple(sorted(cell, key=_token_sort_key)) for cell in row)
        for row in cells
    )
    return Table(cells=matrix, box=block.box, reading_rank=block.reading_rank)


# --------------------------------------------------------------------------
# Figure detection
# --------------------------------------------------------------------------


def _occupancy_grid(page: OcrPage, grid: int) -> list[list[bool]]:
    covered = [[False] * grid for _ in range(grid)]
    cw = page.width / grid
    ch = page.height / grid
    for t in page.tokens:
        c0 = max(int(t.box.x0 / cw), 0)
        c1 = min(int(-(-t.box.x1 // cw)), grid)  # ceil
        r0 = max(int(t.box.y0 / ch), 0)
        r1 = min(int(-(-t.box.y1 // ch)), grid)
        for r in range(r0, r1):
            row = covered[r]
            for c in range(c0, c1):
                row[c] = True
    return covered


def _largest_empty_rect(covered: list[list[bool]]) -> tuple[int, int, int, int, int]:
    """Largest all-empty rectangle via histogram sweep.

    Returns (area_cells, r0, c0, r1, c1) with r1/c1 exclusive.
    """
    grid = len(covered)
    heights = [0] * grid
    best = (0, 0, 0, 0, 0)
    for r in range(grid):
        row = covered[r]
        for c in range(grid):
            heights[c] = 0 if row[c] else heights[c] + 1
        stack: list[int] = []
        for c in range(grid + 1):
            h = heights[c] if c < grid else 0
            while stack and heights[stack[-1]] >= h:
                top = stack.pop()
                height = heights[top]
                left = stack[-1] + 1 if stack else 0
                area = height * (c - left)
                if area > best[0]:
                    best = (area, r - height + 1, left, r + 1, c)
            stack.append(c)
    return best


def detect_figures(
    page: OcrPage, blocks: list[LeafBlock]
) -> list[tuple[BoundingBox, str | None]]:
    """Find large token-free rectangles and attach captions below them.

    Greedy extraction: repeatedly take the largest empty rectangle on a
    rasterized occupancy grid until the remainder falls under 5% of page
    area.  A block directly below whose first line starts with a caption
    cue word becomes the region's caption text.
    """
    if not page.tokens:
        return []
    covered = _occupancy_grid(page, _FIGURE_GRID)
    # whitespace outside the content hull is margin, not figure space
    cw_ = page.width / _FIGURE_GRID
    ch_ = page.height / _FIGURE_GRID
    hx0 = min(t.box.x0 for t in page.tokens)
    hx1 = max(t.box.x1 for t in page.tokens)
    hy0 = min(t.box.y0 for t in page.tokens)
    hy1 = max(t.box.y1 for t in page.tokens)
    c_lo, c_hi = int(hx0 / cw_), int(-(-hx1 // cw_))
    r_lo, r_hi = int(hy0 / ch_), int(-(-hy1 // ch_))
    for r in range(_FIGURE_GRID):
        row = covered[r]
        for c in range(_FIGURE_GRID):
            if not (r_lo <= r < r_hi and c_lo <= c < c_hi):
                row[c] = True
    min_cells = _FIGURE_MIN_AREA_FRAC * _FIGURE_GRID * _FIGURE_GRID
    cw = page.width / _FIGURE_GRID
    ch = page.height / _FIGURE_GRID
    regions: list[BoundingBox] = []
    while True:
        area, r0, c0, r1, c1 = _largest_empty_rect(covered)
        if area < min_cells:
            break
        regions.append(BoundingBox(c0 * cw, r0 * ch, c1 * cw, r1 * ch))
        for r in range(r0, r1):
            for c in range(c0, c1):
                covered[r][c] = True

    regions.sort(key=lambda b: (b.y0, b.x0))
    out: list[tuple[BoundingBox, str | None]] = []
    for box in regions:
        caption = None
        best_y = None
        for block in blocks:
            if not block.lines:
                continue
            bb = block.box
            overlaps_x = bb.x0 < box.x1 and bb.x1 > box.x0
            below = bb.y0 >= box.y1 - ch  # allow one raster cell of slack
            if overlaps_x and below and CAPTION_RE.match(block.lines[0].text):
                if best_y is None or bb.y0 < best_y:
                    best_y = bb.y0
                    caption = " ".join(line.text for line in block.lines)
        out.append((box, caption))
    return out


# --------------------------------------------------------------------------
# Full analysis
# --------------------------------------------------------------------------


def _page_median_font(page: OcrPage) -> float | None:
    hints = [t.font_size_hint for t in page.tokens if t.font_size_hint is not None]
    return statistics.median(hints) if hints else None


def _block_role(
    block: LeafBlock,
    page_median: float | None,
    params: LayoutParams,
    n_blocks: int,
    caption_blocks: set[int],
) -> str:
    if block.reading_rank in caption_blocks:
        return "caption"
    if len(block.lines) != 1:
        return "paragraph"
    line = block.lines[0]
    if page_median is not None:
        hints = [
            t.font_size_hint for t in line.tokens if t.font_size_hint is not None
        ]
        if hints and statistics.median(hints) >= params.heading_size_ratio * page_median:
            return "title" if block.reading_rank == 0 else "heading"
        return "paragraph"
    if len(line.tokens) < 8 and block.reading_rank < n_blocks - 1:
        return "title" if block.reading_rank == 0 else "heading"
    return "paragraph"


def _rebuild(
    node: SplitNode | LeafBlock,
    leaf_map: dict[int, LayoutNode],
) -> LayoutNode:
    if isinstance(node, LeafBlock):
        return leaf_map[node.reading_rank]
    return Column(
        children=tuple(_rebuild(c, leaf_map) for c in node.children),
        box=node.box,
    )


def analyze(page: OcrPage, params: LayoutParams | None = None) -> LayoutTree:
    """Run the full pipeline: lines -> XY-cut -> tables/figures -> LayoutTree."""
    params = params or LayoutParams()
    lines = group_lines(page, params)
    root = xy_cut(lines, page, params)
    blocks = leaf_blocks(root)

    figures = detect_figures(page, blocks)
    caption_blocks = set()
    caption_texts = {text for _, text in figures if text}
    for block in blocks:
        text = " ".join(line.text for line in block.lines)
        if text in caption_texts:
            caption_blocks.add(block.reading_rank)

    page_median = _page_median_font(page)
    leaf_map: dict[int, LayoutNode] = {}
    for block in blocks:
        table = detect_tables(block, page, params)
        if table is not None:
            leaf_map[block.reading_rank] = table
        else:
            role = _block_role(
                block, page_median, params, len(blocks), caption_blocks
            )
            leaf_map[block.reading_rank] = TextBlock(
                lines=block.lines,
                role=role,
                box=block.box,
                reading_rank=block.reading_rank,
            )

    roots: list[LayoutNode] = []
    if root is not None:
        roots.append(_rebuild(root, leaf_map))
    offset = len(blocks)
    for i, (box, caption) in enumerate(figures):
        roots.append(
            FigureRegion(box=box, reading_rank=offset + i, nearby_caption=caption)
        )
    return LayoutTree(page_id=page.page_id, roots=tuple(roots))
