"""Core domain types shared by every stage of the pipeline.

All types are immutable dataclasses validated at construction time.
Invalid field combinations raise :class:`ModelError` subclasses rather than
producing half-formed objects, so downstream code never re-checks geometry.

Coordinates use a top-left origin with y increasing downward, matching the
hOCR/ALTO convention.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field


class ModelError(ValueError):
    """Base class for domain-model construction failures."""


class InvalidBox(ModelError):
    pass


class InvalidToken(ModelError):
    pass


class InvalidPage(ModelError):
    pass


class InvalidLayout(ModelError):
    pass


class InvalidDocument(ModelError):
    pass


VIRTUAL_PATH_RE = re.compile(r"^figures/p(\d+)_fig(\d+)\.[A-Za-z0-9]+$")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in page coordinates (pixels or OCR-native units)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise InvalidBox(f"{name} must be numeric, got {v!r}")
            if not math.isfinite(v) or v < 0:
                raise InvalidBox(f"{name} must be finite and >= 0, got {v!r}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidBox(
                f"degenerate box: ({self.x0},{self.y0})-({self.x1},{self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )

    def clamped(self, width: float, height: float) -> "BoundingBox":
        """Clamp to [0,width]x[0,height]."""
        return BoundingBox(
            min(max(self.x0, 0.0), width),
            min(max(self.y0, 0.0), height),
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
        )


@dataclass(frozen=True)
class OcrToken:
    """A single recognized word with its geometry."""

    text: str
    box: BoundingBox
    confidence: float | None = None
    font_size_hint: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise InvalidToken(f"token text empty after normalization: {self.text!r}")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise InvalidToken(f"confidence out of [0,1]: {self.confidence!r}")
        if self.font_size_hint is not None and (
            not math.isfinite(self.font_size_hint) or self.font_size_hint <= 0
        ):
            raise InvalidToken(f"bad font_size_hint: {self.font_size_hint!r}")


@dataclass(frozen=True)
class OcrPage:
    """Flat word-level OCR output for one page."""

    page_id: str
    width: float
    height: float
    tokens: tuple[OcrToken, ...]

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidPage(
                f"page dims must be positive: {self.width}x{self.height}"
            )
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for t in self.tokens:
            b = t.box
            if b.x1 > self.width or b.y1 > self.height:
                raise InvalidPage(
                    f"token box {b} exceeds page bounds "
                    f"{self.width}x{self.height}; clamp on ingest"
                )


# --------------------------------------------------------------------------
# Layout tree
# --------------------------------------------------------------------------

TEXT_ROLES = ("title", "heading", "paragraph", "caption")


@dataclass(frozen=True)
class Line:
    """One geometric text line: tokens sorted by x0 plus their union box."""

    tokens: tuple[OcrToken, ...]
    box: BoundingBox

    def __post_init__(self) -> None:
        if not self.tokens:
            raise InvalidLayout("line with no tokens")
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)


@dataclass(frozen=True)
class TextBlock:
    lines: tuple[Line, ...]
    role: str
    box: BoundingBox
    reading_rank: int

    def __post_init__(self) -> None:
        if self.role not in TEXT_ROLES:
            raise InvalidLayout(f"unknown text role {self.role!r}")
        if not self.lines:
            raise InvalidLayout("text block with no lines")
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def text(self) -> str:
        return " ".join(line.text for line in self.lines)

    def iter_tokens(self):
        for line in self.lines:
            yield from line.tokens


@dataclass(frozen=True)
class Table:
    """Recovered tabular grid; cells hold token lists, possibly empty."""

    cells: tuple[tuple[tuple[OcrToken, ...], ...], ...]
    box: BoundingBox
    reading_rank: int

    def __post_init__(self) -> None:
        if not self.cells:
            raise InvalidLayout("table with no rows")
        widths = {len(row) for row in self.cells}
        if len(widths) != 1:
            raise InvalidLayout(f"ragged table rows: widths {sorted(widths)}")
        object.__setattr__(
            self,
            "cells",
            tuple(tuple(tuple(cell) for cell in row) for row in self.cells),
        )

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.cells[0])

    def cell_text(self, r: int, c: int) -> str:
        return " ".join(t.text for t in self.cells[r][c])

    def iter_tokens(self):
        for row in self.cells:
            for cell in row:
                yield from cell


@dataclass(frozen=True)
class FigureRegion:
    """A token-free rectangle believed to contain a figure/chart."""

    box: BoundingBox
    reading_rank: int
    nearby_caption: str | None = None


@dataclass(frozen=True)
class Column:
    """Internal grouping node from recursive page splitting."""

    children: tuple["LayoutNode", ...]
    box: BoundingBox

    def __post_init__(self) -> None:
        if not self.children:
            raise InvalidLayout("column with no children")
        object.__setattr__(self, "children", tuple(self.children))


LayoutNode = Column | TextBlock | Table | FigureRegion
LEAF_TYPES = (TextBlock, Table, FigureRegion)


def iter_leaves(node: LayoutNode):
    if isinstance(node, Column):
        for child in node.children:
            yield from iter_leaves(child)
    else:
        yield node


@dataclass(frozen=True)
class LayoutTree:
    """Hierarchical layout of one page with total reading order over leaves.

    ``discarded`` lists source tokens dropped as noise; together with the
    tokens reachable from leaves it must cover the source page exactly.
    """

    page_id: str
    roots: tuple[LayoutNode, ...]
    discarded: tuple[OcrToken, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "roots", tuple(self.roots))
        object.__setattr__(self, "discarded", tuple(self.discarded))
        leaves = list(self.leaves())
        ranks = sorted(leaf.reading_rank for leaf in leaves)
        if ranks != list(range(len(leaves))):
            raise InvalidLayout(
                f"reading_rank values {ranks} are not a permutation of "
                f"0..{len(leaves) - 1}"
            )

    def leaves(self):
        for root in self.roots:
            yield from iter_leaves(root)

    def leaves_in_reading_order(self) -> list[LayoutNode]:
        return sorted(self.leaves(), key=lambda leaf: leaf.reading_rank)

    def assigned_tokens(self) -> list[OcrToken]:
        out: list[OcrToken] = []
        for leaf in self.leaves():
            if isinstance(leaf, (TextBlock, Table)):
                out.extend(leaf.iter_tokens())
        return out

    def covers(self, page: OcrPage) -> bool:
        """True iff assigned + discarded tokens equal the page's tokens."""
        have = sorted(
            (t.text, t.box.x0, t.box.y0, t.box.x1, t.box.y1)
            for t in (*self.assigned_tokens(), *self.discarded)
        )
        want = sorted(
            (t.text, t.box.x0, t.box.y0, t.box.x1, t.box.y1) for t in page.tokens
        )
        return have == want


# --------------------------------------------------------------------------
# Structured document
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Section:
    level: int
    title: str

    def __post_init__(self) -> None:
        if self.level not in (1, 2):
            raise InvalidDocument(f"section level must be 1 or 2, got {self.level}")
        if not self.title.strip():
            raise InvalidDocument("empty section title")


@dataclass(frozen=True)
class Paragraph:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidDocument("empty paragraph")


@dataclass(frozen=True)
class TabularBlock:
    col_spec: str
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.rows:
            raise InvalidDocument("tabular block with no rows")
        widths = {len(row) for row in self.rows}
        if len(widths) != 1:
            raise InvalidDocument(f"ragged tabular rows: widths {sorted(widths)}")
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))


@dataclass(frozen=True)
class FigurePlaceholder:
    virtual_path: str
    caption: str | None = None

    def __post_init__(self) -> None:
        if not VIRTUAL_PATH_RE.match(self.virtual_path):
            raise InvalidDocument(
                f"virtual path {self.virtual_path!r} does not match "
                "figures/p<page>_fig<k>.<ext>"
            )


@dataclass(frozen=True)
class RawBlock:
    text: str


StructElement = Section | Paragraph | TabularBlock | FigurePlaceholder | RawBlock


@dataclass(frozen=True)
class StructuredDoc:
    elements: tuple[StructElement, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))
        paths = [
            e.virtual_path
            for e in self.elements
            if isinstance(e, FigurePlaceholder)
        ]
        if len(paths) != len(set(paths)):
            raise InvalidDocument(f"duplicate figure virtual paths: {paths}")
