"""LaTeX-style structured text: emit from a LayoutTree, parse back, score.

The emitted grammar is small and fixed: sectioning commands, ``tabular``
environments with ``|c|`` column specs, ``figure`` environments holding an
``\\includegraphics`` virtual path, ``verbatim`` for raw spans, and plain
paragraphs separated by blank lines.  ``parse_structured`` accepts a looser
superset (model-returned text is messy) and never fails: unrecognized spans
become RawBlocks with diagnostics and unbalanced environments are closed at
end of input.

Documents store plain text; escaping happens at serialization and is undone
on parse, so ``parse_structured(serialize(doc)) == doc`` for anything
``encode`` produces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .doc_model import (
    FigurePlaceholder,
    FigureRegion,
    LayoutTree,
    Paragraph,
    RawBlock,
    Section,
    StructElement,
    StructuredDoc,
    Table,
    TabularBlock,
    TextBlock,
    VIRTUAL_PATH_RE,
)

TRUNCATION_MARK = "\u2026"


@dataclass(frozen=True)
class EmitOptions:
    include_preamble: bool = True
    max_cell_chars: int = 256
    escape_mode: str = "latex-escape"

    def __post_init__(self) -> None:
        if self.max_cell_chars < 1:
            raise ValueError("max_cell_chars must be >= 1")
        if self.escape_mode != "latex-escape":
            raise ValueError(f"unknown escape_mode {self.escape_mode!r}")


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int | None = None


# --------------------------------------------------------------------------
# Escaping
# --------------------------------------------------------------------------

_ESCAPES = {
    "\\": r"\textbackslash{}",
    "~": r"\textasciitilde{}",
    "^": r"\textasciicircum{}",
    "&": r"\&",
    "%": r"\%",
    "$": r"\$",
    "#": r"\#",
    "_": r"\_",
    "{": r"\{",
    "}": r"\}",
}
_ESCAPE_RE = re.compile(r"[\\~^&%$#_{}]")
_UNESCAPE_RE = re.compile(
    r"\\textbackslash\{\}|\\textasciitilde\{\}|\\textasciicircum\{\}|\\[&%$#_{}]"
)
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}


def escape_text(text: str) -> str:
    return _ESCAPE_RE.sub(lambda m: _ESCAPES[m.group(0)], text)


def unescape_text(text: str) -> str:
    return _UNESCAPE_RE.sub(lambda m: _UNESCAPES[m.group(0)], text)


# --------------------------------------------------------------------------
# Encode: LayoutTree -> StructuredDoc
# --------------------------------------------------------------------------

_PAGE_NUM_RE = re.compile(r"(\d+)")


def _page_number(page_id: str) -> int:
    m = _PAGE_NUM_RE.search(page_id)
    return int(m.group(1)) if m else 1


def _truncate(text: str, limit: int) -> str:
    return text if len(text) <= limit else text[:limit] + TRUNCATION_MARK


def encode(tree: LayoutTree, opts: EmitOptions | None = None) -> StructuredDoc:
    """Map layout leaves in reading order onto structured elements."""
    opts = opts or EmitOptions()
    page_num = _page_number(tree.page_id)
    elements: list[StructElement] = []
    fig_counter = 0
    for leaf in tree.leaves_in_reading_order():
        if isinstance(leaf, TextBlock):
            if leaf.role == "title":
                elements.append(Section(level=1, title=leaf.text))
            elif leaf.role == "heading":
                elements.append(Section(level=2, title=leaf.text))
            else:
                elements.append(Paragraph(text=leaf.text))
        elif isinstance(leaf, Table):
            rows = tuple(
                tuple(
                    _truncate(leaf.cell_text(r, c), opts.max_cell_chars)
                    for c in range(leaf.n_cols)
                )
                for r in range(leaf.n_rows)
            )
            elements.append(
                TabularBlock(col_spec="|" + "c|" * leaf.n_cols, rows=rows)
            )
        elif isinstance(leaf, FigureRegion):
            fig_counter += 1
            elements.append(
                FigurePlaceholder(
                    virtual_path=f"figures/p{page_num}_fig{fig_counter}.png",
                    caption=leaf.nearby_caption,
                )
            )
    return StructuredDoc(elements=tuple(elements))


# --------------------------------------------------------------------------
# Serialize: StructuredDoc -> text
# --------------------------------------------------------------------------


def _serialize_element(el: StructElement) -> str:
    if isinstance(el, Section):
        cmd = "section" if el.level == 1 else "subsection"
        return f"\\{cmd}{{{escape_text(_flatten(el.title))}}}"
    if isinstance(el, Paragraph):
        return escape_text(_flatten(el.text))
    if isinstance(el, TabularBlock):
        body = " ".join(
            "\\hline " + " & ".join(escape_text(_flatten(c)) for c in row) + " \\\\"
            for row in el.rows
        )
        return f"\\begin{{tabular}}{{{el.col_spec}}} {body} \\hline \\end{{tabular}}"
    if isinstance(el, FigurePlaceholder):
        lines = ["\\begin{figure}", f"\\includegraphics{{{el.virtual_path}}}"]
        if el.caption is not None:
            lines.append(f"\\caption{{{escape_text(_flatten(el.caption))}}}")
        lines.append("\\end{figure}")
        return "\n".join(lines)
    if isinstance(el, RawBlock):
        return f"\\begin{{verbatim}}\n{el.text}\n\\end{{verbatim}}"
    raise TypeError(f"unknown element {el!r}")


def _flatten(text: str) -> str:
    return " ".join(text.split("\n"))


def serialize(doc: StructuredDoc, opts: EmitOptions | None = None) -> str:
    opts = opts or EmitOptions()
    body = "\n\n".join(_serialize_element(el) for el in doc.elements)
    if opts.include_preamble:
        middle = f"{body}\n" if body else ""
        return f"\\documentclass{{article}}\n\\begin{{document}}\n{middle}\\end{{document}}\n"
    return body + ("\n" if body else "")


def check_balanced(text: str) -> bool:
    """Stack check that every \\begin{E} has a matching, nested \\end{E}."""
    stack: list[str] = []
    for m in re.finditer(r"\\(begin|end)\{([^{}]*)\}", text):
        kind, env = m.group(1), m.group(2)
        if kind == "begin":
            stack.append(env)
        else:
            if not stack or stack.pop() != env:
                return False
    return not stack


# --------------------------------------------------------------------------
# Parse: text -> StructuredDoc + diagnostics
# --------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\\(section|subsection)\*?\{(.*)\}\s*$")
_BEGIN_RE = re.compile(r"\\begin\{([^{}]*)\}")
_END_RE = re.compile(r"\\end\{([^{}]*)\}")
_TABULAR_BEGIN_RE = re.compile(r"\\begin\{tabular\}\s*(?:\{([^{}]*)\})?")
_INCLUDEGRAPHICS_RE = re.compile(r"\\includegraphics(?:\[[^\]]*\])?\{([^{}]*)\}")
_CAPTION_RE = re.compile(r"\\caption\{(.*)\}", re.DOTALL)
_CELL_SPLIT_RE = re.compile(r"(?<!\\)&")
_COMMAND_LINE_RE = re.compile(r"^\s*\\[a-zA-Z]+")

_STRUCTURE_MARKERS = (
    "\\documentclass",
    "\\begin{document}",
    "\\section",
    "\\subsection",
    "\\begin{tabular}",
    "\\begin{figure}",
    "\\begin{verbatim}",
    "\\includegraphics",
)


def _parse_tabular_body(
    content: str, col_spec: str, diagnostics: list[Diagnostic], line_no: int
) -> TabularBlock:
    content = content.replace("\\hline", " ")
    rows: list[list[str]] = []
    for raw_row in content.split("\\\\"):
        if not raw_row.strip():
            continue
        cells = [
            unescape_text(c.strip()) for c in _CELL_SPLIT_RE.split(raw_row)
        ]
        rows.append(cells)
    spec_cols = col_spec.count("c") + col_spec.count("l") + col_spec.count("r")
    if not rows:
        rows = [[""] * max(spec_cols, 1)]
        diagnostics.append(
            Diagnostic("EmptyTabular", "tabular with no rows", line_no)
        )
    width = max(len(r) for r in rows)
    for r in rows:
        if len(r) < width:
            diagnostics.append(
                Diagnostic("RaggedTabular", "row padded to rectangular", line_no)
            )
            r.extend([""] * (width - len(r)))
    return TabularBlock(
        col_spec=col_spec or "|" + "c|" * width,
        rows=tuple(tuple(r) for r in rows),
    )


def _collect_environment(
    lines: list[str], start: int, env: str, diagnostics: list[Diagnostic]
) -> tuple[str, int]:
    """Gather raw text from after \\begin{env} up to its \\end{env}.

    Returns (content, next_line_index).  A missing \\end closes at end of
    input with an UnbalancedEnvironment diagnostic.
    """
    chunks: list[str] = []
    first = lines[start]
    begin_m = re.search(r"\\begin\{" + re.escape(env) + r"\}(?:\{[^{}]*\})?", first)
    rest = first[begin_m.end():] if begin_m else first
    end_tag = f"\\end{{{env}}}"
    i = start
    while True:
        idx = rest.find(end_tag)
        if idx != -1:
            chunks.append(rest[:idx])
            return "\n".join(chunks), i + 1
        chunks.append(rest)
        i += 1
        if i >= len(lines) or lines[i].strip() == "\\end{document}":
            where = "end of input" if i >= len(lines) else "\\end{document}"
            diagnostics.append(
                Diagnostic(
                    "UnbalancedEnvironment",
                    f"\\begin{{{env}}} never closed; closed at {where}",
                    start + 1,
                )
            )
            return "\n".join(chunks), i
        rest = lines[i]


def parse_structured(text: str) -> tuple[StructuredDoc, list[Diagnostic]]:
    """Best-effort parse of structured text; always returns a document."""
    diagnostics: list[Diagnostic] = []
    saw_markup = any(marker in text for marker in _STRUCTURE_MARKERS)
    if not saw_markup:
        stripped = text.strip()
        if not stripped:
            return StructuredDoc(), []
        diagnostics.append(
            Diagnostic("NoMarkup", "input has no recognized structure", 1)
        )
        return StructuredDoc(elements=(RawBlock(text=stripped),)), diagnostics

    lines = text.split("\n")
    elements: list[StructElement] = []
    para_buf: list[str] = []
    raw_buf: list[str] = []

    def flush_para() -> None:
        if para_buf:
            elements.append(
                Paragraph(text=unescape_text(" ".join(para_buf)))
            )
            para_buf.clear()

    def flush_raw() -> None:
        if raw_buf:
            elements.append(RawBlock(text="\n".join(raw_buf)))
            raw_buf.clear()

    saw_begin_document = False
    saw_end_document = False
    i = 0
    while i < len(lines):
        line = lines[i]
        stripped = line.strip()
        if not stripped:
            flush_para()
            flush_raw()
            i += 1
            continue
        if stripped.startswith("\\documentclass"):
            i += 1
            continue
        if stripped == "\\begin{document}":
            saw_begin_document = True
            i += 1
            continue
        if stripped == "\\end{document}":
            saw_end_document = True
            i += 1
            continue
        m = _SECTION_RE.match(stripped)
        if m:
            flush_para()
            flush_raw()
            elements.append(
                Section(
                    level=1 if m.group(1) == "section" else 2,
                    title=unescape_text(m.group(2)),
                )
            )
            i += 1
            continue
        tb = _TABULAR_BEGIN_RE.search(stripped)
        if tb:
            flush_para()
            flush_raw()
            content, i = _collect_environment(lines, i, "tabular", diagnostics)
            elements.append(
                _parse_tabular_body(content, tb.group(1) or "", diagnostics, i)
            )
            continue
        if stripped.startswith("\\begin{figure}"):
            flush_para()
            flush_raw()
            start = i
            content, i = _collect_environment(lines, i, "figure", diagnostics)
            inc = _INCLUDEGRAPHICS_RE.search(content)
            cap = _CAPTION_RE.search(content)
            path = inc.group(1) if inc else None
            if path is not None and VIRTUAL_PATH_RE.match(path):
                elements.append(
                    FigurePlaceholder(
                        virtual_path=path,
                        caption=unescape_text(cap.group(1)) if cap else None,
                    )
                )
            else:
                diagnostics.append(
                    Diagnostic(
                        "BadFigure",
                        f"figure without a valid virtual path: {path!r}",
                        start + 1,
                    )
                )
                elements.append(RawBlock(text=content.strip()))
            continue
        if stripped.startswith("\\begin{verbatim}"):
            flush_para()
            flush_raw()
            content, i = _collect_environment(lines, i, "verbatim", diagnostics)
            elements.append(RawBlock(text=content.strip("\n")))
            continue
        bm = _BEGIN_RE.search(stripped)
        if bm:
            flush_para()
            flush_raw()
            env = bm.group(1)
            start = i
            content, i = _collect_environment(lines, i, env, diagnostics)
            diagnostics.append(
                Diagnostic(
                    "UnknownEnvironment", f"environment {env!r} kept raw", start + 1
                )
            )
            elements.append(RawBlock(text=content.strip() or f"\\begin{{{env}}}"))
            continue
        if _END_RE.search(stripped):
            diagnostics.append(
                Diagnostic("StrayEnd", f"unmatched {stripped!r} dropped", i + 1)
            )
            i += 1
            continue
        if _COMMAND_LINE_RE.match(stripped) and not _UNESCAPE_RE.match(stripped):
            flush_para()
            diagnostics.append(
                Diagnostic(
                    "UnrecognizedCommand", f"kept raw: {stripped[:40]!r}", i + 1
                )
            )
            raw_buf.append(stripped)
            i += 1
            continue
        flush_raw()
        para_buf.append(stripped)
        i += 1

    flush_para()
    flush_raw()

    if saw_begin_document and not saw_end_document:
        diagnostics.append(
            Diagnostic(
                "UnbalancedEnvironment",
                "\\begin{document} never closed; closed at end of input",
                None,
            )
        )
    return StructuredDoc(elements=tuple(elements)), diagnostics


# --------------------------------------------------------------------------
# Structure score
# --------------------------------------------------------------------------


def structure_score(doc: StructuredDoc) -> float:
    """Fraction of elements that carry structure (non-RawBlock)."""
    if not doc.elements:
        return 0.0
    structured = sum(1 for e in doc.elements if not isinstance(e, RawBlock))
    return structured / len(doc.elements)
