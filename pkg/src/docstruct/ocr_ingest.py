"""Parsers turning external OCR output formats into :class:`OcrPage`.

Three formats are supported: hOCR (the HTML dialect emitted by tesseract and
friends), ALTO XML v2/v3, and a plain tokens-JSON schema used as this
project's interchange format.  All parsers share the same contract: they are
deterministic, they never crash on arbitrary bytes (malformed input raises
:class:`MalformedInput`), and every page they return satisfies the doc_model
invariants.  Boxes that stick out of the page are clamped and counted.

hOCR line/paragraph grouping is deliberately ignored; layout analysis
rebuilds structure from geometry so every input format reaches the same
downstream path.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from html.parser import HTMLParser

from .doc_model import BoundingBox, InvalidPage, OcrPage, OcrToken

TOKENS_JSON_SCHEMA = "tokens/1"


class IngestError(Exception):
    pass


class MalformedInput(IngestError):
    def __init__(self, reason: str, position: str | None = None):
        self.reason = reason
        self.position = position
        super().__init__(f"{reason}" + (f" at {position}" if position else ""))


class MissingGeometry(IngestError):
    def __init__(self, element_id: str):
        self.element_id = element_id
        super().__init__(f"element {element_id!r} lacks geometry")


@dataclass
class IngestReport:
    pages_parsed: int = 0
    tokens_parsed: int = 0
    tokens_clamped: int = 0
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.tokens_clamped > self.tokens_parsed:
            raise ValueError("tokens_clamped cannot exceed tokens_parsed")

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)

    def to_dict(self) -> dict:
        return {
            "pages_parsed": self.pages_parsed,
            "tokens_parsed": self.tokens_parsed,
            "tokens_clamped": self.tokens_clamped,
            "warnings": list(self.warnings),
        }


def _decode(data: bytes, report: IngestReport) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        report.warn("invalid UTF-8 sequences replaced")
        return data.decode("utf-8", errors="replace")


def _normalize_text(text: str) -> str:
    return " ".join(text.split())


def _finish_token(
    text: str,
    box: BoundingBox,
    page_w: float,
    page_h: float,
    report: IngestReport,
    confidence: float | None = None,
    font_size_hint: float | None = None,
) -> OcrToken | None:
    """Clamp, normalize, and build a token; drop empty text with a warning."""
    norm = _normalize_text(text)
    if not norm:
        report.warn(f"dropped empty token at {box}")
        return None
    clamped = box.clamped(page_w, page_h)
    report.tokens_parsed += 1
    if clamped != box:
        report.tokens_clamped += 1
    return OcrToken(
        text=norm, box=clamped, confidence=confidence, font_size_hint=font_size_hint
    )


# --------------------------------------------------------------------------
# hOCR
# --------------------------------------------------------------------------

_BBOX_RE = re.compile(r"bbox\s+(-?[\d.]+)\s+(-?[\d.]+)\s+(-?[\d.]+)\s+(-?[\d.]+)")
_XWCONF_RE = re.compile(r"x_wconf\s+([\d.]+)")
_XFSIZE_RE = re.compile(r"x_fsize\s+([\d.]+)")


def _parse_bbox_title(title: str) -> tuple[float, float, float, float] | None:
    m = _BBOX_RE.search(title)
    if not m:
        return None
    x0, y0, x1, y1 = (float(g) for g in m.groups())
    if x1 < x0:
        x0, x1 = x1, x0
    if y1 < y0:
        y0, y1 = y1, y0
    return x0, y0, x1, y1


class _HocrHandler(HTMLParser):
    """Collects ocr_page elements and the ocrx_word spans inside them."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.pages: list[dict] = []
        self._word_depth = 0
        self._word: dict | None = None

    def handle_starttag(self, tag, attrs):
        a = dict(attrs)
        cls = a.get("class", "") or ""
        classes = cls.split()
        if "ocr_page" in classes:
            self.pages.append(
                {
                    "id": a.get("id", f"page_{len(self.pages) + 1}"),
                    "title": a.get("title", "") or "",
                    "words": [],
                }
            )
            return
        if self._word is not None:
            self._word_depth += 1
            return
        if "ocrx_word" in classes and self.pages:
            self._word = {
                "id": a.get("id", ""),
                "title": a.get("title", "") or "",
                "text": [],
            }
            self._word_depth = 0

    def handle_endtag(self, tag):
        if self._word is not None:
            if self._word_depth > 0:
                self._word_depth -= 1
            else:
                self.pages[-1]["words"].append(self._word)
                self._word = None

    def handle_data(self, data):
        if self._word is not None:
            self._word["text"].append(data)


def parse_hocr(data: bytes) -> tuple[list[OcrPage], IngestReport]:
    report = IngestReport()
    text = _decode(data, report)
    handler = _HocrHandler()
    try:
        handler.feed(text)
        handler.close()
    except Exception as exc:  # html.parser is tolerant; belt and braces
        raise MalformedInput(f"hOCR parse failure: {exc}") from exc
    if not handler.pages:
        raise MalformedInput("no ocr_page elements found")

    pages: list[OcrPage] = []
    for idx, raw in enumerate(handler.pages):
        geom = _parse_bbox_title(raw["title"])
        if geom is None:
            raise MalformedInput(
                "ocr_page missing bbox in title", position=raw["id"]
            )
        _, _, w, h = geom
        if w <= 0 or h <= 0:
            raise MalformedInput(
                f"ocr_page has non-positive dims {w}x{h}", position=raw["id"]
            )
        tokens: list[OcrToken] = []
        for word in raw["words"]:
            wgeom = _parse_bbox_title(word["title"])
            if wgeom is None:
                report.warn(
                    f"word {word['id'] or '<anon>'} lacks bbox; skipped"
                )
                continue
            conf_m = _XWCONF_RE.search(word["title"])
            fsize_m = _XFSIZE_RE.search(word["title"])
            confidence = min(float(conf_m.group(1)) / 100.0, 1.0) if conf_m else None
            token = _finish_token(
                "".join(word["text"]),
                BoundingBox(*(max(v, 0.0) for v in wgeom)),
                w,
                h,
                report,
                confidence=confidence,
                font_size_hint=float(fsize_m.group(1)) if fsize_m else None,
            )
            if token is not None:
                tokens.append(token)
        pages.append(
            OcrPage(page_id=raw["id"] or f"page_{idx + 1}", width=w, height=h,
                    tokens=tuple(tokens))
        )
    report.pages_parsed = len(pages)
    return pages, report


# --------------------------------------------------------------------------
# ALTO
# --------------------------------------------------------------------------


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_alto(data: bytes) -> tuple[list[OcrPage], IngestReport]:
    report = IngestReport()
    text = _decode(data, report)
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedInput(f"ALTO XML error: {exc}",
                             position=str(exc.position)) from exc

    pages: list[OcrPage] = []
    page_elems = [e for e in root.iter() if _local(e.tag) == "Page"]
    if not page_elems:
        raise MalformedInput("no Page elements found")
    for idx, page_el in enumerate(page_elems):
        try:
            w = float(page_el.get("WIDTH", ""))
            h = float(page_el.get("HEIGHT", ""))
        except ValueError:
            raise MalformedInput(
                "Page missing numeric WIDTH/HEIGHT",
                position=page_el.get("ID", str(idx)),
            ) from None
        if w <= 0 or h <= 0:
            raise MalformedInput(
                f"Page has non-positive dims {w}x{h}",
                position=page_el.get("ID", str(idx)),
            )
        tokens: list[OcrToken] = []
        for s in page_el.iter():
            if _local(s.tag) != "String":
                continue
            try:
                hpos = float(s.get("HPOS", ""))
                vpos = float(s.get("VPOS", ""))
                sw = float(s.get("WIDTH", ""))
                sh = float(s.get("HEIGHT", ""))
            except ValueError:
                report.warn(
                    f"String {s.get('ID', '<anon>')} lacks geometry; skipped"
                )
                continue
            wc = s.get("WC")
            try:
                confidence = float(wc) if wc is not None else None
            except ValueError:
                confidence = None
            if confidence is not None and not 0.0 <= confidence <= 1.0:
                confidence = None
            box = BoundingBox(
                max(hpos, 0.0),
                max(vpos, 0.0),
                max(hpos, 0.0) + max(sw, 0.0),
                max(vpos, 0.0) + max(sh, 0.0),
            )
            token = _finish_token(
                s.get("CONTENT", ""), box, w, h, report, confidence=confidence
            )
            if token is not None:
                tokens.append(token)
        pages.append(
            OcrPage(
                page_id=page_el.get("ID") or f"page_{idx + 1}",
                width=w,
                height=h,
                tokens=tuple(tokens),
            )
        )
    report.pages_parsed = len(pages)
    return pages, report


# --------------------------------------------------------------------------
# tokens-JSON
# --------------------------------------------------------------------------


def parse_tokens_json(data: bytes) -> tuple[list[OcrPage], IngestReport]:
    report = IngestReport()
    text = _decode(data, report)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInput(
            f"invalid JSON: {exc.msg}", position=f"line {exc.lineno}"
        ) from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("pages"), list):
        raise MalformedInput("top level must be an object with a 'pages' list")
    schema = obj.get("schema", TOKENS_JSON_SCHEMA)
    if schema != TOKENS_JSON_SCHEMA:
        raise MalformedInput(f"unsupported schema {schema!r}")

    pages: list[OcrPage] = []
    for pi, p in enumerate(obj["pages"]):
        if not isinstance(p, dict):
            raise MalformedInput("page entry must be an object", position=f"pages[{pi}]")
        try:
            page_id = p["page_id"]
            width = p["width"]
            height = p["height"]
            raw_tokens = p["tokens"]
        except KeyError as exc:
            raise MalformedInput(
                f"page missing required field {exc.args[0]!r}",
                position=f"pages[{pi}]",
            ) from None
        if not isinstance(page_id, str):
            raise MalformedInput("page_id must be a string", position=f"pages[{pi}]")
        if (
            not isinstance(width, (int, float))
            or not isinstance(height, (int, float))
            or isinstance(width, bool)
            or isinstance(height, bool)
            or width <= 0
            or height <= 0
        ):
            raise MalformedInput(
                "width/height must be positive numbers", position=f"pages[{pi}]"
            )
        if not isinstance(raw_tokens, list):
            raise MalformedInput("tokens must be a list", position=f"pages[{pi}]")
        tokens: list[OcrToken] = []
        for ti, t in enumerate(raw_tokens):
            pos = f"pages[{pi}].tokens[{ti}]"
            if not isinstance(t, dict):
                raise MalformedInput("token must be an object", position=pos)
            if "text" not in t or "bbox" not in t:
                raise MalformedInput("token missing text/bbox", position=pos)
            bbox = t["bbox"]
            if (
                not isinstance(bbox, list)
                or len(bbox) != 4
                or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in bbox
                )
            ):
                raise MalformedInput("bbox must be 4 numbers", position=pos)
            if not isinstance(t["text"], str):
                raise MalformedInput("token text must be a string", position=pos)
            confidence = t.get("confidence")
            if confidence is not None and (
                not isinstance(confidence, (int, float))
                or isinstance(confidence, bool)
                or not 0.0 <= confidence <= 1.0
            ):
                raise MalformedInput("confidence must be in [0,1]", position=pos)
            fsize = t.get("font_size_hint")
            if fsize is not None and (
                not isinstance(fsize, (int, float))
                or isinstance(fsize, bool)
                or fsize <= 0
            ):
                raise MalformedInput("font_size_hint must be positive", position=pos)
            try:
                box = BoundingBox(*(max(float(v), 0.0) for v in bbox))
            except ValueError as exc:
                raise MalformedInput(f"bad bbox: {exc}", position=pos) from None
            token = _finish_token(
                t["text"], box, width, height, report,
                confidence=confidence, font_size_hint=fsize,
            )
            if token is not None:
                tokens.append(token)
        try:
            pages.append(
                OcrPage(page_id=page_id, width=float(width), height=float(height),
                        tokens=tuple(tokens))
            )
        except InvalidPage as exc:
            raise MalformedInput(str(exc), position=f"pages[{pi}]") from None
    report.pages_parsed = len(pages)
    return pages, report


def serialize_tokens_json(pages: list[OcrPage]) -> bytes:
    """Inverse of parse_tokens_json; the interchange writer used by the CLI."""
    out = {
        "schema": TOKENS_JSON_SCHEMA,
        "pages": [
            {
                "page_id": p.page_id,
                "width": p.width,
                "height": p.height,
                "tokens": [
                    {
                        "text": t.text,
                        "bbox": [t.box.x0, t.box.y0, t.box.x1, t.box.y1],
                        **(
                            {"confidence": t.confidence}
                            if t.confidence is not None
                            else {}
                        ),
                        **(
                            {"font_size_hint": t.font_size_hint}
                            if t.font_size_hint is not None
                            else {}
                        ),
                    }
                    for t in p.tokens
                ],
            }
            for p in pages
        ],
    }
    return json.dumps(out, indent=2, sort_keys=True).encode("utf-8")


PARSERS = {
    "hocr": parse_hocr,
    "alto": parse_alto,
    "json": parse_tokens_json,
}
