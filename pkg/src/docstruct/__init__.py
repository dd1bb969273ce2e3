"""docstruct: structure-preserving document encoding and DocQA evaluation.

Pipeline: OCR output (hOCR / ALTO / tokens-JSON) -> geometric layout
analysis -> LaTeX-style structured text, plus an evaluation harness for
comparing model answers across input conditions and analytics over exported
attention tensors.
"""

from .doc_model import (
    BoundingBox,
    FigurePlaceholder,
    FigureRegion,
    LayoutTree,
    Line,
    OcrPage,
    OcrToken,
    Paragraph,
    RawBlock,
    Section,
    StructuredDoc,
    Table,
    TabularBlock,
    TextBlock,
)
from .gateway import (
    EvidenceBundle,
    Gateway,
    InputCondition,
    JudgeVerdict,
    ModelEndpoint,
)
from .layout_analysis import LayoutParams, analyze
from .ocr_ingest import parse_alto, parse_hocr, parse_tokens_json
from .structured_encoder import (
    EmitOptions,
    encode,
    parse_structured,
    serialize,
    structure_score,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "EmitOptions",
    "EvidenceBundle",
    "FigurePlaceholder",
    "FigureRegion",
    "Gateway",
    "InputCondition",
    "JudgeVerdict",
    "LayoutParams",
    "LayoutTree",
    "Line",
    "ModelEndpoint",
    "OcrPage",
    "OcrToken",
    "Paragraph",
    "RawBlock",
    "Section",
    "StructuredDoc",
    "Table",
    "TabularBlock",
    "TextBlock",
    "analyze",
    "encode",
    "parse_alto",
    "parse_hocr",
    "parse_structured",
    "parse_tokens_json",
    "serialize",
    "structure_score",
]
