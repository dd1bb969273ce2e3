"""Shared fixtures: a tiny Llava-style checkpoint saved to disk (so the hook
exercises the real from_pretrained path), plus a small asset tree."""

import json

import numpy as np
import pytest
from PIL import Image

from tinyvlm import build_checkpoint, write_manifest


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    return build_checkpoint(tmp_path_factory.mktemp("tiny_vlm"))


@pytest.fixture(scope="session")
def asset_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("assets")
    doc = root / "doc1"
    doc.mkdir()
    rng = np.random.default_rng(3)
    img = Image.fromarray((rng.random((32, 32, 3)) * 255).astype("uint8"))
    img.save(doc / "p1.png")
    (doc / "p1.txt").write_text("tok5 tok6 tok7")
    (doc / "p1.tex").write_text(
        "\\begin{document}\n\\section{tok8}\n\ntok9 tok10\n\\end{document}\n"
    )
    return root


@pytest.fixture()
def one_sample_manifest(tmp_path):
    return write_manifest(tmp_path / "manifest.jsonl", [{
        "sample_id": "s1", "doc_id": "doc1", "question": "tok1 tok2",
        "reference_answer": "tok3", "evidence_pages": [1],
        "dataset": "demo",
    }])
