"""End-to-end benchmark run against an in-process mock model.

Builds a tiny manifest + asset store in a temp dir, answers every
(sample, model, condition) cell through an httpx mock transport, then
aggregates accuracies and prints the Markdown report — all offline.

Run: python3 demos/04_mock_benchmark.py
"""

import json
import tempfile
from pathlib import Path

import httpx

from docstruct.gateway import ALL_CONDITIONS, Gateway, ModelEndpoint
from docstruct.harness import (
    AssetStore,
    SampleManifest,
    aggregate,
    report_render,
    run_matrix,
)

STRUCTURED = (
    "\\documentclass{article}\n\\begin{document}\n"
    "\\section{Page}\n\nBody.\n\\end{document}\n"
)


def mock_model(request: httpx.Request) -> httpx.Response:
    # answer anything; judge calls see their own prompt and reply "yes"
    body = json.loads(request.content)
    text = body["messages"][0]["content"][-1]["text"]
    reply = "yes" if "reference" in text.lower() else "the value is 42"
    return httpx.Response(200, json={
        "choices": [{"message": {"role": "assistant", "content": reply}}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 3},
    })


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        assets = tmp / "assets" / "doc1"
        assets.mkdir(parents=True)
        (assets / "p1.png").write_bytes(b"\x89PNG fake page pixels")
        (assets / "p1.txt").write_text("raw ocr text")
        (assets / "p1.tex").write_text(STRUCTURED)

        samples = [
            SampleManifest(
                sample_id=f"s{i}", doc_id="doc1", question="what is the value?",
                reference_answer="42", evidence_pages=(1,), dataset="demo",
            )
            for i in range(4)
        ]
        endpoint = ModelEndpoint(base_url="http://mock/v1",
                                 model_name="mock-7b", backoff_base=0.01)
        gw = Gateway(
            audit_log=tmp / "audit.jsonl",
            client=httpx.Client(transport=httpx.MockTransport(mock_model)),
        )
        records = run_matrix(
            samples, {"mock-7b": endpoint}, list(ALL_CONDITIONS), gw,
            endpoint, AssetStore(tmp / "assets"), tmp / "run",
        )
        print(f"ran {len(records)} cells "
              f"({len(gw.audit_entries())} audited HTTP exchanges)\n")

        report = aggregate(records, samples)
        print(report_render(report, "md").decode())


if __name__ == "__main__":
    main()
