"""Acceptance gate: one test per headline criterion, one pass/fail line each.

Each test prints ``ACCEPTANCE <name>: PASS`` (or FAIL via the assertion) so
the gate's status is readable straight from pytest -s output.
"""

import json
import random

import numpy as np
import pytest

from docstruct.attention import AttentionTensor, border_profile, compare_conditions, layer_curve
from docstruct.gateway import ALL_CONDITIONS, InputCondition, extract_verdict
from docstruct.harness import aggregate, improvement_percent, read_records, report_render, run_matrix
from docstruct.layout_analysis import LayoutParams, LeafBlock, detect_tables, group_lines, leaf_blocks, xy_cut
from docstruct.ocr_ingest import (
    MalformedInput,
    parse_alto,
    parse_hocr,
    parse_tokens_json,
)
from docstruct.structured_encoder import check_balanced, encode, parse_structured, serialize

from helpers import (
    guillotine_layout,
    line_grid_page,
    mock_gateway,
    random_layout_tree,
    random_tensor,
    table_grid_page,
    uniform_image_tensor,
)
from oracles import (
    naive_border_share,
    naive_entropy,
    naive_layer_curve,
    oracle_line_clusters,
    oracle_reading_order,
    token_key,
)
from test_harness import write_assets, manifest as make_manifest

PARAMS = LayoutParams()


def _report(name, failures):
    status = "PASS" if not failures else f"FAIL ({len(failures)})"
    print(f"\nACCEPTANCE {name}: {status}")
    assert not failures, f"{name}: {failures[:10]}"


def test_acceptance_delta_arithmetic():
    pairs = [
        (0.292, 0.306, 4.8), (0.389, 0.435, 11.8), (0.131, 0.224, 71.0),
        (0.189, 0.284, 50.3), (0.160, 0.209, 30.6), (0.163, 0.252, 54.6),
        (0.051, 0.122, 139.2), (0.077, 0.224, 190.9), (0.441, 0.509, 15.4),
        (0.508, 0.575, 13.2), (0.154, 0.388, 151.9), (0.245, 0.429, 75.1),
    ]
    inconsistent = []
    for baseline, structured, published in pairs:
        got = improvement_percent(structured, baseline)
        if abs(got - published) > 0.1:
            inconsistent.append(
                f"{baseline}->{structured}: computed {got:+.1f}, "
                f"published {published:+.1f}"
            )
    _report("delta-arithmetic", inconsistent)


def test_acceptance_layout_oracles():
    failures = []
    # reading order vs brute-force oracle on 100 guillotine layouts
    for seed in range(100):
        page = guillotine_layout(seed)
        root = xy_cut(group_lines(page, PARAMS), page, PARAMS)
        got = [
            frozenset(token_key(t) for line in b.lines for t in line.tokens)
            for b in sorted(leaf_blocks(root), key=lambda b: b.reading_rank)
        ]
        want = oracle_reading_order(
            list(page.tokens), page.width, page.height, PARAMS.xycut_valley_min
        )
        if got != want:
            failures.append(f"xycut seed {seed}")
    # table shape recovery on 200 jittered grids
    for seed in range(200):
        rng = random.Random(10_000 + seed)
        n_rows, n_cols = rng.randint(2, 7), rng.randint(2, 6)
        page = table_grid_page(seed, n_rows=n_rows, n_cols=n_cols)
        lines = group_lines(page, PARAMS)
        box = lines[0].box
        for line in lines[1:]:
            box = box.union(line.box)
        table = detect_tables(
            LeafBlock(lines=tuple(lines), box=box, reading_rank=0), page, PARAMS
        )
        if table is None or (table.n_rows, table.n_cols) != (n_rows, n_cols):
            failures.append(f"table seed {seed} ({n_rows}x{n_cols})")
    # line grouping vs pairwise clustering oracle on 100 pages
    for seed in range(100):
        page, _ = line_grid_page(seed, n_lines=4, tokens_per_line=6)
        got = {
            frozenset(token_key(t) for t in line.tokens)
            for line in group_lines(page, PARAMS)
        }
        want = set(
            oracle_line_clusters(list(page.tokens), PARAMS.line_y_overlap_min)
        )
        if got != want:
            failures.append(f"lines seed {seed}")
    _report("layout-oracles", failures)


def test_acceptance_structured_round_trip():
    failures = []
    for seed in range(50):
        doc = encode(random_layout_tree(seed))
        text = serialize(doc)
        if not check_balanced(text):
            failures.append(f"seed {seed}: unbalanced serialization")
            continue
        reparsed, diags = parse_structured(text)
        if diags:
            failures.append(f"seed {seed}: diagnostics {diags}")
        elif reparsed != doc:
            failures.append(f"seed {seed}: reparse mismatch")
    _report("structured-round-trip", failures)


def test_acceptance_attention_oracles():
    failures = []
    for seed in range(100):
        t = random_tensor(
            seed, L=seed % 4 + 1, H=seed % 3 + 1,
            rows=seed % 3 + 2, cols=seed % 4 + 2,
        )
        prof = border_profile(t)
        if abs(prof.border_share - naive_border_share(t)) > 1e-9:
            failures.append(f"border seed {seed}")
        if abs(prof.entropy - naive_entropy(t)) > 1e-9:
            failures.append(f"entropy seed {seed}")
        if any(
            abs(a - b) > 1e-9
            for a, b in zip(layer_curve(t), naive_layer_curve(t))
        ):
            failures.append(f"curve seed {seed}")
    uniform = uniform_image_tensor(rows=4, cols=4)
    if border_profile(uniform).border_share != 0.75:
        failures.append("uniform 4x4 border fraction != 0.75")
    tensors = [random_tensor(s) for s in range(4)]
    rep = compare_conditions(tensors, tensors)
    if rep.delta_border_share != 0.0 or rep.delta_entropy != 0.0 or any(
        d != 0.0 for d in rep.delta_layer_curve
    ):
        failures.append("compare(a,a) deltas not exactly zero")
    # entropy-uniformity biconditional on constructed cases
    n = 16
    if abs(border_profile(uniform).entropy - np.log(n)) > 1e-9:
        failures.append("uniform tensor entropy != log(n)")
    w = np.zeros((1, 1, 1, n), dtype=np.float32)
    w[0, 0, 0, 5] = 1.0
    point = AttentionTensor(
        sample_id="pt", condition="image_only", weights=w,
        image_span=(0, n), grid=(4, 4),
    )
    if border_profile(point).entropy != 0.0:
        failures.append("point-mass tensor entropy != 0")
    _report("attention-oracles", failures)


def test_acceptance_end_to_end_mock(tmp_path, fast_endpoint):
    failures = []
    assets = write_assets(tmp_path / "assets")
    samples = [make_manifest(f"s{i}", dataset="demo") for i in range(5)]
    models = {"mock-a": fast_endpoint, "mock-b": fast_endpoint}
    n_cells = 5 * 2 * 5
    gw, handler = mock_gateway(
        tmp_path, [(200, "yes")] * (n_cells * 2)
    )
    run_dir = tmp_path / "run"
    records = run_matrix(
        samples, models, list(ALL_CONDITIONS), gw, fast_endpoint, assets,
        run_dir,
    )
    if len(records) != n_cells:
        failures.append(f"expected {n_cells} records, got {len(records)}")
    if any(r.status != "ok" for r in records):
        failures.append("not all cells completed")
    # re-run resumes with zero new exchanges
    gw2, handler2 = mock_gateway(tmp_path / "resume", [])
    records2 = run_matrix(
        samples, models, list(ALL_CONDITIONS), gw2, fast_endpoint, assets,
        run_dir,
    )
    if len(records2) != n_cells or handler2.requests:
        failures.append(
            f"resume made {len(handler2.requests)} new exchanges"
        )
    report = aggregate(read_records(run_dir / "records.jsonl"), samples)
    md = report_render(report, "md").decode()
    csv = report_render(report, "csv").decode()
    if "| Model | Condition |" not in md or "image_plus_structured" not in md:
        failures.append("markdown report not table-shaped")
    if not csv.startswith("model,condition,dataset"):
        failures.append("csv report missing header")
    # judge extraction rule
    for raw, want in (("yes", (True, True)), ("incorrect", (False, True)),
                      ("maybe", (False, False))):
        if extract_verdict(raw) != want:
            failures.append(f"verdict rule failed on {raw!r}")
    _report("end-to-end-mock", failures)


def test_acceptance_ingest_conformance():
    failures = []
    hocr = (
        b'<html><body><div class="ocr_page" id="page_1" '
        b'title="bbox 0 0 300 300">'
        b'<span class="ocrx_word" id="w1" title="bbox 10 10 60 25; '
        b'x_wconf 88">word</span></div></body></html>'
    )
    alto = (
        b'<?xml version="1.0"?>'
        b'<alto xmlns="http://www.loc.gov/standards/alto/ns-v3#"><Layout>'
        b'<Page ID="P1" WIDTH="300" HEIGHT="300"><PrintSpace><TextBlock>'
        b'<TextLine><String ID="s1" CONTENT="word" HPOS="10" VPOS="10" '
        b'WIDTH="50" HEIGHT="15"/></TextLine>'
        b"</TextBlock></PrintSpace></Page></Layout></alto>"
    )
    tokens = json.dumps(
        {
            "schema": "tokens/1",
            "pages": [
                {
                    "page_id": "p1", "width": 300, "height": 300,
                    "tokens": [{"text": "word", "bbox": [10, 10, 60, 25]}],
                }
            ],
        }
    ).encode()
    fixtures = [(parse_hocr, hocr), (parse_alto, alto),
                (parse_tokens_json, tokens)]
    for parser, data in fixtures:
        try:
            pages, report = parser(data)
        except MalformedInput as exc:
            failures.append(f"{parser.__name__} rejected fixture: {exc}")
            continue
        if len(pages) != 1 or len(pages[0].tokens) != 1:
            failures.append(f"{parser.__name__} wrong shape")
        # invariants hold by construction (OcrPage validates on init)
    rng = random.Random(2024)
    crashes = 0
    bases = [hocr, alto, tokens]
    for i in range(10_000):
        data = bytearray(bases[i % 3])
        for _ in range(rng.randint(1, 10)):
            pos = rng.randrange(len(data))
            data[pos] = rng.randrange(256)
        parser = fixtures[i % 3][0]
        try:
            parser(bytes(data))
        except MalformedInput:
            pass
        except Exception as exc:  # noqa: BLE001 - the point of the fuzz
            crashes += 1
            if crashes <= 3:
                failures.append(
                    f"fuzz iteration {i}: {type(exc).__name__}: {exc}"
                )
    if crashes:
        failures.append(f"{crashes} fuzz crashes total")
    _report("ingest-conformance", failures)
