import json
import random

import pytest

from docstruct.gateway import ALL_CONDITIONS, InputCondition
from docstruct.harness import (
    AssetStore,
    EmptyEvidence,
    HarnessError,
    PartialData,
    RunRecord,
    SampleManifest,
    aggregate,
    improvement_percent,
    load_manifest,
    read_records,
    relative_improvement,
    report_render,
    run_matrix,
    select_evidence,
)

from helpers import mock_gateway

PNG = b"\x89PNG\r\n\x1a\npagepixels"


def manifest(sample_id, doc_id="doc1", pages=(1,), scores=None, dataset="default",
             category=None):
    return SampleManifest(
        sample_id=sample_id,
        doc_id=doc_id,
        question=f"What is in {sample_id}?",
        reference_answer="42",
        evidence_pages=None if scores is not None else tuple(pages),
        retrieval_scores=scores,
        dataset=dataset,
        element_category=category,
    )


def write_assets(root, doc_id="doc1", pages=(1, 2)):
    for p in pages:
        d = root / doc_id
        d.mkdir(parents=True, exist_ok=True)
        (d / f"p{p}.png").write_bytes(PNG)
        (d / f"p{p}.txt").write_text(f"ocr text page {p}")
        (d / f"p{p}.tex").write_text(
            "\\documentclass{article}\n\\begin{document}\n"
            f"\\section{{Page {p}}}\n\nBody text.\n\\end{{document}}\n"
        )
    return AssetStore(root)


# -- manifests and evidence selection ---------------------------------------


def test_select_evidence_closed_domain_first_page():
    assert select_evidence(manifest("s1", pages=(7,))) == 7
    assert select_evidence(manifest("s2", pages=(3, 9, 1))) == 3


def test_select_evidence_open_domain_argmax():
    assert select_evidence(manifest("s1", scores={1: 0.2, 4: 0.9, 6: 0.5})) == 4


def test_select_evidence_tie_breaks_to_lowest_page():
    assert select_evidence(manifest("s1", scores={5: 0.9, 2: 0.9})) == 2


def test_select_evidence_empty_raises():
    with pytest.raises(EmptyEvidence):
        select_evidence(manifest("s1", pages=()))
    with pytest.raises(EmptyEvidence):
        select_evidence(manifest("s1", scores={}))


def test_manifest_exactly_one_evidence_kind():
    with pytest.raises(ValueError):
        SampleManifest(
            sample_id="x", doc_id="d", question="q", reference_answer="a"
        )
    with pytest.raises(ValueError):
        SampleManifest(
            sample_id="x", doc_id="d", question="q", reference_answer="a",
            evidence_pages=(1,), retrieval_scores={1: 0.5},
        )


def test_manifest_rejects_unknown_category():
    with pytest.raises(ValueError):
        manifest("s1", category="diagram")


def test_manifest_json_round_trip(tmp_path):
    samples = [
        manifest("s1", pages=(1, 2), dataset="closed", category="table"),
        manifest("s2", scores={1: 0.3, 2: 0.8}, dataset="open"),
    ]
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n".join(json.dumps(s.to_json()) for s in samples) + "\n")
    assert load_manifest(path) == samples


def test_load_manifest_reports_bad_line(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text('{"schema": "manifest/1", "sample_id": "s1"}\n')
    with pytest.raises(HarnessError) as exc:
        load_manifest(path)
    assert "line 1" in str(exc.value)


def test_manifest_rejects_future_schema():
    with pytest.raises(ValueError):
        SampleManifest.from_json({"schema": "manifest/2", "sample_id": "s"})


# -- asset store ------------------------------------------------------------


def test_bundle_loads_only_needed_parts(tmp_path):
    store = write_assets(tmp_path / "assets")
    s = manifest("s1")
    b = store.bundle(s, 1, InputCondition.image_only)
    assert b.image == PNG and b.ocr_text is None and b.structured_text is None
    b = store.bundle(s, 1, InputCondition.ocr_only)
    assert b.image is None and b.ocr_text == "ocr text page 1"
    b = store.bundle(s, 2, InputCondition.image_plus_structured)
    assert b.image == PNG and "Page 2" in b.structured_text


# -- run matrix -------------------------------------------------------------


def scripted_cells(cell_replies):
    """Flatten (answer, judge) reply pairs into mock transport turns."""
    turns = []
    for answer, judge in cell_replies:
        turns.append((200, answer))
        turns.append((200, judge))
    return turns


def test_run_matrix_cardinality_and_resume(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    samples = [manifest(f"s{i}") for i in range(2)]
    conditions = [
        InputCondition.image_only,
        InputCondition.ocr_only,
        InputCondition.structured_only,
    ]
    gw, handler = mock_gateway(
        tmp_path, scripted_cells([("answer", "yes")] * 6)
    )
    run_dir = tmp_path / "run"
    records = run_matrix(
        samples, {"m1": fast_endpoint}, conditions, gw, fast_endpoint,
        assets, run_dir,
    )
    assert len(records) == 6
    assert len(handler.requests) == 12  # answer + judge per cell
    assert all(r.status == "ok" and r.verdict_correct for r in records)
    assert {r.key() for r in records} == {
        (s.sample_id, c.value, "m1") for s in samples for c in conditions
    }

    # resume with one record removed: exactly one cell re-runs (2 exchanges)
    records_path = run_dir / "records.jsonl"
    lines = records_path.read_text().strip().split("\n")
    dropped = json.loads(lines[3])
    records_path.write_text("\n".join(lines[:3] + lines[4:]) + "\n")
    gw2, handler2 = mock_gateway(tmp_path / "r2", scripted_cells([("a2", "no")]))
    records2 = run_matrix(
        samples, {"m1": fast_endpoint}, conditions, gw2, fast_endpoint,
        assets, run_dir,
    )
    assert len(records2) == 6
    assert len(handler2.requests) == 2
    redone = [r for r in records2 if r.key() == (
        dropped["sample_id"], dropped["condition"], dropped["model_name"])]
    assert len(redone) == 1 and redone[0].answer_text == "a2"

    # full re-run: zero new exchanges
    gw3, handler3 = mock_gateway(tmp_path / "r3", [])
    records3 = run_matrix(
        samples, {"m1": fast_endpoint}, conditions, gw3, fast_endpoint,
        assets, run_dir,
    )
    assert len(records3) == 6 and len(handler3.requests) == 0


def test_run_matrix_rejects_duplicate_sample_ids(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    gw, _ = mock_gateway(tmp_path, [])
    with pytest.raises(HarnessError):
        run_matrix(
            [manifest("s1"), manifest("s1")], {"m1": fast_endpoint},
            [InputCondition.ocr_only], gw, fast_endpoint, assets,
            tmp_path / "run",
        )


def test_run_matrix_alternating_judge_gives_half(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    samples = [manifest(f"s{i}") for i in range(4)]
    replies = [("ans", "yes" if i % 2 == 0 else "no") for i in range(4)]
    gw, _ = mock_gateway(tmp_path, scripted_cells(replies))
    records = run_matrix(
        samples, {"m1": fast_endpoint}, [InputCondition.ocr_only], gw,
        fast_endpoint, assets, tmp_path / "run",
    )
    report = aggregate(records, samples)
    cs = report.cells[("m1", "ocr_only", "default")]
    assert (cs.correct, cs.judged) == (2, 4)
    assert cs.accuracy == pytest.approx(0.5)


def test_run_matrix_missing_asset_becomes_skip(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    samples = [manifest("s1"), manifest("s2", pages=(9,))]  # page 9 missing
    gw, handler = mock_gateway(tmp_path, scripted_cells([("a", "yes")]))
    records = run_matrix(
        samples, {"m1": fast_endpoint}, [InputCondition.ocr_only], gw,
        fast_endpoint, assets, tmp_path / "run",
    )
    by_id = {r.sample_id: r for r in records}
    assert by_id["s1"].status == "ok"
    assert by_id["s2"].status == "skipped"
    assert "AssetMissing" in by_id["s2"].skip_reason
    assert len(handler.requests) == 2  # skipped cell never hit the network


def test_run_matrix_gateway_failure_becomes_skip(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    gw, _ = mock_gateway(tmp_path, [(400, "rejected")])
    records = run_matrix(
        [manifest("s1")], {"m1": fast_endpoint}, [InputCondition.ocr_only],
        gw, fast_endpoint, assets, tmp_path / "run",
    )
    assert records[0].status == "skipped"
    assert "BadResponse" in records[0].skip_reason


def test_run_matrix_records_structure_score(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    gw, _ = mock_gateway(tmp_path, scripted_cells([("a", "yes")]))
    records = run_matrix(
        [manifest("s1")], {"m1": fast_endpoint},
        [InputCondition.structured_only], gw, fast_endpoint, assets,
        tmp_path / "run",
    )
    assert records[0].evidence_structure_score == pytest.approx(1.0)
    assert records[0].prompt_versions  # versions captured per record


def test_run_matrix_parallel_matches_serial(tmp_path, fast_endpoint):
    assets = write_assets(tmp_path / "assets")
    samples = [manifest(f"s{i}") for i in range(6)]
    gw, _ = mock_gateway(tmp_path, scripted_cells([("a", "yes")] * 6))
    records = run_matrix(
        samples, {"m1": fast_endpoint}, [InputCondition.ocr_only], gw,
        fast_endpoint, assets, tmp_path / "run", jobs=4,
    )
    assert len(records) == 6
    persisted = read_records(tmp_path / "run" / "records.jsonl")
    assert {r.key() for r in persisted} == {r.key() for r in records}


# -- improvement arithmetic -------------------------------------------------

# (structured_accuracy, baseline_accuracy, published_percent_delta)
REFERENCE_DELTAS = [
    (0.306, 0.292, 4.8), (0.229, 0.195, 17.4), (0.209, 0.160, 30.6),
    (0.509, 0.441, 15.4),
    (0.435, 0.389, 11.8), (0.221, 0.197, 12.2), (0.252, 0.163, 54.6),
    (0.575, 0.508, 13.2),
    (0.224, 0.131, 71.0), (0.153, 0.126, 21.4), (0.122, 0.051, 139.2),
    (0.388, 0.154, 151.9),
    (0.284, 0.189, 50.3), (0.211, 0.131, 61.1), (0.224, 0.077, 190.9),
    (0.429, 0.245, 75.1),
]


@pytest.mark.parametrize("a,b,expected", REFERENCE_DELTAS)
def test_reference_accuracy_deltas_reproduce(a, b, expected):
    assert improvement_percent(a, b) == expected


def test_relative_improvement_basics():
    assert relative_improvement(0.5, 0.25) == pytest.approx(1.0)
    assert relative_improvement(0.25, 0.5) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        relative_improvement(0.5, 0.0)


# -- aggregation ------------------------------------------------------------


def synthetic_records(n=10, correct_structured=8, correct_image=5):
    samples = [
        manifest(f"s{i}", dataset="closed",
                 category="table" if i % 2 == 0 else "chart")
        for i in range(n)
    ]
    records = []
    for cond, n_correct in (
        ("image_plus_structured", correct_structured),
        ("image_only", correct_image),
    ):
        for i, s in enumerate(samples):
            records.append(
                RunRecord(
                    sample_id=s.sample_id, condition=cond, model_name="m1",
                    dataset="closed", selected_page=1, answer_text="a",
                    verdict_correct=i < n_correct, raw_judge_text="yes",
                )
            )
    return samples, records


def test_aggregate_improvements():
    samples, records = synthetic_records()
    report = aggregate(records, samples)
    cell = report.cells[("m1", "image_plus_structured", "closed")]
    assert cell.accuracy == pytest.approx(0.8)
    key = ("m1", "closed", "image_plus_structured", "image_only")
    assert report.improvements[key] == improvement_percent(0.8, 0.5) == 60.0


def test_aggregate_category_breakdown():
    samples, records = synthetic_records()
    report = aggregate(records, samples)
    table_cell = report.category_cells[("m1", "image_only", "table")]
    assert table_cell.judged == 5  # even-indexed samples


def test_aggregate_rejects_partial_by_default():
    samples, records = synthetic_records()
    with pytest.raises(PartialData) as exc:
        aggregate(records[:-1], samples)
    assert len(exc.value.missing) == 1
    report = aggregate(records[:-1], samples, allow_partial=True)
    assert report.cells


def test_aggregate_permutation_invariant():
    samples, records = synthetic_records()
    ref = aggregate(records, samples)
    shuffled = records[:]
    random.Random(3).shuffle(shuffled)
    assert aggregate(shuffled, samples) == ref


def test_aggregate_matches_naive_recount():
    samples, records = synthetic_records(n=12, correct_structured=7,
                                         correct_image=4)
    report = aggregate(records, samples)
    # independent recount with a plain loop over serialized records
    raw = [json.loads(json.dumps(r.to_json())) for r in records]
    for cond in ("image_plus_structured", "image_only"):
        rs = [r for r in raw if r["condition"] == cond and r["status"] == "ok"]
        acc = sum(1 for r in rs if r["verdict_correct"]) / len(rs)
        assert report.cells[("m1", cond, "closed")].accuracy == pytest.approx(acc)


def test_skipped_records_counted_but_not_judged():
    samples, records = synthetic_records(n=4)
    records[0] = RunRecord(
        sample_id=records[0].sample_id, condition=records[0].condition,
        model_name="m1", dataset="closed", selected_page=1, answer_text="",
        verdict_correct=False, raw_judge_text="", status="skipped",
        skip_reason="AssetMissing: x",
    )
    report = aggregate(records, samples)
    cell = report.cells[("m1", "image_plus_structured", "closed")]
    assert cell.judged == 3 and cell.skipped == 1


# -- rendering --------------------------------------------------------------


def test_report_csv_recovers_accuracies():
    samples, records = synthetic_records()
    report = aggregate(records, samples)
    csv_text = report_render(report, "csv").decode()
    lines = csv_text.strip().split("\n")
    assert lines[0] == "model,condition,dataset,correct,judged,skipped,accuracy"
    data = {}
    for line in lines[1:]:
        cols = line.split(",")
        if cols[1].startswith("improvement:") or cols[2].startswith("category:"):
            continue
        data[(cols[0], cols[1], cols[2])] = float(cols[6])
    for key, cs in report.cells.items():
        assert data[key] == pytest.approx(cs.accuracy, abs=5e-4)
    assert "improvement:image_plus_structured_vs_image_only" in csv_text
    assert "+60.0%" in csv_text


def test_report_md_layout():
    samples, records = synthetic_records()
    md = report_render(aggregate(records, samples), "md").decode()
    assert "| Model | Condition | closed | Avg |" in md
    assert "| m1 | image_plus_structured | 0.800 | 0.800 |" in md
    assert "delta vs image_only | +60.0%" in md
    assert "# Accuracy by element category" in md


def test_report_rejects_unknown_format():
    samples, records = synthetic_records()
    with pytest.raises(ValueError):
        report_render(aggregate(records, samples), "xml")
