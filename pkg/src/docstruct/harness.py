"""Experiment runner: evidence selection, run matrix, aggregation, reports.

Runs every (sample, model, condition) cell of the experiment, judges the
answers, and persists one JSON line per cell so a run can be resumed by
re-reading its ``records.jsonl``.  Aggregation reproduces the accuracy
tables: per-dataset accuracy by model and condition, per-element-category
breakdowns, and relative improvements computed as an accuracy ratio minus
one, rendered as percents to one decimal.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import (
    ALL_CONDITIONS,
    EvidenceBundle,
    Gateway,
    GatewayError,
    InputCondition,
    ModelEndpoint,
    PROMPT_VERSIONS,
)
from .structured_encoder import parse_structured, structure_score

MANIFEST_SCHEMA = "manifest/1"
ELEMENT_CATEGORIES = ("chart", "table", "pure_text", "generalized_text", "figure")


class HarnessError(Exception):
    pass


class EmptyEvidence(HarnessError):
    pass


class PartialData(HarnessError):
    def __init__(self, missing: list[tuple[str, str, str]]):
        self.missing = missing
        super().__init__(
            f"{len(missing)} missing (sample, condition, model) triples; "
            f"first: {missing[:5]}"
        )


class AssetMissing(HarnessError):
    pass


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleManifest:
    sample_id: str
    doc_id: str
    question: str
    reference_answer: str
    evidence_pages: tuple[int, ...] | None = None
    retrieval_scores: dict[int, float] | None = None
    element_category: str | None = None
    dataset: str = "default"

    def __post_init__(self) -> None:
        if (self.evidence_pages is None) == (self.retrieval_scores is None):
            raise ValueError(
                "exactly one of evidence_pages / retrieval_scores must be set"
            )
        if self.element_category is not None and (
            self.element_category not in ELEMENT_CATEGORIES
        ):
            raise ValueError(f"unknown element_category {self.element_category!r}")
        if self.evidence_pages is not None:
            object.__setattr__(self, "evidence_pages", tuple(self.evidence_pages))

    def to_json(self) -> dict:
        out: dict = {
            "schema": MANIFEST_SCHEMA,
            "sample_id": self.sample_id,
            "doc_id": self.doc_id,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "dataset": self.dataset,
        }
        if self.evidence_pages is not None:
            out["evidence_pages"] = list(self.evidence_pages)
        if self.retrieval_scores is not None:
            out["retrieval_scores"] = {
                str(k): v for k, v in self.retrieval_scores.items()
            }
        if self.element_category is not None:
            out["element_category"] = self.element_category
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SampleManifest":
        schema = obj.get("schema", MANIFEST_SCHEMA)
        if schema != MANIFEST_SCHEMA:
            raise ValueError(f"unsupported manifest schema {schema!r}")
        scores = obj.get("retrieval_scores")
        return cls(
            sample_id=obj["sample_id"],
            doc_id=obj["doc_id"],
            question=obj["question"],
            reference_answer=obj["reference_answer"],
            evidence_pages=(
                tuple(obj["evidence_pages"]) if "evidence_pages" in obj else None
            ),
            retrieval_scores=(
                {int(k): float(v) for k, v in scores.items()}
                if scores is not None
                else None
            ),
            element_category=obj.get("element_category"),
            dataset=obj.get("dataset", "default"),
        )


def load_manifest(path: str | Path) -> list[SampleManifest]:
    samples = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            samples.append(SampleManifest.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise HarnessError(f"{path} line {i + 1}: {exc}") from exc
    return samples


def select_evidence(sample: SampleManifest) -> int:
    """Closed-domain: first listed page.  Open-domain: top-1 score, ties to
    the lowest page number."""
    if sample.evidence_pages is not None:
        if not sample.evidence_pages:
            raise EmptyEvidence(sample.sample_id)
        return sample.evidence_pages[0]
    if not sample.retrieval_scores:
        raise EmptyEvidence(sample.sample_id)
    return min(
        sample.retrieval_scores, key=lambda p: (-sample.retrieval_scores[p], p)
    )


# --------------------------------------------------------------------------
# Assets and records
# --------------------------------------------------------------------------


class AssetStore:
    """On-disk evidence layout: ``<dir>/<doc_id>/p<page>.{png,txt,tex}``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _read(self, doc_id: str, page: int, ext: str, binary: bool):
        path = self.root / doc_id / f"p{page}.{ext}"
        if not path.exists():
            raise AssetMissing(str(path))
        return path.read_bytes() if binary else path.read_text(encoding="utf-8")

    def bundle(
        self, sample: SampleManifest, page: int, condition: InputCondition
    ) -> EvidenceBundle:
        return EvidenceBundle(
            image=(
                self._read(sample.doc_id, page, "png", True)
                if condition.needs_image
                else None
            ),
            ocr_text=(
                self._read(sample.doc_id, page, "txt", False)
                if condition.needs_ocr
                else None
            ),
            structured_text=(
                self._read(sample.doc_id, page, "tex", False)
                if condition.needs_structured
                else None
            ),
        )


@dataclass(frozen=True)
class RunRecord:
    sample_id: str
    condition: str
    model_name: str
    dataset: str
    selected_page: int
    answer_text: str
    verdict_correct: bool
    raw_judge_text: str
    timings: dict = field(default_factory=dict)
    prompt_versions: dict = field(default_factory=lambda: dict(PROMPT_VERSIONS))
    evidence_structure_score: float | None = None
    status: str = "ok"
    skip_reason: str | None = None

    def key(self) -> tuple[str, str, str]:
        return (self.sample_id, self.condition, self.model_name)

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        return cls(**obj)


def read_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    return [
        RunRecord.from_json(json.loads(line))
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


# --------------------------------------------------------------------------
# Run matrix
# --------------------------------------------------------------------------


def run_matrix(
    manifests: list[SampleManifest],
    models: dict[str, ModelEndpoint],
    conditions: list[InputCondition],
    gateway: Gateway,
    judge_endpoint: ModelEndpoint,
    assets: AssetStore,
    run_dir: str | Path,
    jobs: int = 1,
) -> list[RunRecord]:
    """Evaluate every (sample, model, condition); resume from records.jsonl.

    Per-cell failures become skipped records with a reason; they are never
    silently dropped.  Already-persisted cells are not re-run.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    records_path = run_dir / "records.jsonl"
    existing = read_records(records_path)
    done = {r.key() for r in existing}

    keys = {(s.sample_id, c.value, m) for s in manifests for c in conditions
            for m in models}
    duplicates = len(manifests) != len({s.sample_id for s in manifests})
    if duplicates:
        raise HarnessError("duplicate sample_ids in manifest")

    write_lock = threading.Lock()

    def persist(record: RunRecord) -> None:
        with write_lock:
            with open(records_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")

    def evaluate(
        sample: SampleManifest, model_name: str, condition: InputCondition
    ) -> RunRecord:
        endpoint = models[model_name]
        base = dict(
            sample_id=sample.sample_id,
            condition=condition.value,
            model_name=model_name,
            dataset=sample.dataset,
        )
        try:
            page = select_evidence(sample)
        except EmptyEvidence as exc:
            return RunRecord(
                **base, selected_page=-1, answer_text="", verdict_correct=False,
                raw_judge_text="", status="skipped",
                skip_reason=f"EmptyEvidence: {exc}",
            )
        try:
            evidence = assets.bundle(sample, page, condition)
        except AssetMissing as exc:
            return RunRecord(
                **base, selected_page=page, answer_text="", verdict_correct=False,
                raw_judge_text="", status="skipped",
                skip_reason=f"AssetMissing: {exc}",
            )
        score = None
        if evidence.structured_text is not None:
            doc, _ = parse_structured(evidence.structured_text)
            score = structure_score(doc)
        try:
            t0 = time.monotonic()
            answer_text = gateway.answer(
                endpoint, sample.question, condition, evidence
            )
            t1 = time.monotonic()
            verdict = gateway.judge(
                judge_endpoint,
                sample.question,
                sample.reference_answer,
                answer_text or "(empty answer)",
            )
            t2 = time.monotonic()
        except GatewayError as exc:
            return RunRecord(
                **base, selected_page=page, answer_text="", verdict_correct=False,
                raw_judge_text="", evidence_structure_score=score,
                status="skipped", skip_reason=f"{type(exc).__name__}: {exc}",
            )
        return RunRecord(
            **base,
            selected_page=page,
            answer_text=answer_text,
            verdict_correct=verdict.correct,
            raw_judge_text=verdict.raw_judge_text,
            timings={"answer_s": t1 - t0, "judge_s": t2 - t1},
            evidence_structure_score=score,
        )

    todo = [
        (s, m, c)
        for s in manifests
        for m in models
        for c in conditions
        if (s.sample_id, c.value, m) not in done
    ]
    new_records: list[RunRecord] = []
    if todo:
        with ThreadPoolExecutor(max_workers=max(jobs, 1)) as pool:
            for record in pool.map(lambda item: evaluate(*item), todo):
                persist(record)
                new_records.append(record)
    all_records = existing + new_records
    return [r for r in all_records if r.key() in keys]


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


def relative_improvement(accuracy_a: float, accuracy_b: float) -> float:
    """Ratio-minus-one improvement of A over B, as a fraction."""
    if accuracy_b == 0:
        raise ValueError("baseline accuracy is zero")
    return accuracy_a / accuracy_b - 1.0


def improvement_percent(accuracy_a: float, accuracy_b: float) -> float:
    return round(relative_improvement(accuracy_a, accuracy_b) * 100.0, 1)


@dataclass(frozen=True)
class CellStats:
    correct: int
    judged: int
    skipped: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.judged if self.judged else 0.0


@dataclass(frozen=True)
class AccuracyReport:
    # (model, condition, dataset) -> CellStats
    cells: dict[tuple[str, str, str], CellStats]
    # (model, condition, category) -> CellStats
    category_cells: dict[tuple[str, str, str], CellStats]
    # (model, dataset, condition_a, condition_b) -> percent delta
    improvements: dict[tuple[str, str, str, str], float]

    def models(self) -> list[str]:
        return sorted({k[0] for k in self.cells})

    def conditions(self) -> list[str]:
        order = [c.value for c in ALL_CONDITIONS]
        present = {k[1] for k in self.cells}
        return [c for c in order if c in present]

    def datasets(self) -> list[str]:
        return sorted({k[2] for k in self.cells})


IMPROVEMENT_PAIRS = (
    ("image_plus_structured", "image_only"),
    ("image_plus_ocr", "image_only"),
)


def aggregate(
    records: list[RunRecord],
    manifests: list[SampleManifest],
    allow_partial: bool = False,
) -> AccuracyReport:
    by_sample = {s.sample_id: s for s in manifests}
    scope_models = sorted({r.model_name for r in records})
    scope_conditions = sorted({r.condition for r in records})
    have = {r.key() for r in records}
    missing = [
        (s.sample_id, c, m)
        for s in manifests
        for c in scope_conditions
        for m in scope_models
        if (s.sample_id, c, m) not in have
    ]
    if missing and not allow_partial:
        raise PartialData(missing)

    cells: dict[tuple[str, str, str], list[RunRecord]] = {}
    cat_cells: dict[tuple[str, str, str], list[RunRecord]] = {}
    for r in records:
        sample = by_sample.get(r.sample_id)
        if sample is None:
            continue
        cells.setdefault((r.model_name, r.condition, sample.dataset), []).append(r)
        if sample.element_category is not None:
            cat_cells.setdefault(
                (r.model_name, r.condition, sample.element_category), []
            ).append(r)

    def stats(rs: list[RunRecord]) -> CellStats:
        judged = [r for r in rs if r.status == "ok"]
        return CellStats(
            correct=sum(1 for r in judged if r.verdict_correct),
            judged=len(judged),
            skipped=sum(1 for r in rs if r.status != "ok"),
        )

    cell_stats = {k: stats(v) for k, v in sorted(cells.items())}
    cat_stats = {k: stats(v) for k, v in sorted(cat_cells.items())}

    improvements: dict[tuple[str, str, str, str], float] = {}
    for (model, condition, dataset), cs in cell_stats.items():
        for cond_a, cond_b in IMPROVEMENT_PAIRS:
            if condition != cond_a:
                continue
            base = cell_stats.get((model, cond_b, dataset))
            if base is None or base.accuracy == 0 or cs.judged == 0:
                continue
            improvements[(model, dataset, cond_a, cond_b)] = improvement_percent(
                cs.accuracy, base.accuracy
            )
    return AccuracyReport(
        cells=cell_stats, category_cells=cat_stats, improvements=improvements
    )


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def report_render(report: AccuracyReport, fmt: str = "md") -> bytes:
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "md":
        return _render_md(report)
    raise ValueError(f"unknown report format {fmt!r}")


def _render_csv(report: AccuracyReport) -> bytes:
    lines = ["model,condition,dataset,correct,judged,skipped,accuracy"]
    for (model, condition, dataset), cs in report.cells.items():
        lines.append(
            f"{model},{condition},{dataset},{cs.correct},{cs.judged},"
            f"{cs.skipped},{_fmt(cs.accuracy)}"
        )
    for (model, dataset, cond_a, cond_b), pct in sorted(report.improvements.items()):
        lines.append(
            f"{model},improvement:{cond_a}_vs_{cond_b},{dataset},,,,{pct:+.1f}%"
        )
    for (model, condition, category), cs in report.category_cells.items():
        lines.append(
            f"{model},{condition},category:{category},{cs.correct},{cs.judged},"
            f"{cs.skipped},{_fmt(cs.accuracy)}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def _render_md(report: AccuracyReport) -> bytes:
    datasets = report.datasets()
    out = ["# Accuracy by model and condition", ""]
    header = "| Model | Condition | " + " | ".join(datasets) + " | Avg |"
    sep = "|---" * (len(datasets) + 3) + "|"
    out += [header, sep]
    for model in report.models():
        for condition in report.conditions():
            accs = []
            row = [model, condition]
            for ds in datasets:
                cs = report.cells.get((model, condition, ds))
                if cs is None or cs.judged == 0:
                    row.append("-")
                else:
                    row.append(_fmt(cs.accuracy))
                    accs.append(cs.accuracy)
            row.append(_fmt(sum(accs) / len(accs)) if accs else "-")
            out.append("| " + " | ".join(row) + " |")
            for cond_a, cond_b in IMPROVEMENT_PAIRS:
                if condition != cond_a:
                    continue
                deltas = [
                    report.improvements.get((model, ds, cond_a, cond_b))
                    for ds in datasets
                ]
                if any(d is not None for d in deltas):
                    row = [model, f"delta vs {cond_b}"]
                    row += [
                        f"{d:+.1f}%" if d is not None else "-" for d in deltas
                    ]
                    row.append("")
                    out.append("| " + " | ".join(row) + " |")
    if report.category_cells:
        categories = sorted({k[2] for k in report.category_cells})
        out += ["", "# Accuracy by element category", ""]
        out.append("| Model | Condition | " + " | ".join(categories) + " |")
        out.append("|---" * (len(categories) + 2) + "|")
        pairs = sorted({(k[0], k[1]) for k in report.category_cells})
        for model, condition in pairs:
            row = [model, condition]
            for cat in categories:
                cs = report.category_cells.get((model, condition, cat))
                row.append(
                    _fmt(cs.accuracy) if cs is not None and cs.judged else "-"
                )
            out.append("| " + " | ".join(row) + " |")
    return ("\n".join(out) + "\n").encode("utf-8")
