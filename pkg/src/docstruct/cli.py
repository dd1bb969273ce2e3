"""Command-line entry point: ``docstruct <command>``.

Commands: ingest, structure, bench run, bench report, attn profile,
attn compare, attn heatmap.  Exit codes: 0 ok, 2 input error, 3 upstream or
network error, 4 partial data, 64 usage.  Every command accepts ``--json``
for machine-readable output and emits files in deterministic order.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import attention, harness, ocr_ingest
from .doc_model import ModelError
from .gateway import (
    Gateway,
    GatewayError,
    InputCondition,
    ModelEndpoint,
    PROMPT_VERSIONS,
)
from .layout_analysis import LayoutParams, analyze
from .structured_encoder import (
    EmitOptions,
    encode,
    parse_structured,
    serialize,
    structure_score,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UPSTREAM = 3
EXIT_PARTIAL = 4
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise UsageError(message)


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------


@dataclasses.dataclass
class GlobalConfig:
    layout: LayoutParams = dataclasses.field(default_factory=LayoutParams)
    endpoints: dict[str, ModelEndpoint] = dataclasses.field(default_factory=dict)
    judge: str | None = None
    prompt_dir: str | None = None
    audit_log: str | None = None
    requests_per_minute: int | None = None

    def __post_init__(self) -> None:
        if self.prompt_dir is not None:
            for name in PROMPT_VERSIONS.values():
                path = Path(self.prompt_dir) / name
                if not path.exists():
                    raise UsageError(f"prompt template missing: {path}")


def _apply_env_overrides(raw: dict) -> dict:
    """DOCSTRUCT_<SECTION>_<KEY>=value overrides raw[section][key]."""
    for key, value in os.environ.items():
        if not key.startswith("DOCSTRUCT_"):
            continue
        parts = key[len("DOCSTRUCT_"):].lower().split("_", 1)
        if len(parts) != 2:
            continue
        section, name = parts
        raw.setdefault(section, {})
        try:
            raw[section][name] = json.loads(value)
        except json.JSONDecodeError:
            raw[section][name] = value
    return raw


def load_config(path: str | Path | None) -> GlobalConfig:
    raw: dict = {}
    if path is None:
        env_path = os.environ.get("DOCSTRUCT_CONFIG")
        if env_path:
            path = env_path
        elif Path("docstruct.toml").exists():
            path = "docstruct.toml"
    if path is not None:
        try:
            raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
    raw = _apply_env_overrides(raw)
    endpoints = {
        name: ModelEndpoint(**spec)
        for name, spec in raw.get("endpoints", {}).items()
    }
    bench = raw.get("bench", {})
    paths = raw.get("paths", {})
    return GlobalConfig(
        layout=LayoutParams.from_dict({**LayoutParams().to_dict(),
                                       **raw.get("layout", {})}),
        endpoints=endpoints,
        judge=bench.get("judge"),
        prompt_dir=paths.get("prompt_dir"),
        audit_log=paths.get("audit_log"),
        requests_per_minute=bench.get("requests_per_minute"),
    )


def _emit(payload: dict, as_json: bool, stream=None) -> None:
    stream = stream or sys.stdout
    if as_json:
        print(json.dumps(payload, sort_keys=True), file=stream)
    else:
        for key, value in payload.items():
            print(f"{key}: {value}", file=stream)


def _fail(code: int, message: str, as_json: bool) -> int:
    if as_json:
        print(json.dumps({"error": message, "exit_code": code}), file=sys.stderr)
    else:
        print(f"error: {message}", file=sys.stderr)
    return code


# --------------------------------------------------------------------------
# ingest
# --------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    try:
        data = Path(args.infile).read_bytes()
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read {args.infile}: {exc}", args.json)
    parser = ocr_ingest.PARSERS[args.format]
    try:
        pages, report = parser(data)
    except ocr_ingest.MalformedInput as exc:
        return _fail(EXIT_INPUT, f"malformed input: {exc}", args.json)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for page in pages:
        path = out / f"{page.page_id}.json"
        path.write_bytes(ocr_ingest.serialize_tokens_json([page]))
        written.append(str(path))
    (out / "ingest_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    _emit({"pages": len(pages), "files": sorted(written),
           "report": report.to_dict()}, args.json)
    return EXIT_OK


# --------------------------------------------------------------------------
# structure
# --------------------------------------------------------------------------


def cmd_structure(args, config: GlobalConfig) -> int:
    if args.mode == "mllm":
        if not args.image:
            raise UsageError("--image is required in mllm mode")
        if not args.endpoint:
            raise UsageError("--endpoint is required in mllm mode")
    try:
        data = Path(args.infile).read_bytes()
        pages, _ = ocr_ingest.parse_tokens_json(data)
    except (OSError, ocr_ingest.MalformedInput) as exc:
        return _fail(EXIT_INPUT, f"cannot read tokens-JSON: {exc}", args.json)
    doc_id = args.doc_id or Path(args.infile).stem
    out = Path(args.out) / doc_id
    out.mkdir(parents=True, exist_ok=True)

    summary: dict[str, dict] = {}
    partial = False
    for index, page in enumerate(pages, start=1):
        from .structured_encoder import _page_number

        page_num = _page_number(page.page_id) if any(
            ch.isdigit() for ch in page.page_id) else index
        tex_path = out / f"p{page_num}.tex"
        if args.mode == "geometric":
            tree = analyze(page, config.layout)
            doc = encode(tree, EmitOptions())
        else:
            if len(pages) > 1:
                raise UsageError("mllm mode supports single-page inputs")
            gw = Gateway(
                audit_log=Path(args.out) / "audit.jsonl",
                template_dir=config.prompt_dir,
            )
            endpoint = config.endpoints.get(args.endpoint)
            if endpoint is None:
                raise UsageError(f"unknown endpoint {args.endpoint!r}")
            try:
                image = Path(args.image).read_bytes()
            except OSError as exc:
                return _fail(EXIT_INPUT, f"cannot read image: {exc}", args.json)
            ocr_text = " ".join(t.text for t in page.tokens)
            try:
                doc, _diags = gw.structure_via_mllm(endpoint, image, ocr_text)
            except GatewayError as exc:
                partial = True
                summary[str(tex_path)] = {"error": str(exc)}
                continue
        tex_path.write_text(serialize(doc, EmitOptions()), encoding="utf-8")
        summary[str(tex_path)] = {"structure_score": structure_score(doc)}
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    _emit({"doc_id": doc_id, "pages": summary}, args.json)
    return EXIT_UPSTREAM if partial else EXIT_OK


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------


def _parse_conditions(raw: str) -> list[InputCondition]:
    out = []
    for name in raw.split(","):
        name = name.strip()
        try:
            out.append(InputCondition(name))
        except ValueError:
            raise UsageError(f"unknown condition {name!r}") from None
    return out


def cmd_bench_run(args, config: GlobalConfig) -> int:
    models_config = load_config(args.models) if args.models else config
    if not models_config.endpoints:
        return _fail(EXIT_INPUT, "no endpoints configured", args.json)
    judge_name = args.judge or models_config.judge
    if judge_name is None or judge_name not in models_config.endpoints:
        return _fail(
            EXIT_INPUT, f"judge endpoint {judge_name!r} not configured", args.json
        )
    try:
        manifests = harness.load_manifest(args.manifest)
    except (OSError, harness.HarnessError) as exc:
        return _fail(EXIT_INPUT, f"cannot read manifest: {exc}", args.json)
    conditions = _parse_conditions(args.conditions)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    gw = Gateway(
        audit_log=run_dir / "audit.jsonl",
        template_dir=models_config.prompt_dir,
        requests_per_minute=models_config.requests_per_minute,
        max_concurrency=max(args.jobs, 1),
    )
    models = {
        name: ep for name, ep in models_config.endpoints.items()
        if name != judge_name or args.judge_also_answers
    } or models_config.endpoints
    snapshot = {
        "manifest": str(args.manifest),
        "conditions": [c.value for c in conditions],
        "models": sorted(models),
        "judge": judge_name,
        "layout": models_config.layout.to_dict(),
        "prompt_versions": dict(PROMPT_VERSIONS),
    }
    (run_dir / "config.toml").write_text(
        "".join(f'{k} = {json.dumps(v)}\n' for k, v in sorted(
            (k, v) for k, v in snapshot.items())),
        encoding="utf-8",
    )
    records = harness.run_matrix(
        manifests=manifests,
        models=models,
        conditions=conditions,
        gateway=gw,
        judge_endpoint=models_config.endpoints[judge_name],
        assets=harness.AssetStore(args.assets),
        run_dir=run_dir,
        jobs=args.jobs,
    )
    skipped = sum(1 for r in records if r.status != "ok")
    _emit({"records": len(records), "skipped": skipped,
           "run_dir": str(run_dir)}, args.json)
    return EXIT_OK


def cmd_bench_report(args, config: GlobalConfig) -> int:
    run_dir = Path(args.run)
    records = harness.read_records(run_dir / "records.jsonl")
    if not records:
        return _fail(EXIT_INPUT, f"no records in {run_dir}", args.json)
    try:
        manifests = harness.load_manifest(args.manifest)
    except (OSError, harness.HarnessError) as exc:
        return _fail(EXIT_INPUT, f"cannot read manifest: {exc}", args.json)
    try:
        report = harness.aggregate(records, manifests,
                                   allow_partial=args.allow_partial)
    except harness.PartialData as exc:
        return _fail(EXIT_PARTIAL, str(exc), args.json)
    rendered = harness.report_render(report, args.format)
    out_path = run_dir / f"report.{args.format}"
    out_path.write_bytes(rendered)
    if args.json:
        _emit({"report_file": str(out_path)}, True)
    else:
        sys.stdout.write(rendered.decode("utf-8"))
    return EXIT_OK


# --------------------------------------------------------------------------
# attn
# --------------------------------------------------------------------------


def _load_tensor(path: str, as_json: bool):
    try:
        return attention.load_attn(path)
    except attention.AttentionError as exc:
        raise UsageError(f"cannot load {path}: {exc}") from exc


def cmd_attn_profile(args) -> int:
    try:
        tensor = attention.load_attn(args.infile)
    except attention.AttentionError as exc:
        return _fail(EXIT_INPUT, str(exc), args.json)
    prof = attention.border_profile(tensor, args.ring)
    curve = attention.layer_curve(tensor)
    _emit(
        {
            "sample_id": tensor.sample_id,
            "condition": tensor.condition,
            "border_share": prof.border_share,
            "body_share": prof.body_share,
            "image_mass": prof.image_mass,
            "entropy": prof.entropy,
            "layer_curve": curve,
        },
        args.json,
    )
    return EXIT_OK


def _load_dir(path: str) -> list:
    files = sorted(Path(path).glob("*.attn"))
    if not files:
        raise UsageError(f"no .attn files in {path}")
    return [attention.load_attn(f) for f in files]


def cmd_attn_compare(args) -> int:
    try:
        set_a = _load_dir(args.a)
        set_b = _load_dir(args.b)
        report = attention.compare_conditions(set_a, set_b, args.ring)
    except attention.AttentionError as exc:
        return _fail(EXIT_INPUT, str(exc), args.json)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    lines = ["metric,a,b,delta"]
    lines.append(
        f"border_share,{report.a.border_share_mean:.6f},"
        f"{report.b.border_share_mean:.6f},{report.delta_border_share:.6f}"
    )
    lines.append(
        f"entropy,{report.a.entropy_mean:.6f},"
        f"{report.b.entropy_mean:.6f},{report.delta_entropy:.6f}"
    )
    for i, d in enumerate(report.delta_layer_curve):
        a_v = report.a.layer_curve_mean[i] if i < len(report.a.layer_curve_mean) else float("nan")
        b_v = report.b.layer_curve_mean[i] if i < len(report.b.layer_curve_mean) else float("nan")
        lines.append(f"layer_{i},{a_v:.6f},{b_v:.6f},{d:.6f}")
    (out / "deltas.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit({"out": str(out), "delta_border_share": report.delta_border_share},
          args.json)
    return EXIT_OK


def cmd_attn_heatmap(args) -> int:
    try:
        tensor = attention.load_attn(args.infile)
    except attention.AttentionError as exc:
        return _fail(EXIT_INPUT, str(exc), args.json)
    page_image = None
    if args.image:
        try:
            page_image = Path(args.image).read_bytes()
        except OSError as exc:
            return _fail(EXIT_INPUT, f"cannot read image: {exc}", args.json)
    try:
        attention.heatmap_export(tensor, args.out, page_image=page_image)
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot write heatmap: {exc}", args.json)
    _emit({"out": args.out}, args.json)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser wiring
# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="docstruct")
    parser.add_argument("--config", default=None, help="path to docstruct.toml")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest")
    p.add_argument("--format", choices=sorted(ocr_ingest.PARSERS), required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("structure")
    p.add_argument("--mode", choices=["geometric", "mllm"], required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--doc-id", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")

    bench = sub.add_parser("bench")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    p = bench_sub.add_parser("run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", default=None, help="TOML config with [endpoints.*]")
    p.add_argument("--conditions", required=True)
    p.add_argument("--assets", required=True)
    p.add_argument("--judge", default=None)
    p.add_argument("--judge-also-answers", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p = bench_sub.add_parser("report")
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=["md", "csv"], default="md")
    p.add_argument("--allow-partial", action="store_true")
    p.add_argument("--json", action="store_true")

    attn = sub.add_parser("attn")
    attn_sub = attn.add_subparsers(dest="attn_command", required=True)
    p = attn_sub.add_parser("profile")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--ring", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p = attn_sub.add_parser("compare")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--ring", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p = attn_sub.add_parser("heatmap")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config)
        if args.command == "ingest":
            return cmd_ingest(args)
        if args.command == "structure":
            return cmd_structure(args, config)
        if args.command == "bench":
            if args.bench_command == "run":
                return cmd_bench_run(args, config)
            return cmd_bench_report(args, config)
        if args.command == "attn":
            if args.attn_command == "profile":
                return cmd_attn_profile(args)
            if args.attn_command == "compare":
                return cmd_attn_compare(args)
            return cmd_attn_heatmap(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GatewayError as exc:
        print(f"upstream error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (ModelError, ocr_ingest.MalformedInput) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
