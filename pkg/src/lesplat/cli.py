"""Command-line pipeline driver.

Subcommands cover the batch workflow end to end: synthesize a labeled
scene, build a codebook from an embedding table, train semantics, render
images, generate query specs (offline stub or live endpoint), segment by
relevancy, evaluate masks, and run the full benchmark comparison.

Exit codes: 0 success, 1 usage error, 2 data error, 3 transport error.
Errors go to stderr with stable prefixes. A ``--config`` file of
``key=value`` lines supplies defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench_mod
from .io_formats import (
    FormatError,
    read_embedding_table,
    read_legf,
    read_pgm,
    write_legf,
    write_pgm,
    write_ppm,
)
from .metrics import ClassEval, evaluate
from .mlp import DecoderMLP, SmoothingMLP
from .query_gen import (
    LlmClientConfig,
    PromptContext,
    ProtocolError,
    TransportError,
    generate_query,
)
from .quantize import build_codebook
from .relevancy import QuerySpec, SegMask, feature_map, score_query, segment
from .render import render_color, render_semantic_distribution
from .scene import Camera, ClassSpec, SyntheticSceneSpec, make_synthetic_scene, scene_from_json, scene_to_json
from .train import IGNORE_INDEX, TrainConfig, train_semantics

MODEL_FORMAT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so run() controls the exit code
    def error(self, message):
        raise UsageError(message)


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _load_camera(path) -> Camera:
    return Camera.from_json_dict(_read_json(path))


def _load_scene(path):
    return scene_from_json(Path(path).read_text(encoding="utf-8"))


def _write_model(path, decoder: DecoderMLP, smoother: SmoothingMLP):
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "feature_dim": decoder.feature_dim,
        "k": decoder.k,
        "decoder": decoder.to_json_dict(),
        "smoother": smoother.to_json_dict(),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def _load_model(path):
    doc = _read_json(path)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    return (
        DecoderMLP.from_json_dict(doc["decoder"]),
        SmoothingMLP.from_json_dict(doc["smoother"]),
    )


def _scene_spec_from_json(doc) -> SyntheticSceneSpec:
    classes = tuple(
        ClassSpec(
            name=c["name"],
            center=np.asarray(c["center"], dtype=np.float64),
            extent=np.asarray(c["extent"], dtype=np.float64),
            count=int(c["count"]),
            color=np.asarray(c["color"], dtype=np.float64),
            opacity=float(c.get("opacity", 0.8)),
            scale=np.asarray(c["scale"], dtype=np.float64) if "scale" in c else None,
        )
        for c in doc["classes"]
    )
    return SyntheticSceneSpec(
        classes=classes,
        noise=float(doc.get("noise", 0.0)),
        seed=int(doc.get("seed", 0)),
        background_color=np.asarray(doc.get("background_color", [0, 0, 0]), dtype=np.float64),
    )


# --- subcommand implementations ----------------------------------------------


def _cmd_synth(args) -> int:
    spec = _scene_spec_from_json(_read_json(args.spec))
    scene, labels = make_synthetic_scene(spec)
    Path(args.out_scene).write_text(scene_to_json(scene), encoding="utf-8")
    Path(args.out_labels).write_text(
        json.dumps({"classes": [c.name for c in spec.classes], "labels": labels.tolist()}),
        encoding="utf-8",
    )
    if args.camera:
        cam = _load_camera(args.camera)
        n_classes = len(spec.classes)
        target = bench_mod.render_index_targets(
            scene, cam, labels, n_classes, coverage_threshold=args.coverage
        )
        Path(args.out_targets).write_bytes(
            write_legf(target.astype(np.float64)[:, :, None])
        )
        for j, cls in enumerate(spec.classes):
            mask = SegMask(width=cam.width, height=cam.height, mask=target == j)
            path = Path(args.out_targets).with_suffix(f".{cls.name}.pgm")
            path.write_bytes(write_pgm(mask.mask))
    return 0


def _cmd_quantize(args) -> int:
    from .io_formats import write_embedding_table

    table, _ = read_embedding_table(Path(args.table).read_text(encoding="utf-8"))
    cb = build_codebook(table.vectors, args.k, seed=args.seed)
    Path(args.out).write_text(write_embedding_table(table, cb), encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    scene = _load_scene(args.scene)
    views = []
    for pair in args.view:
        cam_path, _, target_path = pair.partition(":")
        if not target_path:
            raise UsageError("--view expects CAMERA.json:TARGETS.legf")
        cam = _load_camera(cam_path)
        grid = read_legf(Path(target_path).read_bytes())
        if grid.shape[2] != 1:
            raise ValueError("target map must have depth 1")
        views.append((cam, np.rint(grid[:, :, 0]).astype(np.int64)))
    cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        feature_dim=args.feature_dim,
    )
    result = train_semantics(scene, views, args.k, cfg)
    Path(args.out_scene).write_text(scene_to_json(result.scene), encoding="utf-8")
    _write_model(args.out_model, result.decoder, result.smoother)
    if args.loss_csv:
        Path(args.loss_csv).write_text(result.trace_csv(), encoding="utf-8")
    return 0


def _cmd_render(args) -> int:
    scene = _load_scene(args.scene)
    cam = _load_camera(args.camera)
    image = render_color(scene, cam, threads=args.threads)
    Path(args.out).write_bytes(write_ppm(image.pixels))
    return 0


def _cmd_query(args) -> int:
    try:
        ctx = PromptContext(
            mode=args.mode,
            road_type=args.road_type,
            weather=args.weather,
            time_of_day=args.time_of_day,
            object=args.object,
        )
    except ValueError as exc:  # flag combination problem, not bad data
        raise UsageError(str(exc)) from exc
    cfg = LlmClientConfig(
        endpoint=args.endpoint,
        model=args.model_name,
        timeout_s=args.timeout,
        retries=args.retries,
        stub_path=args.stub,
    )
    api_key = os.environ.get(cfg.api_key_env)
    spec, exchange = generate_query(cfg, ctx, api_key=api_key)
    doc = spec.to_json_dict()
    doc["latency_ms"] = exchange.latency_ms
    Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return 0


def _cmd_segment(args) -> int:
    scene = _load_scene(args.scene)
    decoder, _ = _load_model(args.model)
    cam = _load_camera(args.camera)
    table, codebook = read_embedding_table(Path(args.table).read_text(encoding="utf-8"))
    if codebook is None:
        raise ValueError("embedding table file carries no codebook; run quantize first")
    doc = _read_json(args.query)
    spec = QuerySpec.from_json_dict(doc)
    distribution = render_semantic_distribution(scene, cam, decoder, threads=args.threads)
    fmap = feature_map(distribution, codebook)
    rmap = score_query(fmap, spec, table)
    mask = segment(rmap, args.threshold)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.relevancy.legf").write_bytes(write_legf(rmap.scores[:, :, None]))
    Path(f"{prefix}.relevancy.pgm").write_bytes(write_pgm(rmap.scores))
    Path(f"{prefix}.mask.pgm").write_bytes(write_pgm(mask.mask))
    if args.out_distribution:
        Path(args.out_distribution).write_bytes(write_legf(distribution.values))
    return 0


def _cmd_eval(args) -> int:
    manifest = _read_json(args.manifest)
    classes = []
    for entry in manifest["classes"]:
        pred_arr = read_pgm(Path(entry["pred_mask"]).read_bytes()) > 127
        gt_arr = read_pgm(Path(entry["gt_mask"]).read_bytes()) > 127
        scores = read_legf(Path(entry["scores"]).read_bytes())[:, :, 0].astype(np.float64)
        h, w = pred_arr.shape
        classes.append(
            ClassEval(
                name=entry["name"],
                pred=SegMask(width=w, height=h, mask=pred_arr),
                scores=scores,
                gt=SegMask(width=gt_arr.shape[1], height=gt_arr.shape[0], mask=gt_arr),
            )
        )
    report = evaluate(classes)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(report.to_json())
    return 0


def _cmd_bench(args) -> int:
    results = [
        bench_mod.run_benchmark(
            args.seed + i, epochs=args.epochs, learning_rate=args.lr, threshold=args.threshold
        )
        for i in range(args.seeds)
    ]
    doc = {"base_seed": args.seed, "runs": [r.summary_dict() for r in results]}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")

    header = f"{'inference method':<24}{'Accuracy':>10}{'Precision':>11}{'mIoU':>8}{'mAP':>8}"
    print(header)
    print("-" * len(header))
    labels = {
        "predefined": "Predefined canonicals",
        "no_helping": "Ours w/o helping",
        "full": "Ours",
    }
    for variant in ("predefined", "no_helping", "full"):
        rows = [r.reports[variant] for r in results]
        acc = np.mean([r.accuracy for r in rows])
        prec = np.mean([r.precision for r in rows])
        miou = np.mean([r.miou for r in rows])
        mean_ap = np.mean([r.map for r in rows])
        print(f"{labels[variant]:<24}{acc:>10.3f}{prec:>11.3f}{miou:>8.3f}{mean_ap:>8.3f}")
    return 0


# --- parser wiring ------------------------------------------------------------


def _build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="lesplat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, _Parser] = {}

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key=value file of flag defaults")
        registry[name] = p
        return p

    p = add("synth", _cmd_synth, "synthesize a labeled scene")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-scene", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--camera")
    p.add_argument("--out-targets")
    p.add_argument("--coverage", type=float, default=0.4)

    p = add("quantize", _cmd_quantize, "build a codebook from an embedding table")
    p.add_argument("--table", required=True)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("train", _cmd_train, "train semantic features against target maps")
    p.add_argument("--scene", required=True)
    p.add_argument("--view", action="append", required=True,
                   metavar="CAMERA.json:TARGETS.legf")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--out-scene", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--loss-csv")

    p = add("render", _cmd_render, "render a color image")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = add("query", _cmd_query, "generate a query spec via LLM or stub")
    p.add_argument("--mode", choices=("attention", "object"), default="object")
    p.add_argument("--road-type", default="")
    p.add_argument("--weather", default="")
    p.add_argument("--time-of-day", default="")
    p.add_argument("--object", default="")
    p.add_argument("--stub", help="fixture file; runs fully offline")
    p.add_argument("--endpoint", default="https://api.openai.com/v1/chat/completions")
    p.add_argument("--model-name", default="gpt-3.5-turbo")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--out", required=True)

    p = add("segment", _cmd_segment, "score a query against a trained scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--out-distribution", help="also write the index-distribution LEGF")

    p = add("eval", _cmd_eval, "compute metrics from masks and scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("bench", _cmd_bench, "run the synthetic benchmark comparison")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=8.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")

    return parser, registry


def _apply_config_defaults(subparsers, argv):
    """Pre-scan for --config and install its key=value pairs as defaults."""
    if "--config" not in argv:
        return
    index = argv.index("--config") + 1
    if index >= len(argv):
        raise UsageError("--config expects a file path")
    path = argv[index]
    overrides = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        overrides[key.strip().replace("-", "_")] = value.strip()
    for action_parser in subparsers.values():
        known = {a.dest: a for a in action_parser._actions}
        defaults = {}
        for key, value in overrides.items():
            if key in known:
                a = known[key]
                defaults[key] = a.type(value) if a.type else value
        action_parser.set_defaults(**defaults)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        _apply_config_defaults(subparsers, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (TransportError, ProtocolError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(run())
