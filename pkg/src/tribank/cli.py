"""Text, object and patch memory-bank anomaly scoring from the command line.

Exit codes: 0 success, 2 input-format error, 3 config error, 4 evaluation undefined.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, EngineConfig, FusionConfig, load_config
from .core import FormatError, encode_pgm, encode_raster
from .fusion import UndefinedMetricError, evaluate
from .io import _safe_name, ingest_dataset, load_bank_file, save_bank_file, write_dataset
from .pipeline import build_banks, score_query
from .synth import ANOMALY_KINDS, WorldSpec, generate_suite

EXIT_FORMAT, EXIT_CONFIG, EXIT_UNDEFINED = 2, 3, 4


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "fusion", None):
        out["fusion"] = FusionConfig.parse(args.fusion)
    for flag, key in (("k_object", "k_object"), ("k_patch", "k_patch"), ("seed", "seed")):
        if getattr(args, flag, None) is not None:
            out[key] = getattr(args, flag)
    if getattr(args, "bank_resolution", None) is not None:
        out["bank_resolution"] = (args.bank_resolution, args.bank_resolution)
    if getattr(args, "relaxed", False):
        out["relaxed"] = True
    return out


def _query_config(args, banks) -> EngineConfig:
    if args.config:
        return load_config(args.config, **_overrides(args))
    return banks.config.with_overrides(**_overrides(args))


def _write_maps(directory: Path, scores) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("text", "object", "patch", "pixel"):
        smap = getattr(scores, f"{name}_map")
        (directory / f"{name}.tmsf").write_bytes(encode_raster(smap))
    (directory / "pixel.pgm").write_bytes(encode_pgm(scores.pixel_map))


def cmd_build_bank(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    out = args.out or cfg.bank_path
    if not out:
        raise ConfigError("no output path: pass --out or set bank_path in the config")
    scenes = ingest_dataset(args.input)
    try:
        banks = build_banks(scenes, replace(cfg, bank_path=None))
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    save_bank_file(banks, out)
    print(f"wrote bank for {len(scenes)} normal images "
          f"({', '.join(banks.categories)}) to {out}")
    return 0


def cmd_score(args) -> int:
    banks = load_bank_file(args.bank)
    cfg = _query_config(args, banks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for q in ingest_dataset(args.query_dir):
        try:
            sc = score_query(banks, q, cfg.fusion, cfg.relaxed)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"query {q.image_id!r}: {exc}") from None
        qdir = out / _safe_name(q.image_id)
        _write_maps(qdir, sc)
        (qdir / "match.json").write_text(
            json.dumps(sc.match.to_dict(), indent=2, sort_keys=True) + "\n")
        summary.append({"image_id": q.image_id, "category": q.category,
                        "s_image": sc.image_score, "dir": qdir.name})
    (out / "scores.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"scored {len(summary)} queries into {out}")
    return 0


def cmd_eval(args) -> int:
    banks = load_bank_file(args.bank)
    cfg = _query_config(args, banks)
    queries = ingest_dataset(args.test_dir)
    try:
        report = evaluate(banks, queries, cfg.fusion, cfg.relaxed)
    except UndefinedMetricError:
        raise
    except (KeyError, ValueError) as exc:
        raise FormatError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.csv").write_text(report.to_csv())
    if args.write_maps:
        for q in queries:
            _write_maps(out / "maps" / _safe_name(q.image_id),
                        score_query(banks, q, cfg.fusion, cfg.relaxed))
    px = "n/a" if report.pixel_auroc is None else f"{report.pixel_auroc:.4f}"
    print(f"image AUROC {report.image_auroc:.4f}  pixel AUROC {px}")
    return 0


def cmd_synth_gen(args) -> int:
    spec = WorldSpec()
    if args.spec:
        try:
            spec = WorldSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"{args.spec}: bad world spec ({exc})") from None
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    n_test = args.n_normal if args.n_test_normal is None else args.n_test_normal
    kinds = tuple(args.kinds.split(",")) if args.kinds else ANOMALY_KINDS
    bad = set(kinds) - set(ANOMALY_KINDS)
    if bad:
        raise ConfigError(f"unknown anomaly kinds {sorted(bad)}")
    train, test = generate_suite(spec, args.n_normal, n_test, args.n_anomalous_per_kind, kinds)
    out = Path(args.out)
    write_dataset(train, out / "train")
    write_dataset(test, out / "test")
    (out / "world.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    print(f"wrote {len(train)} training and {len(test)} test scenes to {out}")
    return 0


def _add_config_flags(p, query=False):
    p.add_argument("--config", help="JSON engine config (default: $TRIBANK_CONFIG)")
    p.add_argument("--fusion", help="preset name or 'text,object,patch' weights")
    p.add_argument("--relaxed", action="store_true", help="match class presence only")
    if not query:
        p.add_argument("--k-object", type=int, dest="k_object")
        p.add_argument("--k-patch", type=int, dest="k_patch")
        p.add_argument("--seed", type=int)
        p.add_argument("--bank-resolution", type=int, dest="bank_resolution")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tribank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-bank", help="build the three memory banks from normal images")
    p.add_argument("--input", required=True, help="dataset root with manifest.json")
    p.add_argument("--out", help="bank container path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("score", help="write anomaly maps and match reports for queries")
    p.add_argument("--bank", required=True)
    p.add_argument("--query-dir", required=True, dest="query_dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p, query=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC report over a labeled test set")
    p.add_argument("--bank", required=True)
    p.add_argument("--test-dir", required=True, dest="test_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--write-maps", action="store_true", dest="write_maps")
    _add_config_flags(p, query=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-gen", help="write a synthetic train/test dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="world spec JSON")
    p.add_argument("--n-normal", type=int, default=200, dest="n_normal")
    p.add_argument("--n-test-normal", type=int, dest="n_test_normal")
    p.add_argument("--n-anomalous-per-kind", type=int, default=25, dest="n_anomalous_per_kind")
    p.add_argument("--kinds", help="comma-separated subset of " + ",".join(ANOMALY_KINDS))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"tribank: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as exc:
        print(f"tribank: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UndefinedMetricError as exc:
        print(f"tribank: evaluation undefined: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED


if __name__ == "__main__":
    sys.exit(main())
