"""Command line: ``qrfsim {verify-algebra,run,presets,batch}``.

Exit codes: 0 ok, 1 check failure, 2 usage or config error, 3 resource error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import yaml

from . import __version__
from . import algebra as alg
from .numerics import ConfigurationError, ResourceError
from .qrf import LeakageError
from .scenario import (PRESETS, ConfigError, RunResult, ScenarioConfig, load_config, load_preset, parse_config,
                       preset_document, run_scenario, verify_algebra)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def _resolve(args) -> ScenarioConfig:
    if getattr(args, "preset", None) and args.config:
        raise ConfigError("give either --config or --preset, not both")
    if getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise ConfigError("--config or --preset is required")
    if getattr(args, "sigma_t", None) is not None:
        cfg = cfg.with_sigma_t(args.sigma_t)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def write_outputs(result: RunResult, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    name = result.config.name
    for suffix, text in sorted(result.data.items()):
        (out / f"{name}.{suffix}").write_text(text)
    (out / f"{name}.config.yaml").write_text(result.config.dump())
    path = out / f"{name}.manifest.json"
    path.write_text(_json(result.manifest()))
    return path


def cmd_verify_algebra(args) -> int:
    cfg = _resolve(args) if (args.config or args.preset) else None
    report = verify_algebra(cfg)
    text = alg.report_json(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify-algebra.json").write_text(text + "\n")
    print(text)
    return EXIT_OK if report["pass"] else EXIT_CHECK


def cmd_run(args) -> int:
    cfg = _resolve(args)
    result = run_scenario(cfg, args.max_mem)
    manifest = write_outputs(result, Path(args.out))
    for name, ok in sorted(result.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"manifest: {manifest}")
    return EXIT_OK if result.ok else EXIT_CHECK


def cmd_presets(args) -> int:
    if args.show:
        print(yaml.safe_dump(preset_document(args.show), sort_keys=True), end="")
        return EXIT_OK
    width = max(len(n) for n in PRESETS)
    for name, (desc, _) in PRESETS.items():
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def _batch_entries(path) -> tuple:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read batch document: {exc}", str(path)) from None
    if not isinstance(doc, dict) or set(doc) - {"scenarios", "workers"} or "scenarios" not in doc:
        raise ConfigError("batch document needs 'scenarios' (list) and optional 'workers'", str(path))
    base = Path(path).parent
    configs = []
    for i, item in enumerate(doc["scenarios"]):
        if not isinstance(item, dict) or len(item) != 1 or not ({"preset", "config"} & set(item)):
            raise ConfigError("each entry is {preset: NAME} or {config: PATH}", f"scenarios[{i}]")
        if "preset" in item:
            configs.append(load_preset(item["preset"]))
        else:
            p = Path(item["config"])
            configs.append(load_config(p if p.is_absolute() else base / p))
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names in a batch must be unique", "scenarios")
    workers = doc.get("workers", 2)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer", "workers")
    return configs, workers


def _run_one(cfg: ScenarioConfig, out: Path, max_mem) -> dict:
    try:
        result = run_scenario(cfg, max_mem)
    except (ResourceError, LeakageError) as exc:
        return {"name": cfg.name, "exit": EXIT_RESOURCE, "error": str(exc)}
    except ConfigurationError as exc:
        return {"name": cfg.name, "exit": EXIT_CONFIG, "error": str(exc)}
    write_outputs(result, out / cfg.name)
    return {"name": cfg.name, "exit": EXIT_OK if result.ok else EXIT_CHECK, "checks": result.checks}


def cmd_batch(args) -> int:
    if not args.config:
        raise ConfigError("batch needs --config pointing at a batch document")
    configs, workers = _batch_entries(args.config)
    if args.sigma_t is not None:
        configs = [c.with_sigma_t(args.sigma_t) if c.event is not None else c for c in configs]
    if args.seed is not None:
        configs = [c.with_seed(args.seed) for c in configs]
    out = Path(args.out)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda c: _run_one(c, out, args.max_mem), configs))
    out.mkdir(parents=True, exist_ok=True)
    (out / "batch.json").write_text(_json({"version": __version__, "results": results}))
    for r in results:
        status = {0: "PASS", 1: "FAIL", 2: "CONFIG-ERROR", 3: "RESOURCE-ERROR"}[r["exit"]]
        print(f"{status} {r['name']}" + (f": {r['error']}" if "error" in r else ""))
    return max(r["exit"] for r in results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrfsim", description="Relational quantum clocks in weak gravity.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default: Optional[str] = "qrfsim-out"):
        p.add_argument("--config", help="scenario document (YAML or JSON)")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--max-mem", type=float, default=None, metavar="MB", help="memory cap")
        p.add_argument("--sigma-t", type=float, default=None, help="override the event regularization width")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized checks")

    p = sub.add_parser("verify-algebra", help="constraint closure and conjugation tables")
    common(p, out_default=None)
    p.add_argument("--preset", help="use a bundled preset's algebra settings")
    p.set_defaults(func=cmd_verify_algebra)
    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--preset", help="bundled preset name (see 'presets')")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("presets", help="list bundled presets")
    p.add_argument("--show", metavar="NAME", help="print a preset document")
    p.set_defaults(func=cmd_presets)
    p = sub.add_parser("batch", help="run the scenarios of a batch document on worker threads")
    common(p)
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ResourceError, LeakageError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
