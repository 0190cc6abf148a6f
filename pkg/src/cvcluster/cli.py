"""Command-line interface: ``cvcluster --config run.cfg --out results``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import DEFAULT_WIRING, ClusterParams, validate_wiring
from .compiler import GOLDEN_CZ, golden_dir
from .config import ENV_PREFIX, RunConfig, load_config, schema_help
from .errors import ConfigError, CvClusterError
from .experiments import CSV_COLUMNS, RUNNERS, write_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4
MANIFEST = "manifest.json"
TIMESTAMP_FIELDS = ("started", "finished", "wall_clock_seconds")


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def golden_versions() -> dict:
    from .goldens import GOLDEN_ENCODER

    out = {}
    for name in (GOLDEN_CZ, GOLDEN_ENCODER):
        path = golden_dir() / name
        if path.is_file():
            data = json.loads(path.read_text())
            out[name] = {"version": data.get("version"), "sha256": sha256(path)}
        else:
            out[name] = None
    return out


def wiring_record(N: int) -> dict:
    validation = validate_wiring(ClusterParams(N=N, K=3 * N + 4, r=0.5))
    return {
        "config": DEFAULT_WIRING.as_dict(),
        "validated": validation.config == DEFAULT_WIRING,
        "equivalent_configs": [c.as_dict() for c in validation.equivalent],
    }


@dataclass
class RunResult:
    status: int
    out_dir: Path
    manifest: dict | None = None
    error: dict | None = None


def run(cfg: RunConfig) -> RunResult:
    """Execute the configured experiment and write artifacts plus manifest."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    outcome = RUNNERS[cfg.experiment](cfg, out_dir)
    finished = time.time()
    manifest = {
        "tool": "cvcluster",
        "tool_version": __version__,
        "numpy_version": np.__version__,
        "experiment": cfg.experiment,
        "config": cfg.snapshot(),
        "config_sources": dict(sorted(cfg.sources.items())),
        "wiring": wiring_record(cfg.N),
        "golden_tables": golden_versions(),
        "tomography_readout": "before-BS3",
        "angle_units": "radians",
        "csv_columns": CSV_COLUMNS[cfg.experiment],
        "summary": outcome.summary,
        **outcome.manifest,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.fromtimestamp(finished, timezone.utc).isoformat(),
        "wall_clock_seconds": finished - started,
        "files": {p.name: sha256(p) for p in sorted(outcome.files, key=lambda p: p.name)},
    }
    write_json(out_dir / MANIFEST, manifest)
    return RunResult(EXIT_OK, out_dir, manifest)


def verify_manifest(out_dir) -> dict:
    """Recompute every listed checksum; returns {file: matches}."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST).read_text())
    return {name: (out_dir / name).is_file() and sha256(out_dir / name) == digest for name, digest in manifest["files"].items()}


def error_report(exc: BaseException, status: int) -> dict:
    return {
        "status": status,
        "error": getattr(exc, "code", type(exc).__name__),
        "type": type(exc).__name__,
        "message": str(exc),
    }


def _emit_error(report: dict, out_dir: Path | None):
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            write_json(out_dir / "error.json", report)
        except OSError:
            pass


def build_parser() -> argparse.ArgumentParser:
    columns = "\n".join(
        f"  {exp}:\n" + "\n".join(f"    {name}: {cols}" for name, cols in files.items()) for exp, files in CSV_COLUMNS.items()
    )
    epilog = (
        f"config keys (key = value; '#' comments; override with {ENV_PREFIX}<KEY> env vars):\n{schema_help()}\n\n"
        f"CSV columns per experiment:\n{columns}\n\n"
        "exit status: 0 ok, 2 config-schema error, 3 numeric failure, 4 acceptance-check failure"
    )
    p = argparse.ArgumentParser(
        prog="cvcluster",
        description="Gaussian simulator of measurement-based computation on a temporal-mode optical cluster state.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", type=Path, help="key = value run configuration")
    p.add_argument("--experiment", help="experiment kind (overrides the config)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    p.add_argument("--shots", type=int, help="shots per readout quadrant (mc mode)")
    p.add_argument("--mode", choices=("det", "mc"), help="deterministic or sampled execution")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="sampling worker threads")
    p.add_argument("--check", action="store_true", help="run the acceptance suite and print a pass/fail matrix")
    p.add_argument("--quick", action="store_true", help="with --check: deterministic subset only")
    p.add_argument("--derive-goldens", action="store_true", help="re-derive golden tables before running")
    p.add_argument("--version", action="version", version=f"cvcluster {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out) if args.out else None
    try:
        if args.derive_goldens:
            from .goldens import write_goldens

            for path in write_goldens(golden_dir()):
                print(f"wrote {path}")
        if args.check:
            from .acceptance import format_report, run_suite

            results = run_suite(quick=args.quick)
            print(format_report(results))
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                write_json(out_dir / "acceptance.json", [r.to_json() for r in results])
            return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK
        if args.config is None and args.experiment is None:
            if args.derive_goldens:
                return EXIT_OK
            raise ConfigError("nothing to do: pass --config, --experiment, --check or --derive-goldens")
        overrides = {
            "experiment": args.experiment,
            "seed": args.seed,
            "shots": args.shots,
            "mode": args.mode,
            "out": args.out,
            "workers": args.workers,
        }
        cfg = load_config(args.config, overrides=overrides)
        out_dir = Path(cfg.out)
        result = run(cfg)
        print(json.dumps({"status": "ok", "out": str(result.out_dir), "files": sorted(result.manifest["files"])}))
        return result.status
    except ConfigError as exc:
        _emit_error(error_report(exc, EXIT_CONFIG), out_dir)
        return EXIT_CONFIG
    except (CvClusterError, ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _emit_error(error_report(exc, EXIT_NUMERIC), out_dir)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
