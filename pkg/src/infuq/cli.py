"""Command line entry point: ``infuq run <config>`` and ``infuq validate <config>``.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from threadpoolctl import threadpool_limits

from . import __version__
from .config import ExperimentConfig, load_config, serialize_config
from .errors import ConfigError, NumericalError
from .experiments import EXPERIMENTS
from .io import emit_csv, write_json_atomic

log = logging.getLogger("infuq")

OUTPUT_DIR_ENV = "INFUQ_OUTPUT_DIR"
MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    config: dict
    config_text: str
    library_version: str
    stage_seconds: dict
    jitters: dict
    outputs: list[str]
    blas_threads: int = 1
    summary: dict = field(default_factory=dict)
    total_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "config_text": self.config_text,
            "library_version": self.library_version,
            "stage_seconds": self.stage_seconds,
            "jitters": self.jitters,
            "outputs": self.outputs,
            "blas_threads": self.blas_threads,
            "summary": self.summary,
            "total_seconds": self.total_seconds,
        }


def usable_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def blas_threads(requested: int) -> int:
    """Thread limit actually handed to BLAS.

    OpenBLAS sizes its buffers for the cores it saw at load time; raising the
    count past that later corrupts memory, so requests are capped.
    """
    limit = min(requested, usable_cpus())
    if limit < requested:
        log.warning("threads=%d capped to %d usable CPUs", requested, limit)
    return limit


def resolve_output_dir(cfg: ExperimentConfig, override: Optional[str] = None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_DIR_ENV, "runs")) / cfg.experiment


def run(cfg: ExperimentConfig, output_dir: Optional[Path] = None) -> RunManifest:
    """Execute one experiment and write its CSVs plus ``manifest.json``.

    Files are produced in a staging directory and moved into place only when
    the whole experiment succeeds, so a failed run leaves nothing behind.
    """
    out = Path(output_dir) if output_dir is not None else resolve_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    t0 = time.perf_counter()
    threads = blas_threads(cfg.threads)
    try:
        with threadpool_limits(limits=threads):
            result = EXPERIMENTS[cfg.experiment](cfg)
        names = []
        for name, table in result.tables.items():
            emit_csv(table.columns, table.rows, staging / name)
            names.append(name)
        for name in names:
            os.replace(staging / name, out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    manifest = RunManifest(
        config=cfg.as_dict(),
        config_text=serialize_config(cfg),
        library_version=__version__,
        stage_seconds=result.stage_seconds,
        jitters=result.jitters,
        outputs=names,
        blas_threads=threads,
        summary=result.summary,
        total_seconds=time.perf_counter() - t0,
    )
    write_json_atomic(manifest.as_dict(), out / MANIFEST_NAME)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infuq", description="Infinite-width uncertainty experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config", help="path to a key = value config file")
    r.add_argument("--output-dir", default=None,
                   help=f"output directory (default: config output_dir, then ${OUTPUT_DIR_ENV}/<experiment>)")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--threads", type=int, default=None, help="BLAS thread limit")

    v = sub.add_parser("validate", help="parse and validate a config file")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(serialize_config(cfg), end="")
            return 0
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if overrides:
            cfg = cfg.replace(**overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run(cfg, resolve_output_dir(cfg, args.output_dir))
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for name in manifest.outputs:
        log.info("wrote %s", name)
    for key, value in manifest.summary.items():
        print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
