"""Command-line runner.

    gspde --config run.toml --experiment cauchy [--seed N] [--paths N] [--out DIR]
    gspde --replay runs/cauchy/<hash>/manifest.json

Outputs go to ``<out>/<experiment>/<config-hash>/``: ``config.json`` (canonical,
hashed byte-for-byte), ``report.json``, ``tables.csv`` and ``manifest.json``;
``single-run`` also writes ``norms.csv`` and ``snapshots/step_*.gspf``.

Exit codes: 0 PASS, 1 FAIL (or replay drift), 2 configuration or precondition
error (or replay hash mismatch), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from gspde import __version__
from gspde.config import ConfigError, build_config, canonical_json, hash_text, load_toml, resolve
from gspde.experiments import EXPERIMENTS, RUNNERS, ExperimentConfig, PreconditionError, run_single
from gspde.io import atomic_write_json, atomic_write_text, norms_csv, table_csv, write_snapshot

log = logging.getLogger("gspde")

ALL_EXPERIMENTS = EXPERIMENTS + ("single-run",)
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gspde", description="Stochastic Navier-Stokes Galerkin experiments.")
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--experiment", choices=ALL_EXPERIMENTS, help="experiment to run")
    p.add_argument("--seed", type=_u64, help="master seed (overrides noise.seed)")
    p.add_argument("--paths", type=_positive, help="Monte-Carlo paths (overrides experiment.paths)")
    p.add_argument("--out", type=Path, help="output root (overrides experiment.output_dir)")
    p.add_argument("--replay", type=Path, metavar="MANIFEST", help="re-run a stored run and compare report.json")
    p.add_argument("--version", action="version", version=f"gspde {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def execute(name: str, cfg: ExperimentConfig):
    """Run one experiment; returns ``(report, extra_files)`` where extra files map names to writers."""
    if name == "single-run":
        rep, rec = run_single(cfg)
        extras = {"norms.csv": lambda p: atomic_write_text(p, norms_csv(rec.times, rec.norm_series))}
        for step, f in zip(rec.snapshot_steps or [], rec.fields or []):
            extras[f"snapshots/step_{step:07d}.gspf"] = lambda p, f=f: write_snapshot(p, f)
        return rep, extras
    return RUNNERS[name](cfg), {}


def run(name: str, resolved: dict) -> int:
    """Build, run and persist one experiment; returns the exit code."""
    started = _now()
    text = canonical_json(resolved)
    digest = hash_text(text)
    outdir = Path(resolved["experiment"]["output_dir"]) / name / digest
    outdir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(outdir / "config.json", text)
    manifest = {
        "tool": "gspde",
        "version": __version__,
        "experiment": name,
        "config_hash": digest,
        "config": "config.json",
        "master_seed": resolved["noise"]["seed"],
        "started": started,
    }
    try:
        cfg = build_config(resolved)
        manifest["seeds"] = cfg.seeds()
        rep, extras = execute(name, cfg)
    except (ConfigError, PreconditionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
        manifest.update(finished=_now(), exit_status=code, error=str(exc), outputs={})
        atomic_write_json(outdir / "manifest.json", manifest)
        return code
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_RUNTIME
        manifest.update(finished=_now(), exit_status=code, error=str(exc), outputs={})
        atomic_write_json(outdir / "manifest.json", manifest)
        return code

    outputs = {"config": "config.json", "report": "report.json", "tables": "tables.csv"}
    atomic_write_text(outdir / "report.json", rep.to_json())
    atomic_write_text(outdir / "tables.csv", table_csv(rep.cells, rep.table_columns()))
    for rel, writer in extras.items():
        writer(outdir / rel)
        outputs[rel] = rel
    code = EXIT_PASS if rep.passed else EXIT_FAIL
    if name == "single-run":
        manifest["seeds"] = rep.provenance["seeds"]
    manifest.update(finished=_now(), exit_status=code, passed=rep.passed, outputs=outputs)
    atomic_write_json(outdir / "manifest.json", manifest)
    print(rep.text())
    print(f"outputs: {outdir}")
    return code


def _first_difference(a, b, path: str = "") -> str | None:
    if type(a) is not type(b):
        return path or "<root>"
    if isinstance(a, dict):
        for k in sorted(set(a) | set(b)):
            if k not in a or k not in b:
                return f"{path}.{k}".lstrip(".")
            d = _first_difference(a[k], b[k], f"{path}.{k}")
            if d:
                return d.lstrip(".")
        return None
    if isinstance(a, list):
        for i, (x, y) in enumerate(zip(a, b)):
            d = _first_difference(x, y, f"{path}[{i}]")
            if d:
                return d
        return None if len(a) == len(b) else f"{path}[{min(len(a), len(b))}]"
    return None if a == b else (path.lstrip(".") or "<root>")


def replay(manifest_path: Path) -> int:
    """Re-run a stored experiment and require a bitwise-identical ``report.json``."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        outdir = Path(manifest_path).parent
        text = (outdir / manifest["config"]).read_text()
        stored = (outdir / "report.json").read_bytes()
        name = manifest["experiment"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: cannot load run from {manifest_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if hash_text(text) != manifest["config_hash"]:
        print(
            f"error: config hash mismatch: manifest {manifest['config_hash']}, config.json {hash_text(text)}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    try:
        cfg = build_config(resolve(json.loads(text)))
        rep, _ = execute(name, cfg)
    except (ConfigError, PreconditionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    fresh = rep.to_json().encode()
    if fresh == stored:
        print(f"replay identical: {name} {manifest['config_hash']}")
        return EXIT_PASS
    where = _first_difference(json.loads(stored), json.loads(fresh)) or "<formatting>"
    print(f"replay drift: {name}: first differing field {where}", file=sys.stderr)
    return EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.replay is not None:
        if args.config or args.experiment:
            print("error: --replay takes no --config or --experiment", file=sys.stderr)
            return EXIT_CONFIG
        return replay(args.replay)
    if args.config is None or args.experiment is None:
        print("error: --config and --experiment are required (or use --replay)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        resolved = resolve(
            load_toml(args.config),
            seed=args.seed,
            paths=args.paths,
            out=str(args.out) if args.out is not None else None,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"resolved config:\n{canonical_json(resolved)}", file=sys.stderr, end="")
    return run(args.experiment, resolved)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
