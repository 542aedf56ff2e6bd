"""Command-line entry point: ``genguide <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import build_scorer, load_run_config
from .errors import ConfigError, GenGuideError, RunAborted
from .evaluation import (
    NOE_COLUMNS,
    EcdfCurve,
    ecdf_table,
    format_csv,
    format_ecdf_csv,
    format_table,
    noe_row,
    trace_plotdata,
)
from .ga import run, trace_to_csv
from .restraints import (
    derive_pairwise_targets,
    extract_noe_groups,
    format_pairwise_csv,
    format_restraint_csv,
    load_restraints,
    parse_star,
)
from .scorers import NoeScorer, PairwiseScorer, ShiftScorer
from .structure import parse_pdb, write_pdb

log = logging.getLogger("genguide")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

REPORT_HEADER = "# losses are minimized; a score in the maximization sense is the negated loss\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _emit(text: str, out: str | None) -> None:
    if out:
        _write(Path(out), text)
    else:
        sys.stdout.write(text)


def _score_rows(scorer, structure, name: str) -> tuple[dict, list[str]]:
    if isinstance(scorer, NoeScorer):
        rep = scorer.report(structure)
        return {"structure": name, **noe_row(rep)}, ["structure", *NOE_COLUMNS]
    if isinstance(scorer, ShiftScorer):
        rep = scorer.report(structure)
        return ({"structure": name, "loss": rep.loss, "coverage": rep.coverage,
                 "matched": rep.n_matched}, ["structure", "loss", "coverage", "matched"])
    return {"structure": name, "loss": float(scorer(structure))}, ["structure", "loss"]


def cmd_run(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, output_dir=args.out)
    gen = cfg.build_generator()
    scorer = cfg.build_scorer()
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    result = run(cfg.ga, gen, scorer, prior_structure=cfg.prior, jobs=args.jobs)
    written = [_write(out / "trace.csv", trace_to_csv(result.trace))]
    pop_dir = out / "population"
    for rank, cand in enumerate(result.population):
        written.append(_write(pop_dir / f"rank_{rank:03d}.pdb", write_pdb(cand.structure)))

    final = result.trace[-1]
    summary = {"best_loss": final.best_loss, "mean_loss": final.mean_loss, "best_id": final.best_id}
    columns = ["best_loss", "mean_loss", "best_id"]
    if isinstance(scorer, NoeScorer):
        rep = scorer.report(result.best.structure)
        summary.update(noe_row(rep))
        columns += list(NOE_COLUMNS)
    written.append(_write(out / "summary.csv", format_csv([summary], columns)))
    sys.stdout.write(REPORT_HEADER + format_table([summary], columns))

    manifest = {
        "version": __version__,
        "config": cfg.raw,
        "config_path": str(Path(args.config).resolve()),
        "seed": cfg.ga.seed,
        "jobs": args.jobs,
        "started": started,
        "wall_clock_seconds": time.time() - started,
        "cycles": len(result.trace),
        "files": {str(p.relative_to(out)): _sha256(p) for p in written},
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _scorer_from_args(args, structure):
    base = Path.cwd()
    if args.config:
        cfg = load_run_config(args.config)
        return build_scorer(cfg.scorer_spec, cfg.base_dir, "scorer", structure)
    chosen = [k for k in ("pairwise", "noe", "shifts") if getattr(args, k)]
    if len(chosen) != 1:
        raise ConfigError("scorer", "give exactly one of --pairwise, --noe, --shifts or --config")
    kind = chosen[0]
    spec = {"kind": kind, "file": getattr(args, kind)}
    if kind in ("pairwise", "shifts"):
        spec["mode"] = args.mode
        if args.k is not None:
            spec["k"] = args.k
    if kind == "shifts":
        spec["predictor"] = "builtin" if args.predictor == "builtin" else args.predictor.split()
        spec["atom_filter"] = args.atoms.split(",") if args.atoms else None
    return build_scorer(spec, base, "scorer", structure)


def _read_structure(path: str):
    try:
        return parse_pdb(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("structure", f"file not found: {path}") from None


def cmd_score(args) -> int:
    structure = _read_structure(args.structure)
    scorer = _scorer_from_args(args, structure)
    row, columns = _score_rows(scorer, structure, Path(args.structure).name)
    sys.stdout.write(REPORT_HEADER + format_table([row], columns))
    if args.out:
        _write(Path(args.out), format_csv([row], columns))
    return EXIT_OK


def cmd_ecdf(args) -> int:
    curves = {}
    for p in args.structures:
        structure = _read_structure(p)
        residue_map = structure.author_to_internal if args.author_numbering else None
        scorer = NoeScorer(load_restraints(args.restraints, residue_map))
        curves[Path(p).name] = EcdfCurve(scorer.report(structure).violations)
    _emit(format_ecdf_csv(ecdf_table(curves)), args.out)
    return EXIT_OK


def cmd_extract(args) -> int:
    text = Path(args.star).read_text(encoding="utf-8")
    residue_map = _read_structure(args.pdb).author_to_internal if args.pdb else None
    groups = extract_noe_groups(parse_star(text), residue_map)
    _emit(format_restraint_csv(groups), args.out)
    log.info("extracted %d restraint groups", len(groups))
    return EXIT_OK


def cmd_derive(args) -> int:
    reference = _read_structure(args.reference)
    targets = derive_pairwise_targets(reference, args.cutoff, args.atom)
    _emit(format_pairwise_csv(targets), args.out)
    return EXIT_OK


def cmd_plotdata(args) -> int:
    text = Path(args.trace).read_text(encoding="utf-8")
    _emit(trace_plotdata(text), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genguide", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run genetic guidance from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="scoring threads")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="score one structure")
    p.add_argument("structure")
    p.add_argument("--config")
    p.add_argument("--pairwise")
    p.add_argument("--noe")
    p.add_argument("--shifts")
    p.add_argument("--mode", default="l1")
    p.add_argument("--k", type=int)
    p.add_argument("--predictor", default="builtin")
    p.add_argument("--atoms", default="CA", help="comma-separated atom filter for shifts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("extract-restraints", help="NOE restraint CSV from an NMR-STAR file")
    p.add_argument("star")
    p.add_argument("--pdb", help="remap author residue numbers through this structure")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("derive-pairwise", help="pairwise targets from a reference structure")
    p.add_argument("reference")
    p.add_argument("--cutoff", type=float, default=5.0)
    p.add_argument("--atom", default="CA")
    p.add_argument("--out")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("ecdf", help="cumulative NOE violation distributions")
    p.add_argument("structures", nargs="+")
    p.add_argument("--restraints", required=True)
    p.add_argument("--author-numbering", action="store_true",
                   help="remap STAR author residue numbers through each structure")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ecdf)

    p = sub.add_parser("trace-plotdata", help="best/mean series from a trace CSV")
    p.add_argument("trace")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RunAborted as exc:
        print(f"error: run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GenGuideError as exc:
        code = EXIT_RUNTIME if args.command == "run" else EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
