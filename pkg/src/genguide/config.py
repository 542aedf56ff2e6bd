"""JSON run configuration.

Paths inside the document are resolved relative to the config file.
Example::

    {
      "generator": {"references": ["a.pdb", "b.pdb"], "weights": [0.5, 0.5],
                    "sigma": 0.15, "decode_scale": 10.0},
      "ga": {"total_cycles": 50, "seed": 1, "prior_fraction": 1.0,
             "scheduler": {"kind": "stepped_index"}},
      "scorer": {"kind": "pairwise", "file": "targets.csv", "mode": "l1"},
      "prior_pdb": "b.pdb",
      "output_dir": "out"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError, GenGuideError
from .ga import GAConfig, SchedulerSpec
from .generator import Generator, GeneratorConfig, NoiseSchedule, mixture_from_structures
from .restraints import load_pairwise_csv, load_restraints, load_shift_csv
from .scorers import (
    ExternalShiftPredictor,
    LossMode,
    NoeScorer,
    PairwiseScorer,
    ShiftScorer,
    synthetic_shift_predict,
)
from .structure import Structure, parse_pdb

_GENERATOR_KEYS = {
    "references", "weights", "sigma", "decode_scale", "ode_steps_per_index", "n_indices",
    "seed", "resample_mode", "sde_steps", "alpha_bar_end", "center",
}
_SCORER_KINDS = ("pairwise", "noe", "shifts")


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    generator: GeneratorConfig
    ga: GAConfig
    scorer_spec: dict
    references: list[Structure]
    prior: Structure | None
    output_dir: Path

    def build_generator(self) -> Generator:
        return Generator(self.generator)

    def build_scorer(self):
        return build_scorer(self.scorer_spec, self.base_dir, "scorer", self.references[0])


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}" if path else key, "required field missing")
    return mapping[key]


def _path(base: Path, value: Any, field_path: str, must_exist: bool = True) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(field_path, "expected a path string")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(field_path, f"file not found: {p}")
    return p


def _load_pdb(base: Path, value, field_path: str) -> Structure:
    p = _path(base, value, field_path)
    try:
        return parse_pdb(p.read_text(encoding="utf-8"))
    except GenGuideError as exc:
        raise ConfigError(field_path, str(exc)) from None


def _build(cls, values: dict, path: str, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def parse_generator(section: dict, base: Path) -> tuple[GeneratorConfig, list[Structure]]:
    unknown = set(section) - _GENERATOR_KEYS
    if unknown:
        raise ConfigError(f"generator.{sorted(unknown)[0]}", "unknown field")
    refs = _require(section, "references", "generator")
    if not isinstance(refs, list) or not refs:
        raise ConfigError("generator.references", "expected a non-empty list of PDB paths")
    structures = [_load_pdb(base, r, f"generator.references[{i}]") for i, r in enumerate(refs)]
    decode_scale = float(section.get("decode_scale", 10.0))
    try:
        prior, center = mixture_from_structures(
            structures,
            section.get("weights"),
            section.get("sigma", 0.15),
            decode_scale,
            section.get("center"),
        )
        schedule = NoiseSchedule(
            n_indices=int(section.get("n_indices", 50)),
            alpha_bar_end=float(section.get("alpha_bar_end", 1e-4)),
        )
        cfg = GeneratorConfig(
            schedule=schedule,
            prior=prior,
            ode_steps_per_index=int(section.get("ode_steps_per_index", 6)),
            seed=int(section.get("seed", 0)),
            decode_scale=decode_scale,
            center=center,
            residue_types=structures[0].residue_types,
            resample_mode=section.get("resample_mode", "forward"),
            sde_steps=int(section.get("sde_steps", 1000)),
        )
    except (GenGuideError, ValueError, TypeError) as exc:
        raise ConfigError("generator", str(exc)) from None
    return cfg, structures


def parse_ga(section: dict) -> GAConfig:
    section = dict(section)
    sched = section.pop("scheduler", {})
    if not isinstance(sched, dict):
        raise ConfigError("ga.scheduler", "expected an object")
    scheduler = _build(SchedulerSpec, sched, "ga.scheduler")
    return _build(GAConfig, section, "ga", scheduler=scheduler)


def build_scorer(spec: dict, base: Path, path: str = "scorer", residue_map_source: Structure | None = None):
    """Construct a scorer from a ``{"kind": ...}`` object."""
    kind = _require(spec, "kind", path)
    if kind not in _SCORER_KINDS:
        raise ConfigError(f"{path}.kind", f"expected one of {_SCORER_KINDS}, got {kind!r}")
    file_path = _path(base, _require(spec, "file", path), f"{path}.file")
    try:
        if kind == "pairwise":
            mode = LossMode(spec.get("mode", "l1"), spec.get("k"))
            return PairwiseScorer(load_pairwise_csv(file_path.read_text(encoding="utf-8")), mode)
        if kind == "noe":
            residue_map = None
            if spec.get("author_numbering", True) and residue_map_source is not None:
                residue_map = residue_map_source.author_to_internal
            return NoeScorer(load_restraints(file_path, residue_map))
        mode = LossMode(spec.get("mode", "l1"))
        predictor_spec = spec.get("predictor", "builtin")
        if predictor_spec == "builtin":
            predictor = synthetic_shift_predict
        elif isinstance(predictor_spec, (list, str)):
            predictor = ExternalShiftPredictor(predictor_spec, float(spec.get("timeout", 300.0)))
        else:
            raise ConfigError(f"{path}.predictor", "expected 'builtin' or a command")
        atom_filter = spec.get("atom_filter", ["CA"])
        return ShiftScorer(load_shift_csv(file_path.read_text(encoding="utf-8")), predictor, mode, atom_filter)
    except ConfigError:
        raise
    except (GenGuideError, ValueError) as exc:
        raise ConfigError(f"{path}.file", str(exc)) from None


def load_run_config(path, seed: int | None = None, output_dir=None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    base = path.resolve().parent
    if seed is not None:
        raw.setdefault("ga", {})["seed"] = seed
        raw.setdefault("generator", {})["seed"] = seed
    gen_cfg, refs = parse_generator(_require(raw, "generator", ""), base)
    ga_cfg = parse_ga(raw.get("ga", {}))
    scorer_spec = _require(raw, "scorer", "")
    if not isinstance(scorer_spec, dict):
        raise ConfigError("scorer", "expected exactly one scorer object")
    # Validate the scorer (and its data files) now rather than mid-run.
    build_scorer(scorer_spec, base, "scorer", refs[0])
    prior = None
    if raw.get("prior_pdb") is not None:
        prior = _load_pdb(base, raw["prior_pdb"], "prior_pdb")
        if prior.n_residues != refs[0].n_residues:
            raise ConfigError("prior_pdb", "residue count differs from the references")
    out = output_dir if output_dir is not None else raw.get("output_dir", "out")
    out_path = Path(out)
    if not out_path.is_absolute():
        out_path = (Path.cwd() / out_path) if output_dir is not None else base / out_path
    return RunConfig(raw, base, gen_cfg, ga_cfg, scorer_spec, refs, prior, out_path)
