"""Genetic search over generator latents.

Each cycle scores the population, keeps the best ``elite_keep``
candidates unchanged, fills the rest of the next generation with one child
per tournament-selected parent, and produces each child by swapping a
single residue row of the parent's time-``t_k`` latent with a stochastic
resample before decoding back to ``t = 0``.  There is no crossover.

Losses are minimized throughout.  Every random draw comes from a stream
keyed by ``(seed, purpose, cycle, candidate)``, so results do not depend on
how many threads evaluate the scorer.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GenGuideError, RunAborted, ShapeMismatch
from .generator import Generator
from .structure import Structure

log = logging.getLogger(__name__)

Scorer = Callable[[Structure], float]

_STREAM_INIT = 0
_STREAM_SELECT = 1
_STREAM_CHILD = 2


def rng_stream(seed: int, purpose: int, cycle: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, cycle, index)))


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str = "stepped_index"
    t_min: float = 0.2
    t_max: float = 1.0
    start_index: int = 0
    cap_index: int = 40
    cycles_per_step: int = 4

    def __post_init__(self):
        if self.kind not in ("stepped_index", "linear_time"):
            raise ValueError(f"unknown scheduler kind {self.kind!r}")
        if not 0.0 <= self.t_min <= self.t_max <= 1.0:
            raise ValueError("need 0 <= t_min <= t_max <= 1")
        if self.cycles_per_step < 1 or self.start_index < 0 or self.cap_index < self.start_index:
            raise ValueError("invalid stepped-index parameters")


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 100
    elite_keep: int = 5
    tournament_size: int = 5
    total_cycles: int = 250
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    seed: int = 0
    prior_fraction: float = 0.5
    max_failure_fraction: float = 0.5
    crossover: bool = False

    def __post_init__(self):
        if self.crossover:
            raise ValueError("crossover is not supported")
        if not 0 <= self.elite_keep < self.population_size:
            raise ValueError("elite_keep must be smaller than population_size")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in 1..population_size")
        if self.total_cycles < 1:
            raise ValueError("total_cycles must be >= 1")
        if not 0.0 <= self.prior_fraction <= 1.0:
            raise ValueError("prior_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class Provenance:
    kind: str  # "initial" or "child"
    parent_id: int | None = None
    residue: int | None = None
    cycle: int | None = None


@dataclass
class Candidate:
    id: int
    structure: Structure
    latent: np.ndarray
    latent_time: float
    seed_latent: np.ndarray
    provenance: Provenance
    score: float | None = None


@dataclass(frozen=True)
class TraceRow:
    cycle: int
    index: float
    t: float
    best_loss: float
    mean_loss: float
    best_id: int


@dataclass
class RunResult:
    trace: list[TraceRow]
    population: list[Candidate]
    elapsed: float

    @property
    def best(self) -> Candidate:
        return self.population[0]


def scheduler_time(spec: SchedulerSpec, k: int, total_cycles: int, n_indices: int = 50) -> tuple[float, float]:
    """Perturbation ``(time, index)`` for cycle ``k``."""
    if spec.kind == "linear_time":
        t = spec.t_max - (k / total_cycles) * (spec.t_max - spec.t_min)
        return t, n_indices * (1.0 - t)
    if spec.cap_index > n_indices:
        raise ValueError(f"cap_index {spec.cap_index} exceeds n_indices {n_indices}")
    index = min(spec.cap_index, spec.start_index + k // spec.cycles_per_step)
    return 1.0 - index / n_indices, index


def _rank_key(c: Candidate):
    return (c.score, c.id)


def select_parents(population: Sequence[Candidate], cfg: GAConfig, rng: np.random.Generator):
    """Return ``(elites, parents)``; parents come from independent tournaments."""
    ranked = sorted(population, key=_rank_key)
    elites = ranked[: cfg.elite_keep]
    n = len(population)
    parents = []
    for _ in range(cfg.population_size - cfg.elite_keep):
        picks = rng.integers(0, n, size=cfg.tournament_size)
        parents.append(min((population[i] for i in picks), key=_rank_key))
    return elites, parents


def perturb_batch(
    parents: Sequence[Candidate],
    t_k: float,
    gen: Generator,
    rngs: Sequence[np.random.Generator],
    cycle: int,
    first_id: int,
) -> list[Candidate]:
    if not parents:
        return []
    z0 = np.stack([gen.whiten(p.structure) for p in parents])
    z_t = gen.invert_array(z0, t_k)
    rows = []
    for i, rng in enumerate(rngs):
        z_hat = gen.resample_array(z0[i], t_k, rng)
        a = int(rng.integers(0, gen.n_residues))
        z_t[i, a] = z_hat[a]
        rows.append(a)
    x0 = gen.decode_array(z_t, t_k)
    return [
        Candidate(
            id=first_id + i,
            structure=gen.to_structure(x0[i]),
            latent=z_t[i],
            latent_time=t_k,
            seed_latent=p.seed_latent,
            provenance=Provenance("child", p.id, rows[i] + 1, cycle),
        )
        for i, p in enumerate(parents)
    ]


def perturb(parent: Candidate, t_k: float, gen: Generator, rng: np.random.Generator,
            cycle: int = 0, child_id: int = 0) -> Candidate:
    return perturb_batch([parent], t_k, gen, [rng], cycle, child_id)[0]


def init_population(
    cfg: GAConfig,
    gen: Generator,
    prior_structure: Structure | None = None,
    scorer: Scorer | None = None,
    jobs: int = 1,
) -> list[Candidate]:
    """Initial candidates decoded from ``t = 1``.

    With ``prior_structure`` the first ``round(prior_fraction * P)``
    candidates start from its inversion at ``t = 1``; the rest from noise.
    """
    p = cfg.population_size
    n_prior = 0
    z_prior = None
    if prior_structure is not None:
        if prior_structure.n_residues != gen.n_residues:
            raise ShapeMismatch(
                f"prior has {prior_structure.n_residues} residues, generator expects {gen.n_residues}"
            )
        n_prior = int(round(cfg.prior_fraction * p))
        z_prior = gen.invert(prior_structure, 1.0).values
    seeds = []
    for i in range(p):
        if i < n_prior:
            seeds.append(np.array(z_prior))
        else:
            seeds.append(gen.sample_prior_noise(rng_stream(cfg.seed, _STREAM_INIT, 0, i)))
    z_T = np.stack(seeds)
    x0 = gen.decode_array(z_T, 1.0)
    population = [
        Candidate(i, gen.to_structure(x0[i]), z_T[i], 1.0, z_T[i], Provenance("initial"))
        for i in range(p)
    ]
    if scorer is not None:
        evaluate(population, scorer, jobs, cfg.max_failure_fraction)
    return population


def _safe_score(scorer: Scorer, s: Structure) -> float:
    try:
        value = float(scorer(s))
    except GenGuideError as exc:
        log.debug("scoring failed: %s", exc)
        return math.inf
    return value if math.isfinite(value) else math.inf


def evaluate(candidates: Sequence[Candidate], scorer: Scorer, jobs: int = 1,
             max_failure_fraction: float = 0.5) -> None:
    """Score every unscored candidate in place; failures count as +inf."""
    pending = [c for c in candidates if c.score is None]
    if not pending:
        return
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(lambda c: _safe_score(scorer, c.structure), pending))
    else:
        scores = [_safe_score(scorer, c.structure) for c in pending]
    failed = 0
    for c, s in zip(pending, scores):
        c.score = s
        failed += math.isinf(s)
    if failed > max_failure_fraction * len(pending):
        raise RunAborted(f"{failed} of {len(pending)} candidates failed scoring")


def _trace_row(population: Sequence[Candidate], k: int, t: float, index: float) -> TraceRow:
    best = min(population, key=_rank_key)
    finite = [c.score for c in population if math.isfinite(c.score)]
    mean = math.fsum(finite) / len(finite) if finite else math.inf
    return TraceRow(k, index, t, best.score, mean, best.id)


def run(
    cfg: GAConfig,
    gen: Generator,
    scorer: Scorer,
    on_cycle: Callable[[TraceRow], None] | None = None,
    prior_structure: Structure | None = None,
    jobs: int = 1,
) -> RunResult:
    """Run ``total_cycles`` generations and return the trace and final population.

    The trace has ``total_cycles + 1`` rows: the scored population of every
    cycle ``0..K``.  The population reached at cycle ``K`` is final, so no
    children are produced after it.
    """
    started = time.perf_counter()
    n_indices = gen.schedule.n_indices
    population = init_population(cfg, gen, prior_structure)
    next_id = len(population)
    trace: list[TraceRow] = []
    for k in range(cfg.total_cycles + 1):
        evaluate(population, scorer, jobs, cfg.max_failure_fraction)
        t_k, index = scheduler_time(cfg.scheduler, k, cfg.total_cycles, n_indices)
        row = _trace_row(population, k, t_k, index)
        trace.append(row)
        if on_cycle is not None:
            on_cycle(row)
        log.info("cycle %d index %s best %.6g mean %.6g", k, index, row.best_loss, row.mean_loss)
        if k == cfg.total_cycles:
            break
        elites, parents = select_parents(population, cfg, rng_stream(cfg.seed, _STREAM_SELECT, k))
        rngs = [rng_stream(cfg.seed, _STREAM_CHILD, k, i) for i in range(len(parents))]
        children = perturb_batch(parents, t_k, gen, rngs, k, next_id)
        next_id += len(children)
        population = list(elites) + children
    ranked = sorted(population, key=_rank_key)
    return RunResult(trace, ranked, time.perf_counter() - started)


TRACE_HEADER = ["cycle", "index", "t", "best_loss", "mean_loss", "best_id"]


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def trace_to_csv(trace: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in trace:
        w.writerow([r.cycle, _num(r.index), _num(r.t), _num(r.best_loss), _num(r.mean_loss), r.best_id])
    return buf.getvalue()
