"""Idealized C-alpha traces and a two-state demo generator.

Conformation A is an alpha helix, conformation B an extended strand laid
alongside it, offset so every residue sits several angstroms away from its
counterpart.  Used for demos and the desk-scale guidance experiments.
"""

from __future__ import annotations

import numpy as np

from .generator import Generator, GeneratorConfig, NoiseSchedule, mixture_from_structures
from .structure import Structure

HELIX_RADIUS = 2.3
HELIX_RISE = 1.45
HELIX_TWIST = np.deg2rad(100.0)
STRAND_RISE = 3.3
STRAND_ZIGZAG = 1.0


def helix_trace(n: int) -> np.ndarray:
    i = np.arange(n)
    return np.stack(
        [HELIX_RADIUS * np.cos(i * HELIX_TWIST), HELIX_RADIUS * np.sin(i * HELIX_TWIST), HELIX_RISE * i],
        axis=1,
    )


def strand_trace(n: int, offset=(9.0, 0.0, 0.0)) -> np.ndarray:
    i = np.arange(n)
    zig = STRAND_ZIGZAG * np.where(i % 2 == 0, 1.0, -1.0)
    z = STRAND_RISE * (i - (n - 1) / 2.0) + HELIX_RISE * (n - 1) / 2.0
    return np.stack([zig, np.zeros(n), z], axis=1) + np.asarray(offset, dtype=float)


def two_state_structures(n: int = 16, residue_types=None) -> tuple[Structure, Structure]:
    a = Structure.from_ca_trace(helix_trace(n), residue_types)
    b = Structure.from_ca_trace(strand_trace(n), residue_types)
    return a, b


def two_state_generator(
    n: int = 16,
    weights=(0.5, 0.5),
    sigma: float = 0.15,
    decode_scale: float = 10.0,
    ode_steps_per_index: int = 6,
    seed: int = 0,
    **config_kwargs,
) -> tuple[Generator, Structure, Structure]:
    a, b = two_state_structures(n)
    prior, center = mixture_from_structures([a, b], weights, sigma, decode_scale)
    cfg = GeneratorConfig(
        schedule=NoiseSchedule(),
        prior=prior,
        ode_steps_per_index=ode_steps_per_index,
        seed=seed,
        decode_scale=decode_scale,
        center=center,
        **config_kwargs,
    )
    return Generator(cfg), a, b
