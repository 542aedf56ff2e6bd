"""Analytic diffusion generator over residue-wise latents.

The data distribution at ``t = 0`` is an isotropic Gaussian mixture whose
component means are whitened reference conformations (one latent row per
residue, ``d = 3``).  Under the variance-preserving forward SDE the
time-``t`` marginal stays a Gaussian mixture, so the score is exact and
the probability-flow ODE can be integrated in both directions:

* :meth:`Generator.decode` integrates ``t_from -> 0``,
* :meth:`Generator.invert` integrates ``0 -> t_to``,
* :meth:`Generator.resample_at` draws from the forward kernel
  ``q(z_t | z_0)`` (or, optionally, from a fresh reverse-SDE run),
* :meth:`Generator.sample_reverse_sde` runs Euler-Maruyama from ``t = 1``.

All array routines accept latents of shape ``(..., N, d)`` so a whole
population can be integrated in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IndexOutOfRange, NonFiniteState, ShapeMismatch
from .structure import Structure

ALPHA_BAR_FLOOR = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine schedule in continuous time, truncated so that ``alpha_bar(1)``
    equals ``alpha_bar_end`` and ``beta`` stays finite on ``[0, 1]``.
    """

    kind: str = "cosine"
    n_indices: int = 50
    offset: float = 0.008
    alpha_bar_end: float = 1e-4

    def __post_init__(self):
        if self.kind != "cosine":
            raise ValueError(f"unsupported schedule kind {self.kind!r}")
        if self.n_indices < 1:
            raise ValueError("n_indices must be >= 1")
        if not 0.0 < self.alpha_bar_end <= 1e-3:
            raise ValueError("alpha_bar_end must lie in (0, 1e-3]")

    @property
    def _c0(self) -> float:
        return math.cos(0.5 * math.pi * self.offset / (1.0 + self.offset))

    @property
    def time_scale(self) -> float:
        # Solve cos(angle(1))^2 / cos(angle(0))^2 = alpha_bar_end for the stretch.
        s = self.offset
        angle_end = math.acos(math.sqrt(self.alpha_bar_end) * self._c0)
        return (angle_end * 2.0 / math.pi * (1.0 + s) - s)

    def _angle(self, t):
        s = self.offset
        return 0.5 * np.pi * (np.asarray(t, dtype=float) * self.time_scale + s) / (1.0 + s)

    def alpha_bar(self, t):
        ab = (np.cos(self._angle(t)) / self._c0) ** 2
        return np.clip(ab, ALPHA_BAR_FLOOR, 1.0)

    def beta(self, t):
        return self.time_scale * np.pi / (1.0 + self.offset) * np.tan(self._angle(t))

    def index_to_time(self, index: int) -> float:
        if not 0 <= index <= self.n_indices:
            raise IndexOutOfRange(f"index {index} outside 0..{self.n_indices}")
        return 1.0 - index / self.n_indices


@dataclass(frozen=True)
class MixturePrior:
    """Isotropic Gaussian mixture over ``N x d`` latents."""

    means: np.ndarray
    weights: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 2:
            means = means[None]
        if means.ndim != 3:
            raise ShapeMismatch(f"component means must be (K, N, d), got {means.shape}")
        k = means.shape[0]
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (k,)).copy()
        if weights.shape != (k,):
            raise ShapeMismatch("one weight per component required")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        if not np.all(np.isfinite(means)):
            raise ValueError("component means must be finite")
        for arr in (means, weights, sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.means.shape[1:]


@dataclass(frozen=True)
class Latent:
    values: np.ndarray
    time: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeMismatch(f"latent must be an N x d matrix, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteState("latent contains non-finite entries")
        if not 0.0 <= self.time <= 1.0:
            raise ValueError(f"time {self.time} outside [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class GeneratorConfig:
    schedule: NoiseSchedule
    prior: MixturePrior
    ode_steps_per_index: int = 6
    seed: int = 0
    decode_scale: float = 10.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    residue_types: tuple[str, ...] = ()
    resample_mode: str = "forward"
    sde_steps: int = 1000

    def __post_init__(self):
        if self.ode_steps_per_index < 1:
            raise ValueError("ode_steps_per_index must be >= 1")
        if self.decode_scale <= 0:
            raise ValueError("decode_scale must be positive")
        if self.resample_mode not in ("forward", "reverse_sde"):
            raise ValueError(f"unknown resample_mode {self.resample_mode!r}")
        n = self.prior.shape[0]
        if not self.residue_types:
            object.__setattr__(self, "residue_types", ("ALA",) * n)
        elif len(self.residue_types) != n:
            raise ShapeMismatch("residue_types must have one entry per residue")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


def mixture_from_structures(
    structures: Sequence[Structure],
    weights: Sequence[float] | None = None,
    sigma: float = 0.15,
    decode_scale: float = 10.0,
    center=None,
) -> tuple[MixturePrior, tuple[float, float, float]]:
    """Whiten reference conformations into component means.

    The shared ``center`` defaults to the centroid of all references, so
    relative placement between conformations is preserved.
    """
    traces = [s.ca_trace() for s in structures]
    if len({t.shape for t in traces}) != 1:
        raise ShapeMismatch("all reference structures must have the same residue count")
    stacked = np.stack(traces)
    if center is None:
        center = stacked.reshape(-1, 3).mean(axis=0)
    center = np.asarray(center, dtype=float)
    means = (stacked - center) / decode_scale
    k = len(traces)
    if weights is None:
        weights = np.full(k, 1.0 / k)
    return MixturePrior(means, np.asarray(weights, dtype=float), sigma), tuple(center)


class Generator:
    """Pure operations over one :class:`GeneratorConfig`."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.schedule = config.schedule
        self.prior = config.prior
        self._log_w = np.log(self.prior.weights)
        self._sigma2 = self.prior.sigma**2
        self._center = np.asarray(config.center, dtype=float)

    @property
    def n_residues(self) -> int:
        return self.prior.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.prior.shape[1]

    def index_to_time(self, index: int) -> float:
        return self.schedule.index_to_time(index)

    # -- closed-form marginals -------------------------------------------------

    def _moments(self, t: float):
        ab = float(self.schedule.alpha_bar(t))
        var = self._sigma2 * ab + (1.0 - ab)
        return ab, var

    def _responsibilities(self, z: np.ndarray, t: float):
        ab, var = self._moments(t)
        centers = math.sqrt(ab) * self.prior.means  # (K, N, d)
        diff = centers - z[..., None, :, :]  # (..., K, N, d)
        sq = np.sum(diff * diff, axis=(-2, -1))
        nd = z.shape[-2] * z.shape[-1]
        logits = self._log_w - sq / (2.0 * var) - 0.5 * nd * np.log(2.0 * np.pi * var)
        top = np.max(logits, axis=-1, keepdims=True)
        shifted = np.exp(logits - top)
        norm = np.sum(shifted, axis=-1, keepdims=True)
        resp = shifted / norm
        log_p = (top + np.log(norm))[..., 0]
        return resp, diff, ab, var, log_p

    def log_density(self, z, t: float):
        """log p_t(z) of the diffused mixture."""
        z = np.asarray(z, dtype=float)
        return self._responsibilities(z, t)[4]

    def responsibilities(self, z, t: float) -> np.ndarray:
        return self._responsibilities(np.asarray(z, dtype=float), t)[0]

    def score(self, z, t: float) -> np.ndarray:
        """Gradient of log p_t at ``z`` (any leading batch dimensions)."""
        z = np.asarray(z, dtype=float)
        resp, diff, _, var, _ = self._responsibilities(z, t)
        weights = resp / var
        return np.einsum("...k,...knd->...nd", weights, diff)

    def score_fn(self, z: Latent, t: float) -> np.ndarray:
        return self.score(z.values, t)

    def _flow_drift(self, z: np.ndarray, t: float) -> np.ndarray:
        # -0.5 beta (z + score); rewritten so beta only multiplies alpha_bar and
        # sqrt(alpha_bar), which stay bounded as alpha_bar -> 0.
        resp, _, ab, var, _ = self._responsibilities(z, t)
        beta = float(self.schedule.beta(t))
        coef_z = np.sum(resp * (ab * (self._sigma2 - 1.0) / var), axis=-1)
        mean_part = np.einsum("...k,knd->...nd", resp / var, self.prior.means) * math.sqrt(ab)
        return -0.5 * beta * (coef_z[..., None, None] * z + mean_part)

    def _score_direct_drift(self, z: np.ndarray, t: float, score_weight: float) -> np.ndarray:
        resp, _, ab, var, _ = self._responsibilities(z, t)
        beta = float(self.schedule.beta(t))
        # z + w * score, same bounded rewrite as the flow drift.
        coef_z = np.sum(resp * (1.0 - score_weight / var), axis=-1)
        mean_part = np.einsum("...k,knd->...nd", resp / var, self.prior.means) * math.sqrt(ab)
        return -0.5 * beta * (coef_z[..., None, None] * z + score_weight * mean_part)

    # -- structure <-> latent --------------------------------------------------

    def whiten(self, structure: Structure) -> np.ndarray:
        trace = structure.ca_trace()
        if trace.shape[0] != self.n_residues:
            raise ShapeMismatch(
                f"structure has {trace.shape[0]} residues, generator expects {self.n_residues}"
            )
        return (trace - self._center) / self.config.decode_scale

    def to_structure(self, z0: np.ndarray) -> Structure:
        coords = self._center + self.config.decode_scale * np.asarray(z0)
        return Structure.from_ca_trace(coords, self.config.residue_types)

    def n_steps(self, t: float) -> int:
        span = self.config.ode_steps_per_index * self.schedule.n_indices * float(t)
        return int(math.ceil(round(span, 9)))

    def _integrate(self, z: np.ndarray, t_start: float, t_end: float) -> np.ndarray:
        span = abs(t_end - t_start)
        n = self.n_steps(span)
        if n == 0:
            return np.array(z, dtype=float, copy=True)
        grid = np.linspace(t_start, t_end, n + 1)
        z = np.array(z, dtype=float, copy=True)
        for j in range(n):
            t0, t1 = float(grid[j]), float(grid[j + 1])
            h = t1 - t0
            k1 = self._flow_drift(z, t0)
            k2 = self._flow_drift(z + h * k1, t1)
            z = z + 0.5 * h * (k1 + k2)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState("probability-flow integration produced non-finite values")
        return z

    def decode_array(self, z_t, t_from: float) -> np.ndarray:
        """Integrate the probability-flow ODE from ``t_from`` down to 0."""
        return self._integrate(z_t, float(t_from), 0.0)

    def invert_array(self, z0, t_to: float) -> np.ndarray:
        """Integrate the probability-flow ODE from 0 up to ``t_to``."""
        return self._integrate(z0, 0.0, float(t_to))

    def decode(self, z_t: Latent, t_from: float | None = None) -> Structure:
        t_from = z_t.time if t_from is None else t_from
        return self.to_structure(self.decode_array(z_t.values, t_from))

    def invert(self, x: Structure, t_to: float) -> Latent:
        if not 0.0 <= t_to <= 1.0:
            raise ValueError(f"t_to {t_to} outside [0, 1]")
        return Latent(self.invert_array(self.whiten(x), t_to), t_to)

    # -- stochastic maps -------------------------------------------------------

    def forward_noise(self, z0, t: float, rng: np.random.Generator) -> np.ndarray:
        ab = float(self.schedule.alpha_bar(t)) if t > 0 else 1.0
        eps = rng.standard_normal(np.shape(z0))
        return math.sqrt(ab) * np.asarray(z0) + math.sqrt(1.0 - ab) * eps

    def resample_array(self, z0, t: float, rng: np.random.Generator) -> np.ndarray:
        if self.config.resample_mode == "forward":
            return self.forward_noise(z0, t, rng)
        z1 = rng.standard_normal(np.shape(z0))
        return self.reverse_sde_array(z1, rng, t_end=t)

    def resample_at(self, x: Structure, t: float, rng: np.random.Generator) -> Latent:
        return Latent(self.resample_array(self.whiten(x), t, rng), t)

    def reverse_sde_array(
        self,
        z1,
        rng: np.random.Generator,
        t_end: float = 0.0,
        noise_scale: float = 1.0,
        n_steps: int | None = None,
    ) -> np.ndarray:
        """Euler-Maruyama for the reverse-time SDE family

        dz = -0.5 beta [z + (1 + lam^2) score] dt + lam sqrt(beta) dW,

        where ``lam = noise_scale``.  ``lam = 1`` is the standard reverse SDE,
        ``lam = 0`` the probability-flow ODE; all share the same marginals.
        """
        if n_steps is None:
            n_steps = max(1, int(math.ceil(self.config.sde_steps * (1.0 - t_end))))
        grid = np.linspace(1.0, t_end, n_steps + 1)
        z = np.array(z1, dtype=float, copy=True)
        weight = 1.0 + noise_scale**2
        for j in range(n_steps):
            t0, t1 = float(grid[j]), float(grid[j + 1])
            h = t1 - t0
            z = z + h * self._score_direct_drift(z, t0, weight)
            if noise_scale:
                beta = float(self.schedule.beta(t0))
                z = z + noise_scale * math.sqrt(beta * -h) * rng.standard_normal(z.shape)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState("reverse SDE produced non-finite values")
        return z

    def sample_reverse_sde(
        self, z_T: Latent, rng: np.random.Generator, noise_scale: float = 1.0
    ) -> Structure:
        if z_T.time != 1.0:
            raise ValueError("reverse-SDE sampling starts from t = 1")
        return self.to_structure(self.reverse_sde_array(z_T.values, rng, noise_scale=noise_scale))

    def sample_prior_noise(self, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
        shape = self.prior.shape if batch is None else (batch, *self.prior.shape)
        return rng.standard_normal(shape)

    def nearest_component(self, structure_or_z0) -> int:
        """Index of the component mean closest to a clean latent or structure."""
        if isinstance(structure_or_z0, Structure):
            z0 = self.whiten(structure_or_z0)
        else:
            z0 = np.asarray(structure_or_z0)
        d = np.sum((self.prior.means - z0[None]) ** 2, axis=(-2, -1))
        return int(np.argmin(d))


def default_schedule(n_indices: int = 50) -> NoiseSchedule:
    return NoiseSchedule(n_indices=n_indices)
