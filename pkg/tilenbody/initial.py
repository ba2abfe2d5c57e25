# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

"""
Seeded initial conditions.

Random numbers come from numpy's Philox4x64-10 counter-based bit generator
wrapped in :class:`numpy.random.Generator`, and only uniform doubles in
``[0, 1)`` are drawn (:meth:`~numpy.random.Generator.random`). For the
Plummer model the draws are consumed in this order:

1. ``n`` cumulative mass fractions for the radii
2. ``n`` polar and then ``n`` azimuthal draws for the position directions
3. velocity rejection batches, each ``k`` pairs of ``(q, y)`` draws for the
   ``k`` particles still without a speed, accepted in particle order
4. ``n`` polar and then ``n`` azimuthal draws for the velocity directions

The uniform sphere draws batches of ``3k`` coordinates for the ``k`` points
still missing and keeps those inside the ball, in order.
"""

import logging
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .particles import ParticleSystem
from .exc import InvalidConfiguration


logger = logging.getLogger('tilenbody.initial')

MODELS = ('plummer', 'uniform_sphere', 'two_body_circular', 'file')

#: Plummer scale radius in standard (Henon) units, total energy -1/4
HENON_SCALE_RADIUS = 3 * math.pi / 16
#: Largest cumulative mass fraction drawn for a Plummer radius
PLUMMER_MASS_CUTOFF = 0.999


class ICSpec:
    """
    Describes an initial condition.

    :type model:
        str
    :param model:
        One of ``plummer``, ``uniform_sphere``, ``two_body_circular`` or
        ``file``

    :type n:
        int
    :param n:
        Number of particles, at least 2 (always 2 for ``two_body_circular``;
        ignored for ``file``)

    :type seed:
        int
    :param seed:
        Seed of the Philox generator

    :type scale_radius:
        float
    :param scale_radius:
        Plummer scale radius (default 3π/16), sphere radius (default 1) or
        pair separation (default 1)

    :type path:
        str
    :param path:
        Snapshot path or ``s3://`` URI for the ``file`` model
    """
    def __init__(self, model: str, n: int = 2, *, seed: int = 0,
                 scale_radius: Optional[float] = None,
                 path: Optional[Union[Path, str]] = None):
        if model not in MODELS:
            raise InvalidConfiguration(
                f"model must be one of {', '.join(MODELS)}, got {model!r}")
        if model == 'file':
            if path is None:
                raise InvalidConfiguration("the file model needs a path")
        elif model == 'two_body_circular':
            if n != 2:
                raise InvalidConfiguration(f"two_body_circular has exactly 2 particles, got {n}")
        elif n < 2:
            raise InvalidConfiguration(f"n must be at least 2, got {n}")
        if seed < 0:
            raise InvalidConfiguration(f"seed must be non-negative, got {seed}")
        if scale_radius is not None and not (math.isfinite(scale_radius) and scale_radius > 0):
            raise InvalidConfiguration(
                f"scale_radius must be finite and positive, got {scale_radius}")
        self.model = model
        self.n = n
        self.seed = seed
        self.scale_radius = scale_radius
        self.path = path

    def __repr__(self):
        if self.model == 'file':
            return f"<{self.__class__.__name__} file {self.path}>"
        return f"<{self.__class__.__name__} {self.model} n={self.n} seed={self.seed}>"


def make_rng(seed: int) -> np.random.Generator:
    "The portable generator used by every seeded model"
    return np.random.Generator(np.random.Philox(seed))


def _isotropic(rng: np.random.Generator, magnitude: np.ndarray) -> np.ndarray:
    n = magnitude.shape[0]
    cos_theta = 1.0 - 2.0 * rng.random(n)
    phi = 2.0 * math.pi * rng.random(n)
    sin_theta = np.sqrt(1.0 - cos_theta * cos_theta)
    return np.stack((
        magnitude * sin_theta * np.cos(phi),
        magnitude * sin_theta * np.sin(phi),
        magnitude * cos_theta,
    ))


def _recentered(masses: np.ndarray, positions: np.ndarray,
                velocities: np.ndarray) -> ParticleSystem:
    total = masses.sum()
    positions = positions - (positions @ masses / total)[:, None]
    velocities = velocities - (velocities @ masses / total)[:, None]
    return ParticleSystem(masses, positions, velocities, layout='axes')


def plummer(n: int, seed: int = 0, scale_radius: float = HENON_SCALE_RADIUS) -> ParticleSystem:
    """
    Sample an equal-mass Plummer sphere of total mass 1: radii by inverting the
    cumulative mass profile, speeds by rejection from the isotropic
    distribution function, recentred on the origin.
    """
    rng = make_rng(seed)
    masses = np.full(n, 1.0 / n)

    mass_fraction = PLUMMER_MASS_CUTOFF * rng.random(n)
    with np.errstate(divide='ignore'):
        r = 1.0 / np.sqrt(mass_fraction ** (-2.0 / 3.0) - 1.0)
    positions = _isotropic(rng, r)

    q = np.empty(n)
    filled = 0
    while filled < n:
        k = n - filled
        draws = rng.random(2 * k).reshape(k, 2)
        x, y = draws[:, 0], draws[:, 1]
        accepted = x[0.1 * y < x * x * (1.0 - x * x) ** 3.5]
        q[filled:filled + accepted.shape[0]] = accepted
        filled += accepted.shape[0]
    escape = math.sqrt(2.0) * (1.0 + r * r) ** -0.25
    velocities = _isotropic(rng, q * escape)

    positions *= scale_radius
    velocities /= math.sqrt(scale_radius)
    return _recentered(masses, positions, velocities)


def uniform_sphere(n: int, seed: int = 0, radius: float = 1.0) -> ParticleSystem:
    """
    Equal-mass particles of total mass 1 uniformly filling a ball of *radius*,
    at rest.
    """
    rng = make_rng(seed)
    positions = np.empty((n, 3))
    filled = 0
    while filled < n:
        k = n - filled
        points = 2.0 * rng.random(3 * k).reshape(k, 3) - 1.0
        inside = points[(points * points).sum(axis=1) <= 1.0]
        positions[filled:filled + inside.shape[0]] = inside
        filled += inside.shape[0]
    masses = np.full(n, 1.0 / n)
    return _recentered(masses, positions.T * radius, np.zeros((3, n)))


def two_body_circular(separation: float = 1.0) -> ParticleSystem:
    """
    Two unit masses on a circular orbit about their common centre of mass,
    *separation* apart, with relative speed ``sqrt(M / separation)``.
    """
    speed = math.sqrt(2.0 / separation)
    positions = [[-separation / 2, 0.0, 0.0], [separation / 2, 0.0, 0.0]]
    velocities = [[0.0, -speed / 2, 0.0], [0.0, speed / 2, 0.0]]
    return ParticleSystem([1.0, 1.0], positions, velocities)


def generate(spec: ICSpec) -> ParticleSystem:
    """
    Build the particle system described by *spec*. The result depends on the
    spec alone: the same spec always gives a bit-identical system.
    """
    logger.info("Generating %r", spec)
    if spec.model == 'plummer':
        radius = HENON_SCALE_RADIUS if spec.scale_radius is None else spec.scale_radius
        return plummer(spec.n, spec.seed, radius)
    if spec.model == 'uniform_sphere':
        return uniform_sphere(spec.n, spec.seed, spec.scale_radius or 1.0)
    if spec.model == 'two_body_circular':
        return two_body_circular(spec.scale_radius or 1.0)
    return ParticleSystem.from_file(spec.path)
