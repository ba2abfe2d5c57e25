# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

from tilenbody.oracle import *
from tilenbody.particles import ParticleSystem, AccelJerk
from tilenbody.dataflow import CoreGrid, run_engine
from tilenbody.exc import *

from conftest import SOFTENING


def test_brute_force_two_body(pair):
    """
    GIVEN: Unit masses at x = 0 and x = 1
    EXPECT: Accelerations of exactly (+1, 0, 0) and (-1, 0, 0)
    """
    result = brute_force_fp64(pair)
    assert result.precision == 'fp64'
    assert result.acc[:, 0].tolist() == [1.0, 0.0, 0.0]
    assert result.acc[:, 1].tolist() == [-1.0, 0.0, 0.0]
    assert result.jerk[:, 0].tolist() == [0.0, 1.0, 0.0]
    assert result.jerk[:, 1].tolist() == [0.0, -1.0, 0.0]

def test_brute_force_triangle(triangle):
    """
    GIVEN: Three unit masses on an equilateral triangle of side 1
    EXPECT: Each acceleration has magnitude sqrt(3) and points at the centroid
    """
    result = brute_force_fp64(triangle)
    centroid = triangle.positions.mean(axis=1)
    for i in range(3):
        a = result.acc[:, i]
        assert np.linalg.norm(a) == pytest.approx(math.sqrt(3), rel=1e-14)
        towards = centroid - triangle.positions[:, i]
        assert np.dot(a, towards) / (np.linalg.norm(a) * np.linalg.norm(towards)) == \
            pytest.approx(1.0, rel=1e-14)

def test_brute_force_momentum(small_plummer):
    "Test the mass-weighted accelerations and jerks sum to zero"
    result = brute_force_fp64(small_plummer)
    m = small_plummer.masses
    scale = np.sum(m * np.linalg.norm(result.acc, axis=0))
    assert np.abs(result.acc @ m).max() <= 1e-12 * scale
    jscale = np.sum(m * np.linalg.norm(result.jerk, axis=0))
    assert np.abs(result.jerk @ m).max() <= 1e-12 * jscale

def test_brute_force_translation_and_scaling(small_plummer):
    """
    GIVEN: A system translated, and a system with positions scaled by 2
    EXPECT: Unchanged accelerations, and accelerations divided by 4
    """
    base = brute_force_fp64(small_plummer)
    shifted = small_plummer.evolve(
        small_plummer.positions + np.array([[0.5], [-0.25], [2.0]]),
        small_plummer.velocities)
    moved = brute_force_fp64(shifted)
    scale = np.linalg.norm(base.acc, axis=0).mean()
    assert np.abs(moved.acc - base.acc).max() <= 1e-10 * scale
    doubled = brute_force_fp64(
        small_plummer.evolve(small_plummer.positions * 2, small_plummer.velocities))
    assert np.abs(doubled.acc * 4 - base.acc).max() <= 1e-12 * scale

def test_brute_force_jerk_is_acceleration_derivative():
    """
    GIVEN: Two bodies approaching each other obliquely
    EXPECT: The jerk matches a central finite difference of the acceleration
    along the velocities to within 1e-5
    """
    system = ParticleSystem(
        [1.0, 0.5],
        [[0.1, -0.2, 0.3], [1.2, 0.4, -0.5]],
        [[0.3, 0.1, -0.2], [-0.4, 0.2, 0.1]])
    h = 1e-5
    plus = brute_force_fp64(system.evolve(
        system.positions + system.velocities * h, system.velocities))
    minus = brute_force_fp64(system.evolve(
        system.positions - system.velocities * h, system.velocities))
    numeric = (plus.acc - minus.acc) / (2 * h)
    jerk = brute_force_fp64(system).jerk
    assert np.abs(numeric - jerk).max() <= 1e-5 * np.abs(jerk).max()

def test_brute_force_coincident():
    """
    GIVEN: Two distinct particles at the same position and no softening
    EXPECT: SingularConfiguration naming both
    """
    # one row per axis: particles 1 and 2 both sit at (1, 0, 0)
    system = ParticleSystem(
        [1.0, 1.0, 1.0],
        [[0.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        np.zeros((3, 3)), layout='axes')
    with pytest.raises(SingularConfiguration) as ex:
        brute_force_fp64(system)
    assert 'particles 1 and 2' in str(ex.value)

def test_brute_force_coincident_softened():
    "Test softening makes coincident particles harmless"
    system = ParticleSystem(
        [1.0, 1.0], [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], np.zeros((2, 3)))
    result = brute_force_fp64(system, softening=0.1)
    assert not result.acc.any()

def test_brute_force_softening(pair):
    "Test softening adds eps^2 to every squared distance"
    result = brute_force_fp64(pair, softening=1.0)
    assert result.ax[0] == pytest.approx(2 ** -1.5, rel=1e-15)

def test_optimized_cpu_two_body(pair):
    "Test the FP32 baseline is exact on the unit two-body case"
    result = optimized_cpu(pair, 1)
    assert result.precision == 'fp32'
    assert result.ax.tolist() == [1.0, -1.0]
    assert result.jy.tolist() == [1.0, -1.0]

def test_optimized_cpu_thread_invariance(small_plummer):
    "Test the thread count does not change a single bit"
    one = optimized_cpu(small_plummer, 1)
    for threads in (2, 3, 7, 64, 200):
        assert optimized_cpu(small_plummer, threads).equals(one)

def test_optimized_cpu_bad_threads(pair):
    """
    GIVEN: Zero threads
    EXPECT: ValueError
    """
    with pytest.raises(ValueError):
        optimized_cpu(pair, 0)

def test_optimized_cpu_validates(plummer_1000):
    "Test the FP32 baseline is within tolerance of the FP64 reference"
    golden = brute_force_fp64(plummer_1000, softening=SOFTENING)
    report = validate(optimized_cpu(plummer_1000, 4, softening=SOFTENING), golden)
    assert report.passed
    assert 0 < report.max_rel_accel_err <= ACCEL_TOLERANCE
    assert report.max_rel_jerk_err <= JERK_TOLERANCE

def test_engine_validates_with_padding(plummer_1000):
    """
    GIVEN: 1000 particles, padded to one tile of 1024 on the engine, with no
    softening
    EXPECT: The result passes validation against the FP64 reference
    """
    golden = brute_force_fp64(plummer_1000)
    candidate = run_engine(plummer_1000, CoreGrid(4))
    assert candidate.n == 1000
    report = validate(candidate, golden)
    assert report.passed

def test_engine_validates_two_tiles(plummer_2048):
    "Test the engine passes validation on 2048 unsoftened Plummer particles"
    golden = brute_force_fp64(plummer_2048)
    candidate = run_engine(plummer_2048, CoreGrid(2))
    report = validate(candidate, golden)
    assert report.passed
    assert report.max_rel_accel_err <= ACCEL_TOLERANCE
    assert report.max_rel_jerk_err <= JERK_TOLERANCE
    assert candidate.equals(optimized_cpu(plummer_2048, 4))
    m = plummer_2048.masses
    acc = candidate.as_fp64()[0]
    assert np.abs(acc @ m).max() <= 1e-3 * np.sum(m * np.linalg.norm(acc, axis=0))

def shuffled(system, seed):
    order = np.random.default_rng(seed).permutation(system.n)
    return order, ParticleSystem(
        system.masses[order], system.positions[:, order], system.velocities[:, order],
        layout='axes')

def unshuffled(result, order):
    back = np.argsort(order)
    return AccelJerk(
        *(getattr(result, k)[back] for k in ('ax', 'ay', 'az', 'jx', 'jy', 'jz')),
        precision=result.precision)

def test_brute_force_permutation(small_plummer):
    """
    GIVEN: A system and the same particles in shuffled order
    EXPECT: The reference results are shuffled the same way, to FP64 rounding
    """
    order, system = shuffled(small_plummer, 11)
    base = brute_force_fp64(small_plummer)
    moved = unshuffled(brute_force_fp64(system), order)
    scale = np.abs(base.acc).max()
    assert np.abs(moved.acc - base.acc).max() <= 1e-12 * scale
    assert np.abs(moved.jerk - base.jerk).max() <= 1e-12 * np.abs(base.jerk).max()

def test_engine_permutation(plummer_1000):
    """
    GIVEN: 1000 particles in shuffled order on the engine
    EXPECT: Once put back in order, the results still pass validation against
    the reference of the original order
    """
    order, system = shuffled(plummer_1000, 5)
    golden = brute_force_fp64(plummer_1000)
    candidate = unshuffled(run_engine(system, CoreGrid(2)), order)
    assert candidate.precision == 'fp32'
    report = validate(candidate, golden)
    assert report.passed

def test_validate_exact():
    "Test an exact candidate has zero error and passes"
    golden = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp64')
    candidate = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp32')
    report = validate(candidate, golden)
    assert report.passed
    assert report.max_rel_accel_err == 0.0
    assert report.max_rel_jerk_err == 0.0
    assert report.typical_force_magnitude == 1.0
    assert repr(report) == '<ValidationReport n=2 pass>'
    assert 'PASS' in str(report)
    assert report.to_keyvalue().endswith('pass=true\n')

def test_validate_perturbed():
    """
    GIVEN: Candidates perturbed by 1e-4 and 1e-3 of the typical acceleration
    EXPECT: The first passes, the second fails and names the particle
    """
    golden = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp64')
    close = AccelJerk([1, -1 + 1e-4], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp64')
    far = AccelJerk([1, -1 + 1e-3], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp64')
    assert validate(close, golden).passed
    report = validate(far, golden)
    assert not report.passed
    assert report.max_rel_accel_err == pytest.approx(1e-3)
    assert report.worst_accel_index == 1
    assert report.worst_particle_index == 1
    assert 'FAIL' in str(report)
    assert 'pass=false' in report.to_keyvalue()

def test_validate_jerk_tolerance():
    "Test jerk errors are held to the looser 0.2% tolerance"
    golden = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp64')
    loose = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [1, -1 + 1.5e-3], [0, 0],
                      precision='fp64')
    report = validate(loose, golden)
    assert report.passed
    assert report.max_rel_jerk_err == pytest.approx(1.5e-3)

def test_validate_non_finite_candidate():
    "Test a NaN in the candidate fails validation"
    golden = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp64')
    bad = AccelJerk([1, np.nan], [0, 0], [0, 0], [0, 0], [1, -1], [0, 0], precision='fp32')
    report = validate(bad, golden)
    assert not report.passed
    assert math.isinf(report.max_rel_accel_err)
    assert report.worst_accel_index == 1

def test_validate_zero_jerk():
    """
    GIVEN: A golden result with zero jerk everywhere
    EXPECT: Zero jerk error for a zero candidate jerk, infinite otherwise
    """
    golden = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], precision='fp64')
    same = AccelJerk([1, -1], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], precision='fp32')
    other = AccelJerk([1, -1], [0, 0], [0, 0], [0, 1e-9], [0, 0], [0, 0], precision='fp32')
    assert validate(same, golden).max_rel_jerk_err == 0.0
    assert math.isinf(validate(other, golden).max_rel_jerk_err)

def test_validate_degenerate():
    """
    GIVEN: A golden result with zero acceleration everywhere
    EXPECT: DegenerateValidation
    """
    golden = AccelJerk.zeros(2, precision='fp64')
    with pytest.raises(DegenerateValidation):
        validate(AccelJerk.zeros(2, precision='fp32'), golden)

def test_validate_mismatch():
    """
    GIVEN: A golden result of another size, or one in fp32
    EXPECT: ValueError
    """
    golden = AccelJerk.zeros(2, precision='fp64')
    with pytest.raises(ValueError):
        validate(AccelJerk.zeros(3, precision='fp32'), golden)
    with pytest.raises(ValueError):
        validate(golden, AccelJerk.zeros(2, precision='fp32'))
