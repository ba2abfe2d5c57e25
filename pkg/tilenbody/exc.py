# tilenbody: direct N-body gravity on an emulated tile-based dataflow accelerator
# Copyright 2025 tilenbody developers
# SPDX-License-Identifier: Apache-2.0

class TileNBodyException(Exception):
    "Base class for all ``tilenbody`` exceptions"


class InvalidParticleSystem(TileNBodyException):
    "Exception raised when a :class:`~tilenbody.particles.ParticleSystem` fails validation"


class NonFiniteValue(InvalidParticleSystem, ValueError):
    "Exception raised when a NaN or infinite value is found where finite data is required"


class SnapshotFormatError(TileNBodyException):
    "Exception raised when a particle snapshot cannot be parsed"


class CircularBufferError(TileNBodyException):
    "Base class for :class:`~tilenbody.buffers.CircularBuffer` errors"


class CBConfigurationError(CircularBufferError):
    "Exception raised when a circular buffer request can never be satisfied"


class CBContractViolation(CircularBufferError):
    "Exception raised when a kernel breaks the reserve/push or wait/pop protocol"


class PipelineShutdown(CircularBufferError):
    "Exception raised inside a blocked circular buffer operation when the pipeline shuts down"


class PipelineFailure(TileNBodyException):
    """
    Exception raised when a kernel of the dataflow pipeline fails. The failing
    core and kernel stage are available as :attr:`core` and :attr:`stage`.
    """
    def __init__(self, message, *, core=None, stage=None):
        super().__init__(message)
        self.core = core
        self.stage = stage


class DeadlockDetected(PipelineFailure):
    """
    Exception raised when the watchdog finds every kernel blocked on a circular
    buffer. :attr:`occupancy` maps buffer names to ``(occupied, capacity)``.
    """
    def __init__(self, message, *, occupancy=None):
        super().__init__(message, stage='watchdog')
        self.occupancy = occupancy or {}


class NonFiniteAccumulator(PipelineFailure):
    "Exception raised when a force or jerk accumulator tile becomes non-finite"


class DstRegisterOverflow(AssertionError):
    "Raised when more FP32 tiles are resident in the dst register than it can hold"


class SingularConfiguration(TileNBodyException):
    "Exception raised when the reference force sum meets two coincident particles"


class DegenerateValidation(TileNBodyException):
    "Exception raised when validation has no non-zero force scale to normalise by"


class InvalidConfiguration(TileNBodyException, ValueError):
    "Exception raised when simulation, engine or generator settings are invalid"


class IntegrationError(TileNBodyException):
    "Exception raised when a time step produces a non-finite particle state"


class BackendFailure(TileNBodyException):
    "Exception raised when a force backend fails during a simulation cycle"
    def __init__(self, message, *, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class TraceFormatError(TileNBodyException):
    "Exception raised when a power trace or perf stat output cannot be parsed"


class PowerProviderError(TileNBodyException):
    "Exception raised when a power provider cannot produce a reading"


class InsufficientPowerData(TileNBodyException):
    "Exception raised when too few power samples cover an energy window"


class ReportFormatError(TileNBodyException):
    "Exception raised when a benchmark report cannot be parsed or is inconsistent"


class InvalidBenchReport(TileNBodyException):
    "Exception raised when a benchmark has no successful repeats"


class TileNBodyWarning(Warning):
    "Base class for all warnings in tilenbody"


class PowerSampleSkippedWarning(TileNBodyWarning):
    "Warning raised when a power sample could not be read and was skipped"


class CounterWrapWarning(TileNBodyWarning):
    "Warning raised when an energy counter wrapped and its interval was discarded"


class BenchRunFailedWarning(TileNBodyWarning):
    "Warning raised when a benchmark repeat fails and is excluded from aggregates"
