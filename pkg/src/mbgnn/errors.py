"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class MBGNNError(Exception):
    exit_code = 1


class InputError(MBGNNError, ValueError):
    """Malformed or inconsistent input data (files, indices, shapes)."""

    exit_code = 2


class ShapeError(InputError):
    pass


class TrainingDivergence(MBGNNError, RuntimeError):
    exit_code = 3


class CheckpointError(MBGNNError):
    """Checkpoint bytes failed validation (magic, version, CRC, dimensions)."""

    exit_code = 4
