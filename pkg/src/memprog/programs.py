"""Small example programs that can be planned by name from the CLI.

Each program is a builder function taking ``ProgramOptions``; the
``driver_id`` attribute tells the CLI which engine it targets.
"""

from __future__ import annotations

from .bytecode import DriverId
from .dsl import Batch, Integer, Party


def millionaire(opts) -> None:
    """Is the garbler at least as rich as the evaluator?  Output: one bit."""
    alice = Integer(32)
    alice.mark_input(Party.GARBLER)
    bob = Integer(32)
    bob.mark_input(Party.EVALUATOR)
    result = alice >= bob
    result.mark_output()


millionaire.driver_id = DriverId.BITWIRE


def dot(opts) -> None:
    """Slot-wise product of two ciphertexts, relinearized and revealed."""
    a = Batch().mark_input(Party.GARBLER)
    b = Batch().mark_input(Party.GARBLER)
    (a * b).relin_rescale().mark_output()


dot.driver_id = DriverId.BATCH


PROGRAMS = {"millionaire": millionaire, "dot": dot}
