# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.

from typing import Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
import numpy.typing as npt

from coreason_slipguard.schemas import ControllerKind, TickCommand, TickRecord

TactileArray = npt.NDArray[np.float64]
ActionArray = npt.NDArray[np.float64]


@runtime_checkable
class SlipDetector(Protocol):
    """
    Protocol for slip detection models: probability that the object is slipping now.
    """

    def predict_proba(self, window: TactileArray) -> float:
        """
        Scores a (C, 48) window of filtered tactile frames. Returns p in (0, 1).
        """
        ...


@runtime_checkable
class SlipPredictor(Protocol):
    """
    Protocol for action-conditioned slip prediction models: probability of slip
    T ticks ahead if the robot executes the given (T, 6) action block.
    """

    def predict_proba(self, window: TactileArray, actions: ActionArray) -> float:
        """
        Scores a tactile window together with a planned action block.
        """
        ...

    def condition(self, window: TactileArray) -> Callable[[ActionArray], float]:
        """
        Fixes the tactile window and returns a scorer over action blocks.
        Controllers call the result many times per tick.
        """
        ...


@runtime_checkable
class TickController(Protocol):
    """
    Protocol for closed-loop controllers driven by the simulator at the control rate.
    """

    kind: ControllerKind
    n_basis: Optional[int]

    def reset(self) -> None:
        """Clears per-trial state (filters, warm starts, held commands)."""
        ...

    def decide(self, tick: int, history: Sequence[TickRecord]) -> TickCommand:
        """
        Command for tick `tick`, given the records of ticks 0..tick-1.
        """
        ...
