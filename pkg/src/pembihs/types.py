from __future__ import annotations

import math
from enum import IntEnum

# exceeds every legal path cost; never produced by arithmetic on real costs
INFINITY = math.inf


class Direction(IntEnum):
    FORWARD = 0
    BACKWARD = 1

    @property
    def opposite(self) -> "Direction":
        return Direction(1 - self.value)

    @property
    def letter(self) -> str:
        return "F" if self is Direction.FORWARD else "B"


def opposite(direction: Direction) -> Direction:
    return Direction(direction).opposite
