"""Shared bits for response-time style recurrences."""

from __future__ import annotations

import math
from typing import Callable

DIVERGED = math.inf


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def least_fixed_point(step: Callable[[int], int], seed: int, cap: float) -> tuple[float, list]:
    """Iterate ``x <- step(x)`` from ``seed`` until stable or above ``cap``.

    Returns the final value (the first iterate above ``cap`` when the cap is
    exceeded) and the list of iterates. ``step`` must be monotone; a
    decreasing iterate is a bug in the caller's recurrence and raises.
    """
    log = [seed]
    x = seed
    if x > cap:
        return x, log
    while True:
        nxt = step(x)
        if nxt < x:
            raise ArithmeticError(f"recurrence not monotone: {x} -> {nxt}")
        log.append(nxt)
        if nxt == x or nxt > cap:
            return nxt, log
        x = nxt
