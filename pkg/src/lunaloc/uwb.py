"""Two-way-ranging (TWR) timing model between a rover tag and the lander anchor.

Clock offsets are frequency errors relative to true time: a device with
``offset_ppm = e`` measures an interval of true length ``d`` as
``d * (1 + e * 1e-6)``. The rover is the initiator. For single-sided TWR,
only the initiator-minus-responder offset matters to first order:
``bias ~= c * (e_init - e_resp) * t_reply / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_REPLY_DELAY = 500e-6


class RangeNegative(ValueError):
    """Raised when an exchange implies a negative time of flight."""


@dataclass(frozen=True)
class ClockModel:
    offset_ppm: float = 0.0
    antenna_delay: float = 0.0

    def __post_init__(self):
        if not abs(self.offset_ppm) < 100.0:
            raise ValueError(f"|offset_ppm| must be < 100, got {self.offset_ppm}")
        if self.antenna_delay < 0.0:
            raise ValueError("antenna_delay must be >= 0")

    @property
    def rate(self) -> float:
        return 1.0 + self.offset_ppm * 1e-6


@dataclass(frozen=True)
class TwrExchange:
    """Locally measured intervals of one (or two, for DS-TWR) exchanges.

    ``t_round``/``t_reply`` are the first round-trip and reply intervals;
    ``t_round2``/``t_reply2`` are the second pair for double-sided ranging.
    """

    t_round: float
    t_reply: float
    t_round2: Optional[float] = None
    t_reply2: Optional[float] = None

    def __post_init__(self):
        for v in (self.t_round, self.t_reply, self.t_round2, self.t_reply2):
            if v is not None and not np.isfinite(v):
                raise ValueError("exchange timestamps must be finite")

    @property
    def double_sided(self) -> bool:
        return self.t_round2 is not None and self.t_reply2 is not None


def ss_twr_range(x: TwrExchange, c: float = SPEED_OF_LIGHT) -> float:
    tof = 0.5 * (x.t_round - x.t_reply)
    if tof < 0.0:
        raise RangeNegative(f"negative time of flight {tof:.3e} s")
    return c * tof


def ds_twr_range(x: TwrExchange, c: float = SPEED_OF_LIGHT) -> float:
    """Asymmetric double-sided TWR (drift cancels to first order)."""
    if not x.double_sided:
        raise ValueError("double-sided ranging needs t_round2 and t_reply2")
    den = x.t_round + x.t_round2 + x.t_reply + x.t_reply2
    if not den > 0.0:
        raise ValueError("degenerate exchange: timestamp sum must be positive")
    tof = (x.t_round * x.t_round2 - x.t_reply * x.t_reply2) / den
    if tof < 0.0:
        raise RangeNegative(f"negative time of flight {tof:.3e} s")
    return c * tof


def exchange_timestamps(
    true_range: float,
    initiator: ClockModel,
    responder: ClockModel,
    t_reply: float = DEFAULT_REPLY_DELAY,
    t_reply2: Optional[float] = None,
    c: float = SPEED_OF_LIGHT,
) -> TwrExchange:
    """Simulate the intervals each device would timestamp for a range.

    The responder waits ``t_reply`` on its own clock before answering; for the
    double-sided variant the initiator then waits ``t_reply2`` on its clock.
    Antenna delays lengthen every flight leg by the sum of both delays.
    """
    if true_range < 0.0:
        raise ValueError("true_range must be >= 0")
    flight = true_range / c + initiator.antenna_delay + responder.antenna_delay
    reply_true = t_reply / responder.rate
    t_round = (2.0 * flight + reply_true) * initiator.rate
    if t_reply2 is None:
        return TwrExchange(t_round, t_reply)
    reply2_true = t_reply2 / initiator.rate
    t_round2 = (2.0 * flight + reply2_true) * responder.rate
    return TwrExchange(t_round, t_reply, t_round2, t_reply2)


def ss_twr_bias(initiator: ClockModel, responder: ClockModel, t_reply: float = DEFAULT_REPLY_DELAY,
                c: float = SPEED_OF_LIGHT) -> float:
    """First-order SS-TWR range bias from drift and antenna delays."""
    drift = (initiator.offset_ppm - responder.offset_ppm) * 1e-6
    return 0.5 * c * drift * t_reply + c * (initiator.antenna_delay + responder.antenna_delay)


def simulate_ping(
    true_range: float,
    clocks: tuple[ClockModel, ClockModel],
    t_reply: float,
    sigma: float,
    dropout: float,
    rng: np.random.Generator,
) -> Optional[float]:
    """One SS-TWR range measurement, or ``None`` if the ping is dropped.

    Random draws happen in a fixed order (dropout uniform, then noise normal)
    whether or not the ping survives, so streams stay aligned across configs.
    """
    if true_range < 0.0:
        raise ValueError("true_range must be >= 0")
    u = rng.random()
    n = rng.standard_normal()
    if u < dropout:
        return None
    x = exchange_timestamps(true_range, clocks[0], clocks[1], t_reply)
    return ss_twr_range(x) + sigma * n
