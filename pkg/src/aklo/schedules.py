"""Mixing schedules: the non-increasing weights that shift prediction
authority from the knowledge base to the current-task learner."""

from __future__ import annotations


class MixSchedule:
    def value(self, t: int) -> float:
        raise NotImplementedError

    def prefix_sum(self, n: int) -> float:
        """Sum of the first ``n`` schedule values."""
        return sum(self.value(t) for t in range(1, n + 1))


class LinearMix(MixSchedule):
    """alpha_t = 1 - (t-1)/N for a known horizon N.

    Queries past the horizon clamp to the value at N and raise the
    ``overflowed`` flag instead of failing.
    """

    def __init__(self, horizon: int) -> None:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(horizon)
        self.overflowed = False

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError("t must be >= 1")
        if t > self.horizon:
            self.overflowed = True
            t = self.horizon
        return 1.0 - (t - 1) / self.horizon


class ConstantMix(MixSchedule):
    """Fixed alpha; reserved for theory-check modes (alpha=0, alpha=1)."""

    def __init__(self, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError("constant alpha must lie in [0, 1]")
        self._value = float(value)

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError("t must be >= 1")
        return self._value


class CustomMix(MixSchedule):
    """Explicit alpha table; must be non-increasing within [0, 1]."""

    def __init__(self, table) -> None:
        table = [float(a) for a in table]
        if not table:
            raise ValueError("alpha table must be nonempty")
        for a in table:
            if not 0.0 <= a <= 1.0:
                raise ValueError("alpha values must lie in [0, 1]")
        for prev, cur in zip(table, table[1:]):
            if cur > prev:
                raise ValueError("alpha table must be non-increasing")
        self.table = table
        self.overflowed = False

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError("t must be >= 1")
        if t > len(self.table):
            self.overflowed = True
            t = len(self.table)
        return self.table[t - 1]


class DoublingLinearMix(MixSchedule):
    """Linear schedule for unknown horizons, recomputed against the running
    doubling estimate N_hat = 2**ceil(log2 t).

    Not globally non-increasing: alpha jumps back up each time the horizon
    estimate doubles.
    """

    def value(self, t: int) -> float:
        if t < 1:
            raise ValueError("t must be >= 1")
        n_hat = 1 << max(0, (t - 1).bit_length())
        return 1.0 - (t - 1) / n_hat


def alpha_at(schedule: MixSchedule, t: int) -> float:
    return schedule.value(t)


def from_spec(spec: str, horizon: int | None = None) -> MixSchedule:
    """Parse a schedule spec string: ``linear``, ``doubling``,
    ``constant:<v>`` or ``custom:<a1>,<a2>,...``."""
    spec = spec.strip().lower()
    if spec == "linear":
        if horizon is None:
            raise ValueError("linear schedule needs a known horizon")
        return LinearMix(horizon)
    if spec == "doubling":
        return DoublingLinearMix()
    if spec.startswith("constant:"):
        return ConstantMix(float(spec.split(":", 1)[1]))
    if spec.startswith("custom:"):
        return CustomMix(float(v) for v in spec.split(":", 1)[1].split(","))
    raise ValueError(f"unknown schedule spec {spec!r}")


def corollary1_threshold(schedule: MixSchedule, K: float, horizon: int) -> int:
    """Largest t <= horizon with alpha_t >= K/(1+K); 0 if none."""
    if K <= 0:
        raise ValueError("K must be positive")
    threshold = K / (1.0 + K)
    t0 = 0
    for t in range(1, horizon + 1):
        if schedule.value(t) >= threshold:
            t0 = t
    return t0
