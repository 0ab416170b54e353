"""Step-size regimes and the Hessian sample count ``b``."""

from __future__ import annotations

import math
from dataclasses import dataclass

from dsmo.errors import InvalidParam


@dataclass(frozen=True)
class StepSchedule:
    """Constant (nonconvex) or diminishing (PL) step sizes.

    constant:    alpha = C0 sqrt(K/T), beta = gamma = beta_scale * sqrt(K/T)
    diminishing: alpha = 2 / (mu (C1 + t)), beta = gamma = C1 / (C1 + t)

    ``b_rule`` is ``"theory"`` (``b_m = 3 ceil(log_{1/(1-kappa_m)} T)``) or
    ``"fixed"`` (the same ``b`` on every level).
    """

    regime: str = "constant"
    C0: float = 0.1
    T: int | None = None
    beta_scale: float = 1.0
    C1: float = 50.0
    mu: float | None = None
    b_rule: str = "fixed"
    b: int = 10

    def __post_init__(self):
        if self.regime not in ("constant", "diminishing"):
            raise InvalidParam(f"unknown step-size regime {self.regime!r}")
        if self.b_rule not in ("theory", "fixed"):
            raise InvalidParam(f"unknown b rule {self.b_rule!r}")
        if self.regime == "constant":
            if self.T is None or self.T < 1 or self.C0 <= 0 or self.beta_scale <= 0:
                raise InvalidParam("constant regime needs T >= 1, C0 > 0 and beta_scale > 0")
        else:
            if self.C1 <= 0 or self.mu is None or self.mu <= 0:
                raise InvalidParam("diminishing regime needs C1 > 0 and mu > 0")
        if self.b_rule == "fixed" and self.b < 0:
            raise InvalidParam(f"b must be non-negative, got {self.b}")

    def b_levels(self, kappas, T=None):
        """Per-level Hessian sample counts."""
        if self.b_rule == "fixed":
            return [int(self.b)] * len(kappas)
        T = T if T is not None else self.T
        if T is None:
            raise InvalidParam("the theory b rule needs the horizon T")
        return [theory_b(k, T) for k in kappas]


def theory_b(kappa, T):
    """``3 ceil(log_{1/(1-kappa)} T)``; zero when ``kappa == 1`` (the series is exact)."""
    if not (0.0 < kappa <= 1.0):
        raise InvalidParam(f"kappa must lie in (0, 1], got {kappa}")
    if kappa >= 1.0 or T <= 1:
        return 0
    # small epsilon guards exact powers against floating-point round-up
    return 3 * math.ceil(math.log(T) / -math.log1p(-kappa) - 1e-9)


def schedule_at(schedule: StepSchedule, t: int, K: int):
    """Return ``(alpha, beta, gamma)`` at round ``t``."""
    if t < 0:
        raise InvalidParam(f"t must be non-negative, got {t}")
    if schedule.regime == "constant":
        if t >= schedule.T:
            raise InvalidParam(f"t={t} outside the constant-schedule horizon T={schedule.T}")
        r = math.sqrt(K / schedule.T)
        beta = schedule.beta_scale * r
        if beta > 1.0:
            raise InvalidParam(f"beta = gamma = {beta:.4g} > 1; T={schedule.T} is too small for K={K}")
        return schedule.C0 * r, beta, beta
    beta = schedule.C1 / (schedule.C1 + t)
    return 2.0 / (schedule.mu * (schedule.C1 + t)), beta, beta
