"""Adaptive Dormand-Prince 5(4) integration with PI step-size control.

Inadmissible states raised by the right-hand side reject the step and halve
``dt``. Hooks run after every accepted step in the order given; each receives
a :class:`StepInfo` and may return a replacement state (SRD does).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .physics import InadmissibleStateError

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    pass


# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class IntegratorConfig:
    dt0: float
    t_end: float
    atol: float = 1e-8
    rtol: float = 1e-6
    safety: float = 0.9
    fac_min: float = 0.1
    fac_max: float = 5.0
    max_steps: Optional[int] = None

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol > 0):
            raise IntegrationError("tolerances must be positive")
        if not 0 < self.fac_min < 1 < self.fac_max:
            raise IntegrationError("need 0 < fac_min < 1 < fac_max")
        if not self.dt0 > 0:
            raise IntegrationError("dt0 must be positive")
        if self.t_end < 0:
            raise IntegrationError("t_end must be non-negative")


def step(rhs: Callable, y, t: float, dt: float, k1=None):
    """One Dormand-Prince step.

    Returns ``(y_new, err, k7)`` where ``err`` is the embedded (5th minus 4th
    order) difference and ``k7 = rhs(y_new, t + dt)`` is reusable as the next
    first stage.
    """
    if not dt > 0:
        raise IntegrationError("dt must be positive")
    k = [rhs(y, t) if k1 is None else k1]
    for s in range(1, 7):
        acc = y + dt * sum(a * kk for a, kk in zip(_A[s], k) if a != 0.0)
        k.append(rhs(acc, t + _C[s] * dt))
    y_new = acc  # stage 7 is evaluated at the 5th-order solution
    err = dt * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
    return y_new, err, k[6]


def error_norm(err, y, y_new, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


class StepInfo:
    """State after an accepted step, handed to hooks."""

    def __init__(self, rhs, t, dt, y, dydt, step_index):
        self._rhs = rhs
        self.t = t
        self.dt = dt
        self.step_index = step_index
        self._y = y
        self._dydt = dydt

    @property
    def y(self):
        return self._y

    @y.setter
    def y(self, value):
        if value is not self._y:
            self._y = value
            self._dydt = None

    def rhs(self):
        """``dy/dt`` at the current (possibly hook-modified) state, cached."""
        if self._dydt is None:
            self._dydt = self._rhs(self._y, self.t)
        return self._dydt


@dataclass
class IntegrationResult:
    y: np.ndarray
    t: float
    n_accepted: int
    n_rejected: int
    n_inadmissible: int
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)


def integrate(rhs: Callable, y0, config: IntegratorConfig, hooks: Sequence[Callable] = (),
              t0: float = 0.0) -> IntegrationResult:
    """Integrate ``dy/dt = rhs(y, t)`` from ``t0`` to ``config.t_end``."""
    y = np.array(y0, dtype=float, copy=True)
    t = float(t0)
    t_end = float(config.t_end)
    dt = min(config.dt0, t_end - t) if t_end > t else 0.0
    floor = 1e-14 * max(abs(t_end), 1e-300)
    res = IntegrationResult(y, t, 0, 0, 0)
    k1 = None
    err_prev = 1.0
    beta, alpha = 0.4 / 5.0, 0.7 / 5.0
    while t_end - t > floor:
        if config.max_steps is not None and res.n_accepted >= config.max_steps:
            break
        if dt < floor:
            raise IntegrationError(f"step size collapse at t={t:.6g} (dt={dt:.3e})")
        last = dt >= t_end - t
        if last:
            dt = t_end - t
        try:
            if k1 is None:
                k1 = rhs(y, t)
            y_new, err, k7 = step(rhs, y, t, dt, k1)
            if not np.all(np.isfinite(y_new)):
                raise InadmissibleStateError("non-finite state")
        except InadmissibleStateError as exc:
            if k1 is None:
                raise IntegrationError(f"inadmissible state at accepted time t={t:.6g}: {exc}") from exc
            res.n_inadmissible += 1
            log.debug("inadmissible stage at t=%.6g, dt=%.3e: %s", t, dt, exc)
            dt *= 0.5
            continue
        en = error_norm(err, y, y_new, config.atol, config.rtol)
        if not np.isfinite(en):
            res.n_rejected += 1
            dt *= 0.5
            continue
        if en <= 1.0:
            t = t_end if last else t + dt
            info = StepInfo(rhs, t, dt, y_new, k7, res.n_accepted)
            res.n_accepted += 1
            res.times.append(t)
            res.dts.append(dt)
            if res.n_accepted % 50 == 0:
                log.info("step %d: t=%.6g dt=%.3e (%d rejected, %d inadmissible)", res.n_accepted, t, dt,
                         res.n_rejected, res.n_inadmissible)
            for hook in hooks:
                out = hook(info)
                if out is not None:
                    info.y = out
            y = info.y
            k1 = info._dydt
            fac = config.safety * max(en, 1e-10) ** (-alpha) * err_prev ** beta
            fac = min(config.fac_max, max(config.fac_min, fac))
            err_prev = max(en, 1e-4)
            dt = dt * fac
        else:
            res.n_rejected += 1
            fac = max(config.fac_min, config.safety * en ** (-0.2))
            dt = dt * min(1.0, fac)
    res.y, res.t = y, t
    return res
