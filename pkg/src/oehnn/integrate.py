"""Fixed-step explicit ODE integration with zero-order-hold inputs.

The same stepper drives data generation, training rollouts, and evaluation,
so their trajectories agree bit-for-bit for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["IntegratorConfig", "IntegrationError", "step", "rollout", "rk4_step", "euler_step"]

_METHODS = ("rk4", "euler")


class IntegrationError(RuntimeError):
    """A step produced a non-finite state.

    `step_index` is the index of the transition (input row) whose update
    diverged; None when raised outside a rollout.
    """

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    step: float = 0.01

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {_METHODS}")
        if self.step <= 0:
            raise ValueError("step must be positive")


def euler_step(field, x: np.ndarray, u, h: float) -> np.ndarray:
    return x + h * field(x, u)


def rk4_step(field, x: np.ndarray, u, h: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta update; u is held constant (ZOH)."""
    k1 = field(x, u)
    k2 = field(x + (h / 2.0) * k1, u)
    k3 = field(x + (h / 2.0) * k2, u)
    k4 = field(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(field, x, u, h: float, method: str = "rk4") -> np.ndarray:
    """Advance the state by one fixed step, failing fast on non-finite output."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        if method == "rk4":
            x_next = rk4_step(field, x, u, h)
        elif method == "euler":
            x_next = euler_step(field, x, u, h)
        else:
            raise ValueError(f"unknown method {method!r}, expected one of {_METHODS}")
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError("integration step produced a non-finite state")
    return x_next


def rollout(field, x0, u_seq, h: float, method: str = "rk4") -> np.ndarray:
    """Simulate N samples under ZOH inputs; row k of u_seq acts on [k*h, (k+1)*h).

    Returns the N states at t = 0, h, ..., (N-1)*h with row 0 equal to x0.
    The last input row is unused (there is no transition after the last
    sample). Raises IntegrationError with the offending step index if the
    state leaves the representable range.
    """
    x0 = np.asarray(x0, dtype=float)
    u_seq = np.asarray(u_seq, dtype=float)
    n_samples = u_seq.shape[0]
    if n_samples < 1:
        raise ValueError("u_seq must contain at least one row")
    states = np.empty((n_samples, x0.shape[-1]), dtype=float)
    if not np.all(np.isfinite(x0)):
        raise IntegrationError("initial state is not finite", step_index=0)
    states[0] = x0
    for k in range(n_samples - 1):
        try:
            states[k + 1] = step(field, states[k], u_seq[k], h, method=method)
        except IntegrationError as exc:
            raise IntegrationError(
                f"non-finite state while applying input row {k}", step_index=k
            ) from exc
    return states
