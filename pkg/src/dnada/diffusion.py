"""Noise schedule and the forward / reverse diffusion recursions.

Two parameterizations are supported.  The default (``sqrt_mode=False``)
uses the literal recursion ``x_t = a_t x_{t-1} + b_t eps`` with the
schedule values themselves as coefficients; ``sqrt_mode=True`` swaps in
the usual variance-preserving square roots.

Timesteps are 1-based throughout: ``t`` ranges over ``1..T`` and array
index ``t - 1`` holds the values for step ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha: np.ndarray
    beta: np.ndarray
    alpha_bar: np.ndarray
    sqrt_mode: bool = False
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def coeffs(self, t: int) -> tuple[float, float]:
        """Signal and noise multipliers of one forward step."""
        a, b = float(self.alpha[t - 1]), float(self.beta[t - 1])
        if self.sqrt_mode:
            return np.sqrt(a), np.sqrt(b)
        return a, b

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start,
                "beta_end": self.beta_end, "sqrt_mode": self.sqrt_mode}


def build_schedule(T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02,
                   sqrt_mode: bool = False) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be at least 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    return NoiseSchedule(T, alpha, beta, np.cumprod(alpha), sqrt_mode,
                         float(beta_start), float(beta_end))


def _check_t(t: int, sched: NoiseSchedule):
    if not 1 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside 1..{sched.T}")


def forward_step(x_prev, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    _check_t(t, sched)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_prev.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match state shape {x_prev.shape}")
    a, b = sched.coeffs(t)
    return a * x_prev + b * eps


def cond_forward_step(x_prev, t: int, eps_cond, sched: NoiseSchedule) -> np.ndarray:
    """Forward step with class-conditioned noise.

    The recursion is unchanged; all conditioning is carried by the mean of
    ``eps_cond`` (see ``condnoise.sample_noise``).
    """
    return forward_step(x_prev, t, eps_cond, sched)


def reverse_mean(x_t, t: int, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    _check_t(t, sched)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    a, b = float(sched.alpha[t - 1]), float(sched.beta[t - 1])
    one_minus_ab = 1.0 - float(sched.alpha_bar[t - 1])
    if sched.sqrt_mode:
        return (x_t - (b / np.sqrt(one_minus_ab)) * eps_hat) / np.sqrt(a)
    return (x_t - (b / one_minus_ab) * eps_hat) / a


def posterior_variance(t: int, sched: NoiseSchedule) -> float:
    _check_t(t, sched)
    b = float(sched.beta[t - 1])
    return b * (1.0 - sched.alpha_bar_prev(t)) / (1.0 - float(sched.alpha_bar[t - 1]))


def reverse_step(x_t, t: int, eps_hat, eta, sched: NoiseSchedule) -> np.ndarray:
    mu = reverse_mean(x_t, t, eps_hat, sched)
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != mu.shape:
        raise ValueError("eta shape does not match state shape")
    var = posterior_variance(t, sched)
    scale = np.sqrt(var) if sched.sqrt_mode else var
    return mu + scale * eta


def noising_weights(t: int, sched: NoiseSchedule) -> tuple[float, np.ndarray]:
    """Unrolled coefficients of ``t`` forward steps from ``x_0``.

    Returns ``(signal, w)`` with ``x_t = signal * x_0 + sum_s w[s-1] * eps_s``.
    """
    _check_t(t, sched)
    signal = 1.0
    w = np.zeros(t)
    for s in range(1, t + 1):
        a, b = sched.coeffs(s)
        signal *= a
        w *= a
        w[s - 1] = b
    return signal, w


def noise_to_step(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Iterate ``forward_step`` per row of a batch.

    ``t`` holds one timestep per row and ``eps`` has shape ``(T, batch, D)``;
    row ``i`` consumes ``eps[:t[i], i]`` and stops at its own timestep.
    """
    x = np.array(x0, dtype=np.float64)
    t = np.asarray(t)
    for s in range(1, int(t.max()) + 1):
        active = t >= s
        if not active.any():
            break
        x[active] = forward_step(x[active], s, eps[s - 1][active], sched)
    return x
