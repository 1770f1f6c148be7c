"""Entropy-adaptive stochastic domain gating.

Confident routing distributions keep the threshold at its base value so
only strong domains pass; uncertain (high-entropy) distributions shrink
the threshold toward ``tau_min``, inflating every domain's pass
probability min(1, p_j / tau) and widening the search. Each domain is
then an independent Bernoulli draw, or a >= 0.5 cutoff in deterministic
mode (used for serving and tests).

The entropy is computed on the normalized distribution, since the raw
sigmoid outputs need not sum to one, but the pass probability keeps the
raw p_j so exploitation still scales with absolute router confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENTROPY_FLOOR = 1e-12


@dataclass(frozen=True)
class GatingConfig:
    tau0: float = 0.5
    tau_min: float = 0.05
    seed: int = 0
    mode: str = "stochastic"
    ensure_nonempty: bool = True

    def __post_init__(self):
        if not (0.0 < self.tau_min <= self.tau0 <= 1.0):
            raise ValueError(f"need 0 < tau_min <= tau0 <= 1, got {self.tau_min}, {self.tau0}")
        if self.mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown gating mode {self.mode!r}")


@dataclass(frozen=True)
class GateDecision:
    tau: float
    gate_probs: tuple[float, ...]
    active: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"tau": self.tau, "gate_probs": list(self.gate_probs), "active": list(self.active)}


def _check_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("domain probabilities must be a non-empty 1-d vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("domain probabilities must be finite and within [0, 1]")
    return p


def adaptive_threshold(p: np.ndarray, config: GatingConfig) -> float:
    """tau(q) = tau0 * (1 - H(p_hat)/ln m), clamped to [tau_min, tau0]."""
    p = _check_probs(p)
    total = float(p.sum())
    if total <= 0.0:
        raise ValueError("degenerate probabilities: all domain probabilities are zero")
    if p.size == 1:
        return config.tau0
    p_hat = np.maximum(p / total, ENTROPY_FLOOR)
    entropy = float(-(p_hat * np.log(p_hat)).sum())
    tau = config.tau0 * (1.0 - entropy / np.log(p.size))
    return float(min(config.tau0, max(config.tau_min, tau)))


def gate_probability(p_j: float, tau: float) -> float:
    """Pass probability min(1, p_j / tau) for a single domain."""
    if tau <= 0.0:
        raise ValueError(f"threshold must be positive, got {tau}")
    if not (0.0 <= p_j <= 1.0):
        raise ValueError(f"domain probability must be in [0, 1], got {p_j}")
    return min(1.0, p_j / tau)


def sample_active(
    p: np.ndarray,
    config: GatingConfig,
    rng: np.random.Generator | None = None,
) -> GateDecision:
    """Draw the active-domain set for one query.

    Stochastic mode draws one Bernoulli per domain from ``rng`` (callers
    own generator isolation; the config seed is only the fallback).
    Deterministic mode activates domains with pass probability >= 0.5.
    An empty draw falls back to the argmax domain when ensure_nonempty,
    ties to the lowest id.
    """
    p = _check_probs(p)
    tau = adaptive_threshold(p, config)
    gate_probs = np.minimum(1.0, p / tau)
    if config.mode == "deterministic":
        active = gate_probs >= 0.5
    else:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        active = rng.random(p.size) < gate_probs
    ids = np.flatnonzero(active)
    if ids.size == 0 and config.ensure_nonempty:
        ids = np.array([int(np.argmax(p))])
    return GateDecision(
        tau=tau,
        gate_probs=tuple(float(g) for g in gate_probs),
        active=tuple(int(i) for i in ids),
    )
