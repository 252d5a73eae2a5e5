"""Pure numerical training signals over token log-probability sequences.

Nothing here touches model weights: rollouts arrive as arrays of per-token
log-probabilities (policy and reference), rewards are normalized into
group-relative advantages, and the clipped-surrogate objective plus a KL
penalty are evaluated as plain numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

ADVANTAGE_EPS = 1e-8


def as_logprobs(values: Sequence[float]) -> np.ndarray:
    """Validate and convert a token log-probability sequence.

    Every entry must be finite and <= 0 (probabilities never exceed 1).
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("log-probabilities must be a 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("log-probabilities must be finite")
    if np.any(arr > 0):
        raise ValueError("log-probabilities must be <= 0")
    return arr


class SftLoss(NamedTuple):
    sum: float
    mean: float


def sft_nll(label_logprobs: Sequence[float]) -> SftLoss:
    """Negative log-likelihood of a label sequence: sum of -log p per token,
    with the per-token mean reported alongside."""
    arr = as_logprobs(label_logprobs)
    if arr.size == 0:
        raise ValueError("label log-probabilities must be non-empty")
    total = float(-np.sum(arr))
    return SftLoss(sum=total, mean=total / arr.size)


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Normalize rewards within a rollout group: (r - mean) / max(std, eps).

    Population std.  An all-equal group (std 0) carries no learning signal
    and yields all-zero advantages rather than an error.
    """
    arr = np.asarray(rewards, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("rewards must be a non-empty 1-d sequence")
    centered = arr - arr.mean()
    return centered / max(float(arr.std()), ADVANTAGE_EPS)


def kl_token(policy_lp, ref_lp):
    """Non-negative per-token KL estimate from two log-probabilities:
    exp(ref - policy) - (ref - policy) - 1.  Zero iff the two agree.

    Accepts scalars or equal-shaped arrays.
    """
    delta = np.asarray(ref_lp, dtype=np.float64) - np.asarray(policy_lp, dtype=np.float64)
    if not np.all(np.isfinite(delta)):
        raise ValueError("log-probabilities must be finite")
    out = np.exp(delta) - delta - 1.0
    return float(out) if out.ndim == 0 else out


@dataclass
class Rollout:
    """One sampled response: its scalar reward and aligned token log-probs
    under the policy and the reference model.

    The reference sequence is the ratio denominator; callers following the
    usual PPO recipe may supply old-policy log-probs in its place.
    """

    reward: float
    policy_logprobs: np.ndarray
    ref_logprobs: np.ndarray
    advantage: float | None = None

    def __post_init__(self):
        self.policy_logprobs = as_logprobs(self.policy_logprobs)
        self.ref_logprobs = as_logprobs(self.ref_logprobs)
        if self.policy_logprobs.shape != self.ref_logprobs.shape:
            raise ValueError("policy and reference sequences must have equal length")
        if self.policy_logprobs.size == 0:
            raise ValueError("rollout must contain at least one token")


@dataclass
class RolloutGroup:
    """A group of rollouts sampled for one input; advantages are populated
    from the group's own rewards via :func:`group_advantages`."""

    rollouts: list[Rollout] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.rollouts)

    @property
    def rewards(self) -> np.ndarray:
        return np.asarray([r.reward for r in self.rollouts], dtype=np.float64)

    def compute_advantages(self) -> np.ndarray:
        adv = group_advantages(self.rewards)
        for rollout, a in zip(self.rollouts, adv):
            rollout.advantage = float(a)
        return adv


@dataclass(frozen=True)
class GrpoParams:
    epsilon: float = 0.2  # clip width
    beta: float = 0.0     # KL penalty weight

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


class GrpoResult(NamedTuple):
    loss: float
    surrogate: float
    kl: float


def grpo_loss(group: RolloutGroup, params: GrpoParams | None = None) -> GrpoResult:
    """Clipped-surrogate group objective with a KL penalty.

    Per token t of rollout i:  ratio = exp(policy - ref), term =
    min(ratio * A_i, clip(ratio, 1-eps, 1+eps) * A_i).  Token terms are
    averaged within each rollout, then across the group; the returned loss is
    -surrogate + beta * kl, so minimizing it maximizes the surrogate while
    penalizing divergence from the reference.
    """
    params = params or GrpoParams()
    if group.size == 0:
        raise ValueError("rollout group is empty")
    if any(r.advantage is None for r in group.rollouts):
        raise ValueError("advantages not populated; call compute_advantages() first")

    surrogate_terms = []
    kl_terms = []
    lo, hi = 1.0 - params.epsilon, 1.0 + params.epsilon
    for rollout in group.rollouts:
        ratio = np.exp(rollout.policy_logprobs - rollout.ref_logprobs)
        adv = rollout.advantage
        term = np.minimum(ratio * adv, np.clip(ratio, lo, hi) * adv)
        surrogate_terms.append(float(term.mean()))
        kl_terms.append(float(np.mean(kl_token(rollout.policy_logprobs, rollout.ref_logprobs))))

    surrogate = float(np.mean(surrogate_terms))
    kl = float(np.mean(kl_terms))
    return GrpoResult(loss=-surrogate + params.beta * kl, surrogate=surrogate, kl=kl)
