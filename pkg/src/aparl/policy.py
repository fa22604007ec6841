"""Linear-softmax policies over a dense feature table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, NonFiniteParameter

# |theta_i| beyond this makes action probabilities saturate to 0/1 in float64;
# allowed, but trajectory probabilities may underflow.
SATURATION = 50.0


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """pi(a|s) proportional to exp(theta . phi(s, a)).

    ``features`` has shape (num_states, num_actions, d).  All derived tables
    are computed once and cached, so a policy is cheap to query repeatedly
    and safe to share.
    """

    theta: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True).reshape(-1)
        feats = np.array(self.features, dtype=float, copy=True)
        if feats.ndim != 3:
            raise ValueError(f"features must be (S, A, d), got shape {feats.shape}")
        if theta.shape != (feats.shape[2],):
            raise ValueError(f"theta has dimension {theta.size}, features have {feats.shape[2]}")
        if not np.all(np.isfinite(theta)):
            raise NonFiniteParameter("theta contains non-finite entries", partial=theta)
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        theta.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "features", feats)

        logits = feats @ theta
        logits = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(logits).sum(axis=1, keepdims=True))
        logp = logits - log_z
        probs = np.exp(logp)
        mean_feat = np.einsum("sa,sad->sd", probs, feats)
        for arr in (logp, probs, mean_feat):
            arr.setflags(write=False)
        object.__setattr__(self, "_logp", logp)
        object.__setattr__(self, "_probs", probs)
        object.__setattr__(self, "_mean_feat", mean_feat)

    @classmethod
    def tabular(cls, num_states: int, num_actions: int, theta=None) -> "SoftmaxPolicy":
        """One-hot features; coordinate ``s * num_actions + a`` is the logit of (s, a)."""
        d = num_states * num_actions
        feats = np.eye(d).reshape(num_states, num_actions, d)
        return cls(np.zeros(d) if theta is None else theta, feats)

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.features)

    @property
    def num_states(self) -> int:
        return self.features.shape[0]

    @property
    def num_actions(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def feature_bound(self) -> float:
        """max over (s, a) of ||phi(s, a)||."""
        return float(np.linalg.norm(self.features, axis=2).max())

    @property
    def saturated(self) -> bool:
        return bool(np.any(np.abs(self.theta) > SATURATION))

    def _check(self, s: int, a: int | None = None) -> None:
        if not 0 <= s < self.num_states:
            raise IndexOutOfRange(f"state {s} out of range")
        if a is not None and not 0 <= a < self.num_actions:
            raise IndexOutOfRange(f"action {a} out of range")

    def probs_table(self) -> np.ndarray:
        return self._probs

    def log_probs_table(self) -> np.ndarray:
        return self._logp

    def action_probs(self, s: int) -> np.ndarray:
        self._check(s)
        return self._probs[s].copy()

    def score_table(self) -> np.ndarray:
        """(S, A, d) table of grad_theta log pi(a|s) = phi(s, a) - E_pi[phi(s, .)]."""
        return self.features - self._mean_feat[:, None, :]

    def score(self, s: int, a: int) -> np.ndarray:
        self._check(s, a)
        return self.features[s, a] - self._mean_feat[s]

    def log_hessian_table(self) -> np.ndarray:
        """(S, d, d) table of Hessians of log pi(a|s); they do not depend on a."""
        p, f, m = self._probs, self.features, self._mean_feat
        second = np.einsum("sa,sad,sae->sde", p, f, f)
        return np.einsum("sd,se->sde", m, m) - second

    def log_policy_hessian(self, s: int, a: int) -> np.ndarray:
        self._check(s, a)
        p, f, m = self._probs[s], self.features[s], self._mean_feat[s]
        return np.outer(m, m) - np.einsum("a,ad,ae->de", p, f, f)


def format_params(theta) -> str:
    """One line of whitespace-separated decimals that round-trips exactly."""
    return " ".join(repr(float(x)) for x in np.asarray(theta, dtype=float).reshape(-1))


def parse_params(line: str) -> np.ndarray:
    return np.array([float(tok) for tok in line.split()], dtype=float)
