"""Logit shaping and categorical sampling.

Pipeline order is fixed: cfg_combine -> prior_combine -> shape_logits ->
sample_token. Guidance runs on raw logits so the guidance weight stays
scale-independent of temperature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIPELINE_ORDER = ("cfg_combine", "prior_combine", "shape_logits", "sample_token")

DEFAULT_TEMPERATURE = 1.3
DEFAULT_TOP_K = 40
DEFAULT_CFG_WEIGHT = 5.0


class ShapeError(ValueError):
    """Logit vectors of mismatched length."""


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = DEFAULT_TEMPERATURE
    top_k: int = DEFAULT_TOP_K
    cfg_weight: float = DEFAULT_CFG_WEIGHT

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.cfg_weight < 0:
            raise ValueError(f"cfg_weight must be non-negative, got {self.cfg_weight}")


def cfg_combine(pos_logits: np.ndarray, neg_logits: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: (1 + w) * pos - w * neg, elementwise."""
    pos = np.asarray(pos_logits, dtype=np.float64)
    neg = np.asarray(neg_logits, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ShapeError(f"logit shapes differ: {pos.shape} vs {neg.shape}")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("guidance requires finite logits")
    return (1.0 + w) * pos - w * neg


def prior_combine(likelihood_logits: np.ndarray, prior_logits: np.ndarray) -> np.ndarray:
    """Posterior logits: elementwise sum (log-space product)."""
    like = np.asarray(likelihood_logits, dtype=np.float64)
    prior = np.asarray(prior_logits, dtype=np.float64)
    if like.shape != prior.shape:
        raise ShapeError(f"logit shapes differ: {like.shape} vs {prior.shape}")
    return like + prior


def shape_logits(logits: np.ndarray, temperature: float, top_k: int) -> np.ndarray:
    """Divide by temperature, then mask everything outside the top_k to -inf.

    Ties at the top_k boundary keep the lowest indices (stable sort), so the
    kept set is deterministic across platforms.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    if top_k >= scaled.shape[-1]:
        return scaled
    order = np.argsort(-scaled, kind="stable")
    out = np.full_like(scaled, -np.inf)
    keep = order[:top_k]
    out[keep] = scaled[keep]
    return out


def sample_token(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from the softmax over the finite entries."""
    logits = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(logits)
    if not finite.any():
        raise ValueError("all logits are -inf; nothing to sample")
    ids = np.flatnonzero(finite)
    shifted = logits[ids] - logits[ids].max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    cdf = np.cumsum(probs)
    u = rng.random()
    pick = int(np.searchsorted(cdf, u, side="right"))
    return int(ids[min(pick, len(ids) - 1)])


def sample_pipeline(
    pos_logits: np.ndarray,
    rng: np.random.Generator,
    config: SamplerConfig,
    neg_logits: np.ndarray | None = None,
    prior_logits: np.ndarray | None = None,
) -> int:
    """The full fixed-order pipeline for one position."""
    logits = np.asarray(pos_logits, dtype=np.float64)
    if neg_logits is not None:
        logits = cfg_combine(logits, neg_logits, config.cfg_weight)
    if prior_logits is not None:
        logits = prior_combine(logits, prior_logits)
    logits = shape_logits(logits, config.temperature, config.top_k)
    return sample_token(logits, rng)
