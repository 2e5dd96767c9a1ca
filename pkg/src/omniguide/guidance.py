"""Logit fusion strategies for guided decoding.

Each strategy combines per-branch next-token logits into one fused vector:

- ``base``: the backbone model conditioned on text plus the non-text input.
- ``neg``: the same backbone on text only (the contrast/negative branch).
- ``guide``: a text-only reasoner given the same question.

Fixed-weight contrast adds a constant multiple of a branch difference to
the base logits. The stepwise strategy instead adapts the weight each step
from how far the base and guide branches deviate from the text-only
backbone distribution, measured by Jensen-Shannon divergence, with a short
linear warmup so early steps stay close to the backbone.

All functions operate on raw branch logits; sampling adjustments
(temperature, penalties) happen downstream on the fused vector only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import as_logits, js_divergence, softmax


def _require_same_length(*vectors: np.ndarray) -> None:
    sizes = {v.shape[0] for v in vectors}
    if len(sizes) > 1:
        raise DimensionError(f"branch logit lengths differ: {sorted(sizes)}")


# Strategy names accepted by the decode pipeline and CLI.
STRATEGIES = (
    "none",
    "fixed_contrast",
    "lrm_guide_fixed",
    "vcd_ablation",
    "average_fusion",
    "stepwise",
)


@dataclass(frozen=True)
class GuidanceConfig:
    """Which fusion strategy runs and its knobs.

    alpha applies to the fixed-weight strategies only. The warmup fields
    drive the stepwise strategy: for the first warmup_steps steps the
    reasoning weight is capped at warmup_slope * t (t is 1-based), after
    which only the clip range applies.
    """

    strategy: str = "stepwise"
    alpha: float = 1.0
    warmup_steps: int = 5
    warmup_slope: float = 0.1
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}"
            )
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.warmup_slope < 0:
            raise ValueError("warmup_slope must be >= 0")
        if not (self.clip_lo <= self.clip_hi):
            raise ValueError("clip_lo must not exceed clip_hi")


@dataclass(frozen=True)
class StepWeights:
    """Per-step mixing weights plus the divergences that produced them."""

    alpha_r: float
    alpha_p: float
    d_r: float
    d_p: float


def fixed_contrast(
    z_base: np.ndarray, z_pos: np.ndarray, z_neg: np.ndarray, alpha: float
) -> np.ndarray:
    """Generic fixed-weight contrast: z_base + alpha * (z_pos - z_neg)."""
    z_base = as_logits(z_base)
    z_pos = as_logits(z_pos)
    z_neg = as_logits(z_neg)
    _require_same_length(z_base, z_pos, z_neg)
    return z_base + float(alpha) * (z_pos - z_neg)


def lrm_guide_fixed(
    z_base: np.ndarray, z_guide: np.ndarray, z_neg: np.ndarray, alpha: float
) -> np.ndarray:
    """Fixed-weight reasoner guidance: the guide branch is the positive pole."""
    return fixed_contrast(z_base, z_guide, z_neg, alpha)


def vcd_ablation_mix(z_base: np.ndarray, z_neg: np.ndarray, alpha: float) -> np.ndarray:
    """Two-branch contrast against the text-only backbone (no guide model)."""
    return fixed_contrast(z_base, z_base, z_neg, alpha)


def average_fusion(z_base: np.ndarray, z_guide: np.ndarray) -> np.ndarray:
    """Uniform logit average of the base and guide branches."""
    z_base = as_logits(z_base)
    z_guide = as_logits(z_guide)
    _require_same_length(z_base, z_guide)
    return 0.5 * (z_base + z_guide)


def reasoning_weights(
    d_r: float, d_p: float, t: int, cfg: GuidanceConfig | None = None
) -> StepWeights:
    """Turn divergence measurements into mixing weights for step t (1-based).

    alpha_r = clip(d_r - d_p, clip_lo, clip_hi), capped at warmup_slope * t
    for the first warmup_steps steps; alpha_p = 1 - alpha_r.
    """
    cfg = cfg or GuidanceConfig()
    if t < 1:
        raise ValueError("step index t is 1-based and must be >= 1")
    surplus = float(d_r) - float(d_p)
    alpha_r = float(min(max(surplus, cfg.clip_lo), cfg.clip_hi))
    if t <= cfg.warmup_steps:
        alpha_r = min(alpha_r, cfg.warmup_slope * t)
    return StepWeights(alpha_r=alpha_r, alpha_p=1.0 - alpha_r, d_r=float(d_r), d_p=float(d_p))


def stepwise_alpha(
    p_guide: np.ndarray,
    p_base: np.ndarray,
    p_neg: np.ndarray,
    t: int,
    cfg: GuidanceConfig | None = None,
) -> StepWeights:
    """Compute adaptive weights from branch distributions at step t.

    d_r measures how far the guide deviates from the text-only backbone;
    d_p measures how far the omni-conditioned base deviates from it. A
    positive surplus means the guide is adding information the base is not.
    """
    d_r = js_divergence(p_guide, p_neg)
    d_p = js_divergence(p_base, p_neg)
    return reasoning_weights(d_r, d_p, t, cfg)


def stepwise_mix(
    z_base: np.ndarray, z_guide: np.ndarray, z_neg: np.ndarray, alpha_r: float
) -> np.ndarray:
    """Fuse branch logits under the adaptive weights.

    With alpha_p = 1 - alpha_r, the two-contrast sum

        z_base + alpha_r * (z_guide - z_neg) + alpha_p * (z_base - z_neg)

    collapses to the closed form (2 - alpha_r) * z_base + alpha_r * z_guide
    - z_neg, which is what this computes.
    """
    if not (0.0 <= alpha_r <= 1.0):
        raise ValueError(f"alpha_r must be in [0, 1], got {alpha_r!r}")
    z_base = as_logits(z_base)
    z_guide = as_logits(z_guide)
    z_neg = as_logits(z_neg)
    _require_same_length(z_base, z_guide, z_neg)
    return (2.0 - alpha_r) * z_base + alpha_r * z_guide - z_neg


def stepwise_fuse(
    z_base: np.ndarray,
    z_guide: np.ndarray,
    z_neg: np.ndarray,
    t: int,
    cfg: GuidanceConfig | None = None,
) -> tuple[np.ndarray, StepWeights]:
    """One-call adaptive fusion: weights from softmaxed logits, then mix."""
    weights = stepwise_alpha(softmax(z_guide), softmax(z_base), softmax(z_neg), t, cfg)
    return stepwise_mix(z_base, z_guide, z_neg, weights.alpha_r), weights


# Branch sessions each strategy needs, in trace order.
STRATEGY_BRANCHES = {
    "none": ("base",),
    "fixed_contrast": ("base", "neg", "guide"),
    "lrm_guide_fixed": ("base", "neg", "guide"),
    "vcd_ablation": ("base", "neg"),
    "average_fusion": ("base", "guide"),
    "stepwise": ("base", "neg", "guide"),
}
