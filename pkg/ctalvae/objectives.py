"""
Objectives - loss terms and triplet generation

Masked reconstruction MSE, the closed-form Gaussian KL to N(0, I), cosine
contrastive pair terms and their weighted total. Each loss has a gradient
companion used by the training loop.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Sequence as SequenceT, Tuple

import numpy as np

from .errors import DataValidationError, SchemaMismatchError
from .flow_model import Sequence
from .vae import LatentParams

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the reconstruction, KL and contrastive terms"""
    lambda_rec: float = 1.0
    lambda_kl: float = 0.1
    lambda_con: float = 1.0

    def __post_init__(self):
        values = asdict(self).values()
        if any(v < 0 for v in values):
            raise DataValidationError(f"loss weights must be non-negative: {asdict(self)}")
        if all(v == 0 for v in values):
            raise DataValidationError("at least one loss weight must be positive")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LossWeights':
        return cls(**data)


@dataclass(frozen=True)
class ContrastiveConfig:
    """Triplet generation and margin settings"""
    margin: float = 0.5
    noise_sigma: float = 0.05
    triplets_per_anchor: int = 1
    synthetic_negatives: bool = True

    def __post_init__(self):
        if not 0 < self.margin <= 2:
            raise DataValidationError(f"margin must lie in (0, 2], got {self.margin}")
        if not self.noise_sigma > 0:
            raise DataValidationError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if self.triplets_per_anchor < 1:
            raise DataValidationError(f"triplets_per_anchor must be >= 1, got {self.triplets_per_anchor}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ContrastiveConfig':
        return cls(**data)


@dataclass(eq=False)
class Triplet:
    """Anchor, noised positive and differently-sourced negative"""
    anchor: Sequence
    positive: Sequence
    negative: Sequence
    synthetic: bool = False


def _check_pair(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if x.shape != x_hat.shape or mask.shape != x.shape[:-1]:
        raise SchemaMismatchError(f"mse shapes differ: x {x.shape}, x_hat {x_hat.shape}, mask {mask.shape}")
    if np.any(mask.sum(axis=-1) == 0):
        raise DataValidationError("mse over an all-false mask is undefined")
    return x, x_hat, mask


def sequence_mse(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-sequence masked MSE; (T, D) gives a scalar array, (N, T, D) a length-N vector"""
    x, x_hat, mask = _check_pair(x, x_hat, mask)
    sq = ((x - x_hat) ** 2).sum(axis=-1) * mask
    return sq.sum(axis=-1) / (mask.sum(axis=-1) * x.shape[-1])


def mse_loss(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error over mask=true rows (batch: mean of per-sequence values)"""
    return float(np.mean(sequence_mse(x, x_hat, mask)))


def mse_loss_grad(x: np.ndarray, x_hat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d mse_loss / d x_hat"""
    x, x_hat, mask = _check_pair(x, x_hat, mask)
    batch = x.shape[0] if x.ndim == 3 else 1
    scale = 2.0 / (mask.sum(axis=-1) * x.shape[-1] * batch)
    return (x_hat - x) * mask[..., None] * np.asarray(scale)[..., None, None]


def kl_terms(lp: LatentParams) -> np.ndarray:
    """Per-sequence KL(N(mu, sigma^2) || N(0, I))"""
    return -0.5 * np.sum(1.0 + lp.log_var - lp.mu ** 2 - np.exp(lp.log_var), axis=-1)


def kl_loss(lp: LatentParams) -> float:
    """Closed-form non-negative KL to the standard normal prior (batch: mean)"""
    return float(np.mean(kl_terms(lp)))


def kl_loss_grad(lp: LatentParams) -> Tuple[np.ndarray, np.ndarray]:
    """(d kl_loss / d mu, d kl_loss / d log_var)"""
    batch = lp.mu.shape[0] if np.ndim(lp.mu) == 2 else 1
    return lp.mu / batch, 0.5 * (np.exp(lp.log_var) - 1.0) / batch


def cosine_sim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity over the last axis, norms floored at 1e-12"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.maximum(np.linalg.norm(a, axis=-1), NORM_FLOOR)
    nb = np.maximum(np.linalg.norm(b, axis=-1), NORM_FLOOR)
    return np.sum(a * b, axis=-1) / (na * nb)


def cosine_sim_grad(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(dC/da, dC/db); a floored norm is treated as a constant"""
    raw_a = np.linalg.norm(a, axis=-1)
    raw_b = np.linalg.norm(b, axis=-1)
    na = np.maximum(raw_a, NORM_FLOOR)[..., None]
    nb = np.maximum(raw_b, NORM_FLOOR)[..., None]
    c = cosine_sim(a, b)[..., None]
    da = b / (na * nb) - np.where(raw_a[..., None] > NORM_FLOOR, c * a / na ** 2, 0.0)
    db = a / (na * nb) - np.where(raw_b[..., None] > NORM_FLOOR, c * b / nb ** 2, 0.0)
    return da, db


def _pair_dterm(c: np.ndarray, y: int, margin: float) -> Tuple[np.ndarray, np.ndarray]:
    """Pair term value and its derivative w.r.t. the cosine"""
    if y == 0:
        return (1.0 - c) ** 2, -2.0 * (1.0 - c)
    hinge = np.maximum(0.0, margin - (1.0 - c))
    return hinge ** 2, 2.0 * hinge


def contrastive_term(anchor_repr: np.ndarray, other_repr: np.ndarray, y: int, m: float) -> float:
    """
    One pair of the cosine contrastive loss

    y=0 (similar): (1 - C)^2; y=1 (dissimilar): max(0, m - (1 - C))^2
    """
    if y not in (0, 1):
        raise DataValidationError(f"pair label must be 0 or 1, got {y!r}")
    value, _ = _pair_dterm(cosine_sim(anchor_repr, other_repr), y, m)
    return float(value)


def contrastive_loss(
    anchor_mu: np.ndarray,
    positive_mu: np.ndarray,
    negative_mu: np.ndarray,
    margin: float
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """
    Mean over 2K pair terms of K triplets (anchor-positive y=0, anchor-negative y=1)

    Returns:
        (loss, d_anchor, d_positive, d_negative)
    """
    count = 2 * anchor_mu.shape[0]
    c_pos = cosine_sim(anchor_mu, positive_mu)
    c_neg = cosine_sim(anchor_mu, negative_mu)
    v_pos, g_pos = _pair_dterm(c_pos, 0, margin)
    v_neg, g_neg = _pair_dterm(c_neg, 1, margin)

    da_pos, dp = cosine_sim_grad(anchor_mu, positive_mu)
    da_neg, dn = cosine_sim_grad(anchor_mu, negative_mu)
    g_pos = (g_pos / count)[:, None]
    g_neg = (g_neg / count)[:, None]

    loss = float((v_pos.sum() + v_neg.sum()) / count)
    return loss, g_pos * da_pos + g_neg * da_neg, g_pos * dp, g_neg * dn


def total_loss(rec: float, kl: float, con: float, w: LossWeights) -> float:
    """lambda_rec * rec + lambda_kl * kl + lambda_con * con"""
    return w.lambda_rec * rec + w.lambda_kl * kl + w.lambda_con * con


def _positive(anchor: Sequence, sigma: float, rng: np.random.Generator) -> Sequence:
    noise = rng.normal(0.0, sigma, size=anchor.data.shape) * anchor.mask[:, None]
    return Sequence(anchor.receiver, anchor.start_ts, anchor.data + noise,
                    anchor.mask.copy(), anchor.flow_ids)


def _synthetic_negative(anchor: Sequence, sigma: float, rng: np.random.Generator) -> Sequence:
    length = anchor.length
    rows = anchor.data[:length] + rng.normal(0.0, 10.0 * sigma, size=(length, anchor.dim))
    data = np.zeros_like(anchor.data)
    data[:length] = rows[rng.permutation(length)]
    return Sequence(anchor.receiver, anchor.start_ts, data, anchor.mask.copy(), ())


def make_triplets(
    anchors: SequenceT[Sequence],
    pool: SequenceT[Sequence],
    cfg: ContrastiveConfig,
    seed: int
) -> List[Triplet]:
    """
    Build cfg.triplets_per_anchor triplets for every anchor

    Positives add N(0, sigma^2) noise on real rows. Negatives are drawn
    uniformly from pool sequences of other receivers; without any, a noised
    and row-shuffled copy of the anchor is used and tagged synthetic.

    Args:
        anchors: Anchor sequences
        pool: Candidate negatives
        cfg: Contrastive settings
        seed: RNG seed; output is a pure function of the inputs and seed

    Returns:
        Triplets in anchor order
    """
    if not anchors:
        raise DataValidationError("make_triplets needs at least one anchor")

    shape = anchors[0].data.shape
    for seq in list(anchors) + list(pool):
        if seq.data.shape != shape:
            raise SchemaMismatchError(f"triplet sequences must share shape {shape}, got {seq.data.shape}")

    rng = np.random.default_rng(seed)
    triplets = []
    for anchor in anchors:
        candidates = [s for s in pool if s.receiver != anchor.receiver]
        if not candidates and not cfg.synthetic_negatives:
            raise DataValidationError(
                f"no negative candidate for receiver {anchor.receiver!r} and synthetic negatives are disabled"
            )
        for _ in range(cfg.triplets_per_anchor):
            positive = _positive(anchor, cfg.noise_sigma, rng)
            if candidates:
                negative = candidates[int(rng.integers(len(candidates)))]
                triplets.append(Triplet(anchor, positive, negative))
            else:
                triplets.append(Triplet(anchor, positive, _synthetic_negative(anchor, cfg.noise_sigma, rng), True))
    return triplets
