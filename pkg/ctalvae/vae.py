"""
Sequence VAE core

LSTM encoder to a diagonal Gaussian posterior, reparameterized sampling and
an LSTM decoder that feeds back its own previous emission. All functions
work on a single sequence (T, C) or a batch (N, T, C).
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import DataValidationError, SchemaMismatchError
from .net_core import (
    LstmCache,
    LstmState,
    ParameterStore,
    affine,
    affine_backward,
    init_affine,
    init_lstm,
    lstm_step,
    lstm_step_backward,
)

CORE_GROUP = "core"


@dataclass(frozen=True)
class CoreConfig:
    """Shared core dimensions"""
    core_dim: int = 43
    hidden: int = 64
    latent: int = 16
    T: int = 30

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise DataValidationError(f"CoreConfig.{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> Dict[str, int]:
        return {k: int(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CoreConfig':
        return cls(**data)


@dataclass(eq=False)
class LatentParams:
    """Posterior mean and log-variance, shape (d,) or (N, d)"""
    mu: np.ndarray
    log_var: np.ndarray


@dataclass(eq=False)
class EncodeCache:
    lengths: np.ndarray
    h_last: np.ndarray
    steps: List[LstmCache]
    T: int


@dataclass(eq=False)
class DecodeCache:
    z: np.ndarray
    hs: List[np.ndarray]
    steps: List[LstmCache]
    single: bool = False


def init_core(store: ParameterStore, cfg: CoreConfig, rng: np.random.Generator) -> None:
    """Register every core parameter in the 'core' group"""
    init_lstm(store, "enc.lstm", cfg.core_dim, cfg.hidden, rng, CORE_GROUP)
    init_affine(store, "enc.mu", cfg.hidden, cfg.latent, rng, CORE_GROUP)
    init_affine(store, "enc.log_var", cfg.hidden, cfg.latent, rng, CORE_GROUP)
    init_affine(store, "dec.init", cfg.latent, cfg.hidden, rng, CORE_GROUP)
    store.add("dec.start", np.zeros(cfg.core_dim), CORE_GROUP)
    init_lstm(store, "dec.lstm", cfg.core_dim, cfg.hidden, rng, CORE_GROUP)
    init_affine(store, "dec.out", cfg.hidden, cfg.core_dim, rng, CORE_GROUP)


def _batched(seq: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    seq = np.asarray(seq, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    single = seq.ndim == 2
    if single:
        seq, mask = seq[None], mask[None]
    if seq.ndim != 3 or mask.shape != seq.shape[:2]:
        raise SchemaMismatchError(f"sequence shape {seq.shape} does not match mask shape {mask.shape}")
    return seq, mask, single


def sequence_lengths(mask: np.ndarray) -> np.ndarray:
    """Number of real rows per sequence; rejects empty or non-prefix masks"""
    lengths = mask.sum(axis=-1)
    if np.any(lengths == 0):
        raise DataValidationError("cannot encode a sequence whose mask is all false")
    if not np.array_equal(mask, np.arange(mask.shape[-1]) < lengths[..., None]):
        raise DataValidationError("mask=true rows must be contiguous from index 0")
    return lengths


def encode_forward(store: ParameterStore, seq: np.ndarray, mask: np.ndarray) -> Tuple[LatentParams, EncodeCache]:
    """
    Run the encoder LSTM and the latent heads

    h_T is the hidden state at each sequence's last real row; steps past the
    longest real prefix are never computed.
    """
    seq, mask, single = _batched(seq, mask)
    lengths = sequence_lengths(mask)
    batch, hidden = seq.shape[0], store["enc.lstm.W_h"].shape[0]

    state = LstmState.zeros(hidden, batch)
    h_last = np.zeros((batch, hidden))
    steps = []
    for t in range(int(lengths.max())):
        state, cache = lstm_step(store, "enc.lstm", state, seq[:, t])
        steps.append(cache)
        ends = lengths == t + 1
        h_last[ends] = state.h[ends]

    mu = affine(store, "enc.mu", h_last)
    log_var = affine(store, "enc.log_var", h_last)
    if single:
        mu, log_var = mu[0], log_var[0]
    return LatentParams(mu, log_var), EncodeCache(lengths, h_last, steps, seq.shape[1])


def encode_backward(store: ParameterStore, cache: EncodeCache,
                    d_mu: np.ndarray, d_log_var: np.ndarray) -> np.ndarray:
    """Backward of encode_forward; returns the gradient w.r.t. the input sequence"""
    d_mu = np.atleast_2d(d_mu)
    d_log_var = np.atleast_2d(d_log_var)
    dh_last = (affine_backward(store, "enc.mu", cache.h_last, d_mu)
               + affine_backward(store, "enc.log_var", cache.h_last, d_log_var))

    batch, hidden = cache.h_last.shape
    d_seq = np.zeros((batch, cache.T, cache.steps[0].x.shape[-1]))
    dh = np.zeros((batch, hidden))
    dc = np.zeros((batch, hidden))
    for t in range(len(cache.steps) - 1, -1, -1):
        ends = cache.lengths == t + 1
        dh[ends] += dh_last[ends]
        d_seq[:, t], dh, dc = lstm_step_backward(store, "enc.lstm", cache.steps[t], dh, dc)
    return d_seq


def encode(store: ParameterStore, seq: np.ndarray, mask: np.ndarray) -> LatentParams:
    """Posterior parameters of one sequence (T, C) or a batch (N, T, C)"""
    return encode_forward(store, seq, mask)[0]


def sample_latent(lp: LatentParams, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_var / 2) * eps"""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != np.shape(lp.mu):
        raise SchemaMismatchError(f"eps shape {eps.shape} does not match latent shape {np.shape(lp.mu)}")
    return lp.mu + np.exp(0.5 * lp.log_var) * eps


def sample_latent_backward(lp: LatentParams, eps: np.ndarray, dz: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. (mu, log_var); eps is a constant"""
    return dz, dz * eps * 0.5 * np.exp(0.5 * lp.log_var)


def decode_forward(store: ParameterStore, z: np.ndarray, T: int) -> Tuple[np.ndarray, DecodeCache]:
    """
    Generate T steps; step t consumes the previous emission (learned start vector at t=1)

    z enters only through the decoder's initial hidden state.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None] if single else z
    batch = z2.shape[0]
    hidden = store["dec.lstm.W_h"].shape[0]

    state = LstmState(affine(store, "dec.init", z2), np.zeros((batch, hidden)))
    prev = np.broadcast_to(store["dec.start"], (batch, store["dec.start"].shape[0]))
    outputs, hs, steps = [], [], []
    for _ in range(T):
        state, cache = lstm_step(store, "dec.lstm", state, prev)
        prev = affine(store, "dec.out", state.h)
        steps.append(cache)
        hs.append(state.h)
        outputs.append(prev)

    y = np.stack(outputs, axis=1)
    return (y[0] if single else y), DecodeCache(z2, hs, steps, single)


def decode_backward(store: ParameterStore, cache: DecodeCache, d_y: np.ndarray) -> np.ndarray:
    """Backward of decode_forward through the emission feedback; returns dz"""
    d_y = d_y[None] if d_y.ndim == 2 else d_y
    batch, hidden = cache.z.shape[0], cache.hs[0].shape[-1]
    dh = np.zeros((batch, hidden))
    dc = np.zeros((batch, hidden))
    d_prev = np.zeros((batch, d_y.shape[-1]))

    for t in range(len(cache.steps) - 1, -1, -1):
        d_out = d_y[:, t] + d_prev
        dh = dh + affine_backward(store, "dec.out", cache.hs[t], d_out)
        d_prev, dh, dc = lstm_step_backward(store, "dec.lstm", cache.steps[t], dh, dc)

    store.grad("dec.start")[...] += d_prev.sum(axis=0)
    dz = affine_backward(store, "dec.init", cache.z, dh)
    return dz[0] if cache.single else dz


def decode(store: ParameterStore, z: np.ndarray, T: int) -> np.ndarray:
    """Reconstruction of shape (T, core_dim) or (N, T, core_dim)"""
    return decode_forward(store, z, T)[0]


def reconstruct(store: ParameterStore, seq: np.ndarray, mask: np.ndarray,
                eps: Optional[np.ndarray] = None) -> Tuple[np.ndarray, LatentParams]:
    """
    encode -> sample_latent -> decode

    Args:
        eps: Reparameterization noise; None uses the posterior mean

    Returns:
        (reconstruction, posterior parameters)
    """
    lp = encode(store, seq, mask)
    z = lp.mu if eps is None else sample_latent(lp, eps)
    return decode(store, z, np.shape(seq)[-2]), lp
