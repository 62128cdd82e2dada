"""
Pipeline - two-phase training, scoring and evaluation

Phase 1 trains the core jointly with the source adaptors. Phase 2 freezes
everything but the target adaptors and fine-tunes them on a handful of
benign target windows. Scores are reconstruction errors of the posterior
mean path; a quantile of benign scores becomes the decision threshold.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence as SequenceT, Tuple

import numpy as np

from utils.logger import LoggerContext, get_logger, log_performance

from .adaptors import (
    SOURCE,
    TARGET,
    AdaptorPair,
    DomainId,
    TrainScope,
    adapt_in,
    adapt_in_backward,
    adapt_out,
    adapt_out_backward,
    init_adaptor_pair,
    set_trainable,
)
from .checkpoint import ModelBundle, ModelKind
from .errors import DataValidationError, SchemaMismatchError, TrainingDivergedError
from .flow_model import FeatureSchema, Label, Normalizer, Sequence, stack_sequences
from .net_core import OptimizerState, ParameterStore, adam_step
from .objectives import (
    ContrastiveConfig,
    LossWeights,
    contrastive_loss,
    kl_loss,
    kl_loss_grad,
    make_triplets,
    mse_loss,
    mse_loss_grad,
    sequence_mse,
    total_loss,
)
from .vae import (
    CoreConfig,
    LatentParams,
    decode,
    decode_backward,
    decode_forward,
    encode,
    encode_backward,
    encode_forward,
    init_core,
    sample_latent,
    sample_latent_backward,
)

logger = get_logger("ctalvae.pipeline")

DEFAULT_N_SHOTS = 5
DEFAULT_QUANTILE = 0.99
SCORE_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings of one training phase"""
    epochs: int = 100
    lr: float = 0.001
    batch_size: int = 32
    seed: int = 7
    weights: LossWeights = field(default_factory=LossWeights)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise DataValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise DataValidationError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise DataValidationError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        data = dict(data)
        if 'weights' in data:
            data['weights'] = LossWeights.from_dict(data['weights'])
        if 'contrastive' in data:
            data['contrastive'] = ContrastiveConfig.from_dict(data['contrastive'])
        return cls(**data)


@dataclass(frozen=True)
class Metrics:
    """Binary detection metrics with anomalous as the positive class"""
    accuracy: float
    mcc: float
    sensitivity: float
    tp: int
    tn: int
    fp: int
    fn: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Metrics':
        return cls(**data)


@dataclass(frozen=True)
class EpochLoss:
    """Mean losses of one epoch; absent terms are None"""
    phase: str
    epoch: int
    total: float
    rec: float
    kl: Optional[float] = None
    con: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    rec: float
    kl: Optional[float] = None
    con: Optional[float] = None


@dataclass(eq=False)
class TripletArrays:
    """Stacked triplet members; anchor_index points into the batch anchors"""
    anchor_index: np.ndarray
    positive: np.ndarray
    positive_mask: np.ndarray
    negative: np.ndarray
    negative_mask: np.ndarray

    @classmethod
    def from_triplets(cls, triplets, anchors: SequenceT[Sequence]) -> 'TripletArrays':
        position = {id(seq): i for i, seq in enumerate(anchors)}
        positive, positive_mask = stack_sequences([t.positive for t in triplets])
        negative, negative_mask = stack_sequences([t.negative for t in triplets])
        index = np.array([position[id(t.anchor)] for t in triplets], dtype=np.int64)
        return cls(index, positive, positive_mask, negative, negative_mask)


def batch_objective(
    store: ParameterStore,
    pair: AdaptorPair,
    data: np.ndarray,
    mask: np.ndarray,
    kind: ModelKind,
    weights: LossWeights,
    margin: float = 0.5,
    eps: Optional[np.ndarray] = None,
    triplets: Optional[TripletArrays] = None
) -> LossBreakdown:
    """
    Weighted loss of one mini-batch; gradients are accumulated into the store

    Anchors, positives and negatives run through one concatenated encoder
    pass. Reconstruction and KL cover the anchors; the contrastive term
    compares latent means over the triplets.

    Args:
        store: Parameters (gradients accumulate, they are not zeroed here)
        pair: Adaptors of the batch's domain
        data: Anchor batch (N, T, domain_dim)
        mask: Anchor mask (N, T)
        kind: Objective family; AE never samples and never evaluates KL
        weights: Term weights
        margin: Contrastive margin
        eps: Reparameterization noise (N, latent); None decodes the mean
        triplets: Required for the contrastive term of CTAL_VAE

    Returns:
        LossBreakdown with the terms that were evaluated
    """
    n = data.shape[0]
    use_con = kind.uses_contrastive and triplets is not None and weights.lambda_con > 0
    if use_con:
        x = np.concatenate([data, triplets.positive, triplets.negative])
        m = np.concatenate([mask, triplets.positive_mask, triplets.negative_mask])
    else:
        x, m = data, mask

    x_core = adapt_in(store, pair, x)
    lp_all, enc_cache = encode_forward(store, x_core, m)
    lp = LatentParams(lp_all.mu[:n], lp_all.log_var[:n])

    sampled = kind.samples and eps is not None
    z = sample_latent(lp, eps) if sampled else lp.mu
    y, dec_cache = decode_forward(store, z, data.shape[1])
    x_hat = adapt_out(store, pair, y)

    rec = mse_loss(data, x_hat, mask)
    kl = kl_loss(lp) if kind.uses_kl else None
    con = None

    d_mu_all = np.zeros_like(lp_all.mu)
    d_lv_all = np.zeros_like(lp_all.log_var)

    d_y = adapt_out_backward(store, pair, y, weights.lambda_rec * mse_loss_grad(data, x_hat, mask))
    dz = decode_backward(store, dec_cache, d_y)
    if sampled:
        d_mu, d_lv = sample_latent_backward(lp, eps, dz)
        d_mu_all[:n] += d_mu
        d_lv_all[:n] += d_lv
    else:
        d_mu_all[:n] += dz

    if kl is not None:
        g_mu, g_lv = kl_loss_grad(lp)
        d_mu_all[:n] += weights.lambda_kl * g_mu
        d_lv_all[:n] += weights.lambda_kl * g_lv

    if use_con:
        k = triplets.anchor_index.shape[0]
        anchor_mu = lp_all.mu[triplets.anchor_index]
        con, d_a, d_p, d_n = contrastive_loss(anchor_mu, lp_all.mu[n:n + k], lp_all.mu[n + k:], margin)
        np.add.at(d_mu_all, triplets.anchor_index, weights.lambda_con * d_a)
        d_mu_all[n:n + k] += weights.lambda_con * d_p
        d_mu_all[n + k:] += weights.lambda_con * d_n

    d_core = encode_backward(store, enc_cache, d_mu_all, d_lv_all)
    adapt_in_backward(store, pair, x, d_core)

    total = total_loss(rec, kl or 0.0, con or 0.0, weights)
    return LossBreakdown(total, rec, kl, con)


def _check_sequences(sequences: SequenceT[Sequence], pair_dim: Optional[int], T: int) -> None:
    if not sequences:
        raise DataValidationError("training needs at least one sequence")
    shapes = {seq.data.shape for seq in sequences}
    if len(shapes) != 1:
        raise SchemaMismatchError(f"sequences disagree on shape: {sorted(shapes)}")
    seq_T, dim = next(iter(shapes))
    if seq_T != T:
        raise SchemaMismatchError("sequence length does not match the core", T, seq_T)
    if pair_dim is not None and dim != pair_dim:
        raise SchemaMismatchError("sequence features do not match the domain adaptors", pair_dim, dim)


def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _fit(
    bundle: ModelBundle,
    pair: AdaptorPair,
    sequences: SequenceT[Sequence],
    cfg: TrainConfig,
    seed: int,
    phase: str
) -> List[EpochLoss]:
    """
    Mini-batch Adam over the trainable groups

    Batch order depends only on the seed, so every model kind sees the same
    data order for the same seed.
    """
    kind = bundle.kind
    order_rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    data, mask = stack_sequences(sequences)
    opt = OptimizerState(lr=cfg.lr)
    latent = bundle.core_config.latent
    history = []

    bundle.store.zero_grad()
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(sequences))
        sums = {"total": 0.0, "rec": 0.0, "kl": 0.0, "con": 0.0}
        seen_kl = seen_con = False

        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            triplets = None
            if kind.uses_contrastive:
                anchors = [sequences[i] for i in idx]
                built = make_triplets(anchors, sequences, cfg.contrastive, _sub_seed(seed, epoch, b))
                triplets = TripletArrays.from_triplets(built, anchors)
            eps = noise_rng.standard_normal((len(idx), latent)) if kind.samples else None

            result = batch_objective(
                bundle.store, pair, data[idx], mask[idx], kind, cfg.weights,
                cfg.contrastive.margin, eps, triplets
            )
            if not np.isfinite(result.total):
                raise TrainingDivergedError(phase, epoch, b, result.total)
            adam_step(opt, bundle.store)

            weight = len(idx) / len(order)
            sums["total"] += weight * result.total
            sums["rec"] += weight * result.rec
            if result.kl is not None:
                sums["kl"] += weight * result.kl
                seen_kl = True
            if result.con is not None:
                sums["con"] += weight * result.con
                seen_con = True

        record = EpochLoss(
            phase, epoch, sums["total"], sums["rec"],
            sums["kl"] if seen_kl else None,
            sums["con"] if seen_con else None,
        )
        history.append(record)
        logger.debug(f"{phase} epoch {epoch}: {record.to_dict()}")

    logger.info(f"{phase} finished after {cfg.epochs} epochs: {history[-1].to_dict()}")
    return history


def new_bundle(
    core: CoreConfig,
    kind: ModelKind,
    domain: str,
    domain_dim: int,
    seed: int,
    normalizer: Optional[Normalizer] = None,
    schema: Optional[FeatureSchema] = None
) -> ModelBundle:
    """
    Freshly initialized bundle with one domain

    The initialization depends only on (core, domain_dim, seed), so every
    model kind starts from the same weights for a given seed.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    init_core(store, core, rng)
    pair = init_adaptor_pair(store, DomainId(domain), domain_dim, core.core_dim, rng)
    bundle = ModelBundle(store=store, core_config=core, adaptors={domain: pair}, kind=kind)
    if normalizer is not None:
        bundle.normalizers[domain] = normalizer
    bundle.schemas[domain] = schema or FeatureSchema.generic(domain_dim)
    return bundle


@log_performance(logger)
def train_source(
    sequences: SequenceT[Sequence],
    cfg: TrainConfig,
    seed: int,
    core: Optional[CoreConfig] = None,
    kind: ModelKind = ModelKind.CTAL_VAE,
    normalizer: Optional[Normalizer] = None,
    schema: Optional[FeatureSchema] = None,
    domain: str = SOURCE
) -> ModelBundle:
    """
    Phase 1: train the core and the source adaptors jointly

    Args:
        sequences: Unlabeled source windows
        cfg: Optimization settings
        seed: Controls initialization, batch order, noise and triplets
        core: Core dimensions; T defaults to the window length
        kind: Objective family
        normalizer: Source statistics stored in the bundle
        schema: Source feature schema stored in the bundle
        domain: Name of the source domain

    Returns:
        Trained bundle; bundle.history holds the per-epoch losses
    """
    if not sequences:
        raise DataValidationError("train_source needs at least one sequence")
    core = core or CoreConfig(T=sequences[0].data.shape[0])
    _check_sequences(sequences, None, core.T)

    bundle = new_bundle(core, kind, domain, sequences[0].dim, seed, normalizer, schema)
    set_trainable(bundle, TrainScope.all())
    with LoggerContext(logger, phase="source", kind=kind.value, seed=seed):
        bundle.history = _fit(bundle, bundle.adaptor(domain), sequences, cfg, seed, "source")
    return bundle


@log_performance(logger)
def adapt_target(
    bundle: ModelBundle,
    anchors: SequenceT[Sequence],
    cfg: TrainConfig,
    seed: int,
    domain: str = TARGET,
    normalizer: Optional[Normalizer] = None,
    schema: Optional[FeatureSchema] = None,
    n_shots: Optional[int] = DEFAULT_N_SHOTS,
    q: float = DEFAULT_QUANTILE
) -> ModelBundle:
    """
    Phase 2: few-shot fit of the target adaptors with the core frozen

    The anchors double as the benign pool for the target threshold.

    Args:
        bundle: Trained bundle (left unchanged)
        anchors: Exactly n_shots benign target windows
        cfg: Optimization settings of this phase
        seed: Controls adaptor initialization, noise and triplets
        domain: Target domain name
        normalizer: Target statistics stored in the result
        schema: Target feature schema stored in the result
        n_shots: Expected anchor count; None accepts any positive count
        q: Threshold quantile over the anchors' scores

    Returns:
        New bundle with the target domain added
    """
    if not anchors:
        raise DataValidationError("adapt_target needs at least one shot")
    if n_shots is not None and len(anchors) != n_shots:
        raise DataValidationError(f"expected {n_shots} shots, got {len(anchors)}")

    adapted = bundle.copy()
    dim = anchors[0].dim
    if domain in adapted.adaptors:
        pair = adapted.adaptors[domain]
    else:
        warm = next(iter(adapted.adaptors.values()), None)
        rng = np.random.default_rng([seed, 2])
        pair = init_adaptor_pair(adapted.store, DomainId(domain), dim, adapted.core_config.core_dim, rng, warm_from=warm)
        adapted.adaptors[domain] = pair
    _check_sequences(anchors, pair.domain_dim, adapted.core_config.T)

    if normalizer is not None:
        adapted.normalizers[domain] = normalizer
    adapted.schemas[domain] = schema or adapted.schemas.get(domain) or FeatureSchema.generic(dim)

    set_trainable(adapted, TrainScope.adaptors_of(DomainId(domain)))
    with LoggerContext(logger, phase="adapt", kind=adapted.kind.value, seed=seed, domain=domain):
        adapted.history = list(bundle.history) + _fit(adapted, pair, anchors, cfg, seed, "adapt")
        adapted.thresholds[domain] = fit_threshold(score(adapted, domain, anchors), q)
        logger.info(f"Threshold for {domain} fitted at q={q}: {adapted.thresholds[domain]:.6g}")
    return adapted


def score(bundle: ModelBundle, domain: str, sequences: SequenceT[Sequence]) -> List[float]:
    """
    Anomaly score per sequence: masked MSE of the posterior-mean reconstruction

    Output order matches the input order.
    """
    pair = bundle.adaptor(domain)
    if not sequences:
        return []

    scores: List[float] = []
    for start in range(0, len(sequences), SCORE_BATCH):
        data, mask = stack_sequences(sequences[start:start + SCORE_BATCH])
        if data.shape[-1] != pair.domain_dim:
            raise SchemaMismatchError(f"sequences for domain {domain!r}", pair.domain_dim, data.shape[-1])
        lp = encode(bundle.store, adapt_in(bundle.store, pair, data), mask)
        x_hat = adapt_out(bundle.store, pair, decode(bundle.store, lp.mu, data.shape[1]))
        scores.extend(float(s) for s in sequence_mse(data, x_hat, mask))
    return scores


def fit_threshold(benign_scores: SequenceT[float], q: float = DEFAULT_QUANTILE) -> float:
    """
    Nearest-rank q-quantile: the value at 1-based rank ceil(q * n) of the ascending sort
    """
    if len(benign_scores) == 0:
        raise DataValidationError("cannot fit a threshold on an empty score list")
    if not 0 < q <= 1:
        raise DataValidationError(f"quantile must lie in (0, 1], got {q}")
    ordered = sorted(float(s) for s in benign_scores)
    # guard against q * n landing a hair above an integer
    rank = max(1, math.ceil(q * len(ordered) - 1e-9))
    return ordered[rank - 1]


def classify(scores: SequenceT[float], threshold: float) -> List[Label]:
    """Anomalous iff score > threshold"""
    return [Label.ANOMALOUS if s > threshold else Label.BENIGN for s in scores]


def evaluate(predicted: SequenceT[Label], truth: SequenceT[Label]) -> Metrics:
    """Confusion counts, accuracy, sensitivity and MCC (0 when undefined)"""
    if len(predicted) != len(truth):
        raise DataValidationError(f"length mismatch: {len(predicted)} predictions, {len(truth)} labels")
    if not predicted:
        raise DataValidationError("cannot evaluate an empty prediction list")

    tp = tn = fp = fn = 0
    for p, t in zip(predicted, truth):
        if p is Label.ANOMALOUS:
            if t is Label.ANOMALOUS:
                tp += 1
            else:
                fp += 1
        elif t is Label.ANOMALOUS:
            fn += 1
        else:
            tn += 1

    denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denominator) if denominator else 0.0
    return Metrics(
        accuracy=(tp + tn) / len(predicted),
        mcc=mcc,
        sensitivity=tp / (tp + fn) if tp + fn else 0.0,
        tp=tp, tn=tn, fp=fp, fn=fn,
    )


def split_sequences(
    sequences: SequenceT[Sequence],
    fraction: float,
    seed: int
) -> Tuple[List[Sequence], List[Sequence]]:
    """
    Seeded random split into (train, held_out), each keeping input order

    The train part holds round(fraction * n) sequences, at least one.
    """
    if not 0 < fraction <= 1:
        raise DataValidationError(f"split fraction must lie in (0, 1], got {fraction}")
    if not sequences:
        raise DataValidationError("cannot split an empty sequence list")
    n = len(sequences)
    n_train = max(1, int(round(fraction * n)))
    chosen = set(np.random.default_rng(seed).permutation(n)[:n_train].tolist())
    train = [s for i, s in enumerate(sequences) if i in chosen]
    held = [s for i, s in enumerate(sequences) if i not in chosen]
    return train, held


def select_shots(sequences: SequenceT[Sequence], n_shots: int = DEFAULT_N_SHOTS) -> List[Sequence]:
    """
    Earliest window of distinct receivers, receivers in sorted order

    When there are fewer receivers than shots, later windows are taken
    round-robin. Labels are never consulted.
    """
    if n_shots < 1:
        raise DataValidationError(f"n_shots must be >= 1, got {n_shots}")
    if len(sequences) < n_shots:
        raise DataValidationError(f"need {n_shots} windows for the shots, only {len(sequences)} available")

    by_receiver: Dict[str, List[Sequence]] = {}
    for seq in sequences:
        by_receiver.setdefault(seq.receiver, []).append(seq)
    queues = [sorted(by_receiver[r], key=lambda s: s.start_ts) for r in sorted(by_receiver)]

    shots: List[Sequence] = []
    rank = 0
    while len(shots) < n_shots:
        for queue in queues:
            if rank < len(queue) and len(shots) < n_shots:
                shots.append(queue[rank])
        rank += 1
    return shots
