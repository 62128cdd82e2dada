"""
Domain adaptors

Each domain owns an encoder adaptor (domain_dim -> core_dim) and a decoder
adaptor (core_dim -> domain_dim), both single affine layers without
activation. Adaptor parameters live in the bundle's parameter store under
the group 'adaptor:<domain>'.
"""

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np

from utils.logger import get_logger

from .errors import DataValidationError, SchemaMismatchError, UnknownDomainError
from .net_core import ParameterStore, affine, affine_backward, init_affine
from .vae import CORE_GROUP

if TYPE_CHECKING:
    from .checkpoint import ModelBundle

logger = get_logger("ctalvae.adaptors")

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class DomainId:
    """Name of a traffic domain"""
    name: str

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise DataValidationError("domain name must be a non-empty string")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class AdaptorPair:
    """Parameter names and dimensions of one domain's adaptors"""
    domain: DomainId
    domain_dim: int
    core_dim: int

    @property
    def group(self) -> str:
        return adaptor_group(self.domain)

    @property
    def in_prefix(self) -> str:
        return f"adaptor.{self.domain.name}.in"

    @property
    def out_prefix(self) -> str:
        return f"adaptor.{self.domain.name}.out"


def adaptor_group(domain: DomainId) -> str:
    return f"adaptor:{domain.name}"


def init_adaptor_pair(
    store: ParameterStore,
    domain: DomainId,
    domain_dim: int,
    core_dim: int,
    rng: np.random.Generator,
    warm_from: Optional[AdaptorPair] = None,
    identity: bool = False
) -> AdaptorPair:
    """
    Create a domain's adaptor parameters

    Args:
        warm_from: Copy weights from this pair when its dimensions match
        identity: Identity-initialize both maps (square case only)

    Returns:
        The registered AdaptorPair
    """
    if domain_dim < 1 or core_dim < 1:
        raise DataValidationError(f"adaptor dimensions must be positive, got {domain_dim}/{core_dim}")

    pair = AdaptorPair(domain, domain_dim, core_dim)
    if f"{pair.in_prefix}.W" in store:
        raise DataValidationError(f"domain {domain.name!r} already has adaptors")

    warm = warm_from is not None and warm_from.domain_dim == domain_dim and warm_from.core_dim == core_dim
    if warm:
        for suffix in ("in.W", "in.b", "out.W", "out.b"):
            store.add(f"adaptor.{domain.name}.{suffix}",
                      store[f"adaptor.{warm_from.domain.name}.{suffix}"], pair.group)
        logger.debug(f"Adaptors for {domain.name} warm-started from {warm_from.domain.name}")
    else:
        init_affine(store, pair.in_prefix, domain_dim, core_dim, rng, pair.group, identity=identity)
        init_affine(store, pair.out_prefix, core_dim, domain_dim, rng, pair.group, identity=identity)
    return pair


def adapt_in(store: ParameterStore, pair: AdaptorPair, x: np.ndarray) -> np.ndarray:
    """Encoder adaptor over the last axis: (..., domain_dim) -> (..., core_dim)"""
    if np.shape(x)[-1] != pair.domain_dim:
        raise SchemaMismatchError(f"input for domain {pair.domain.name!r}", pair.domain_dim, np.shape(x)[-1])
    return affine(store, pair.in_prefix, x)


def adapt_in_backward(store: ParameterStore, pair: AdaptorPair, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return affine_backward(store, pair.in_prefix, x, dy)


def adapt_out(store: ParameterStore, pair: AdaptorPair, y: np.ndarray) -> np.ndarray:
    """Decoder adaptor over the last axis: (..., core_dim) -> (..., domain_dim)"""
    if np.shape(y)[-1] != pair.core_dim:
        raise SchemaMismatchError(f"core output for domain {pair.domain.name!r}", pair.core_dim, np.shape(y)[-1])
    return affine(store, pair.out_prefix, y)


def adapt_out_backward(store: ParameterStore, pair: AdaptorPair, y: np.ndarray, dx: np.ndarray) -> np.ndarray:
    return affine_backward(store, pair.out_prefix, y, dx)


class ScopeKind(Enum):
    CORE_ONLY = "core_only"
    ADAPTORS_OF = "adaptors_of"
    ALL = "all"


@dataclass(frozen=True)
class TrainScope:
    """Which parameter groups an optimizer may update"""
    kind: ScopeKind
    domain: Optional[DomainId] = None

    @classmethod
    def core_only(cls) -> 'TrainScope':
        return cls(ScopeKind.CORE_ONLY)

    @classmethod
    def adaptors_of(cls, domain: DomainId) -> 'TrainScope':
        return cls(ScopeKind.ADAPTORS_OF, domain)

    @classmethod
    def all(cls) -> 'TrainScope':
        return cls(ScopeKind.ALL)

    def __str__(self) -> str:
        return f"adaptors_of({self.domain})" if self.domain else self.kind.value


def set_trainable(bundle: 'ModelBundle', scope: TrainScope) -> None:
    """
    Set every group's trainable flag exactly per scope; everything else is frozen

    Raises:
        UnknownDomainError: scope names a domain without adaptors
    """
    store = bundle.store
    if scope.kind is ScopeKind.ADAPTORS_OF:
        if scope.domain is None or scope.domain.name not in bundle.adaptors:
            raise UnknownDomainError(f"no adaptors for domain {scope.domain}")
        wanted = {adaptor_group(scope.domain)}
    elif scope.kind is ScopeKind.CORE_ONLY:
        wanted = {CORE_GROUP}
    else:
        wanted = set(store.groups())

    for group in store.groups():
        store.set_trainable(group, group in wanted)
    logger.debug(f"Trainable scope set to {scope}")
