"""
Model bundle and its binary checkpoint container

Layout: the magic bytes b"CTALVAE1", an unsigned 64-bit little-endian
header length, a compact UTF-8 JSON header and then every array as raw
little-endian float32 in directory order. Offsets in the directory are
relative to the first array byte.
"""

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Tuple, Union

import numpy as np

from utils.file_manager import FileManager
from utils.logger import get_logger

from .adaptors import AdaptorPair, DomainId
from .errors import CheckpointFormatError, SchemaMismatchError, UnknownDomainError
from .flow_model import STD_FLOOR, FeatureSchema, Normalizer
from .net_core import ParameterStore
from .vae import CORE_GROUP, CoreConfig

if TYPE_CHECKING:
    from .pipeline import EpochLoss

logger = get_logger("ctalvae.checkpoint")

MAGIC = b"CTALVAE1"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
_LENGTH = struct.Struct("<Q")
_DTYPE = np.dtype("<f4")


class ModelKind(Enum):
    """Objective family a bundle was trained with"""
    CTAL_VAE = "ctal_vae"
    VAE = "vae"
    AE = "ae"

    @property
    def samples(self) -> bool:
        return self is not ModelKind.AE

    @property
    def uses_kl(self) -> bool:
        return self is not ModelKind.AE

    @property
    def uses_contrastive(self) -> bool:
        return self is ModelKind.CTAL_VAE


@dataclass(eq=False)
class ModelBundle:
    """
    Everything needed to score a domain: core and adaptor parameters,
    per-domain feature schema, normalizer and fitted threshold
    """
    store: ParameterStore
    core_config: CoreConfig
    adaptors: Dict[str, AdaptorPair] = field(default_factory=dict)
    normalizers: Dict[str, Normalizer] = field(default_factory=dict)
    schemas: Dict[str, FeatureSchema] = field(default_factory=dict)
    kind: ModelKind = ModelKind.CTAL_VAE
    thresholds: Dict[str, float] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    history: List['EpochLoss'] = field(default_factory=list)

    def __post_init__(self):
        for name, pair in self.adaptors.items():
            if pair.core_dim != self.core_config.core_dim:
                raise SchemaMismatchError(
                    f"adaptor core side of domain {name!r} does not match the core",
                    self.core_config.core_dim, pair.core_dim
                )
        if self.format_version not in SUPPORTED_VERSIONS:
            raise CheckpointFormatError(f"unsupported format version {self.format_version}")

    def adaptor(self, domain: Union[str, DomainId]) -> AdaptorPair:
        name = str(domain)
        if name not in self.adaptors:
            raise UnknownDomainError(f"bundle has no domain {name!r}; known: {sorted(self.adaptors)}")
        return self.adaptors[name]

    def copy(self) -> 'ModelBundle':
        """Independent copy; parameter arrays are duplicated"""
        return ModelBundle(
            store=self.store.copy(),
            core_config=self.core_config,
            adaptors=dict(self.adaptors),
            normalizers={k: Normalizer(v.mean.copy(), v.std.copy()) for k, v in self.normalizers.items()},
            schemas=dict(self.schemas),
            kind=self.kind,
            thresholds=dict(self.thresholds),
            format_version=self.format_version,
            history=list(self.history),
        )


def core_bytes(bundle: ModelBundle) -> bytes:
    """Serialized core region (float32 LE, store order)"""
    return bundle.store.group_bytes(CORE_GROUP)


def _arrays(bundle: ModelBundle) -> List[Tuple[str, str, np.ndarray]]:
    arrays = [(p.name, p.group, p.value) for p in bundle.store]
    for name in bundle.adaptors:
        if name in bundle.normalizers:
            norm = bundle.normalizers[name]
            arrays.append((f"normalizer.{name}.mean", f"normalizer:{name}", norm.mean))
            arrays.append((f"normalizer.{name}.std", f"normalizer:{name}", norm.std))
    return arrays


def serialize_bundle(bundle: ModelBundle) -> bytes:
    """Encode a bundle into the checkpoint container"""
    directory, blobs, offset = [], [], 0
    for name, group, value in _arrays(bundle):
        blob = np.ascontiguousarray(value, dtype=_DTYPE).tobytes()
        directory.append({"name": name, "group": group, "shape": list(value.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format_version": bundle.format_version,
        "kind": bundle.kind.value,
        "core_config": bundle.core_config.to_dict(),
        "domains": [
            {
                "name": name,
                "domain_dim": pair.domain_dim,
                "schema": list(bundle.schemas[name].names) if name in bundle.schemas else None,
                "normalized": name in bundle.normalizers,
            }
            for name, pair in bundle.adaptors.items()
        ],
        "thresholds": {k: float(v) for k, v in sorted(bundle.thresholds.items())},
        "arrays": directory,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + _LENGTH.pack(len(encoded)) + encoded + b"".join(blobs)


def _read_header(data: bytes) -> Tuple[Dict[str, Any], int]:
    if len(data) < len(MAGIC) + _LENGTH.size or data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic bytes)")
    start = len(MAGIC) + _LENGTH.size
    (length,) = _LENGTH.unpack_from(data, len(MAGIC))
    if start + length > len(data):
        raise CheckpointFormatError("checkpoint header is truncated")
    try:
        header = json.loads(data[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"checkpoint header is not valid JSON: {e}")
    if not isinstance(header, dict):
        raise CheckpointFormatError("checkpoint header must be a JSON object")
    version = header.get("format_version")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointFormatError(f"unsupported checkpoint format version {version!r}")
    return header, start + length


def deserialize_bundle(data: bytes) -> ModelBundle:
    """Decode a checkpoint container"""
    header, base = _read_header(data)
    try:
        core_config = CoreConfig.from_dict(header["core_config"])
        kind = ModelKind(header["kind"])
        domains = header["domains"]
        directory = header["arrays"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"checkpoint header is incomplete: {e}")

    payload = memoryview(data)[base:]
    expected = sum(int(np.prod(entry["shape"], dtype=np.int64)) * _DTYPE.itemsize for entry in directory)
    if len(payload) != expected:
        raise CheckpointFormatError(f"checkpoint payload has {len(payload)} bytes, directory needs {expected}")

    store = ParameterStore()
    extras: Dict[str, np.ndarray] = {}
    adaptors, normalizers, schemas = {}, {}, {}
    try:
        for entry in directory:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            offset = entry["offset"]
            value = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)
            if entry["group"].startswith("normalizer:"):
                extras[entry["name"]] = value
            else:
                store.add(entry["name"], value, entry["group"])

        for domain in domains:
            name = domain["name"]
            adaptors[name] = AdaptorPair(DomainId(name), int(domain["domain_dim"]), core_config.core_dim)
            if domain.get("schema") is not None:
                schemas[name] = FeatureSchema(tuple(domain["schema"]))
            if domain.get("normalized"):
                std = np.maximum(extras[f"normalizer.{name}.std"], STD_FLOOR)
                normalizers[name] = Normalizer(extras[f"normalizer.{name}.mean"], std)
    except CheckpointFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"checkpoint directory is inconsistent: missing or malformed {e}")

    return ModelBundle(
        store=store,
        core_config=core_config,
        adaptors=adaptors,
        normalizers=normalizers,
        schemas=schemas,
        kind=kind,
        thresholds={k: float(v) for k, v in header.get("thresholds", {}).items()},
        format_version=header["format_version"],
    )


def save_bundle(bundle: ModelBundle, path: Union[str, Path]) -> Path:
    """Write a checkpoint atomically"""
    data = serialize_bundle(bundle)
    written = FileManager().write_bytes(path, data)
    logger.info(f"Saved {bundle.kind.value} checkpoint ({len(data)} bytes) to {written}")
    return written


def load_bundle(path: Union[str, Path]) -> ModelBundle:
    bundle = deserialize_bundle(FileManager().read_bytes(path))
    logger.debug(f"Loaded checkpoint {path} with domains {list(bundle.adaptors)}")
    return bundle
