"""Sentence embedding providers: signed feature hashing, a remote HTTP service, and a disk cache."""
from __future__ import annotations

import hashlib
import logging
import os
import re
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .errors import ConfigError, ProviderError

log = logging.getLogger(__name__)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str
    degenerate: bool = False

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass
class EmbeddingProviderConfig:
    kind: str = "hashing"
    dimension: int = 256
    endpoint: str | None = None
    token_env: str = "EMBEDDING_API_TOKEN"
    batch_size: int = 32
    max_retries: int = 3
    backoff: float = 0.5
    timeout: float = 30.0
    max_in_flight: int = 4
    model: str | None = None

    def __post_init__(self):
        if self.kind not in ("hashing", "remote"):
            raise ConfigError(f"unknown embedding provider kind {self.kind!r}")
        if self.dimension < 8:
            raise ConfigError(f"embedding dimension must be >= 8, got {self.dimension}")
        if self.batch_size < 1:
            raise ConfigError("embedding batch size must be >= 1")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigError("remote embedding provider needs an endpoint")


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _unit(values: np.ndarray, provider_id: str) -> EmbeddingVector:
    norm = float(np.linalg.norm(values))
    if norm == 0.0 or not np.isfinite(norm):
        basis = np.zeros(values.shape[0])
        basis[0] = 1.0
        return EmbeddingVector(basis, provider_id, degenerate=True)
    return EmbeddingVector(values / norm, provider_id)


def embed_hashing(text: str, d: int = 256) -> EmbeddingVector:
    """Signed hashing-trick bag of words.

    Each token's FNV-1a hash picks bucket ``h % d``; the sign is +1 when ``h``
    has an even number of set bits. Texts without tokens map to e_0, flagged
    degenerate.
    """
    if d < 8:
        raise ConfigError(f"embedding dimension must be >= 8, got {d}")
    acc = np.zeros(d)
    for token in tokenize(text):
        h = fnv1a_64(token.encode("utf-8"))
        acc[h % d] += -1.0 if bin(h).count("1") & 1 else 1.0
    return _unit(acc, f"hashing-fnv1a64-d{d}")


class HashingEmbedder:
    kind = "hashing"

    def __init__(self, dimension: int = 256):
        if dimension < 8:
            raise ConfigError(f"embedding dimension must be >= 8, got {dimension}")
        self.dimension = dimension
        self.provider_id = f"hashing-fnv1a64-d{dimension}"
        self.calls = 0

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        self.calls += len(texts)
        return [embed_hashing(t, self.dimension) for t in texts]


class RemoteEmbedder:
    """Client for a JSON embedding service.

    Request body ``{"input": [...]}``, response ``{"embeddings": [[...], ...]}``.
    """

    kind = "remote"

    def __init__(self, cfg: EmbeddingProviderConfig, session: requests.Session | None = None):
        if cfg.kind != "remote":
            raise ConfigError("RemoteEmbedder needs a remote config")
        self.cfg = cfg
        self.dimension = cfg.dimension
        self.provider_id = f"remote:{cfg.model or cfg.endpoint}:d{cfg.dimension}"
        self.session = session or requests.Session()
        self.calls = 0
        self.retries = 0
        self._lock = threading.Lock()

    def _token(self) -> str:
        token = os.environ.get(self.cfg.token_env)
        if not token:
            raise ConfigError(f"environment variable {self.cfg.token_env} is not set")
        return token

    def _post(self, batch: Sequence[str], batch_index: int, token: str) -> list[list[float]]:
        attempts = self.cfg.max_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                with self._lock:
                    self.retries += 1
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                with self._lock:
                    self.calls += 1
                resp = self.session.post(
                    self.cfg.endpoint,
                    json={"input": list(batch)},
                    headers={"Authorization": f"Bearer {token}"},
                    timeout=self.cfg.timeout,
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = ProviderError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise ProviderError(
                        f"embedding request for batch {batch_index} rejected: HTTP {resp.status_code}",
                        batch_index, attempt + 1)
                vectors = resp.json()["embeddings"]
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                last = exc
                continue
            if len(vectors) != len(batch):
                raise ProviderError(
                    f"batch {batch_index}: expected {len(batch)} embeddings, got {len(vectors)}",
                    batch_index, attempt + 1)
            return vectors
        raise ProviderError(
            f"embedding batch {batch_index} failed after {attempts} attempts: {last}", batch_index, attempts)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            return []
        token = self._token()
        size = self.cfg.batch_size
        batches = [texts[i:i + size] for i in range(0, len(texts), size)]
        with ThreadPoolExecutor(max_workers=max(1, self.cfg.max_in_flight)) as pool:
            results = list(pool.map(lambda ib: self._post(ib[1], ib[0], token), enumerate(batches)))
        out = []
        for raw in results:
            for vec in raw:
                arr = np.asarray(vec, dtype=np.float64)
                if arr.ndim != 1 or arr.shape[0] != self.dimension:
                    raise ConfigError(
                        f"remote embedding dimension {arr.shape[-1] if arr.ndim else 0} "
                        f"does not match configured {self.dimension}")
                out.append(_unit(arr, self.provider_id))
        return out


class CachedEmbedder:
    """Wrap a provider with a one-file-per-text disk cache.

    Files hold an 8-byte little-endian dimension header followed by float32
    little-endian values. Vectors are returned as stored, so cache hits and
    misses yield identical values.
    """

    def __init__(self, provider, store):
        self.provider = provider
        self.store = Path(store)
        self.store.mkdir(parents=True, exist_ok=True)
        self.provider_id = provider.provider_id
        self.dimension = provider.dimension
        self.kind = provider.kind
        self.hits = 0
        self.misses = 0
        self.warnings: list[str] = []
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    @property
    def calls(self):
        return self.provider.calls

    def key(self, text: str) -> str:
        content = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return hashlib.sha256(f"{self.provider_id}\0{self.dimension}\0{content}".encode()).hexdigest()

    def _path(self, key: str) -> Path:
        return self.store / key[:2] / f"{key}.f32"

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def _read(self, path: Path) -> np.ndarray | None:
        if not path.exists():
            return None
        data = path.read_bytes()
        if len(data) < 8:
            raise ValueError("truncated header")
        (dim,) = struct.unpack("<Q", data[:8])
        if dim != self.dimension or len(data) != 8 + 4 * dim:
            raise ValueError(f"bad payload (dim {dim}, {len(data)} bytes)")
        values = np.frombuffer(data[8:], dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite values")
        return values

    def _write(self, path: Path, values: np.ndarray) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_bytes(struct.pack("<Q", values.shape[0]) + values.astype("<f4").tobytes())
        os.replace(tmp, path)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector | None] = [None] * len(texts)
        missing: dict[str, list[int]] = {}
        for i, text in enumerate(texts):
            path = self._path(self.key(text))
            try:
                values = self._read(path)
            except ValueError as exc:
                msg = f"corrupt embedding cache entry {path.name} ({exc}); recomputing"
                log.warning(msg)
                self.warnings.append(msg)
                values = None
            if values is None:
                missing.setdefault(text, []).append(i)
            else:
                self.hits += 1
                out[i] = EmbeddingVector(values, self.provider_id, _is_e0(values))
        if missing:
            uniq = list(missing)
            fresh = self.provider.embed(uniq)
            for text, vec in zip(uniq, fresh):
                self.misses += 1
                stored = vec.values.astype("<f4").astype(np.float64)
                with self._lock_for(self.key(text)):
                    self._write(self._path(self.key(text)), stored)
                for i in missing[text]:
                    out[i] = EmbeddingVector(stored, self.provider_id, vec.degenerate)
        return out  # type: ignore[return-value]


def _is_e0(values: np.ndarray) -> bool:
    return values[0] == 1.0 and not np.any(values[1:])


def cached(provider, store) -> CachedEmbedder:
    return CachedEmbedder(provider, store)


def make_embedder(cfg: EmbeddingProviderConfig, cache_dir=None):
    provider = HashingEmbedder(cfg.dimension) if cfg.kind == "hashing" else RemoteEmbedder(cfg)
    if cache_dir is not None:
        provider = CachedEmbedder(provider, Path(cache_dir) / "embeddings")
    return provider


def as_matrix(vectors: Sequence[EmbeddingVector]) -> np.ndarray:
    if not vectors:
        raise ConfigError("no vectors given")
    dims = {v.dimension for v in vectors}
    if len(dims) != 1:
        raise ConfigError(f"vectors have mixed dimensions {sorted(dims)}")
    return np.vstack([v.values for v in vectors])
