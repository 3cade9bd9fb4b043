"""Keyed pseudorandomness for sampling, scheduling and seed derivation.

Every draw is a keyed BLAKE2b digest of a domain-separation byte followed by
fixed-width big-endian integers; the first 8 digest bytes divided by 2**64
give a value in [0, 1).  Nothing here holds mutable state.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

KEY_ENV_VAR = "MIRRORMARK_KEY"

# Domain-separation tags, one per call site.
TAG_SAMPLING = b"\x01"
TAG_FRAME = b"\x02"
TAG_CABS_CHOICE = b"\x03"
TAG_NAIVE_POSITION = b"\x04"
TAG_SEED = b"\x05"

_TWO_64 = float(2**64)


class ConfigError(ValueError):
    """Raised for inconsistent watermark configuration."""


@dataclass(frozen=True)
class SecretKey:
    data: bytes

    def __post_init__(self):
        if not isinstance(self.data, (bytes, bytearray)):
            raise TypeError("key material must be bytes")
        if len(self.data) < 16:
            raise ConfigError("secret key must be at least 16 bytes")
        object.__setattr__(self, "data", bytes(self.data))

    @classmethod
    def from_hex(cls, text: str) -> "SecretKey":
        return cls(bytes.fromhex(text.strip()))

    @classmethod
    def from_env(cls, var: str = KEY_ENV_VAR) -> "SecretKey":
        value = os.environ.get(var)
        if not value:
            raise ConfigError(f"environment variable {var} is not set")
        return cls.from_hex(value)

    def hex(self) -> str:
        return self.data.hex()

    @property
    def mac_key(self) -> bytes:
        # BLAKE2b accepts at most 64 key bytes; longer keys are compressed first.
        if len(self.data) <= 64:
            return self.data
        return hashlib.blake2b(self.data, digest_size=64).digest()

    def __repr__(self) -> str:
        return f"SecretKey(<{len(self.data)} bytes>)"


@dataclass(frozen=True)
class ContextWindow:
    """The ``h`` tokens preceding a generation step."""

    tokens: tuple
    h: int

    def __post_init__(self):
        toks = tuple(int(t) for t in self.tokens)
        if len(toks) != self.h:
            raise ConfigError(
                f"context window has {len(toks)} tokens, expected h={self.h}"
            )
        if any(t < 0 for t in toks):
            raise ConfigError("token ids must be non-negative")
        object.__setattr__(self, "tokens", toks)


ContextLike = Union[ContextWindow, Sequence[int]]


def _context_bytes(context: ContextLike) -> bytes:
    toks = context.tokens if isinstance(context, ContextWindow) else tuple(context)
    return struct.pack(">I", len(toks)) + b"".join(struct.pack(">Q", int(t)) for t in toks)


def _to_unit(digest: bytes) -> float:
    return int.from_bytes(digest[:8], "big") / _TWO_64


def _hasher(key: SecretKey, tag: bytes, payload: bytes):
    h = hashlib.blake2b(key=key.mac_key, digest_size=16)
    h.update(tag)
    h.update(payload)
    return h


def prf_uniform(key: SecretKey, context: ContextLike, token_id: int, layer: int) -> float:
    """Pseudorandom value in [0, 1) for ``token_id`` at tournament ``layer``."""
    if layer < 1:
        raise ValueError("layer must be >= 1")
    if token_id < 0:
        raise ValueError("token_id must be >= 0")
    h = _hasher(key, TAG_SAMPLING, _context_bytes(context))
    h.update(struct.pack(">QI", int(token_id), int(layer)))
    return _to_unit(h.digest())


def prf_uniform_many(
    key: SecretKey, context: ContextLike, token_ids: Iterable[int], layer: int
) -> np.ndarray:
    """Vector form of :func:`prf_uniform` sharing the context prefix."""
    if layer < 1:
        raise ValueError("layer must be >= 1")
    base = _hasher(key, TAG_SAMPLING, _context_bytes(context))
    out = []
    for tok in token_ids:
        h = base.copy()
        h.update(struct.pack(">QI", int(tok), int(layer)))
        out.append(_to_unit(h.digest()))
    return np.asarray(out, dtype=float)


def layer_randomness(
    key: SecretKey, context: ContextLike, token_ids: Sequence[int], n_layers: int
) -> np.ndarray:
    """Matrix of draws with shape ``(n_layers, len(token_ids))``; row l is layer l+1."""
    return np.vstack(
        [prf_uniform_many(key, context, token_ids, layer) for layer in range(1, n_layers + 1)]
    ) if n_layers > 0 else np.empty((0, len(token_ids)))


def frame_hash(key: SecretKey, window: Sequence[int]) -> int:
    """64-bit keyed digest of a (possibly empty) token window."""
    h = _hasher(key, TAG_FRAME, _context_bytes(window))
    return int.from_bytes(h.digest()[:8], "big")


def tagged_uniform(key: SecretKey, tag: bytes, context: ContextLike) -> float:
    """Context-only draw under a caller-chosen domain tag (scheduler choices)."""
    return _to_unit(_hasher(key, tag, _context_bytes(context)).digest())


def derive_seed(master_seed: int, index: int) -> int:
    """Per-sequence 63-bit seed; independent of worker scheduling."""
    h = hashlib.blake2b(digest_size=8)
    h.update(TAG_SEED)
    h.update(struct.pack(">QQ", int(master_seed) % 2**64, int(index) % 2**64))
    return int.from_bytes(h.digest(), "big") >> 1
