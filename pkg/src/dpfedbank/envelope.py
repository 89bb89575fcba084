"""Wire format for client updates.

Payload bytes are a little-endian uint32 length followed by that many
little-endian IEEE-754 doubles. The digest is SHA-256 over the payload and the
authentication tag is HMAC-SHA-256 over ``digest || round (uint64 LE) ||
client_id (uint32 LE)``, so a stale envelope fails authentication in any
later round.
"""
from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    round: int
    payload: bytes
    eps_declared: float
    pre_clip_norm: float
    digest: bytes
    auth_tag: bytes

    def with_payload_byte(self, index: int, value: int) -> "ClientUpdate":
        """Copy with one payload byte overwritten; digest and tag are left stale."""
        buf = bytearray(self.payload)
        buf[index % len(buf)] = value
        return replace(self, payload=bytes(buf))


def encode_vector(vec: np.ndarray) -> bytes:
    vec = np.asarray(vec, dtype="<f8")
    if vec.ndim != 1:
        raise DimensionMismatch("only 1-D vectors can be encoded")
    return struct.pack("<I", vec.size) + vec.tobytes()


def decode_vector(payload: bytes) -> np.ndarray:
    if len(payload) < 4:
        raise ValueError("payload too short")
    (n,) = struct.unpack_from("<I", payload)
    if len(payload) != 4 + 8 * n:
        raise ValueError(f"payload declares {n} values but carries {len(payload) - 4} bytes")
    return np.frombuffer(payload, dtype="<f8", offset=4).astype(np.float64)


def payload_digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def auth_tag(key: bytes, digest: bytes, round_: int, client_id: int) -> bytes:
    msg = digest + struct.pack("<QI", round_, client_id)
    return hmac.new(key, msg, hashlib.sha256).digest()


def seal(client_id: int, round_: int, vec: np.ndarray, key: bytes,
         eps_declared: float = 0.0, pre_clip_norm: float = 0.0) -> ClientUpdate:
    payload = encode_vector(vec)
    digest = payload_digest(payload)
    return ClientUpdate(
        client_id=client_id,
        round=round_,
        payload=payload,
        eps_declared=float(eps_declared),
        pre_clip_norm=float(pre_clip_norm),
        digest=digest,
        auth_tag=auth_tag(key, digest, round_, client_id),
    )


def derive_client_key(master_seed: int, client_id: int) -> bytes:
    """Deterministic per-client pre-shared key for simulation runs."""
    return hmac.new(struct.pack("<Q", master_seed), b"client-key" + struct.pack("<I", client_id),
                    hashlib.sha256).digest()
