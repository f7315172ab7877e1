"""Deterministic cryptographic primitives and the shared key store.

Hashing is SHA-256; MACs are keyed BLAKE2b truncated to 16 bytes.  Node
signatures (used only by the resilient tree-rebuild variant) are an ideal
oracle: verification succeeds exactly for blobs the oracle issued, standing
in for real public-key signatures.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import wire
from .errors import ConfigError, ProtocolViolation

NodeId = int

BS_ID: NodeId = 0

# Reserved marker a node MACs together with the session nonce when it
# acknowledges a result ("OK", 0x4F4B).
OK = b"\x4f\x4b"

KEY_LEN = 32


def hash_bytes(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def mac(key: bytes, message: bytes) -> bytes:
    return hashlib.blake2b(message, key=key, digest_size=wire.ACK_LEN).digest()


def mac_long(key: bytes, message: bytes) -> bytes:
    """Full-width keyed hash, used for key derivation only."""
    return hashlib.blake2b(message, key=key, digest_size=KEY_LEN).digest()


def node_ack(key: bytes, nonce: bytes) -> bytes:
    """The acknowledgement code a node releases for session `nonce`."""
    return mac(key, nonce + OK)


ZERO_ACK = b"\x00" * wire.ACK_LEN


def xor_acks(acks: list[bytes]) -> bytes:
    """XOR-combine acknowledgement codes; identity is the all-zero ack."""
    out = bytearray(ZERO_ACK)
    for a in acks:
        if len(a) != wire.ACK_LEN:
            raise ProtocolViolation(f"ack of length {len(a)}, expected {wire.ACK_LEN}")
        for i, b in enumerate(a):
            out[i] ^= b
    return bytes(out)


@dataclass(frozen=True)
class AuthEnvelope:
    payload: bytes
    tag: bytes

    @property
    def size(self) -> int:
        return wire.framed_size(len(self.payload), len(self.tag))

    def to_bytes(self) -> bytes:
        return wire.frame(self.payload, self.tag)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuthEnvelope":
        payload, tag = wire.unframe(data)
        return cls(payload, tag)


def auth_wrap(key: bytes, payload: bytes) -> AuthEnvelope:
    return AuthEnvelope(payload, mac(key, payload))


def auth_verify(key: bytes, envelope: AuthEnvelope) -> bool:
    return envelope.tag == mac(key, envelope.payload)


class KeyStore:
    """Per-node BS keys and per-edge link keys, derived from a master seed."""

    def __init__(self, master_seed: bytes):
        self._master = mac_long(b"\x00" * KEY_LEN, b"master" + master_seed)
        self._bs_keys: dict[NodeId, bytes] = {}
        self._link_keys: dict[tuple[NodeId, NodeId], bytes] = {}

    def register_node(self, node: NodeId) -> None:
        if node == BS_ID:
            raise ConfigError("the BS id cannot be registered as a sensor")
        self._bs_keys[node] = mac_long(self._master, b"bs" + wire.u16(node))

    def register_edge(self, a: NodeId, b: NodeId) -> None:
        lo, hi = min(a, b), max(a, b)
        self._link_keys[(lo, hi)] = mac_long(
            self._master, b"link" + wire.u16(lo) + wire.u16(hi)
        )

    def bs_key(self, node: NodeId) -> bytes:
        try:
            return self._bs_keys[node]
        except KeyError:
            raise ConfigError(f"no BS key for node {node}") from None

    def link_key(self, a: NodeId, b: NodeId) -> bytes:
        lo, hi = min(a, b), max(a, b)
        try:
            return self._link_keys[(lo, hi)]
        except KeyError:
            raise ConfigError(f"no link key for edge ({a}, {b})") from None

    def has_node(self, node: NodeId) -> bool:
        return node in self._bs_keys

    @property
    def nodes(self) -> set[NodeId]:
        return set(self._bs_keys)


@dataclass(frozen=True)
class SignedBlob:
    signer: NodeId
    payload: bytes
    token: bytes

    @property
    def size(self) -> int:
        return wire.framed_size(wire.NODE_ID_LEN, len(self.payload), len(self.token))


class SignatureOracle:
    """Ideal signatures: a simulation-private secret no node can read.

    Unforgeable within a run because only the oracle (the engine) holds the
    secret; faulty nodes can replay blobs but never mint one for another id.
    """

    def __init__(self, master_seed: bytes):
        self._secret = mac_long(b"\x01" * KEY_LEN, b"sig" + master_seed)

    def sign(self, node: NodeId, payload: bytes) -> SignedBlob:
        token = mac(self._secret, wire.u16(node) + payload)
        return SignedBlob(node, payload, token)

    def verify(self, node: NodeId, blob: SignedBlob) -> bool:
        if blob.signer != node:
            return False
        return blob.token == mac(self._secret, wire.u16(node) + blob.payload)
