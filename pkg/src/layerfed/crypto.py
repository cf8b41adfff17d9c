"""Additively homomorphic transport for parameter arrays.

Values are quantized by a signed fixed-point codec, encrypted element-wise
under a textbook Paillier scheme (g = n + 1 variant), and aggregated by
ciphertext multiplication, which adds the underlying plaintexts.  The
recipient decrypts the sums and divides by the accumulated count to
recover the federated mean within quantization error.

Keys here are for simulation and testing; 512-bit moduli keep tests fast,
and at least 2048 bits would be required for any real deployment.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, EncodingError, InputError, ProtocolError
from .models import ParamView

MIN_KEY_BITS = 512
WIRE_HEADER = "cipherparams v1"


@dataclass(frozen=True)
class PublicKey:
    n: int

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(hex(self.n).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PrivateKey:
    public: PublicKey
    lam: int
    mu: int


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: PrivateKey
    key_bits: int


def _random_prime(rng: random.Random, bits: int) -> int:
    from sympy import nextprime

    # top two bits forced so p*q lands on the requested modulus size
    candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
    return int(nextprime(candidate))


def keygen(key_bits: int = MIN_KEY_BITS, seed: int = 0) -> KeyPair:
    """Deterministic keypair with an exactly key_bits-long modulus."""
    if key_bits < MIN_KEY_BITS:
        raise ConfigError(f"key_bits must be >= {MIN_KEY_BITS}, got {key_bits}")
    rng = random.Random(seed ^ 0x5EC5EC)
    half = key_bits // 2
    while True:
        p = _random_prime(rng, half)
        q = _random_prime(rng, key_bits - half)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == key_bits:
            break
    phi = (p - 1) * (q - 1)
    mu = pow(phi, -1, n)
    public = PublicKey(n)
    return KeyPair(public, PrivateKey(public, phi, mu), key_bits)


def encrypt(public: PublicKey, plaintext: int, rng: random.Random) -> int:
    """Encrypt one integer in [0, n)."""
    n = public.n
    if not 0 <= plaintext < n:
        raise InputError("plaintext outside [0, n)")
    nsq = public.nsquare
    r = rng.randrange(1, n)
    # g = n + 1 gives g^m = 1 + m*n (mod n^2)
    return ((1 + plaintext * n) % nsq) * pow(r, n, nsq) % nsq


def decrypt(secret: PrivateKey, ciphertext: int) -> int:
    n = secret.public.n
    nsq = secret.public.nsquare
    if not 0 <= ciphertext < nsq:
        raise InputError("ciphertext outside [0, n^2)")
    u = pow(ciphertext, secret.lam, nsq)
    return ((u - 1) // n) * secret.mu % n


def add_ciphertexts(public: PublicKey, a: int, b: int) -> int:
    return a * b % public.nsquare


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point encoding into the Paillier plaintext ring."""

    scale_bits: int = 16
    clamp_range: float = 8.0

    def __post_init__(self) -> None:
        if self.scale_bits < 1:
            raise ConfigError(f"scale_bits must be >= 1, got {self.scale_bits}")
        if self.clamp_range <= 0:
            raise ConfigError(f"clamp_range must be positive, got {self.clamp_range}")

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    def encode_array(self, values: np.ndarray, n: int) -> list[int]:
        out = []
        for i, v in enumerate(np.asarray(values, dtype=np.float64)):
            if not np.isfinite(v) or abs(v) > self.clamp_range:
                raise EncodingError(f"value {v!r} at index {i} outside clamp range {self.clamp_range}")
            q = int(round(v * self.scale))
            out.append(q % n)
        return out

    def decode_array(self, encodings: Sequence[int], n: int) -> np.ndarray:
        half = n // 2
        out = np.zeros(len(encodings))
        for i, m in enumerate(encodings):
            signed = m - n if m > half else m
            out[i] = signed / self.scale
        return out


@dataclass(frozen=True)
class CipherParams:
    """Encrypted flat parameters of one layer plus encoding metadata."""

    layer_name: str
    ciphertexts: tuple
    codec: FixedPointCodec
    count: int
    key_fingerprint: str

    def __len__(self) -> int:
        return len(self.ciphertexts)


def sec_trans(params: ParamView, public: PublicKey, codec: FixedPointCodec, rng: random.Random) -> CipherParams:
    """Quantize and encrypt a layer's parameters for the recipient key."""
    encodings = codec.encode_array(params.values, public.n)
    ciphertexts = tuple(encrypt(public, m, rng) for m in encodings)
    return CipherParams(params.layer_name, ciphertexts, codec, 1, public.fingerprint)


def hom_aggregate(ciphers: Sequence[CipherParams], public: PublicKey) -> CipherParams:
    """Element-wise homomorphic sum; counts accumulate for later mean recovery."""
    if not ciphers:
        raise InputError("cannot aggregate an empty cipher list")
    first = ciphers[0]
    for c in ciphers[1:]:
        if c.key_fingerprint != first.key_fingerprint:
            raise ProtocolError("ciphertexts under different keys")
        if c.codec != first.codec:
            raise ProtocolError("ciphertexts with different codecs")
        if c.layer_name != first.layer_name:
            raise ProtocolError(f"layer mismatch: {c.layer_name!r} vs {first.layer_name!r}")
        if len(c) != len(first):
            raise ProtocolError("ciphertext arrays differ in length")
    if first.key_fingerprint != public.fingerprint:
        raise ProtocolError("aggregation key does not match the ciphertexts")
    nsq = public.nsquare
    acc = list(first.ciphertexts)
    for c in ciphers[1:]:
        acc = [a * b % nsq for a, b in zip(acc, c.ciphertexts)]
    return CipherParams(first.layer_name, tuple(acc), first.codec, sum(c.count for c in ciphers), first.key_fingerprint)


def decrypt_params(cipher: CipherParams, secret: PrivateKey) -> np.ndarray:
    """Decrypt to the plaintext sum of the accumulated contributions."""
    if cipher.key_fingerprint != secret.public.fingerprint:
        raise ProtocolError("cipher does not match the decryption key")
    encodings = [decrypt(secret, c) for c in cipher.ciphertexts]
    return cipher.codec.decode_array(encodings, secret.public.n)


def decrypt_mean(cipher: CipherParams, secret: PrivateKey) -> np.ndarray:
    return decrypt_params(cipher, secret) / cipher.count


def enc_strength(key_bits: int) -> float:
    """Operational encryption strength: key size relative to 4096 bits, clamped to 1."""
    return min(key_bits / 4096.0, 1.0)


def transfer_efficiency(plaintext_bytes: int, ciphertext_bytes: int) -> float:
    if plaintext_bytes < 0 or ciphertext_bytes <= 0:
        raise InputError("byte counts must be positive")
    return plaintext_bytes / ciphertext_bytes


def security_metric(enc_strength_value: float, trans_efficiency_value: float, gamma: float) -> float:
    """Weighted blend of encryption strength and transmission efficiency."""
    for name, v in (
        ("enc_strength", enc_strength_value),
        ("trans_efficiency", trans_efficiency_value),
        ("gamma", gamma),
    ):
        if not 0.0 <= v <= 1.0:
            raise InputError(f"{name} must be in [0, 1], got {v}")
    return gamma * enc_strength_value + (1.0 - gamma) * trans_efficiency_value


def serialize_cipher(cipher: CipherParams) -> bytes:
    """Wire format: text header, then length-prefixed big-endian ciphertexts."""
    header = "\n".join(
        [
            WIRE_HEADER,
            f"layer_name {cipher.layer_name}",
            f"scale_bits {cipher.codec.scale_bits}",
            f"clamp_range {format(cipher.codec.clamp_range, '.17g')}",
            f"count {cipher.count}",
            f"fingerprint {cipher.key_fingerprint}",
            f"values {len(cipher.ciphertexts)}",
        ]
    )
    chunks = [header.encode() + b"\n"]
    for c in cipher.ciphertexts:
        raw = c.to_bytes((c.bit_length() + 7) // 8 or 1, "big")
        chunks.append(struct.pack(">I", len(raw)))
        chunks.append(raw)
    return b"".join(chunks)


def deserialize_cipher(data: bytes) -> CipherParams:
    try:
        head_end = data.index(b"\nvalues ")
        line_end = data.index(b"\n", head_end + 1)
    except ValueError as exc:
        raise InputError("malformed cipher wire data") from exc
    header_lines = data[:line_end].decode().splitlines()
    if header_lines[0] != WIRE_HEADER:
        raise InputError("not a cipherparams blob")
    fields = dict(line.split(" ", 1) for line in header_lines[1:])
    n_values = int(fields["values"])
    pos = line_end + 1
    ciphertexts = []
    for _ in range(n_values):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        ciphertexts.append(int.from_bytes(data[pos : pos + length], "big"))
        pos += length
    codec = FixedPointCodec(int(fields["scale_bits"]), float(fields["clamp_range"]))
    return CipherParams(fields["layer_name"], tuple(ciphertexts), codec, int(fields["count"]), fields["fingerprint"])


def dump_keypair(kp: KeyPair) -> str:
    return "\n".join(
        [
            "paillier-keypair v1",
            f"key_bits {kp.key_bits}",
            f"n {hex(kp.public.n)}",
            f"lam {hex(kp.secret.lam)}",
            f"mu {hex(kp.secret.mu)}",
        ]
    ) + "\n"


def parse_keypair(text: str) -> KeyPair:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "paillier-keypair v1":
        raise InputError("not a keypair file")
    fields = dict(line.split(" ", 1) for line in lines[1:])
    public = PublicKey(int(fields["n"], 16))
    secret = PrivateKey(public, int(fields["lam"], 16), int(fields["mu"], 16))
    return KeyPair(public, secret, int(fields["key_bits"]))
