"""Authenticated extension: transcript verification codes, secret renewal, wallet.

Round elements are hashed in a fixed canonical order: every element that
A originated (``i`` then the ``mu`` pair, round by round) followed by every
element B originated (``j`` then the ``mu'`` pair).  Each party fills that
order from its own view, so A uses sent-then-received and B
received-then-sent.  Element bytes are exactly the wire payloads.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import net
from .core import ParameterError, ProtocolParams, bits_to_int
from .distill import SessionFailure, SessionOutcome, TranscriptView, run_session
from .rounds import PartyA, PartyB

KEY_LABEL = b"deeprandom/verification-key/v1"


class VerificationError(RuntimeError):
    """A code could not be computed (as opposed to a mismatch)."""


class KeyReuseError(RuntimeError):
    pass


class WalletError(RuntimeError):
    pass


class SimulatedCrash(RuntimeError):
    """Raised by the wallet's fault injector in place of a process crash."""


# -- secrets -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AuthSecret:
    bits: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or (b.size and b.max() > 1):
            raise ParameterError("secret must be a one-dimensional bit string")
        object.__setattr__(self, "bits", b)

    def __len__(self) -> int:
        return int(self.bits.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AuthSecret)
            and self.epoch == other.epoch
            and np.array_equal(self.bits, other.bits)
        )

    def __repr__(self) -> str:
        return f"AuthSecret(<{self.bits.size} bits>, epoch={self.epoch})"

    def check(self, params: ProtocolParams) -> "AuthSecret":
        if self.bits.size != params.H_s:
            raise ParameterError(f"secret has {self.bits.size} bits, H_s = {params.H_s}")
        return self

    @classmethod
    def random(cls, H_s: int, rng: np.random.Generator, epoch: int = 0) -> "AuthSecret":
        return cls(rng.integers(0, 2, H_s, dtype=np.uint8), epoch)


def _bits(s) -> np.ndarray:
    return s.bits if isinstance(s, AuthSecret) else np.asarray(s, dtype=np.uint8)


def split_secret(s) -> tuple[np.ndarray, np.ndarray]:
    b = _bits(s)
    if b.size % 2:
        raise ParameterError(f"secret length must be even, got {b.size}")
    h = b.size // 2
    return b[:h].copy(), b[h:].copy()


# -- hashing -------------------------------------------------------------------

@dataclass(frozen=True)
class HashKey:
    a: int
    b_schedule: tuple[int, ...]
    p: int
    t: int

    def __post_init__(self):
        if not 0 < self.a < self.p:
            raise ParameterError("hash slope must satisfy 0 < a < p")
        if any(not 0 <= b < self.p for b in self.b_schedule):
            raise ParameterError("hash offsets must lie in [0, p)")
        if (1 << self.t) >= self.p:
            raise ParameterError("2**t must be below p")

    def __repr__(self) -> str:
        return f"HashKey(<secret>, {len(self.b_schedule)} offsets, t={self.t})"


def derive_hash_key(s, n_elements: int, p: int, t: int) -> HashKey:
    """Expand the full authentication secret into (a, b_1..b_n) with SHAKE-256."""
    b = _bits(s)
    width = (p.bit_length() + 7) // 8 + 16  # 128 spare bits make the mod-p bias negligible
    xof = hashlib.shake_256(KEY_LABEL + struct.pack(">I", b.size) + np.packbits(b).tobytes())
    stream = xof.digest(width * (n_elements + 1))
    vals = [int.from_bytes(stream[q * width : (q + 1) * width], "big") for q in range(n_elements + 1)]
    a = vals[0] % (p - 1) + 1
    return HashKey(a, tuple(v % p for v in vals[1:]), p, t)


def key_for(s, params: ProtocolParams, n_rounds: int | None = None) -> HashKey:
    rounds = params.n_rounds if n_rounds is None else n_rounds
    return derive_hash_key(s, 4 * rounds, params.p, params.t)


def _element_int(element) -> tuple[int, int]:
    if isinstance(element, (bytes, bytearray)):
        return int.from_bytes(element, "big"), 8 * len(element)
    bits = np.asarray(element, dtype=np.uint8)
    return bits_to_int(bits), int(bits.size)


def block_encode(s_half, element, p: int) -> int:
    """(e + sigma * complement(e)) mod p for an element given as bytes or bits."""
    e, width = _element_int(element)
    comp = ((1 << width) - 1) ^ e
    sigma = bits_to_int(_bits(s_half))
    return (e + sigma * comp) % p


def universal_hash(key: tuple[int, int, int, int], x: int) -> int:
    a, b, p, t = key
    return ((a * x + b) % p) % (1 << t)


@dataclass(frozen=True)
class VerificationCode:
    value: int
    t: int

    def to_bytes(self) -> bytes:
        return self.value.to_bytes((self.t + 7) // 8, "big")

    @classmethod
    def from_bytes(cls, data: bytes, t: int) -> "VerificationCode":
        if len(data) != (t + 7) // 8:
            raise net.StructureError("verification code has the wrong length")
        v = int.from_bytes(data, "big")
        if v >> t:
            raise net.StructureError("verification code exceeds t bits")
        return cls(v, t)


def canonical_elements(view: TranscriptView) -> list[bytes]:
    a_stream, b_stream = view.streams()
    return [payload for _, _, payload in a_stream] + [payload for _, _, payload in b_stream]


def verification_code(
    s_half, view: TranscriptView, key: HashKey, n_rounds: int | None = None
) -> VerificationCode:
    if n_rounds is not None and not view.complete(n_rounds):
        raise VerificationError("transcript view is incomplete")
    elements = canonical_elements(view)
    if len(elements) > len(key.b_schedule):
        raise VerificationError(
            f"key schedule covers {len(key.b_schedule)} elements, view has {len(elements)}"
        )
    acc = 0
    for b_l, el in zip(key.b_schedule, elements):
        acc ^= universal_hash((key.a, b_l, key.p, key.t), block_encode(s_half, el, key.p))
    return VerificationCode(acc, key.t)


def _xor_bytes(items, size: int) -> bytes:
    acc = np.zeros(size, dtype=np.uint8)
    for it in items:
        buf = np.frombuffer(it, dtype=np.uint8)
        if buf.size != size:
            raise VerificationError("aggregated elements differ in length")
        acc ^= buf
    return acc.tobytes()


def xor_aggregates(view: TranscriptView) -> tuple[bytes, bytes]:
    """(xor of all vectors, xor of all pair payloads) over both streams."""
    a_stream, b_stream = view.streams()
    everything = a_stream + b_stream
    vecs = [p for _, kind, p in everything if kind == "vec"]
    pairs = [p for _, kind, p in everything if kind == "pair"]
    vsize = len(vecs[0]) if vecs else 0
    psize = len(pairs[0]) if pairs else 0
    return _xor_bytes(vecs, vsize), _xor_bytes(pairs, psize)


def flawed_verification_code(
    s_half, view: TranscriptView, key: HashKey, n_rounds: int | None = None
) -> VerificationCode:
    """Deliberately weak: hashes only the xor aggregates, so order and compensation go unseen."""
    if n_rounds is not None and not view.complete(n_rounds):
        raise VerificationError("transcript view is incomplete")
    vec_x, pair_x = xor_aggregates(view)
    blob = np.packbits(_bits(s_half)).tobytes() + vec_x + pair_x
    x = int.from_bytes(blob, "big") % key.p
    return VerificationCode(universal_hash((key.a, key.b_schedule[0], key.p, key.t), x), key.t)


CODE_FUNCTIONS: dict[str, Callable] = {
    "robust": verification_code,
    "flawed": flawed_verification_code,
}


def verify(received: VerificationCode, local: VerificationCode) -> bool:
    if received.t != local.t:
        return False
    return hmac.compare_digest(received.to_bytes(), local.to_bytes())


# -- renewal and message encryption ------------------------------------------------

class OneTimePad:
    """Message key bits that may encrypt exactly one message."""

    def __init__(self, bits):
        self._bits = np.asarray(bits, dtype=np.uint8).copy()
        self.consumed = False

    def __len__(self) -> int:
        return int(self._bits.size)

    def __repr__(self) -> str:
        return f"OneTimePad(<{self._bits.size} bits>, consumed={self.consumed})"

    def take(self, n: int) -> np.ndarray:
        if self.consumed:
            raise KeyReuseError("message key already used")
        if n > self._bits.size:
            raise ParameterError(f"message of {n} bits exceeds key of {self._bits.size}")
        self.consumed = True
        return self._bits[:n].copy()


def renew_secret(S, params: ProtocolParams, epoch: int = 0) -> tuple[AuthSecret, OneTimePad]:
    bits = np.asarray(S, dtype=np.uint8)
    if bits.size < params.key_bits:
        raise ParameterError(f"|S| = {bits.size} is below H_s + L_M = {params.key_bits}")
    return AuthSecret(bits[: params.H_s].copy(), epoch + 1), OneTimePad(bits[params.H_s :])


def encrypt_message(M, key: OneTimePad, L_M: int | None = None) -> np.ndarray:
    m = np.asarray(M, dtype=np.uint8)
    if L_M is not None and m.size > L_M:
        raise ParameterError(f"message of {m.size} bits exceeds L_M = {L_M}")
    return m ^ key.take(m.size)


# -- wallet --------------------------------------------------------------------

WALLET_MAGIC = b"DRKW"
WALLET_VERSION = 1
_WALLET_HEAD = struct.Struct(">4sBQI")


def encode_wallet(secret: AuthSecret) -> bytes:
    body = _WALLET_HEAD.pack(WALLET_MAGIC, WALLET_VERSION, secret.epoch, secret.bits.size)
    body += np.packbits(secret.bits).tobytes()
    return body + struct.pack(">I", zlib.crc32(body))


def decode_wallet(data: bytes) -> AuthSecret:
    if len(data) < _WALLET_HEAD.size + 4:
        raise WalletError("wallet record truncated")
    body, (crc,) = data[:-4], struct.unpack(">I", data[-4:])
    if zlib.crc32(body) != crc:
        raise WalletError("wallet checksum mismatch")
    magic, version, epoch, H_s = _WALLET_HEAD.unpack(body[: _WALLET_HEAD.size])
    if magic != WALLET_MAGIC or version != WALLET_VERSION:
        raise WalletError("not a wallet file")
    packed = body[_WALLET_HEAD.size :]
    if len(packed) != (H_s + 7) // 8:
        raise WalletError("wallet secret length disagrees with header")
    bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8))[:H_s]
    return AuthSecret(bits, epoch)


@dataclass
class Wallet:
    """Persistent per-peer store of the authentication secret.

    Updates go to a journal file that is fsynced and then renamed over the
    live record, so a reader sees the old or the new secret and nothing else.
    ``crash_at`` makes the next update stop after that many journal bytes
    (or, when equal to the record length, just before the rename).
    """

    directory: Path
    peer_id: str
    crash_at: int | None = field(default=None, repr=False)

    def __post_init__(self):
        self.directory = Path(self.directory)
        if not self.peer_id or any(c in self.peer_id for c in "/\\\0"):
            raise ParameterError(f"invalid peer id {self.peer_id!r}")

    @property
    def path(self) -> Path:
        return self.directory / f"{self.peer_id}.drkw"

    @property
    def journal(self) -> Path:
        return self.directory / f"{self.peer_id}.drkw.journal"

    @classmethod
    def create(cls, directory, peer_id: str, secret: AuthSecret) -> "Wallet":
        w = cls(Path(directory), peer_id)
        w.directory.mkdir(parents=True, exist_ok=True)
        w._commit(encode_wallet(secret))
        return w

    @property
    def current(self) -> AuthSecret:
        return self.read()

    def read(self) -> AuthSecret:
        # an uncommitted journal is a torn update and is ignored
        return decode_wallet(self.path.read_bytes())

    def _commit(self, record: bytes) -> None:
        crash = self.crash_at
        self.crash_at = None
        with open(self.journal, "wb") as fh:
            if crash is not None and crash < len(record):
                fh.write(record[:crash])
                fh.flush()
                raise SimulatedCrash(f"crash after {crash} journal bytes")
            fh.write(record)
            fh.flush()
            os.fsync(fh.fileno())
        if crash is not None:
            raise SimulatedCrash("crash before commit")
        os.replace(self.journal, self.path)

    def update(self, new: AuthSecret) -> "Wallet":
        old = self.read()
        if new.epoch <= old.epoch:
            raise WalletError(f"epoch must increase ({old.epoch} -> {new.epoch})")
        if new.bits.size != old.bits.size:
            raise WalletError("secret length changed")
        try:
            self._commit(encode_wallet(new))
        except OSError as exc:
            raise WalletError(f"wallet update aborted: {exc}") from exc
        return self


def wallet_update(w: Wallet, s_new: AuthSecret) -> Wallet:
    return w.update(s_new)


# -- authenticated session -------------------------------------------------------

@dataclass
class SideResult:
    secret: AuthSecret
    code_sent: VerificationCode | None
    verified: bool
    peer_ack: bool
    committed: bool
    error: str = ""
    new_secret: AuthSecret | None = None
    message_key: OneTimePad | None = None


@dataclass
class AuthOutcome:
    session: SessionOutcome
    A: SideResult
    B: SideResult
    variant: str

    @property
    def both_verified(self) -> bool:
        return self.A.verified and self.B.verified

    def summary(self) -> dict:
        out = self.session.summary()
        out.update(
            {
                "variant": self.variant,
                "a_verified": self.A.verified,
                "b_verified": self.B.verified,
                "a_committed": self.A.committed,
                "b_committed": self.B.committed,
                "epoch_a": (self.A.new_secret or self.A.secret).epoch,
                "epoch_b": (self.B.new_secret or self.B.secret).epoch,
            }
        )
        return out


def _own_and_expected(role, secret, view, params, variant):
    fn = CODE_FUNCTIONS[variant]
    s_a, s_b = split_secret(secret)
    key = key_for(secret, params)
    own_half, peer_half = (s_a, s_b) if role == "A" else (s_b, s_a)
    own = fn(own_half, view, key, params.n_rounds)
    expected = fn(peer_half, view, key, params.n_rounds)
    return own, expected


def exchange_verification(
    params: ProtocolParams,
    a: PartyA,
    b: PartyB,
    session: SessionOutcome,
    secret_a: AuthSecret,
    secret_b: AuthSecret,
    variant: str = "robust",
) -> tuple[SideResult, SideResult]:
    """Swap verification codes and acknowledgements; nothing is committed here."""
    if variant not in CODE_FUNCTIONS:
        raise ParameterError(f"unknown verification variant {variant!r}")
    sides = {}
    for role, secret, mat in (("A", secret_a, session.A), ("B", secret_b, session.B)):
        try:
            sides[role] = _own_and_expected(role, secret, mat.view, params, variant)
        except VerificationError as exc:
            sides[role] = exc
    code_tags = {"A": net.Tag.VERIFY_CODE_A, "B": net.Tag.VERIFY_CODE_B}
    peer_tag = {"A": net.Tag.VERIFY_CODE_B, "B": net.Tag.VERIFY_CODE_A}
    eps = {"A": a.endpoint, "B": b.endpoint}
    # an incomplete view still sends a placeholder so the peer is not left waiting
    for role in ("A", "B"):
        s = sides[role]
        code = s[0] if isinstance(s, tuple) else VerificationCode(0, params.t)
        eps[role].send(code_tags[role], 0, code.to_bytes())
    verified, errors = {}, {}
    for role in ("B", "A"):
        s = sides[role]
        try:
            got = VerificationCode.from_bytes(eps[role].recv(peer_tag[role], 0).payload, params.t)
        except net.WireError as exc:
            verified[role], errors[role] = False, type(exc).__name__
            continue
        if isinstance(s, Exception):
            verified[role], errors[role] = False, str(s)
        else:
            verified[role] = verify(got, s[1])
            errors[role] = "" if verified[role] else "code mismatch"
    for role in ("A", "B"):
        eps[role].send(net.Tag.FINAL_ACK, 0, net.encode_flag(verified[role]))
    acks = {}
    for role in ("B", "A"):
        try:
            acks[role] = net.decode_flag(eps[role].recv(net.Tag.FINAL_ACK, 0).payload)
        except net.WireError:
            acks[role] = False
    out = []
    for role, secret in (("A", secret_a), ("B", secret_b)):
        s = sides[role]
        sent = s[0] if isinstance(s, tuple) else None
        ok = verified[role] and acks[role]
        out.append(SideResult(secret, sent, verified[role], acks[role], ok, errors[role]))
    return out[0], out[1]


def _commit_side(side: SideResult, S, params, wallet: Wallet | None) -> None:
    if not side.committed:
        return
    new, pad = renew_secret(S, params, side.secret.epoch)
    if wallet is not None:
        try:
            wallet_update(wallet, new)
        except (WalletError, SimulatedCrash) as exc:
            side.committed = False
            side.error = f"wallet update failed: {exc}"
            return
    side.new_secret, side.message_key = new, pad


def authenticated_session(
    params: ProtocolParams,
    a: PartyA,
    b: PartyB,
    secret_a: AuthSecret,
    secret_b: AuthSecret,
    *,
    variant: str = "robust",
    wallet_a: Wallet | None = None,
    wallet_b: Wallet | None = None,
) -> AuthOutcome:
    """Key agreement, mutual verification and (on success) renewal for both sides."""
    secret_a.check(params)
    secret_b.check(params)
    session = run_session(params, a, b)
    try:
        side_a, side_b = exchange_verification(params, a, b, session, secret_a, secret_b, variant)
    except net.WireError as exc:
        raise SessionFailure(f"verification stalled: {exc}") from exc
    _commit_side(side_a, session.S_A, params, wallet_a)
    _commit_side(side_b, session.S_B, params, wallet_b)
    return AuthOutcome(session, side_a, side_b, variant)


def authenticated_from_wallets(
    params: ProtocolParams, channel: net.Channel, seed, wallet_a: Wallet, wallet_b: Wallet, variant="robust"
) -> AuthOutcome:
    from .rounds import make_parties

    a, b = make_parties(params, channel, seed)
    return authenticated_session(
        params, a, b, wallet_a.read(), wallet_b.read(), variant=variant, wallet_a=wallet_a, wallet_b=wallet_b
    )
