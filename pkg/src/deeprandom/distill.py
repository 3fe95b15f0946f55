"""Repetition-code advantage distillation, Toeplitz privacy amplification, sessions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from . import net
from .core import ParameterError, ProtocolParams, RandomnessSource
from .rounds import PartyA, PartyB, RoundPublic, RoundResult, make_parties, run_round


class SessionFailure(RuntimeError):
    """The session ended without usable key material (never a silent key)."""


# -- repetition code -----------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    accepted: bool
    bit: int | None = None

    @classmethod
    def discarded(cls) -> "Verdict":
        return cls(False, None)


def ad_encode(e_A: int, L: int) -> np.ndarray:
    if L < 1:
        raise ParameterError("codeword length must be >= 1")
    if e_A not in (0, 1):
        raise ParameterError("source bit must be 0 or 1")
    return np.full(L, e_A, dtype=np.uint8)


def ad_decode(received) -> Verdict:
    r = np.asarray(received, dtype=np.uint8)
    if r.size == 0:
        raise ParameterError("empty codeword")
    if not r.any():
        return Verdict(True, 0)
    if r.all():
        return Verdict(True, 1)
    return Verdict.discarded()


def xor_transport(codeword, pad_bits) -> np.ndarray:
    c = np.asarray(codeword, dtype=np.uint8)
    p = np.asarray(pad_bits, dtype=np.uint8)
    if c.shape != p.shape:
        raise ParameterError(f"codeword and pad lengths differ: {c.size} vs {p.size}")
    return c ^ p


@dataclass(frozen=True)
class DistillationBlock:
    index: int
    rounds: tuple[int, ...]
    e_A: int
    codeword: np.ndarray
    decoded: np.ndarray
    verdict: Verdict


# -- privacy amplification -------------------------------------------------------

def seed_length(n_in: int, out_len: int) -> int:
    return max(n_in + out_len - 1, 0)


def max_output_length(n_in: int, margin: float) -> int:
    return math.floor(n_in * (1.0 - margin))


def toeplitz_hash(bits, out_len: int, seed_bits) -> np.ndarray:
    """GF(2) product of the ``out_len x len(bits)`` Toeplitz matrix defined by ``seed_bits``."""
    x = np.asarray(bits, dtype=np.uint8)
    m = x.size
    if out_len == 0 or m == 0:
        return np.zeros(out_len, dtype=np.uint8)
    seed = np.asarray(seed_bits, dtype=np.uint8)
    if seed.size != seed_length(m, out_len):
        raise ParameterError(f"Toeplitz seed needs {seed_length(m, out_len)} bits, got {seed.size}")
    # first column seed[:out_len], first row seed[out_len-1::-1] ++ seed[out_len:]
    col = seed[:out_len]
    row = np.concatenate([seed[:1], seed[out_len:]])
    T = toeplitz(col, row).astype(np.int64)
    return (T @ x.astype(np.int64) % 2).astype(np.uint8)


def privacy_amplify(reconciled, out_len: int, pub_seed, margin: float = 0.5) -> np.ndarray:
    r = np.asarray(reconciled, dtype=np.uint8)
    if out_len < 0:
        raise ParameterError("out_len must be non-negative")
    limit = max_output_length(r.size, margin)
    if out_len > limit:
        raise ParameterError(
            f"out_len={out_len} exceeds {limit} (|reconciled|={r.size}, margin={margin})"
        )
    return toeplitz_hash(r, out_len, pub_seed)


# -- sessions ------------------------------------------------------------------

@dataclass
class TranscriptView:
    """One party's ordered round elements (canonical payload bytes)."""

    role: str
    sent: list = field(default_factory=list)
    received: list = field(default_factory=list)

    def streams(self) -> tuple[list, list]:
        """(A-originated elements, B-originated elements) as this party saw them."""
        if self.role == "A":
            return self.sent, self.received
        return self.received, self.sent

    def complete(self, n_rounds: int) -> bool:
        a, b = self.streams()
        return len(a) == 2 * n_rounds and len(b) == 2 * n_rounds


@dataclass
class SessionKeyMaterial:
    role: str
    reconciled_bits: np.ndarray
    S: np.ndarray
    publics: list[RoundPublic | None]
    verdicts: list[bool]
    view: TranscriptView


@dataclass
class SessionOutcome:
    params: ProtocolParams
    A: SessionKeyMaterial
    B: SessionKeyMaterial
    rounds: list[RoundResult]
    blocks: list[DistillationBlock]
    ticks: int

    @property
    def S_A(self) -> np.ndarray:
        return self.A.S

    @property
    def S_B(self) -> np.ndarray:
        return self.B.S

    @property
    def agreed(self) -> bool:
        return bool(np.array_equal(self.A.S, self.B.S))

    def summary(self) -> dict:
        ok = [r for r in self.rounds if not r.aborted]
        raw = sum(r.e_A != r.e_B for r in ok)
        accepted = sum(b.verdict.accepted for b in self.blocks)
        wrong = sum(b.verdict.accepted and b.verdict.bit != b.e_A for b in self.blocks)
        return {
            "rounds": len(self.rounds),
            "aborted_rounds": len(self.rounds) - len(ok),
            "favorable_rounds": sum(r.favorable for r in ok),
            "raw_disagreements": int(raw),
            "blocks": len(self.blocks),
            "accepted_blocks": int(accepted),
            "accepted_block_errors": int(wrong),
            "key_bits": int(self.A.S.size),
            "keys_agree": self.agreed,
            "ticks": self.ticks,
        }


def _flush(*endpoints: net.Endpoint) -> None:
    for ep in endpoints:
        ep.inbox.clear()


def run_rounds(params: ProtocolParams, a: PartyA, b: PartyB) -> list[RoundResult]:
    results = []
    for r in range(params.n_rounds):
        res = run_round(a, b, r)
        if res.aborted:
            # both sides drop the round; leftovers of a broken exchange are discarded
            _flush(a.endpoint, b.endpoint)
        results.append(res)
    return results


def distill_blocks(
    params: ProtocolParams, a: PartyA, b: PartyB, results: list[RoundResult]
) -> tuple[list[DistillationBlock], np.ndarray, np.ndarray]:
    """Exchange masked codewords and verdicts; return blocks and both reconciled strings."""
    usable = [r for r in results if not r.aborted]
    L = params.L
    blocks: list[DistillationBlock] = []
    rec_a, rec_b = [], []
    for idx in range(len(usable) // L):
        chunk = usable[idx * L : (idx + 1) * L]
        pad_a = np.array([r.e_A for r in chunk], dtype=np.uint8)
        pad_b = np.array([r.e_B for r in chunk], dtype=np.uint8)
        e_A = a.private.bit()
        codeword = ad_encode(e_A, L)
        a.endpoint.send(net.Tag.CODEWORD_MASKED, idx, net.encode_bits(xor_transport(codeword, pad_a)))
        masked = net.decode_bits(b.endpoint.recv(net.Tag.CODEWORD_MASKED, idx).payload, L)
        decoded = xor_transport(masked, pad_b)
        verdict = ad_decode(decoded)
        b.endpoint.send(net.Tag.BLOCK_VERDICT, idx, net.encode_flag(verdict.accepted))
        accepted_at_a = net.decode_flag(a.endpoint.recv(net.Tag.BLOCK_VERDICT, idx).payload)
        if accepted_at_a:
            rec_a.append(e_A)
        if verdict.accepted:
            rec_b.append(verdict.bit)
        blocks.append(
            DistillationBlock(idx, tuple(r.index for r in chunk), e_A, codeword, decoded, verdict)
        )
    return blocks, np.array(rec_a, dtype=np.uint8), np.array(rec_b, dtype=np.uint8)


def amplify(params: ProtocolParams, a: PartyA, b: PartyB, rec_a, rec_b) -> tuple[np.ndarray, np.ndarray]:
    out_len = params.key_bits
    need = math.ceil(out_len / (1.0 - params.pa_margin))
    if min(rec_a.size, rec_b.size) < need:
        raise SessionFailure(
            f"only {min(rec_a.size, rec_b.size)} reconciled bits, {need} needed for |S| = {out_len}"
        )
    seed = a.public.bits(seed_length(rec_a.size, out_len))
    a.endpoint.send(net.Tag.PA_SEED, 0, net.encode_bits(seed))
    msg = b.endpoint.recv(net.Tag.PA_SEED, 0)
    seed_b = net.decode_bits(msg.payload, seed_length(rec_b.size, out_len))
    S_A = privacy_amplify(rec_a, out_len, seed, params.pa_margin)
    S_B = privacy_amplify(rec_b, out_len, seed_b, params.pa_margin)
    return S_A, S_B


def run_session(params: ProtocolParams, a: PartyA, b: PartyB) -> SessionOutcome:
    """Full key agreement between ``a`` and ``b`` over their shared channel.

    Raises SessionFailure when the channel stalls or too few blocks survive.
    """
    params.validate()
    channel = a.endpoint.channel
    try:
        results = run_rounds(params, a, b)
        blocks, rec_a, rec_b = distill_blocks(params, a, b, results)
        S_A, S_B = amplify(params, a, b, rec_a, rec_b)
    except net.WireError as exc:
        raise SessionFailure(f"{type(exc).__name__}: {exc}") from exc
    view_a = TranscriptView("A", list(a.view_sent), list(a.view_received))
    view_b = TranscriptView("B", list(b.view_sent), list(b.view_received))
    verdicts = [blk.verdict.accepted for blk in blocks]
    mat_a = SessionKeyMaterial("A", rec_a, S_A, [r.public_a for r in results], verdicts, view_a)
    mat_b = SessionKeyMaterial("B", rec_b, S_B, [r.public_b for r in results], verdicts, view_b)
    return SessionOutcome(params, mat_a, mat_b, results, blocks, channel.ticks)


def honest_session(
    params: ProtocolParams, seed, interposer: net.Interposer | None = None, **channel_kw
) -> SessionOutcome:
    ch = net.Channel(interposer, **channel_kw)
    a, b = make_parties(params, ch, seed)
    return run_session(params, a, b)


def block_error_rates(e_A, e_B, L: int, rng: np.random.Generator) -> dict:
    """Distil pre-computed intermediate bit streams with codeword length ``L``.

    Returns counts used for the raw vs accepted-block disagreement study.
    ``rng`` supplies the source bits.
    """
    ea = np.asarray(e_A, dtype=np.uint8)
    eb = np.asarray(e_B, dtype=np.uint8)
    nblocks = ea.size // L
    accepted = wrong = 0
    for idx in range(nblocks):
        sl = slice(idx * L, (idx + 1) * L)
        src_bit = int(rng.integers(0, 2))
        published = xor_transport(ad_encode(src_bit, L), ea[sl])
        v = ad_decode(xor_transport(published, eb[sl]))
        if v.accepted:
            accepted += 1
            wrong += int(v.bit != src_bit)
    return {"blocks": nblocks, "accepted": accepted, "wrong": wrong}
