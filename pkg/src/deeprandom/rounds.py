"""One round of the exchange (draw, degrade, disperse, synchronise, decorrelate, sample).

Wire order per round::

    A->B I_VEC, A->B MU_PAIR, B->A J_VEC, B->A MU_PRIME_PAIR, B->A RHO
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import net
from .core import (
    DEEP_PRIVATE,
    PUBLIC_COIN,
    ProtocolParams,
    RandomnessSource,
    apply_permutation,
    bernoulli_draw,
    invert_permutation,
    scalar_product,
    scale_vector,
    transpose_pair,
)
from .drg import (
    DispersionDistribution,
    HiddenDistribution,
    dispersion_permutation,
    draw_parameter_vector,
    generate_dispersion_distribution,
    generate_hidden_distribution,
    published_tidying,
)

MAX_REDRAWS = 10_000


@dataclass
class RoundStateA:
    phi: HiddenDistribution
    psi: DispersionDistribution
    x: np.ndarray
    i: np.ndarray
    b: int
    sigma_phi: np.ndarray
    sigma_d: np.ndarray
    mu_pair: tuple[np.ndarray, np.ndarray]
    sigma_A: np.ndarray | None = None
    V_A: float | None = None
    e_tilde_A: int | None = None

    def __repr__(self) -> str:  # never print secret material
        return f"RoundStateA(|i|={int(self.i.sum())}, b=?)"


@dataclass
class RoundStateB:
    phi: HiddenDistribution
    psi: DispersionDistribution
    y: np.ndarray
    j: np.ndarray
    b: int
    sigma_phi: np.ndarray
    sigma_d: np.ndarray
    mu_pair: tuple[np.ndarray, np.ndarray]
    sigma_B: np.ndarray | None = None
    V_B: float | None = None
    rho_B: float | None = None
    e_tilde_B: int | None = None

    def __repr__(self) -> str:
        return f"RoundStateB(|j|={int(self.j.sum())}, b=?)"


@dataclass(frozen=True, eq=False)
class RoundPublic:
    """Exactly the values published in a round, as one party saw them."""

    i: np.ndarray
    mu_pair: tuple[np.ndarray, np.ndarray]
    j: np.ndarray
    mu_prime_pair: tuple[np.ndarray, np.ndarray]
    rho_B: float


@dataclass
class RoundResult:
    index: int
    e_A: int | None
    e_B: int | None
    public_a: RoundPublic | None
    public_b: RoundPublic | None
    favorable: bool
    # harness-only diagnostics, never on the wire
    V_A: float = math.nan
    V_B: float = math.nan
    a_real: bool = False
    b_real: bool = False
    aborted: bool = False
    error: str = ""

    @property
    def public(self) -> RoundPublic | None:
        return self.public_b


# -- per-step operations -----------------------------------------------------

def _begin(params: ProtocolParams, src_private: RandomnessSource, src_public: RandomnessSource):
    src_private.require(DEEP_PRIVATE)
    src_public.require(PUBLIC_COIN)
    phi = generate_hidden_distribution(params, src_private)
    x = draw_parameter_vector(phi, src_private)
    degraded = scale_vector(x, params.k)
    for _ in range(MAX_REDRAWS):
        i = bernoulli_draw(degraded, src_private)
        # no compliant decoy exists once k|i| > n; redraw privately
        if params.k * int(i.sum()) <= params.n:
            break
    else:  # pragma: no cover
        raise RuntimeError("could not draw an experiment vector with a feasible decoy")
    psi = generate_dispersion_distribution(i, params, src_private)
    sigma_d = dispersion_permutation(i, psi)
    sigma_phi = published_tidying(phi)
    b = src_public.bit()
    pair = transpose_pair(b, (sigma_d, sigma_phi))
    return phi, psi, x, i, b, sigma_phi, sigma_d, pair


def a_begin_round(params, src_private, src_public) -> tuple[RoundStateA, dict]:
    phi, psi, x, i, b, sigma_phi, sigma_d, pair = _begin(params, src_private, src_public)
    state = RoundStateA(phi, psi, x, i, b, sigma_phi, sigma_d, pair)
    return state, {"i": i, "mu_pair": pair}


def b_begin_round(params, src_private, src_public) -> tuple[RoundStateB, dict]:
    phi, psi, y, j, b, sigma_phi, sigma_d, pair = _begin(params, src_private, src_public)
    state = RoundStateB(phi, psi, y, j, b, sigma_phi, sigma_d, pair)
    return state, {"j": j, "mu_prime_pair": pair}


def synchronize(received_pair, src_public: RandomnessSource) -> np.ndarray:
    src_public.require(PUBLIC_COIN)
    return np.asarray(received_pair[src_public.bit()], dtype=np.int64)


def decorrelate_A(state: RoundStateA, j) -> float:
    if state.sigma_A is None:
        raise ValueError("sigma_A has not been chosen yet")
    n = state.x.size
    return scalar_product(
        apply_permutation(invert_permutation(state.sigma_phi), state.x),
        apply_permutation(invert_permutation(state.sigma_A), np.asarray(j, dtype=np.float64)),
    ) / n


def decorrelate_B(state: RoundStateB, i) -> float:
    if state.sigma_B is None:
        raise ValueError("sigma_B has not been chosen yet")
    n = state.y.size
    return scalar_product(
        apply_permutation(invert_permutation(state.sigma_B), np.asarray(i, dtype=np.float64)),
        apply_permutation(invert_permutation(state.sigma_phi), state.y),
    ) / n


def _cell(V: float, g: float) -> int:
    # exact floor of V / g for the two floats, immune to division rounding
    return int(Fraction(V) // Fraction(g))


def compute_rho(V_B: float, params: ProtocolParams) -> float:
    g = params.gauge
    return V_B - g * _cell(V_B, g)


def center_value(V: float, rho_B: float, params: ProtocolParams) -> float:
    return V + params.gauge / 2.0 - rho_B


def sample_bit(V_centered: float, params: ProtocolParams) -> int:
    return _cell(V_centered, params.gauge) % 2


# -- parties on a channel -------------------------------------------------------

def _vec_payload(v) -> bytes:
    return net.encode_bits(v)


@dataclass
class Party:
    """A partner endpoint running rounds over the simulated channel.

    ``view_sent`` / ``view_received`` hold the canonical payload bytes of
    every round element (vectors and permutation pairs) in wire order.
    """

    role: str
    params: ProtocolParams
    endpoint: net.Endpoint
    private: RandomnessSource
    public: RandomnessSource
    view_sent: list = field(default_factory=list)
    view_received: list = field(default_factory=list)

    def record_sent(self, r: int, kind: str, payload: bytes) -> None:
        self.view_sent.append((r, kind, payload))

    def record_received(self, r: int, kind: str, payload: bytes) -> None:
        self.view_received.append((r, kind, payload))


class PartyA(Party):
    def __init__(self, params, endpoint, private, public):
        super().__init__("A", params, endpoint, private, public)
        self.state: RoundStateA | None = None

    def begin(self, r: int) -> None:
        self.state, msgs = a_begin_round(self.params, self.private, self.public)
        vec = _vec_payload(msgs["i"])
        pair = net.encode_perm_pair(msgs["mu_pair"])
        self.endpoint.send(net.Tag.I_VEC, r, vec)
        self.record_sent(r, "vec", vec)
        self.endpoint.send(net.Tag.MU_PAIR, r, pair)
        self.record_sent(r, "pair", pair)

    def finish(self, r: int, force: str | None = None) -> RoundPublic:
        st = self.state
        jm = self.endpoint.recv(net.Tag.J_VEC, r)
        self.record_received(r, "vec", jm.payload)
        pm = self.endpoint.recv(net.Tag.MU_PRIME_PAIR, r)
        self.record_received(r, "pair", pm.payload)
        j = net.decode_bits(jm.payload, self.params.n)
        pair = net.decode_perm_pair(pm.payload, validate=self.endpoint.channel.validate_permutations)
        st.sigma_A = _choose(pair, self.public, force, real_index=None)
        rho = net.decode_float(self.endpoint.recv(net.Tag.RHO, r).payload)
        st.V_A = decorrelate_A(st, j)
        st.e_tilde_A = sample_bit(center_value(st.V_A, rho, self.params), self.params)
        return RoundPublic(st.i, st.mu_pair, j, pair, rho)


class PartyB(Party):
    def __init__(self, params, endpoint, private, public):
        super().__init__("B", params, endpoint, private, public)
        self.state: RoundStateB | None = None

    def begin(self, r: int) -> None:
        self.state, msgs = b_begin_round(self.params, self.private, self.public)
        vec = _vec_payload(msgs["j"])
        pair = net.encode_perm_pair(msgs["mu_prime_pair"])
        self.endpoint.send(net.Tag.J_VEC, r, vec)
        self.record_sent(r, "vec", vec)
        self.endpoint.send(net.Tag.MU_PRIME_PAIR, r, pair)
        self.record_sent(r, "pair", pair)

    def respond(self, r: int, force: str | None = None) -> RoundPublic:
        st = self.state
        im = self.endpoint.recv(net.Tag.I_VEC, r)
        self.record_received(r, "vec", im.payload)
        pm = self.endpoint.recv(net.Tag.MU_PAIR, r)
        self.record_received(r, "pair", pm.payload)
        i = net.decode_bits(im.payload, self.params.n)
        pair = net.decode_perm_pair(pm.payload, validate=self.endpoint.channel.validate_permutations)
        st.sigma_B = _choose(pair, self.public, force, real_index=None)
        st.V_B = decorrelate_B(st, i)
        st.rho_B = compute_rho(st.V_B, self.params)
        self.endpoint.send(net.Tag.RHO, r, net.encode_float(st.rho_B))
        st.e_tilde_B = sample_bit(center_value(st.V_B, st.rho_B, self.params), self.params)
        return RoundPublic(i, pair, st.j, st.mu_pair, st.rho_B)


def _choose(pair, public: RandomnessSource, force, real_index) -> np.ndarray:
    # the coin is always consumed so forcing does not shift later draws
    chosen = synchronize(pair, public)
    if force is None:
        return chosen
    return np.asarray(force, dtype=np.int64)


def run_round(
    a: PartyA,
    b: PartyB,
    r: int,
    *,
    force_a: str | None = None,
    force_b: str | None = None,
) -> RoundResult:
    """Run round ``r`` between two parties sharing a channel.

    ``force_a`` / ``force_b`` ("real" or "decoy") override the
    synchronisation choice; harness use only.
    """
    try:
        a.begin(r)
        b.begin(r)
        fb = None
        fa = None
        if force_b is not None:
            fb = a.state.sigma_phi if force_b == "real" else a.state.sigma_d
        if force_a is not None:
            fa = b.state.sigma_phi if force_a == "real" else b.state.sigma_d
        pub_b = b.respond(r, force=fb)
        pub_a = a.finish(r, force=fa)
    except net.ChannelTimeout:
        raise
    except net.WireError as exc:
        return RoundResult(r, None, None, None, None, False, aborted=True, error=type(exc).__name__)
    sa, sb = a.state, b.state
    a_real = bool(np.array_equal(sa.sigma_A, sb.sigma_phi))
    b_real = bool(np.array_equal(sb.sigma_B, sa.sigma_phi))
    return RoundResult(
        r,
        sa.e_tilde_A,
        sb.e_tilde_B,
        pub_a,
        pub_b,
        a_real and b_real,
        V_A=sa.V_A,
        V_B=sb.V_B,
        a_real=a_real,
        b_real=b_real,
    )


def make_parties(params: ProtocolParams, channel: net.Channel, seed) -> tuple[PartyA, PartyB]:
    """Two honest parties on ``channel`` with independent seeded sources."""
    ss = np.random.SeedSequence(seed)
    a_priv, a_pub, b_priv, b_pub = ss.spawn(4)
    a = PartyA(params, channel.a, RandomnessSource.private(a_priv), RandomnessSource.public(a_pub))
    b = PartyB(params, channel.b, RandomnessSource.private(b_priv), RandomnessSource.public(b_pub))
    return a, b


def simulate_rounds(params: ProtocolParams, count: int, seed, **force) -> list[RoundResult]:
    """Honest rounds on a fresh transparent channel (measurement helper)."""
    ch = net.Channel()
    a, b = make_parties(params, ch, seed)
    out = []
    for r in range(count):
        out.append(run_round(a, b, r, **force))
        a.view_sent.clear(), a.view_received.clear(), b.view_sent.clear(), b.view_received.clear()
    return out
