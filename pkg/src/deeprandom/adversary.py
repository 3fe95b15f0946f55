"""Eavesdropper strategies, the active interposer and the attack on the xor-aggregate code."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import binomtest

from . import net
from .authp import AuthOutcome, AuthSecret, authenticated_session
from .core import (
    ParameterError,
    ProtocolParams,
    apply_permutation,
    invert_permutation,
    scalar_product,
)
from .rounds import RoundPublic, RoundResult, center_value, make_parties, sample_bit, simulate_rounds

OMEGA_SHARP = "omega-sharp"
OMEGA_SHARP_G = "omega-sharp-G"

Estimator = Callable[[np.ndarray, np.ndarray, tuple, tuple, ProtocolParams], float]


class InvarianceViolation(ValueError):
    pass


@dataclass(frozen=True)
class PassiveStrategy:
    name: str
    estimator: Estimator
    invariance_class: str

    def __call__(self, pub: RoundPublic, params: ProtocolParams) -> float:
        return float(self.estimator(pub.i, pub.j, pub.mu_pair, pub.mu_prime_pair, params))


@dataclass(frozen=True)
class OracleCheat:
    """Reads B's private value from the harness; calibration only, never registered."""

    name: str = "oracle-cheat"
    invariance_class: str = "none"


# -- built-in estimators ---------------------------------------------------------

def _inner_product(i, j, mu, mu_p, params: ProtocolParams) -> float:
    v = params.k ** 2 * scalar_product(i, j) / params.n
    return min(max(v, 0.0), 1.0)


def _weight_product(i, j, mu, mu_p, params: ProtocolParams) -> float:
    return params.k ** 2 * int(np.sum(i)) * int(np.sum(j)) / params.n ** 2


def _pair_averaged(i, j, mu, mu_p, params: ProtocolParams) -> float:
    # k * j stands in for B's hidden y in B's own decorrelation formula
    ests = [
        params.k
        * scalar_product(
            apply_permutation(invert_permutation(ma), i), apply_permutation(invert_permutation(mb), j)
        )
        / params.n
        for ma in mu
        for mb in mu_p
    ]
    return min(max(math.fsum(ests) / 4.0, 0.0), 1.0)


# -- registry ----------------------------------------------------------------------

_REGISTRY: dict[str, PassiveStrategy] = {}


def _random_instance(n: int, rng: np.random.Generator):
    i = rng.integers(0, 2, n, dtype=np.uint8)
    j = rng.integers(0, 2, n, dtype=np.uint8)
    mu = (rng.permutation(n), rng.permutation(n))
    mu_p = (rng.permutation(n), rng.permutation(n))
    return i, j, mu, mu_p


def check_invariance(strategy: PassiveStrategy, params: ProtocolParams, trials: int = 100, seed: int = 0) -> None:
    """Raise InvarianceViolation unless the strategy honours its declared class."""
    if strategy.invariance_class not in (OMEGA_SHARP, OMEGA_SHARP_G):
        raise InvarianceViolation(f"{strategy.name}: unknown invariance class {strategy.invariance_class!r}")
    rng = np.random.default_rng(seed)
    f = strategy.estimator
    for _ in range(trials):
        i, j, mu, mu_p = _random_instance(params.n, rng)
        ref = f(i, j, mu, mu_p, params)
        for b in (0, 1):
            for bp in (0, 1):
                m1 = mu[::-1] if b else mu
                m2 = mu_p[::-1] if bp else mu_p
                if f(i, j, m1, m2, params) != ref:
                    raise InvarianceViolation(f"{strategy.name}: changes under pair transposition")
        if strategy.invariance_class == OMEGA_SHARP_G:
            sigma = rng.permutation(params.n)
            if f(i[sigma], j[sigma], mu, mu_p, params) != ref:
                raise InvarianceViolation(f"{strategy.name}: changes under a common permutation")
            _, _, other_mu, other_mu_p = _random_instance(params.n, rng)
            if f(i, j, other_mu, other_mu_p, params) != ref:
                raise InvarianceViolation(f"{strategy.name}: depends on the permutation pairs")


def register_strategy(strategy: PassiveStrategy, params: ProtocolParams | None = None) -> PassiveStrategy:
    check_invariance(strategy, params or ProtocolParams())
    _REGISTRY[strategy.name] = strategy
    return strategy


def get_strategy(name: str) -> PassiveStrategy | OracleCheat:
    if name == OracleCheat.name:
        return OracleCheat()
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ParameterError(f"unknown strategy {name!r}; known: {sorted(_REGISTRY)}") from None


def strategy_suite() -> list[PassiveStrategy]:
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


register_strategy(PassiveStrategy("inner-product", _inner_product, OMEGA_SHARP_G))
register_strategy(PassiveStrategy("weight-product", _weight_product, OMEGA_SHARP_G))
register_strategy(PassiveStrategy("pair-averaged", _pair_averaged, OMEGA_SHARP))


def eavesdropper_bit(strategy, round_public: RoundPublic, params: ProtocolParams, result: RoundResult | None = None) -> int:
    if isinstance(strategy, OracleCheat):
        if result is None:
            raise ParameterError("the oracle needs the harness round result")
        v = result.V_B
    else:
        v = strategy(round_public, params)
    return sample_bit(center_value(v, round_public.rho_B, params), params)


# -- statistics --------------------------------------------------------------------

@dataclass(frozen=True)
class Rate:
    successes: int
    trials: int

    @property
    def estimate(self) -> float:
        return self.successes / self.trials if self.trials else math.nan

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        if not self.trials:
            return (0.0, 1.0)
        ci = binomtest(self.successes, self.trials).proportion_ci(confidence_level=level, method="wilson")
        return float(ci.low), float(ci.high)

    def as_dict(self) -> dict:
        lo, hi = self.ci()
        est = self.estimate
        return {
            "estimate": None if math.isnan(est) else est,
            "ci_low": lo,
            "ci_high": hi,
            "successes": self.successes,
            "trials": self.trials,
        }


def advantage_bounds(rate: Rate) -> dict:
    """|p - 1/2| with the interval induced by the Wilson interval of p."""
    lo, hi = rate.ci()
    dev = abs(rate.estimate - 0.5)
    low = 0.0 if lo <= 0.5 <= hi else min(abs(lo - 0.5), abs(hi - 0.5))
    return {"estimate": dev, "ci_low": low, "ci_high": max(abs(lo - 0.5), abs(hi - 0.5))}


CELLS = (("real", "real"), ("real", "decoy"), ("decoy", "real"), ("decoy", "decoy"))


def measure_advantage(strategy, params: ProtocolParams, trials: int, seed=0, rounds=None) -> dict:
    """Agreement and eavesdropper hit rates over honest rounds, overall and per synchronisation cell.

    Cells are keyed by (A's choice, B's choice), each "real" when the partner
    picked the other side's true tidying permutation.
    """
    if trials < 1000:
        raise ParameterError("measure_advantage needs at least 10^3 trials")
    results = rounds if rounds is not None else simulate_rounds(params, trials, seed)
    agree = hit = fav = 0
    cell_counts = {c: [0, 0, 0] for c in CELLS}
    for res in results:
        pub = res.public_b
        e_xi = eavesdropper_bit(strategy, pub, params, res)
        a_ok, x_ok = res.e_A == res.e_B, e_xi == res.e_B
        agree += a_ok
        hit += x_ok
        fav += res.favorable
        c = cell_counts[("real" if res.a_real else "decoy", "real" if res.b_real else "decoy")]
        c[0] += 1
        c[1] += a_ok
        c[2] += x_ok
    n = len(results)
    hit_rate = Rate(hit, n)
    return {
        "strategy": strategy.name,
        "trials": n,
        "p_agree_AB": Rate(agree, n).as_dict(),
        "p_agree_xiB": hit_rate.as_dict(),
        "advantage": advantage_bounds(hit_rate),
        "favorable_rate": Rate(fav, n).as_dict(),
        "cells": {
            f"A_{a}/B_{b}": {
                "rounds": cnt[0],
                "p_agree_AB": Rate(cnt[1], cnt[0]).as_dict(),
                "p_agree_xiB": Rate(cnt[2], cnt[0]).as_dict(),
            }
            for (a, b), cnt in cell_counts.items()
        },
    }


# -- active interposer ---------------------------------------------------------------

PASS, DROP, REPLACE, INJECT = "pass", "drop", "replace", "inject"


@dataclass
class Rule:
    """Match on (direction, tag, round); ``None`` fields match anything.

    ``payload`` is bytes or a callable ``(msg, script) -> bytes``.  With
    ``raw=True`` the result is delivered as a complete frame, unchecked.
    """

    action: str
    direction: str | None = None
    tag: net.Tag | None = None
    round_index: int | None = None
    payload: bytes | Callable | None = None
    raw: bool = False

    def matches(self, direction: str, msg: net.WireMessage) -> bool:
        return (
            (self.direction is None or self.direction == direction)
            and (self.tag is None or self.tag == msg.tag)
            and (self.round_index is None or self.round_index == msg.round_index)
        )


@dataclass
class MitmScript(net.Interposer):
    """Ordered rules; the first match decides.  Unmatched traffic passes."""

    rules: list[Rule] = field(default_factory=list)
    observed: list = field(default_factory=list)

    def _render(self, rule: Rule, msg: net.WireMessage) -> bytes:
        body = rule.payload(msg, self) if callable(rule.payload) else rule.payload
        if rule.raw:
            return body
        return net.frame(net.WireMessage(msg.tag, msg.session_id, msg.round_index, body))

    def intercept(self, direction, msg, raw):
        self.observed.append((direction, msg))
        for rule in self.rules:
            if rule.matches(direction, msg):
                if rule.action == PASS:
                    return [raw]
                if rule.action == DROP:
                    return []
                if rule.action == REPLACE:
                    return [self._render(rule, msg)]
                if rule.action == INJECT:
                    return [raw, self._render(rule, msg)]
                raise ParameterError(f"unknown action {rule.action!r}")
        return [raw]


# -- sacrifice attack on the xor-aggregate code ------------------------------------------

def _xor(*chunks: bytes) -> bytes:
    acc = np.zeros(len(chunks[0]), dtype=np.uint8)
    for c in chunks:
        acc ^= np.frombuffer(c, dtype=np.uint8)
    return acc.tobytes()


@dataclass
class RelayLog:
    """Per-round payloads as sent by their author and as delivered by the interposer."""

    i_sent: dict = field(default_factory=dict)
    i_delivered: dict = field(default_factory=dict)
    mu_sent: dict = field(default_factory=dict)
    mu_delivered: dict = field(default_factory=dict)
    j_sent: dict = field(default_factory=dict)
    j_delivered: dict = field(default_factory=dict)
    mu_p_sent: dict = field(default_factory=dict)
    mu_p_delivered: dict = field(default_factory=dict)


def attack_flawed_h(log: RelayLog, forge_round: int) -> tuple[bytes, bytes]:
    """Last-round payloads toward A that restore the honest xor aggregates.

    Solves, for the vector and the pair stream separately,
    ``xor(A sent) ^ xor(A received) == xor(B received) ^ xor(B sent)``.
    """
    rounds = sorted(log.j_sent)
    if forge_round not in log.j_sent or forge_round != max(rounds):
        raise ParameterError("the forged round must be the latest round B has sent")
    earlier = [r for r in rounds if r < forge_round]
    j_forged = _xor(
        *log.i_sent.values(),
        *log.i_delivered.values(),
        *(log.j_delivered[r] for r in earlier),
        *log.j_sent.values(),
    )
    pair_forged = (
        _xor(
            *log.mu_sent.values(),
            *log.mu_delivered.values(),
            *(log.mu_p_delivered[r] for r in earlier),
            *log.mu_p_sent.values(),
        )
        if forge_round in log.mu_p_sent
        else None
    )
    return j_forged, pair_forged


class SacrificeScript(net.Interposer):
    """Tamper with ``j`` toward A at one round, then forge the final round to cancel it."""

    def __init__(self, n: int, tamper_round: int, forge_round: int, delta_bits=None, seed=0):
        if not 0 <= tamper_round < forge_round:
            raise ParameterError("tampering must precede the forged round")
        self.tamper_round = tamper_round
        self.forge_round = forge_round
        if delta_bits is None:
            rng = np.random.default_rng(seed)
            delta_bits = np.zeros(n, dtype=np.uint8)
            while not delta_bits.any():
                delta_bits = rng.integers(0, 2, n, dtype=np.uint8)
        self.delta = net.encode_bits(delta_bits)
        self.log = RelayLog()

    def _deliver(self, msg, payload) -> list[bytes]:
        return [net.frame(net.WireMessage(msg.tag, msg.session_id, msg.round_index, payload))]

    def intercept(self, direction, msg, raw):
        r, tag, pl = msg.round_index, msg.tag, msg.payload
        log = self.log
        if tag == net.Tag.I_VEC:
            log.i_sent[r] = log.i_delivered[r] = pl
        elif tag == net.Tag.MU_PAIR:
            log.mu_sent[r] = log.mu_delivered[r] = pl
        elif tag == net.Tag.J_VEC:
            log.j_sent[r] = pl
            if r == self.tamper_round:
                out = _xor(pl, self.delta)
            elif r == self.forge_round:
                out, _ = attack_flawed_h(log, r)
            else:
                out = pl
            log.j_delivered[r] = out
            return self._deliver(msg, out) if out != pl else [raw]
        elif tag == net.Tag.MU_PRIME_PAIR:
            log.mu_p_sent[r] = pl
            out = attack_flawed_h(log, r)[1] if r == self.forge_round else pl
            log.mu_p_delivered[r] = out
            return self._deliver(msg, out) if out != pl else [raw]
        return [raw]


def aggregates_match(log: RelayLog) -> bool:
    vec_a = _xor(*log.i_sent.values(), *log.j_delivered.values())
    vec_b = _xor(*log.i_delivered.values(), *log.j_sent.values())
    pair_a = _xor(*log.mu_sent.values(), *log.mu_p_delivered.values())
    pair_b = _xor(*log.mu_delivered.values(), *log.mu_p_sent.values())
    return vec_a == vec_b and pair_a == pair_b


def sacrifice_trial(
    params: ProtocolParams, secret: AuthSecret, seed, variant: str, tamper_round=None
) -> tuple[AuthOutcome, SacrificeScript]:
    """One authenticated session with the sacrifice script on the wire."""
    tr = params.n_rounds // 2 if tamper_round is None else tamper_round
    script = SacrificeScript(params.n, tr, params.n_rounds - 1, seed=seed)
    ch = net.Channel(script)
    a, b = make_parties(params, ch, seed)
    return authenticated_session(params, a, b, secret, secret, variant=variant), script


# -- full relay ----------------------------------------------------------------------

@dataclass
class RelayOutcome:
    a_side: AuthOutcome  # A talking to the adversary posing as B
    b_side: AuthOutcome  # the adversary posing as A talking to B

    @property
    def a_accepts(self) -> bool:
        return self.a_side.A.verified

    @property
    def b_accepts(self) -> bool:
        return self.b_side.B.verified

    @property
    def detected(self) -> bool:
        return not (self.a_accepts and self.b_accepts)

    @property
    def xi_keys_match(self) -> tuple[bool, bool]:
        return self.a_side.session.agreed, self.b_side.session.agreed


def mitm_full_relay(
    params: ProtocolParams, secret: AuthSecret, seed, *, xi_secret: AuthSecret | None = None
) -> RelayOutcome:
    """The adversary runs the protocol honestly with each partner on separate channels.

    Without ``xi_secret`` it guesses a uniformly random secret of the right length.
    """
    left_seed, right_seed, guess_seed = (int(v) for v in np.random.SeedSequence(seed).generate_state(3))
    if xi_secret is None:
        xi_secret = AuthSecret.random(params.H_s, np.random.default_rng(guess_seed), secret.epoch)
    ch1, ch2 = net.Channel(), net.Channel()
    a, xi_b = make_parties(params, ch1, left_seed)
    xi_a, b = make_parties(params, ch2, right_seed)
    left = authenticated_session(params, a, xi_b, secret, xi_secret)
    right = authenticated_session(params, xi_a, b, xi_secret, secret)
    return RelayOutcome(left, right)


# -- named scripts for the command line -------------------------------------------------

def _drop_all() -> MitmScript:
    return MitmScript([Rule(DROP)])


def _replace_i_round(r: int, n: int):
    def flip(msg, script):
        bits = net.decode_bits(msg.payload, n)
        bits[0] ^= 1
        return net.encode_bits(bits)

    return MitmScript([Rule(REPLACE, net.A_TO_B, net.Tag.I_VEC, r, flip)])


SCRIPTS = {
    "pass-through": lambda params, seed: MitmScript(),
    "drop-all": lambda params, seed: _drop_all(),
    "drop-codewords": lambda params, seed: MitmScript([Rule(DROP, tag=net.Tag.CODEWORD_MASKED)]),
    "replace-i-round-3": lambda params, seed: _replace_i_round(3, params.n),
    "sacrifice": lambda params, seed: SacrificeScript(
        params.n, params.n_rounds // 2, params.n_rounds - 1, seed=seed
    ),
}


def get_script(name: str, params: ProtocolParams, seed) -> net.Interposer:
    try:
        return SCRIPTS[name](params, seed)
    except KeyError:
        raise ParameterError(f"unknown script {name!r}; known: {sorted(SCRIPTS)}") from None
