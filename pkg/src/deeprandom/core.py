"""Vector, bit-vector and permutation arithmetic plus randomness sources.

Conventions used everywhere in the package:

* indices are 0-based in storage (1-based only in prose);
* a permutation is an integer image array ``p`` and applying it to a vector
  gives ``apply_permutation(p, x)[s] == x[p[s]]``;
* parameter vectors are float64 arrays in [0, 1], experiment vectors are
  uint8 arrays of 0/1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operands have incompatible lengths or degrees."""


class ParameterError(ValueError):
    """A protocol parameter or argument violates its contract."""


# Mersenne exponents whose 2**e - 1 is prime; used to pick the hash field.
MERSENNE_EXPONENTS = (521, 607, 1279, 2203, 2281, 3217, 4253, 4423, 9689, 9941, 11213, 19937)


def mersenne_prime_above(nbits: int) -> int:
    """Smallest listed Mersenne prime with more than ``nbits`` bits."""
    for e in MERSENNE_EXPONENTS:
        if e > nbits:
            return (1 << e) - 1
    raise ParameterError(f"no tabulated Mersenne prime exceeds {nbits} bits")


# -- vectors -----------------------------------------------------------------

def as_parameter_vector(x: Any, *, even: bool = False) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError("parameter vector must be one-dimensional")
    if even and arr.size % 2:
        raise DimensionError(f"parameter vector length must be even, got {arr.size}")
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise ParameterError("parameter vector entries must lie in [0, 1]")
    return arr


def as_experiment_vector(i: Any) -> np.ndarray:
    arr = np.asarray(i)
    if arr.ndim != 1:
        raise DimensionError("experiment vector must be one-dimensional")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ParameterError("experiment vector entries must be 0 or 1")
    return arr.astype(np.uint8, copy=False)


def as_permutation(p: Any) -> np.ndarray:
    arr = np.asarray(p, dtype=np.int64)
    if arr.ndim != 1:
        raise DimensionError("permutation must be a one-dimensional image array")
    seen = np.zeros(arr.size, dtype=bool)
    if arr.size and (arr.min() < 0 or arr.max() >= arr.size):
        raise ParameterError("permutation images out of range")
    seen[arr] = True
    if not seen.all():
        raise ParameterError("permutation is not a bijection")
    return arr


def scalar_product(x: Any, y: Any) -> float | int:
    """Sum of entrywise products; exact integer for two bit vectors."""
    xa, ya = np.asarray(x), np.asarray(y)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise DimensionError(f"length mismatch: {xa.shape} vs {ya.shape}")
    if xa.dtype.kind in "biu" and ya.dtype.kind in "biu":
        return int(np.dot(xa.astype(np.int64), ya.astype(np.int64)))
    return float(np.dot(xa.astype(np.float64), ya.astype(np.float64)))


def weight(i: Any) -> int:
    return int(np.count_nonzero(as_experiment_vector(i)))


def apply_permutation(sigma: Any, x: Any) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.int64)
    xa = np.asarray(x)
    if s.shape != xa.shape[:1]:
        raise DimensionError(f"permutation degree {s.size} != vector length {xa.shape[0]}")
    return xa[s]


def invert_permutation(sigma: Any) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.int64)
    inv = np.empty_like(s)
    inv[s] = np.arange(s.size, dtype=np.int64)
    return inv


def compose(sigma: Any, tau: Any) -> np.ndarray:
    """Permutation ``c`` with ``apply(c, x) == apply(tau, apply(sigma, x))``."""
    s = np.asarray(sigma, dtype=np.int64)
    t = np.asarray(tau, dtype=np.int64)
    if s.shape != t.shape:
        raise DimensionError("permutation degree mismatch")
    return s[t]


def scale_vector(x: Any, k: float) -> np.ndarray:
    if k < 1:
        raise ParameterError(f"degradation divisor must be >= 1, got {k}")
    return as_parameter_vector(x) / k


def transpose_pair(b: int, pair: tuple[Any, Any]) -> tuple[Any, Any]:
    if b not in (0, 1):
        raise ParameterError("transposition bit must be 0 or 1")
    first, second = pair
    return (second, first) if b else (first, second)


# -- randomness --------------------------------------------------------------

DEEP_PRIVATE = "deep-random-private"
PUBLIC_COIN = "public-coin"


class RandomnessSource:
    """Seeded generator tagged with who may see its draws.

    The private kind stands in for a Deep Random Generator: its output feeds
    secret quantities only.  The class deliberately exposes no way to read
    back the generator state.
    """

    __slots__ = ("_kind", "_rng")

    def __init__(self, kind: str, seed: int | np.random.SeedSequence | None = None):
        if kind not in (DEEP_PRIVATE, PUBLIC_COIN):
            raise ParameterError(f"unknown randomness kind {kind!r}")
        self._kind = kind
        self._rng = np.random.default_rng(seed)

    @classmethod
    def private(cls, seed=None) -> "RandomnessSource":
        return cls(DEEP_PRIVATE, seed)

    @classmethod
    def public(cls, seed=None) -> "RandomnessSource":
        return cls(PUBLIC_COIN, seed)

    @property
    def kind(self) -> str:
        return self._kind

    @property
    def is_private(self) -> bool:
        return self._kind == DEEP_PRIVATE

    def require(self, kind: str) -> "RandomnessSource":
        if self._kind != kind:
            raise ParameterError(f"operation needs a {kind} source, got {self._kind}")
        return self

    def __repr__(self) -> str:
        return f"RandomnessSource({self._kind!r})"

    def __getstate__(self):
        raise TypeError("randomness sources are single-owner and not serialisable")

    # thin draw API
    def random(self, size=None):
        return self._rng.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._rng.uniform(low, high, size)

    def beta(self, a, b, size=None):
        return self._rng.beta(a, b, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._rng.permutation(n).astype(np.int64)

    def bit(self) -> int:
        return int(self._rng.integers(0, 2))

    def bits(self, size: int) -> np.ndarray:
        return self._rng.integers(0, 2, size=size, dtype=np.uint8)

    def integers(self, low, high=None, size=None):
        return self._rng.integers(low, high, size=size)

    def bytes(self, n: int) -> bytes:
        return self._rng.bytes(n)


def bernoulli_draw(p: Any, src: RandomnessSource) -> np.ndarray:
    pa = as_parameter_vector(p)
    return (src.random(pa.size) < pa).astype(np.uint8)


# -- parameters --------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolParams:
    """Fixed, non-negotiated protocol parameters.

    ``n_rounds=0`` and ``p=0`` mean "derive the default": rounds are sized
    from the key budget, the field is the smallest tabulated Mersenne prime
    wider than any transcript element.
    """

    n: int = 64
    k: float = 16.0
    K: float = 3.0
    alpha: float = 0.4
    L: int = 5
    n_rounds: int = 0
    H_s: int = 64
    L_M: int = 128
    t: int = 16
    p: int = 0
    concentration: float = 20.0
    pa_margin: float = 0.5
    assumed_accept: float = 0.75

    def __post_init__(self):
        if self.n_rounds == 0:
            object.__setattr__(self, "n_rounds", self.default_rounds())
        if self.p == 0:
            object.__setattr__(self, "p", mersenne_prime_above(max(self.element_bits(), self.t)))
        self.validate()

    @property
    def gauge(self) -> float:
        return self.K / math.sqrt(self.n * self.k)

    @property
    def key_bits(self) -> int:
        return self.H_s + self.L_M

    def reconciled_needed(self) -> int:
        return math.ceil(self.key_bits / (1.0 - self.pa_margin))

    def default_rounds(self) -> int:
        blocks = math.ceil(self.reconciled_needed() / self.assumed_accept)
        return blocks * self.L

    def element_bits(self) -> int:
        # widest transcript element is a permutation pair: 2 * n * 32 bits
        return 64 * self.n

    def validate(self) -> None:
        if self.n < 2 or self.n % 2:
            raise ParameterError(f"n must be even and >= 2, got {self.n}")
        if not self.k > 1:
            raise ParameterError(f"k must exceed 1, got {self.k}")
        if not (1 < self.K < math.sqrt(self.k)):
            raise ParameterError(
                f"gauge ordering violated: need 1 < K < sqrt(k) (K={self.K}, sqrt(k)={math.sqrt(self.k):g})"
            )
        if not 0 <= self.alpha < 1:
            raise ParameterError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.L < 1:
            raise ParameterError("codeword length L must be >= 1")
        if self.n_rounds < 1:
            raise ParameterError("n_rounds must be positive")
        if self.H_s < 2 or self.H_s % 2:
            raise ParameterError("H_s must be even and >= 2")
        if self.L_M < 0:
            raise ParameterError("L_M must be non-negative")
        if self.t < 1:
            raise ParameterError("t must be positive")
        if self.p <= (1 << self.t):
            raise ParameterError("hash modulus p must exceed 2**t")
        if not 0 <= self.pa_margin < 1:
            raise ParameterError("pa_margin must lie in [0, 1)")
        if self.concentration <= 2:
            raise ParameterError("concentration must exceed 2 for unimodal block densities")
        max_blocks = self.n_rounds // self.L
        usable = math.floor(max_blocks * (1.0 - self.pa_margin))
        if usable < self.key_bits:
            raise ParameterError(
                f"|S| budget violated: {self.n_rounds} rounds give at most {usable} key bits, "
                f"need H_s + L_M = {self.key_bits}"
            )

    def with_(self, **changes) -> "ProtocolParams":
        """Copy with changes; derived fields are re-derived unless given."""
        base = {f.name: getattr(self, f.name) for f in fields(self)}
        base["n_rounds"] = 0
        base["p"] = 0
        base.update(changes)
        return ProtocolParams(**base)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        e = (self.p + 1).bit_length() - 1
        d["p"] = f"2**{e}-1" if self.p + 1 == 1 << e else hex(self.p)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        d = dict(d)
        if isinstance(d.get("p"), str):
            d["p"] = parse_modulus(d["p"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown protocol parameters: {sorted(unknown)}")
        return cls(**d)


def parse_modulus(text: str) -> int:
    """Accept ``2**e-1`` as well as any base-prefixed integer literal."""
    t = text.replace(" ", "")
    if t.startswith("2**") and t.endswith("-1"):
        return (1 << int(t[3:-2])) - 1
    return int(t, 0)


def bits_to_int(bits: Sequence[int]) -> int:
    """Big-endian (first bit most significant) integer of a bit sequence."""
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def int_to_bits(v: int, width: int) -> np.ndarray:
    return np.array([(v >> (width - 1 - s)) & 1 for s in range(width)], dtype=np.uint8)
