"""Hidden distributions, secret parameter vectors, tidying and dispersion.

The compliant family used here is a secret two-block product: half of the
coordinates (chosen uniformly at random) follow a Beta density with mean
``m_hi``, the other half one with mean ``m_lo``, and ``m_hi - m_lo >= alpha``.
Every block density has a fixed concentration ``kappa`` so moments are
available in closed form and the density has no atoms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .core import (
    ParameterError,
    ProtocolParams,
    RandomnessSource,
    DEEP_PRIVATE,
    as_experiment_vector,
    invert_permutation,
)

EXHAUSTIVE_MAX_N = 8


@dataclass(frozen=True, eq=False)
class HiddenDistribution:
    n: int
    high: np.ndarray  # bool mask of the high-mean block
    m_lo: float
    m_hi: float
    concentration: float

    @property
    def means(self) -> np.ndarray:
        return np.where(self.high, self.m_hi, self.m_lo)

    @cached_property
    def M(self) -> np.ndarray:
        return correlation_matrix(self)

    @property
    def family_params(self) -> dict:
        return {
            "n": self.n,
            "high": [int(u) for u in np.flatnonzero(self.high)],
            "m_lo": self.m_lo,
            "m_hi": self.m_hi,
            "concentration": self.concentration,
        }

    def sample(self, src: RandomnessSource, size: int | None = None) -> np.ndarray:
        m = self.means
        kappa = self.concentration
        shape = (self.n,) if size is None else (size, self.n)
        return src.beta(kappa * m, kappa * (1.0 - m), size=shape)

    def relabel(self, sigma) -> "HiddenDistribution":
        """The distribution of ``apply_permutation(sigma, x)`` for ``x`` drawn from self."""
        s = np.asarray(sigma, dtype=np.int64)
        return replace(self, high=self.high[s])


@dataclass(frozen=True, eq=False)
class DispersionDistribution(HiddenDistribution):
    target_weight: int = 0


def _mean_bounds(kappa: float) -> tuple[float, float]:
    # Beta(kappa*m, kappa*(1-m)) is unimodal when both shape parameters are >= 1
    return 1.0 / kappa, 1.0 - 1.0 / kappa


def _secret_partition(n: int, src: RandomnessSource) -> np.ndarray:
    high = np.zeros(n, dtype=bool)
    high[src.permutation(n)[: n // 2]] = True
    return high


def generate_hidden_distribution(params: ProtocolParams, src: RandomnessSource) -> HiddenDistribution:
    src.require(DEEP_PRIVATE)
    kappa = params.concentration
    lo, hi = _mean_bounds(kappa)
    if params.alpha > hi - lo:
        raise ParameterError(
            f"alpha={params.alpha} cannot fit: block means are confined to [{lo:g}, {hi:g}]"
        )
    m_lo = float(src.uniform(lo, hi - params.alpha))
    m_hi = float(src.uniform(m_lo + params.alpha, hi))
    return HiddenDistribution(params.n, _secret_partition(params.n, src), m_lo, m_hi, kappa)


def draw_parameter_vector(phi: HiddenDistribution, src: RandomnessSource) -> np.ndarray:
    src.require(DEEP_PRIVATE)
    return phi.sample(src)


def correlation_matrix(
    phi: HiddenDistribution, n_samples: int | None = None, src: RandomnessSource | None = None
) -> np.ndarray:
    """Second-moment matrix E[x_u x_v].

    Closed form by default; with ``n_samples`` a Monte Carlo estimate drawn
    from ``src`` (symmetrised by averaging both orders).
    """
    if n_samples is None:
        m = phi.means
        kappa = phi.concentration
        M = np.outer(m, m)
        np.fill_diagonal(M, m * (kappa * m + 1.0) / (kappa + 1.0))
        return M
    if n_samples < 10_000:
        raise ParameterError("Monte Carlo moments need at least 10^4 samples")
    if src is None:
        raise ParameterError("Monte Carlo moments need a randomness source")
    X = phi.sample(src, size=n_samples)
    M = X.T @ X / n_samples
    return 0.5 * (M + M.T)


def cross_sum(M: np.ndarray, sigma) -> float:
    s = np.asarray(sigma, dtype=np.int64)
    h = s.size // 2
    return float(M[np.ix_(s[:h], s[h:])].sum())


def _check_square_even(M: np.ndarray) -> int:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError("correlation matrix must be square")
    n = M.shape[0]
    if n % 2:
        raise ParameterError(f"tidying needs an even dimension, got {n}")
    return n


def _tol(M: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.abs(M).sum()))


def tidy_exhaustive(M: np.ndarray) -> np.ndarray:
    """Lexicographically smallest minimiser of the cross-block sum."""
    M = np.asarray(M, dtype=np.float64)
    n = _check_square_even(M)
    if n > EXHAUSTIVE_MAX_N:
        raise ParameterError(f"exhaustive tidying is limited to n <= {EXHAUSTIVE_MAX_N}")
    h = n // 2
    P = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    vals = M[P[:, :h, None], P[:, None, h:]].sum(axis=(1, 2))
    best = vals.min()
    return P[int(np.flatnonzero(vals <= best + _tol(M))[0])]


def _canonical_arrangement(in_first: np.ndarray) -> np.ndarray:
    # objective ignores order inside halves and swapping halves; pick the
    # lexicographically smallest image array for the partition
    if not in_first[0]:
        in_first = ~in_first
    return np.concatenate([np.flatnonzero(in_first), np.flatnonzero(~in_first)]).astype(np.int64)


def tidy_heuristic(M: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Row-sum bisection refined by best-improvement pairwise swaps."""
    M = np.asarray(M, dtype=np.float64)
    n = _check_square_even(M)
    h = n // 2
    off = M - np.diag(np.diag(M))
    rows = off.sum(axis=1)
    order = np.argsort(-rows, kind="stable")
    S = np.zeros(n, dtype=bool)
    S[order[:h]] = True
    tol = _tol(M)
    for _ in range(max_iter or n * n):
        to_S = off[:, S].sum(axis=1)
        to_T = off[:, ~S].sum(axis=1)
        D = np.where(S, to_T - to_S, to_S - to_T)
        a_idx = np.flatnonzero(S)
        b_idx = np.flatnonzero(~S)
        gain = D[a_idx, None] + D[None, b_idx] - 2.0 * off[np.ix_(a_idx, b_idx)]
        flat = int(np.argmax(gain))
        if gain.flat[flat] <= tol:
            break
        a, b = a_idx[flat // h], b_idx[flat % h]
        S[a], S[b] = False, True
    return _canonical_arrangement(S)


def tidying_permutation(M: np.ndarray) -> np.ndarray:
    """Permutation ``tau`` minimising the cross-block sum of ``M``.

    ``apply_permutation(tau, x)`` is the canonical (tidied) form of ``x``.
    """
    n = _check_square_even(M)
    return tidy_exhaustive(M) if n <= EXHAUSTIVE_MAX_N else tidy_heuristic(M)


def remoteness(phi: HiddenDistribution) -> float:
    # proxy for distance to the symmetrised distribution; zero iff exchangeable
    return float(phi.m_hi - phi.m_lo)


def generate_dispersion_distribution(
    i, params: ProtocolParams, src: RandomnessSource
) -> DispersionDistribution:
    """Secret decoy distribution whose total weight sits near ``k * |i|``."""
    src.require(DEEP_PRIVATE)
    iv = as_experiment_vector(i)
    n = iv.size
    w = int(iv.sum())
    target = params.k * w
    if target > n:
        raise ParameterError(f"weight target k|i| = {target:g} exceeds n = {n}")
    kappa = params.concentration
    lo, hi = _mean_bounds(kappa)
    centre = min(max(target / n, lo), hi)
    d_max = min(centre - lo, hi - centre)
    half_gap = params.alpha / 2.0
    d = float(src.uniform(half_gap, d_max)) if d_max > half_gap else d_max
    psi = DispersionDistribution(n, _secret_partition(n, src), centre - d, centre + d, kappa, w)
    check_mass_constraint(psi, iv, params.k)
    return psi


def dispersion_mass(psi: HiddenDistribution, i, k: float) -> float:
    """Probability that |x| lands in [k|i| - sqrt(n), k|i| + sqrt(n)] (normal approximation)."""
    n = psi.n
    w = int(as_experiment_vector(i).sum())
    m = psi.means
    mu = float(m.sum())
    sd = math.sqrt(float((m * (1 - m)).sum() / (psi.concentration + 1.0)))

    def cdf(v):
        return 0.5 * (1.0 + math.erf((v - mu) / (sd * math.sqrt(2.0))))

    return cdf(k * w + math.sqrt(n)) - cdf(k * w - math.sqrt(n))


def check_mass_constraint(psi: HiddenDistribution, i, k: float) -> None:
    need = 1.0 / (2.0 * math.sqrt(psi.n))
    mass = dispersion_mass(psi, i, k)
    if mass < need:
        raise ParameterError(f"dispersion mass {mass:.3g} below the required {need:.3g}")


def dispersion_likelihood(i, psi: HiddenDistribution, sigma, k: float) -> float:
    """Closed-form likelihood of ``i`` when ``x`` is the canonical Psi vector relabelled by ``sigma``."""
    iv = as_experiment_vector(i).astype(bool)
    tau = tidying_permutation(psi.M)
    canon_means = psi.means[tau]
    q = canon_means[np.asarray(sigma, dtype=np.int64)] / k
    return float(np.prod(np.where(iv, q, 1.0 - q)))


def dispersion_permutation(i, psi: HiddenDistribution) -> np.ndarray:
    """Decoy published alongside the real tidying permutation.

    Returns ``sigma`` sending every position of ``i`` to a slot of Psi's
    canonical form so that 1-bits occupy the high-mean half.  The result has
    the same role as a real tidying permutation: ``apply_permutation(
    invert_permutation(sigma), i)`` places the ones in the high half.  Among
    all maximisers the lexicographically smallest image array is returned.
    """
    iv = as_experiment_vector(i)
    n = iv.size
    if n != psi.n:
        raise ParameterError("experiment vector and distribution dimensions differ")
    h = n // 2
    canon_means = psi.means[tidying_permutation(psi.M)]
    first, second = canon_means[:h].mean(), canon_means[h:].mean()
    if math.isclose(first, second, rel_tol=0.0, abs_tol=1e-15):
        return np.arange(n, dtype=np.int64)
    high_first = first > second
    is_high = np.zeros(n, dtype=bool)
    if high_first:
        is_high[:h] = True
    else:
        is_high[h:] = True

    ones_total = int(iv.sum())
    target_high_ones = min(ones_total, h)
    sigma = np.empty(n, dtype=np.int64)
    high_left, low_left = h, n - h
    ones_left, zeros_left = ones_total, n - ones_total
    need_high_ones = target_high_ones

    def feasible(hl, ll, ol, zl, nho):
        return 0 <= nho <= min(ol, hl) and hl - nho <= zl and ol - nho <= ll

    # only the smallest free slot of each kind can be the lexicographic choice
    high_slots = iter(np.flatnonzero(is_high).tolist())
    low_slots = iter(np.flatnonzero(~is_high).tolist())
    next_high, next_low = next(high_slots, None), next(low_slots, None)
    for s in range(n):
        bit = int(iv[s])
        candidates = sorted(c for c in (next_high, next_low) if c is not None)
        for slot in candidates:
            hs = slot == next_high
            hl = high_left - hs
            ll = low_left - (not hs)
            ol = ones_left - bit
            zl = zeros_left - (1 - bit)
            nho = need_high_ones - (1 if (bit and hs) else 0)
            if feasible(hl, ll, ol, zl, nho):
                sigma[s] = slot
                high_left, low_left, ones_left, zeros_left, need_high_ones = hl, ll, ol, zl, nho
                if hs:
                    next_high = next(high_slots, None)
                else:
                    next_low = next(low_slots, None)
                break
        else:  # pragma: no cover - feasibility is preserved by construction
            raise RuntimeError("dispersion assignment became infeasible")
    return sigma


def published_tidying(phi: HiddenDistribution) -> np.ndarray:
    """The permutation a partner publishes for ``phi`` (inverse of the canonicalising map)."""
    return invert_permutation(tidying_permutation(phi.M))
