"""Discrete f-divergences, symmetry decomposition, and chi^n series tools.

Conventions used throughout:

* ``D_f(p || q) = sum_i q_i * f(p_i / q_i)`` with ``0 * f(0/0) = 0``.
* Symmetric generators decompose as ``f(t) = t*log(t) + g(t)``; the
  remainder ``g`` carries the series coefficients ``c_n = g^(n)(1) / n!``.
* ``chi_n(p, q) = sum_i q_i * (p_i/q_i - 1)^n``, signed for odd n.

The Jensen-Shannon family is kept at generator scale (twice the halved
textbook value) so that the chi^n series converges to
``exact_f_divergence`` without rescaling.  The GAN generator differs from
Jensen-Shannon only by an affine term; its exact divergence is reported
with the additive constant normalised away, so D(p, p) = 0 and the two
families agree on every divergence value and every derivative of order
two or higher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "DivergenceFamily",
    "FORWARD_KL",
    "REVERSE_KL",
    "JEFFREYS",
    "JENSEN_SHANNON",
    "GAN",
    "SYMMETRIC_FAMILIES",
    "chi_family",
    "parse_family",
    "f_value",
    "g_value",
    "f_derivative_at_one",
    "g_derivative_at_one",
    "g_nth_derivative",
    "series_coefficient",
    "exact_f_divergence",
    "chi_n",
    "taylor_divergence",
    "truncation_bound",
    "DivergenceDomainError",
    "UnsupportedFamilyError",
    "AbsoluteContinuityError",
    "InvalidDistributionError",
]


class DivergenceDomainError(ValueError):
    """Generator or derivative evaluated outside its domain."""


class UnsupportedFamilyError(ValueError):
    """Operation not defined for the requested family."""


class AbsoluteContinuityError(ValueError):
    """A required absolute-continuity relation between p and q fails."""


class InvalidDistributionError(ValueError):
    """Input vector is not a probability distribution."""


_NAMED_KINDS = ("forward_kl", "reverse_kl", "jeffreys", "jensen_shannon", "gan")
_SYMMETRIC_KINDS = ("jeffreys", "jensen_shannon", "gan")


@dataclass(frozen=True)
class DivergenceFamily:
    """A divergence family tag: one of the named generators or chi^k.

    ``order`` is meaningful only for kind ``"chi"`` (k >= 2).
    """

    kind: str
    order: int = 0

    def __post_init__(self) -> None:
        if self.kind == "chi":
            if self.order < 2:
                raise UnsupportedFamilyError("chi order must be >= 2")
        elif self.kind not in _NAMED_KINDS:
            raise UnsupportedFamilyError(f"unknown divergence kind {self.kind!r}")
        elif self.order != 0:
            raise UnsupportedFamilyError("order is only meaningful for chi families")

    @property
    def name(self) -> str:
        return f"chi{self.order}" if self.kind == "chi" else self.kind

    @property
    def is_symmetric(self) -> bool:
        return self.kind in _SYMMETRIC_KINDS

    def __str__(self) -> str:
        return self.name


FORWARD_KL = DivergenceFamily("forward_kl")
REVERSE_KL = DivergenceFamily("reverse_kl")
JEFFREYS = DivergenceFamily("jeffreys")
JENSEN_SHANNON = DivergenceFamily("jensen_shannon")
GAN = DivergenceFamily("gan")
SYMMETRIC_FAMILIES = (JEFFREYS, JENSEN_SHANNON, GAN)


def chi_family(order: int) -> DivergenceFamily:
    return DivergenceFamily("chi", order)


def parse_family(name: str) -> DivergenceFamily:
    """Parse a serialized family name ("forward_kl", ..., "chi2", "chi3", ...)."""
    text = name.strip().lower()
    if text in _NAMED_KINDS:
        return DivergenceFamily(text)
    if text.startswith("chi"):
        try:
            order = int(text[3:])
        except ValueError:
            raise UnsupportedFamilyError(f"malformed chi family name {name!r}") from None
        return chi_family(order)
    raise UnsupportedFamilyError(
        f"unknown family {name!r}; expected one of {', '.join(_NAMED_KINDS)} or chiK"
    )


def _xlogx(t: float) -> float:
    return t * math.log(t) if t > 0.0 else 0.0


def f_value(family: DivergenceFamily, t: float) -> float:
    """Evaluate the generator f at a scalar ratio t.

    The GAN generator is evaluated literally, without the additive
    normalisation constant used by :func:`exact_f_divergence`, so
    ``f_value(GAN, 1.0)`` is ``-2*log(2)`` rather than zero.
    """
    t = float(t)
    kind = family.kind
    if kind == "forward_kl":
        if t < 0.0:
            raise DivergenceDomainError("forward_kl generator requires t >= 0")
        return _xlogx(t)
    if kind == "reverse_kl":
        if t <= 0.0:
            raise DivergenceDomainError("reverse_kl generator requires t > 0")
        return -math.log(t)
    if kind == "jeffreys":
        if t <= 0.0:
            raise DivergenceDomainError("jeffreys generator requires t > 0")
        return (t - 1.0) * math.log(t)
    if kind == "jensen_shannon":
        if t < 0.0:
            raise DivergenceDomainError("jensen_shannon generator requires t >= 0")
        return _xlogx(t) - (1.0 + t) * math.log((1.0 + t) / 2.0)
    if kind == "gan":
        if t < 0.0:
            raise DivergenceDomainError("gan generator requires t >= 0")
        return _xlogx(t) - (1.0 + t) * math.log1p(t)
    return (t - 1.0) ** family.order


def g_value(family: DivergenceFamily, t: float) -> float:
    """Remainder g(t) = f(t) - t*log(t) of the symmetry decomposition."""
    t = float(t)
    kind = family.kind
    if kind == "jeffreys":
        if t <= 0.0:
            raise DivergenceDomainError("jeffreys remainder requires t > 0")
        return -math.log(t)
    if kind == "jensen_shannon":
        if t <= -1.0:
            raise DivergenceDomainError("jensen_shannon remainder requires t > -1")
        return -(1.0 + t) * math.log((1.0 + t) / 2.0)
    if kind == "gan":
        if t <= -1.0:
            raise DivergenceDomainError("gan remainder requires t > -1")
        return -(1.0 + t) * math.log1p(t)
    raise UnsupportedFamilyError(f"{family.name} has no symmetry decomposition")


def _require_symmetric(family: DivergenceFamily, what: str) -> None:
    if not family.is_symmetric:
        raise UnsupportedFamilyError(f"{what} is defined for symmetric families only")


def _g_derivative_fraction(kind: str, n: int) -> Fraction:
    # Direct differentiation.  Jeffreys: g = -log t, so
    # g^(n)(t) = (-1)^n (n-1)! / t^n.  Jensen-Shannon and GAN share
    # g''(t) = -1/(1+t), so g^(n)(1) = (-1)^(n-1) (n-2)! / 2^(n-1).
    if kind == "jeffreys":
        return Fraction((-1) ** n * math.factorial(n - 1))
    return Fraction((-1) ** (n - 1) * math.factorial(n - 2), 2 ** (n - 1))


def g_derivative_at_one(family: DivergenceFamily, n: int) -> float:
    """n-th derivative of the remainder g at t = 1 (closed form), n >= 2."""
    _require_symmetric(family, "g_derivative_at_one")
    if n < 2:
        raise DivergenceDomainError("derivative order must be >= 2")
    return float(_g_derivative_fraction(family.kind, n))


def g_nth_derivative(family: DivergenceFamily, n: int, t):
    """Closed-form g^(n)(t) for a symmetric family, n >= 2.  Vectorized in t."""
    _require_symmetric(family, "g_nth_derivative")
    if n < 2:
        raise DivergenceDomainError("derivative order must be >= 2")
    t = np.asarray(t, dtype=np.float64)
    if family.kind == "jeffreys":
        if np.any(t <= 0.0):
            raise DivergenceDomainError("jeffreys derivatives require t > 0")
        return (-1.0) ** n * math.factorial(n - 1) / t**n
    if np.any(t <= -1.0):
        raise DivergenceDomainError("jensen_shannon/gan derivatives require t > -1")
    return (-1.0) ** (n - 1) * math.factorial(n - 2) / (1.0 + t) ** (n - 1)


def series_coefficient(family: DivergenceFamily, n: int) -> float:
    """Series coefficient c_n = g^(n)(1) / n! of a symmetric family.

    Exact values: Jeffreys c_n = (-1)^n / n; Jensen-Shannon and GAN
    c_n = (-1)^(n-1) / (n (n-1) 2^(n-1)).
    """
    _require_symmetric(family, "series_coefficient")
    if n < 2:
        raise DivergenceDomainError("series coefficients start at n = 2")
    return float(_g_derivative_fraction(family.kind, n) / math.factorial(n))


def f_derivative_at_one(family: DivergenceFamily, n: int) -> float:
    """n-th derivative of the full generator f at t = 1, n >= 2.

    For the symmetric families this is the t*log(t) part, whose n-th
    derivative at 1 is (-1)^n (n-2)!, plus g^(n)(1).
    """
    if n < 2:
        raise DivergenceDomainError("derivative order must be >= 2")
    kind = family.kind
    base = Fraction((-1) ** n * math.factorial(n - 2))
    if kind == "forward_kl":
        return float(base)
    if kind == "reverse_kl":
        return float(Fraction((-1) ** n * math.factorial(n - 1)))
    if kind in _SYMMETRIC_KINDS:
        return float(base + _g_derivative_fraction(kind, n))
    return float(math.factorial(family.order)) if n == family.order else 0.0


def validate_distribution(x, name: str = "p") -> np.ndarray:
    """Coerce to a 1-D float64 probability vector or raise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidDistributionError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidDistributionError(f"{name} contains non-finite entries")
    if np.any(arr < 0.0):
        raise InvalidDistributionError(f"{name} contains negative entries")
    if abs(float(arr.sum()) - 1.0) > 1e-12:
        raise InvalidDistributionError(f"{name} must sum to 1 within 1e-12")
    return arr


def _validated_pair(p, q, mutual: bool) -> tuple[np.ndarray, np.ndarray]:
    p = validate_distribution(p, "p")
    q = validate_distribution(q, "q")
    if p.shape != q.shape:
        raise InvalidDistributionError("p and q must have equal support size")
    if np.any((p > 0.0) & (q == 0.0)):
        raise AbsoluteContinuityError("p is not absolutely continuous w.r.t. q")
    if mutual and np.any((q > 0.0) & (p == 0.0)):
        raise AbsoluteContinuityError("q is not absolutely continuous w.r.t. p")
    return p, q


def exact_f_divergence(family: DivergenceFamily, p, q) -> float:
    """Exact D_f(p || q) by direct summation.

    Coordinates with p_i = q_i = 0 contribute nothing.  The GAN value
    includes its additive constant, which cancels the raw generator
    sum's offset of -log(4) and makes the result coincide with the
    Jensen-Shannon value.
    """
    mutual = family.kind in ("jeffreys", "reverse_kl")
    p, q = _validated_pair(p, q, mutual)
    kind = family.kind

    if kind == "forward_kl":
        m = p > 0.0
        return float(np.sum(p[m] * (np.log(p[m]) - np.log(q[m]))))
    if kind == "reverse_kl":
        m = q > 0.0
        return float(np.sum(q[m] * (np.log(q[m]) - np.log(p[m]))))
    if kind == "jeffreys":
        m = p > 0.0  # mutual continuity enforced, so p>0 iff q>0
        diff = p[m] - q[m]
        return float(np.sum(diff * (np.log(p[m]) - np.log(q[m]))))
    if kind in ("jensen_shannon", "gan"):
        mid = 0.5 * (p + q)
        mp = p > 0.0
        mq = q > 0.0
        left = np.sum(p[mp] * (np.log(p[mp]) - np.log(mid[mp])))
        right = np.sum(q[mq] * (np.log(q[mq]) - np.log(mid[mq])))
        return float(left + right)
    m = q > 0.0
    return float(np.sum(q[m] * (p[m] / q[m] - 1.0) ** family.order))


def chi_n(p, q, n: int) -> float:
    """Pearson-Vajda moment chi^n(p, q) = sum_i q_i (p_i/q_i - 1)^n, n >= 1."""
    if n < 1:
        raise DivergenceDomainError("chi_n requires n >= 1")
    p, q = _validated_pair(p, q, mutual=False)
    m = q > 0.0
    return float(np.sum(q[m] * (p[m] / q[m] - 1.0) ** n))


def taylor_divergence(family: DivergenceFamily, p, q, n_max: int) -> float:
    """Truncated expansion sum_{n=2}^{n_max} f^(n)(1)/n! * chi_n(p, q).

    Powers of (ratio - 1) are accumulated incrementally, so cost is
    linear in n_max.
    """
    if n_max < 2:
        raise DivergenceDomainError("taylor_divergence requires n_max >= 2")
    p, q = _validated_pair(p, q, mutual=False)
    m = q > 0.0
    qm = q[m]
    d = p[m] / qm - 1.0
    power = d * d
    total = 0.0
    for n in range(2, n_max + 1):
        coeff = f_derivative_at_one(family, n) / math.factorial(n)
        total += coeff * float(np.sum(qm * power))
        power = power * d
    return total


def truncation_bound(
    family: DivergenceFamily, n_trunc: int, eps: float, dataset_size: int
) -> float:
    """Worst-case remainder bound for the clipped series truncated at n_trunc.

    Returns 2 * dataset_size * eps^(N+1) / (N+1)! * sup |g^(N+1)| over
    [1-eps, 1+eps].  The sup sits at the interval endpoint nearest the
    domain singularity; this is asserted by sampling rather than assumed.
    """
    _require_symmetric(family, "truncation_bound")
    if n_trunc < 2:
        raise DivergenceDomainError("truncation order must be >= 2")
    if dataset_size < 1:
        raise DivergenceDomainError("dataset_size must be >= 1")
    eps = float(eps)
    if eps < 0.0:
        raise DivergenceDomainError("eps must be nonnegative")
    if eps == 0.0:
        return 0.0
    if family.kind == "jeffreys" and eps >= 1.0:
        raise DivergenceDomainError("jeffreys bound requires eps < 1 (interval leaves t > 0)")
    if family.kind != "jeffreys" and eps >= 2.0:
        raise DivergenceDomainError("bound requires eps < 2 (interval leaves t > -1)")
    order = n_trunc + 1
    grid = np.linspace(1.0 - eps, 1.0 + eps, 257)
    magnitudes = np.abs(g_nth_derivative(family, order, grid))
    sup = float(magnitudes.max())
    assert magnitudes[0] >= sup * (1.0 - 1e-12), "derivative magnitude not left-monotone"
    return 2.0 * dataset_size * eps**order / math.factorial(order) * sup
