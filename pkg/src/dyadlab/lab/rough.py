"""Exponent algebra for the maximal rough-integral reduction, in exact rationals."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..grid import DomainError


def _conj(x: Fraction) -> Fraction:
    return x / (x - 1)


@dataclass(frozen=True)
class RoughExponents:
    p: Fraction
    q: Fraction
    d: int
    K: Fraction
    tau: Fraction
    eps: Fraction
    s: Fraction

    @property
    def p_conj(self) -> Fraction:
        return _conj(self.p)

    @property
    def ps_conj(self) -> Fraction:
        return _conj(self.p * self.s)


@dataclass(frozen=True)
class RoughCertificate:
    exponents: RoughExponents
    identity_lhs: Fraction        # (ps-1) - s(p-1)(1+eps)
    identity_rhs: Fraction        # ((p-1) eps/(tau-2)) (2 - (p-1) tau eps)
    reciprocal: Fraction          # 1/(p' - (ps)'(1+eps))
    bound: Fraction               # (ps-1)(tau-2)/(eps p)
    C: Fraction                   # p(p-1) tau (tau-1)/(p-q)
    tau_eps: Fraction             # (p-1) tau eps
    product: Fraction             # (1+eps) s
    product_cap: Fraction         # 1 + 1/(2^{d+11} K)

    @property
    def identity_holds(self) -> bool:
        return self.identity_lhs == self.identity_rhs

    @property
    def bound_holds(self) -> bool:
        return 0 < self.reciprocal <= self.bound <= self.C * self.exponents.K

    @property
    def invariants_hold(self) -> bool:
        return self.tau_eps <= 1 and self.product <= self.product_cap

    @property
    def ok(self) -> bool:
        return self.identity_holds and self.bound_holds and self.invariants_hold

    @property
    def ratio_to_K(self) -> Fraction:
        return self.reciprocal / self.exponents.K


def rough_exponents(p, q, d: int, K) -> RoughCertificate:
    p, q, K = Fraction(p), Fraction(q), Fraction(K)
    if not 1 <= q < p:
        raise DomainError("need 1 <= q < p")
    if K < 1:
        raise DomainError("K must be at least 1")
    if d < 1:
        raise DomainError("dimension must be positive")
    tau = Fraction(8 * 2 ** (d + 11))
    r = p / (p - q)
    pc = _conj(p)
    eps = 1 / (p * r * tau * K)
    s = 1 + 1 / (pc * r * (tau - 2) * K)
    ex = RoughExponents(p, q, d, K, tau, eps, s)
    ps = p * s
    lhs = (ps - 1) - s * (p - 1) * (1 + eps)
    rhs = ((p - 1) * eps / (tau - 2)) * (2 - (p - 1) * tau * eps)
    recip = 1 / (pc - _conj(ps) * (1 + eps))
    bound = (ps - 1) * (tau - 2) / (eps * p)
    C = p * (p - 1) * tau * (tau - 1) / (p - q)
    return RoughCertificate(ex, lhs, rhs, recip, bound, C, (p - 1) * tau * eps, (1 + eps) * s,
                            1 + Fraction(1, 2 ** (d + 11)) / K)
