"""Compact-support kernels, the pseudo-kernel and truncated kernel moments.

Every kernel here is an even polynomial on [-1, 1] and zero outside, so all
moments, the pseudo-kernel ``kbar(s) = int_s^1 t K(t) dt`` and the cross
integrals used by the variance estimators have closed forms.  The closed
forms are built once per family from polynomial coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

FAMILIES = ("triangular", "epanechnikov", "biweight")

# K(t) on [0, 1], ascending coefficients in t
_KERNEL_COEFS = {
    "triangular": np.array([1.0, -1.0]),
    "epanechnikov": np.array([0.75, 0.0, -0.75]),
    "biweight": 15.0 / 16.0 * np.array([1.0, 0.0, -2.0, 0.0, 1.0]),
}


@dataclass(frozen=True)
class _Tables:
    k: np.ndarray  # K(t), t in [0, 1]
    kbar: np.ndarray  # kbar(s), s in [0, 1]
    cdf_half: np.ndarray  # int_0^t K, t in [0, 1]


@lru_cache(maxsize=None)
def _tables(family: str) -> _Tables:
    k = _KERNEL_COEFS[family]
    tk = P.polymulx(k)
    anti = P.polyint(tk)
    kbar = -anti
    kbar[0] += P.polyval(1.0, anti)
    return _Tables(k=k, kbar=kbar, cdf_half=P.polyint(k))


@lru_cache(maxsize=None)
def _moment_antiderivative(family: str, s: int) -> np.ndarray:
    """Coefficients of x -> int_0^x w^s K(w) dw on [0, 1]."""
    k = _KERNEL_COEFS[family]
    ws = np.zeros(s + 1)
    ws[s] = 1.0
    return P.polyint(P.polymul(ws, k))


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth ``h`` (units of the smoothing axis)."""

    family: str = "triangular"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def h(self) -> float:
        return float(self.bandwidth)

    def with_bandwidth(self, h: float) -> "KernelSpec":
        return KernelSpec(self.family, h)

    def constants(self) -> "KernelConstants":
        return KernelConstants.for_family(self.family)


def _family(spec) -> str:
    return spec.family if isinstance(spec, KernelSpec) else str(spec)


def kernel_eval(spec, v):
    """K(v); zero outside [-1, 1]."""
    tab = _tables(_family(spec))
    a = np.abs(np.asarray(v, dtype=float))
    out = np.where(a <= 1.0, P.polyval(np.minimum(a, 1.0), tab.k), 0.0)
    return out if out.ndim else float(out)


def kernel_cdf(spec, v):
    """int_{-1}^v K(t) dt."""
    tab = _tables(_family(spec))
    v = np.asarray(v, dtype=float)
    a = np.minimum(np.abs(v), 1.0)
    half = P.polyval(a, tab.cdf_half)
    out = 0.5 + np.sign(v) * half
    return out if out.ndim else float(out)


def kbar(spec, s):
    """Pseudo-kernel ``int_s^1 t K(t) dt``; even, nonnegative, zero for |s| >= 1."""
    tab = _tables(_family(spec))
    a = np.abs(np.asarray(s, dtype=float))
    out = np.where(a < 1.0, P.polyval(np.minimum(a, 1.0), tab.kbar), 0.0)
    return out if out.ndim else float(out)


def kbar_h(spec: KernelSpec, s):
    """Rescaled pseudo-kernel ``kbar(s / h) / h``."""
    h = spec.h
    return kbar(spec, np.asarray(s, dtype=float) / h) / h


def kappa_moment(spec, s: int, lower_cut, upper_cut):
    """Truncated moment ``int t^s K(t) dt`` over [max(lo, -1), min(hi, 1)].

    Broadcasts over the cut arrays; empty ranges give 0.
    """
    if s < 0:
        raise ValueError("moment order must be nonnegative")
    g = _moment_antiderivative(_family(spec), int(s))
    lo = np.clip(np.asarray(lower_cut, dtype=float), -1.0, 1.0)
    hi = np.clip(np.asarray(upper_cut, dtype=float), -1.0, 1.0)
    hi = np.maximum(hi, lo)
    sign = -1.0 if s % 2 else 1.0

    # signed antiderivative on [-1, 1]: G(x) = int_0^x t^s K(t) dt
    def G(x):
        val = P.polyval(np.abs(x), g)
        return np.where(x >= 0, val, -sign * val)

    out = G(hi) - G(lo)
    return out if np.ndim(out) else float(out)


def kbar_cross_integral(spec, ratio):
    """``int kbar(s) kbar(ratio * s) ds`` over the real line, for ratio > 0.

    Exact polynomial integration; broadcasts over ``ratio``.  Satisfies
    ``f(1/r) = r f(r)``.
    """
    tab = _tables(_family(spec))
    r = np.asarray(ratio, dtype=float)
    if np.any(r <= 0):
        raise ValueError("ratio must be positive")
    a = np.minimum(1.0, 1.0 / r)
    c = tab.kbar
    total = np.zeros_like(r)
    # 2 * int_0^a kbar(s) kbar(r s) ds; kbar(r s) = sum_l c_l r^l s^l on s <= a
    for k_, ck in enumerate(c):
        for l_, cl in enumerate(c):
            if ck == 0.0 or cl == 0.0:
                continue
            d = k_ + l_ + 1
            total = total + ck * cl * r**l_ * a**d / d
    out = 2.0 * total
    return out if out.ndim else float(out)


def kbar_sq_integral(spec) -> float:
    return float(kbar_cross_integral(spec, 1.0))


def gamma_const(spec, c: float) -> float:
    """Kernel factor of the distribution-regression variance at ``u = u_* + c h``.

    With ``g(s) = kbar_c(s) - 1{s <= 0} k1(c)``, where ``kbar_c`` is the
    pseudo-kernel with its lower limit clamped at ``-c`` and
    ``ks(c) = int_{-c}^1 t^s K``, the leading variance of the truncated
    local-linear smoother is ``int g^2 / k2(c)^2``, i.e.

        (int_{-c}^1 kbar^2 - 2 k1(c) int_{-c}^0 kbar + c k1(c)^2) / k2(c)^2.

    At c = 1 this is ``int kbar^2 / k2^2`` (26/35 for the triangular kernel).
    """
    if not 0.0 < c <= 1.0:
        raise ValueError("c must lie in (0, 1]")
    k1 = kappa_moment(spec, 1, -c, 1.0)
    k2 = kappa_moment(spec, 2, -c, 1.0)
    sq = _kbar_sq_partial(spec, -c, 1.0)
    lin = _kbar_partial(spec, -c, 0.0)
    return float((sq - 2.0 * k1 * lin + c * k1**2) / k2**2)


def _kbar_partial(spec, a: float, b: float) -> float:
    """int_a^b kbar(s) ds for -1 <= a <= b <= 1."""
    anti = P.polyint(_tables(_family(spec)).kbar)

    def G(x):
        v = P.polyval(abs(x), anti)
        return v if x >= 0 else -v

    return float(G(b) - G(a))


def _kbar_sq_partial(spec, a: float, b: float) -> float:
    """int_a^b kbar(s)^2 ds for -1 <= a <= b <= 1."""
    kb = _tables(_family(spec)).kbar
    anti = P.polyint(P.polymul(kb, kb))

    def G(x):
        v = P.polyval(abs(x), anti)
        return v if x >= 0 else -v

    return float(G(b) - G(a))


@dataclass(frozen=True)
class KernelConstants:
    """Cached kernel functionals of one family."""

    family: str
    kappa: dict = field(default_factory=dict)
    kbar_sq_int: float = 0.0

    @classmethod
    def for_family(cls, family: str) -> "KernelConstants":
        kap = {(s, 1.0): kappa_moment(family, s, -1.0, 1.0) for s in range(7)}
        return cls(family=family, kappa=kap, kbar_sq_int=kbar_sq_integral(family))

    def kappa_c(self, s: int, c: float) -> float:
        """kappa_s(c) = int_{-c}^1 t^s K(t) dt."""
        key = (s, float(c))
        if key not in self.kappa:
            return kappa_moment(self.family, s, -c, 1.0)
        return self.kappa[key]

    @property
    def k2(self) -> float:
        return self.kappa[(2, 1.0)]

    @property
    def k4(self) -> float:
        return self.kappa[(4, 1.0)]

    def gamma(self, c: float = 1.0) -> float:
        return gamma_const(self.family, c)
