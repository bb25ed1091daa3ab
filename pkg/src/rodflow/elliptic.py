"""Elliptic integrals and Jacobi elliptic functions.

Parameter convention is m = k^2 throughout (not the modulus k), with m < 1
and negative m allowed.  Complete first-kind integrals go through the
arithmetic-geometric mean, incomplete second-kind integrals through Carlson
symmetric forms, and the Jacobi amplitude through the descending AGM
recursion, so everything here is plain double-precision arithmetic with
no quadrature.
"""

from __future__ import annotations

import math

__all__ = [
    "EllipticParam",
    "complete_K",
    "complete_E",
    "incomplete_E",
    "jacobi_am_cn",
    "jacobi_functions",
    "figure_eight_modulus",
]


class EllipticParam(float):
    """Parameter m = k^2 of an elliptic integral; m < 1 for complete ones."""

    def __new__(cls, m):
        m = float(m)
        if m >= 1.0:
            raise ValueError(f"elliptic parameter m must be < 1, got {m}")
        return float.__new__(cls, m)


def complete_K(m: float) -> float:
    """Complete elliptic integral of the first kind K(m).

    K(m) = pi / (2 agm(1, sqrt(1-m))), valid for all m < 1.
    """
    if m >= 1.0:
        raise ValueError(f"complete_K requires m < 1, got {m}")
    a, b = 1.0, math.sqrt(1.0 - m)
    for _ in range(60):
        if abs(a - b) <= 4e-16 * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (a + b)


def _carlson_rf(x: float, y: float, z: float) -> float:
    # R_F via the duplication theorem; all arguments nonnegative, at most one zero.
    for _ in range(200):
        sx, sy, sz = math.sqrt(x), math.sqrt(y), math.sqrt(z)
        lam = sx * sy + sy * sz + sz * sx
        x, y, z = 0.25 * (x + lam), 0.25 * (y + lam), 0.25 * (z + lam)
        mu = (x + y + z) / 3.0
        dx, dy, dz = (mu - x) / mu, (mu - y) / mu, (mu - z) / mu
        if max(abs(dx), abs(dy), abs(dz)) < 1e-8:
            e2 = dx * dy - dz * dz
            e3 = dx * dy * dz
            s = 1.0 + (e2 / 24.0 - 0.1 - 3.0 * e3 / 44.0) * e2 + e3 / 14.0
            return s / math.sqrt(mu)
    raise RuntimeError("carlson_rf did not converge")


def _carlson_rd(x: float, y: float, z: float) -> float:
    # R_D via duplication; z > 0.
    total = 0.0
    fac = 1.0
    for _ in range(200):
        sx, sy, sz = math.sqrt(x), math.sqrt(y), math.sqrt(z)
        lam = sx * sy + sy * sz + sz * sx
        total += fac / (sz * (z + lam))
        fac *= 0.25
        x, y, z = 0.25 * (x + lam), 0.25 * (y + lam), 0.25 * (z + lam)
        mu = (x + y + 3.0 * z) / 5.0
        dx, dy, dz = (mu - x) / mu, (mu - y) / mu, (mu - z) / mu
        if max(abs(dx), abs(dy), abs(dz)) < 1e-8:
            ea = dx * dy
            eb = dz * dz
            ec = ea - eb
            ed = ea - 6.0 * eb
            ee = ed + ec + ec
            s = ed * (-3.0 / 14.0 + 9.0 / 88.0 * ed - 4.5 / 26.0 * dz * ee)
            s += dz * (ee / 6.0 + dz * (-9.0 / 22.0 * ec + 3.0 / 26.0 * dz * ea))
            return 3.0 * total + fac * (1.0 + s) / (mu * math.sqrt(mu))
    raise RuntimeError("carlson_rd did not converge")


def _incomplete_E_principal(phi: float, m: float) -> float:
    # E(phi, m) for |phi| <= pi/2 via Carlson forms.
    if phi == 0.0:
        return 0.0
    if phi < 0.0:
        return -_incomplete_E_principal(-phi, m)
    s = math.sin(phi)
    c = math.cos(phi)
    s2 = s * s
    q = 1.0 - m * s2
    if q <= 0.0:
        raise ValueError(f"incomplete_E domain violation: m*sin^2(phi) >= 1 (m={m}, phi={phi})")
    c2 = c * c
    return s * _carlson_rf(c2, q, 1.0) - (m / 3.0) * s * s2 * _carlson_rd(c2, q, 1.0)


def complete_E(m: float) -> float:
    """Complete elliptic integral of the second kind E(m) = E(pi/2, m)."""
    if m >= 1.0:
        raise ValueError(f"complete_E requires m < 1, got {m}")
    return _incomplete_E_principal(0.5 * math.pi, m)


def incomplete_E(phi: float, m: float) -> float:
    """Incomplete elliptic integral of the second kind E(phi, m).

    E(phi, m) = int_0^phi sqrt(1 - m sin^2 t) dt for any real phi with
    m sin^2 phi < 1.  Quasi-periodicity E(phi + pi, m) = E(phi, m) + 2 E(m)
    extends the Carlson evaluation beyond the principal range.
    """
    n = round(phi / math.pi)
    phi_r = phi - n * math.pi
    val = _incomplete_E_principal(phi_r, m)
    if n != 0:
        val += 2.0 * n * complete_E(m)
    return val


def jacobi_functions(u: float, m: float):
    """Jacobi amplitude and elliptic functions (am, sn, cn, dn) for 0 <= m < 1.

    Descending AGM: phi_N = 2^N a_N u, then
    phi_{n-1} = (phi_n + asin((c_n/a_n) sin phi_n)) / 2, am = phi_0.
    The amplitude is continuous and unbounded in u, so cn(u) = cos(am(u))
    is valid on the whole real line.
    """
    if not 0.0 <= m < 1.0:
        raise ValueError(f"jacobi functions require 0 <= m < 1, got {m}")
    if m == 0.0:
        return u, math.sin(u), math.cos(u), 1.0
    a, b = 1.0, math.sqrt(1.0 - m)
    an = [a]
    cs = []
    for _ in range(60):
        cs.append(0.5 * (a - b))
        a, b = 0.5 * (a + b), math.sqrt(a * b)
        an.append(a)
        if cs[-1] <= 4e-16 * an[-1]:
            break
    nlev = len(cs)
    phi = (2.0 ** nlev) * an[nlev] * u
    for k in range(nlev, 0, -1):
        phi = 0.5 * (phi + math.asin(max(-1.0, min(1.0, cs[k - 1] / an[k] * math.sin(phi)))))
    am = phi
    sn = math.sin(am)
    cn = math.cos(am)
    dn = math.sqrt(max(0.0, 1.0 - m * sn * sn))
    return am, sn, cn, dn


def jacobi_am_cn(u: float, m: float):
    """Amplitude am(u, m) and elliptic cosine cn(u, m)."""
    am, _, cn, _ = jacobi_functions(u, m)
    return am, cn


def figure_eight_modulus() -> float:
    """Parameter m in (0,1) with 2 E(m) = K(m).

    Root of the closure condition of the planar figure-eight elastica,
    located by bisection to 1e-12.
    """
    def resid(m):
        return 2.0 * complete_E(m) - complete_K(m)

    lo, hi = 0.5, 1.0 - 1e-12
    flo = resid(lo)
    if flo <= 0.0:
        raise RuntimeError("figure_eight_modulus: bracket failure")
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
