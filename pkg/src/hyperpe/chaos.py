"""Second-chaos calculus for the hyperviscous Ornstein-Uhlenbeck generator.

A :class:`QuadraticForm` stores a symmetric matrix Q over modes of N_0^2 by
its upper triangle.  The one convention used throughout is

    F(w) = sum_{a <= b} Q_ab (2 - delta_ab) w_a w_b + constant,

i.e. ``F(w) = w^T Q w + c`` for the full symmetric Q.  Sums over Z_0^2 pairs
(the nonlinearity and its Poisson solution) are pushed onto N_0^2 pairs with
the sign rule ``w_h = sign(h1 h2) w_|h|`` at construction time, so everything
downstream is sign-free.

Under mu, ``E[w_a w_b] = delta_ab``, and by Wick's theorem
``E[(w^T Q w)(w^T P w)] = tr Q tr P + 2 tr(QP)``; the exact expectations
below use nothing else.
"""

import math
from dataclasses import dataclass
from typing import Dict, Mapping, NamedTuple, Tuple

import numpy as np

from .spectral import ModeIndex, SpectralField

__all__ = [
    "GeneratorParams",
    "QuadraticForm",
    "evaluate_form",
    "evaluate_form_array",
    "generator_apply",
    "carre_du_champ",
    "expectation",
    "expectation_product",
    "b_mode_as_form",
    "h_poisson",
    "poisson_residual",
    "expected_carre",
    "expected_carre_increment",
]


class GeneratorParams(NamedTuple):
    theta: float

    def check(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        return self


def _params(params) -> GeneratorParams:
    if isinstance(params, GeneratorParams):
        return params.check()
    return GeneratorParams(float(params)).check()


Pair = Tuple[ModeIndex, ModeIndex]


def _key(a, b) -> Pair:
    a, b = ModeIndex(int(a[0]), int(a[1])), ModeIndex(int(b[0]), int(b[1]))
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    entries: Mapping[Pair, float]
    constant: float = 0.0
    m: int = 1

    def __post_init__(self):
        clean: Dict[Pair, float] = {}
        for (a, b), q in dict(self.entries).items():
            key = _key(a, b)
            for mode in key:
                if mode.k1 < 1 or mode.k2 < 1 or mode.k1**2 + mode.k2**2 > self.m**2:
                    raise ValueError(f"mode {tuple(mode)} outside cutoff m={self.m}")
            q = float(q)
            if q != 0.0:
                clean[key] = clean.get(key, 0.0) + q
        object.__setattr__(self, "entries", clean)
        object.__setattr__(self, "constant", float(self.constant))

    def __eq__(self, other):
        if not isinstance(other, QuadraticForm):
            return NotImplemented
        return self.entries == other.entries and self.constant == other.constant

    def __add__(self, other):
        ent = dict(self.entries)
        for key, q in other.entries.items():
            ent[key] = ent.get(key, 0.0) + q
        return QuadraticForm(ent, self.constant + other.constant, max(self.m, other.m))

    def __neg__(self):
        return QuadraticForm({k: -q for k, q in self.entries.items()}, -self.constant, self.m)

    def __sub__(self, other):
        return self + (-other)

    def modes(self):
        out = set()
        for a, b in self.entries:
            out.add(a)
            out.add(b)
        return sorted(out)

    def matrix(self, modes=None):
        """Full symmetric matrix over ``modes`` (default: the active modes)."""
        modes = self.modes() if modes is None else list(modes)
        pos = {mode: i for i, mode in enumerate(modes)}
        q = np.zeros((len(modes), len(modes)))
        for (a, b), v in self.entries.items():
            q[pos[a], pos[b]] = v
            q[pos[b], pos[a]] = v
        return modes, q

    def max_abs(self) -> float:
        return max((abs(v) for v in self.entries.values()), default=0.0)

    def _arrays(self):
        if not self.entries:
            z = np.zeros(0, dtype=int)
            return z, z, z, z, np.zeros(0)
        keys = list(self.entries)
        a = np.array([k[0] for k in keys])
        b = np.array([k[1] for k in keys])
        q = np.array([self.entries[k] for k in keys])
        mult = np.where((a == b).all(axis=1), 1.0, 2.0)
        return a[:, 0], a[:, 1], b[:, 0], b[:, 1], q * mult


def evaluate_form_array(qf: QuadraticForm, coeffs: np.ndarray) -> np.ndarray:
    """F evaluated on a stack of coefficient arrays ``(..., M+1, M+1)``, M >= qf.m."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-1] - 1 < qf.m:
        raise ValueError(f"field cutoff {coeffs.shape[-1] - 1} below form cutoff {qf.m}")
    a1, a2, b1, b2, w = qf._arrays()
    return np.sum(coeffs[..., a1, a2] * coeffs[..., b1, b2] * w, axis=-1) + qf.constant


def evaluate_form(qf: QuadraticForm, field: SpectralField) -> float:
    if field.m < qf.m:
        raise ValueError(f"field cutoff {field.m} below form cutoff {qf.m}")
    return float(evaluate_form_array(qf, field.coeffs))


def _lam(mode, theta) -> float:
    return float(mode[0] ** 2 + mode[1] ** 2) ** theta


def generator_apply(qf: QuadraticForm, params) -> QuadraticForm:
    """L_theta F for quadratic F (second-chaos eigenrelation plus trace term)."""
    theta = _params(params).theta
    ent = {}
    const = 0.0
    for (a, b), q in qf.entries.items():
        la = _lam(a, theta)
        if a == b:
            ent[(a, b)] = -2.0 * la * q
            const += 2.0 * la * q
        else:
            ent[(a, b)] = -(la + _lam(b, theta)) * q
    return QuadraticForm(ent, const, qf.m)


def carre_du_champ(f: QuadraticForm, g: QuadraticForm, params) -> QuadraticForm:
    """E_theta(F, G) = sum_c |c|^{2 theta} d_c F d_c G.

    With ``grad F = 2 Q w`` this is the form ``4 w^T Q Lambda P w``,
    symmetrised.
    """
    theta = _params(params).theta
    modes = sorted(set(f.modes()) | set(g.modes()))
    m = max(f.m, g.m)
    if not modes:
        return QuadraticForm({}, 0.0, m)
    _, q = f.matrix(modes)
    _, p = g.matrix(modes)
    lam = np.array([_lam(c, theta) for c in modes])
    prod = 2.0 * ((q * lam) @ p + (p * lam) @ q)
    iu, ju = np.triu_indices(len(modes))
    ent = {(modes[i], modes[j]): prod[i, j] for i, j in zip(iu, ju) if prod[i, j] != 0.0}
    return QuadraticForm(ent, 0.0, m)


def expectation(qf: QuadraticForm) -> float:
    """E_mu[F] = tr Q + constant."""
    return math.fsum(q for (a, b), q in qf.entries.items() if a == b) + qf.constant


def expectation_product(f: QuadraticForm, g: QuadraticForm) -> float:
    """E_mu[F G] in closed form (Wick)."""
    tr_qp = []
    for key, q in f.entries.items():
        p = g.entries.get(key)
        if p is not None:
            tr_qp.append(q * p if key[0] == key[1] else 2.0 * q * p)
    return expectation(f) * expectation(g) + 2.0 * math.fsum(tr_qp)


# -- Z_0^2 pair sums -----------------------------------------------------------


def _pairs(k, m):
    """All (h, l) in Z_0^2 x Z_0^2 with h + l = k and |h|, |l| <= m."""
    k1, k2 = int(k[0]), int(k[1])
    r = np.arange(-m, m + 1)
    H1, H2 = np.meshgrid(r, r, indexing="ij")
    H1, H2 = H1.ravel(), H2.ravel()
    L1, L2 = k1 - H1, k2 - H2
    ok = (H1 != 0) & (H2 != 0) & (L1 != 0) & (L2 != 0)
    ok &= (H1 * H1 + H2 * H2 <= m * m) & (L1 * L1 + L2 * L2 <= m * m)
    return H1[ok], H2[ok], L1[ok], L2[ok]


def _pair_kernel(k, m, theta=None, denominator="exact", lower=None):
    """Per-term coefficients of the Z_0^2 pair sum of B_k or H_k^m.

    Returns ``(H1, H2, L1, L2, c)`` where each term contributes
    ``c * w_|h| * w_|l|`` (signs already folded in).  With ``theta`` None the
    kernel is that of B_k; otherwise that of H_k^m.  ``lower`` keeps only
    pairs with ``max(|h|, |l|) > lower`` (the increment H^n - H^lower).
    """
    H1, H2, L1, L2 = _pairs(k, m)
    if lower is not None:
        keep = (H1 * H1 + H2 * H2 > lower * lower) | (L1 * L1 + L2 * L2 > lower * lower)
        H1, H2, L1, L2 = H1[keep], H2[keep], L1[keep], L2[keep]
    # l . h_perp = k . h_perp = -k1 h2 + k2 h1
    w = (-L1 * H2 + L2 * H1) / (H2.astype(float) ** 2)
    sign = np.sign(H1 * H2) * np.sign(L1 * L2)
    c = sign * w
    if theta is not None:
        nh = (H1 * H1 + H2 * H2).astype(float)
        nl = (L1 * L1 + L2 * L2).astype(float)
        if denominator == "exact":
            d = nh**theta + nl**theta
        elif denominator == "isotropic":
            d = (nh + nl) ** theta
        else:
            raise ValueError(f"unknown denominator {denominator!r}")
        c = -c / d
    return H1, H2, L1, L2, c


def _aggregate(H1, H2, L1, L2, c, m):
    """Collapse Z_0^2 terms onto unordered N_0^2 pairs.

    Returns arrays ``(a1, a2, b1, b2, total)`` with ``total`` the coefficient
    of the monomial ``w_a w_b`` (so the stored Q_ab is total/2 off-diagonal).
    """
    M = m + 1
    ia = np.abs(H1) * M + np.abs(H2)
    ib = np.abs(L1) * M + np.abs(L2)
    lo, hi = np.minimum(ia, ib), np.maximum(ia, ib)
    uniq, inv = np.unique(lo * M * M + hi, return_inverse=True)
    total = np.bincount(inv, weights=c, minlength=len(uniq))
    a, b = uniq // (M * M), uniq % (M * M)
    return a // M, a % M, b // M, b % M, total


def _form_from_terms(terms, m) -> QuadraticForm:
    a1, a2, b1, b2, total = _aggregate(*terms, m)
    diag = (a1 == b1) & (a2 == b2)
    q = np.where(diag, total, 0.5 * total)
    ent = {
        (ModeIndex(int(x1), int(x2)), ModeIndex(int(y1), int(y2))): float(v)
        for x1, x2, y1, y2, v in zip(a1, a2, b1, b2, q)
        if v != 0.0
    }
    return QuadraticForm(ent, 0.0, m)


def _check_mode(k, m):
    k1, k2 = int(k[0]), int(k[1])
    if k1 < 1 or k2 < 1:
        raise ValueError(f"mode {(k1, k2)} is not in N_0^2")
    return k1 * k1 + k2 * k2 <= m * m


def b_mode_as_form(k, m: int) -> QuadraticForm:
    """B^m_k as a quadratic form on N_0^2."""
    if not _check_mode(k, m):
        raise ValueError(f"mode {tuple(k)} exceeds cutoff m={m}")
    return _form_from_terms(_pair_kernel(k, m), m)


def h_poisson(k, m: int, params, denominator: str = "exact") -> QuadraticForm:
    """Poisson solution H_k^m of ``L_theta H = B^m_k``.

    Each pair ``w_h w_l`` of the second chaos is an eigenfunction of L_theta
    with eigenvalue ``-(|h|^{2 theta} + |l|^{2 theta})``, so the exact solution
    divides the B_k kernel by that sum (``denominator="exact"``).  The
    alternative ``denominator="isotropic"`` uses ``(|h|^2 + |l|^2)^theta``, which
    coincides with the exact one only at theta = 1.
    """
    theta = _params(params).theta
    if not _check_mode(k, m):
        return QuadraticForm({}, 0.0, m)
    return _form_from_terms(_pair_kernel(k, m, theta, denominator), m)


def poisson_residual(k, m: int, params, denominator: str = "exact") -> float:
    """Max coefficient mismatch of ``L_theta H_k^m - B^m_k``, relative to max |B|."""
    if not _check_mode(k, m):
        raise ValueError(f"mode {tuple(k)} exceeds cutoff m={m}")
    lh = generator_apply(h_poisson(k, m, params, denominator), params)
    b = b_mode_as_form(k, m)
    diff = lh - b
    err = max(diff.max_abs(), abs(diff.constant))
    scale = b.max_abs()
    return err / scale if scale > 0 else err


def _exact_carre_sum(terms, m, theta) -> float:
    a1, a2, b1, b2, total = _aggregate(*terms, m)
    la = (a1 * a1 + a2 * a2).astype(float) ** theta
    lb = (b1 * b1 + b2 * b2).astype(float) ** theta
    diag = (a1 == b1) & (a2 == b2)
    # E[(d_c F)^2] = 4 sum_b Q_cb^2, Q_ab = total/2 off the diagonal
    return float(np.sum(np.where(diag, 4.0 * la * total**2, (la + lb) * total**2)))


def _majorant_carre_sum(k, m, theta, lower=None) -> float:
    H1, H2, L1, L2 = _pairs(k, m)
    if lower is not None:
        keep = (H1 * H1 + H2 * H2 > lower * lower) | (L1 * L1 + L2 * L2 > lower * lower)
        H1, H2, L1, L2 = H1[keep], H2[keep], L1[keep], L2[keep]
    nh = (H1 * H1 + H2 * H2).astype(float)
    nl = (L1 * L1 + L2 * L2).astype(float)
    g = 2.0 * (-L1 * H2 + L2 * H1) / (H2.astype(float) ** 2 * (nl + nh) ** theta)
    return float(np.sum(nh**theta * g * g))


def expected_carre(k, m: int, params, method: str = "exact") -> float:
    """E_mu[E_theta(H_k^m)].

    ``method="exact"`` is the closed-form Gaussian expectation of the carre du
    champ of :func:`h_poisson`; ``method="majorant"`` is the one-index
    majorant ``sum_h |h|^{2t} |2 (k-h).h_perp / (h2^2 (|k-h|^2+|h|^2)^t)|^2``.
    """
    theta = _params(params).theta
    if not _check_mode(k, m):
        raise ValueError(f"mode {tuple(k)} exceeds cutoff m={m}")
    if method == "exact":
        return _exact_carre_sum(_pair_kernel(k, m, theta), m, theta)
    if method == "majorant":
        return _majorant_carre_sum(k, m, theta)
    raise ValueError(f"unknown method {method!r}")


def expected_carre_increment(k, n: int, m: int, params, method: str = "exact") -> float:
    """E_mu[E_theta(H_k^n - H_k^m)] for n > m."""
    theta = _params(params).theta
    if n <= m:
        raise ValueError(f"need n > m, got n={n}, m={m}")
    if not _check_mode(k, m):
        raise ValueError(f"mode {tuple(k)} exceeds cutoff m={m}")
    if method == "exact":
        return _exact_carre_sum(_pair_kernel(k, n, theta, lower=m), n, theta)
    if method == "majorant":
        return _majorant_carre_sum(k, n, theta, lower=m)
    raise ValueError(f"unknown method {method!r}")
