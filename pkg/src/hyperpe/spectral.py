"""Sine-basis fields on D = [0, 2pi]^2.

A field is stored as a dense ``(m+1, m+1)`` array indexed by ``[k1, k2]``;
row and column 0 are unused and every entry outside the disk ``|k| <= m`` is
zero.  The basis is ``e_k(x, z) = sin(k1 x) sin(k2 z) / pi``, orthonormal in
L^2(D), and ``|k|`` is always the Euclidean norm.
"""

import math
import re
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

__all__ = [
    "ModeIndex",
    "SignedModeIndex",
    "NormSpec",
    "SpectralField",
    "disk_mask",
    "mode_grid",
    "make_field",
    "zero_field",
    "extend_coefficient",
    "extend_array",
    "project",
    "fl_norm",
    "apply_A",
    "multiplier",
    "evaluate_physical",
    "write_snapshot",
    "read_snapshot",
    "format_snapshot",
    "parse_snapshot",
    "SnapshotError",
]


class ModeIndex(NamedTuple):
    k1: int
    k2: int

    def norm(self) -> float:
        return math.hypot(self.k1, self.k2)


class SignedModeIndex(NamedTuple):
    h1: int
    h2: int


class NormSpec(NamedTuple):
    p: float = 2.0
    alpha: float = 0.0


class SnapshotError(ValueError):
    pass


def disk_mask(m: int) -> np.ndarray:
    """Boolean ``(m+1, m+1)`` mask of the modes with k1, k2 >= 1 and |k| <= m."""
    k = np.arange(m + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    return (K1 >= 1) & (K2 >= 1) & (K1 * K1 + K2 * K2 <= m * m)


def mode_grid(m: int):
    """Integer arrays ``K1, K2`` of shape ``(m+1, m+1)`` and ``|k|^2``."""
    k = np.arange(m + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    return K1, K2, K1 * K1 + K2 * K2


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Truncated sine-series coefficients.  Immutable after construction."""

    m: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.shape != (self.m + 1, self.m + 1):
            raise ValueError(f"coefficient array must have shape {(self.m + 1,) * 2}, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        mask = disk_mask(self.m)
        if np.any(c[~mask] != 0.0):
            bad = np.argwhere((c != 0.0) & ~mask)[0]
            raise ValueError(f"mode {tuple(int(i) for i in bad)} lies outside the cutoff m={self.m}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __getitem__(self, k) -> float:
        k1, k2 = k
        if 1 <= k1 <= self.m and 1 <= k2 <= self.m:
            return float(self.coeffs[k1, k2])
        return 0.0

    def __eq__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        return self.m == other.m and np.array_equal(self.coeffs, other.coeffs)

    def __add__(self, other):
        m = max(self.m, other.m)
        return SpectralField(m, _pad(self.coeffs, m) + _pad(other.coeffs, m))

    def __sub__(self, other):
        m = max(self.m, other.m)
        return SpectralField(m, _pad(self.coeffs, m) - _pad(other.coeffs, m))

    def __mul__(self, scalar):
        return SpectralField(self.m, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def items(self):
        """Nonzero ``(ModeIndex, value)`` pairs in k1-major order."""
        for k1, k2 in np.argwhere(self.coeffs != 0.0):
            yield ModeIndex(int(k1), int(k2)), float(self.coeffs[k1, k2])

    @property
    def mask(self) -> np.ndarray:
        return disk_mask(self.m)


def _pad(c: np.ndarray, m: int) -> np.ndarray:
    out = np.zeros((m + 1, m + 1))
    n = c.shape[0]
    out[:n, :n] = c
    return out


def make_field(m: int, coeffs: Mapping = None) -> SpectralField:
    """Validated field from a ``{(k1, k2): value}`` mapping."""
    if m < 1:
        raise ValueError(f"cutoff must be positive, got m={m}")
    arr = np.zeros((m + 1, m + 1))
    for k, v in (coeffs or {}).items():
        k1, k2 = int(k[0]), int(k[1])
        if k1 < 1 or k2 < 1:
            raise ValueError(f"mode {(k1, k2)} is not in N_0^2")
        if k1 * k1 + k2 * k2 > m * m:
            raise ValueError(f"mode {(k1, k2)} exceeds cutoff m={m}")
        v = float(v)
        if not math.isfinite(v):
            raise ValueError(f"non-finite coefficient at mode {(k1, k2)}")
        arr[k1, k2] = v
    return SpectralField(m, arr)


def zero_field(m: int) -> SpectralField:
    return SpectralField(m, np.zeros((m + 1, m + 1)))


def extend_coefficient(field: SpectralField, h) -> float:
    """Odd extension to Z_0^2: ``sign(h1 h2) * w[|h1|, |h2|]``."""
    h1, h2 = int(h[0]), int(h[1])
    if h1 == 0 or h2 == 0:
        raise ValueError(f"signed index {(h1, h2)} has a zero component")
    return float(np.sign(h1 * h2)) * field[abs(h1), abs(h2)]


def extend_array(coeffs: np.ndarray) -> np.ndarray:
    """Odd extension of ``(..., m+1, m+1)`` coefficients onto ``[-m..m]^2``.

    Index ``[i, j]`` of the result holds the coefficient of ``h = (i-m, j-m)``.
    Axis entries (h1 = 0 or h2 = 0) vanish because row/column 0 of the input
    does.
    """
    m = coeffs.shape[-1] - 1
    idx = np.abs(np.arange(-m, m + 1))
    sgn = np.sign(np.arange(-m, m + 1))
    ext = coeffs[..., idx, :][..., :, idx]
    return ext * sgn[:, None] * sgn[None, :]


def project(field: SpectralField, m_new: int) -> SpectralField:
    """pi_{m'}: keep modes with |k| <= m'; new cutoff min(m, m')."""
    if m_new < 1:
        raise ValueError(f"cutoff must be positive, got {m_new}")
    m = min(field.m, m_new)
    c = field.coeffs[: m + 1, : m + 1] * disk_mask(m)
    return SpectralField(m, c)


def fl_norm(field: SpectralField, spec: NormSpec = NormSpec()) -> float:
    """Fourier-Lebesgue norm ``(sum |k|^{alpha p} |w_k|^p)^{1/p}``; sup for p = inf."""
    p, alpha = float(spec[0]), float(spec[1])
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    mask = field.mask
    if not mask.any():
        return 0.0
    _, _, k2 = mode_grid(field.m)
    weighted = np.sqrt(k2[mask].astype(float)) ** alpha * np.abs(field.coeffs[mask])
    if math.isinf(p):
        return float(weighted.max())
    return float(np.sum(weighted**p) ** (1.0 / p))


def apply_A(field: SpectralField) -> SpectralField:
    """Inverse of -d_z^2 with Dirichlet data in z: divide by k2^2."""
    _, K2, _ = mode_grid(field.m)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(K2 > 0, field.coeffs / np.maximum(K2, 1) ** 2, 0.0)
    return SpectralField(field.m, c)


def multiplier(field: SpectralField, s: float) -> SpectralField:
    """(-Delta)^s: multiply mode k by |k|^{2s}."""
    _, _, n2 = mode_grid(field.m)
    factor = np.where(field.mask, np.maximum(n2, 1).astype(float) ** s, 0.0)
    return SpectralField(field.m, field.coeffs * factor)


def evaluate_physical(field: SpectralField, points):
    """Vorticity and velocity ``(v, w) = grad^perp A(omega)`` at points.

    Parameters
    ----------
    field : SpectralField
    points : array-like, shape (n, 2)
        ``(x, z)`` pairs in ``[0, 2pi]^2``.

    Returns
    -------
    omega, v, w : ndarrays of shape (n,)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, z = pts[:, 0], pts[:, 1]
    ks, vals = [], []
    for k, val in field.items():
        ks.append(k)
        vals.append(val)
    if not ks:
        zero = np.zeros(len(pts))
        return zero, zero.copy(), zero.copy()
    k = np.asarray(ks, dtype=np.float64)
    a = np.asarray(vals)
    sx = np.sin(np.outer(x, k[:, 0]))
    cx = np.cos(np.outer(x, k[:, 0]))
    sz = np.sin(np.outer(z, k[:, 1]))
    cz = np.cos(np.outer(z, k[:, 1]))
    omega = (sx * sz) @ a / math.pi
    # A(omega) = sum a_k / k2^2 e_k ; v = -d_z A, w = d_x A
    v = -(sx * cz) @ (a / k[:, 1]) / math.pi
    w = (cx * sz) @ (a * k[:, 0] / k[:, 1] ** 2) / math.pi
    return omega, v, w


def format_snapshot(field: SpectralField) -> str:
    rows = [f"{k.k1} {k.k2} {v:.17g}" for k, v in field.items()]
    return "\n".join([f"m={field.m} count={len(rows)}", *rows]) + "\n"


_HEADER = re.compile(r"^m=(\d+) count=(\d+)$")


def parse_snapshot(text: str) -> SpectralField:
    lines = text.splitlines()
    if not lines:
        raise SnapshotError("empty snapshot")
    head = _HEADER.match(lines[0].strip())
    if head is None:
        raise SnapshotError(f"malformed header: {lines[0]!r}")
    m, count = int(head.group(1)), int(head.group(2))
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        raise SnapshotError(f"header announces {count} entries, found {len(body)}")
    coeffs = {}
    for lineno, ln in enumerate(body, start=2):
        parts = ln.split()
        try:
            if len(parts) != 3:
                raise ValueError
            k = (int(parts[0]), int(parts[1]))
            val = float(parts[2])
        except ValueError:
            raise SnapshotError(f"line {lineno}: malformed entry {ln!r}") from None
        if k in coeffs:
            raise SnapshotError(f"line {lineno}: duplicate mode {k}")
        coeffs[k] = val
    try:
        return make_field(m, coeffs)
    except ValueError as exc:
        raise SnapshotError(str(exc)) from None


def write_snapshot(field: SpectralField, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_snapshot(field))


def read_snapshot(path) -> SpectralField:
    with open(path, encoding="ascii") as fh:
        return parse_snapshot(fh.read())
