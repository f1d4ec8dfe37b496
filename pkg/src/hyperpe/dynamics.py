"""Galerkin dynamics

    d w_k = B^m_k(w) dt - |k|^{2 theta} w_k dt + sqrt(2) |k|^theta d beta^k

with an exponential integrator (exact Ornstein-Uhlenbeck transition for the
linear part) or Strang splitting, plus the path functionals built on it:
drift integral G, mild integral G_mild, linear drift integral L and the
martingale part M, which close the bookkeeping identity

    w_t = w_0 - L_t + G_t + M_t.

Arrays carry a leading replica axis; noise for replica r, step n and mode k is
a pure function of (replica seed, n, k), so ensembles can be chunked freely
and runs at different cutoffs share noise on their common modes.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chaos import QuadraticForm, carre_du_champ, evaluate_form_array, expectation, generator_apply
from .measure import sample_mu_array
from .nonlinearity import FastKernel, check_fast_path, direct_array
from .rng import STREAM_HALF, STREAM_STEP, derive_seed, mode_normals
from .spectral import SpectralField, disk_mask, mode_grid

__all__ = [
    "ConfigError",
    "SimConfig",
    "Trajectory",
    "GalerkinIntegrator",
    "phi1",
    "ou_step",
    "galerkin_step",
    "simulate",
    "coupled_run",
    "realized_qv",
    "qv_target",
    "reverse_trajectory",
    "ito_trick_statistic",
    "ito_trick_bound",
]

SCHEMES = ("exp_euler", "splitting")


class ConfigError(ValueError):
    def __init__(self, name, message):
        super().__init__(f"{name}: {message}")
        self.name = name


@dataclass(frozen=True)
class SimConfig:
    theta: float
    m: int
    T: float
    dt: float
    master_seed: int = 0
    ensemble: int = 1
    scheme: str = "exp_euler"
    record_stride: int = 1
    fast_nonlinearity: bool = True

    def __post_init__(self):
        if not (isinstance(self.theta, (int, float)) and self.theta > 0 and math.isfinite(self.theta)):
            raise ConfigError("theta", f"must be a positive number, got {self.theta!r}")
        if not (isinstance(self.m, int) and self.m >= 1):
            raise ConfigError("m", f"must be a positive integer, got {self.m!r}")
        if not (isinstance(self.dt, (int, float)) and self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt", f"must be positive, got {self.dt!r}")
        if not (isinstance(self.T, (int, float)) and self.T >= 0 and math.isfinite(self.T)):
            raise ConfigError("T", f"must be nonnegative, got {self.T!r}")
        if 0 < self.T < self.dt:
            raise ConfigError("T", f"horizon {self.T} is shorter than one step dt={self.dt}")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ConfigError("T", f"horizon {self.T} is not a whole number of steps dt={self.dt}")
        if not (isinstance(self.master_seed, int) and 0 <= self.master_seed < 2**64):
            raise ConfigError("seed", f"must be a 64-bit unsigned integer, got {self.master_seed!r}")
        if not (isinstance(self.ensemble, int) and self.ensemble >= 1):
            raise ConfigError("ensemble", f"must be a positive integer, got {self.ensemble!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"must be one of {SCHEMES}, got {self.scheme!r}")
        if not (isinstance(self.record_stride, int) and self.record_stride >= 1):
            raise ConfigError("record_stride", f"must be a positive integer, got {self.record_stride!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def replica_seeds(self) -> np.ndarray:
        return np.array([derive_seed(self.master_seed, r) for r in range(self.ensemble)], dtype=np.uint64)


def phi1(z):
    """(1 - exp(-z)) / z with the removable singularity filled in."""
    z = np.asarray(z, dtype=np.float64)
    small = z < 1e-5
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2.0 + z * z / 6.0, -np.expm1(-safe) / safe)


class GalerkinIntegrator:
    """One-step maps for a fixed cutoff, exponent and step size."""

    def __init__(self, m, theta, dt, scheme="exp_euler", fast=True, nonlinear=True):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.m, self.theta, self.dt, self.scheme = m, float(theta), float(dt), scheme
        self.nonlinear = nonlinear
        self.mask = disk_mask(m)
        self.k1, self.k2 = np.nonzero(self.mask)
        _, _, n2 = mode_grid(m)
        self.lam = np.where(self.mask, n2.astype(float) ** self.theta, 0.0)
        z = self.lam * self.dt
        self.decay = np.exp(-z)
        self.phi1_dt = phi1(z) * self.dt
        self.noise_sd = np.sqrt(-np.expm1(-2.0 * z))
        self.half_decay = np.exp(-0.5 * z)
        self.half_sd = np.sqrt(-np.expm1(-z))
        if fast:
            check_fast_path(m)
            self._b = FastKernel(m)
        else:
            self._b = self._direct

    @staticmethod
    def _direct(w):
        return np.stack([direct_array(x) for x in w.reshape(-1, *w.shape[-2:])]).reshape(w.shape)

    def drift(self, w):
        if not self.nonlinear:
            return np.zeros_like(w)
        return self._b(w) * self.mask

    def normals(self, seeds, step, stream=STREAM_STEP):
        out = np.zeros((len(seeds), self.m + 1, self.m + 1))
        out[:, self.k1, self.k2] = mode_normals(seeds, self.k1, self.k2, step, stream)
        return out

    def ou(self, w, xi, half=False):
        if half:
            return self.half_decay * w + self.half_sd * xi * self.mask
        return self.decay * w + self.noise_sd * xi * self.mask

    def step(self, w, xi, xi2=None, b=None):
        """Advance ``w`` one step.  ``b`` may pass a precomputed B^m(w)."""
        if self.scheme == "exp_euler":
            if b is None:
                b = self.drift(w)
            return self.decay * w + self.phi1_dt * b + self.noise_sd * xi * self.mask
        w1 = self.ou(w, xi, half=True)
        w2 = w1 + self.dt * self.drift(w1)
        return self.ou(w2, xi2, half=True)

    def keyed_step(self, w, seeds, n, b=None):
        xi = self.normals(seeds, n, STREAM_STEP)
        xi2 = self.normals(seeds, n, STREAM_HALF) if self.scheme == "splitting" else None
        return self.step(w, xi, xi2, b=b)


def _as_field_array(x, m):
    arr = x.coeffs if isinstance(x, SpectralField) else np.asarray(x, dtype=float)
    if arr.shape[-1] != m + 1:
        raise ValueError(f"field cutoff {arr.shape[-1] - 1} does not match m={m}")
    return arr


def ou_step(field: SpectralField, theta: float, dt: float, noise) -> SpectralField:
    """Exact OU transition of every mode over ``dt`` given standard normals."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    integ = GalerkinIntegrator(field.m, theta, dt, fast=False, nonlinear=False)
    return SpectralField(field.m, integ.ou(field.coeffs, _as_field_array(noise, field.m)))


def galerkin_step(field: SpectralField, cfg: SimConfig, noise, noise2=None) -> SpectralField:
    """One step of ``cfg.scheme`` from ``field`` with the supplied normals.

    The splitting scheme consumes two noise arrays (one per OU half-step).
    """
    if field.m != cfg.m:
        raise ValueError(f"field cutoff {field.m} does not match config m={cfg.m}")
    integ = _integrator(cfg)
    xi = _as_field_array(noise, cfg.m)
    xi2 = None
    if cfg.scheme == "splitting":
        xi2 = _as_field_array(noise2 if noise2 is not None else np.zeros_like(xi), cfg.m)
    return SpectralField(cfg.m, integ.step(field.coeffs[None], xi[None], None if xi2 is None else xi2[None])[0])


_INTEGRATORS = {}


def _integrator(cfg: SimConfig, m=None, nonlinear=True) -> GalerkinIntegrator:
    m = cfg.m if m is None else m
    key = (m, cfg.theta, cfg.dt, cfg.scheme, cfg.fast_nonlinearity, nonlinear)
    if key not in _INTEGRATORS:
        _INTEGRATORS[key] = GalerkinIntegrator(m, cfg.theta, cfg.dt, cfg.scheme, cfg.fast_nonlinearity, nonlinear)
    return _INTEGRATORS[key]


@dataclass
class Trajectory:
    """Recorded path of an ensemble; arrays are ``(n_rec, R, m+1, m+1)``."""

    times: np.ndarray
    states: np.ndarray
    G: np.ndarray
    L: np.ndarray
    M: np.ndarray
    G_mild: Optional[np.ndarray] = None
    theta: float = 0.0
    seeds: Optional[np.ndarray] = None
    config: Optional[SimConfig] = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.states.shape[-1] - 1

    @property
    def replicas(self) -> int:
        return self.states.shape[1]

    def field(self, i: int, r: int = 0) -> SpectralField:
        return SpectralField(self.m, self.states[i, r])


class _Accumulators:
    """Running G, G_mild, L for one cutoff, advanced with left-endpoint sums."""

    def __init__(self, integ: GalerkinIntegrator, shape):
        self.integ = integ
        self.G = np.zeros(shape)
        self.G_mild = np.zeros(shape)
        self.L = np.zeros(shape)

    def advance(self, w, b):
        dt = self.integ.dt
        self.G += b * dt
        self.G_mild = self.integ.decay * self.G_mild + self.integ.phi1_dt * b
        self.L += self.integ.lam * w * dt


def _initial(cfg, initial, seeds):
    if isinstance(initial, str):
        if initial != "sample_mu":
            raise ValueError(f"unknown initial condition {initial!r}")
        return sample_mu_array(cfg.m, seeds)
    arr = _as_field_array(initial, cfg.m)
    if arr.ndim == 2:
        arr = np.broadcast_to(arr, (len(seeds), *arr.shape))
    if arr.shape[0] != len(seeds):
        raise ValueError("initial ensemble size does not match config")
    return np.array(arr * disk_mask(cfg.m))


def simulate(cfg: SimConfig, initial="sample_mu", nonlinear=True) -> Trajectory:
    """Integrate ``cfg.ensemble`` replicas and record every ``record_stride`` steps."""
    seeds = cfg.replica_seeds()
    integ = _integrator(cfg, nonlinear=nonlinear)
    w = _initial(cfg, initial, seeds)
    w0 = w.copy()
    acc = _Accumulators(integ, w.shape)
    n = cfg.n_steps
    rec = [0] + [i for i in range(1, n + 1) if i % cfg.record_stride == 0 or i == n]
    out = {key: np.zeros((len(rec), *w.shape)) for key in ("states", "G", "G_mild", "L")}
    out["states"][0] = w
    j = 1
    for i in range(n):
        b = integ.drift(w) if (nonlinear or cfg.scheme == "exp_euler") else np.zeros_like(w)
        acc.advance(w, b)
        w = integ.keyed_step(w, seeds, i, b=b if cfg.scheme == "exp_euler" else None)
        if j < len(rec) and rec[j] == i + 1:
            out["states"][j] = w
            out["G"][j] = acc.G
            out["G_mild"][j] = acc.G_mild
            out["L"][j] = acc.L
            j += 1
    M = out["states"] - w0[None] + out["L"] - out["G"]
    times = np.array(rec, dtype=float) * cfg.dt
    return Trajectory(times, out["states"], out["G"], out["L"], M, out["G_mild"], cfg.theta, seeds, cfg)


def coupled_run(cfg: SimConfig, cutoffs, observer, chunk: int = None, seeds=None):
    """Run systems at several cutoffs in lockstep with shared noise and data.

    All systems start from the same mu-sample (projected) and are driven by the
    same Brownian motions on their common modes.  ``observer(rep, n, t,
    systems)`` is called at t = 0 and after every step, where ``rep`` is the
    slice of replica indices in the current chunk and ``systems[m]`` exposes
    ``w``, ``G``, ``G_mild``, ``L`` arrays.
    """
    cutoffs = sorted(set(int(c) for c in cutoffs))
    top = cutoffs[-1]
    seeds = cfg.replica_seeds() if seeds is None else np.asarray(seeds, dtype=np.uint64)
    chunk = chunk or len(seeds)
    integs = {m: _integrator(cfg, m=m) for m in cutoffs}
    top_integ = integs[top]
    for start in range(0, len(seeds), chunk):
        rep = slice(start, min(start + chunk, len(seeds)))
        s = seeds[rep]
        w_top = sample_mu_array(top, s)
        systems = {}
        for m in cutoffs:
            sys_ = _System(integs[m], np.array(w_top[:, : m + 1, : m + 1] * integs[m].mask))
            systems[m] = sys_
        observer(rep, 0, 0.0, systems)
        for i in range(cfg.n_steps):
            xi_top = top_integ.normals(s, i, STREAM_STEP)
            xi2_top = top_integ.normals(s, i, STREAM_HALF) if cfg.scheme == "splitting" else None
            for m, sys_ in systems.items():
                xi = xi_top[:, : m + 1, : m + 1]
                xi2 = None if xi2_top is None else xi2_top[:, : m + 1, : m + 1]
                sys_.advance(xi, xi2)
            observer(rep, i + 1, (i + 1) * cfg.dt, systems)


class _System:
    def __init__(self, integ, w):
        self.integ = integ
        self.w = w
        self.w0 = w.copy()
        self.acc = _Accumulators(integ, w.shape)

    @property
    def G(self):
        return self.acc.G

    @property
    def G_mild(self):
        return self.acc.G_mild

    @property
    def L(self):
        return self.acc.L

    def advance(self, xi, xi2=None):
        b = self.integ.drift(self.w)
        self.acc.advance(self.w, b)
        self.w = self.integ.step(self.w, xi, xi2, b=b if self.integ.scheme == "exp_euler" else None)


def _pair(traj_array, phi):
    return np.einsum("...ij,ij->...", traj_array, phi.coeffs[: traj_array.shape[-1], : traj_array.shape[-1]])


def realized_qv(trajectory: Trajectory, phi: SpectralField) -> np.ndarray:
    """Sum of squared increments of M(phi) over the recording grid, per replica."""
    if len(trajectory.times) < 2:
        raise ValueError("need at least two recorded times")
    m = trajectory.m
    p = np.zeros((m + 1, m + 1))
    n = min(m, phi.m)
    p[: n + 1, : n + 1] = phi.coeffs[: n + 1, : n + 1]
    mphi = np.einsum("trij,ij->tr", trajectory.M, p)
    return np.sum(np.diff(mphi, axis=0) ** 2, axis=0)


def qv_target(phi: SpectralField, theta: float, t: float) -> float:
    """2 t ||(-Delta)^{theta/2} phi||^2."""
    _, _, n2 = mode_grid(phi.m)
    return float(2.0 * t * np.sum(np.where(phi.mask, n2.astype(float) ** theta, 0.0) * phi.coeffs**2))


def reverse_trajectory(trajectory: Trajectory) -> Trajectory:
    """Time reversal ``w~_t = w_{T-t}`` with drift ``A~_t = -(A_T - A_{T-t})``.

    The symmetric (linear) drift keeps its sign, ``L~_t = L_T - L_{T-t}``, and M
    is rebuilt from the decomposition.  The mild integral has no reversed
    counterpart and is dropped.
    """
    T = trajectory.times[-1]
    times = T - trajectory.times[::-1]
    states = trajectory.states[::-1].copy()
    G = -(trajectory.G[-1][None] - trajectory.G[::-1])
    L = trajectory.L[-1][None] - trajectory.L[::-1]
    M = states - states[0][None] + L - G
    return Trajectory(times, states, G, L, M, None, trajectory.theta, trajectory.seeds, trajectory.config,
                      dict(trajectory.meta, reversed=not trajectory.meta.get("reversed", False)))


def ito_trick_statistic(cfg: SimConfig, F: QuadraticForm, p: float = 2.0, chunk: int = 500) -> float:
    """Monte Carlo E[sup_t |int_0^t L_theta F(w_s) ds|^p] over the ensemble.

    The time integral is a left-endpoint sum at the simulation step.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if F.m > cfg.m:
        raise ValueError(f"form cutoff {F.m} exceeds simulation cutoff {cfg.m}")
    lf = generator_apply(F, cfg.theta)
    sups = np.zeros(cfg.ensemble)
    state = {}

    def observe(rep, n, t, systems):
        sys_ = systems[cfg.m]
        if n == 0:
            state["I"] = np.zeros(rep.stop - rep.start)
            state["prev"] = evaluate_form_array(lf, sys_.w)
            return
        state["I"] = state["I"] + state["prev"] * cfg.dt
        sups[rep] = np.maximum(sups[rep], np.abs(state["I"]))
        state["prev"] = evaluate_form_array(lf, sys_.w)

    coupled_run(cfg, [cfg.m], observe, chunk=chunk)
    return float(np.mean(sups**p))


def ito_trick_bound(F: QuadraticForm, theta: float, T: float) -> float:
    """Right-hand side for p = 2: ``20 T E_mu[E_theta(F)]``.

    From ``2 int_0^t L F = M~_{T-t} - M~_T - M_t``, Doob's L^2 inequality on
    each martingale and ``[M]_T = 2 int_0^T E_theta(F)``.
    """
    return 20.0 * T * expectation(carre_du_champ(F, F, theta))
