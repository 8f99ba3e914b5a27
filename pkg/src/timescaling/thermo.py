"""Monte-Carlo thermodynamics of the aligned student.

Class energies ``eps`` are i.i.d. standard normal vectors of length ``n``; the
student at inverse temperature ``beta`` outputs the Boltzmann distribution
``q = softmax(-beta * eps)`` and the teacher outputs ``p`` at ``beta_star``.
With ``Z(beta) = sum_i exp(-beta eps_i)``:

    F = -<ln Z> / beta,   U = <q . eps>,   S = <-sum q ln q>,
    L(beta) = U(beta*)(beta - beta*) + beta* F(beta*) - beta F(beta),
    dL/dbeta = U(beta*) - U(beta) = <(p - q) . eps>.

All estimates on one curve share the same energy draws (common random numbers).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_model import logsumexp
from .seeding import stream


@dataclass(frozen=True)
class ThermoConfig:
    n: int = 128
    num_energy_sets: int = 10
    batch_per_set: int = 1024
    seed: int = 0
    # None: i.i.d. energies.  An int m draws eps = -w_hat x / sqrt(m) with one
    # Gaussian w_hat per energy set, i.e. the teacher-induced correlations.
    m: int | None = None

    def __post_init__(self):
        if self.n < 1 or self.num_energy_sets < 1 or self.batch_per_set < 1:
            raise ValueError("n, num_energy_sets and batch_per_set must be >= 1")

    @property
    def num_samples(self) -> int:
        return self.num_energy_sets * self.batch_per_set


def sample_energies(cfg: ThermoConfig) -> np.ndarray:
    """(num_energy_sets * batch_per_set, n) energy matrix, set-major."""
    sets = []
    for k in range(cfg.num_energy_sets):
        rng = stream(cfg.seed, "energy", k)
        if cfg.m is None:
            sets.append(rng.standard_normal((cfg.batch_per_set, cfg.n)))
        else:
            w_hat = rng.standard_normal((cfg.n, cfg.m))
            x = rng.standard_normal((cfg.batch_per_set, cfg.m))
            sets.append(-(x @ w_hat.T) / math.sqrt(cfg.m))
    return np.concatenate(sets, axis=0)


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _boltzmann(beta: float, eps: np.ndarray):
    """Per-sample ln Z, q, ln q at inverse temperature ``beta``."""
    a = -beta * eps
    lnz = logsumexp(a, axis=1)
    logq = a - lnz[:, None]
    q = np.exp(np.maximum(logq, -700.0))
    return lnz, q, logq


@dataclass
class ThermoPoint:
    beta: float
    lnZ: float
    U: float
    S: float
    F: float | None
    se_lnZ: float
    se_U: float
    se_S: float
    se_F: float | None


def thermo_from_energies(beta: float, eps: np.ndarray) -> ThermoPoint:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    lnz, q, logq = _boltzmann(beta, eps)
    u = np.sum(q * eps, axis=1)
    s = -np.sum(q * logq, axis=1)
    lnZ, se_lnZ = _mean_se(lnz)
    U, se_U = _mean_se(u)
    S, se_S = _mean_se(s)
    if beta > 0:
        F, se_F = -lnZ / beta, se_lnZ / beta
    else:
        F = se_F = None
    return ThermoPoint(beta, lnZ, U, S, F, se_lnZ, se_U, se_S, se_F)


def estimate_thermo(beta: float, n: int, cfg: ThermoConfig | None = None) -> ThermoPoint:
    """<ln Z>, F, U, S with standard errors at one ``beta``.  F is None at beta = 0."""
    cfg = _with_n(cfg, n)
    return thermo_from_energies(beta, sample_energies(cfg))


def _with_n(cfg: ThermoConfig | None, n: int) -> ThermoConfig:
    if cfg is None:
        return ThermoConfig(n=n)
    if cfg.n != n:
        return ThermoConfig(n=n, num_energy_sets=cfg.num_energy_sets,
                            batch_per_set=cfg.batch_per_set, seed=cfg.seed, m=cfg.m)
    return cfg


@dataclass
class AnsatzLoss:
    L: float
    dLdBeta: float
    se_L: float
    se_dLdBeta: float
    # same samples through the KL / (p - q).eps route; must match to round-off
    L_direct: float
    dLdBeta_direct: float


def ansatz_from_energies(beta: float, beta_star: float, eps: np.ndarray) -> AnsatzLoss:
    if beta < 0 or beta_star < 0:
        raise ValueError("beta and beta_star must be >= 0")
    lnz, q, logq = _boltzmann(beta, eps)
    lnz_s, p, logp = _boltzmann(beta_star, eps)
    u = np.sum(q * eps, axis=1)
    u_s = np.sum(p * eps, axis=1)
    # beta F = -ln Z per sample
    l_id = u_s * (beta - beta_star) - lnz_s + lnz
    g_id = u_s - u
    l_kl = np.sum(p * (logp - logq), axis=1)
    g_pq = np.sum((p - q) * eps, axis=1)
    L, se_L = _mean_se(l_id)
    G, se_G = _mean_se(g_id)
    return AnsatzLoss(L, G, se_L, se_G, float(l_kl.mean()), float(g_pq.mean()))


def ansatz_loss_and_grad(beta: float, beta_star: float, n: int,
                         cfg: ThermoConfig | None = None) -> AnsatzLoss:
    """Aligned-student loss L(beta; beta*) and dL/dbeta by paired sampling."""
    cfg = _with_n(cfg, n)
    return ansatz_from_energies(beta, beta_star, sample_energies(cfg))


@dataclass
class C0Estimate:
    c0_emp: float
    stderr: float
    c0_asym: float


def estimate_c0(n: int, samples: int = 100_000, seed: int = 0, chunk: int = 8192) -> C0Estimate:
    """Expected magnitude of the minimum of ``n`` i.i.d. standard normals."""
    if n < 2:
        raise ValueError("estimate_c0 needs n >= 2")
    mins = []
    done = 0
    k = 0
    while done < samples:
        b = min(chunk, samples - done)
        mins.append(stream(seed, "c0", k).standard_normal((b, n)).min(axis=1))
        done += b
        k += 1
    mean, se = _mean_se(-np.concatenate(mins))
    return C0Estimate(mean, se, math.sqrt(2.0 * math.log(n)))


CURVE_FIELDS = ("lnZ", "F", "U", "S", "L", "dLdBeta")


@dataclass
class ThermoCurve:
    beta_grid: np.ndarray
    beta_star: float
    n: int
    lnZ: np.ndarray
    F: np.ndarray
    U: np.ndarray
    S: np.ndarray
    L: np.ndarray
    dLdBeta: np.ndarray
    stderr: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        header = ["beta", *CURVE_FIELDS, *(f"stderr_{k}" for k in CURVE_FIELDS)]
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, b in enumerate(self.beta_grid):
                row = [b] + [getattr(self, k)[i] for k in CURVE_FIELDS]
                row += [self.stderr[k][i] for k in CURVE_FIELDS]
                w.writerow([_fmt(v) for v in row])
        tmp.replace(path)
        return path

    @classmethod
    def from_csv(cls, path, beta_star: float, n: int) -> "ThermoCurve":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        return cls(col("beta"), beta_star, n, *(col(k) for k in CURVE_FIELDS),
                   stderr={k: col(f"stderr_{k}") for k in CURVE_FIELDS})


def _fmt(v) -> str:
    return repr(float(v)) if v is not None else "nan"


def default_grid(beta_star: float, points: int = 100) -> np.ndarray:
    return np.linspace(0.0, beta_star, points)


def thermo_curve(beta_star: float, n: int, cfg: ThermoConfig | None = None,
                 beta_grid=None) -> ThermoCurve:
    """All thermodynamic quantities on ``beta_grid`` (default: 100 points in [0, beta*])."""
    cfg = _with_n(cfg, n)
    grid = default_grid(beta_star) if beta_grid is None else np.asarray(beta_grid, dtype=np.float64)
    eps = sample_energies(cfg)
    out = {k: np.empty(len(grid)) for k in CURVE_FIELDS}
    se = {k: np.empty(len(grid)) for k in CURVE_FIELDS}
    for i, b in enumerate(grid):
        tp = thermo_from_energies(b, eps)
        al = ansatz_from_energies(b, beta_star, eps)
        out["lnZ"][i], se["lnZ"][i] = tp.lnZ, tp.se_lnZ
        out["U"][i], se["U"][i] = tp.U, tp.se_U
        out["S"][i], se["S"][i] = tp.S, tp.se_S
        out["F"][i] = np.nan if tp.F is None else tp.F
        se["F"][i] = np.nan if tp.se_F is None else tp.se_F
        out["L"][i], se["L"][i] = al.L, al.se_L
        out["dLdBeta"][i], se["dLdBeta"][i] = al.dLdBeta, al.se_dLdBeta
    return ThermoCurve(grid, float(beta_star), n, **out, stderr=se)


@dataclass
class ExpansionCoeffs:
    c0: float
    c1: float
    c2: float
    fit_window: tuple[float, float]
    residual: float
    se_c0: float
    se_c2: float


def fit_expansion_coeffs(curve: ThermoCurve, window: tuple[float, float]) -> ExpansionCoeffs:
    """Least-squares fit of ``U = -c0 + c2/beta^2`` on ``window``.

    ``c1`` comes from a separate fit ``F = -c0 - c1/beta - c2/beta^2``.  The
    window must lie above twice the fitted ``c0``, where the series is valid.
    """
    lo, hi = window
    beta = np.asarray(curve.beta_grid, dtype=np.float64)
    sel = (beta >= lo) & (beta <= hi) & (beta > 0)
    if sel.sum() < 4:
        raise ValueError(f"window {window} holds {int(sel.sum())} grid points; need >= 4")
    b = beta[sel]
    u = np.asarray(curve.U)[sel]
    A = np.column_stack([-np.ones_like(b), b ** -2])
    coef, *_ = np.linalg.lstsq(A, u, rcond=None)
    c0, c2 = coef
    res = u - A @ coef
    dof = max(len(b) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * float(res @ res) / dof
    f = np.asarray(curve.F)[sel]
    Af = np.column_stack([-np.ones_like(b), -1.0 / b, -(b ** -2)])
    fcoef, *_ = np.linalg.lstsq(Af, f, rcond=None)
    if lo <= 2.0 * c0:
        raise ValueError(f"window start {lo} is not above 2*c0 = {2 * c0:.3f}")
    return ExpansionCoeffs(float(c0), float(fcoef[1]), float(c2), (float(lo), float(hi)),
                           float(math.sqrt(np.mean(res ** 2))),
                           float(math.sqrt(cov[0, 0])), float(math.sqrt(cov[1, 1])))
