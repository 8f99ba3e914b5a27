"""Inverse temperature <-> mean softmax entropy for i.i.d. Gaussian logits.

``H(beta)`` is the Shannon entropy (nats) of ``softmax(beta * g)`` with
``g ~ N(0, I_n)``, averaged over draws.  All evaluations with the same seed
reuse the same draws (regenerated chunk by chunk from the seed), so the
estimate is exactly monotone in ``beta`` and bisection is well posed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_model import logsumexp, softmax
from .seeding import stream

CHUNK_ELEMENTS = 4_000_000


@dataclass
class EntropyEstimate:
    H: float
    stderr: float


def _chunks(n: int, samples: int, seed: int):
    rows = max(1, CHUNK_ELEMENTS // n)
    done = k = 0
    while done < samples:
        b = min(rows, samples - done)
        yield stream(seed, "entropy", k).standard_normal((b, n))
        done += b
        k += 1


def _entropies(beta: float, g: np.ndarray) -> np.ndarray:
    a = beta * g
    return logsumexp(a, axis=1) - np.sum(softmax(a) * a, axis=1)


def mean_entropy(n: int, beta: float, samples: int = 1024, seed: int = 0) -> EntropyEstimate:
    if beta < 0 or samples < 1 or n < 1:
        raise ValueError("need beta >= 0, samples >= 1, n >= 1")
    if beta == 0:
        return EntropyEstimate(math.log(n), 0.0)
    h = np.concatenate([_entropies(beta, g) for g in _chunks(n, samples, seed)])
    se = float(h.std(ddof=1) / math.sqrt(h.size)) if h.size > 1 else float("nan")
    return EntropyEstimate(float(h.mean()), se)


@dataclass
class EntropySolution:
    beta: float
    bracket: tuple[float, float]
    H: float
    evaluations: int
    c0_asym: float

    def report(self) -> dict:
        return {"beta": self.beta, "bracket": list(self.bracket), "H": self.H,
                "evaluations": self.evaluations, "c0_asym": self.c0_asym}


def solve_beta_for_entropy(n: int, target_H: float, tol: float = 0.25, samples: int = 1024,
                           seed: int = 0, beta_max: float = 1e6) -> EntropySolution:
    """Bisect for ``H(beta) = target_H``; the returned bracket has width <= ``tol``.

    ``H(lo) >= target_H > H(hi)`` holds for the bracket.  The upper end is
    found by doubling from 1.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    ln_n = math.log(n)
    if not 0 < target_H <= ln_n:
        raise ValueError(f"target_H must lie in (0, ln n = {ln_n:.6g}], got {target_H}")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    c0_asym = math.sqrt(2.0 * ln_n)
    if target_H == ln_n:
        return EntropySolution(0.0, (0.0, 0.0), ln_n, 0, c0_asym)
    evals = 0

    def H(b: float) -> float:
        nonlocal evals
        evals += 1
        return mean_entropy(n, b, samples, seed).H

    lo, hi = 0.0, 1.0
    while H(hi) >= target_H:
        lo, hi = hi, 2.0 * hi
        if hi > beta_max:
            raise ValueError(f"entropy stays above {target_H} up to beta={beta_max:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if H(mid) >= target_H:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    return EntropySolution(beta, (lo, hi), H(beta), evals, c0_asym)
