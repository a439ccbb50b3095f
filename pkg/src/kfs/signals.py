"""Synthetic models, effective-signal-size estimators and a Fourier self-check.

Random streams
--------------
All randomness goes through :func:`make_rng`, which builds a NumPy
``Generator`` on the counter-based Philox bit generator.  The key is derived
from ``SeedSequence([seed, *keys])`` and the stream is selected by jumping
the counter ``stream * 2**128`` steps, so the dataset draws, the pair draws
and the random-beta draws of one seed never overlap and replicate across
platforms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .kernels import KernelSpec, h_eval
from .krr import Dataset

DATA_STREAM = 0
PAIR_STREAM = 1
BETA_STREAM = 2

MAX_CHAIN_SET = 6


def make_rng(seed: int, stream: int = DATA_STREAM, *keys: int) -> np.random.Generator:
    bitgen = np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)]))
    if stream:
        bitgen = bitgen.jumped(stream)
    return np.random.Generator(bitgen)


COMPONENTS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda x: x,
    "centered_quadratic": lambda x: x * x - 1.0,
    "sine": np.sin,
}

MODEL_KINDS = ("main_effect_fig1", "hierarchical_fig2", "custom_additive")


@dataclass(frozen=True)
class ModelSpec:
    """A synthetic regression model with ``X ~ N(0, I_p)``.

    ``main_effect_fig1``: ``y = x1 + (x2^2 - 1) + noise``.
    ``hierarchical_fig2``: ``y = x1 + x1 x2 + x1 x2 x3 + noise``.
    ``custom_additive``: ``y = sum_k f_k(x_{i_k}) + noise`` with
    ``components = ((i_k, name_k), ...)`` (0-based indices, names from
    :data:`COMPONENTS`).
    """

    kind: str
    p: int
    sigma2: float
    components: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.kind == "custom_additive":
            if not self.components:
                raise ValueError("custom_additive needs at least one component")
            for idx, name in self.components:
                if name not in COMPONENTS:
                    raise ValueError(f"unknown component {name!r}")
        if self.p < max(self.signal_indices) + 1:
            raise ValueError(f"p={self.p} is smaller than the largest signal index")

    @property
    def signal_indices(self) -> tuple[int, ...]:
        if self.kind == "main_effect_fig1":
            return (0, 1)
        if self.kind == "hierarchical_fig2":
            return (0, 1, 2)
        return tuple(sorted({int(i) for i, _ in self.components}))

    def signal(self, X: np.ndarray) -> np.ndarray:
        """Noiseless regression function evaluated on rows of ``X``."""
        if self.kind == "main_effect_fig1":
            return X[:, 0] + (X[:, 1] ** 2 - 1.0)
        if self.kind == "hierarchical_fig2":
            x1x2 = X[:, 0] * X[:, 1]
            return X[:, 0] + x1x2 + x1x2 * X[:, 2]
        return sum(COMPONENTS[name](X[:, idx]) for idx, name in self.components)


def main_effect_model(p: int, sigma2: float = 4.0) -> ModelSpec:
    return ModelSpec("main_effect_fig1", p, sigma2)


def hierarchical_model(p: int, sigma2: float = 1.0) -> ModelSpec:
    return ModelSpec("hierarchical_fig2", p, sigma2)


def generate_raw(model: ModelSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    X = rng.standard_normal((n, model.p))
    noise = rng.standard_normal(n)
    y = model.signal(X) + math.sqrt(model.sigma2) * noise
    return X, y


def generate(model: ModelSpec, n: int, seed: int, *keys: int) -> Dataset:
    """Draw ``n`` observations; ``y`` comes back centered."""
    if n < 1:
        raise ValueError("n must be at least 1")
    X, y = generate_raw(model, n, make_rng(seed, DATA_STREAM, *keys))
    return Dataset.from_arrays(X, y)


@dataclass(frozen=True)
class EffectSizeEstimate:
    raw: float
    abs: float
    mc_stderr: float
    samples: int


def standard_normal_sampler(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    return rng.standard_normal((m, k))


def effect_size_mc(kernel: KernelSpec | str, g: Callable[[np.ndarray], np.ndarray],
                   T: Sequence[int] | int, m: int, seed: int = 0,
                   sampler=standard_normal_sampler) -> EffectSizeEstimate:
    """Monte-Carlo estimate of ``E[g(X_T) g(X'_T) kappa(X_T, X'_T)]``.

    Parameters
    ----------
    kernel : KernelSpec or ``"abs"``
        With a spec, ``kappa = h(||X_T - X'_T||_q^q)``; with ``"abs"``,
        ``kappa = ||X_T - X'_T||_1`` (``|x - x'|`` for a single variable).
    g : callable
        Maps an ``(m, |T|)`` array of the ``T`` coordinates to ``m`` values.
    T : sequence of int or int
        Variables entering ``g``; only the size matters for the default
        sampler, which draws independent standard normals.
    m : int
        Number of independent pairs, at least 2.
    """
    if m < 2:
        raise ValueError("need at least two sample pairs")
    k = T if isinstance(T, int) else len(T)
    rng = make_rng(seed, PAIR_STREAM)
    A = sampler(rng, m, k)
    B = sampler(rng, m, k)
    diff = np.abs(A - B)
    if isinstance(kernel, KernelSpec):
        if kernel.q == 2:
            diff = diff * diff
        kappa = h_eval(kernel, diff.sum(axis=1))
    elif kernel == "abs":
        kappa = diff.sum(axis=1)
    else:
        raise ValueError(f"kernel must be a KernelSpec or 'abs', got {kernel!r}")
    vals = np.asarray(g(A), dtype=float) * np.asarray(g(B), dtype=float) * kappa
    raw = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(m))
    return EffectSizeEstimate(raw, abs(raw), stderr, m)


def compose_effect_size(parts) -> float:
    """Product of ``min(|E_k|, 1)`` over a chain of estimates."""
    parts = list(parts)
    if not parts:
        raise ValueError("need at least one effect-size part")
    out = 1.0
    for part in parts:
        value = part.abs if isinstance(part, EffectSizeEstimate) else abs(float(part))
        out *= min(value, 1.0)
    return out


def main_effect_size(l: int, S: Sequence[int], estimate: Callable[[frozenset], EffectSizeEstimate]) -> float:
    """Minimum over selection orders of the chained effect sizes of ``l``.

    Chains start at ``{l}`` and add one variable of ``S`` at a time until
    they reach ``S``; ``estimate(T)`` returns the effect size of ``l`` in
    the context of the set ``T``.  Sets larger than six need a hand-made
    chain passed to :func:`compose_effect_size`.
    """
    S = frozenset(S)
    if l not in S:
        raise ValueError("l must belong to S")
    if len(S) > MAX_CHAIN_SET:
        raise ValueError(f"chain enumeration is capped at |S| <= {MAX_CHAIN_SET}")
    cache: dict[frozenset, EffectSizeEstimate] = {}

    def get(T):
        if T not in cache:
            cache[T] = estimate(T)
        return cache[T]

    best = math.inf
    rest = sorted(S - {l})
    for order in itertools.permutations(rest):
        chain = [frozenset({l, *order[:k]}) for k in range(len(order) + 1)]
        best = min(best, compose_effect_size(get(T) for T in chain))
    return best


def hierarchical_effect_size(kernel: KernelSpec | str, components: Sequence[Callable], level: int,
                             m: int, seed: int = 0) -> float:
    """Effective signal size of the level-``level`` variable of one hierarchy.

    ``components[w-1]`` is the ANOVA term of the first ``w`` variables of
    the hierarchy and takes an ``(m, w)`` array.  For each starting level
    ``s <= level`` the chain multiplies ``min(|E_s(X_{S_j})|, 1)`` over
    ``j = s..N`` where the test function sums the terms ``s..j``; the
    smallest chain value is returned.
    """
    N = len(components)
    if not 1 <= level <= N:
        raise ValueError(f"level must lie in [1, {N}]")
    best = math.inf
    for s in range(1, level + 1):
        parts = []
        for j in range(s, N + 1):
            def F(X, s=s, j=j):
                return sum(components[w - 1](X[:, :w]) for w in range(s, j + 1))
            parts.append(effect_size_mc(kernel, F, j, m, seed=seed + 1000 * s + j))
        best = min(best, compose_effect_size(parts))
    return best


def _series_head(gaps: np.ndarray, weights: np.ndarray, eps: float, terms: int = 6) -> float:
    """Integral over ``[0, eps]`` of ``sum_ij w_ij cos(a_ij w) / w^2``.

    Uses the Taylor series of cosine; the constant term vanishes because
    the masses sum to zero.
    """
    total = 0.0
    for k in range(1, terms + 1):
        moment = float(np.sum(weights * gaps ** (2 * k)))
        coef = (-1) ** k / math.factorial(2 * k)
        total += coef * moment * eps ** (2 * k - 1) / (2 * k - 1)
    return total


def _tail(gaps: np.ndarray, weights: np.ndarray, cutoff: float) -> float:
    """Exact ``int_cutoff^inf sum_ij w_ij cos(a_ij w) / w^2 dw``."""
    from scipy.special import sici
    total = 0.0
    for a, w in zip(gaps.ravel(), weights.ravel()):
        if a == 0:
            total += w / cutoff
        else:
            si, _ = sici(a * cutoff)
            total += w * (math.cos(a * cutoff) / cutoff - a * (math.pi / 2 - si))
    return total


def fourier_identity_check(points, masses, omega_cutoff: float = 200.0, n_quad: int = 200_000,
                           eps: float = 1e-3, tail: bool = True) -> tuple[float, float]:
    """Compare both sides of the absolute-distance Fourier identity.

    For signed masses ``p_i`` at points ``x_i`` with ``sum p_i = 0``::

        sum_ij p_i p_j |x_i - x_j| = -(2/pi) int_0^inf |p_hat(w)|^2 / w^2 dw

    with ``p_hat(w) = sum_j p_j exp(i w x_j)``.  The right side is computed
    by a cosine series on ``[0, eps]``, composite Simpson with ``n_quad``
    panels on ``[eps, omega_cutoff]`` and, when ``tail`` is set, the exact
    remainder beyond the cutoff via the sine integral.
    """
    x = np.asarray(points, dtype=float).ravel()
    p = np.asarray(masses, dtype=float).ravel()
    if x.size < 2 or x.shape != p.shape:
        raise ValueError("need at least two points with one mass each")
    if abs(p.sum()) > 1e-12:
        raise ValueError(f"masses must sum to zero, got {p.sum():.3g}")
    gaps = np.abs(x[:, None] - x[None, :])
    weights = p[:, None] * p[None, :]
    lhs = float(np.sum(weights * gaps))
    if not np.any(p):
        return 0.0, 0.0

    n_panels = n_quad + (n_quad % 2)
    omega = np.linspace(eps, omega_cutoff, n_panels + 1)
    phat = np.exp(1j * np.outer(omega, x)) @ p
    integrand = np.abs(phat) ** 2 / omega ** 2
    body = integrate.simpson(integrand, x=omega)
    total = _series_head(gaps, weights, eps) + body
    if tail:
        total += _tail(gaps, weights, omega_cutoff)
    return lhs, -2.0 / math.pi * total
