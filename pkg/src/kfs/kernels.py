"""l_q-type kernels built from finite exponential mixtures.

A kernel of this family has the form ``k(x, x') = h(||x - x'||_{q,beta}^q)``
where ``h(u) = sum_i w_i exp(-t_i u)`` and the weighted distance is
``sum_l beta_l |x_l - x'_l|^q``.  Laplace is ``q=1`` with the single atom
``(1, 1)``; Gaussian is ``q=2`` with the same atom.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_BLOCK_SIZE = 64


class KernelError(ValueError):
    """Invalid kernel specification or kernel argument."""


@dataclass(frozen=True)
class KernelSpec:
    """Which l_q geometry and which exponential mixture ``h`` to use.

    Parameters
    ----------
    q : int
        Exponent of the coordinate distance, 1 or 2.
    atoms : tuple of (t, w) pairs
        Scales ``t > 0`` and weights ``w > 0`` of the mixing measure.
        Weights are used as given; no normalization is applied.
    name : str, optional
        Label used in reports and CSV output.
    """

    q: int
    atoms: tuple[tuple[float, float], ...]
    name: str = "mixture"

    def __post_init__(self):
        if self.q not in (1, 2):
            raise KernelError(f"q must be 1 or 2, got {self.q!r}")
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        if not atoms:
            raise KernelError("a kernel needs at least one atom")
        for t, w in atoms:
            if not (np.isfinite(t) and np.isfinite(w)) or t <= 0 or w <= 0:
                raise KernelError(f"atom scales and weights must be positive, got ({t}, {w})")
        object.__setattr__(self, "atoms", atoms)

    @property
    def scales(self) -> np.ndarray:
        return np.array([t for t, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    @property
    def h0(self) -> float:
        """h(0), the diagonal of every Gram matrix."""
        return float(self.weights.sum())

    @property
    def h_prime0(self) -> float:
        """h'(0) = -sum w_i t_i; the steepest slope of h."""
        return -float((self.weights * self.scales).sum())


def laplace() -> KernelSpec:
    return KernelSpec(q=1, atoms=((1.0, 1.0),), name="laplace")


def gaussian() -> KernelSpec:
    return KernelSpec(q=2, atoms=((1.0, 1.0),), name="gaussian")


def mixture(q: int, atoms: Sequence[tuple[float, float]], name: str = "mixture") -> KernelSpec:
    return KernelSpec(q=q, atoms=tuple(atoms), name=name)


def parse_kernel(text: str, q: int | None = None) -> KernelSpec:
    """Parse ``laplace``, ``gaussian`` or ``mixture:<t:w,...>``.

    ``q`` overrides the geometry of the named kernels and is required
    for mixtures (defaults to 1 there).
    """
    text = text.strip().lower()
    if text == "laplace":
        spec = laplace()
    elif text == "gaussian":
        spec = gaussian()
    elif text.startswith("mixture:"):
        body = text[len("mixture:"):]
        atoms = []
        try:
            for item in body.split(","):
                t, w = item.split(":")
                atoms.append((float(t), float(w)))
        except ValueError as exc:
            raise KernelError(f"malformed mixture {text!r}; expected mixture:t1:w1,t2:w2") from exc
        return KernelSpec(q=1 if q is None else q, atoms=tuple(atoms), name="mixture")
    else:
        raise KernelError(f"unknown kernel {text!r}")
    if q is not None and q != spec.q:
        spec = KernelSpec(q=q, atoms=spec.atoms, name=spec.name)
    return spec


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise KernelError("h is only defined for nonnegative arguments")
    return u


def h_eval(spec: KernelSpec, u):
    """Evaluate ``h(u) = sum_i w_i exp(-t_i u)`` elementwise."""
    u = _check_u(u)
    out = np.zeros_like(u)
    for t, w in spec.atoms:
        out += w * np.exp(-t * u)
    return out if out.ndim else float(out)


def h_prime_eval(spec: KernelSpec, u):
    """Evaluate ``h'(u) = -sum_i w_i t_i exp(-t_i u)`` elementwise."""
    u = _check_u(u)
    out = np.zeros_like(u)
    for t, w in spec.atoms:
        out -= w * t * np.exp(-t * u)
    return out if out.ndim else float(out)


def weighted_dist(q: int, beta, x, x_prime) -> float:
    """Weighted l_q distance ``sum_l beta_l |x_l - x'_l|^q``."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    if not (beta.shape == x.shape == x_prime.shape) or beta.ndim != 1:
        raise KernelError(
            f"dimension mismatch: beta {beta.shape}, x {x.shape}, x' {x_prime.shape}")
    diff = np.abs(x - x_prime)
    if q == 2:
        diff = diff * diff
    elif q != 1:
        raise KernelError(f"q must be 1 or 2, got {q!r}")
    return float(beta @ diff)


def default_threads() -> int:
    env = os.environ.get("KFS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _as_matrix(data) -> np.ndarray:
    X = getattr(data, "X", data)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise KernelError(f"expected an n x p design matrix, got shape {X.shape}")
    return X


def _coord_power(diff: np.ndarray, q: int) -> np.ndarray:
    np.abs(diff, out=diff)
    if q == 2:
        np.multiply(diff, diff, out=diff)
    return diff


def distance_block(X: np.ndarray, rows: slice, beta: np.ndarray, q: int) -> np.ndarray:
    """Weighted distances between ``X[rows]`` and every row of ``X``."""
    active = np.flatnonzero(beta)
    if active.size == 0:
        return np.zeros((X[rows].shape[0], X.shape[0]))
    Xa = X[:, active]
    diff = _coord_power(Xa[rows, None, :] - Xa[None, :, :], q)
    return diff @ beta[active]


def distance_matrix(spec_or_q, data, beta, block_size: int = DEFAULT_BLOCK_SIZE,
                    threads: int | None = 1) -> np.ndarray:
    """All pairwise weighted distances, assembled over row tiles."""
    q = spec_or_q.q if isinstance(spec_or_q, KernelSpec) else int(spec_or_q)
    X = _as_matrix(data)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (X.shape[1],):
        raise KernelError(f"beta has shape {beta.shape}, expected ({X.shape[1]},)")
    if np.any(beta < 0):
        raise KernelError("beta must be nonnegative")
    n = X.shape[0]
    D = np.empty((n, n))
    tiles = [slice(s, min(s + block_size, n)) for s in range(0, n, block_size)]

    def fill(tile):
        D[tile] = distance_block(X, tile, beta, q)

    threads = default_threads() if threads is None else threads
    if threads > 1 and len(tiles) > 1:
        # tiles write disjoint rows, so the result does not depend on scheduling
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, tiles))
    else:
        for tile in tiles:
            fill(tile)
    # exact symmetry regardless of summation order inside a tile
    D = np.triu(D, 1)
    D = D + D.T
    return D


def gram_matrix(spec: KernelSpec, data, beta, block_size: int = DEFAULT_BLOCK_SIZE,
                threads: int | None = 1) -> np.ndarray:
    """Gram matrix ``K_ij = h(sum_l beta_l |X_il - X_jl|^q)``.

    ``data`` is either an ``(n, p)`` array or anything with an ``X``
    attribute (e.g. :class:`kfs.krr.Dataset`).
    """
    D = distance_matrix(spec, data, beta, block_size=block_size, threads=threads)
    return h_eval(spec, D)


DEFAULT_MEMORY_BUDGET = 256 * 2**20


class CoordinateDiffs:
    """Per-coordinate pairwise differences ``|X_il - X_jl|^q`` of one design.

    These do not depend on beta, so the strict upper triangle is stored
    once as a ``(p, n(n-1)/2)`` array when it fits in ``memory_budget``
    bytes; otherwise the differences are rebuilt tile by tile on every
    call.  Both paths agree to roundoff.
    """

    def __init__(self, data, q: int, memory_budget: int = DEFAULT_MEMORY_BUDGET,
                 block_size: int = DEFAULT_BLOCK_SIZE):
        if q not in (1, 2):
            raise KernelError(f"q must be 1 or 2, got {q!r}")
        self.X = _as_matrix(data)
        self.q = q
        self.block_size = block_size
        n, p = self.X.shape
        m = n * (n - 1) // 2
        self.cached = m * p * 8 <= memory_budget
        self._upper = None
        self._tensor = None
        if self.cached:
            self._upper = np.triu_indices(n, 1)
            i, j = self._upper
            T = self.X.T[:, i] - self.X.T[:, j]
            self._tensor = _coord_power(T, q)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def _tiles(self):
        n = self.n
        return [slice(s, min(s + self.block_size, n)) for s in range(0, n, self.block_size)]

    def distances(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.p,):
            raise KernelError(f"beta has shape {beta.shape}, expected ({self.p},)")
        if np.any(beta < 0):
            raise KernelError("beta must be nonnegative")
        n = self.n
        if self.cached:
            D = np.zeros((n, n))
            active = np.flatnonzero(beta)
            if 4 * active.size >= self.p:
                D[self._upper] = beta @ self._tensor
            elif active.size:
                # gathering rows copies them; only worth it for sparse beta
                D[self._upper] = beta[active] @ self._tensor[active]
            return D + D.T
        D = np.vstack([distance_block(self.X, tile, beta, self.q) for tile in self._tiles()])
        D = np.triu(D, 1)
        return D + D.T

    def weighted_sums(self, W: np.ndarray) -> np.ndarray:
        """Return ``s_l = sum_ij W_ij |X_il - X_jl|^q`` for every coordinate.

        ``W`` must be symmetric; the diagonal contributes nothing.
        """
        n = self.n
        if W.shape != (n, n):
            raise KernelError(f"weight matrix has shape {W.shape}, expected ({n}, {n})")
        if self.cached:
            if n < 2:
                return np.zeros(self.p)
            return 2.0 * (self._tensor @ W[self._upper])
        out = np.zeros(self.p)
        for tile in self._tiles():
            diff = _coord_power(self.X[tile, None, :] - self.X[None, :, :], self.q)
            out += np.tensordot(W[tile], diff, axes=([0, 1], [0, 1]))
        return out
