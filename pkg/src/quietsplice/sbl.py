"""Sparse Bayesian learning over an overcomplete dictionary.

The update rule, applied verbatim at every step::

    gamma_next = 1 / (|mu| + eps)
    Sigma_next = (D^T D / lam + diag(1 / gamma))^-1
    mu_next    = Sigma_next D^T x / lam

Note that ``Sigma_next`` uses the *incoming* gamma, so the gamma computed
in one step only takes effect in the step after. Iteration stops when the
largest relative change of gamma drops below ``delta``.

On overcomplete dictionaries this rule typically settles into a short
limit cycle instead of a fixed point; :func:`sbl_solve` then stops at
``max_iterations`` and reports ``converged=False``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import InvalidDimension, SingularSystem

DICTIONARY_KINDS = ("overcomplete_dct", "identity", "custom")


@dataclass(frozen=True)
class SblConfig:
    lam: float = 1e-2
    epsilon: float = 1e-6
    delta: float = 1e-4
    max_iterations: int = 100
    dictionary_kind: str = "overcomplete_dct"
    oversampling: float = 2.0

    def __post_init__(self):
        if min(self.lam, self.epsilon, self.delta) <= 0:
            raise ValueError("lam, epsilon and delta must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.dictionary_kind not in DICTIONARY_KINDS:
            raise ValueError(f"unknown dictionary kind {self.dictionary_kind!r}")
        if self.oversampling < 1:
            raise ValueError("oversampling must be >= 1")


@dataclass(frozen=True)
class Dictionary:
    atoms: np.ndarray  # (signal_dim, num_atoms), unit-norm columns
    kind: str
    # DCT atoms only: angular frequency and squared normalisation per atom,
    # which give D diag(g) D^T in Toeplitz-plus-Hankel form.
    frequencies: np.ndarray | None = None
    scales: np.ndarray | None = None

    @property
    def signal_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SblState:
    gamma: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    iteration: int = 0


class SblResult(NamedTuple):
    mu: np.ndarray
    iterations: int
    converged: bool


def build_dictionary(signal_dim: int, oversampling: float = 2.0,
                     kind: str = "overcomplete_dct", atoms=None) -> Dictionary:
    """Build a dictionary with unit-norm columns.

    ``overcomplete_dct`` uses DCT-IV atoms on a frequency grid refined by
    ``oversampling``: atom k is cos(pi (i + 1/2)(k + 1/2) / K) for K atoms. With
    oversampling 1 this is the orthonormal DCT-IV basis.
    """
    if signal_dim < 1:
        raise InvalidDimension("signal_dim must be >= 1")
    if kind == "identity":
        return Dictionary(np.eye(signal_dim), kind)
    if kind == "custom":
        if atoms is None:
            raise InvalidDimension("custom dictionary needs an atom matrix")
        mat = np.asarray(atoms, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != signal_dim:
            raise InvalidDimension("atom matrix must have signal_dim rows")
        norms = np.linalg.norm(mat, axis=0)
        if np.any(norms == 0):
            raise InvalidDimension("atoms must be non-zero")
        return Dictionary(mat / norms, kind)
    if kind != "overcomplete_dct":
        raise InvalidDimension(f"unknown dictionary kind {kind!r}")
    if oversampling < 1:
        raise InvalidDimension("oversampling must be >= 1")
    n = signal_dim
    k_atoms = int(round(oversampling * n))
    i = np.arange(n)[:, None]
    k = np.arange(k_atoms)[None, :]
    theta = np.pi * (k[0] + 0.5) / k_atoms
    mat = np.cos((i + 0.5) * theta)
    norms = np.linalg.norm(mat, axis=0)
    return Dictionary(mat / norms, kind, theta, 1.0 / norms ** 2)


def _cholesky(a: np.ndarray):
    try:
        return linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError:
        pass
    jitter = 1e-10 * np.trace(a) / a.shape[0]
    try:
        return linalg.cho_factor(a + jitter * np.eye(a.shape[0]), lower=True)
    except linalg.LinAlgError as exc:
        raise SingularSystem("SBL system not positive definite after jitter") from exc


def initial_state(D: Dictionary, x) -> SblState:
    """gamma = 1, mu = D^T x (correlation start)."""
    x = np.asarray(x, dtype=np.float64)
    gamma = np.ones(D.num_atoms)
    return SblState(gamma, D.atoms.T @ x, np.diag(gamma), 0)


def sbl_iterate(state: SblState, D: Dictionary, x, cfg: SblConfig) -> SblState:
    """One update step, returning the full posterior covariance."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (D.signal_dim,) or state.gamma.shape != (D.num_atoms,):
        raise InvalidDimension("state, dictionary and signal dimensions disagree")
    Dm = D.atoms
    gamma_next = 1.0 / (np.abs(state.mu) + cfg.epsilon)
    system = Dm.T @ Dm / cfg.lam + np.diag(1.0 / state.gamma)
    factor = _cholesky(system)
    mu_next = linalg.cho_solve(factor, Dm.T @ x / cfg.lam)
    sigma = linalg.cho_solve(factor, np.eye(D.num_atoms))
    sigma = 0.5 * (sigma + sigma.T)
    return SblState(gamma_next, mu_next, sigma, state.iteration + 1)


def gamma_change(gamma_next: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Max-norm of the elementwise relative change, along the last axis."""
    return np.max(np.abs(gamma_next - gamma) / gamma, axis=-1)


def sbl_solve(x, D: Dictionary, cfg: SblConfig) -> SblResult:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    mu, iters, conv = sbl_solve_batch(x[None, :], D, cfg)
    return SblResult(mu[0], int(iters[0]), bool(conv[0]))


def weighted_gram(D: Dictionary, gamma: np.ndarray) -> np.ndarray:
    """D diag(g) D^T for each row g of ``gamma``; shape (rows, n, n)."""
    n = D.signal_dim
    if D.frequencies is None:
        return np.einsum("ik,fk,jk->fij", D.atoms, gamma, D.atoms, optimize=True)
    # cos(a t) cos(b t) = (cos((a-b) t) + cos((a+b) t)) / 2 with a, b = i+1/2, j+1/2
    lags = np.arange(2 * n)
    table = (gamma * D.scales) @ np.cos(np.outer(D.frequencies, lags))
    i = np.arange(n)
    diff = np.abs(i[:, None] - i[None, :])
    total = i[:, None] + i[None, :] + 1
    return 0.5 * (table[:, diff] + table[:, total])


def _batch_mu(D: Dictionary, X: np.ndarray, gamma: np.ndarray, lam: float) -> np.ndarray:
    # (D^T D/lam + diag(1/g))^-1 D^T x/lam == g * D^T (lam I + D diag(g) D^T)^-1 x,
    # which only needs a signal_dim-sized solve per frame.
    n = D.signal_dim
    gram = weighted_gram(D, gamma)
    gram[:, np.arange(n), np.arange(n)] += lam
    try:
        z = np.linalg.solve(gram, X[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        z = np.stack([linalg.cho_solve(_cholesky(g), x) for g, x in zip(gram, X)])
    return gamma * (z @ D.atoms)


def sbl_solve_batch(X, D: Dictionary, cfg: SblConfig, chunk: int = 256):
    """Solve many independent signals (rows of ``X``) at once.

    Returns ``(mu, iterations, converged)`` with one entry per row. The
    covariance is never formed; the mean update is the same quantity as in
    :func:`sbl_iterate`, computed through the push-through identity.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != D.signal_dim:
        raise InvalidDimension("signal length does not match dictionary")
    Dm = D.atoms
    mu_out = np.empty((X.shape[0], D.num_atoms))
    iters = np.zeros(X.shape[0], dtype=int)
    conv = np.zeros(X.shape[0], dtype=bool)
    for start in range(0, X.shape[0], chunk):
        rows = np.arange(start, min(start + chunk, X.shape[0]))
        xs = X[rows]
        mu = xs @ Dm
        gamma = np.ones_like(mu)
        active = np.ones(len(rows), dtype=bool)
        for t in range(1, cfg.max_iterations + 1):
            a = np.flatnonzero(active)
            gamma_next = 1.0 / (np.abs(mu[a]) + cfg.epsilon)
            mu[a] = _batch_mu(D, xs[a], gamma[a], cfg.lam)
            done = gamma_change(gamma_next, gamma[a]) < cfg.delta
            gamma[a] = gamma_next
            iters[rows[a]] = t
            conv[rows[a[done]]] = True
            active[a[done]] = False
            if not active.any():
                break
        mu_out[rows] = mu
    return mu_out, iters, conv
