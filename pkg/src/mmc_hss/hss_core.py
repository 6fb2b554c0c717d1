"""Harmonic state-space building blocks.

A real T-periodic signal x(t) is carried as the stack of its complex Fourier
coefficients [X_{-h}, ..., X_0, ..., X_h]. Multiplication by a periodic
coefficient becomes a block-Toeplitz operator on the stack, d/dt becomes a
block-diagonal frequency shift, and periodic (or modulated-periodic) responses
of a linear time-periodic system come out of one dense linear solve. Nothing
in here knows about converters; it is plain multi-harmonic linear algebra.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve

from .errors import SingularSystemError

# Dense solves refuse to return garbage past this condition estimate.
COND_LIMIT = 1e12


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HarmonicCoeffs:
    """Fourier coefficients of one scalar T-periodic signal.

    coeffs holds [X_{-h}, ..., X_0, ..., X_h]; omega1 is the fundamental in
    rad/s. A real signal satisfies X_{-k} = conj(X_k).
    """

    order: int
    omega1: float
    coeffs: np.ndarray

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.omega1 <= 0.0:
            raise ValueError("omega1 must be positive")
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (2 * self.order + 1,):
            raise ValueError(
                f"need {2 * self.order + 1} coefficients for order {self.order}, "
                f"got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", _readonly(c))

    def coeff(self, k: int) -> complex:
        if abs(k) > self.order:
            raise ValueError(f"harmonic {k} outside truncation +-{self.order}")
        return complex(self.coeffs[k + self.order])

    def is_real_signal(self, tol: float = 1e-12) -> bool:
        """True when the stack is conjugate-symmetric, i.e. x(t) is real."""
        scale = max(np.abs(self.coeffs).max(), 1.0)
        return bool(
            np.all(np.abs(self.coeffs[::-1].conj() - self.coeffs) <= tol * scale)
        )


@dataclass(frozen=True)
class HarmonicVector:
    """Harmonic stack of a d-dimensional state: [X_{-h}; ...; X_0; ...; X_h].

    Block k (length dim) sits at rows (k+order)*dim .. (k+order+1)*dim.
    """

    order: int
    dim: int
    data: np.ndarray

    def __post_init__(self):
        if self.order < 0 or self.dim < 1:
            raise ValueError("order must be >= 0 and dim >= 1")
        v = np.asarray(self.data, dtype=complex)
        n = self.dim * (2 * self.order + 1)
        if v.shape != (n,):
            raise ValueError(f"data must have shape ({n},), got {v.shape}")
        object.__setattr__(self, "data", _readonly(v))

    @classmethod
    def from_blocks(cls, order, dim, blocks):
        """Build from a mapping {k: length-dim array}; missing k are zero."""
        v = np.zeros(dim * (2 * order + 1), dtype=complex)
        for k, b in blocks.items():
            if abs(k) > order:
                raise ValueError(f"harmonic {k} outside truncation +-{order}")
            b = np.asarray(b, dtype=complex)
            if b.shape != (dim,):
                raise ValueError(f"block {k} must have shape ({dim},)")
            v[(k + order) * dim:(k + order + 1) * dim] = b
        return cls(order, dim, v)

    def block(self, k: int) -> np.ndarray:
        if abs(k) > self.order:
            raise ValueError(f"harmonic {k} outside truncation +-{self.order}")
        return self.data[(k + self.order) * self.dim:(k + self.order + 1) * self.dim]

    def signal(self, omega1: float, state_index: int) -> HarmonicCoeffs:
        """Fourier stack of one state component (omega1 is not stored here)."""
        if not 0 <= state_index < self.dim:
            raise ValueError(f"state index {state_index} out of range")
        c = self.data[state_index::self.dim]
        return HarmonicCoeffs(self.order, omega1, c)

    def is_real_signal(self, tol: float = 1e-12) -> bool:
        blocks = self.data.reshape(2 * self.order + 1, self.dim)
        scale = max(np.abs(self.data).max(), 1.0)
        return bool(np.all(np.abs(blocks[::-1].conj() - blocks) <= tol * scale))


@dataclass(frozen=True)
class ToeplitzOperator:
    """Block-Toeplitz operator: block (r, c) is A_{r-c}, zero past +-order.

    Acting on a harmonic stack this is multiplication of the underlying
    time signal by the periodic matrix whose Fourier blocks are A_k,
    truncated to the +-order window.
    """

    order: int
    dim: int
    blocks: dict = field(repr=False)

    def __post_init__(self):
        clean = {}
        for k, b in self.blocks.items():
            if abs(k) > self.order:
                raise ValueError(f"block index {k} outside truncation +-{self.order}")
            b = np.asarray(b, dtype=complex)
            if b.shape != (self.dim, self.dim):
                raise ValueError(
                    f"block {k} must be {self.dim}x{self.dim}, got {b.shape}"
                )
            clean[int(k)] = _readonly(b)
        object.__setattr__(self, "blocks", clean)

    def block(self, k: int) -> np.ndarray:
        if k in self.blocks:
            return self.blocks[k]
        return np.zeros((self.dim, self.dim), dtype=complex)

    @property
    def matrix(self) -> np.ndarray:
        n = 2 * self.order + 1
        d = self.dim
        m = np.zeros((n * d, n * d), dtype=complex)
        for k, b in self.blocks.items():
            for r in range(n):
                c = r - k
                if 0 <= c < n:
                    m[r * d:(r + 1) * d, c * d:(c + 1) * d] = b
        return m

    def __matmul__(self, x: HarmonicVector) -> HarmonicVector:
        if x.order != self.order or x.dim != self.dim:
            raise ValueError("operator and vector shapes disagree")
        return HarmonicVector(self.order, self.dim, self.matrix @ x.data)


@dataclass(frozen=True)
class ShiftOperator:
    """Block-diagonal frequency shift: block k is j(omega_off + k*omega1)*I."""

    order: int
    dim: int
    omega1: float
    omega_off: float = 0.0

    def __post_init__(self):
        if self.omega1 <= 0.0:
            raise ValueError("omega1 must be positive")

    @property
    def diagonal(self) -> np.ndarray:
        ks = np.arange(-self.order, self.order + 1)
        freqs = 1j * (self.omega_off + ks * self.omega1)
        return np.repeat(freqs, self.dim)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)


def fourier_of_samples(samples, period: float, k: int) -> complex:
    """k-th complex Fourier coefficient of uniformly sampled periodic data.

    Parameters
    ----------
    samples : array_like
        x(t_n) at t_n = n*period/N, n = 0..N-1 (one period, no duplicated
        endpoint).
    period : float
        Signal period in seconds.
    k : int
        Harmonic index.

    The rectangular rule on one exact period is spectrally accurate; it is
    exact whenever the signal is band-limited below the sampling Nyquist.
    Requires N >= 4|k| + 4 so the target bin is comfortably resolved.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("samples must be a non-empty 1-d array")
    if period <= 0.0:
        raise ValueError("period must be positive")
    n = x.size
    if n < 4 * abs(k) + 4:
        raise ValueError(f"{n} samples cannot resolve harmonic {k}")
    phase = np.exp(-2j * np.pi * k * np.arange(n) / n)
    return complex(np.sum(x * phase) / n)


def fourier_series_of_samples(samples, period: float, order: int) -> HarmonicCoeffs:
    """All coefficients -order..order of one sampled period in one pass."""
    c = np.array(
        [fourier_of_samples(samples, period, k) for k in range(-order, order + 1)]
    )
    return HarmonicCoeffs(order, 2.0 * np.pi / period, c)


def build_toeplitz(blocks, order: int, dim: int) -> ToeplitzOperator:
    """Wrap a mapping {k: (dim, dim) array} into a block-Toeplitz operator."""
    return ToeplitzOperator(order, dim, dict(blocks))


def build_shift(order: int, dim: int, omega1: float,
                omega_off: float = 0.0) -> ShiftOperator:
    return ShiftOperator(order, dim, omega1, omega_off)


class DenseFactor:
    """LU factorization with a 1-norm condition estimate, reusable for
    several right-hand sides.

    Raises SingularSystemError (with the estimate attached) when the
    condition estimate exceeds COND_LIMIT, rather than returning noise.
    """

    def __init__(self, m: np.ndarray):
        m = np.ascontiguousarray(m, dtype=complex)
        anorm = np.linalg.norm(m, 1)
        if anorm == 0.0:
            raise SingularSystemError("system matrix is zero", float("inf"))
        with warnings.catch_warnings():
            # exact singularity is detected below via the condition estimate
            warnings.simplefilter("ignore", LinAlgWarning)
            self._lu = lu_factor(m)
        gecon, = get_lapack_funcs(("gecon",), (m,))
        rcond, info = gecon(self._lu[0], anorm)
        if info != 0 or not np.isfinite(rcond) or rcond <= 0.0:
            raise SingularSystemError("system matrix is singular", float("inf"))
        self.cond_estimate = 1.0 / rcond
        if self.cond_estimate > COND_LIMIT:
            raise SingularSystemError(
                f"system matrix too ill-conditioned "
                f"(cond ~ {self.cond_estimate:.3e})", self.cond_estimate
            )
        self._m = m

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = lu_solve(self._lu, rhs)
        # one step of iterative refinement keeps residuals at roundoff level
        # even when cond approaches the guard
        x += lu_solve(self._lu, rhs - self._m @ x)
        return x


def solve_dense(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """One-shot guarded LU solve; see DenseFactor."""
    return DenseFactor(m).solve(rhs)


def solve_steady_state(a: ToeplitzOperator, n: ShiftOperator,
                       u: HarmonicVector) -> HarmonicVector:
    """Periodic steady state of dx/dt = A(t)x + u(t): X = -(A - N)^{-1} U."""
    if not (a.order == n.order == u.order and a.dim == n.dim == u.dim):
        raise ValueError("operator/vector shapes disagree")
    m = a.matrix - n.matrix
    x = solve_dense(m, -u.data)
    return HarmonicVector(a.order, a.dim, x)


def solve_perturbation(a: ToeplitzOperator, n_p: ShiftOperator,
                       u_p: HarmonicVector,
                       b: ToeplitzOperator | None = None) -> HarmonicVector:
    """Modulated-periodic response at offset frequency omega_p.

    Solves X_p = -(A - N_p)^{-1} (B U_p), with B = identity when omitted.
    N_p must carry the perturbation offset in omega_off.
    """
    if not (a.order == n_p.order == u_p.order and a.dim == n_p.dim == u_p.dim):
        raise ValueError("operator/vector shapes disagree")
    rhs = u_p.data if b is None else b.matrix @ u_p.data
    x = solve_dense(a.matrix - n_p.matrix, -rhs)
    return HarmonicVector(a.order, a.dim, x)


def reconstruct_time(coeffs: HarmonicCoeffs, t) -> np.ndarray:
    """Evaluate sum_k X_k exp(j k omega1 t). Complex; real signals have
    imaginary residue at roundoff level."""
    t = np.asarray(t, dtype=float)
    ks = np.arange(-coeffs.order, coeffs.order + 1)
    phases = np.exp(1j * coeffs.omega1 * np.outer(t, ks))
    out = phases @ coeffs.coeffs
    return out if out.ndim else complex(out)
