"""Polynomial sieve bases with analytic derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

__all__ = ["SieveSpec", "PolynomialBasis", "sieve_basis", "basis_exponents"]


@dataclass(frozen=True)
class SieveSpec:
    """Configuration of the stage-2 sieve.

    Parameters
    ----------
    degree : int
        Total degree of the polynomial in the regressors.
    fixed_effects : tuple of str
        Additive sets of group dummies, one per entry. An entry names a
        label column, or several joined by ``*`` for their intersection
        (``"region*industry"``).
    time_effects : bool
        Add year dummies.
    standardize : bool
        Center and scale each regressor before expansion. The polynomial
        span is unchanged, only the conditioning improves.
    """

    degree: int = 2
    fixed_effects: tuple = ()
    time_effects: bool = False
    standardize: bool = True

    def __post_init__(self):
        if int(self.degree) < 1:
            raise ValueError("sieve degree must be at least 1")
        fe = self.fixed_effects or ()
        object.__setattr__(self, "fixed_effects", (fe,) if isinstance(fe, str) else tuple(fe))


@lru_cache(maxsize=None)
def basis_exponents(d: int, degree: int) -> np.ndarray:
    """Exponent matrix (terms x d) in graded lexicographic order, constant first.

    Within each total degree, terms follow lexicographic order of the
    variable-index multisets, so for d = 2, degree = 2 the terms are
    1, z1, z2, z1^2, z1 z2, z2^2.
    """
    rows = [np.zeros(d, dtype=np.int64)]
    for total in range(1, degree + 1):
        for combo in combinations_with_replacement(range(d), total):
            e = np.zeros(d, dtype=np.int64)
            for j in combo:
                e[j] += 1
            rows.append(e)
    out = np.array(rows)
    out.setflags(write=False)
    return out


def sieve_basis(z, degree: int) -> np.ndarray:
    """Evaluate the full polynomial basis of total degree <= ``degree``.

    ``z`` may be a single point (length d) or an (N, d) array.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    E = basis_exponents(Z.shape[1], int(degree))
    out = _monomials(Z, E)
    return out[0] if single else out


def _monomials(Z, E):
    N, d = Z.shape
    out = np.ones((N, len(E)))
    max_e = int(E.max()) if E.size else 0
    powers = [np.ones((N, d))]
    for _ in range(max_e):
        powers.append(powers[-1] * Z)
    for j in range(d):
        for p in range(1, max_e + 1):
            cols = E[:, j] == p
            if cols.any():
                out[:, cols] *= powers[p][:, j:j + 1]
    return out


class PolynomialBasis:
    """Polynomial basis on standardized regressors.

    ``center`` and ``scale`` are fixed at construction so that the basis is
    a deterministic function of raw z; derivatives with respect to raw z
    carry the ``1/scale`` chain-rule factor.
    """

    def __init__(self, d: int, degree: int, center=None, scale=None):
        self.d = int(d)
        self.degree = int(degree)
        self.exponents = basis_exponents(self.d, self.degree)
        self.center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)

    @classmethod
    def fitted(cls, Z, degree: int, standardize: bool = True) -> "PolynomialBasis":
        Z = np.asarray(Z, dtype=float)
        if not standardize:
            return cls(Z.shape[1], degree)
        center = Z.mean(axis=0)
        scale = Z.std(axis=0)
        # constant regressors keep unit scale; the design check will flag them
        scale = np.where(scale > 0, scale, 1.0)
        return cls(Z.shape[1], degree, center, scale)

    def __len__(self):
        return len(self.exponents)

    def _u(self, Z):
        return (np.atleast_2d(np.asarray(Z, dtype=float)) - self.center) / self.scale

    def __call__(self, Z) -> np.ndarray:
        return _monomials(self._u(Z), self.exponents)

    def derivative(self, Z, j: int) -> np.ndarray:
        """d basis / d z_j (raw scale), shape (N, terms)."""
        U = self._u(Z)
        E = self.exponents
        lowered = E.copy()
        lowered[:, j] = np.maximum(E[:, j] - 1, 0)
        out = _monomials(U, lowered) * E[:, j]
        return out / self.scale[j]

    def gradient(self, Z, gamma) -> np.ndarray:
        """(N, d) matrix of dh/dz for h = basis(z) @ gamma."""
        gamma = np.asarray(gamma, dtype=float)
        return np.column_stack([self.derivative(Z, j) @ gamma for j in range(self.d)])
