"""Real orthonormal spectral basis of bigraded spherical harmonics on S^3.

Real basis vectors are labeled (p, q, m) exactly like the complex harmonics
they combine: for p > q the labels (p, q, m) and (q, p, p+q-m) carry the real
and imaginary combinations of the weight-m harmonic of H_{p,q}; for p = q the
middle mode (m = p) is already real.  Labels are ordered by (p+q, p, m), so
the first sum_{k<=n'}(k+1)^2 modes of any listing form the degree-n' prefix.

Construction: exact flat-harmonic kernels restricted to the sphere, then
Gram-Schmidt (via Cholesky of the per-group Gram matrix) under the quadrature
inner product.  Distinct torus weights make the Gram essentially diagonal;
the factorization failing positive-definiteness signals quadrature
inexactness, a wrong kernel dimension a polynomial-algebra bug.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular, LinAlgError

from .polynomials import Poly, harmonic_basis
from .quadrature import QuadratureGrid


class BasisError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class HarmonicMode:
    """Bigraded harmonic label; m indexes the torus weight j1 = m - q."""

    p: int
    q: int
    m: int

    @property
    def degree(self) -> int:
        return self.p + self.q

    @property
    def is_kernel(self) -> bool:
        # CR pluriharmonic modes: annihilated by the Paneitz operator.
        return self.p == 0 or self.q == 0


def list_modes(n: int) -> list[HarmonicMode]:
    modes = [
        HarmonicMode(p, q, m)
        for deg in range(n + 1)
        for p in range(deg + 1)
        for q in [deg - p]
        for m in range(deg + 1)
    ]
    return sorted(modes, key=lambda md: (md.degree, md.p, md.m))


def mode_count(n: int) -> int:
    return sum((k + 1) ** 2 for k in range(n + 1))


@dataclass
class SpectralField:
    """Coefficient vector in the real orthonormal basis, truncated at n."""

    n: int
    coeffs: np.ndarray

    def copy(self) -> "SpectralField":
        return SpectralField(self.n, self.coeffs.copy())


@dataclass
class ModeGroup:
    """Conjugate-closed block: real span of H_{p,q} + H_{q,p} with p >= q."""

    p: int
    q: int
    labels: list[HarmonicMode]
    raw_polys: list[Poly]
    transform: np.ndarray = field(default=None)  # raw -> orthonormal mixing
    cols: np.ndarray = field(default=None)       # global column indices


def _group_raw_polys(p: int, q: int) -> list[tuple[HarmonicMode, Poly]]:
    """Real-valued raw polynomials for every label of the (p,q) group."""
    complex_modes = harmonic_basis(p, q)
    if len(complex_modes) != p + q + 1:
        raise BasisError(f"kernel of H_{{{p},{q}}} has wrong dimension")
    pairs: list[tuple[HarmonicMode, Poly]] = []
    if p > q:
        for m, g in enumerate(complex_modes):
            gc = g.conj()
            pairs.append((HarmonicMode(p, q, m), g + gc))
            pairs.append((HarmonicMode(q, p, p + q - m), (g - gc).scale(0, -1)))
    else:
        for m in range(p):
            g = complex_modes[m]
            gc = g.conj()
            pairs.append((HarmonicMode(p, p, m), g + gc))
            pairs.append((HarmonicMode(p, p, 2 * p - m), (g - gc).scale(0, -1)))
        mid = complex_modes[p]
        if mid.conj() != mid:
            raise BasisError(f"weight-zero harmonic of H_{{{p},{p}}} is not real")
        pairs.append((HarmonicMode(p, p, p), mid))
    pairs.sort(key=lambda lp: (lp[0].degree, lp[0].p, lp[0].m))
    return pairs


def _real_values(grid: QuadratureGrid, polys: list[Poly]) -> np.ndarray:
    vals = np.empty((grid.node_count, len(polys)))
    for j, poly in enumerate(polys):
        v = grid.eval_poly(poly)
        if np.max(np.abs(v.imag)) > 1e-10 * max(1.0, np.max(np.abs(v.real))):
            raise BasisError("real combination evaluated to a complex field")
        vals[:, j] = v.real
    return vals


class SpectralBasis:
    """Orthonormal basis with dense synthesize/analyze maps on a grid."""

    def __init__(self, n: int, grid: QuadratureGrid):
        if grid.exact_degree < 2 * n:
            raise BasisError(
                f"grid exact degree {grid.exact_degree} < 2n = {2 * n}"
            )
        self.n = n
        self.grid = grid
        self.modes = list_modes(n)
        self.index = {md: i for i, md in enumerate(self.modes)}
        self.size = len(self.modes)

        p_arr = np.array([md.p for md in self.modes])
        q_arr = np.array([md.q for md in self.modes])
        self.p = p_arr
        self.q = q_arr
        self.m = np.array([md.m for md in self.modes])
        # Sub-Laplacian and Paneitz eigenvalues in this normalization.
        self.nu = 2 * p_arr * q_arr + p_arr + q_arr
        self.mu = 4 * p_arr * q_arr * (p_arr + 1) * (q_arr + 1)
        self.kernel_mask = (p_arr == 0) | (q_arr == 0)

        self.groups: list[ModeGroup] = []
        for deg in range(n + 1):
            for p in range((deg + 1) // 2, deg + 1):
                q = deg - p
                pairs = _group_raw_polys(p, q)
                self.groups.append(
                    ModeGroup(
                        p,
                        q,
                        [lab for lab, _ in pairs],
                        [poly for _, poly in pairs],
                    )
                )

        self.synthesize_matrix = np.empty((grid.node_count, self.size))
        w = grid.weights
        for group in self.groups:
            group.cols = np.array([self.index[lab] for lab in group.labels])
            raw = _real_values(grid, group.raw_polys)
            gram = raw.T @ (w[:, None] * raw)
            gram = 0.5 * (gram + gram.T)
            try:
                low = cholesky(gram, lower=True)
            except LinAlgError as exc:
                raise BasisError(
                    f"Gram matrix of group ({group.p},{group.q}) is not "
                    "positive definite; quadrature is inexact"
                ) from exc
            inv_low = solve_triangular(low, np.eye(low.shape[0]), lower=True)
            group.transform = inv_low.T
            self.synthesize_matrix[:, group.cols] = raw @ group.transform
        self.analyze_matrix = self.synthesize_matrix.T * w[None, :]

        resid = self.analyze_matrix @ self.synthesize_matrix - np.eye(self.size)
        if np.max(np.abs(resid)) > 1e-10:
            raise BasisError("analyze o synthesize differs from the identity")

    def values_on(self, grid: QuadratureGrid) -> np.ndarray:
        """Orthonormal basis values on another exactness-compatible grid."""
        if grid.exact_degree < 2 * self.n:
            raise BasisError("target grid cannot integrate basis products")
        out = np.empty((grid.node_count, self.size))
        for group in self.groups:
            raw = _real_values(grid, group.raw_polys)
            out[:, group.cols] = raw @ group.transform
        return out

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.synthesize_matrix @ coeffs

    def analyze(self, values: np.ndarray) -> np.ndarray:
        return self.analyze_matrix @ values

    def field(self, coeffs: np.ndarray) -> SpectralField:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.size,):
            raise ValueError("coefficient vector has wrong length")
        return SpectralField(self.n, coeffs)

    def zero_field(self) -> SpectralField:
        return SpectralField(self.n, np.zeros(self.size))

    def unit_field(self, p: int, q: int, m: int, amplitude: float = 1.0) -> SpectralField:
        coeffs = np.zeros(self.size)
        coeffs[self.index[HarmonicMode(p, q, m)]] = amplitude
        return SpectralField(self.n, coeffs)


def build_basis(n: int, grid: QuadratureGrid) -> SpectralBasis:
    return SpectralBasis(n, grid)


def fs_norm(field: SpectralField, k: int, nu: np.ndarray | None = None) -> float:
    """Equivalent Folland-Stein S^{k,2} norm, (sum (1+nu)^k c^2)^(1/2).

    This is the spectral norm equivalent to summing horizontal derivatives up
    to order k, not the literal vector-field sum; nu is the sub-Laplacian
    eigenvalue 2pq+p+q per mode (recomputed from the labels when omitted).
    """
    if k < 0 or k % 2 != 0:
        raise ValueError(f"Folland-Stein order must be even and >= 0, got {k}")
    if nu is None:
        modes = list_modes(field.n)
        nu = np.array([2 * md.p * md.q + md.p + md.q for md in modes])
    if nu.shape != field.coeffs.shape:
        raise ValueError("eigenvalue table does not match the coefficients")
    return float(np.sqrt(np.sum((1.0 + nu) ** k * field.coeffs**2)))
