"""Exact quadrature on S^3 in Hopf coordinates.

The round contact form pulls back to cos^2(theta) dphi1 + sin^2(theta) dphi2
with z1 = cos(theta) e^{i phi1}, z2 = sin(theta) e^{i phi2}, and the volume
density of theta ^ dtheta is 2 sin(theta) cos(theta) = sin(2 theta), total
mass 4 pi^2.  Substituting t = cos(2 theta) turns the theta integral into
(1/2) * integral over [-1, 1], so Gauss-Legendre nodes in t combined with
uniform (trapezoid) grids in each phi integrate polynomial restrictions
exactly: a bidegree-D monomial z1^a z2^b z1bar^c z2bar^d needs phi
frequencies up to D and a t-polynomial of degree at most D/2.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import roots_legendre

from .polynomials import Poly

TOTAL_VOLUME = 4.0 * math.pi**2


class QuadratureGrid:
    """Tensor Hopf-coordinate grid with positive weights.

    Flattened node ordering is row-major over (t, phi1, phi2); `nodes` lists
    (theta, phi1, phi2) triples in that order.
    """

    def __init__(self, n: int, oversample: float, n_t: int, n_phi: int):
        self.n = n
        self.oversample = oversample
        t_nodes, t_weights = roots_legendre(n_t)
        self.t_nodes = t_nodes
        self.t_weights = t_weights
        self.theta = 0.5 * np.arccos(t_nodes)
        self.phi1 = 2.0 * np.pi * np.arange(n_phi) / n_phi
        self.phi2 = self.phi1.copy()
        # GL handles t-degree 2*n_t - 1 (bidegree 4*n_t - 1); trapezoid is
        # exact for phi frequencies up to n_phi - 1.
        self.exact_degree = min(4 * n_t - 1, n_phi - 1)
        w_phi = 2.0 * np.pi / n_phi
        self.weights = (
            (0.5 * t_weights)[:, None, None]
            * np.full((n_phi, 1), w_phi)[None, :, :]
            * np.full(n_phi, w_phi)[None, None, :]
        ).ravel()
        self._cos = np.cos(self.theta)
        self._sin = np.sin(self.theta)
        self._pow_cache: dict[tuple[str, int], np.ndarray] = {}
        self._phase_cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def node_count(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.theta.size, self.phi1.size, self.phi2.size)

    @property
    def nodes(self) -> np.ndarray:
        th, p1, p2 = np.meshgrid(self.theta, self.phi1, self.phi2, indexing="ij")
        return np.column_stack([th.ravel(), p1.ravel(), p2.ravel()])

    def integrate(self, values: np.ndarray) -> float:
        if values.shape != self.weights.shape:
            raise ValueError("grid-field length does not match node count")
        return float(self.weights @ values)

    def _radial_pow(self, which: str, k: int) -> np.ndarray:
        key = (which, k)
        cached = self._pow_cache.get(key)
        if cached is None:
            base = self._cos if which == "c" else self._sin
            cached = base**k
            self._pow_cache[key] = cached
        return cached

    def _phase(self, axis: int, k: int) -> np.ndarray:
        key = (axis, k)
        cached = self._phase_cache.get(key)
        if cached is None:
            phi = self.phi1 if axis == 0 else self.phi2
            cached = np.exp(1j * k * phi)
            self._phase_cache[key] = cached
        return cached

    def eval_poly(self, poly: Poly) -> np.ndarray:
        """Evaluate an exact polynomial on the grid (complex, flattened)."""
        nt, n1, n2 = self.shape
        out = np.zeros((nt, n1, n2), dtype=complex)
        for (a, b, c, d), (re, im) in poly.terms.items():
            coeff = float(re) + 1j * float(im)
            radial = self._radial_pow("c", a + c) * self._radial_pow("s", b + d)
            term = np.einsum(
                "i,j,k->ijk", radial, self._phase(0, a - c), self._phase(1, b - d)
            )
            out += coeff * term
        return out.ravel()


def build_grid(n: int, oversample: float = 1.0) -> QuadratureGrid:
    """Grid that integrates products of two degree-n basis functions exactly.

    Node counts: ceil(oversample*(n+2)) Gauss-Legendre points in t = cos(2
    theta) and ceil(oversample*(2n+3)) uniform points in each phi.
    """
    if n < 1:
        raise ValueError(f"truncation degree must be >= 1, got {n}")
    if oversample < 1:
        raise ValueError(f"oversample must be >= 1, got {oversample}")
    n_t = math.ceil(oversample * (n + 2))
    n_phi = math.ceil(oversample * (2 * n + 3))
    grid = QuadratureGrid(n, float(oversample), n_t, n_phi)
    assert grid.exact_degree >= 2 * n
    return grid
