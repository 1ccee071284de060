"""Bundled spectral setup: grid, basis and assembled operators for one (n, oversample)."""

from __future__ import annotations

import numpy as np

from .basis import SpectralBasis, SpectralField, build_basis, fs_norm, list_modes
from .operators import Operators, assemble_operators
from .quadrature import QuadratureGrid, build_grid


class SphereModel:
    """Immutable spectral context shared by backgrounds and flow runs.

    The orthonormalization and the operator assembly always use the reference
    (oversample 1.0) grid, whose quadrature is already exact for polynomial
    integrands; the main grid carries the oversampling used for non-polynomial
    work such as e^{4 lambda}.  Both grids integrate basis products exactly, so
    the basis is orthonormal under either.
    """

    def __init__(self, n: int, oversample: float = 1.0):
        self.n = n
        self.oversample = float(oversample)
        self.grid: QuadratureGrid = build_grid(n, oversample)
        if self.oversample == 1.0:
            self.assembly_grid = self.grid
        else:
            self.assembly_grid = build_grid(n, 1.0)
        self.basis: SpectralBasis = build_basis(n, self.assembly_grid)
        self.ops: Operators = assemble_operators(self.basis, self.assembly_grid)
        if self.grid is self.assembly_grid:
            self.values = self.basis.synthesize_matrix
        else:
            self.values = self.basis.values_on(self.grid)
        self.analyze_matrix = self.values.T * self.grid.weights[None, :]

        self.modes = self.basis.modes
        self.size = self.basis.size
        self.nu = self.basis.nu
        self.mu = self.basis.mu
        self.kernel_idx = np.flatnonzero(self.basis.kernel_mask)
        self.perp_idx = np.flatnonzero(~self.basis.kernel_mask)
        # Coefficient vector of the constant function 1 (norm 2*pi mode).
        self.one_coeffs = np.zeros(self.size)
        self.one_coeffs[0] = 2.0 * np.pi

    def synthesize(self, field: SpectralField | np.ndarray) -> np.ndarray:
        coeffs = field.coeffs if isinstance(field, SpectralField) else field
        return self.values @ coeffs

    def analyze(self, values: np.ndarray) -> SpectralField:
        return SpectralField(self.n, self.analyze_matrix @ values)

    def field(self, coeffs) -> SpectralField:
        return self.basis.field(coeffs)

    def zero_field(self) -> SpectralField:
        return self.basis.zero_field()

    def unit_field(self, p: int, q: int, m: int, amplitude: float = 1.0) -> SpectralField:
        return self.basis.unit_field(p, q, m, amplitude)

    def mode11_field(self, amplitude: float) -> SpectralField:
        """amplitude times the normalized middle (1,1) mode (the cos(2 theta) direction)."""
        return self.unit_field(1, 1, 1, amplitude)

    def fs_norm(self, field: SpectralField, k: int) -> float:
        return fs_norm(field, k, self.nu)

    def embed(self, field: SpectralField) -> SpectralField:
        """Re-truncate a field built at another degree into this model."""
        if field.n == self.n:
            return field
        src_modes = list_modes(field.n)
        out = np.zeros(self.size)
        for coeff, md in zip(field.coeffs, src_modes):
            if md.degree <= self.n and coeff != 0.0:
                out[self.basis.index[md]] = coeff
        if field.n > self.n:
            dropped = [
                md for c, md in zip(field.coeffs, src_modes)
                if md.degree > self.n and c != 0.0
            ]
            if dropped:
                raise ValueError(
                    f"field has nonzero coefficients above degree {self.n}"
                )
        return SpectralField(self.n, out)


_MODEL_CACHE: dict[tuple[int, float], SphereModel] = {}


def get_model(n: int, oversample: float = 1.0) -> SphereModel:
    key = (n, float(oversample))
    model = _MODEL_CACHE.get(key)
    if model is None:
        model = SphereModel(n, oversample)
        _MODEL_CACHE[key] = model
    return model
