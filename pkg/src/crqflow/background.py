"""Conformal backgrounds theta_0 = e^{2w} theta_std and their Q-curvature.

The background volume form is dmu_0 = e^{4w} dmu_std, so every dmu_0 inner
product is the weighted mass matrix M_w = int phi_i phi_j e^{4w} dmu_std.
With Q_std = 0 the transformation law Q = e^{-4 lambda}(Q_0 + 2 P_0 lambda)
specializes to

    Q_0   = weighted analysis of e^{-4w} (2 P_std w)   ->  M_w^{-1} (2 P w)
    P_0 f = weighted analysis of e^{-4w} (P_std f)     ->  M_w^{-1} (P f),

i.e. products with e^{-4w} are projected back to degree n in the dmu_0 sense.
That choice makes the covariance exact at the discrete level: P_0 is
self-adjoint in the weighted inner product, <Q_0, k>_{dmu_0} = 2 int (P_std
w) k dmu_std vanishes for every CR pluriharmonic k, and stationary states
satisfy P_std(lambda + w) = 0 identically.

CR pluriharmonicity does not depend on the contact form, so the kernel basis
is the fixed label set {p = 0 or q = 0}; only its Gram matrix under M_w
changes with w.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular, LinAlgError

from .basis import SpectralField
from .model import SphereModel

_REL_EPS = 1e-30


class BackgroundError(RuntimeError):
    pass


class ConformalBackground:
    """Immutable conformal background with cached factorizations."""

    def __init__(self, w: SpectralField, model: SphereModel):
        if w.n != model.n:
            raise ValueError("conformal exponent truncated at a different degree")
        self.model = model
        self.w = w

        grid = model.grid
        w_grid = model.synthesize(w)
        self.e4w = np.exp(4.0 * w_grid)
        self.em4w = np.exp(-4.0 * w_grid)
        self.V0 = float(grid.weights @ self.e4w)

        B = model.values
        self.mass = B.T @ ((grid.weights * self.e4w)[:, None] * B)
        self.mass = 0.5 * (self.mass + self.mass.T)
        try:
            self._mass_chol = cho_factor(self.mass, lower=True)
        except LinAlgError as exc:
            raise BackgroundError(
                "weighted mass matrix is not positive definite; raise the "
                "truncation degree or the oversample factor"
            ) from exc

        kidx = model.kernel_idx
        self.kernel_idx = kidx
        self.kernel_gram = self.mass[np.ix_(kidx, kidx)]
        try:
            self._kernel_chol = cho_factor(self.kernel_gram, lower=True)
        except LinAlgError as exc:
            raise BackgroundError("kernel Gram matrix singular") from exc

        P = model.ops.paneitz.matrix
        self._paneitz = P
        self._pw = P @ w.coeffs  # P_std w, reused by the energy form
        self.Q0 = SpectralField(model.n, 2.0 * self.mass_solve(self._pw))
        q0_ker, q0_perp = self.decompose(self.Q0)
        self.q0_ker = q0_ker
        self.q0_perp = q0_perp

        self._perp_system: tuple[np.ndarray, np.ndarray] | None = None
        self._imex_cache: dict[float, tuple] = {}

    # -- weighted linear algebra -------------------------------------------

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._mass_chol, rhs)

    def weighted_dot(self, f: np.ndarray, g: np.ndarray) -> float:
        """dmu_0 inner product of two coefficient vectors."""
        return float(f @ (self.mass @ g))

    def paneitz_apply(self, phi: SpectralField) -> SpectralField:
        """P_0 phi: weighted analysis of e^{-4w} (P_std phi)."""
        return SpectralField(
            self.model.n, self.mass_solve(self._paneitz @ phi.coeffs)
        )

    def paneitz_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        return self.mass_solve(self._paneitz @ coeffs)

    def decompose(self, f: SpectralField) -> tuple[SpectralField, SpectralField]:
        """dmu_0-orthogonal splitting onto the CR pluriharmonic span.

        Solves kernel_gram c = (kernel basis, f)_{dmu_0}; the perp part is
        dmu_0-orthogonal to every kernel element by construction.
        """
        rhs = (self.mass @ f.coeffs)[self.kernel_idx]
        c = cho_solve(self._kernel_chol, rhs)
        ker = np.zeros_like(f.coeffs)
        ker[self.kernel_idx] = c
        return (
            SpectralField(self.model.n, ker),
            SpectralField(self.model.n, f.coeffs - ker),
        )

    # -- curvature, energy, diagnostics ------------------------------------

    def q_of(self, lam: SpectralField) -> np.ndarray:
        """Pointwise Q-curvature of e^{2 lambda} theta_0 on the grid."""
        total = self.Q0.coeffs + 2.0 * self.paneitz_coeffs(lam.coeffs)
        lam_grid = self.model.synthesize(lam)
        return np.exp(-4.0 * lam_grid) * (self.model.values @ total)

    def energy(self, lam: SpectralField) -> float:
        """Conformal energy <P_0 lam, lam>_{dmu_0} + <Q_0, lam>_{dmu_0}.

        Both terms collapse to unweighted P_std forms: lam'P lam + 2 w'P lam.
        """
        c = lam.coeffs
        return float(c @ (self._paneitz @ c) + 2.0 * (self._pw @ c))

    def gradient(self, lam: SpectralField) -> np.ndarray:
        """Coefficients of Q_0^perp + 2 P_0 lambda (the flow's driving term)."""
        return self.q0_perp.coeffs + 2.0 * self.paneitz_coeffs(lam.coeffs)

    def grad_norm_sq(self, lam: SpectralField) -> float:
        g = self.gradient(lam)
        return self.weighted_dot(g, g)

    def check_kernel_vanishing(self) -> float:
        """Largest normalized pairing of Q_0 against the kernel basis.

        For conformal deformations of the sphere this vanishes identically:
        <Q_0, k>_{dmu_0} = 2 int (P_std w) k dmu_std = 2 int w P_std k = 0.
        The epsilon in the denominator is the roundoff floor of the Q_0
        assembly (|P|_F |w| eps-scale), so a pluriharmonic w, whose Q_0 is
        identically zero, reports ~0 instead of roundoff divided by roundoff.
        """
        q0 = self.Q0.coeffs
        mq0 = self.mass @ q0
        q0_norm = np.sqrt(max(float(q0 @ mq0), 0.0))
        eps = 1e-6 * float(np.linalg.norm(self._paneitz)) * float(
            np.linalg.norm(self.w.coeffs)
        ) + _REL_EPS
        worst = 0.0
        for col in self.kernel_idx:
            k_norm = np.sqrt(self.mass[col, col])
            pairing = abs(mq0[col])
            worst = max(worst, pairing / (q0_norm * k_norm + eps))
        return worst

    def perp_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigensystem of P_0 on the dmu_0-orthocomplement of the kernel.

        Returns (mu, U) with P U = M_w U diag(mu) and U' M_w U = I; mu are
        the generalized eigenvalues of the (P_std form, mass) pencil on the
        perp space, all strictly positive (essential positivity).
        """
        if self._perp_system is None:
            pidx = self.model.perp_idx
            n = self.model.size
            if pidx.size == 0:
                self._perp_system = (np.empty(0), np.empty((n, 0)))
                return self._perp_system
            raw = np.zeros((n, pidx.size))
            raw[pidx, np.arange(pidx.size)] = 1.0
            coupling = self.mass[np.ix_(self.kernel_idx, pidx)]
            raw[self.kernel_idx, :] -= cho_solve(self._kernel_chol, coupling)
            gram = raw.T @ (self.mass @ raw)
            gram = 0.5 * (gram + gram.T)
            low = cholesky(gram, lower=True)
            ortho = raw @ solve_triangular(low, np.eye(low.shape[0]), lower=True).T
            form = ortho.T @ (self._paneitz @ ortho)
            form = 0.5 * (form + form.T)
            mu, vecs = np.linalg.eigh(form)
            if mu[0] <= 0.0:
                raise BackgroundError(
                    f"Paneitz form not positive on the perp space (min {mu[0]:.3e})"
                )
            self._perp_system = (mu, ortho @ vecs)
        return self._perp_system

    def upsilon(self) -> float:
        """Essential-positivity constant: smallest perp eigenvalue of P_0."""
        mu, _ = self.perp_system()
        if mu.size == 0:
            raise BackgroundError("perp space is empty at this truncation")
        return float(mu[0])


def make_background(w: SpectralField, model: SphereModel) -> ConformalBackground:
    return ConformalBackground(w, model)


def random_field(
    model: SphereModel, seed: int, degree: int, amplitude: float
) -> SpectralField:
    """Seeded random field of the given degree, rescaled to sup-norm amplitude.

    Coefficients are drawn U(-1, 1) for every mode with 1 <= p+q <= degree
    (the constant is left out so volumes stay of order 4 pi^2); the sup-norm
    rescaling keeps cond(mass_w) <= e^{8 amplitude}.
    """
    if degree < 1 or degree > model.n:
        raise ValueError(f"random-field degree must lie in [1, {model.n}]")
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(model.size)
    degs = model.basis.p + model.basis.q
    active = (degs >= 1) & (degs <= degree)
    coeffs[active] = rng.uniform(-1.0, 1.0, int(np.sum(active)))
    if amplitude == 0.0:
        return SpectralField(model.n, np.zeros(model.size))
    sup = float(np.max(np.abs(model.values @ coeffs)))
    if sup > 0.0:
        coeffs *= amplitude / sup
    return SpectralField(model.n, coeffs)
