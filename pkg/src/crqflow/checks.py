"""Aggregated invariant suite behind the `check` CLI command.

Runs every oracle the modules promise at a chosen truncation: transform
identities, operator symmetry/positivity, the closed-form spectra, kernel
characterization, the kernel-vanishing theorem on random conformal
backgrounds, essential positivity and the subelliptic trend.  The `corrupt`
argument is a fault-injection hook for tests: it perturbs a copy of the
assembled Paneitz matrix so the self-adjointness check must fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import make_background, random_field
from .diagnostics import subelliptic_constant
from .model import SphereModel, get_model
from .operators import spectrum_table


@dataclass
class CheckResult:
    name: str
    passed: bool | None      # None when not applicable at this truncation
    value: float | None
    threshold: float | None
    note: str = ""

    @property
    def applicable(self) -> bool:
        return self.passed is not None


def _offblock_max(matrix: np.ndarray, blocks: list[np.ndarray]) -> float:
    masked = np.abs(np.asarray(matrix, dtype=complex))
    for cols in blocks:
        masked[np.ix_(cols, cols)] = 0.0
    return float(np.max(masked))


def run_checks(n: int, oversample: float = 1.0, corrupt: str | None = None) -> list[CheckResult]:
    model: SphereModel = get_model(n, oversample)
    results: list[CheckResult] = []

    paneitz = model.ops.paneitz.matrix.copy()
    paneitz_defect = model.ops.asym_paneitz
    if corrupt == "paneitz-asymmetry":
        paneitz[0, 1] += 1e-3
        paneitz_defect = float(np.max(np.abs(paneitz - paneitz.T)))
    elif corrupt is not None:
        raise ValueError(f"unknown corruption hook {corrupt!r}")

    gram = model.analyze_matrix @ model.values
    val = float(np.max(np.abs(gram - np.eye(model.size))))
    results.append(CheckResult("basis_orthonormality", val <= 1e-10, val, 1e-10,
                               "Gram matrix against the identity"))

    rng = np.random.default_rng(0)
    coeffs = rng.standard_normal(model.size)
    values = model.synthesize(coeffs)
    round_trip = float(np.max(np.abs(model.analyze(values).coeffs - coeffs)))
    results.append(CheckResult("transform_round_trip", round_trip <= 1e-9,
                               round_trip, 1e-9, "analyze(synthesize(f)) = f"))

    parseval = abs(model.grid.integrate(values**2) - float(coeffs @ coeffs))
    parseval /= float(coeffs @ coeffs)
    results.append(CheckResult("parseval", parseval <= 1e-9, parseval, 1e-9,
                               "int f^2 dmu vs sum of squared coefficients"))

    results.append(CheckResult("sublaplacian_symmetry", model.ops.asym_lap <= 1e-10,
                               model.ops.asym_lap, 1e-10))
    results.append(CheckResult("paneitz_self_adjoint", paneitz_defect <= 1e-10,
                               paneitz_defect, 1e-10,
                               "<P e_i, e_j> = <e_i, P e_j>"))

    eigs = np.linalg.eigvalsh(0.5 * (paneitz + paneitz.T))
    results.append(CheckResult("paneitz_nonnegative", float(eigs[0]) >= -1e-9,
                               float(eigs[0]), -1e-9, "smallest eigenvalue"))

    n_kernel = int(np.sum(model.basis.kernel_mask))
    numeric_kernel = int(np.sum(eigs < 1e-8))
    column_max = float(np.max(np.abs(paneitz[:, model.kernel_idx]))) if n_kernel else 0.0
    kernel_ok = numeric_kernel == n_kernel and column_max <= 1e-10
    results.append(CheckResult("paneitz_kernel_is_pluriharmonic", kernel_ok,
                               column_max, 1e-10,
                               f"{numeric_kernel} numeric vs {n_kernel} labeled modes"))

    worst = 0.0
    for row in spectrum_table(model.basis, model.ops):
        nu = 2 * row.p * row.q + row.p + row.q
        mu = 4 * row.p * row.q * (row.p + 1) * (row.q + 1)
        box = 2 * row.q * (row.p + 1)
        boxbar = 2 * row.p * (row.q + 1)
        for got, want in ((row.minus_lap, nu), (row.box, box),
                          (row.box_bar, boxbar), (row.paneitz, mu)):
            worst = max(worst, abs(got - want) / max(abs(want), 1.0))
    results.append(CheckResult("spectral_closed_forms", worst <= 1e-8, worst, 1e-8,
                               "assembled eigenvalues vs 2q(p+1) etc."))

    off = max(
        _offblock_max(model.ops.minus_lap, model.ops.blocks),
        _offblock_max(paneitz, model.ops.blocks),
        _offblock_max(model.ops.box.matrix + model.ops.box_bar.matrix,
                      model.ops.blocks),
    )
    results.append(CheckResult("block_diagonality", off <= 1e-10, off, 1e-10,
                               "off-(p,q)-block entries"))

    if n >= 2:
        worst_resid = 0.0
        worst_selfadj = 0.0
        for seed in (11, 12, 13):
            w = random_field(model, seed, max(1, n // 2), 0.3)
            bg = make_background(w, model)
            worst_resid = max(worst_resid, bg.check_kernel_vanishing())
            rng = np.random.default_rng(seed + 100)
            phi = model.field(rng.standard_normal(model.size))
            psi = model.field(rng.standard_normal(model.size))
            lhs = bg.weighted_dot(bg.paneitz_apply(phi).coeffs, psi.coeffs)
            rhs = bg.weighted_dot(phi.coeffs, bg.paneitz_apply(psi).coeffs)
            worst_selfadj = max(worst_selfadj,
                                abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
        results.append(CheckResult("q0_kernel_vanishing", worst_resid <= 1e-8,
                                   worst_resid, 1e-8,
                                   "random conformal backgrounds"))
        results.append(CheckResult("weighted_self_adjointness",
                                   worst_selfadj <= 1e-9, worst_selfadj, 1e-9,
                                   "P_0 in the dmu_0 inner product"))
        bg_flat = make_background(model.zero_field(), model)
        upsilon = bg_flat.upsilon()
        results.append(CheckResult("essential_positivity", abs(upsilon - 16.0) <= 1e-8,
                                   upsilon, 16.0, "flat-background Upsilon"))
    else:
        results.append(CheckResult("q0_kernel_vanishing", None, None, None,
                                   "not applicable: perp space empty at n = 1"))
        results.append(CheckResult("weighted_self_adjointness", None, None, None,
                                   "not applicable at n = 1"))
        results.append(CheckResult("essential_positivity", None, None, None,
                                   "not applicable: perp space empty at n = 1"))

    if n >= 3:
        trend_ns = [k for k in range(2, n + 1)]
        est = subelliptic_constant(0, trend_ns)
        results.append(CheckResult("subelliptic_trend", est.stable_flag,
                                   est.value, None,
                                   f"C_0 over n in {trend_ns}"))
    else:
        results.append(CheckResult("subelliptic_trend", None, None, None,
                                   "needs at least two truncations"))
    return results
