"""Exact polynomial calculus on C^2 for the round-sphere CR frame.

Polynomials live in the four commuting variables (z1, z2, z1bar, z2bar) with
Gaussian-rational coefficients, so the frame fields

    Z1   = z2bar d/dz1 - z1bar d/dz2
    Z1b  = z2   d/dz1bar - z1 d/dz2bar
    T    = i (z1 d/dz1 + z2 d/dz2 - z1bar d/dz1bar - z2bar d/dz2bar)

act without floating-point error.  The bigraded harmonic spaces H_{p,q}
(kernel of the flat Laplacian on bidegree-(p,q) polynomials) are produced by
a one-dimensional torus-weight recurrence; each weight slot carries exactly
one harmonic, giving dim H_{p,q} = p+q+1.
"""

from __future__ import annotations

from fractions import Fraction

# A monomial is the exponent tuple (a, b, c, d) of z1^a z2^b z1bar^c z2bar^d.
Monomial = tuple[int, int, int, int]
# Coefficients are Gaussian rationals (real part, imaginary part).
Coeff = tuple[Fraction, Fraction]

_VARS = ("z1", "z2", "z1bar", "z2bar")
_ZERO = Fraction(0)


class Poly:
    """Sparse polynomial with exact complex-rational coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict[Monomial, Coeff] | None = None):
        self.terms: dict[Monomial, Coeff] = {}
        if terms:
            for mono, (re, im) in terms.items():
                if re or im:
                    self.terms[mono] = (Fraction(re), Fraction(im))

    @classmethod
    def monomial(cls, a: int, b: int, c: int, d: int, re=1, im=0) -> "Poly":
        return cls({(a, b, c, d): (Fraction(re), Fraction(im))})

    @classmethod
    def zero(cls) -> "Poly":
        return cls()

    def is_zero(self) -> bool:
        return not self.terms

    def __add__(self, other: "Poly") -> "Poly":
        out = dict(self.terms)
        for mono, (re, im) in other.terms.items():
            ore, oim = out.get(mono, (_ZERO, _ZERO))
            nre, nim = ore + re, oim + im
            if nre or nim:
                out[mono] = (nre, nim)
            elif mono in out:
                del out[mono]
        p = Poly.__new__(Poly)
        p.terms = out
        return p

    def __sub__(self, other: "Poly") -> "Poly":
        return self + other.scale(-1, 0)

    def scale(self, re, im=0) -> "Poly":
        """Multiply by the exact complex scalar re + i*im."""
        re, im = Fraction(re), Fraction(im)
        out = {}
        for mono, (tre, tim) in self.terms.items():
            nre = tre * re - tim * im
            nim = tre * im + tim * re
            if nre or nim:
                out[mono] = (nre, nim)
        p = Poly.__new__(Poly)
        p.terms = out
        return p

    def conj(self) -> "Poly":
        """Complex conjugate: swaps z <-> zbar and conjugates coefficients."""
        out = {}
        for (a, b, c, d), (re, im) in self.terms.items():
            out[(c, d, a, b)] = (re, -im)
        p = Poly.__new__(Poly)
        p.terms = out
        return p

    def diff(self, var: int) -> "Poly":
        """Exact partial derivative; var indexes (z1, z2, z1bar, z2bar)."""
        out = {}
        for mono, (re, im) in self.terms.items():
            k = mono[var]
            if k == 0:
                continue
            lowered = list(mono)
            lowered[var] = k - 1
            out[tuple(lowered)] = (k * re, k * im)
        p = Poly.__new__(Poly)
        p.terms = out
        return p

    def mul_var(self, var: int) -> "Poly":
        out = {}
        for mono, coeff in self.terms.items():
            raised = list(mono)
            raised[var] += 1
            out[tuple(raised)] = coeff
        p = Poly.__new__(Poly)
        p.terms = out
        return p

    def bidegrees(self) -> set[tuple[int, int]]:
        return {(a + b, c + d) for (a, b, c, d) in self.terms}

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __repr__(self) -> str:
        if not self.terms:
            return "Poly(0)"
        bits = []
        for mono in sorted(self.terms):
            re, im = self.terms[mono]
            factors = "".join(
                f"{name}^{k}" for name, k in zip(_VARS, mono) if k
            ) or "1"
            bits.append(f"({re}{'+' if im >= 0 else ''}{im}i)*{factors}")
        return "Poly(" + " + ".join(bits) + ")"


def apply_vector_field(field: str, poly: Poly) -> Poly:
    """Exact action of the frame fields on a polynomial.

    field is one of "Z1", "Z1bar", "T".  Total on polynomials; coefficients
    stay Gaussian rational.
    """
    if field == "Z1":
        return poly.diff(0).mul_var(3) - poly.diff(1).mul_var(2)
    if field == "Z1bar":
        return poly.diff(2).mul_var(1) - poly.diff(3).mul_var(0)
    if field == "T":
        euler = (
            poly.diff(0).mul_var(0)
            + poly.diff(1).mul_var(1)
            - poly.diff(2).mul_var(2)
            - poly.diff(3).mul_var(3)
        )
        return euler.scale(0, 1)
    raise ValueError(f"unknown vector field {field!r}; expected Z1, Z1bar or T")


def flat_laplacian(poly: Poly) -> Poly:
    """Flat Laplacian of C^2, 4(d2/dz1 dz1bar + d2/dz2 dz2bar)."""
    out = poly.diff(0).diff(2) + poly.diff(1).diff(3)
    return out.scale(4, 0)


def harmonic_component(p: int, q: int, j1: int) -> Poly:
    """The harmonic bidegree-(p,q) polynomial of torus weight (j1, p-q-j1).

    Monomials z1^a z2^(p-a) z1bar^(a-j1) z2bar^(q-a+j1) with a running over
    the weight slot; the kernel condition of the flat Laplacian gives the
    two-term recurrence

        (a+1)(a+1-j1) c_{a+1} + (p-a)(q-a+j1) c_a = 0,

    whose solution is unique up to scale (seeded with c = 1 at the lowest a).
    """
    if not (-q <= j1 <= p):
        raise ValueError(f"weight j1={j1} outside [-q, p] for (p,q)=({p},{q})")
    a_min = max(0, j1)
    a_max = min(p, q + j1)
    coeff = Fraction(1)
    terms: dict[Monomial, Coeff] = {}
    for a in range(a_min, a_max + 1):
        terms[(a, p - a, a - j1, q - a + j1)] = (coeff, _ZERO)
        if a < a_max:
            num = Fraction((p - a) * (q - a + j1))
            den = Fraction((a + 1) * (a + 1 - j1))
            coeff = -coeff * num / den
    return Poly(terms)


def harmonic_basis(p: int, q: int) -> list[Poly]:
    """Weight-ordered basis of H_{p,q}; entry m has weight j1 = m - q."""
    basis = [harmonic_component(p, q, m - q) for m in range(p + q + 1)]
    for g in basis:
        if not flat_laplacian(g).is_zero():
            raise AssertionError(f"harmonic recurrence failed for ({p},{q})")
    return basis
