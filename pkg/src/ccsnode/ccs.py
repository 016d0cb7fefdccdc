"""Consistency / zero-stability / convergence certification of multistep methods.

The three checks are algebraic: consistency via a(1) = 0 and a'(1) = b(1),
zero-stability via the root condition on the first characteristic
polynomial (all roots in the closed unit disc, circle roots simple), and
convergence as their conjunction (Dahlquist equivalence).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BetaOutOfRangeError, NoConvergenceError
from .lmm import (
    LinearMultistepMethod,
    Polynomial,
    char_polynomials,
    eval_poly,
    make_method,
    poly_derivative,
)

__all__ = [
    "RootCluster",
    "CcsReport",
    "NesterovStepRule",
    "poly_roots",
    "check_consistency",
    "check_zero_stability",
    "ccs_report",
    "nesterov_method",
    "example_methods",
]

# Tolerances: unit-circle band and root-cluster radius chosen so designed
# rational-coefficient methods classify deterministically.
CONSISTENCY_TOL = 1e-9
UNIT_CIRCLE_TOL = 1e-9
CLUSTER_RADIUS = 1e-7
RESIDUAL_TARGET = 1e-12
RESIDUAL_ACCEPT = 1e-10
MAX_ITER = 500


@dataclass(frozen=True)
class RootCluster:
    value: complex
    multiplicity: int
    modulus: float


@dataclass
class CcsReport:
    method_name: str
    consistent: bool
    zero_stable: bool
    convergent: bool
    a_at_1: float
    a_prime_at_1: float
    b_at_1: float
    roots: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def to_dict(self):
        return {
            "method_name": self.method_name,
            "consistent": self.consistent,
            "zero_stable": self.zero_stable,
            "convergent": self.convergent,
            "a_at_1": self.a_at_1,
            "a_prime_at_1": self.a_prime_at_1,
            "b_at_1": self.b_at_1,
            "roots": [
                {
                    "re": r.value.real,
                    "im": r.value.imag,
                    "multiplicity": r.multiplicity,
                    "modulus": r.modulus,
                }
                for r in self.roots
            ],
            "violations": list(self.violations),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def poly_roots(p: Polynomial) -> list[RootCluster]:
    """All complex roots of p via Durand-Kerner simultaneous iteration.

    Roots within CLUSTER_RADIUS of each other are merged into one
    cluster with summed multiplicity.  Raises NoConvergenceError if the
    residual target is not met within the iteration cap.
    """
    coeffs = np.trim_zeros(np.asarray(p.coeffs, dtype=complex), "b")
    n = len(coeffs) - 1
    if n < 1:
        raise NoConvergenceError("degree must be >= 1")
    monic = coeffs / coeffs[-1]

    def pval(z):
        acc = np.full_like(z, monic[-1])
        for c in monic[-2::-1]:
            acc = acc * z + c
        return acc

    # standard non-real, non-unit-modulus starting points
    z = (0.4 + 0.9j) ** np.arange(1, n + 1)
    for _ in range(MAX_ITER):
        pz = pval(z)
        delta = np.empty_like(z)
        for i in range(n):
            diff = z[i] - np.delete(z, i)
            delta[i] = pz[i] / np.prod(diff)
        z = z - delta
        if np.max(np.abs(delta)) < RESIDUAL_TARGET:
            break
    # p(z) scales like |z|^n near large roots, so judge the residual
    # relative to that scale rather than absolutely
    scale = max(1.0, float(np.max(np.abs(z)))) ** n
    if np.max(np.abs(pval(z))) > RESIDUAL_ACCEPT * scale:
        raise NoConvergenceError(
            f"root iteration residual {np.max(np.abs(pval(z))):.3e} above target"
        )

    clusters: list[list[complex]] = []
    for r in sorted(z, key=lambda c: (c.real, c.imag)):
        for cl in clusters:
            if abs(r - cl[0]) <= CLUSTER_RADIUS:
                cl.append(r)
                break
        else:
            clusters.append([r])
    out = []
    for cl in clusters:
        v = complex(np.mean(cl))
        out.append(RootCluster(value=v, multiplicity=len(cl), modulus=abs(v)))
    return out


def check_consistency(m: LinearMultistepMethod):
    """Return (consistent, a(1), a'(1), b(1)).

    b(1) is the plain coefficient sum of b, so implicit tail
    coefficients participate (needed to classify paper Example 1).
    """
    p, _ = char_polynomials(m)
    a1 = float(np.real(eval_poly(p, 1.0)))
    ap1 = float(np.real(eval_poly(poly_derivative(p), 1.0)))
    b1 = float(np.sum(m.b))
    ok = abs(a1) <= CONSISTENCY_TOL and abs(ap1 - b1) <= CONSISTENCY_TOL
    return ok, a1, ap1, b1


def check_zero_stability(m: LinearMultistepMethod):
    """Root condition: return (zero_stable, root clusters of P)."""
    p, _ = char_polynomials(m)
    roots = poly_roots(p)
    ok = True
    for r in roots:
        if r.modulus > 1.0 + UNIT_CIRCLE_TOL:
            ok = False
        elif abs(r.modulus - 1.0) <= UNIT_CIRCLE_TOL and r.multiplicity > 1:
            ok = False
    return ok, roots


def ccs_report(m: LinearMultistepMethod) -> CcsReport:
    """Full certification; convergent iff consistent and zero-stable."""
    consistent, a1, ap1, b1 = check_consistency(m)
    zero_stable, roots = check_zero_stability(m)
    violations = []
    if abs(a1) > CONSISTENCY_TOL:
        violations.append("consistency: a(1) != 0")
    if abs(ap1 - b1) > CONSISTENCY_TOL:
        violations.append("consistency: a'(1) != b(1)")
    for r in roots:
        if r.modulus > 1.0 + UNIT_CIRCLE_TOL:
            violations.append(
                f"zero-stability: root {r.value:.6g} has modulus {r.modulus:.6g} > 1"
            )
        elif abs(r.modulus - 1.0) <= UNIT_CIRCLE_TOL and r.multiplicity > 1:
            violations.append(
                f"zero-stability: unit-circle root {r.value:.6g} has multiplicity {r.multiplicity}"
            )
    return CcsReport(
        method_name=m.name,
        consistent=consistent,
        zero_stable=zero_stable,
        convergent=consistent and zero_stable,
        a_at_1=a1,
        a_prime_at_1=ap1,
        b_at_1=b1,
        roots=roots,
        violations=violations,
    )


@dataclass(frozen=True)
class NesterovStepRule:
    """Step-size rule h = 1 / (L * (1 - beta)) attached to the tuned method."""

    beta: float

    def h_for(self, L: float) -> float:
        return 1.0 / (L * (1.0 - self.beta))

    def L_for(self, h: float) -> float:
        return 1.0 / (h * (1.0 - self.beta))


def nesterov_method(beta: float):
    """The tuned 2-step method of momentum parameter beta, with its step rule.

    a = [beta, -(1+beta), 1], b = [-beta(1-beta), 1-beta^2, 0].
    beta = 0 degenerates to explicit Euler; beta = 1 is rejected because
    the step rule is singular there.
    """
    if not (0.0 <= beta < 1.0):
        raise BetaOutOfRangeError(f"beta must be in [0, 1), got {beta}")
    a = [beta, -(1.0 + beta), 1.0]
    b = [-beta * (1.0 - beta), 1.0 - beta * beta, 0.0]
    m = make_method(f"nesterov(beta={beta:g})", a, b, require_explicit=True)
    return m, NesterovStepRule(beta=beta)


def example_methods() -> dict[str, LinearMultistepMethod]:
    """The three demonstration methods: divergent, inconsistent, convergent.

    ex1 keeps its nonzero b_2 = 1/4; dropping it would flip its
    consistency classification.  The stepper only ever uses b_0..b_{s-1}.
    """
    return {
        "ex1": make_method("example1", [-2.0, 1.0, 1.0], [0.75, 2.0, 0.25]),
        "ex2": make_method("example2", [0.0, -1.0, 1.0], [-2.0 / 3.0, 1.0, 0.0]),
        "ex3": make_method(
            "example3",
            [-0.75, -0.5, 0.25, 1.0],
            [5.0 / 8.0, 0.0, 19.0 / 8.0, 0.0],
        ),
    }
