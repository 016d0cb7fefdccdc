"""Explicit linear multistep methods as inspectable coefficient data.

A method with step count s is the recurrence

    x_{k+s} = - sum_{i<s} a_i x_{k+i} + h sum_{i<s} b_i f(t_{k+i}, x_{k+i})

with a_s = 1 (monic).  Coefficients are stored ascending (a_0 first).
Methods whose b_s is nonzero can still be constructed for analysis
purposes (the paper's Example 1 needs its implicit tail coefficient to
classify as consistent); the stepper always uses the explicit part only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DivergedStateError,
    GridMismatchError,
    ImplicitNotSupportedError,
    LengthMismatchError,
    NonFiniteCoefficientError,
    NotMonicError,
)

__all__ = [
    "LinearMultistepMethod",
    "Polynomial",
    "StepHistory",
    "make_method",
    "method_from_json",
    "method_to_json",
    "char_polynomials",
    "eval_poly",
    "poly_derivative",
    "lmm_step",
    "bootstrap",
    "rk4_step",
]


@dataclass(frozen=True)
class LinearMultistepMethod:
    """An s-step method defined by coefficient vectors a and b (ascending)."""

    name: str
    a: np.ndarray
    b: np.ndarray

    @property
    def s(self) -> int:
        return len(self.a) - 1

    @property
    def is_explicit(self) -> bool:
        return self.b[-1] == 0.0


@dataclass(frozen=True)
class Polynomial:
    """Real-coefficient polynomial, coefficients ascending by degree."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


@dataclass
class StepHistory:
    """The s most recent states and dynamics values of one integration.

    ``f_values[-1]`` may be None: the newest state's dynamics value is
    evaluated lazily at the start of the next step so each multistep
    step costs exactly one evaluation.
    """

    states: list = field(default_factory=list)
    f_values: list = field(default_factory=list)
    t_latest: float = 0.0
    h: float = 0.0


def make_method(name, a, b, *, require_explicit=False) -> LinearMultistepMethod:
    """Validate coefficient vectors and build a method.

    ``require_explicit=True`` additionally rejects a nonzero b_s.  The
    default accepts it because the stepper ignores the implicit tail and
    the CCS analysis needs the full b vector (paper Example 1).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or len(a) != len(b):
        raise LengthMismatchError(
            f"coefficient vectors must be 1-d of equal length, got {a.shape} and {b.shape}"
        )
    if len(a) < 2:
        raise LengthMismatchError("need at least 2 coefficients (a 1-step method)")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NonFiniteCoefficientError(f"non-finite coefficient in method {name!r}")
    if a[-1] != 1.0:
        raise NotMonicError(f"a_s must be 1, got {a[-1]!r}")
    if require_explicit and b[-1] != 0.0:
        raise ImplicitNotSupportedError(f"b_s must be 0 for an explicit method, got {b[-1]!r}")
    return LinearMultistepMethod(name=name, a=a, b=b)


def method_from_json(text_or_path) -> LinearMultistepMethod:
    """Load a method from a JSON object {"name", "a", "b"} (string or file path)."""
    s = str(text_or_path)
    if s.lstrip().startswith("{"):
        obj = json.loads(s)
    else:
        with open(s) as fh:
            obj = json.load(fh)
    return make_method(obj["name"], obj["a"], obj["b"])


def method_to_json(m: LinearMultistepMethod) -> str:
    return json.dumps({"name": m.name, "a": m.a.tolist(), "b": m.b.tolist()})


def char_polynomials(m: LinearMultistepMethod):
    """First and second characteristic polynomials (P, Q) of a method.

    P keeps the full a vector (monic, never trimmed); genuine trailing
    zeros of b are trimmed from Q.
    """
    p = Polynomial(np.array(m.a))
    bc = np.array(m.b)
    nz = np.nonzero(bc)[0]
    if len(nz) == 0:
        bc = bc[:1]
    else:
        bc = bc[: nz[-1] + 1]
    return p, Polynomial(bc)


def eval_poly(p: Polynomial, z):
    """Evaluate p at z (real or complex) by Horner's scheme."""
    acc = 0.0 * z + p.coeffs[-1]
    for c in p.coeffs[-2::-1]:
        acc = acc * z + c
    return acc


def poly_derivative(p: Polynomial) -> Polynomial:
    if p.degree == 0:
        return Polynomial(np.zeros(1))
    k = np.arange(1, len(p.coeffs))
    return Polynomial(p.coeffs[1:] * k)


def _value(x):
    """Numeric payload of a state, unwrapping autodiff variables."""
    return getattr(x, "value", x)


def _check_finite(x, where, history=None, index=None):
    if not np.all(np.isfinite(_value(x))):
        raise DivergedStateError(
            f"non-finite state during {where}",
            partial_states=history,
            first_bad_index=index,
        )


def lmm_step(m: LinearMultistepMethod, hist: StepHistory, f):
    """Advance one multistep step; returns (new_state, new_history).

    Fills in the lazily deferred dynamics value of the newest history
    entry if needed, so NFE grows by at most one per step.
    """
    s = m.s
    if len(hist.states) != s or len(hist.f_values) != s:
        raise LengthMismatchError(
            f"history must hold exactly {s} states, got {len(hist.states)}"
        )
    if hist.f_values[-1] is None:
        hist.f_values[-1] = f(hist.t_latest, hist.states[-1])
    with np.errstate(over="ignore", invalid="ignore"):
        new = hist.h * m.b[0] * hist.f_values[0] - m.a[0] * hist.states[0]
        for i in range(1, s):
            new = new - m.a[i] * hist.states[i] + (hist.h * m.b[i]) * hist.f_values[i]
    _check_finite(new, "lmm step", history=hist.states)
    new_hist = StepHistory(
        states=hist.states[1:] + [new],
        f_values=hist.f_values[1:] + [None],
        t_latest=hist.t_latest + hist.h,
        h=hist.h,
    )
    return new, new_hist


def rk4_step(t, x, h, f, k1=None):
    """One classical RK4 step.  Passing a precomputed k1 saves an evaluation."""
    if k1 is None:
        k1 = f(t, x)
    with np.errstate(over="ignore", invalid="ignore"):
        k2 = f(t + h / 2, x + (h / 2) * k1)
        k3 = f(t + h / 2, x + (h / 2) * k2)
        k4 = f(t + h, x + h * k3)
        return x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def bootstrap(m: LinearMultistepMethod, ivp, h: float) -> StepHistory:
    """Build the s starting values of a multistep integration.

    x_0 is the IVP initial state; x_1..x_{s-1} come from classical RK4
    steps.  The stored dynamics value at each point doubles as the k1
    stage of the following RK4 step, so the evaluation count is
    1 + 4*(s-1): one for x_0 plus, per extra point, three fresh RK4
    stages and one at the new point.
    """
    if h <= 0:
        raise GridMismatchError(f"step size must be positive, got {h}")
    f = ivp.f
    states = [ivp.x0]
    f_values = [f(ivp.t0, ivp.x0)]
    t = ivp.t0
    for j in range(1, m.s):
        x_new = rk4_step(t, states[-1], h, f, k1=f_values[-1])
        t += h
        _check_finite(x_new, "bootstrap", history=states, index=j)
        states.append(x_new)
        f_values.append(f(t, x_new))
    return StepHistory(states=states, f_values=f_values, t_latest=t, h=h)
