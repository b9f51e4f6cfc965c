"""Symbolic oracle for the mean-field force closures.

Substitutes the implemented K = K0 + K1 into the full streaming operator of
the local Maxwellian, imposes continuity and the velocity equation, and
checks the result vanishes identically in the relative velocity.  This is
the ground truth the numerical force kernels are built against; it also
documents that the positional-temperature force needs the opposite sign on
the gradient-temperature block from the one that would make it fail.
"""

import pytest
import sympy as sp


def streaming_residual(dim: int, positional: bool, sign: int):
    """L g_M / g_M after imposing the fluid equations (sympy expression)."""
    t, m = sp.symbols("t m", positive=True)
    coords = sp.symbols(f"x0:{dim}", real=True)
    u = sp.symbols(f"u0:{dim}", real=True)
    w = sp.symbols(f"w0:{dim}", real=True)  # lab-frame velocity placeholders

    f = sp.Function("f", positive=True)(*coords, t)
    V = [sp.Function(f"V{i}")(*coords, t) for i in range(dim)]
    F = [sp.Function(f"Fq{i}")(*coords, t) for i in range(dim)]
    if positional:
        T = [
            sp.Function(f"k{i}", positive=True)(*coords)
            * sp.Function(f"tau{i}", positive=True)(t)
            for i in range(dim)
        ]
    else:
        T = [sp.Function(f"T{i}", positive=True)(t) for i in range(dim)]

    vth2 = [2 * T[i] / m for i in range(dim)]
    norm = sp.prod([sp.sqrt(sp.pi * vth2[i]) for i in range(dim)])
    expo = sum((w[i] - V[i]) ** 2 / vth2[i] for i in range(dim))
    phi = sp.log(f / norm) - expo

    D = lambda h: sp.diff(h, t) + sum(V[j] * sp.diff(h, coords[j]) for j in range(dim))

    K = []
    for i in range(dim):
        K0 = F[i] + T[i] * sp.diff(sp.log(f), coords[i])
        K1 = m * sum(u[j] * sp.diff(V[i], coords[j]) for j in range(dim))
        K1 += m / 2 * u[i] * D(sp.log(T[i]))
        if positional:
            grad_block = sum(
                sp.diff(sp.log(T[j]), coords[i]) * (u[j] ** 2 / vth2[j] - sp.Rational(1, 2))
                for j in range(dim)
            ) + sp.diff(sp.log(T[i]), coords[i])
            K1 += sign * m / 2 * vth2[i] * grad_block
        K.append(K0 + K1)

    expr = sp.diff(phi, t)
    for j in range(dim):
        expr += w[j] * sp.diff(phi, coords[j])
        expr += (K[j] / m) * sp.diff(phi, w[j])
        expr += sp.diff(K[j] / m, u[j])
    expr = expr.subs({w[i]: V[i] + u[i] for i in range(dim)}, simultaneous=True)

    # impose continuity and the velocity (quantum Newton) equation
    subs = {
        sp.Derivative(f, t): -sum(sp.diff(f * V[j], coords[j]) for j in range(dim))
    }
    for i in range(dim):
        subs[sp.Derivative(V[i], t)] = F[i] / m - sum(
            V[j] * sp.diff(V[i], coords[j]) for j in range(dim)
        )
    return sp.simplify(sp.expand(expr.subs(subs)))


def test_maxwellian_closure_solves_kinetic_equation_1d():
    assert streaming_residual(1, positional=False, sign=0) == 0


def test_maxwellian_closure_solves_kinetic_equation_2d():
    assert streaming_residual(2, positional=False, sign=0) == 0


def test_positional_closure_requires_plus_sign_1d():
    assert streaming_residual(1, positional=True, sign=+1) == 0
    assert streaming_residual(1, positional=True, sign=-1) != 0


def test_positional_closure_plus_sign_2d():
    assert streaming_residual(2, positional=True, sign=+1) == 0
