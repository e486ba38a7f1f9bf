"""Writes pend1_formula.json: a published 1-DOF V-function in model-file form.

The formula uses sqrt(z**2 + 1) terms; the grammar has no square root, so each
is rewritten exactly as 2*bent(z) - 2*z + 1. Linear leftovers are merged into
the x0/x1 coefficients and the intercept; the two H*G products cancel.
"""
import math
from pathlib import Path

from symrl.expr import Const, Func, Var
from symrl.model import SymbolicModel, save_model

a, b = Var(0), Var(1)


def lin(ca, cb, c0):
    """ca*x0 + cb*x1 + c0, with unit coefficients left implicit."""
    terms = []
    for c, v in ((ca, a), (cb, b)):
        if c == 0:
            continue
        terms.append(v if c == 1 else Func("mul", (Const(c), v)))
    e = terms[0]
    for t in terms[1:]:
        e = Func("add", (e, t))
    return Func("sub", (e, Const(-c0))) if c0 < 0 else Func("add", (e, Const(c0)))


def mul(*xs):
    e = xs[0]
    for x in xs[1:]:
        e = Func("mul", (e, x))
    return e


def cube(e):
    return Func("cube", (e,))


def bent(e):
    return Func("bent", (e,))


P = lin(-12, 10, 47)
A = lin(-3.5, 4.3e-2, 11)
Z = lin(0.2, 0.3, -0.5)
L5 = lin(0.4, 0.1, -1.1)
L6 = lin(0.1, 0, -1.5)
L7 = (0.6, 6.3e-2, -1.7)
L9 = (1.1, 0.4, -3.3)
L13 = (3.6, 0.4, -11)
L14 = (1, 0, -3.1)
negH = lin(-1.2, -14, 10)
W = lin(-2.9, 9.1e-2, 8.3)
k = math.sqrt(3.9e-3)

# beta * sqrt(L**2 + 1) -> 2 beta bent(L) - 2 beta L + beta
sqrt_lin = [(11.0, L7), (0.3, L9), (-1.7, L13), (-2.0, L14)]
c_x0, c_x1, c0 = -4.6, -7.1e-4, 23.0
for beta, (la, lb, l0) in sqrt_lin:
    c_x0 -= 2 * beta * la
    c_x1 -= 2 * beta * lb
    c0 += beta - 2 * beta * l0
# remaining sqrt terms: 8.7e-6 sqrt((P A^3)^2+1), sqrt((k A Z)^2+1), 6.5e-5 sqrt((H G)^2+1)
c0 += 8.7e-6 + 1.0 + 6.5e-5

terms = [
    (1.7e-5 - 2 * 8.7e-6, mul(P, cube(A))),
    (c_x1, b),
    (c_x0, a),
    (-8.2e-6, cube(mul(A, Z))),
    (-9.8e-3, Func("sq", (cube(L5),))),
    (11.0, cube(L6)),
    (2 * 8.7e-6, bent(mul(P, cube(A)))),
    (2.0, bent(mul(Const(k), A, Z))),
    (-5.5e-2 - 2 * k, mul(A, Z)),
    # G = 0.091 x1 - 2.9 x0 + 0.5 sqrt(W^2+1) + 7.8 equals bent(W) exactly
    (2 * 6.5e-5, bent(mul(negH, bent(W)))),
]
terms += [(2 * beta, bent(lin(*L))) for beta, L in sqrt_lin]

model = SymbolicModel(tuple(f for _, f in terms), [c for c, _ in terms], c0)

if __name__ == "__main__":
    save_model(model, Path(__file__).with_name("pend1_formula.json"))
