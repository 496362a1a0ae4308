"""Difference operators against closed-form derivatives.

Every estimate downstream leans on the second-order accuracy of the
spatial operators and on the summation-by-parts identity
<A_h v, v> = |grad v|^2 + |div v|^2 for Dirichlet fields. This script
refines a trigonometric test field and prints the observed orders.
"""

import math

import numpy as np

from oldroydb import (Grid, ScalarField, VectorField, divergence,
                      grad_tensor, gradient, inner, laplacian,
                      viscous_operator)
from oldroydb.mms import taylor_vortex


def max_err(approx, exact):
    return float(np.abs(approx - exact).max())


def main():
    errs = {"gradient": {}, "divergence": {}, "laplacian": {}}
    for n in (16, 32, 64):
        g = Grid.unit(n)
        x, y = g.coords
        f = ScalarField(g, np.sin(2 * np.pi * x) * np.cos(np.pi * y))
        exact = np.stack([
            2 * np.pi * np.cos(2 * np.pi * x) * np.cos(np.pi * y),
            -np.pi * np.sin(2 * np.pi * x) * np.sin(np.pi * y)])
        errs["gradient"][n] = max_err(gradient(f).values, exact)

        v = VectorField(g, np.stack([np.sin(2 * np.pi * x) * np.cos(np.pi * y),
                                     np.cos(np.pi * x) * np.sin(2 * np.pi * y)]))
        exact = 2 * np.pi * (np.cos(2 * np.pi * x) * np.cos(np.pi * y)
                             + np.cos(np.pi * x) * np.cos(2 * np.pi * y))
        errs["divergence"][n] = max_err(divergence(v).values, exact)

        w = VectorField(g, np.stack([np.sin(np.pi * x) * np.sin(np.pi * y),
                                     0.0 * x]))
        exact = -2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        errs["laplacian"][n] = max_err(laplacian(w).values[0], exact)

    print("observed spatial orders (max-norm error, dyadic refinement):")
    for name, table in errs.items():
        ns = sorted(table)
        orders = [math.log2(table[a] / table[b])
                  for a, b in zip(ns, ns[1:])]
        order_text = "  ".join(f"{o:.2f}" for o in orders)
        print(f"  {name:<11} errors "
              + "  ".join(f"{table[n]:.2e}" for n in ns)
              + f"   orders {order_text}")

    print("\nquadratic-form identity on smooth Dirichlet fields:")
    for n in (32, 64):
        g = Grid.unit(n)
        v = taylor_vortex(g)
        q = inner(viscous_operator(v), v)
        gt = grad_tensor(v)
        rhs = sum(float(np.sum(g.weights * gt[i, j] ** 2))
                  for i in range(2) for j in range(2))
        rhs += float(np.sum(g.weights * divergence(v).values ** 2))
        print(f"  n={n:<3} <A_h v, v> = {q:.6f}, "
              f"|grad v|^2 + |div v|^2 = {rhs:.6f} "
              f"(off by {abs(q - rhs) / rhs:.2%})")


if __name__ == "__main__":
    main()
