"""Walk through the series view of the symmetric divergences.

Prints the leading coefficients for each family, then truncates the
expansion at increasing orders on a fixed distribution pair and compares
the error against the worst-case bound for the matching clip radius.
"""

import numpy as np

from sfac import (
    GAN,
    JEFFREYS,
    JENSEN_SHANNON,
    exact_f_divergence,
    series_coefficient,
    taylor_divergence,
    truncation_bound,
)

FAMILIES = (JEFFREYS, JENSEN_SHANNON, GAN)


def main() -> None:
    print("series coefficients c_n")
    header = "  n  " + "".join(f"{f.name:>16}" for f in FAMILIES)
    print(header)
    for n in range(2, 7):
        cells = "".join(f"{series_coefficient(f, n):>16.8f}" for f in FAMILIES)
        print(f"  {n}  {cells}")
    print("note: jensen_shannon and gan share every coefficient;")
    print("their exact values differ only by an additive constant.\n")

    p = np.array([0.30, 0.45, 0.25])
    q = np.array([0.35, 0.40, 0.25])
    eps = float(np.max(np.abs(p / q - 1.0)))
    print(f"pair p={p.tolist()} q={q.tolist()}  max|ratio-1|={eps:.4f}")
    for family in FAMILIES:
        exact = exact_f_divergence(family, p, q)
        print(f"\n{family.name}: exact = {exact:.10f}")
        print("  N   truncated        |gap|        worst-case bound")
        for n_max in (2, 3, 5, 8):
            approx = taylor_divergence(family, p, q, n_max)
            gap = abs(approx - exact)
            bound = truncation_bound(family, n_max, eps, 1)
            print(f"  {n_max}   {approx:.10f}   {gap:.3e}    {bound:.3e}")


if __name__ == "__main__":
    main()
