"""Fit a single Gaussian to a bimodal mixture under different divergences.

The quadrature stage gives the exact best fits: forward KL is moment
matching (sigma = sqrt of the mixture variance), while the symmetric
divergences prefer slightly narrower fits. The SGD stage then shows the
practical gap this library exists to close: the exact Jensen-Shannon
stochastic loss drifts to a much wider fit than its own quadrature
optimum, while the clipped series form of the same divergence stays close.
"""

import numpy as np

from sfac import FORWARD_KL, JEFFREYS, JENSEN_SHANNON, best_fit_quadrature, fit_sgd, standard_mixture

SEEDS = (0, 1, 2)


def main() -> None:
    target = standard_mixture()
    print("target: 0.5 N(-1.6, 2.44) + 0.5 N(+1.6, 2.44), variance 5")
    print(f"        bimodal, modes near +-0.59, sqrt(variance) = {np.sqrt(5):.4f}\n")

    print("quadrature best fits (deterministic)")
    for family in (FORWARD_KL, JEFFREYS, JENSEN_SHANNON):
        report = best_fit_quadrature(family, target)
        print(
            f"  {family.name:<14} mu*={report.mu_hat:+.4f}  sigma*={report.sigma_hat:.4f}"
            f"  divergence={report.divergence_value:.6f}"
        )
    print()

    print("SGD fits of jensen_shannon, exact vs clipped-series loss")
    print("  variant    seed  sigma_hat  divergence at the fit")
    for variant in ("exact", "expanded"):
        for seed in SEEDS:
            report = fit_sgd(JENSEN_SHANNON, target, variant, seed=seed)
            print(
                f"  {variant:<9}  {seed}     {report.sigma_hat:.4f}"
                f"     {report.divergence_value:.6f}"
            )
    print()
    print("the exact stochastic loss lands far above the quadrature optimum")
    print("(mass covering); the clipped series form stays near it.")


if __name__ == "__main__":
    main()
