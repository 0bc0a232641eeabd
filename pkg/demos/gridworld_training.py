"""Train the tabular offline actor-critic on the 5x5 gridworld.

Runs a short Jensen-Shannon job and prints the learning curve against the
behavior policy's return. A second job decouples the two policy tables by
giving the reference table a faster learning rate; only then does the
symmetry series contribute a nonzero term, since equal tables sit exactly
at the series' expansion point where every term vanishes.
"""

import tempfile
from pathlib import Path

import numpy as np

from sfac import TrainConfig, train


def run(tag: str, config: TrainConfig, out: Path) -> None:
    result = train(config, out)
    behavior = result.behavior_report.discounted_mean
    print(f"{tag}: behavior return = {behavior:.4f}")
    print("  step   return   awr_term   consym_term")
    for step, ret, _, awr, consym, _ in result.curve:
        print(f"  {step:>5}  {ret:+.4f}  {awr:9.4f}  {consym:+.6f}")
    final = result.final_report.discounted_mean
    verdict = "above" if final >= behavior else "below"
    print(f"  final policy return {final:.4f} ({verdict} behavior)\n")


def main() -> None:
    base = TrainConfig(
        family="jensen_shannon", steps=4000, eval_every=1000,
        eval_episodes=100, eval_horizon=120, seed=0,
    )
    with tempfile.TemporaryDirectory() as td:
        run("coupled tables (default)", base, Path(td) / "coupled")
        decoupled = TrainConfig(
            family="jensen_shannon", steps=4000, eval_every=1000,
            eval_episodes=100, eval_horizon=120, seed=0, lr_zeta=0.004,
        )
        run("decoupled tables (lr_zeta = 4x)", decoupled, Path(td) / "decoupled")
    print("with equal inits, shared batches, and equal learning rates the two")
    print("tables stay bitwise identical, so every policy ratio is exactly 1")
    print("and the symmetry term reads 0; decoupling the rates moves the")
    print("reference table ahead and the term becomes active.")


if __name__ == "__main__":
    main()
