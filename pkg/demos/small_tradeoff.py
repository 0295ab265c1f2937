"""A pocket-sized trade-off experiment.

Trains one encoder without the privacy term (alpha 0) and one with it
(alpha 2) on a reduced dataset, validates both with fresh nets, and writes a
trade-off report next to the raw-video baseline.  Takes a few minutes.
"""
import logging
from pathlib import Path

from bdq import harness as H
from bdq.synth import SynthConfig, generate
from bdq.trainer import TrainConfig

OUT = Path("demo_out/small_tradeoff")


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    ds = generate(SynthConfig(num_actions=4, num_identities=5, clips_per_pair=8))
    cfg = TrainConfig(epochs=12, seed=0)
    rows = [H.raw_baseline(ds, cfg)]
    for cell in H.alpha_sweep(ds, [0.0, 2.0], cfg, OUT / "sweep"):
        rows.append(cell.row)
        print(f"alpha {cell.alpha:g}: sigma {cell.sigma:.2f}, boundary spread {cell.spread:.2f}")
    table, plot = H.tradeoff_report(rows, OUT)
    for r in rows:
        print(f"{r.method:10s} action {r.action_acc:.3f}  privacy {r.privacy_acc:.3f}")
    print(f"wrote {table} and {plot}")


if __name__ == "__main__":
    main()
