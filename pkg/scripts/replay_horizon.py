"""Novelty of a replayed update: zero while remembered, positive once the basis forgets it."""

from __future__ import annotations

import argparse

import numpy as np

from pgot.novelty import NoveltyBasis, NoveltyTracker, decompose


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--basis-size", type=int, default=20)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    tracker = NoveltyTracker(NoveltyBasis.empty(args.dim, args.basis_size))
    replayed = rng.normal(size=args.dim)
    print(f"round 0: first submission phi={tracker.observe(replayed).phi:.4f}")
    print("round  fresh-phi  replay-phi")
    for r in range(1, args.rounds + 1):
        fresh = tracker.observe(rng.normal(size=args.dim)).phi
        again = decompose(replayed, tracker.basis).phi
        print(f"{r:>5}  {fresh:9.4f}  {again:10.2e}")


if __name__ == "__main__":
    main()
