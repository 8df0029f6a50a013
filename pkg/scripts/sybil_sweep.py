"""Split one contributor into n identities and compare with the unsplit run.

Two accountings are printed. Per round: every identity's stake plus
attestation is charged against that round's reward (the tested comparison).
Cumulative: identity costs are paid once, rewards summed over all rounds.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from pgot.scenario import load_scenario, run_scenario

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, nargs="*", default=[1, 2, 5, 10, 100])
    p.add_argument("--rounds", type=int, default=10)
    args = p.parse_args()
    base = load_scenario(ROOT / "scenarios" / "sybil.toml")
    print(f"{'':>4} {'':>6} {'--------- per round ---------':^40} {'----- cumulative -----':^24}")
    print(f"{'n':>4} {'same':>6} {'sybil gross':>12} {'sybil net':>12} {'honest net':>12}  {'sybil net':>11} {'honest net':>11}")
    for n in args.n:
        sc = replace(base, rounds=args.rounds, adversary=replace(base.adversary, n=n))
        recs = run_scenario(sc).sybil
        k = len(recs)
        cost = recs[0].identity_cost
        gross = sum(r.sybil_reward for r in recs)
        honest = sum(r.honest_reward for r in recs)
        print(
            f"{n:>4} {str(all(r.g_perp_identical for r in recs)):>6}"
            f" {float(gross / k):>12.4f} {float(sum(r.sybil_net for r in recs) / k):>12.4f}"
            f" {float(sum(r.honest_net for r in recs) / k):>12.4f}"
            f"  {float(gross - n * cost):>11.4f} {float(honest - cost):>11.4f}"
        )


if __name__ == "__main__":
    main()
