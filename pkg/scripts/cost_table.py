"""Per-round cost breakdown across population sizes."""

from __future__ import annotations

import argparse

from pgot.cli import cost_report


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, nargs="*", default=[10, 100, 1000, 10000, 100000])
    args = p.parse_args()
    print(f"{'N':>7} {'gas':>8} {'on-chain $':>11} {'total $':>9} {'per contributor $':>18}")
    for n in args.n:
        rep = cost_report(n)
        pc = rep.per_contributor
        print(
            f"{n:>7} {float(rep.gas_units):>8.3f} {float(rep.onchain_dollars):>11.4f}"
            f" {float(rep.total_per_round):>9.3f} {'n/a' if pc is None else f'{float(pc):.6f}':>18}"
        )
    print()
    print(cost_report(10000).text())


if __name__ == "__main__":
    main()
