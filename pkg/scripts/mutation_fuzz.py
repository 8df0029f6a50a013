"""Tamper with honest receipts and count how often the auditor notices, per mutation class."""

from __future__ import annotations

import argparse
import random
from collections import Counter

from pgot.audit import verify_receipt
from pgot.mutations import Mutation, mutate
from pgot.scenario import parse_scenario, run_scenario


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--trials", type=int, default=20, help="mutations per class")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    res = run_scenario(parse_scenario({"name": "fuzz", "seed": args.seed, "rounds": args.rounds, "N": 50, "dim": 256}))
    proto = res.protocol
    keys = {pid: v.key for pid, v in proto.validators.items()}
    honest = sum(a.verdict for a in res.audits)
    print(f"honest receipts accepted: {honest}/{len(res.audits)}")

    rng = random.Random(args.seed)
    cids = [o.receipt_cid for o in res.outcomes if o.status == "Accepted"]
    print(f"{'mutation':<14}{'rejected':>10}  first failing checks")
    for kind in Mutation:
        rejected, checks = 0, Counter()
        for _ in range(args.trials):
            bad = mutate(proto.store, rng.choice(cids), kind, rng, keys)
            report = verify_receipt(bad, proto.store, proto.policy_log)
            rejected += not report.verdict
            checks.update(c.name for c in report.failed()[:1])
        top = ", ".join(f"{k} x{v}" for k, v in checks.most_common(3))
        print(f"{kind.value:<14}{rejected:>5}/{args.trials:<4}  {top}")


if __name__ == "__main__":
    main()
