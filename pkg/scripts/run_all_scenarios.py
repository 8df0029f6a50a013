"""Run every scenario under scenarios/ and write one artifact directory each."""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from pgot.cli import write_artifacts
from pgot.scenario import load_scenario, run_scenario
from pgot.store import ContentStore

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("-o", "--output", default="runs", help="parent directory for artifact dirs")
    p.add_argument("--skip", nargs="*", default=["desk"], help="scenario names to skip (desk scale is slow)")
    args = p.parse_args()
    out = Path(args.output)
    for path in sorted((ROOT / "scenarios").glob("*.toml")):
        sc = load_scenario(path)
        if sc.name in args.skip:
            continue
        start = time.perf_counter()
        target = out / sc.name
        res = run_scenario(sc, ContentStore(target / "store"))
        write_artifacts(res, target, path.read_bytes())
        accepted = sum(r.status == "Accepted" for r in res.records)
        print(
            f"{sc.name:<15} {accepted:>3}/{len(res.records):<3} accepted  "
            f"audits {'pass' if res.all_audits_pass else 'FAIL'}  {time.perf_counter() - start:6.1f} s"
        )


if __name__ == "__main__":
    main()
