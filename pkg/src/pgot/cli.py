"""Command line: ``pgot run``, ``pgot audit`` and ``pgot cost-report``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .audit import AuditReport, AvailabilityError, verify_receipt
from .codec import Cid, FixedAmount, canonical_bytes, decode, format_decimal
from .ledger import DOLLARS_PER_GAS, GAS_OWNED, GAS_SHARED, round_gas_report
from .policy import PolicyLogState
from .scenario import ConfigError, ScenarioResult, load_scenario, run_scenario
from .store import ContentStore

# Off-chain and committee figures are fixed inputs of the cost model, per round
# at N=10000 and a 20M-parameter model; only the on-chain part is measured.
STORAGE_ITEMS = (
    ("Contributor adapters (temporary)", "$0.01/GB-month", "20 GB", Fraction("0.007")),
    ("Aggregate model (persistent)", "$0.05+$0.10/GB-month", "80 MB", Fraction("0.012")),
    ("Receipts/proofs (archival)", "$1.00/GB one-time", "150 KB", Fraction("0.00015")),
)
STORAGE_SUBTOTAL = Fraction("0.020")
COMMITTEE_PER_ROUND = Fraction("3.50")
SHARED_UPDATES_PER_ROUND = 4


# ---------------------------------------------------------------------------
# Cost report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostLine:
    component: str
    unit: str
    quantity: str
    subtotal: str


@dataclass(frozen=True)
class CostReport:
    N: int
    rounds: int
    gas_units: Fraction
    onchain_dollars: Fraction
    storage_dollars: Fraction
    committee_dollars: Fraction
    lines: tuple[CostLine, ...]

    @property
    def total_per_round(self) -> Fraction:
        return self.onchain_dollars + self.storage_dollars + self.committee_dollars

    @property
    def per_contributor(self) -> Fraction | None:
        return self.total_per_round / self.N if self.N else None

    @property
    def onchain_variable(self) -> Fraction:
        return GAS_OWNED * self.N * DOLLARS_PER_GAS

    def text(self) -> str:
        out = io.StringIO()
        out.write(f"Per-round cost breakdown (N={self.N}, rounds={self.rounds})\n")
        width = max(len(l.component) for l in self.lines) + 2
        for l in self.lines:
            out.write(f"  {l.component:<{width}}{l.unit:<24}{l.quantity:<14}{l.subtotal}\n")
        out.write(f"  {'Total per round':<{width}}{'':<38}${_usd(self.total_per_round, 2)}\n")
        pc = self.per_contributor
        out.write(f"  {'Cost per contributor':<{width}}{'':<38}{'n/a' if pc is None else '$' + _usd(pc, 6)}\n")
        out.write(f"  {'Total over all rounds':<{width}}{'':<38}${_usd(self.total_per_round * self.rounds, 2)}\n")
        return out.getvalue()


def _usd(x: Fraction, places: int) -> str:
    return f"{float(x):.{places}f}"


def _gas(x: Fraction) -> str:
    return format_decimal(x)


def cost_report(N: int, rounds: int = 1) -> CostReport:
    if N < 0 or rounds < 0:
        raise ValueError("N and rounds must be nonnegative")
    meter = round_gas_report(N, SHARED_UPDATES_PER_ROUND)
    owned = GAS_OWNED * N
    shared = GAS_SHARED * SHARED_UPDATES_PER_ROUND
    lines = [
        CostLine("Owned object updates (ContributorRegistry)", f"{_gas(GAS_OWNED)} gas", f"{N}", f"{_gas(owned)} gas"),
        CostLine(
            "Shared object updates (Round/Model/Policy)",
            f"{_gas(GAS_SHARED)} gas",
            f"{SHARED_UPDATES_PER_ROUND} updates",
            f"{_gas(shared)} gas",
        ),
        CostLine("On-chain subtotal", "", "", f"{_gas(meter.gas_units)} gas = ${_usd(meter.dollars, 3)}"),
    ]
    lines += [CostLine(name, unit, qty, f"${_usd(v, 5)}") for name, unit, qty, v in STORAGE_ITEMS]
    lines.append(CostLine("Storage subtotal", "", "", f"${_usd(STORAGE_SUBTOTAL, 3)}"))
    lines.append(CostLine("Validator infrastructure", "$2-5/round", "", f"${_usd(COMMITTEE_PER_ROUND, 2)}"))
    return CostReport(N, rounds, meter.gas_units, meter.dollars, STORAGE_SUBTOTAL, COMMITTEE_PER_ROUND, tuple(lines))


# ---------------------------------------------------------------------------
# Artifact directory
# ---------------------------------------------------------------------------


def to_jsonable(value: Any) -> Any:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, Cid):
        return str(value)
    if isinstance(value, FixedAmount):
        return str(value)
    if isinstance(value, Fraction):
        return format_decimal(value) if value >= 0 else str(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {(k.hex() if isinstance(k, bytes) else str(k)): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _dump_json(path: Path, value: Any) -> None:
    path.write_text(json.dumps(to_jsonable(value), indent=2) + "\n")


def _csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _num(x: Fraction) -> str:
    return format_decimal(x)


def write_artifacts(result: ScenarioResult, out: Path, scenario_text: bytes | None = None) -> None:
    proto = result.protocol
    for sub in ("receipts", "proofs", "basis", "audit"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if scenario_text is not None:
        (out / "scenario.toml").write_bytes(scenario_text)

    index = []
    for outcome, report in zip(result.outcomes, result.audits or [None] * len(result.outcomes)):
        tag = f"round_{outcome.round_id:04d}"
        receipt = outcome.receipt
        (out / "receipts" / f"{tag}.bin").write_bytes(canonical_bytes(receipt))
        _dump_json(out / "receipts" / f"{tag}.json", receipt)
        if receipt.proof_cid is not None:
            (out / "proofs" / f"{tag}.bin").write_bytes(proto.store.get_bytes(receipt.proof_cid))
        basis = getattr(receipt, "basis_cid", None)
        if basis is not None:
            (out / "basis" / f"{tag}.bin").write_bytes(proto.store.get_bytes(basis))
        if report is not None:
            (out / "audit" / f"{tag}.txt").write_text(report.text())
            (out / "audit" / f"{tag}.bin").write_bytes(canonical_bytes(report))
        index.append(f"{outcome.round_id} {outcome.status} {outcome.receipt_cid.hex}")
    (out / "receipts" / "index.txt").write_text("\n".join(index) + "\n")

    (out / "policy_log.bin").write_bytes(canonical_bytes(proto.policy_log.state()))
    proto.ledger.save_log(out / "ledger.log")

    recs = result.records
    _csv(
        out / "novelty.csv",
        ["round", "status", "phi", "phi_ema", "phi_tilde", "P_nov"],
        [[r.round_id, r.status, repr(r.phi), repr(r.phi_ema), r.phi_tilde, r.P_nov] for r in recs],
    )
    _csv(
        out / "summary.csv",
        [
            "round", "status", "failure", "included", "dropped", "rewards_honest", "rewards_attacker",
            "novelty_attacker", "fees", "slashed", "gas_owned", "gas_shared", "audit",
        ],
        [
            [
                r.round_id, r.status, r.failure, r.included, r.dropped, _num(r.rewards_honest),
                _num(r.rewards_attacker), _num(r.novelty_attacker), _num(r.fees), _num(r.slashed),
                r.gas_owned, r.gas_shared, "pass" if r.audit_passed else "FAIL",
            ]
            for r in recs
        ],
    )
    if result.sybil:
        _csv(
            out / "sybil.csv",
            ["round", "n", "g_perp_identical", "phi_identical", "sybil_reward", "sybil_net", "honest_reward", "honest_net"],
            [
                [s.round_id, s.n, s.g_perp_identical, s.phi_identical, _num(s.sybil_reward), str(s.sybil_net),
                 _num(s.honest_reward), str(s.honest_net)]
                for s in result.sybil
            ],
        )
    if result.governance_events:
        (out / "governance.txt").write_text("\n".join(result.governance_events) + "\n")

    sc = result.scenario
    owned = proto.ledger.gas.owned_updates
    shared = proto.ledger.gas.shared_updates
    measured = proto.ledger.gas
    report = cost_report(sc.N, sc.rounds)
    text = report.text()
    text += (
        f"\nMeasured in this run: {owned} owned + {shared} shared writes = "
        f"{_gas(measured.gas_units)} gas (${_usd(measured.dollars, 6)}) over {sc.rounds} rounds\n"
    )
    (out / "cost_report.txt").write_text(text)


def audit_directory(out: Path) -> list[tuple[int, AuditReport]]:
    store = ContentStore.open(out / "store")
    state = decode((out / "policy_log.bin").read_bytes())
    if not isinstance(state, PolicyLogState):
        raise ValueError("policy_log.bin does not hold a policy log")
    reports = []
    for line in (out / "receipts" / "index.txt").read_text().split("\n"):
        if not line.strip():
            continue
        rid, _, cid_hex = line.split()
        reports.append((int(rid), verify_receipt(Cid(bytes.fromhex(cid_hex)), store, state)))
    return reports


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    out = Path(args.output)
    store = ContentStore(out / "store")
    result = run_scenario(sc, store)
    write_artifacts(result, out, Path(args.scenario).read_bytes())
    accepted = sum(r.status == "Accepted" for r in result.records)
    print(f"{sc.name}: {accepted}/{len(result.records)} rounds accepted, "
          f"audits {'all pass' if result.all_audits_pass else 'FAILED'} -> {out}")
    return 0 if result.all_audits_pass else 1


def _cmd_audit(args: argparse.Namespace) -> int:
    try:
        reports = audit_directory(Path(args.output))
    except (AvailabilityError, FileNotFoundError) as exc:
        print(f"unavailable: {exc}", file=sys.stderr)
        return 2
    bad = 0
    for rid, rep in reports:
        if not rep.verdict:
            bad += 1
            sys.stdout.write(rep.text())
    print(f"{len(reports) - bad}/{len(reports)} receipts verified")
    return 0 if bad == 0 else 1


def _cmd_cost(args: argparse.Namespace) -> int:
    sys.stdout.write(cost_report(args.n, args.rounds).text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgot", description="Federated-learning coordination simulator and auditor.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file and write an artifact directory")
    run.add_argument("scenario", help="scenario TOML file")
    run.add_argument("-o", "--output", required=True, help="artifact directory")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.set_defaults(func=_cmd_run)

    aud = sub.add_parser("audit", help="re-verify every receipt in an artifact directory")
    aud.add_argument("output", help="artifact directory written by 'pgot run'")
    aud.set_defaults(func=_cmd_audit)

    cost = sub.add_parser("cost-report", help="analytical per-round cost table")
    cost.add_argument("--n", type=int, default=10000, help="contributors per round")
    cost.add_argument("--rounds", type=int, default=1)
    cost.set_defaults(func=_cmd_cost)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
