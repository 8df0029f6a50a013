"""Desk-scale simulator for verifiable, novelty-rewarded federated learning rounds."""

from __future__ import annotations

from .audit import AuditReport, verify_receipt
from .codec import FixedAmount, canonical_bytes, cid_of, to_fixed
from .policy import PolicyBundle, PolicyLog, default_bundle
from .round import Participant, Protocol, RoundInputs, RoundOutcome
from .scenario import Scenario, load_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "FixedAmount",
    "Participant",
    "PolicyBundle",
    "PolicyLog",
    "Protocol",
    "RoundInputs",
    "RoundOutcome",
    "Scenario",
    "canonical_bytes",
    "cid_of",
    "default_bundle",
    "load_scenario",
    "run_scenario",
    "to_fixed",
    "verify_receipt",
]
