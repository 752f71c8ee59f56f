"""Provenance-bound belief revision: contracts, routers, audit logs, and a simulation lab."""

from .belief import Belief, argmax, argmax_set, conf, dilute, dilute_closed_form, new_belief, uniform
from .contract import (
    FALLBACK,
    Certificate,
    Clause,
    Contract,
    Dilute,
    Identity,
    LogOdds,
    MassShift,
    certified_step,
    compile_eg,
    compile_nf,
    contract_update,
    load_contract,
    protocol_step,
    running_example_contract,
    save_contract,
    support_contract,
    triage_contract,
)
from .evidence import Event, Message, Token, ValidityConfig, issue_token, is_social_only, is_valid, make_event
from .router import (
    GATE_ONLY,
    STATE_HOLDING,
    AttributionViolation,
    AuditLog,
    Proposal,
    Router,
    RouterConfig,
    attribute_flip,
    enforced_step,
    verify_audit,
    verify_certificate,
)
from .trigger import Trigger, eval_trigger, extract_witness

__version__ = "0.1.0"
