from __future__ import annotations

import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qagate.ingest import IngestConfig
from qagate.policy import (
    Action,
    Constraint,
    LeftOperand,
    Operator,
    Policy,
    Rule,
    RuleKind,
    SessionPolicyContext,
)

NOW = datetime(2026, 3, 2, 12, 0, 0, tzinfo=timezone.utc)
LATER = NOW + timedelta(days=365)


def make_rule(rule_id, kind, action=Action.DISCLOSE, constraints=()):
    return Rule(rule_id=rule_id, kind=kind, action=action, constraints=tuple(constraints))


def purpose_eq(value):
    return Constraint(left=LeftOperand.PURPOSE, op=Operator.EQ, right=value)


def sensitivity_any(*tags):
    return Constraint(
        left=LeftOperand.SENSITIVITY, op=Operator.IS_ANY_OF, right=tuple(t.value for t in tags)
    )


def make_ctx(rules=(), duties=(), purpose="safety-analysis", recipient_class=None,
             asset="asset-1", principal="consumer-1", agreement_id="ag-1"):
    return SessionPolicyContext(
        principal=principal,
        asset=asset,
        purpose=purpose,
        rules=tuple(rules),
        duties=tuple(duties),
        recipient_class=recipient_class,
        agreement_id=agreement_id,
    )


@pytest.fixture
def gazetteer_cfg():
    return IngestConfig(
        window_tokens=200,
        overlap_tokens=40,
        gazetteer={
            "pii.person-name": ["Jane Doe", "Viktor Brandt"],
            "pii.address": ["14 Harbor Lane"],
            "id.org": ["Acme Industrial"],
            "narrative.incident": ["operator error during the night shift"],
        },
    )
