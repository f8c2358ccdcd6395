"""ODRL-style usage policy subset: parsing, validation, and disclosure decisions.

Policies hold permissions, prohibitions, and duties over a target asset,
refined by constraints on purpose, recipient class, sensitivity tags,
datetime, and asset. Constraint evaluation is tri-state (true / false /
unknown) and disclosure decisions resolve uncertainty conservatively:
a prohibition that is true or unknown denies, a permission that is
unknown does not count as applicable, and no applicable permission
denies by default.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import PolicySemanticError, PolicySyntaxError

RightOperand = Union[str, tuple]


class SensitivityTag(str, enum.Enum):
    """Closed set of chunk sensitivity categories."""

    PII_PERSON_NAME = "pii.person-name"
    PII_EMAIL = "pii.email"
    PII_PHONE = "pii.phone"
    PII_ADDRESS = "pii.address"
    ID_PART_NUMBER = "id.part-number"
    ID_ORG = "id.org"
    NARRATIVE_INCIDENT = "narrative.incident"
    CONTAINS_PII = "contains_pii"

    @property
    def is_pii(self) -> bool:
        return self.value.startswith("pii.")


PII_TAGS = frozenset(t for t in SensitivityTag if t.is_pii)
ALL_TAG_VALUES = frozenset(t.value for t in SensitivityTag)


class LeftOperand(str, enum.Enum):
    PURPOSE = "purpose"
    RECIPIENT = "recipient"
    SENSITIVITY = "sensitivity"
    DATETIME = "datetime"
    ASSET = "asset"


class Operator(str, enum.Enum):
    EQ = "eq"
    NEQ = "neq"
    IS_ANY_OF = "isAnyOf"
    IS_NONE_OF = "isNoneOf"
    BEFORE = "before"
    AFTER = "after"


class RuleKind(str, enum.Enum):
    PERMISSION = "permission"
    PROHIBITION = "prohibition"
    DUTY = "duty"


class Action(str, enum.Enum):
    READ = "read"
    ANALYZE = "analyze"
    DISCLOSE = "disclose"
    LOG = "log"


DUTY_ACTIONS = frozenset({Action.LOG})
RULE_ACTIONS = frozenset({Action.READ, Action.ANALYZE, Action.DISCLOSE})


class TriState(enum.Enum):
    """Three-valued constraint outcome; unknown is a value, not an error."""

    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"


def tri_and(values: Iterable[TriState]) -> TriState:
    """Kleene conjunction: false dominates, then unknown; empty is true."""
    result = TriState.TRUE
    for v in values:
        if v is TriState.FALSE:
            return TriState.FALSE
        if v is TriState.UNKNOWN:
            result = TriState.UNKNOWN
    return result


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC3339 timestamp; naive values are taken as UTC."""
    raw = value.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"not an RFC3339 timestamp: {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.isoformat()


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class Constraint:
    """A single condition refining when a rule applies."""

    left: LeftOperand
    op: Operator
    right: RightOperand

    def __post_init__(self):
        if self.op in (Operator.BEFORE, Operator.AFTER):
            if self.left is not LeftOperand.DATETIME:
                raise PolicySemanticError(
                    f"operator {self.op.value!r} requires left operand 'datetime'"
                )
            if not isinstance(self.right, str):
                raise PolicySemanticError(
                    f"operator {self.op.value!r} requires a timestamp right operand"
                )
            try:
                parse_timestamp(self.right)
            except ValueError as exc:
                raise PolicySemanticError(str(exc))
        elif self.op in (Operator.IS_ANY_OF, Operator.IS_NONE_OF):
            if not isinstance(self.right, tuple) or len(self.right) == 0:
                raise PolicySemanticError(
                    f"operator {self.op.value!r} requires a non-empty list right operand"
                )
        else:
            if not isinstance(self.right, str):
                raise PolicySemanticError(
                    f"operator {self.op.value!r} requires a string right operand"
                )
        if self.left is LeftOperand.DATETIME and self.op not in (
            Operator.BEFORE,
            Operator.AFTER,
            Operator.EQ,
            Operator.NEQ,
        ):
            raise PolicySemanticError(
                f"datetime constraints do not support operator {self.op.value!r}"
            )
        if self.left is LeftOperand.SENSITIVITY:
            for v in self._right_values():
                if v not in ALL_TAG_VALUES:
                    raise PolicySemanticError(f"unknown sensitivity tag {v!r}")

    def _right_values(self) -> tuple:
        return self.right if isinstance(self.right, tuple) else (self.right,)


@dataclass(frozen=True)
class Rule:
    """A permission, prohibition, or duty over an action."""

    rule_id: str
    kind: RuleKind
    action: Action
    constraints: tuple = ()

    def __post_init__(self):
        if not self.rule_id:
            raise PolicySemanticError("rule_id must be non-empty")
        allowed = DUTY_ACTIONS if self.kind is RuleKind.DUTY else RULE_ACTIONS
        if self.action not in allowed:
            raise PolicySemanticError(
                f"{self.kind.value} rules do not support action {self.action.value!r}"
            )


@dataclass(frozen=True)
class Policy:
    """A set of rules governing one target asset."""

    policy_id: str
    target_asset: str
    rules: tuple = ()

    def __post_init__(self):
        if not self.policy_id:
            raise PolicySemanticError("policy_id must be non-empty")
        if not self.target_asset:
            raise PolicySemanticError("target_asset must be non-empty")
        if not self.rules:
            raise PolicySemanticError("policy must contain at least one rule")
        seen = set()
        for r in self.rules:
            if r.rule_id in seen:
                raise PolicySemanticError(f"duplicate rule_id {r.rule_id!r}")
            seen.add(r.rule_id)


class DecisionOutcome(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


REASON_NO_APPLICABLE_PERMISSION = "no-applicable-permission"
REASON_PROHIBITION_MATCHED = "prohibition-matched"
REASON_CONFLICT_DEFAULT_DENY = "conflict-default-deny"
REASON_UNKNOWN_OPERAND = "unknown-operand"

SYMBOLIC_REASONS = frozenset(
    {
        REASON_NO_APPLICABLE_PERMISSION,
        REASON_PROHIBITION_MATCHED,
        REASON_CONFLICT_DEFAULT_DENY,
        REASON_UNKNOWN_OPERAND,
    }
)


@dataclass(frozen=True)
class Decision:
    """Outcome of a disclosability evaluation with its grounds."""

    outcome: DecisionOutcome
    reasons: tuple = ()

    def __post_init__(self):
        if self.outcome is DecisionOutcome.DENY and not self.reasons:
            raise ValueError("deny decisions must carry at least one reason")

    @property
    def allowed(self) -> bool:
        return self.outcome is DecisionOutcome.ALLOW

    def rule_ids(self) -> tuple:
        return tuple(r for r in self.reasons if r not in SYMBOLIC_REASONS)


@dataclass(frozen=True)
class SessionPolicyContext:
    """The tuple governing every question asked within one QA session.

    Rules and duties are the target policy's rule set partitioned by kind;
    recipient_class is optional and resolves recipient constraints when set.
    """

    principal: str
    asset: str
    purpose: str
    rules: tuple = ()
    duties: tuple = ()
    recipient_class: Optional[str] = None
    agreement_id: str = ""

    def disclose_permissions(self) -> tuple:
        return tuple(
            r
            for r in self.rules
            if r.kind is RuleKind.PERMISSION and r.action is Action.DISCLOSE
        )

    def disclose_prohibitions(self) -> tuple:
        return tuple(
            r
            for r in self.rules
            if r.kind is RuleKind.PROHIBITION and r.action is Action.DISCLOSE
        )


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------


def _parse_constraint(obj, path: str) -> Constraint:
    if not isinstance(obj, dict):
        raise PolicySyntaxError("constraint must be an object", path)
    for key in ("left", "op", "right"):
        if key not in obj:
            raise PolicySyntaxError(f"missing field {key!r}", path)
    try:
        left = LeftOperand(obj["left"])
    except ValueError:
        raise PolicySemanticError(f"unknown left operand {obj['left']!r}", f"{path}.left")
    try:
        op = Operator(obj["op"])
    except ValueError:
        raise PolicySemanticError(f"unknown operator {obj['op']!r}", f"{path}.op")
    right = obj["right"]
    if isinstance(right, list):
        if not all(isinstance(v, str) for v in right):
            raise PolicySyntaxError("list right operand must hold strings", f"{path}.right")
        right = tuple(right)
    elif not isinstance(right, str):
        raise PolicySyntaxError("right operand must be a string or list", f"{path}.right")
    try:
        return Constraint(left=left, op=op, right=right)
    except PolicySemanticError as exc:
        raise PolicySemanticError(str(exc).split(": ", 1)[-1], path)


def _parse_rule(obj, path: str) -> Rule:
    if not isinstance(obj, dict):
        raise PolicySyntaxError("rule must be an object", path)
    for key in ("rule_id", "kind", "action"):
        if key not in obj:
            raise PolicySyntaxError(f"missing field {key!r}", path)
    try:
        kind = RuleKind(obj["kind"])
    except ValueError:
        raise PolicySemanticError(f"unknown rule kind {obj['kind']!r}", f"{path}.kind")
    try:
        action = Action(obj["action"])
    except ValueError:
        raise PolicySemanticError(f"unknown action {obj['action']!r}", f"{path}.action")
    raw_constraints = obj.get("constraints", [])
    if not isinstance(raw_constraints, list):
        raise PolicySyntaxError("constraints must be a list", f"{path}.constraints")
    constraints = tuple(
        _parse_constraint(c, f"{path}.constraints[{i}]") for i, c in enumerate(raw_constraints)
    )
    try:
        return Rule(rule_id=obj["rule_id"], kind=kind, action=action, constraints=constraints)
    except PolicySemanticError as exc:
        raise PolicySemanticError(str(exc).split(": ", 1)[-1], path)


def parse_policy(raw) -> Policy:
    """Parse a policy document (bytes, str, or already-decoded dict).

    Raises PolicySyntaxError for malformed documents and PolicySemanticError
    for invariant violations; both name the offending path.
    """
    if isinstance(raw, (bytes, bytearray)):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PolicySyntaxError(f"not UTF-8: {exc}")
    if isinstance(raw, str):
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise PolicySyntaxError(f"invalid JSON: {exc}")
    else:
        obj = raw
    if not isinstance(obj, dict):
        raise PolicySyntaxError("policy document must be a JSON object")
    for key in ("policy_id", "target_asset", "rules"):
        if key not in obj:
            raise PolicySyntaxError(f"missing field {key!r}")
    if not isinstance(obj["rules"], list):
        raise PolicySyntaxError("rules must be a list", "$.rules")
    rules = tuple(_parse_rule(r, f"$.rules[{i}]") for i, r in enumerate(obj["rules"]))
    try:
        return Policy(policy_id=obj["policy_id"], target_asset=obj["target_asset"], rules=rules)
    except PolicySemanticError as exc:
        raise PolicySemanticError(str(exc).split(": ", 1)[-1], "$")


def serialize_policy(policy: Policy) -> dict:
    """Inverse of parse_policy: a JSON-ready dict for the policy file format."""
    return {
        "policy_id": policy.policy_id,
        "target_asset": policy.target_asset,
        "rules": [
            {
                "rule_id": r.rule_id,
                "kind": r.kind.value,
                "action": r.action.value,
                "constraints": [
                    {
                        "left": c.left.value,
                        "op": c.op.value,
                        "right": list(c.right) if isinstance(c.right, tuple) else c.right,
                    }
                    for c in r.constraints
                ],
            }
            for r in policy.rules
        ],
    }


def serialize_policy_bytes(policy: Policy) -> bytes:
    return json.dumps(serialize_policy(policy), indent=2).encode("utf-8")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def constraint_satisfied(
    c: Constraint,
    ctx: SessionPolicyContext,
    chunk_tags: frozenset,
    now: datetime,
) -> TriState:
    """Evaluate one constraint against the session, chunk tags, and clock.

    Returns UNKNOWN when the operand cannot be resolved (currently only an
    unset recipient class); sensitivity membership is tested against the
    chunk's tag set.
    """
    if c.left is LeftOperand.SENSITIVITY:
        rights = {SensitivityTag(v) for v in c._right_values()}
        tags = set(chunk_tags)
        if c.op is Operator.EQ:
            hit = next(iter(rights)) in tags
        elif c.op is Operator.NEQ:
            hit = next(iter(rights)) not in tags
        elif c.op is Operator.IS_ANY_OF:
            hit = bool(tags & rights)
        else:  # IS_NONE_OF
            hit = not (tags & rights)
        return TriState.TRUE if hit else TriState.FALSE

    if c.left is LeftOperand.DATETIME:
        bound = parse_timestamp(c.right)  # type: ignore[arg-type]
        if c.op is Operator.BEFORE:
            hit = now < bound
        elif c.op is Operator.AFTER:
            hit = now > bound
        elif c.op is Operator.EQ:
            hit = now == bound
        else:  # NEQ
            hit = now != bound
        return TriState.TRUE if hit else TriState.FALSE

    if c.left is LeftOperand.PURPOSE:
        value: Optional[str] = ctx.purpose
    elif c.left is LeftOperand.RECIPIENT:
        value = ctx.recipient_class
    else:  # ASSET
        value = ctx.asset
    if value is None:
        return TriState.UNKNOWN

    if c.op is Operator.EQ:
        hit = value == c.right
    elif c.op is Operator.NEQ:
        hit = value != c.right
    elif c.op is Operator.IS_ANY_OF:
        hit = value in c.right
    else:  # IS_NONE_OF
        hit = value not in c.right
    return TriState.TRUE if hit else TriState.FALSE


def rule_applies(
    r: Rule,
    ctx: SessionPolicyContext,
    chunk_tags: frozenset,
    now: datetime,
) -> TriState:
    """Tri-state conjunction over the rule's constraints (empty list is true)."""
    return tri_and(constraint_satisfied(c, ctx, chunk_tags, now) for c in r.constraints)


def evaluate_disclosure(
    ctx: SessionPolicyContext,
    chunk_tags: frozenset,
    now: Optional[datetime] = None,
) -> Decision:
    """Default-deny disclosability decision for one chunk under the session.

    Allow requires a disclose permission that definitely applies and no
    disclose prohibition that applies or might apply. Deny reasons name the
    matched or unresolved prohibitions, or the absence of a permission.
    """
    now = now or utcnow()
    matched_prohibitions = []
    unknown_prohibitions = []
    for r in ctx.disclose_prohibitions():
        state = rule_applies(r, ctx, chunk_tags, now)
        if state is TriState.TRUE:
            matched_prohibitions.append(r.rule_id)
        elif state is TriState.UNKNOWN:
            unknown_prohibitions.append(r.rule_id)

    permitting = [
        r.rule_id
        for r in ctx.disclose_permissions()
        if rule_applies(r, ctx, chunk_tags, now) is TriState.TRUE
    ]

    if matched_prohibitions:
        reasons = []
        if permitting:
            reasons.append(REASON_CONFLICT_DEFAULT_DENY)
        reasons.append(REASON_PROHIBITION_MATCHED)
        reasons.extend(matched_prohibitions)
        return Decision(DecisionOutcome.DENY, tuple(reasons))
    if unknown_prohibitions:
        return Decision(
            DecisionOutcome.DENY, (REASON_UNKNOWN_OPERAND, *unknown_prohibitions)
        )
    if permitting:
        return Decision(DecisionOutcome.ALLOW, tuple(permitting))
    return Decision(DecisionOutcome.DENY, (REASON_NO_APPLICABLE_PERMISSION,))


def collect_duties(
    ctx: SessionPolicyContext, now: Optional[datetime] = None
) -> list:
    """Duty rules whose constraints apply; unknown counts as applicable."""
    now = now or utcnow()
    return [
        r
        for r in ctx.duties
        if rule_applies(r, ctx, frozenset(), now) is not TriState.FALSE
    ]


def prohibited_sensitivity_tags(
    ctx: SessionPolicyContext, now: Optional[datetime] = None
) -> dict:
    """Map each sensitivity tag targeted by a live disclose prohibition to
    the prohibiting rule ids.

    A prohibition is live when its non-sensitivity constraints are not
    definitely false under the context. contains_pii expands to every pii
    tag, since any pii hit implies contains_pii at tagging time.
    """
    now = now or utcnow()
    out: dict = {}
    for r in ctx.disclose_prohibitions():
        others = tri_and(
            constraint_satisfied(c, ctx, frozenset(), now)
            for c in r.constraints
            if c.left is not LeftOperand.SENSITIVITY
        )
        if others is TriState.FALSE:
            continue
        targeted = set()
        for c in r.constraints:
            if c.left is not LeftOperand.SENSITIVITY:
                continue
            if c.op in (Operator.EQ, Operator.IS_ANY_OF):
                targeted.update(SensitivityTag(v) for v in c._right_values())
        expanded = set(targeted)
        if SensitivityTag.CONTAINS_PII in targeted:
            expanded.update(PII_TAGS)
        for tag in expanded:
            out.setdefault(tag, set()).add(r.rule_id)
    return {tag: tuple(sorted(ids)) for tag, ids in out.items()}
