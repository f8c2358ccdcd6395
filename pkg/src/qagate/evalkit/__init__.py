"""Desk-scale evaluation harness: seeded corpus, query sets, variants, metrics."""

from .corpus import PlantedSecret, SeededCorpus, generate_corpus
from .metrics import (
    metric_coverage,
    metric_exact_match,
    metric_token_f1,
    metric_violation_rate,
    normalize_answer,
    violation_flags,
)
from .queries import QueryCase, generate_queries
from .runner import (
    EvalReport,
    PolicyScenario,
    Scenario,
    SystemVariant,
    VARIANTS,
    default_scenario_dict,
    run_eval,
)

__all__ = [
    "PlantedSecret",
    "SeededCorpus",
    "generate_corpus",
    "QueryCase",
    "generate_queries",
    "normalize_answer",
    "metric_exact_match",
    "metric_token_f1",
    "metric_coverage",
    "metric_violation_rate",
    "violation_flags",
    "Scenario",
    "PolicyScenario",
    "SystemVariant",
    "VARIANTS",
    "EvalReport",
    "default_scenario_dict",
    "run_eval",
]
