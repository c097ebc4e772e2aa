"""Markov logic core: rules, grounding, exact inference, variational EM."""

from knowgraph.reasoning.rules import (
    GroundingError,
    Literal,
    Rule,
    RuleError,
    ThresholdAtom,
    attribute_predicate_eval,
    load_rules,
    parse_rules,
    rules_to_json,
)
from knowgraph.reasoning.factorgraph import (
    ExampleOutputs,
    Factor,
    FactorGraph,
    PredicateVar,
    build_factor_graph,
    conditional_given_blanket,
    evidence_logodds,
    exact_marginals,
    expected_formula_truth,
    factor_truth,
    log_evidence_mass,
    world_logpotential,
)
from knowgraph.reasoning.posterior import PosteriorParams, encode_factor_graph, init_posterior_params, posterior_marginals
from knowgraph.reasoning.em import (
    EmConfig,
    EmResult,
    e_step,
    elbo_value,
    m_step,
    pseudo_loglik_value,
    reason_infer,
    variational_em,
)
from knowgraph.reasoning.io import (
    read_labels_csv,
    read_model_outputs,
    schema_hash,
    write_labels_csv,
    write_model_outputs,
)

__all__ = [
    "Literal",
    "ThresholdAtom",
    "Rule",
    "RuleError",
    "GroundingError",
    "parse_rules",
    "load_rules",
    "rules_to_json",
    "attribute_predicate_eval",
    "ExampleOutputs",
    "PredicateVar",
    "Factor",
    "FactorGraph",
    "build_factor_graph",
    "evidence_logodds",
    "factor_truth",
    "world_logpotential",
    "exact_marginals",
    "expected_formula_truth",
    "conditional_given_blanket",
    "log_evidence_mass",
    "PosteriorParams",
    "init_posterior_params",
    "encode_factor_graph",
    "posterior_marginals",
    "EmConfig",
    "EmResult",
    "elbo_value",
    "pseudo_loglik_value",
    "e_step",
    "m_step",
    "variational_em",
    "reason_infer",
    "read_model_outputs",
    "write_model_outputs",
    "read_labels_csv",
    "write_labels_csv",
    "schema_hash",
]
