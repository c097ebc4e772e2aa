"""Variational EM: mean-field ELBO ascent (E) and pseudo-likelihood weights (M).

The E-step maximizes

    ELBO(q) = sum_i b_i q_i + sum_f w_f E_q[f] + sum_i H(q_i) - eta * CE_labeled

over the posterior network parameters; log Z(w) is omitted as constant in
theta.  Per-formula expectations are computed exactly from the reduced
factor groups (closed forms per shape), which keeps gradients noise-free
and makes monotonicity testable: both E and M steps use backtracking step
halving and never accept a decrease beyond 1e-12.

The M-step maximizes the expected pseudo-log-likelihood
E_q[sum_i log P_w(t_i | blanket)].  The expectation enumerates per-example
assignments exactly when a component has at most 12 free variables and
falls back to antithetic mean-field samples otherwise; the sample set is
frozen per call so the objective stays deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from knowgraph.numerics import NumericsError, RowSelector, Tape
from knowgraph.reasoning.factorgraph import ExampleOutputs, FactorGraph, build_factor_graph
from knowgraph.reasoning.posterior import (
    SHAPE_EQUIV,
    SHAPE_EXCL0,
    SHAPE_PROD,
    FactorGraphEncoding,
    PllFactor,
    PllGroup,
    PosteriorParams,
    encode_factor_graph,
    graph_vocab,
    init_posterior_params,
    posterior_forward,
    posterior_marginals,
)
from knowgraph.reasoning.rules import Rule

ACCEPT_SLACK = 1e-12
MAX_HALVINGS = 40


@dataclass(frozen=True)
class EmConfig:
    rounds: int = 20
    e_steps: int = 50
    m_steps: int = 25
    e_lr: float = 0.05
    m_lr: float = 0.1
    eta: float = 1.0
    n_noise_passes: int = 1
    noise_sigma: float = 0.0
    m_samples: int = 16
    exact_limit: int = 12
    hidden: int = 16
    embed_dim: int = 8


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------


def _group_sum_tape(tape: Tape, q, group):
    """Tape scalar: sum over group members of E[f]."""
    ones = tape.constant(np.ones((group.n, 1)))
    probs = []
    for sel, flip in zip(group.selectors, group.slot_flip):
        p = tape.gather_rows(q, sel)
        probs.append(tape.sub(ones, p) if flip else p)
    if group.shape == SHAPE_PROD:
        prod = probs[0]
        for p in probs[1:]:
            prod = tape.mul(prod, p)
        total = tape.sum(prod)
        return tape.add(
            tape.constant(np.array([[group.c0 * group.n]])), tape.scalar_mul(group.c1, total)
        )
    if group.shape == SHAPE_EQUIV:
        pa, pb = probs
        agree = tape.add(
            tape.mul(pa, pb), tape.mul(tape.sub(ones, pa), tape.sub(ones, pb))
        )
        return tape.sum(agree)
    # SHAPE_EXCL0: prod(1-p) + sum_i p_i prod_{j!=i} (1-p_j)
    comps = [tape.sub(ones, p) for p in probs]
    none_true = comps[0]
    for c in comps[1:]:
        none_true = tape.mul(none_true, c)
    total = none_true
    for i, p in enumerate(probs):
        term = p
        for j, c in enumerate(comps):
            if j != i:
                term = tape.mul(term, c)
        total = tape.add(total, term)
    return tape.sum(total)


def _group_sum_np(q: np.ndarray, group) -> float:
    probs = []
    for rows, flip in zip(group.slot_rows, group.slot_flip):
        p = q[rows]
        probs.append(1.0 - p if flip else p)
    if group.shape == SHAPE_PROD:
        prod = np.ones(group.n)
        for p in probs:
            prod = prod * p
        return group.c0 * group.n + group.c1 * prod.sum()
    if group.shape == SHAPE_EQUIV:
        pa, pb = probs
        return float((pa * pb + (1 - pa) * (1 - pb)).sum())
    comps = [1.0 - p for p in probs]
    none_true = np.ones(group.n)
    for c in comps:
        none_true = none_true * c
    total = none_true.copy()
    for i, p in enumerate(probs):
        term = p.copy()
        for j, c in enumerate(comps):
            if j != i:
                term = term * c
        total += term
    return float(total.sum())


def _label_block(enc: FactorGraphEncoding, labels: dict[int, float] | None):
    if not labels:
        return None
    rows, ys = [], []
    for var_id, y in sorted(labels.items()):
        if var_id not in enc.q_pos:
            raise ValueError(f"label for variable {var_id} which is not free")
        rows.append(enc.q_pos[var_id])
        ys.append(float(y))
    return RowSelector(np.asarray(rows, dtype=np.int64), enc.n_q), np.asarray(ys).reshape(-1, 1)


def _elbo_graph(
    enc: FactorGraphEncoding,
    params: PosteriorParams,
    weights: dict[str, float],
    label_block,
    eta: float,
):
    """Build the full ELBO on a fresh tape; returns (tape, elbo, q)."""
    tape = Tape()
    q, _ = posterior_forward(tape, enc, params)
    one = tape.constant(np.ones((enc.n_q, 1)))
    one_minus_q = tape.sub(one, q)

    total = tape.sum(tape.mul(tape.constant(enc.b_q), q))
    entropy = tape.scalar_mul(
        -1.0,
        tape.sum(
            tape.add(
                tape.mul(q, tape.log(q)), tape.mul(one_minus_q, tape.log(one_minus_q))
            )
        ),
    )
    total = tape.add(total, entropy)

    const = sum(weights.get(wid, 0.0) * c for wid, c in enc.const_truth.items())
    rule_total = tape.constant(np.array([[const]]))
    for group in enc.groups:
        w = weights.get(group.weight_id, 0.0)
        if w == 0.0:
            continue
        rule_total = tape.add(rule_total, tape.scalar_mul(w, _group_sum_tape(tape, q, group)))
    total = tape.add(total, rule_total)

    if label_block is not None and eta != 0.0:
        sel, y = label_block
        ce = tape.binary_cross_entropy(tape.gather_rows(q, sel), y)
        total = tape.add(total, tape.scalar_mul(-eta, ce))
    return tape, total, q


def elbo_from_q(
    enc: FactorGraphEncoding,
    q: np.ndarray,
    weights: dict[str, float],
    labels: dict[int, float] | None = None,
    eta: float = 1.0,
) -> float:
    """ELBO for explicit marginals q (aligned with enc q rows); numpy path."""
    q = np.clip(np.asarray(q, dtype=np.float64).ravel(), 1e-12, 1 - 1e-12)
    total = float(enc.b_q.ravel() @ q)
    total -= float((q * np.log(q) + (1 - q) * np.log(1 - q)).sum())
    total += sum(weights.get(wid, 0.0) * c for wid, c in enc.const_truth.items())
    for group in enc.groups:
        w = weights.get(group.weight_id, 0.0)
        if w != 0.0:
            total += w * _group_sum_np(q, group)
    if labels and eta != 0.0:
        for var_id, y in labels.items():
            qi = q[enc.q_pos[var_id]]
            total -= eta * (-(y * math.log(qi) + (1 - y) * math.log(1 - qi)))
    return total


def elbo_value(
    enc: FactorGraphEncoding,
    params: PosteriorParams,
    weights: dict[str, float],
    labels: dict[int, float] | None = None,
    eta: float = 1.0,
) -> float:
    return elbo_from_q(enc, posterior_marginals(params, enc), weights, labels, eta)


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


@dataclass
class EStepResult:
    params: PosteriorParams
    trajectory: list[float] = field(default_factory=list)
    converged: bool = False


def _perturbed(params: PosteriorParams, eps: dict[str, np.ndarray] | None) -> PosteriorParams:
    if eps is None:
        return params
    return params.replace_arrays({k: v + eps[k] for k, v in params.arrays().items()})


def _noise_draws(params, sigma, n, rng):
    draws = []
    for _ in range(n):
        draws.append(
            {k: rng.normal(0.0, sigma, size=v.shape) for k, v in params.arrays().items()}
        )
    return draws


def e_step(
    params: PosteriorParams,
    weights: dict[str, float],
    enc: FactorGraphEncoding,
    labels: dict[int, float] | None = None,
    eta: float = 1.0,
    steps: int = 50,
    lr: float = 0.05,
    n_noise_passes: int = 1,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> EStepResult:
    """Gradient ascent on the ELBO in theta with backtracking halving.

    With n_noise_passes > 1, each step averages the objective and gradients
    over that many Gaussian weight perturbations of theta (fresh draws per
    step, shared between the gradient and its line search).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if n_noise_passes > 1 and rng is None:
        rng = np.random.default_rng(0)
    label_block = _label_block(enc, labels)

    def objective_and_grads(p, eps_list):
        vals, grad_sets = [], []
        for eps in eps_list:
            tape, elbo, _ = _elbo_graph(enc, _perturbed(p, eps), weights, label_block, eta)
            vals.append(elbo.item())
            grad_sets.append(tape.backward(elbo))
        grads = {
            k: sum(g[k] for g in grad_sets) / len(grad_sets) for k in grad_sets[0]
        }
        return float(np.mean(vals)), grads

    def objective(p, eps_list):
        vals = []
        for eps in eps_list:
            _, elbo, _ = _elbo_graph(enc, _perturbed(p, eps), weights, label_block, eta)
            vals.append(elbo.item())
        return float(np.mean(vals))

    result = EStepResult(params=params)
    best_val = -np.inf
    for _ in range(steps):
        eps_list = (
            _noise_draws(params, noise_sigma, n_noise_passes, rng)
            if n_noise_passes > 1 and noise_sigma > 0
            else [None]
        )
        current, grads = objective_and_grads(params, eps_list)
        if not np.isfinite(current):
            raise NumericsError("non-finite ELBO in E-step")
        step = lr
        accepted = None
        for _ in range(MAX_HALVINGS):
            trial = params.replace_arrays(
                {k: v + step * grads[k] for k, v in params.arrays().items()}
            )
            val = objective(trial, eps_list)
            if np.isfinite(val) and val >= current - ACCEPT_SLACK:
                accepted = (trial, val)
                break
            step *= 0.5
        if accepted is None:
            result.converged = True
            break
        params, val = accepted
        result.trajectory.append(val)
        if val > best_val:
            best_val = val
            result.params = params
    else:
        result.converged = False
    if not result.trajectory:
        result.params = params
    return result


# ---------------------------------------------------------------------------
# M-step: expected pseudo-log-likelihood
# ---------------------------------------------------------------------------


def _truth_cols(pf: PllFactor, role_vals: np.ndarray) -> np.ndarray:
    """Vectorized factor truth given per-example role values (n x R bool)."""
    n = role_vals.shape[0]
    lits = []
    for (kind, payload), pol in zip(pf.slots, pf.polarities):
        if kind == "role":
            lits.append(role_vals[:, payload] == pol)
        else:  # fixed attribute value
            lits.append(np.full(n, payload == pol))
    if pf.kind == "implication":
        ant = np.logical_and.reduce(lits[:-1]) if len(lits) > 1 else lits[0]
        return (~ant | lits[-1]).astype(np.float64)
    if pf.kind == "equivalence":
        return (lits[0] == lits[1]).astype(np.float64)
    return (np.sum(lits, axis=0) <= 1).astype(np.float64)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, -np.log1p(np.exp(-x)), x - np.log1p(np.exp(x)))


def _pll_accumulate(
    group: PllGroup,
    role_vals: np.ndarray,
    pi: np.ndarray,
    weights: dict[str, float],
    grads: dict[str, float],
) -> float:
    """Add one assignment's contribution; returns the objective part."""
    total = 0.0
    deltas_cache: dict[int, np.ndarray] = {}
    for r, role in enumerate(group.roles):
        eps_sign = np.where(role_vals[:, r], 1.0, -1.0)
        s = group.b_mat[:, r].copy()
        incident = group.incident[r]
        role_deltas = []
        for fpos in incident:
            pf = group.factors[fpos]
            up = role_vals.copy()
            up[:, r] = True
            down = role_vals.copy()
            down[:, r] = False
            delta = _truth_cols(pf, up) - _truth_cols(pf, down)
            role_deltas.append((pf.weight_id, delta))
            s += weights.get(pf.weight_id, 0.0) * delta
        arg = eps_sign * s
        total += float((pi * _log_sigmoid(arg)).sum())
        coef = pi * (1.0 - 1.0 / (1.0 + np.exp(-arg))) * eps_sign
        for wid, delta in role_deltas:
            grads[wid] = grads.get(wid, 0.0) + float((coef * delta).sum())
    return total


def _pll_group_exact(group: PllGroup, q: np.ndarray, weights, grads) -> float:
    n, L, R = group.n, group.n_latent, len(group.roles)
    if R == 0:
        return 0.0
    qm = q[group.latent_rows] if L else np.zeros((n, 0))
    total = 0.0
    for code in range(1 << L):
        bits = [(code >> j) & 1 for j in range(L)]
        pi = np.ones(n)
        for j, bit in enumerate(bits):
            pi = pi * (qm[:, j] if bit else 1.0 - qm[:, j])
        role_vals = np.empty((n, R), dtype=bool)
        for r, role in enumerate(group.roles):
            role_vals[:, r] = bool(bits[role.latent_slot]) if role.is_latent else role.observed_value
        total += _pll_accumulate(group, role_vals, pi, weights, grads)
    return total


def _pll_group_sampled(
    group: PllGroup, q: np.ndarray, weights, grads, samples: np.ndarray
) -> float:
    """samples: (S, n, L) booleans drawn outside so the objective is fixed."""
    n, R = group.n, len(group.roles)
    if R == 0:
        return 0.0
    total = 0.0
    s_count = samples.shape[0]
    pi = np.full(n, 1.0 / s_count)
    for t in range(s_count):
        role_vals = np.empty((n, R), dtype=bool)
        for r, role in enumerate(group.roles):
            role_vals[:, r] = (
                samples[t, :, role.latent_slot] if role.is_latent else role.observed_value
            )
        total += _pll_accumulate(group, role_vals, pi, weights, grads)
    return total


def _draw_antithetic(group: PllGroup, q: np.ndarray, n_samples: int, rng) -> np.ndarray:
    half = max(1, n_samples // 2)
    qm = q[group.latent_rows]
    u = rng.random((half, group.n, group.n_latent))
    return np.concatenate([u < qm, (1.0 - u) < qm], axis=0)


def pseudo_loglik_value(
    enc: FactorGraphEncoding,
    weights: dict[str, float],
    q: np.ndarray,
    n_samples: int = 16,
    exact_limit: int = 12,
    rng: np.random.Generator | None = None,
    frozen_samples: dict[int, np.ndarray] | None = None,
) -> tuple[float, dict[str, float]]:
    """Mean expected pseudo-log-likelihood per example and its w-gradient."""
    q = np.asarray(q, dtype=np.float64).ravel()
    grads: dict[str, float] = {}
    total = 0.0
    n_examples = sum(g.n for g in enc.pll_groups)
    for gi, group in enumerate(enc.pll_groups):
        if group.n_latent <= exact_limit:
            total += _pll_group_exact(group, q, weights, grads)
        else:
            if frozen_samples is not None and gi in frozen_samples:
                samples = frozen_samples[gi]
            else:
                samples = _draw_antithetic(group, q, n_samples, rng or np.random.default_rng(0))
            total += _pll_group_sampled(group, q, weights, grads, samples)
    scale = 1.0 / max(n_examples, 1)
    return total * scale, {k: v * scale for k, v in grads.items()}


@dataclass
class MStepResult:
    weights: dict[str, float]
    trajectory: list[float] = field(default_factory=list)
    converged: bool = False


def m_step(
    weights: dict[str, float],
    q: np.ndarray,
    enc: FactorGraphEncoding,
    steps: int = 25,
    lr: float = 0.1,
    rng: np.random.Generator | None = None,
    n_samples: int = 16,
    exact_limit: int = 12,
) -> MStepResult:
    """Ascent on the expected pseudo-log-likelihood over rule weights.

    Sampled groups freeze their antithetic sample set for the whole call, so
    the line search sees a deterministic objective.
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    rng = rng or np.random.default_rng(0)
    frozen: dict[int, np.ndarray] = {}
    for gi, group in enumerate(enc.pll_groups):
        if group.n_latent > exact_limit:
            frozen[gi] = _draw_antithetic(group, q, n_samples, rng)

    def objective(w):
        return pseudo_loglik_value(enc, w, q, exact_limit=exact_limit, frozen_samples=frozen)

    weights = dict(weights)
    result = MStepResult(weights=weights)
    for _ in range(steps):
        current, grads = objective(weights)
        step = lr
        accepted = None
        for _ in range(MAX_HALVINGS):
            trial = {k: weights.get(k, 0.0) + step * grads.get(k, 0.0) for k in set(weights) | set(grads)}
            val, _ = objective(trial)
            if np.isfinite(val) and val >= current - ACCEPT_SLACK:
                accepted = (trial, val)
                break
            step *= 0.5
        if accepted is None:
            result.converged = True
            break
        weights, val = accepted
        result.trajectory.append(val)
        result.weights = weights
    return result


# ---------------------------------------------------------------------------
# EM driver and inference
# ---------------------------------------------------------------------------


@dataclass
class EmResult:
    params: PosteriorParams
    weights: dict[str, float]
    marginals: dict[int, float]  # variable index -> q
    elbo_trajectory: list[list[float]] = field(default_factory=list)
    pll_trajectory: list[list[float]] = field(default_factory=list)


def variational_em(
    fg: FactorGraph,
    labels: dict[int, float] | None = None,
    cfg: EmConfig = EmConfig(),
    seed: int = 0,
    init_weights: dict[str, float] | None = None,
    params: PosteriorParams | None = None,
    learn_weights: bool = True,
) -> EmResult:
    """Alternate E and M phases for cfg.rounds; returns the final posterior,
    weights, and per-variable marginals."""
    if cfg.rounds < 1:
        raise ValueError("rounds must be >= 1")
    enc = encode_factor_graph(fg, params.vocab if params is not None else None)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    if params is None:
        params = init_posterior_params(
            enc.vocab, rng, hidden=cfg.hidden, embed_dim=cfg.embed_dim
        )
    weights = {wid: 0.0 for wid in fg.weight_ids}
    if init_weights:
        weights.update(init_weights)

    result = EmResult(params=params, weights=weights, marginals={})
    for _ in range(cfg.rounds):
        e_res = e_step(
            params, weights, enc, labels, cfg.eta,
            steps=cfg.e_steps, lr=cfg.e_lr,
            n_noise_passes=cfg.n_noise_passes, noise_sigma=cfg.noise_sigma, rng=rng,
        )
        params = e_res.params
        result.elbo_trajectory.append(e_res.trajectory)
        if learn_weights:
            qv = posterior_marginals(params, enc)
            m_res = m_step(
                weights, qv, enc, steps=cfg.m_steps, lr=cfg.m_lr, rng=rng,
                n_samples=cfg.m_samples, exact_limit=cfg.exact_limit,
            )
            weights = m_res.weights
            result.pll_trajectory.append(m_res.trajectory)
    result.params = params
    result.weights = weights
    result.marginals = enc.q_values_by_var(posterior_marginals(params, enc))
    return result


class SchemaMismatch(ValueError):
    pass


@dataclass
class InferResult:
    scores: np.ndarray  # main-predicate marginal mean per example
    variance: np.ndarray
    marginals: dict[int, float]


def reason_infer(
    params: PosteriorParams,
    weights: dict[str, float],
    rules: tuple[Rule, ...],
    examples: list[ExampleOutputs],
    main_pred: str = "main",
    n_noise_passes: int = 1,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    expected_schema: str | None = None,
) -> InferResult:
    """Ground new examples and run the trained posterior forward.

    With n_noise_passes > 1 and a positive sigma, runs that many weight-noise
    perturbations of theta and returns the per-example mean marginal and its
    population variance as an uncertainty estimate.
    """
    from knowgraph.reasoning.io import schema_hash

    if expected_schema is not None:
        actual = schema_hash(rules)
        if actual != expected_schema:
            raise SchemaMismatch(
                f"rule schema hash {actual} does not match the trained reasoner {expected_schema}"
            )
    fg = build_factor_graph(examples, rules)
    enc = encode_factor_graph(fg, params.vocab)
    main_rows = [
        enc.q_pos[v.index]
        for v in fg.variables
        if v.name == main_pred and v.status != "observed"
    ]
    if len(main_rows) != len(examples):
        raise SchemaMismatch(f"predicate {main_pred!r} is not free in every example")

    if n_noise_passes > 1 and noise_sigma > 0:
        rng = rng or np.random.default_rng(0)
        passes = []
        for _ in range(n_noise_passes):
            eps = {k: rng.normal(0.0, noise_sigma, size=v.shape) for k, v in params.arrays().items()}
            noisy = params.replace_arrays({k: v + eps[k] for k, v in params.arrays().items()})
            passes.append(posterior_marginals(noisy, enc)[main_rows])
        stack = np.stack(passes)
        qv = posterior_marginals(params, enc)
        return InferResult(
            scores=stack.mean(axis=0), variance=stack.var(axis=0), marginals=enc.q_values_by_var(qv)
        )
    qv = posterior_marginals(params, enc)
    return InferResult(
        scores=qv[main_rows], variance=np.zeros(len(main_rows)), marginals=enc.q_values_by_var(qv)
    )
