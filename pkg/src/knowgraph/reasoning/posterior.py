"""GCN-encoded mean-field posterior over a grounded factor graph.

Variables and factors are nodes of a bipartite graph; two propagation
rounds let each variable's marginal see its rules and their other
variables.  Node features are [evidence log-odds, observed value, node-kind
one-hot, name one-hot] plus a learned per-name class embedding.  The output
head adds the node's evidence log-odds as a fixed skip term, so a
zero-initialized head reproduces the evidence exactly: with no active rules
the posterior equals the classifier confidences by construction.

Encoding a factor graph also precomputes the reduced factor groups used by
the ELBO (observed literals folded away, one vectorized group per
structural shape) and the per-example structure used by pseudo-likelihood
weight updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from knowgraph.learning.gcn import normalize_adjacency
from knowgraph.numerics import GraphOperator, RowSelector, Tape, Tensor
from knowgraph.reasoning.factorgraph import (
    STATUS_LATENT,
    STATUS_OBSERVED,
    STATUS_SOFT,
    FactorGraph,
)
from knowgraph.reasoning.rules import KIND_EQUIVALENCE, KIND_IMPLICATION, GroundingError

KIND_ORDER = (STATUS_SOFT, STATUS_OBSERVED, STATUS_LATENT, "factor")

# Reduced factor shapes (observed literals already folded away).
SHAPE_PROD = "prod"  # E = c0 + c1 * prod over slots of p_slot
SHAPE_EQUIV = "equiv"  # E = p_a p_b + (1-p_a)(1-p_b)
SHAPE_EXCL0 = "excl0"  # at-most-one over free literals, none observed-true


@dataclass(frozen=True)
class PosteriorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    mu: np.ndarray  # vocab x embed_dim class embeddings
    vocab: tuple[str, ...]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
            "w_out": self.w_out, "b_out": self.b_out, "mu": self.mu,
        }

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "PosteriorParams":
        return replace(self, **arrays)

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.mu.shape[1]


def feature_dim(n_vocab: int, embed_dim: int) -> int:
    return 2 + len(KIND_ORDER) + n_vocab + embed_dim


def graph_vocab(fg: FactorGraph) -> tuple[str, ...]:
    names = {f"p:{v.name}" for v in fg.variables} | {f"r:{f.rule_name}" for f in fg.factors}
    return tuple(sorted(names))


def init_posterior_params(
    vocab: tuple[str, ...], rng: np.random.Generator, hidden: int = 16, embed_dim: int = 8
) -> PosteriorParams:
    f0 = feature_dim(len(vocab), embed_dim)

    def glorot(rows, cols):
        scale = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-scale, scale, size=(rows, cols))

    # Zero head: the posterior starts exactly at the evidence marginals.
    return PosteriorParams(
        W1=glorot(f0, hidden),
        b1=np.zeros((1, hidden)),
        W2=glorot(hidden, hidden),
        b2=np.zeros((1, hidden)),
        w_out=np.zeros((hidden, 1)),
        b_out=np.zeros((1, 1)),
        mu=rng.normal(0.0, 0.1, size=(len(vocab), embed_dim)),
        vocab=vocab,
    )


@dataclass
class FactorGroup:
    """Factors sharing one reduced shape, vectorized over group members."""

    weight_id: str
    shape: str
    n: int
    slot_rows: list[np.ndarray]  # q-row indices per slot, each (n,)
    slot_flip: list[bool]  # True: this slot evaluates 1-q
    c0: float = 0.0
    c1: float = 1.0
    selectors: list[RowSelector] = field(default_factory=list)


@dataclass
class PllRole:
    is_latent: bool
    latent_slot: int = -1
    observed_value: bool = False


@dataclass
class PllFactor:
    weight_id: str
    kind: str
    slots: tuple  # per slot: ("latent", idx) or ("obs", value)
    polarities: tuple[bool, ...]


@dataclass
class PllGroup:
    """Examples sharing one grounded structure, vectorized for PLL terms."""

    n: int
    n_latent: int
    latent_rows: np.ndarray  # (n, L) q-row indices
    b_mat: np.ndarray  # (n, R) evidence log-odds per role
    roles: list[PllRole]
    factors: list[PllFactor]
    incident: list[list[int]]  # factor positions touching each role
    role_slot_of: list[int]  # latent slot index per role when latent else -1


@dataclass
class FactorGraphEncoding:
    fg: FactorGraph
    vocab: tuple[str, ...]
    static_x: np.ndarray
    name_ids: np.ndarray
    op: GraphOperator
    q_var_ids: np.ndarray  # variable index per q row
    q_pos: dict[int, int]  # variable index -> q row
    b_q: np.ndarray  # (n_q, 1)
    groups: list[FactorGroup]
    const_truth: dict[str, float]  # weight_id -> summed constant truths
    pll_groups: list[PllGroup]
    max_latent_per_example: int

    @property
    def n_q(self) -> int:
        return int(self.q_var_ids.size)

    def q_values_by_var(self, q: np.ndarray) -> dict[int, float]:
        q = np.asarray(q).ravel()
        return {int(v): float(q[r]) for r, v in enumerate(self.q_var_ids)}


def _reduce_factor(factor, fg: FactorGraph, q_pos: dict[int, int]):
    """Fold observed literals; return ("const", c) or (shape, slots, c0, c1).

    Slots are (q_row, flip); evaluating a slot gives P(literal true), which
    is q for flip=False and 1-q for flip=True.
    """
    slots = []
    for vid, pol in zip(factor.var_ids, factor.polarities):
        var = fg.variables[vid]
        if var.status == STATUS_OBSERVED:
            slots.append(("obs", bool(var.value) == pol))
        else:
            slots.append(("free", q_pos[vid], not pol))

    if factor.kind == KIND_IMPLICATION:
        ant, cons = slots[:-1], slots[-1]
        free_ant = []
        for s in ant:
            if s[0] == "obs":
                if not s[1]:
                    return ("const", 1.0)  # antecedent observed false
            else:
                free_ant.append((s[1], s[2]))
        if cons[0] == "obs":
            if cons[1]:
                return ("const", 1.0)
            if not free_ant:
                return ("const", 0.0)
            return (SHAPE_PROD, free_ant, 1.0, -1.0)
        # E = 1 - prod(ant true) * P(cons false)
        row, flip = cons[1], cons[2]
        return (SHAPE_PROD, free_ant + [(row, not flip)], 1.0, -1.0)

    if factor.kind == KIND_EQUIVALENCE:
        a, b = slots
        if a[0] == "obs" and b[0] == "obs":
            return ("const", 1.0 if a[1] == b[1] else 0.0)
        if a[0] == "obs" or b[0] == "obs":
            target = a[1] if a[0] == "obs" else b[1]
            row, flip = (b[1], b[2]) if a[0] == "obs" else (a[1], a[2])
            return (SHAPE_PROD, [(row, flip if target else (not flip))], 0.0, 1.0)
        return (SHAPE_EQUIV, [(a[1], a[2]), (b[1], b[2])], 0.0, 1.0)

    # exclusion: at most one literal true
    n_obs_true = sum(1 for s in slots if s[0] == "obs" and s[1])
    free = [(s[1], s[2]) for s in slots if s[0] == "free"]
    if n_obs_true >= 2:
        return ("const", 0.0)
    if not free:
        return ("const", 1.0)
    if n_obs_true == 1:
        return (SHAPE_PROD, [(row, not flip) for row, flip in free], 0.0, 1.0)
    return (SHAPE_EXCL0, free, 0.0, 1.0)


def _build_groups(fg: FactorGraph, q_pos: dict[int, int], n_q: int):
    buckets: dict[tuple, list[list]] = {}
    const_truth: dict[str, float] = {}
    for factor in fg.factors:
        reduced = _reduce_factor(factor, fg, q_pos)
        if reduced[0] == "const":
            const_truth[factor.weight_id] = const_truth.get(factor.weight_id, 0.0) + reduced[1]
            continue
        shape, slots, c0, c1 = reduced
        flips = tuple(f for _, f in slots)
        key = (factor.weight_id, shape, flips, c0, c1)
        buckets.setdefault(key, []).append([r for r, _ in slots])
    groups = []
    for (weight_id, shape, flips, c0, c1), rows in buckets.items():
        mat = np.asarray(rows, dtype=np.int64)
        slot_rows = [mat[:, j] for j in range(mat.shape[1])]
        groups.append(
            FactorGroup(
                weight_id=weight_id,
                shape=shape,
                n=mat.shape[0],
                slot_rows=slot_rows,
                slot_flip=list(flips),
                c0=c0,
                c1=c1,
                selectors=[RowSelector(col, n_q) for col in slot_rows],
            )
        )
    return groups, const_truth


def _build_pll_groups(fg: FactorGraph, q_pos: dict[int, int]):
    """Group per-example components by grounded structure for the M-step."""
    buckets: dict[tuple, dict] = {}
    n_examples = len(fg.examples)
    vars_by_example: list[list[int]] = [[] for _ in range(n_examples)]
    for vid, pos in enumerate(fg.example_of_var):
        vars_by_example[pos].append(vid)
    factors_by_example: list[list] = [[] for _ in range(n_examples)]
    for f in fg.factors:
        factors_by_example[fg.example_of_var[f.var_ids[0]]].append(f)

    max_latent = 0
    for pos in range(n_examples):
        vids = vars_by_example[pos]
        latent = [v for v in vids if fg.variables[v].status != STATUS_OBSERVED]
        latent_slot = {v: j for j, v in enumerate(latent)}
        max_latent = max(max_latent, len(latent))

        roles: list[PllRole] = []
        role_of_var: dict[int, int] = {}
        b_row: list[float] = []
        for v in vids:
            var = fg.variables[v]
            if var.is_attribute:
                continue
            role_of_var[v] = len(roles)
            if var.status == STATUS_OBSERVED:
                roles.append(PllRole(is_latent=False, observed_value=bool(var.value)))
                b_row.append(0.0)
            else:
                roles.append(PllRole(is_latent=True, latent_slot=latent_slot[v]))
                b_row.append(var.b)

        pfactors: list[PllFactor] = []
        incident: list[list[int]] = [[] for _ in roles]
        sig_factors = []
        for f in factors_by_example[pos]:
            spec = []
            for vid in f.var_ids:
                var = fg.variables[vid]
                if var.status == STATUS_OBSERVED:
                    spec.append(("obs", bool(var.value)))
                else:
                    spec.append(("latent", latent_slot[vid]))
            pf = PllFactor(f.weight_id, f.kind, tuple(spec), f.polarities)
            fpos = len(pfactors)
            pfactors.append(pf)
            for vid in f.var_ids:
                if vid in role_of_var:
                    incident[role_of_var[vid]].append(fpos)
            sig_factors.append((pf.weight_id, pf.kind, pf.slots, pf.polarities))

        sig = (
            tuple(
                (fg.variables[v].name, fg.variables[v].status, fg.variables[v].value)
                for v in vids
            ),
            tuple(sig_factors),
        )
        bucket = buckets.setdefault(
            sig,
            {
                "roles": roles,
                "factors": pfactors,
                "incident": incident,
                "latent_rows": [],
                "b_rows": [],
                "n_latent": len(latent),
            },
        )
        bucket["latent_rows"].append([q_pos[v] for v in latent])
        bucket["b_rows"].append(b_row)

    groups = []
    for bucket in buckets.values():
        latent_rows = np.asarray(bucket["latent_rows"], dtype=np.int64)
        if latent_rows.ndim == 1:
            latent_rows = latent_rows.reshape(len(bucket["latent_rows"]), 0)
        groups.append(
            PllGroup(
                n=latent_rows.shape[0],
                n_latent=bucket["n_latent"],
                latent_rows=latent_rows,
                b_mat=np.asarray(bucket["b_rows"], dtype=np.float64),
                roles=bucket["roles"],
                factors=bucket["factors"],
                incident=bucket["incident"],
                role_slot_of=[r.latent_slot if r.is_latent else -1 for r in bucket["roles"]],
            )
        )
    return groups, max_latent


def encode_factor_graph(fg: FactorGraph, vocab: tuple[str, ...] | None = None) -> FactorGraphEncoding:
    if vocab is None:
        vocab = graph_vocab(fg)
    vocab_pos = {name: i for i, name in enumerate(vocab)}
    n_vars, n_factors = len(fg.variables), len(fg.factors)
    n_nodes = n_vars + n_factors
    f_static = 2 + len(KIND_ORDER) + len(vocab)
    x = np.zeros((n_nodes, f_static))
    name_ids = np.zeros(n_nodes, dtype=np.int64)
    kind_col = {k: 2 + i for i, k in enumerate(KIND_ORDER)}

    def lookup(tag: str) -> int:
        if tag not in vocab_pos:
            raise GroundingError(f"name {tag!r} absent from the trained vocabulary")
        return vocab_pos[tag]

    for v in fg.variables:
        x[v.index, 0] = v.b
        x[v.index, 1] = float(v.value) if v.status == STATUS_OBSERVED else 0.0
        x[v.index, kind_col[v.status]] = 1.0
        nid = lookup(f"p:{v.name}")
        x[v.index, 2 + len(KIND_ORDER) + nid] = 1.0
        name_ids[v.index] = nid
    for f in fg.factors:
        row = n_vars + f.index
        x[row, kind_col["factor"]] = 1.0
        nid = lookup(f"r:{f.rule_name}")
        x[row, 2 + len(KIND_ORDER) + nid] = 1.0
        name_ids[row] = nid

    src = []
    dst = []
    for f in fg.factors:
        for vid in f.var_ids:
            src.append(vid)
            dst.append(n_vars + f.index)
    op = normalize_adjacency(
        np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64), n_nodes
    )

    q_var_ids = np.asarray(fg.free_var_ids, dtype=np.int64)
    q_pos = {int(v): r for r, v in enumerate(q_var_ids)}
    b_q = np.asarray([fg.variables[v].b for v in q_var_ids], dtype=np.float64).reshape(-1, 1)

    groups, const_truth = _build_groups(fg, q_pos, q_var_ids.size)
    pll_groups, max_latent = _build_pll_groups(fg, q_pos)

    return FactorGraphEncoding(
        fg=fg,
        vocab=vocab,
        static_x=x,
        name_ids=name_ids,
        op=op,
        q_var_ids=q_var_ids,
        q_pos=q_pos,
        b_q=b_q,
        groups=groups,
        const_truth=const_truth,
        pll_groups=pll_groups,
        max_latent_per_example=max_latent,
    )


def posterior_forward(
    tape: Tape, enc: FactorGraphEncoding, params: PosteriorParams
) -> tuple[Tensor, dict[str, Tensor]]:
    """Return (q, parameter tensors); q rows follow ``enc.q_var_ids``."""
    tensors = {name: tape.parameter(arr, name) for name, arr in params.arrays().items()}
    x = tape.hconcat(
        tape.constant(enc.static_x), tape.gather_rows(tensors["mu"], enc.name_ids)
    )
    h1 = tape.relu(
        tape.add(tape.scatter_matmul(enc.op, tape.matmul(x, tensors["W1"])), tensors["b1"])
    )
    h2 = tape.add(
        tape.scatter_matmul(enc.op, tape.matmul(h1, tensors["W2"])), tensors["b2"]
    )
    head = tape.add(
        tape.matmul(tape.gather_rows(h2, enc.q_var_ids), tensors["w_out"]), tensors["b_out"]
    )
    logits = tape.add(head, tape.constant(enc.b_q))
    return tape.sigmoid(logits), tensors


def posterior_marginals(params: PosteriorParams, enc: FactorGraphEncoding) -> np.ndarray:
    """Forward pass only; flat array of marginals aligned with q rows."""
    q, _ = posterior_forward(Tape(), enc, params)
    return q.data.ravel()
