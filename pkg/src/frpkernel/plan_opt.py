"""Candidate plan generation by cardinality mutation, plus online selection.

A toy cost-based optimizer enumerates bushy join trees by dynamic programming
over relation subsets. Instead of hint sets, plan diversity comes from
re-running that optimizer under multiplicatively perturbed cardinality
estimates; the unmutated base plan is always kept. An upper-confidence bandit
then picks among the candidates per query template and learns from observed
latencies, which depend only on true cardinalities, never on the estimates.

Cost model per node (cards taken from whichever estimate view is in force):
scan costs its row count; a hash join costs 1.5 * (left + right) + output,
and a nested-loop join costs left + left * right + output. Plan cost is the
sum over all nodes, so it is C_out-like with per-algorithm input terms.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from itertools import combinations

from . import rng as rnglib

HASH_JOIN = "hash"
NESTED_LOOP = "nl"

HASH_INPUT_FACTOR = 1.5


def edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class RelStats:
    true_rows: float
    est_rows: float


class Catalog:
    """True and estimated base cardinalities and pairwise join selectivities."""

    def __init__(self, relations: dict[str, RelStats],
                 selectivities: dict[tuple[str, str], tuple[float, float]]):
        for name, stats in relations.items():
            if stats.true_rows <= 0 or stats.est_rows <= 0:
                raise ValueError(f"rows for {name} must be positive")
        self.relations = dict(relations)
        self.selectivities = {}
        for pair, (true_sel, est_sel) in selectivities.items():
            if true_sel <= 0 or est_sel <= 0:
                raise ValueError(f"selectivity for {pair} must be positive")
            a, b = pair
            if a not in relations or b not in relations:
                raise ValueError(f"selectivity references unknown relation {pair}")
            self.selectivities[edge_key(a, b)] = (float(true_sel), float(est_sel))

    def has(self, name: str) -> bool:
        return name in self.relations


@dataclass(frozen=True)
class Query:
    relations: tuple[str, ...]
    joins: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if len(self.relations) != len(set(self.relations)):
            raise ValueError("duplicate relations in query")
        for a, b in self.joins:
            if a not in self.relations or b not in self.relations:
                raise ValueError(f"join ({a}, {b}) references non-query relation")

    @property
    def template_id(self) -> str:
        text = ",".join(sorted(self.relations)) + ";" + ",".join(
            "-".join(edge_key(a, b)) for a, b in sorted(map(lambda e: edge_key(*e), self.joins)))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Scan:
    relation: str

    def key(self) -> str:
        return self.relation

    def leaves(self) -> frozenset:
        return frozenset([self.relation])


@dataclass(frozen=True)
class Join:
    left: "Scan | Join"
    right: "Scan | Join"
    algo: str

    def key(self) -> str:
        return f"({self.left.key()} {self.algo} {self.right.key()})"

    def leaves(self) -> frozenset:
        return self.left.leaves() | self.right.leaves()


PlanTree = Scan | Join


@dataclass(frozen=True)
class CardinalityVector:
    """One estimate view: base rows per relation plus selectivity per edge."""

    rels: tuple[str, ...]
    rows: tuple[float, ...]
    edges: tuple[tuple[str, str], ...]
    sels: tuple[float, ...]

    def __post_init__(self):
        if any(v <= 0 for v in self.rows + self.sels):
            raise ValueError("cardinality entries must be positive")

    def row_of(self, rel: str) -> float:
        return self.rows[self.rels.index(rel)]

    def sel_of(self, a: str, b: str) -> float:
        key = edge_key(a, b)
        if key in self.edges:
            return self.sels[self.edges.index(key)]
        return 1.0

    def values(self) -> tuple[float, ...]:
        return self.rows + self.sels


def estimate_vector(query: Query, catalog: Catalog) -> CardinalityVector:
    return _vector(query, catalog, use_true=False)


def true_vector(query: Query, catalog: Catalog) -> CardinalityVector:
    return _vector(query, catalog, use_true=True)


def _vector(query: Query, catalog: Catalog, use_true: bool) -> CardinalityVector:
    for rel in query.relations:
        if not catalog.has(rel):
            raise ValueError(f"unknown relation {rel}")
    rels = tuple(sorted(query.relations))
    rows = tuple(catalog.relations[r].true_rows if use_true
                 else catalog.relations[r].est_rows for r in rels)
    edges = tuple(sorted(edge_key(a, b) for a, b in query.joins))
    sels = tuple((catalog.selectivities.get(e, (1.0, 1.0))[0 if use_true else 1])
                 for e in edges)
    return CardinalityVector(rels, rows, edges, sels)


@dataclass(frozen=True)
class MutationGrid:
    factors: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0, 10.0)

    def __post_init__(self):
        if 1.0 not in self.factors or any(f <= 0 for f in self.factors):
            raise ValueError("factor grid must be positive and contain 1")


def mutate_cards(cards: CardinalityVector, grid: MutationGrid, gen) -> CardinalityVector:
    """Multiply every entry by an independent uniform draw from the grid."""
    values = cards.values()
    factors = [grid.factors[int(i)] for i in
               gen.integers(0, len(grid.factors), size=len(values))]
    mutated = [v * f for v, f in zip(values, factors)]
    n = len(cards.rows)
    return CardinalityVector(cards.rels, tuple(mutated[:n]),
                             cards.edges, tuple(mutated[n:]))


# -- costing ---------------------------------------------------------------

def plan_card(plan: PlanTree, view: CardinalityVector) -> float:
    if isinstance(plan, Scan):
        return view.row_of(plan.relation)
    card = 1.0
    for rel in plan.leaves():
        card *= view.row_of(rel)
    rels = sorted(plan.leaves())
    for a, b in combinations(rels, 2):
        card *= view.sel_of(a, b)
    return card


def plan_cost(plan: PlanTree, view: CardinalityVector) -> float:
    if isinstance(plan, Scan):
        return view.row_of(plan.relation)
    lc = plan_card(plan.left, view)
    rc = plan_card(plan.right, view)
    out = plan_card(plan, view)
    if plan.algo == HASH_JOIN:
        here = HASH_INPUT_FACTOR * (lc + rc) + out
    elif plan.algo == NESTED_LOOP:
        here = lc + lc * rc + out
    else:
        raise ValueError(f"unknown join algorithm {plan.algo!r}")
    return plan_cost(plan.left, view) + plan_cost(plan.right, view) + here


def true_cost(plan: PlanTree, catalog: Catalog) -> float:
    """Cost under true cardinalities; the execution-side ground truth."""
    leaves = plan.leaves()
    joins = tuple(e for e in catalog.selectivities
                  if e[0] in leaves and e[1] in leaves)
    query = Query(tuple(sorted(leaves)), joins)
    return plan_cost(plan, true_vector(query, catalog))


def simulate_latency(plan: PlanTree, catalog: Catalog, gen=None,
                     noise_frac: float = 0.05, unit: float = 1.0) -> float:
    """Observed latency: true cost times unit time, plus relative noise."""
    base = true_cost(plan, catalog) * unit
    if gen is None or noise_frac <= 0:
        return base
    return base * (1.0 + noise_frac * float(gen.uniform(-1.0, 1.0)))


# -- optimization -------------------------------------------------------------

def optimize_base(query: Query, catalog: Catalog,
                  view: CardinalityVector | None = None) -> PlanTree:
    """Bushy dynamic-programming join enumeration under an estimate view.

    Considers every split of every relation subset with both join algorithms;
    cost ties break on the canonical plan string, so results are stable.
    """
    if len(query.relations) > 8:
        raise ValueError("queries beyond 8 relations are out of scope")
    if view is None:
        view = estimate_vector(query, catalog)
    rels = sorted(query.relations)
    if not rels:
        raise ValueError("empty query")

    def subset_card(subset) -> float:
        card = 1.0
        for rel in subset:
            card *= view.row_of(rel)
        for a, b in combinations(sorted(subset), 2):
            card *= view.sel_of(a, b)
        return card

    # per subset: (best cost, canonical key, plan, output card)
    best: dict[frozenset, tuple[float, str, PlanTree, float]] = {}
    for rel in rels:
        plan = Scan(rel)
        best[frozenset([rel])] = (view.row_of(rel), plan.key(), plan, view.row_of(rel))

    for size in range(2, len(rels) + 1):
        for subset in combinations(rels, size):
            sset = frozenset(subset)
            out = subset_card(sset)
            entry = None
            for left_size in range(1, size):
                for left in combinations(subset, left_size):
                    lset = frozenset(left)
                    lcost, _, lplan, lcard = best[lset]
                    rcost, _, rplan, rcard = best[sset - lset]
                    for algo in (HASH_JOIN, NESTED_LOOP):
                        if algo == HASH_JOIN:
                            here = HASH_INPUT_FACTOR * (lcard + rcard) + out
                        else:
                            here = lcard + lcard * rcard + out
                        cost = lcost + rcost + here
                        if entry is not None and cost > entry[0]:
                            continue
                        plan = Join(lplan, rplan, algo)
                        cand = (cost, plan.key(), plan, out)
                        if entry is None or cand[:2] < entry[:2]:
                            entry = cand
            best[sset] = entry
    return best[frozenset(rels)][2]


def gen_candidates(query: Query, catalog: Catalog, n_plans: int,
                   grid: MutationGrid = MutationGrid(), gen=None,
                   seed: int = 0) -> list[PlanTree]:
    """Base plan plus up to n_plans de-duplicated mutation-derived plans."""
    if n_plans < 0:
        raise ValueError("n_plans must be >= 0")
    if gen is None:
        gen = rnglib.derive(seed, "plan-mutate")
    base_view = estimate_vector(query, catalog)
    base = optimize_base(query, catalog, base_view)
    plans = [base]
    seen = {base.key()}
    for _ in range(n_plans):
        mutated = mutate_cards(base_view, grid, gen)
        plan = optimize_base(query, catalog, mutated)
        if plan.key() not in seen:
            seen.add(plan.key())
            plans.append(plan)
    return plans


# -- online selection -----------------------------------------------------------

@dataclass
class PlanStats:
    pulls: int = 0
    mean_latency: float = 0.0


@dataclass
class SelectorState:
    """Per-(template, plan) pull counts and incrementally averaged latency."""

    explore_weight: float = 2.0
    rows: dict[str, dict[str, PlanStats]] = field(default_factory=dict)

    def template(self, template_id: str) -> dict[str, PlanStats]:
        return self.rows.setdefault(template_id, {})


def select_plan(template_id: str, candidates: list[PlanTree],
                state: SelectorState) -> PlanTree:
    """Untried candidates first (in candidate order), then lowest UCB score."""
    if not candidates:
        raise ValueError("no candidates")
    stats = state.template(template_id)
    for plan in candidates:
        if plan.key() not in stats or stats[plan.key()].pulls == 0:
            return plan
    total = sum(stats[p.key()].pulls for p in candidates)
    best, best_score = None, None
    for plan in candidates:
        row = stats[plan.key()]
        bonus = state.explore_weight * math.sqrt(math.log(total) / row.pulls)
        score = row.mean_latency - bonus
        if best_score is None or score < best_score:
            best, best_score = plan, score
    return best


def feedback(template_id: str, plan: PlanTree, observed_latency: float,
             state: SelectorState) -> SelectorState:
    stats = state.template(template_id)
    row = stats.setdefault(plan.key(), PlanStats())
    row.pulls += 1
    row.mean_latency += (observed_latency - row.mean_latency) / row.pulls
    return state


class UcbSelector:
    """Default pluggable selector: choose/observe around a SelectorState."""

    def __init__(self, explore_weight: float = 2.0):
        self.state = SelectorState(explore_weight=explore_weight)

    def choose(self, template_id: str, candidates: list[PlanTree]) -> PlanTree:
        return select_plan(template_id, candidates, self.state)

    def observe(self, template_id: str, plan: PlanTree, latency: float) -> None:
        feedback(template_id, plan, latency, self.state)
