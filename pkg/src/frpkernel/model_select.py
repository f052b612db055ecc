"""Budgeted two-phase model selection over a synthetic model space.

Phase one scores cheap proxies over genomes found by regularized evolution
until N models are scored; phase two runs successive halving on the top K,
training survivors progressively longer and keeping the top 1/eta each round.
A planner derives (N, K, U) from a hard response-time budget up front, so a
run can never overshoot it: simulated cost is charged per score and per epoch
and both phases stop at their planned counts.

The model space hides a ground-truth quality per genome behind the scorer and
trainer interfaces. Quality is separable across genome coordinates, which
gives mutation-based search real signal and makes the brute-force optimum
cheap to compute for oracle checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from . import rng as rnglib


class InfeasibleBudget(Exception):
    """The budget cannot pay for even one scored model and one training epoch."""


@dataclass(frozen=True)
class ModelGenome:
    genome_id: int
    params: tuple[int, ...]


class ModelSpace:
    """Integer-box genome space with hidden per-genome quality and curve rate.

    a_final averages per-coordinate contribution tables drawn once from the
    space seed, so it lies in [0, 1] and the global optimum is the per-
    coordinate argmax. tau sets how fast the training curve approaches
    a_final. Selection code must only reach these through a scorer/trainer.
    """

    def __init__(self, dims: tuple[int, ...], seed: int = 0,
                 tau_range: tuple[float, float] = (2.0, 8.0)):
        if not dims or any(d < 1 for d in dims):
            raise ValueError("dims must be positive")
        self.dims = tuple(int(d) for d in dims)
        self.seed = seed
        self.tau_range = tau_range
        gen = rnglib.derive(seed, "space")
        self._contrib = [gen.random(d) for d in self.dims]

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    def genome(self, params: tuple[int, ...]) -> ModelGenome:
        self._check(params)
        gid = 0
        for value, dim in zip(params, self.dims):
            gid = gid * dim + value
        return ModelGenome(gid, tuple(params))

    def _check(self, params) -> None:
        if len(params) != len(self.dims):
            raise ValueError("wrong genome length")
        if any(not 0 <= v < d for v, d in zip(params, self.dims)):
            raise ValueError(f"genome {params} out of bounds")

    def random_params(self, gen) -> tuple[int, ...]:
        return tuple(int(gen.integers(0, d)) for d in self.dims)

    def mutate_params(self, params: tuple[int, ...], gen) -> tuple[int, ...]:
        """Resample one coordinate to a different value (when possible)."""
        idx = int(gen.integers(0, len(self.dims)))
        if self.dims[idx] == 1:
            return tuple(params)
        new = int(gen.integers(0, self.dims[idx] - 1))
        if new >= params[idx]:
            new += 1
        out = list(params)
        out[idx] = new
        return tuple(out)

    def enumerate_params(self):
        return itertools.product(*(range(d) for d in self.dims))

    # hidden ground truth; selection code must not call these directly
    def a_final(self, params: tuple[int, ...]) -> float:
        self._check(params)
        return float(sum(t[v] for t, v in zip(self._contrib, params)) / len(self.dims))

    def tau(self, params: tuple[int, ...]) -> float:
        lo, hi = self.tau_range
        u = rnglib.derive(self.seed, "tau", params).random()
        return lo + (hi - lo) * float(u)

    def oracle_best(self) -> ModelGenome:
        """Brute-force argmax of the hidden quality; test/report oracle only."""
        best = tuple(int(t.argmax()) for t in self._contrib)
        return self.genome(best)


@dataclass(frozen=True)
class ProxyScorer:
    """score = rho * a_final + (1 - rho) * sigma-scaled unit noise."""

    space: ModelSpace
    rho: float = 1.0
    sigma: float = 0.0
    cost: float = 1.0
    label: str = "proxy"

    def score(self, params: tuple[int, ...]) -> float:
        value = self.rho * self.space.a_final(params)
        if self.rho < 1.0:
            noise = rnglib.derive(self.space.seed, "score", self.label, params)
            value += (1.0 - self.rho) * self.sigma * float(noise.standard_normal())
        return value


@dataclass(frozen=True)
class CombinedScorer:
    """Weighted blend of proxies, e.g. an expressivity-like and a
    trainability-like signal; cost is the sum of the parts."""

    parts: tuple[tuple[float, ProxyScorer], ...]

    @property
    def cost(self) -> float:
        return sum(p.cost for _, p in self.parts)

    def score(self, params: tuple[int, ...]) -> float:
        return sum(w * p.score(params) for w, p in self.parts)


def default_combined_scorer(space: ModelSpace, sigma: float = 0.1,
                            cost: float = 1.0) -> CombinedScorer:
    half = cost / 2.0
    return CombinedScorer((
        (0.5, ProxyScorer(space, rho=0.85, sigma=sigma, cost=half, label="expressivity")),
        (0.5, ProxyScorer(space, rho=0.75, sigma=sigma, cost=half, label="trainability")),
    ))


class Trainer:
    """Exponential-saturation training curves with optional observation noise.

    Accuracy after u cumulative epochs is a_final * (1 - exp(-u / tau)) plus
    noise, so it starts at zero and approaches the hidden quality; ranking by
    trained accuracy therefore converges to ranking by quality. Each charged
    epoch optionally pulls one batch from a data source to overlap data
    preparation with the (simulated) training cost.
    """

    def __init__(self, space: ModelSpace, cost_per_epoch: float = 1.0,
                 noise_sigma: float = 0.0, data_source=None):
        self.space = space
        self.cost_per_epoch = cost_per_epoch
        self.noise_sigma = noise_sigma
        self.data_source = data_source
        self.batches_consumed = 0

    def charge(self, epochs: int) -> None:
        if self.data_source is None:
            self.batches_consumed += epochs
            return
        for _ in range(epochs):
            self.data_source()
            self.batches_consumed += 1

    def accuracy(self, params: tuple[int, ...], cumulative_epochs: float) -> float:
        base = self.space.a_final(params) * (1.0 - math.exp(
            -cumulative_epochs / self.space.tau(params)))
        if self.noise_sigma > 0.0:
            noise = rnglib.derive(self.space.seed, "train", params,
                                  round(cumulative_epochs, 6))
            base += self.noise_sigma * float(noise.standard_normal())
        return base


@dataclass(frozen=True)
class SelectionPlan:
    budget: float
    n_to_score: int
    candidate_size: int
    initial_epochs: int
    eta: int
    filter_fraction: float
    score_cost: float
    epoch_cost: float

    @property
    def planned_filter_cost(self) -> float:
        return self.n_to_score * self.score_cost

    @property
    def planned_refine_cost(self) -> float:
        return refine_epoch_total(self.candidate_size, self.initial_epochs,
                                  self.eta) * self.epoch_cost


def halving_rounds(k: int, eta: int) -> int:
    if k <= 1:
        return 1
    return max(1, math.ceil(math.log(k, eta)))


def refine_epoch_total(k: int, initial_epochs: int, eta: int) -> int:
    """Exact epochs successive halving charges for k a power of eta."""
    return k * initial_epochs * halving_rounds(k, eta)


def plan_budget(budget: float, score_cost: float, epoch_cost: float,
                eta: int = 2, filter_fraction: float = 0.2,
                initial_epochs: int = 1) -> SelectionPlan:
    if budget <= 0 or score_cost <= 0 or epoch_cost <= 0:
        raise ValueError("budget and costs must be positive")
    if eta < 2:
        raise ValueError("eta must be >= 2")
    if not 0.0 < filter_fraction < 1.0:
        raise ValueError("filter_fraction must be in (0, 1)")

    n = int(filter_fraction * budget / score_cost)
    if n < 1:
        raise InfeasibleBudget("filter budget cannot pay for one score")
    refine_budget = (1.0 - filter_fraction) * budget
    k = largest_feasible_k(n, refine_budget, epoch_cost, eta, initial_epochs)
    if k is None:
        raise InfeasibleBudget("refine budget cannot pay for one training run")
    return SelectionPlan(budget, n, k, initial_epochs, eta, filter_fraction,
                         score_cost, epoch_cost)


def largest_feasible_k(n: int, refine_budget: float, epoch_cost: float,
                       eta: int, initial_epochs: int) -> int | None:
    best = None
    k = 1
    while k <= n:
        if refine_epoch_total(k, initial_epochs, eta) * epoch_cost <= refine_budget:
            best = k
        k *= eta
    return best


@dataclass(frozen=True)
class ScoredModel:
    genome: ModelGenome
    score: float


def explore_and_score(space: ModelSpace, scorer, n: int, workers: int = 1,
                      seed: int = 0, population_size: int = 16,
                      sample_size: int = 4) -> list[ScoredModel]:
    """Regularized evolution until n distinct genomes are scored.

    A queue-shaped population holds the most recent genomes; each step samples
    a few members, mutates the best-scoring sample, scores the child, and
    evicts the oldest. Steps are dealt round-robin to per-worker RNG streams
    derived from the seed, so any worker count replays deterministically.
    Duplicate proposals fall back to fresh random genomes, then to the first
    unscored genome in enumeration order, so small spaces get fully covered.
    n is capped at the space size.
    """
    if n < 1 or workers < 1:
        raise ValueError("n and workers must be >= 1")
    n = min(n, space.size)
    gens = [rnglib.derive(seed, "explore", w) for w in range(workers)]

    seen: dict[tuple[int, ...], float] = {}
    scored: list[ScoredModel] = []
    population: list[ScoredModel] = []

    def admit(params, gen) -> None:
        params = _dedup(params, seen, space, gen)
        model = ScoredModel(space.genome(params), scorer.score(params))
        seen[params] = model.score
        scored.append(model)
        population.append(model)
        if len(population) > population_size:
            population.pop(0)

    step = 0
    while len(scored) < n:
        gen = gens[step % workers]
        step += 1
        if len(scored) < min(population_size, n):
            admit(space.random_params(gen), gen)
            continue
        picks = gen.choice(len(population), size=min(sample_size, len(population)),
                           replace=False)
        parent = max((population[int(i)] for i in picks),
                     key=lambda m: (m.score, -m.genome.genome_id))
        admit(space.mutate_params(parent.genome.params, gen), gen)
    return scored


def _dedup(params, seen, space, gen, tries: int = 16):
    if params not in seen:
        return params
    for _ in range(tries):
        cand = space.random_params(gen)
        if cand not in seen:
            return cand
    for cand in space.enumerate_params():
        if tuple(cand) not in seen:
            return tuple(cand)
    raise RuntimeError("space exhausted")  # unreachable: n is capped at size


def take_candidates(scored: list[ScoredModel], k: int) -> list[ScoredModel]:
    """Top k by score; ties break toward the lower genome id."""
    if len(scored) < k:
        raise ValueError(f"need at least {k} scored models, have {len(scored)}")
    ranked = sorted(scored, key=lambda m: (-m.score, m.genome.genome_id))
    return ranked[:k]


@dataclass
class RefineOutcome:
    winner: ModelGenome
    epochs_charged: int
    survivor_history: list[int] = field(default_factory=list)
    survivor_ids: list[list[int]] = field(default_factory=list)
    final_accuracy: float = 0.0


def refine(candidates: list[ScoredModel], initial_epochs: int, eta: int,
           trainer: Trainer) -> RefineOutcome:
    """Successive halving with cumulative training.

    Round r trains every survivor initial_epochs * eta**r further epochs and
    keeps the top ceil(count / eta) by current accuracy (ties toward lower
    genome id), stopping once a single survivor remains.
    """
    if not candidates:
        raise ValueError("empty candidate set")
    survivors = [m.genome for m in candidates]
    trained: dict[int, int] = {g.genome_id: 0 for g in survivors}
    accuracy: dict[int, float] = {}
    history = [len(survivors)]
    id_history = [[g.genome_id for g in survivors]]
    epochs_charged = 0
    round_epochs = initial_epochs

    while True:
        for genome in survivors:
            trained[genome.genome_id] += round_epochs
            trainer.charge(round_epochs)
            epochs_charged += round_epochs
            accuracy[genome.genome_id] = trainer.accuracy(
                genome.params, trained[genome.genome_id])
        if len(survivors) == 1:
            break
        keep = math.ceil(len(survivors) / eta)
        survivors = sorted(
            survivors,
            key=lambda g: (-accuracy[g.genome_id], g.genome_id))[:keep]
        history.append(len(survivors))
        id_history.append([g.genome_id for g in survivors])
        if len(survivors) == 1:
            break
        round_epochs *= eta

    winner = survivors[0]
    return RefineOutcome(winner, epochs_charged, history, id_history,
                         accuracy[winner.genome_id])


@dataclass
class SelectionResult:
    genome: ModelGenome
    elapsed: float
    filter_cost: float
    refine_cost: float
    plan: SelectionPlan
    scored_count: int
    epochs_charged: int
    survivor_history: list[int]


def select(space: ModelSpace, scorer, trainer: Trainer, budget: float,
           eta: int = 2, filter_fraction: float = 0.2, initial_epochs: int = 1,
           workers: int = 1, seed: int = 0) -> SelectionResult:
    """Plan, score, shortlist, and halve; simulated cost never exceeds budget."""
    plan = plan_budget(budget, scorer.cost, trainer.cost_per_epoch, eta,
                       filter_fraction, initial_epochs)
    scored = explore_and_score(space, scorer, plan.n_to_score, workers, seed)

    k = plan.candidate_size
    if k > len(scored):  # space smaller than the planned shortlist
        k = largest_feasible_k(len(scored), (1.0 - filter_fraction) * budget,
                               trainer.cost_per_epoch, eta, initial_epochs)
    candidates = take_candidates(scored, k)
    outcome = refine(candidates, initial_epochs, eta, trainer)

    filter_cost = len(scored) * scorer.cost
    refine_cost = outcome.epochs_charged * trainer.cost_per_epoch
    elapsed = filter_cost + refine_cost
    assert elapsed <= budget + 1e-9, "budget overshoot"
    return SelectionResult(outcome.winner, elapsed, filter_cost, refine_cost,
                           plan, len(scored), outcome.epochs_charged,
                           outcome.survivor_history)


def oracle_regret(space: ModelSpace, genome: ModelGenome) -> float:
    """Quality gap to the brute-force optimum; reporting/test oracle only."""
    return space.a_final(space.oracle_best().params) - space.a_final(genome.params)
