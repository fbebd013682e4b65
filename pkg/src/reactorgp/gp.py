"""Genetic programming loop with a per-complexity elitist archive."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .codegen import print_policy
from .data import largest_remainder
from .expr import (Expr, TerminalSet, auto_cancel, complexity, crossover, depth, mutate_constants,
                   random_tree)

log = logging.getLogger(__name__)

RATIO_NAMES = ("crossover", "reproduction", "mutation", "cancelation", "new")


@dataclass
class GAConfig:
    population: int = 500
    iterations: int = 100
    r_c: float = 0.45
    r_r: float = 0.05
    r_m: float = 0.1
    r_a: float = 0.1
    r_n: float = 0.3
    tournament_size: int = 3
    init_depth: Tuple[int, int] = (2, 6)
    max_depth: int = 17
    const_range: Tuple[float, float] = (-2.0, 2.0)
    p_const: float = 0.3
    variables: Tuple[str, ...] = ("S", "T", "M", "P", "UA", "Q", "That", "Mhat")
    seed: int = 0

    def __post_init__(self):
        self.init_depth = tuple(self.init_depth)
        self.const_range = tuple(self.const_range)
        self.variables = tuple(self.variables)
        if abs(sum(self.ratios) - 1.0) > 1e-12:
            raise ValueError("population ratios must sum to 1")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.tournament_size < 1 or self.iterations < 0:
            raise ValueError("bad tournament size or iteration count")

    @property
    def ratios(self):
        return (self.r_c, self.r_r, self.r_m, self.r_a, self.r_n)

    def slot_counts(self) -> Dict[str, int]:
        return dict(zip(RATIO_NAMES, largest_remainder(self.population, self.ratios)))

    def terminals(self) -> TerminalSet:
        return TerminalSet(self.variables, const_range=self.const_range, p_const=self.p_const)


@dataclass
class Individual:
    expr: Expr
    fitness: float
    complexity: int = 0

    def __post_init__(self):
        if not self.complexity:
            self.complexity = complexity(self.expr)

    @property
    def penalty(self) -> float:
        return -self.fitness


def _rank_key(ind: Individual, index: int):
    # higher fitness first, then simpler, then earlier
    return (-ind.fitness, ind.complexity, index)


def tournament_select(population: Sequence[Individual], k: int, rng) -> Individual:
    if not population:
        raise ValueError("empty population")
    picks = rng.integers(0, len(population), size=k)
    best = min(picks, key=lambda i: _rank_key(population[i], int(i)))
    return population[int(best)]


class ParetoArchive:
    """Best individual seen so far at each complexity level."""

    def __init__(self):
        self.best: Dict[int, Individual] = {}

    def update(self, ind: Individual) -> bool:
        if not math.isfinite(ind.fitness):
            return False
        cur = self.best.get(ind.complexity)
        if cur is None or ind.fitness > cur.fitness:
            self.best[ind.complexity] = ind
            return True
        return False

    def levels(self) -> List[int]:
        return sorted(self.best)

    def __len__(self):
        return len(self.best)

    def __getitem__(self, level):
        return self.best[level]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["complexity", "penalty", "expression"])
            for c in self.levels():
                ind = self.best[c]
                w.writerow([c, format(ind.penalty, ".17g"), print_policy(ind.expr)])

    @classmethod
    def from_csv(cls, path) -> "ParetoArchive":
        from .codegen import parse_policy
        arch = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                e = parse_policy(row["expression"])
                arch.best[int(row["complexity"])] = Individual(e, -float(row["penalty"]),
                                                               int(row["complexity"]))
        return arch


def pareto_front(archive: ParetoArchive) -> List[Tuple[int, float, Expr]]:
    """Ascending complexity, keeping only levels that strictly lower the penalty."""
    if len(archive) == 0:
        raise ValueError("empty archive")
    front = []
    best = math.inf
    for c in archive.levels():
        ind = archive[c]
        if ind.penalty < best:
            front.append((c, ind.penalty, ind.expr))
            best = ind.penalty
    return front


class Evaluator:
    """Fitness with a cache keyed by canonical text; optional parallel map."""

    def __init__(self, fitness_fn: Callable[[Expr], float], map_fn=map):
        self.fitness_fn = fitness_fn
        self.map_fn = map_fn
        self.cache: Dict[str, float] = {}
        self.evaluations = 0

    def __call__(self, exprs: Sequence[Expr]) -> List[float]:
        keys = [print_policy(e) for e in exprs]
        todo: Dict[str, Expr] = {}
        for k, e in zip(keys, exprs):
            if k not in self.cache and k not in todo:
                todo[k] = e
        if todo:
            results = list(self.map_fn(_safe_call, [(self.fitness_fn, e) for e in todo.values()]))
            for k, v in zip(todo, results):
                self.cache[k] = v
            self.evaluations += len(todo)
        return [self.cache[k] for k in keys]


def _safe_call(args):
    fn, e = args
    try:
        v = float(fn(e))
    except Exception as exc:  # a broken individual must not stop the run
        log.warning("fitness evaluation failed for %s: %s", print_policy(e), exc)
        return -math.inf
    return v if not math.isnan(v) else -math.inf


def _rng(seed, generation, stream, slot):
    return np.random.default_rng([seed, generation, stream, slot])


@dataclass
class GenerationRecord:
    generation: int
    best_penalty: float
    mean_penalty: float
    evaluations: int
    counts: Dict[str, int] = field(default_factory=dict)
    population_size: int = 0

    def to_json(self) -> str:
        return json.dumps({"generation": self.generation,
                           "best_penalty": self.best_penalty,
                           "mean_penalty": self.mean_penalty,
                           "evaluations": self.evaluations}, sort_keys=True)


def _record(gen, pop, evaluator, counts=None):
    pens = [ind.penalty for ind in pop if math.isfinite(ind.fitness)]
    return GenerationRecord(gen, min(pens) if pens else math.inf,
                            float(np.mean(pens)) if pens else math.inf,
                            evaluator.evaluations, dict(counts or {}), len(pop))


def evolve(config: GAConfig, fitness_fn: Callable[[Expr], float], map_fn=map,
           on_generation: Optional[Callable[[GenerationRecord, ParetoArchive], None]] = None
           ) -> ParetoArchive:
    """Run the GA and return the per-complexity archive.

    Each generation is assembled from crossover offspring, reproduced
    tournament winners, terminal-mutated variants of the best individual per
    complexity level, canceled individuals and fresh random trees, in the
    proportions of ``config`` (largest-remainder rounding keeps the size
    exactly N). All randomness comes from generators seeded with
    (seed, generation, stream, slot), so results do not depend on ``map_fn``.
    """
    evaluator = Evaluator(fitness_fn, map_fn)
    terms = config.terminals()
    lo, hi = config.init_depth
    N = config.population

    def evaluate(exprs):
        return [Individual(e, f) for e, f in zip(exprs, evaluator(exprs))]

    pop = evaluate([random_tree(_rng(config.seed, 0, 0, i), lo, hi, terms) for i in range(N)])
    archive = ParetoArchive()
    for ind in pop:
        archive.update(ind)
    if on_generation:
        on_generation(_record(0, pop, evaluator), archive)

    counts = config.slot_counts()
    for gen in range(1, config.iterations + 1):
        new: List[Expr] = []
        k = config.tournament_size

        # crossover of tournament winners
        i = 0
        while len(new) < counts["crossover"]:
            rng = _rng(config.seed, gen, 1, i)
            a = tournament_select(pop, k, rng).expr
            b = tournament_select(pop, k, rng).expr
            c1, c2 = crossover(a, b, rng, config.max_depth)
            new.append(c1)
            if len(new) < counts["crossover"]:
                new.append(c2)
            i += 1

        # reproduction
        for i in range(counts["reproduction"]):
            new.append(tournament_select(pop, k, _rng(config.seed, gen, 2, i)).expr)

        # cancelation: canceled copies of the top-ranked individuals
        ranked = sorted(range(len(pop)), key=lambda j: _rank_key(pop[j], j))
        canceled = [auto_cancel(pop[j].expr) for j in ranked]
        new.extend(canceled[:counts["cancelation"]])

        # terminal mutation around the best of each complexity level
        new.extend(_mutants(pop, config, gen, evaluator, counts["mutation"], counts["cancelation"]))

        # fresh individuals
        for i in range(counts["new"]):
            new.append(random_tree(_rng(config.seed, gen, 5, i), lo, hi, terms))

        assert len(new) == N
        pop = evaluate(new)
        for ind in pop:
            archive.update(ind)
        if on_generation:
            on_generation(_record(gen, pop, evaluator, counts), archive)
    return archive


def _mutants(pop, config, gen, evaluator, n_keep, per_best):
    if n_keep == 0:
        return []
    best: Dict[int, Tuple[int, Individual]] = {}
    for j, ind in enumerate(pop):
        cur = best.get(ind.complexity)
        if cur is None or _rank_key(ind, j) < _rank_key(cur[1], cur[0]):
            best[ind.complexity] = (j, ind)
    per_best = max(per_best, 1)
    variants = []
    for level in sorted(best):
        parent = best[level][1].expr
        for v in range(per_best):
            variants.append(mutate_constants(parent, _rng(config.seed, gen, 4, level * 100003 + v)))
    scores = evaluator(variants)
    scored = [Individual(e, f) for e, f in zip(variants, scores)]
    order = sorted(range(len(scored)), key=lambda j: _rank_key(scored[j], j))
    picked = [scored[j].expr for j in order[:n_keep]]
    while len(picked) < n_keep:
        picked.append(picked[len(picked) % len(order)])
    return picked
