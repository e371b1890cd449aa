"""Multi-objective evolutionary search over patches.

NSGA-II with a (mu + lambda) generation step: elites are copied into the
offspring unchanged, the rest come from tournament selection, crossover,
and mutation; parents and offspring are merged before survivor selection
by non-domination rank and crowding distance. Both objectives (cost,
error) are minimized.

Every evaluated valid individual feeds a persistent archive of globally
non-dominated (patch, fitness) pairs; the archive, not just the final
population, is the search product. Fitness is cached per patch so no
patch is evaluated twice in one run.

Runs are deterministic for a fixed seed and workload. The environment
variable GEVO_MINI_THREADS (default 1) sets how many worker threads
evaluate fresh patches; threading never touches the RNG, so it does not
affect results.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .fitness import Fitness, Workload, evaluate, holdout_report
from .genome import (CrossoverError, MutationError, Patch,
                     PatchApplicationError, apply_patch, crossover,
                     default_child_validity, mutate, patch_dumps,
                     patch_to_obj)
from .ir import Module


class SearchError(Exception):
    pass


@dataclass
class SearchConfig:
    population: int = 64
    generations: int = 20
    elites: int = 16
    initial_mutations: int = 3
    crossover_prob: float = 0.8
    mutation_prob: float = 0.3
    tournament_size: int = 2
    seed: int = 0

    def check(self):
        if self.population < 1:
            raise SearchError("population must be at least 1")
        if not 0 <= self.elites <= self.population:
            raise SearchError("elites must fit in the population")
        if self.generations < 0:
            raise SearchError("generations must be non-negative")


@dataclass
class Individual:
    patch: Patch
    fitness: Fitness
    rank: int = 0
    crowding: float = 0.0


@dataclass
class ArchiveEntry:
    patch: Patch
    fitness: Fitness
    holdout: Fitness | None = None


@dataclass
class SearchResult:
    baseline: Fitness
    population: list[Individual]
    archive: list[ArchiveEntry]
    history: list[dict]
    evaluations: int
    wall_time: float


# ---------------------------------------------------------------------------
# NSGA-II primitives
# ---------------------------------------------------------------------------

def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """Pareto dominance for minimization; equal points do not dominate."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def nondominated_sort(points: list[tuple[float, float]]) -> list[list[int]]:
    """Indices grouped into fronts, best first."""
    n = len(points)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(points[i], points[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(points[j], points[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    fronts = [[i for i in range(n) if counts[i] == 0]]
    while True:
        nxt = []
        for i in fronts[-1]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        if not nxt:
            break
        fronts.append(sorted(nxt))
    return fronts


def crowding_distance(points: list[tuple[float, float]],
                      front: list[int]) -> dict[int, float]:
    """Crowding distances within one front; boundaries get infinity."""
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: float("inf") for i in front}
    for axis in (0, 1):
        order = sorted(front, key=lambda i: (points[i][axis], i))
        lo = points[order[0]][axis]
        hi = points[order[-1]][axis]
        dist[order[0]] = dist[order[-1]] = float("inf")
        if hi == lo or hi == float("inf") or lo == float("inf"):
            continue  # degenerate axis adds nothing
        span = hi - lo
        for k in range(1, len(order) - 1):
            gap = points[order[k + 1]][axis] - points[order[k - 1]][axis]
            dist[order[k]] += gap / span
    return dist


def rank_population(pop: list[Individual]):
    """Assign rank and crowding to every individual in place."""
    points = [ind.fitness.as_tuple() for ind in pop]
    for rank, front in enumerate(nondominated_sort(points)):
        dist = crowding_distance(points, front)
        for i in front:
            pop[i].rank = rank
            pop[i].crowding = dist[i]


def _selection_key(ind: Individual) -> tuple:
    return (ind.rank, -ind.crowding)


def _tournament(pop: list[Individual], rng: random.Random,
                size: int) -> Individual:
    picks = [pop[rng.randrange(len(pop))] for _ in range(size)]
    return min(picks, key=_selection_key)


def select_survivors(pool: list[Individual], n: int) -> list[Individual]:
    """NSGA-II survivor selection: whole fronts, then crowding."""
    points = [ind.fitness.as_tuple() for ind in pool]
    survivors: list[Individual] = []
    for rank, front in enumerate(nondominated_sort(points)):
        dist = crowding_distance(points, front)
        for i in front:
            pool[i].rank = rank
            pool[i].crowding = dist[i]
        if len(survivors) + len(front) <= n:
            survivors.extend(pool[i] for i in front)
        else:
            rest = sorted(front, key=lambda i: (-dist[i], i))
            survivors.extend(pool[i] for i in rest[:n - len(survivors)])
        if len(survivors) >= n:
            break
    return survivors


def hypervolume(points: list[tuple[float, float]],
                ref: tuple[float, float]) -> float:
    """Area dominated by `points` and bounded by the reference corner."""
    inside = [p for p in points if p[0] < ref[0] and p[1] < ref[1]]
    if not inside:
        return 0.0
    inside.sort(key=lambda p: (p[0], p[1]))
    total = 0.0
    ceiling = ref[1]
    for c, e in inside:
        if e < ceiling:
            total += (ref[0] - c) * (ceiling - e)
            ceiling = e
    return total


# ---------------------------------------------------------------------------
# Archive
# ---------------------------------------------------------------------------

class Archive:
    """Globally non-dominated set over everything evaluated so far."""

    def __init__(self):
        self.entries: list[ArchiveEntry] = []
        self._keys: set[str] = set()

    def offer(self, patch: Patch, fitness: Fitness, key: str):
        if not fitness.valid:
            return
        point = fitness.as_tuple()
        if key in self._keys:
            return
        for e in self.entries:
            # first patch to reach a point keeps it
            if dominates(e.fitness.as_tuple(), point) \
                    or e.fitness.as_tuple() == point:
                return
        kept = []
        for e in self.entries:
            if dominates(point, e.fitness.as_tuple()):
                self._keys.discard(patch_dumps(e.patch))
            else:
                kept.append(e)
        kept.append(ArchiveEntry(patch=patch, fitness=fitness))
        self.entries = kept
        self._keys.add(key)

    def sorted_entries(self) -> list[ArchiveEntry]:
        return sorted(self.entries,
                      key=lambda e: (e.fitness.cost, e.fitness.error,
                                     patch_dumps(e.patch)))


# ---------------------------------------------------------------------------
# The run
# ---------------------------------------------------------------------------

def _thread_count() -> int:
    raw = os.environ.get("GEVO_MINI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SearchError(f"GEVO_MINI_THREADS must be an integer, got {raw!r}")
    return max(1, min(n, 16))


class _Evaluator:
    """Patch-keyed fitness cache around evaluate()."""

    def __init__(self, workload: Workload):
        self.workload = workload
        self.cache: dict[str, Fitness] = {}
        self.threads = _thread_count()

    def __call__(self, patches: list[Patch]) -> list[Fitness]:
        keyed = [(patch_dumps(p), p) for p in patches]
        fresh = {}
        for key, p in keyed:
            if key not in self.cache and key not in fresh:
                fresh[key] = p
        items = list(fresh.items())
        module = self.workload.module
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(
                    lambda kv: evaluate(module, kv[1], self.workload), items))
        else:
            results = [evaluate(module, p, self.workload) for _, p in items]
        for (key, _), fit in zip(items, results):
            self.cache[key] = fit
        return [self.cache[key] for key, _ in keyed]


def _variant_of(original: Module, patch: Patch) -> Module | None:
    try:
        return apply_patch(original, patch).module
    except PatchApplicationError:
        return None


def _mutated(patch: Patch, workload: Workload,
             rng: random.Random) -> Patch:
    variant = _variant_of(workload.module, patch)
    if variant is None:
        return patch
    try:
        edit = mutate(variant, rng, functions=workload.mutable_functions,
                      smoke=workload.smoke)
    except MutationError:
        return patch
    return patch + (edit,)


def _initial_population(workload: Workload, cfg: SearchConfig,
                        rng: random.Random) -> list[Patch]:
    """Empty patch first, then individuals a few mutations out."""
    patches: list[Patch] = [()]
    while len(patches) < cfg.population:
        patch: Patch = ()
        for _ in range(cfg.initial_mutations):
            patch = _mutated(patch, workload, rng)
        patches.append(patch)
    return patches


def _offspring(pop: list[Individual], workload: Workload, cfg: SearchConfig,
               rng: random.Random, validity) -> list[Patch]:
    children: list[Patch] = []
    elites = sorted(pop, key=_selection_key)[:cfg.elites]
    children.extend(e.patch for e in elites)
    while len(children) < cfg.population:
        p1 = _tournament(pop, rng, cfg.tournament_size)
        p2 = _tournament(pop, rng, cfg.tournament_size)
        if rng.random() < cfg.crossover_prob:
            try:
                c1, c2 = crossover(p1.patch, p2.patch, workload.module, rng,
                                   validity=validity)
            except CrossoverError:
                c1, c2 = p1.patch, p2.patch
        else:
            c1, c2 = p1.patch, p2.patch
        for child in (c1, c2):
            if len(children) >= cfg.population:
                break
            if rng.random() < cfg.mutation_prob:
                child = _mutated(child, workload, rng)
            children.append(child)
    return children


def run_search(workload: Workload, cfg: SearchConfig | None = None,
               out_dir: str | None = None, progress=None) -> SearchResult:
    """Run the full search; optionally write artifacts to out_dir."""
    cfg = cfg or SearchConfig()
    cfg.check()
    rng = random.Random(cfg.seed)
    evaluator = _Evaluator(workload)
    archive = Archive()
    validity = default_child_validity(workload.module, workload.smoke)
    started = time.time()

    (baseline,) = evaluator([()])
    if not baseline.valid:
        raise SearchError("baseline module failed to evaluate")
    ref = (1.5 * baseline.cost, 1.0)
    history: list[dict] = []

    def absorb(patches: list[Patch], fits: list[Fitness]):
        for p, f in zip(patches, fits):
            archive.offer(p, f, patch_dumps(p))

    def record(gen: int, pop: list[Individual]):
        points = [i.fitness.as_tuple() for i in pop if i.fitness.valid]
        front = [pop[i].fitness.as_tuple()
                 for i in nondominated_sort(
                     [i.fitness.as_tuple() for i in pop])[0]]
        entry = {
            "generation": gen,
            "evaluations": len(evaluator.cache),
            "front_size": len(front),
            "best_error": min((e for _, e in points), default=None),
            "best_cost": min((c for c, _ in points), default=None),
            "archive_size": len(archive.entries),
            "hypervolume": hypervolume(points, ref),
            "archive_hypervolume": hypervolume(
                [e.fitness.as_tuple() for e in archive.entries], ref),
        }
        history.append(entry)
        if progress is not None:
            progress(entry)

    initial = _initial_population(workload, cfg, rng)
    fits = evaluator(initial)
    absorb(initial, fits)
    pop = [Individual(p, f) for p, f in zip(initial, fits)]
    rank_population(pop)
    record(0, pop)

    for gen in range(1, cfg.generations + 1):
        children = _offspring(pop, workload, cfg, rng, validity)
        child_fits = evaluator(children)
        absorb(children, child_fits)
        pool = pop + [Individual(p, f)
                      for p, f in zip(children, child_fits)]
        pop = select_survivors(pool, cfg.population)
        record(gen, pop)

    for entry in archive.entries:
        entry.holdout = holdout_report(workload.module, entry.patch, workload)

    result = SearchResult(
        baseline=baseline, population=pop,
        archive=archive.sorted_entries(), history=history,
        evaluations=len(evaluator.cache), wall_time=time.time() - started)
    if out_dir is not None:
        write_artifacts(out_dir, result, workload, cfg)
    return result


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def _entry_obj(e: ArchiveEntry) -> dict:
    obj = {
        "cost": e.fitness.cost,
        "error": e.fitness.error,
        "edits": len(e.patch),
        "patch": patch_to_obj(e.patch),
    }
    if e.holdout is not None:
        obj["holdout_cost"] = e.holdout.cost
        obj["holdout_error"] = e.holdout.error
    return obj


def write_artifacts(out_dir: str, result: SearchResult,
                    workload: Workload, cfg: SearchConfig):
    """archive.json, history.jsonl, frontier.csv, config.json,
    summary.json. archive.json is byte-stable for a fixed seed."""
    os.makedirs(out_dir, exist_ok=True)

    archive_obj = {
        "baseline": {"cost": result.baseline.cost,
                     "error": result.baseline.error},
        "workload": workload.name,
        "seed": cfg.seed,
        "entries": [_entry_obj(e) for e in result.archive],
    }
    with open(os.path.join(out_dir, "archive.json"), "w") as f:
        json.dump(archive_obj, f, indent=2, sort_keys=True)
        f.write("\n")

    with open(os.path.join(out_dir, "history.jsonl"), "w") as f:
        for entry in result.history:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    with open(os.path.join(out_dir, "frontier.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cost", "error", "holdout_cost", "holdout_error",
                         "edits", "patch"])
        for e in result.archive:
            hold = e.holdout or Fitness(float("nan"), float("nan"))
            writer.writerow([e.fitness.cost, e.fitness.error, hold.cost,
                             hold.error, len(e.patch),
                             patch_dumps(e.patch)])

    config_obj = {
        "search": dataclasses.asdict(cfg),
        "workload": {
            "name": workload.name,
            "mode": workload.mode,
            "mutable_functions": workload.mutable_functions,
            **dataclasses.asdict(workload.config),
        },
    }
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config_obj, f, indent=2, sort_keys=True)
        f.write("\n")

    best_error = min((e.fitness.error for e in result.archive),
                     default=None)
    best_cost = min((e.fitness.cost for e in result.archive), default=None)
    summary_obj = {
        "baseline_cost": result.baseline.cost,
        "baseline_error": result.baseline.error,
        "archive_size": len(result.archive),
        "best_error": best_error,
        "best_cost": best_cost,
        "evaluations": result.evaluations,
        "generations": cfg.generations,
        "wall_time_s": round(result.wall_time, 3),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary_obj, f, indent=2, sort_keys=True)
        f.write("\n")
