"""Non-uniform position interpolation and the evolutionary search over it.

Each rotary subspace gets a scaling coefficient lambda_i in (0, 1] applied to
its frequency, compressing positions beyond the trained context back into the
trained range. Uniform interpolation fixes every lambda_i to L/L'; the search
below treats the vector as a black-box optimization variable with the uniform
solution as seed, so the best candidate can never be worse than it.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

MIN_LAMBDA = 1e-6  # mutation clips into (0, 1] instead of rejecting

Task = Callable[[np.ndarray], float]


class Provenance(Enum):
    SEEDED_PI = "seeded_pi"
    MUTATED = "mutated"
    CROSSOVER = "crossover"


class SearchError(ValueError):
    pass


class CandidateEvaluationError(RuntimeError):
    """Task failure during fitness evaluation, with the candidate attached."""

    def __init__(self, candidate: "LambdaCandidate") -> None:
        self.candidate = candidate
        super().__init__(f"task failed for candidate {candidate.lam.tolist()}")


@dataclass
class LambdaCandidate:
    lam: np.ndarray
    provenance: Provenance
    fitness: float | None = None

    def __post_init__(self) -> None:
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.lam.ndim != 1:
            raise SearchError("lambda vector must be one-dimensional")
        if np.any(self.lam <= 0) or np.any(self.lam > 1.0):
            raise SearchError("lambda entries must lie in (0, 1]")

    def key(self) -> bytes:
        return self.lam.tobytes()


@dataclass(frozen=True)
class SearchConfig:
    """Evolution-search knobs. dim is the rotary head dimension d; candidates
    are length-d/2 vectors."""

    dim: int
    trained_len: int
    target_len: int
    population: int = 32
    generations: int = 20
    mutation_sigma: float = 0.05
    elite_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 2 or self.dim % 2 != 0:
            raise SearchError(f"dim must be even and >= 2, got {self.dim}")
        if self.target_len <= self.trained_len:
            raise SearchError(
                f"target_len {self.target_len} must exceed trained_len {self.trained_len}"
            )
        if self.population < 4:
            raise SearchError(f"population must be >= 4, got {self.population}")
        if self.generations < 0:
            raise SearchError("generations must be >= 0")
        if self.mutation_sigma <= 0:
            raise SearchError("mutation_sigma must be positive")
        if not 0 < self.elite_fraction <= 1:
            raise SearchError("elite_fraction must be in (0, 1]")


def uniform_pi(trained_len: int, target_len: int, dim: int) -> LambdaCandidate:
    """Uniform position interpolation: every lambda_i = L / L'."""
    if target_len <= trained_len:
        raise SearchError(
            f"target_len {target_len} must exceed trained_len {trained_len}"
        )
    ratio = trained_len / target_len
    return LambdaCandidate(
        lam=np.full(dim // 2, ratio, dtype=np.float64),
        provenance=Provenance.SEEDED_PI,
    )


def effective_lambda(lam, seq_len: int, trained_len: int) -> tuple[float, ...]:
    """Interpolation activates only past the trained length; otherwise identity."""
    lam = tuple(float(v) for v in lam)
    if seq_len > trained_len:
        return lam
    return (1.0,) * len(lam)


class FitnessCache:
    """Lambda-keyed memo of task losses, safe under concurrent insert-or-read."""

    def __init__(self) -> None:
        self._values: dict[bytes, float] = {}
        self._lock = threading.Lock()

    def get(self, key: bytes) -> float | None:
        with self._lock:
            return self._values.get(key)

    def put(self, key: bytes, value: float) -> None:
        with self._lock:
            self._values[key] = value

    def __len__(self) -> int:
        with self._lock:
            return len(self._values)


def evaluate_candidate(
    candidate: LambdaCandidate, task: Task, cache: FitnessCache | None = None
) -> float:
    """Fitness of one candidate under the task (lower is better), memoized."""
    key = candidate.key()
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            candidate.fitness = hit
            return hit
    try:
        fitness = float(task(candidate.lam.copy()))
    except Exception as exc:
        raise CandidateEvaluationError(candidate) from exc
    candidate.fitness = fitness
    if cache is not None:
        cache.put(key, fitness)
    return fitness


@dataclass
class SearchResult:
    best: LambdaCandidate
    best_fitness_per_generation: list[float]
    config: SearchConfig
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "config": {
                "dim": self.config.dim,
                "trained_len": self.config.trained_len,
                "target_len": self.config.target_len,
                "population": self.config.population,
                "generations": self.config.generations,
                "mutation_sigma": self.config.mutation_sigma,
                "elite_fraction": self.config.elite_fraction,
                "seed": self.config.seed,
            },
            "best_fitness_per_generation": self.best_fitness_per_generation,
            "best_fitness": self.best.fitness,
            "lam": self.best.lam.tolist(),
        }


def save_search_result(path: str | Path, result: SearchResult) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n")


def load_search_lambda(path: str | Path) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    return np.asarray(data["lam"], dtype=np.float64)


def _clip(lam: np.ndarray) -> np.ndarray:
    return np.clip(lam, MIN_LAMBDA, 1.0)


def evolve_search(config: SearchConfig, task: Task) -> SearchResult:
    """Evolutionary search for the lambda vector minimizing the task loss.

    Seeds with uniform interpolation plus Gaussian-perturbed variants; each
    generation keeps the elite fraction and refills with per-coordinate
    Gaussian mutations of elites and uniform crossovers of elite pairs.
    Fully reproducible from config.seed; the running best is monotone.
    """
    rng = np.random.default_rng(config.seed)
    half = config.dim // 2
    cache = FitnessCache()

    seed = uniform_pi(config.trained_len, config.target_len, config.dim)
    population = [seed]
    while len(population) < config.population:
        lam = _clip(seed.lam + rng.normal(0.0, config.mutation_sigma, half))
        population.append(LambdaCandidate(lam=lam, provenance=Provenance.MUTATED))

    evaluations = 0

    def score_all(cands: list[LambdaCandidate]) -> None:
        nonlocal evaluations
        for cand in cands:
            if cache.get(cand.key()) is None:
                evaluations += 1
            evaluate_candidate(cand, task, cache)

    score_all(population)
    best = min(population, key=lambda c: c.fitness)
    history = [best.fitness]

    n_elite = max(1, int(round(config.population * config.elite_fraction)))
    for _ in range(config.generations):
        population.sort(key=lambda c: c.fitness)
        elites = population[:n_elite]
        children: list[LambdaCandidate] = []
        while len(elites) + len(children) < config.population:
            do_crossover = len(elites) >= 2 and len(children) % 2 == 1
            if do_crossover:
                ia, ib = rng.choice(len(elites), size=2, replace=False)
                mask = rng.integers(0, 2, half).astype(bool)
                lam = np.where(mask, elites[ia].lam, elites[ib].lam)
                children.append(
                    LambdaCandidate(lam=lam.copy(), provenance=Provenance.CROSSOVER)
                )
            else:
                parent = elites[int(rng.integers(len(elites)))]
                lam = _clip(parent.lam + rng.normal(0.0, config.mutation_sigma, half))
                children.append(
                    LambdaCandidate(lam=lam, provenance=Provenance.MUTATED)
                )
        population = elites + children
        score_all(population)
        gen_best = min(population, key=lambda c: c.fitness)
        if gen_best.fitness < best.fitness:
            best = gen_best
        history.append(best.fitness)

    return SearchResult(
        best=best,
        best_fitness_per_generation=history,
        config=config,
        evaluations=evaluations,
    )
