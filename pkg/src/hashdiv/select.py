"""Retrieval / diversification strategies over a candidate set.

All selectors consume a SelectionProblem whose candidates are kept in
ascending-id order and break score ties by ascending id, which makes every
strategy a pure deterministic function of its input.

Two objective conventions coexist and are kept separate on purpose:
  * evaluate_objective implements the distance/diversity trade-off
    lam * sum_i |q - x_i|^2 - (1 - lam) * sum_{ij} |x_i - x_j|^2
    with the diversity term as the full ordered double sum.
  * qp_relax_solve minimizes the quadratic form lam * c^T a + a^T G a
    (c_i = -q.x_i, G the candidate Gram matrix) over the capped simplex;
    this form absorbs constants differently, so its lam is not numerically
    interchangeable with the one above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .linalg import project_capped_simplex


@dataclass(frozen=True)
class SelectionProblem:
    """Query + candidate pool. `ids` must be distinct and ascending, with
    `vectors[i]` the dense vector of candidate `ids[i]`."""

    query: np.ndarray
    ids: np.ndarray
    vectors: np.ndarray
    k: int
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "query", np.asarray(self.query, dtype=float).ravel())
        object.__setattr__(self, "ids", np.asarray(self.ids, dtype=int))
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.ids.size != self.vectors.shape[0]:
            raise ValueError("ids and vectors disagree on candidate count")
        if self.ids.size and np.any(np.diff(self.ids) <= 0):
            raise ValueError("candidate ids must be distinct and ascending")

    @classmethod
    def from_dataset(cls, query, dataset: Dataset, candidate_ids, k: int, lam: float) -> "SelectionProblem":
        ids = np.sort(np.asarray(candidate_ids, dtype=int))
        return cls(query=query, ids=ids, vectors=dataset.dense_rows(ids), k=k, lam=lam)

    @property
    def size(self) -> int:
        return self.ids.size


@dataclass(frozen=True)
class SelectionResult:
    ids: np.ndarray          # ordered, length min(k, #candidates)
    objective: float
    underfilled: bool


@dataclass(frozen=True)
class QpSolveReport:
    alpha: np.ndarray
    relaxed_objective: float
    iterations: int
    converged: bool


def _sq_dists_to_query(problem: SelectionProblem) -> np.ndarray:
    diff = problem.vectors - problem.query
    return np.einsum("ij,ij->i", diff, diff)


def _result(problem: SelectionProblem, picked: list[int]) -> SelectionResult:
    ids = problem.ids[picked]
    obj = evaluate_objective(problem.query, problem.vectors[picked], problem.lam)
    return SelectionResult(ids=ids, objective=obj, underfilled=ids.size < problem.k)


def select_nn(problem: SelectionProblem) -> SelectionResult:
    """Plain nearest neighbors: the k candidates closest to the query."""
    d2 = _sq_dists_to_query(problem)
    order = np.lexsort((problem.ids, d2))
    return _result(problem, list(order[: problem.k]))


def select_greedy_div(problem: SelectionProblem) -> SelectionResult:
    """Greedy accuracy/diversity selection: at iteration i (1-based) pick

        argmin_r  lam * |q - r|^2 - (1/i) * sum_{s in S} |r - s|^2

    over the remaining pool; the first pick is the pure NN since S starts
    empty; the diversity sum is divided by the 1-based iteration index."""
    d2q = _sq_dists_to_query(problem)
    m = problem.size
    kk = min(problem.k, m)
    X = problem.vectors
    G = X @ X.T
    sq = np.einsum("ij,ij->i", X, X)
    base = problem.lam * d2q  # picked entries get +inf so they never win argmin
    sum_div = np.zeros(m)     # sum of |r - s|^2 over already-picked s
    picked: list[int] = []
    for i in range(1, kk + 1):
        score = base - sum_div / i
        j = int(np.argmin(score))  # first minimum = lowest id on ties
        picked.append(j)
        base[j] = np.inf
        sum_div += sq + (sq[j] - 2.0 * G[:, j])
    return _result(problem, picked)


def select_mmr(problem: SelectionProblem) -> SelectionResult:
    """Maximal marginal relevance with sim(a, b) = a.b: first pick is the
    max-similarity candidate, then argmax of
    lam * sim(q, r) - (1 - lam) * max_{s in S} sim(r, s)."""
    sims = problem.vectors @ problem.query
    m = problem.size
    kk = min(problem.k, m)
    available = np.ones(m, dtype=bool)
    max_sel = np.full(m, -np.inf)  # max similarity to any selected point
    picked: list[int] = []
    for i in range(kk):
        if i == 0:
            score = sims.copy()
        else:
            score = problem.lam * sims - (1.0 - problem.lam) * max_sel
        score[~available] = -np.inf
        j = int(np.argmax(score))
        picked.append(j)
        available[j] = False
        np.maximum(max_sel, problem.vectors @ problem.vectors[j], out=max_sel)
    return _result(problem, picked)


def select_rerank(problem: SelectionProblem, pool_factor: float = 3.0) -> SelectionResult:
    """Backward selection: restrict to the ceil(pool_factor * k) nearest
    candidates, then greedily grow the set maximizing summed squared
    distance to the points already chosen, starting from the nearest."""
    if pool_factor < 1.0:
        raise ValueError("pool_factor must be >= 1")
    if problem.size == 0:
        return _result(problem, [])
    d2q = _sq_dists_to_query(problem)
    m = problem.size
    kk = min(problem.k, m)
    pool_size = min(int(np.ceil(pool_factor * problem.k)), m)
    by_distance = np.lexsort((problem.ids, d2q))
    in_pool = np.zeros(m, dtype=bool)
    in_pool[by_distance[:pool_size]] = True

    nearest = int(by_distance[0])
    picked = [nearest]
    in_pool[nearest] = False
    sum_div = np.zeros(m)
    diff = problem.vectors - problem.vectors[nearest]
    sum_div += np.einsum("ij,ij->i", diff, diff)
    for _ in range(kk - 1):
        score = np.where(in_pool, sum_div, -np.inf)
        j = int(np.argmax(score))
        picked.append(j)
        in_pool[j] = False
        diff = problem.vectors - problem.vectors[j]
        sum_div += np.einsum("ij,ij->i", diff, diff)
    return _result(problem, picked)


def qp_relax_solve(
    problem: SelectionProblem,
    step_rule: str | float = "lipschitz",
    max_iter: int = 500,
    tol: float = 1e-8,
) -> QpSolveReport:
    """Projected gradient descent on lam * c^T a + a^T G a over the capped
    simplex {sum a = k, 0 <= a <= 1}.

    step_rule "lipschitz" uses eta = 1 / (2 |G|_F); |G|_F upper-bounds the
    spectral norm so the objective decreases monotonically (G is a Gram
    matrix, the problem is convex). A float step_rule is used verbatim.
    """
    m = problem.size
    if m == 0:
        raise ValueError("QP relaxation needs a nonempty candidate set")
    if problem.k > m:
        raise ValueError(f"k={problem.k} exceeds candidate count {m}")
    X = problem.vectors
    G = X @ X.T
    c = -(X @ problem.query)
    k, lam = problem.k, problem.lam

    def objective(a: np.ndarray) -> float:
        return float(lam * (c @ a) + a @ G @ a)

    if m == k:
        alpha = np.ones(m)
        return QpSolveReport(alpha=alpha, relaxed_objective=objective(alpha), iterations=0, converged=True)

    if step_rule == "lipschitz":
        fro = float(np.linalg.norm(G, "fro"))
        eta = 1.0 / (2.0 * fro) if fro > 0 else 1.0
    else:
        eta = float(step_rule)
        if eta <= 0:
            raise ValueError("step size must be positive")

    alpha = np.full(m, k / m)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = lam * c + 2.0 * (G @ alpha)
        new = project_capped_simplex(alpha - eta * grad, k)
        if np.linalg.norm(new - alpha) <= tol:
            alpha = new
            converged = True
            break
        alpha = new
    return QpSolveReport(alpha=alpha, relaxed_objective=objective(alpha), iterations=it, converged=converged)


def select_qp_rel(
    problem: SelectionProblem,
    step_rule: str | float = "lipschitz",
    max_iter: int = 500,
    tol: float = 1e-8,
) -> SelectionResult:
    """Round the relaxed solution: keep the k largest fractional weights
    (ties by ascending id). With fewer candidates than k the whole pool is
    returned underfilled (the relaxation is only solvable for k <= n)."""
    if problem.size == 0:
        return _result(problem, [])
    if problem.k >= problem.size:
        return _result(problem, list(range(problem.size)))
    report = qp_relax_solve(problem, step_rule=step_rule, max_iter=max_iter, tol=tol)
    order = np.lexsort((problem.ids, -report.alpha))
    return _result(problem, list(order[: problem.k]))


def evaluate_objective(query, points, lam: float) -> float:
    """Trade-off objective on an explicit set:
    lam * sum_i |q - x_i|^2 - (1 - lam) * sum_{ij} |x_i - x_j|^2,
    the pair term being the full ordered double sum (both (i, j) and (j, i),
    zero diagonal)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        return 0.0
    query = np.asarray(query, dtype=float).ravel()
    diff = points - query
    acc = float(np.einsum("ij,ij->i", diff, diff).sum())
    sq = np.einsum("ij,ij->i", points, points)
    pair = float(np.sum(sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)))
    return lam * acc - (1.0 - lam) * pair
