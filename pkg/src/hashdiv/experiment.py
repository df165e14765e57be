"""Experiment harness: run query batches through every (method, hash, k)
cell, collect accuracy/diversity/efficiency metrics, and emit table-shaped
results as CSV (3-decimal) plus a full-precision JSON twin.

Timing covers query + selection only; index construction and file IO stay
outside the clock. Progress goes to stderr, results to the output file.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import lsh, metrics, multilabel
from .data import load_dense, load_sparse
from .hashing import PCA, PCA_DIRECT, PLAIN, new_family
from .metrics import HierarchyTree
from .multilabel import FactorModel, LabelPrediction
from .select import (
    SelectionProblem,
    select_greedy_div,
    select_mmr,
    select_nn,
    select_qp_rel,
    select_rerank,
)

METHODS = ("nn", "rerank", "greedy", "mmr", "qprel")
HASHES = ("nh", "lshdiv", "lshsdiv", "pcahash")
ML_METHODS = ("exact", "mmr", "pcahash", "lshdiv", "lshsdiv")

_HASH_KIND = {"lshdiv": PLAIN, "lshsdiv": PCA, "pcahash": PCA_DIRECT}

WORKERS_ENV = "HASHDIV_WORKERS"


class ExperimentError(RuntimeError):
    pass


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map_queries(fn, items):
    w = _workers()
    if w == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))


@dataclass
class ExperimentConfig:
    """Declarative description of one retrieval experiment grid."""

    data: str
    queries: str
    out: str
    methods: tuple[str, ...] = ("nn",)
    hashes: tuple[str, ...] = ("nh", "lshdiv")
    ks: tuple[int, ...] = (10,)
    lam: float = 0.5
    l: int = 16
    L: int = 8
    alpha: int | None = None
    seed: int = 0
    format: str = "csv"
    pool_factor: float = 3.0
    max_candidates: int | None = None
    allow_expensive: bool = False
    expensive_cap: int = 5000
    timing: bool = True
    qp_max_iter: int = 500
    qp_tol: float = 1e-8

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.hashes = tuple(self.hashes)
        self.ks = tuple(int(k) for k in self.ks)
        if not self.methods:
            raise ValueError("method list must be nonempty")
        if not self.hashes:
            raise ValueError("hash list must be nonempty")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValueError("k list must be nonempty with k >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}, expected one of {METHODS}")
        for h in self.hashes:
            if h not in HASHES:
                raise ValueError(f"unknown hash {h!r}, expected one of {HASHES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ResultRow:
    method: str
    hash: str
    k: int
    precision: float
    subtopic_recall: float | None
    diversity: float
    h_score: float
    seconds: float
    candidate_fraction: float = 1.0

    CSV_FIELDS = ("method", "hash", "k", "precision", "subtopic_recall", "diversity", "h_score", "seconds")


@dataclass(frozen=True)
class MultilabelRow:
    method: str
    alpha: int
    precision: float
    recall: float
    f_score: float
    diversity: float | None
    h_score: float | None
    millis: float
    eval_fraction: float = 1.0

    CSV_FIELDS = ("method", "alpha", "precision", "recall", "f_score", "diversity", "h_score", "millis")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _selector(method: str, config: ExperimentConfig):
    if method == "nn":
        return select_nn
    if method == "greedy":
        return select_greedy_div
    if method == "mmr":
        return select_mmr
    if method == "rerank":
        return lambda p: select_rerank(p, pool_factor=config.pool_factor)
    if method == "qprel":
        return lambda p: select_qp_rel(p, max_iter=config.qp_max_iter, tol=config.qp_tol)
    raise ValueError(f"unknown method {method!r}")


def _gate_expensive(method: str, hash_name: str, n: int, config: ExperimentConfig) -> None:
    if method != "qprel" or hash_name != "nh":
        return
    if not config.allow_expensive:
        raise ExperimentError(
            "qprel over the full dataset (nh) builds an n x n gram matrix; pass allow_expensive to opt in"
        )
    if n > config.expensive_cap:
        raise ExperimentError(
            f"qprel/nh capped at n={config.expensive_cap} points, dataset has {n}"
        )


def _query_eval(dataset, query_point, index, selector, k, lam, max_candidates, full_ids, full_vecs, timing):
    """One query through candidate generation + selection, then metrics."""
    qvec = query_point.dense()
    t0 = time.perf_counter()
    if index is None:
        cand_ids, cand_vecs = full_ids, full_vecs
    else:
        cand_ids = lsh.query(index, qvec, max_candidates=max_candidates).ids
        cand_vecs = dataset.dense_rows(cand_ids)
    if cand_ids.size == 0:
        selected = np.empty(0, dtype=int)
    else:
        problem = SelectionProblem(query=qvec, ids=cand_ids, vectors=cand_vecs, k=k, lam=lam)
        selected = selector(problem).ids
    elapsed = time.perf_counter() - t0 if timing else 0.0

    qcat = query_point.category
    if qcat is None:
        raise ExperimentError("query has no category label; precision is undefined")
    cats = dataset.categories
    if cats is None:
        raise ExperimentError("dataset has no category labels; precision is undefined")
    precision = metrics.precision_at_k(selected, lambda i: cats[i] == qcat, k)
    has_subtopics = qcat in dataset.subtopic_count_per_category and dataset.subtopic_count_per_category[qcat] >= 2
    if selected.size == 0:
        sr = 0.0 if has_subtopics else None
        div = 0.0
    elif has_subtopics:
        sr = metrics.subtopic_recall(selected, dataset, qcat, k)
        on_topic = any(cats[i] == qcat for i in selected)
        div = metrics.entropy_diversity(selected, dataset, qcat) if on_topic else 0.0
    else:
        sr = None
        # no subtopic labels: report mean pairwise squared distance, scaled
        # by its max (4 on unit vectors) so the h-score stays in range
        div = metrics.mean_pairwise_distance(dataset.dense_rows(selected)) / 4.0
    h = metrics.h_score(precision, div)
    ev = metrics.QueryEval(precision=precision, subtopic_recall=sr, diversity=div, h_score=h, elapsed=elapsed)
    return ev, cand_ids.size / dataset.n


def run_retrieval_experiment(config: ExperimentConfig) -> list[ResultRow]:
    dataset = load_dense(config.data)
    queries = load_dense(config.queries)
    if queries.d != dataset.d:
        raise ExperimentError(f"query dimension {queries.d} != dataset dimension {dataset.d}")
    full_ids = np.arange(dataset.n)
    full_vecs = dataset.dense_rows(full_ids)

    rows: list[ResultRow] = []
    for hash_name in config.hashes:
        index = None
        if hash_name != "nh":
            kind = _HASH_KIND[hash_name]
            needs_data = kind in (PCA, PCA_DIRECT)
            family = new_family(
                kind,
                config.l,
                config.L,
                dataset.d,
                alpha=config.alpha,
                seed=config.seed,
                dataset=dataset if needs_data else None,
            )
            _progress(f"[index] building {hash_name} (l={config.l}, L={config.L})")
            index = lsh.build(dataset, family)
        for method in config.methods:
            _gate_expensive(method, hash_name, dataset.n, config)
            selector = _selector(method, config)
            for k in config.ks:
                def one(qi, _method=method, _hash=hash_name, _k=k, _sel=selector):
                    try:
                        return _query_eval(
                            dataset, queries.point(qi), index, _sel, _k, config.lam,
                            config.max_candidates, full_ids, full_vecs, config.timing,
                        )
                    except ExperimentError:
                        raise
                    except Exception as exc:
                        raise ExperimentError(f"(method={_method}, hash={_hash}, query={qi}): {exc}") from exc

                results = _map_queries(one, range(queries.n))
                evals = [ev for ev, _ in results]
                precision = float(np.mean([e.precision for e in evals]))
                srs = [e.subtopic_recall for e in evals if e.subtopic_recall is not None]
                sr = float(np.mean(srs)) if srs else None
                div = float(np.mean([e.diversity for e in evals]))
                h = float(np.mean([e.h_score for e in evals]))
                secs = float(np.mean([e.elapsed for e in evals]))
                frac = float(np.mean([f for _, f in results]))
                rows.append(ResultRow(method, hash_name, k, precision, sr, div, h, secs, frac))
                _progress(f"[cell] {method}/{hash_name}/k={k}: P={precision:.3f} D={div:.3f} h={h:.3f}")
    return rows


# ---------------------------------------------------------------------------
# multi-label experiment
# ---------------------------------------------------------------------------


@dataclass
class MultilabelConfig:
    """Multi-label prediction experiment; data comes from a LIBSVM-style
    file (features + label sets) or a planted synthetic model.

    Each method retrieves `pool` candidate labels per document, the score
    cutoff (chosen on the validation split to maximize h, or f without a
    hierarchy) trims them, and `alpha` caps the final prediction size."""

    out: str
    data: str | None = None
    d: int | None = None
    test: str | None = None
    factors: str | None = None
    hierarchy: str | None = None
    synthetic: bool = False
    n_labels: int = 1000
    n_queries: int = 200
    rank: int = 20
    ridge: float = 1.0
    methods: tuple[str, ...] = ("exact", "lshsdiv")
    alpha: int = 10
    pool: int = 30
    lam: float = 0.7
    l: int = 16
    L: int = 8
    seed: int = 0
    format: str = "csv"
    timing: bool = True
    threshold_grid: int = 50
    predictions_out: str | None = None
    predictions_json: str | None = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ValueError("method list must be nonempty")
        for m in self.methods:
            if m not in ML_METHODS:
                raise ValueError(f"unknown multilabel method {m!r}, expected one of {ML_METHODS}")
        if not self.synthetic and self.data is None:
            raise ValueError("either a data file or synthetic mode is required")
        if self.data is not None and self.d is None:
            raise ValueError("sparse data files need the feature dimension d")
        if self.alpha < 1 or self.pool < self.alpha:
            raise ValueError("need pool >= alpha >= 1")

    @classmethod
    def from_dict(cls, dd: dict) -> "MultilabelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(dd) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dd)


def make_planted(
    n_labels: int,
    k: int,
    d: int,
    n_queries: int,
    *,
    n_clusters: int = 50,
    cluster_spread: float = 0.15,
    seed: int = 0,
) -> tuple[FactorModel, np.ndarray, list[frozenset[int]]]:
    """Planted low-rank instance: label embeddings drawn around unit cluster
    centers, queries aimed at one cluster each, truth = sign of the exact
    score. Returns (model, query matrix, positive-label sets)."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, k))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assign = rng.integers(0, n_clusters, size=n_labels)
    W = centers[assign] + cluster_spread * rng.standard_normal((n_labels, k))
    H = np.linalg.qr(rng.standard_normal((d, k)))[0]
    model = FactorModel(W=W, H=H)
    # queries point at a cluster center in embedding space, mapped back via H
    target = rng.integers(0, n_clusters, size=n_queries)
    z = centers[target] + cluster_spread * rng.standard_normal((n_queries, k))
    X = z @ H.T
    truth = [frozenset(np.flatnonzero(model.scores(x) > 0.0).tolist()) for x in X]
    return model, X, truth


def _split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """4:1 train:test split, then 1/5 of train held out for validation."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = max(1, n // 5)
    test = perm[:n_test]
    rest = perm[n_test:]
    n_val = max(1, rest.size // 5)
    return rest[n_val:], rest[:n_val], test


def _label_matrix(label_sets, n_labels: int) -> np.ndarray:
    Y = -np.ones((len(label_sets), n_labels))
    for i, labs in enumerate(label_sets):
        for lab in labs:
            Y[i, lab] = 1.0
    return Y


def _pred_sets(pred: LabelPrediction, cutoff: float, alpha: int) -> np.ndarray:
    """Final label set: drop scores below the cutoff, then cap at the alpha
    best scores (ties by ascending label id)."""
    keep = pred.scores >= cutoff
    labels, scores = pred.labels[keep], pred.scores[keep]
    if labels.size > alpha:
        order = np.lexsort((labels, -scores))[:alpha]
        labels = labels[order]
    return labels


def _pr(pred_set, truth: frozenset) -> tuple[float, float]:
    pred = set(int(v) for v in pred_set)
    if not pred:
        return 0.0, 0.0
    inter = len(pred & truth)
    recall = inter / len(truth) if truth else 0.0
    return inter / len(pred), recall


def _doc_scores(pred_set, truth, tree: HierarchyTree | None) -> tuple[float, float, float, float | None, float | None]:
    p, r = _pr(pred_set, truth)
    f = metrics.f_score(p, r)
    div = h = None
    if tree is not None and len(pred_set):
        div = metrics.tree_diversity(pred_set, tree)
        h = metrics.h_score(p, div)
    return p, r, f, div, h


def _choose_cutoff(preds: list[LabelPrediction], truths, tree, grid_size: int, alpha: int) -> float:
    """Score cutoff maximizing mean h (falls back to f without a hierarchy)
    on the validation predictions, over a uniform grid of cutoffs."""
    all_scores = np.concatenate([p.scores for p in preds if p.scores.size]) if preds else np.empty(0)
    if all_scores.size == 0:
        return 0.0
    lo, hi = float(all_scores.min()), float(all_scores.max())
    best_cut, best_val = lo, -1.0
    for cut in np.linspace(lo, hi, grid_size):
        vals = []
        for pred, truth in zip(preds, truths):
            p, r, f, div, h = _doc_scores(_pred_sets(pred, cut, alpha), truth, tree)
            vals.append(h if h is not None else f)
        mean = float(np.mean(vals)) if vals else 0.0
        if mean > best_val:
            best_val, best_cut = mean, float(cut)
    return best_cut


def _ml_predictor(method: str, model: FactorModel, config: MultilabelConfig):
    """Returns pred(x) -> LabelPrediction for one multilabel method."""
    if method == "exact":
        return lambda x: multilabel.predict_exact(model, x, config.pool)
    if method == "mmr":
        norms = np.linalg.norm(model.W, axis=1)
        Wn = model.W / np.where(norms == 0, 1.0, norms)[:, None]

        def mmr_pred(x):
            scores = model.scores(x)
            order = np.lexsort((np.arange(scores.size), -scores))
            cand = np.sort(order[: min(3 * config.pool, scores.size)])
            z = model.H.T @ np.asarray(x, dtype=float).ravel()
            nz = np.linalg.norm(z)
            problem = SelectionProblem(
                query=z / nz if nz > 0 else z, ids=cand, vectors=Wn[cand],
                k=config.pool, lam=config.lam,
            )
            res = select_mmr(problem)
            return LabelPrediction(labels=res.ids, scores=scores[res.ids], eval_count=model.n_labels)

        return mmr_pred
    kind = _HASH_KIND[method]
    index = multilabel.build_label_index(model, config.l, config.L, kind=kind, seed=config.seed)
    return lambda x: multilabel.predict_diverse(model, index, x, config.pool, config.lam)


def run_multilabel_experiment(config: MultilabelConfig) -> list[MultilabelRow]:
    tree = None
    if config.hierarchy:
        edges = metrics.load_hierarchy(config.hierarchy)
        roots = {p for _, p in edges} - {c for c, _ in edges}
        if len(roots) != 1:
            raise ExperimentError(f"hierarchy must have exactly one root, found {sorted(roots)}")
        tree = metrics.bfs_prune(edges, next(iter(roots)))

    if config.synthetic:
        model, X_all, truth_all = make_planted(
            config.n_labels, config.rank, max(config.d or 0, 2 * config.rank),
            config.n_queries * 2, seed=config.seed,
        )
        half = config.n_queries
        X_val, truth_val = X_all[half:], truth_all[half:]
        X_test, truth_test = X_all[:half], truth_all[:half]
    else:
        dataset = load_sparse(config.data, d=config.d)
        if dataset.label_sets is None:
            raise ExperimentError("multilabel data file carries no labels")
        n_labels = max((max(s) for s in dataset.label_sets if s), default=-1) + 1
        if n_labels < 1:
            raise ExperimentError("no labels found in the data file")
        if config.test is not None:
            test_ds = load_sparse(config.test, d=config.d)
            train_ds = dataset
            train_idx, val_idx, _ = _split_indices(dataset.n, config.seed)
            test_idx = np.arange(test_ds.n)
        else:
            train_idx, val_idx, test_idx = _split_indices(dataset.n, config.seed)
            train_ds = test_ds = dataset
        X_dense = np.asarray(train_ds.vectors.todense())
        if config.factors:
            model = multilabel.load_factors(config.factors)
        else:
            Y = _label_matrix([train_ds.label_sets[i] for i in train_idx], n_labels)
            model = multilabel.fit_lowrank_ridge(X_dense[train_idx], Y, config.rank, config.ridge)
        X_val = X_dense[val_idx]
        truth_val = [train_ds.label_sets[i] for i in val_idx]
        X_test_dense = np.asarray(test_ds.vectors.todense())
        X_test = X_test_dense[test_idx]
        truth_test = [test_ds.label_sets[i] for i in test_idx]

    rows: list[MultilabelRow] = []
    predictions: list[tuple[int, np.ndarray, np.ndarray, int]] = []
    for method in config.methods:
        predictor = _ml_predictor(method, model, config)
        val_preds = [predictor(x) for x in X_val]
        cutoff = _choose_cutoff(val_preds, truth_val, tree, config.threshold_grid, config.alpha)
        _progress(f"[multilabel] {method}: score cutoff {cutoff:.4f}")

        def one(i, _pred=predictor, _cut=cutoff, _method=method):
            try:
                t0 = time.perf_counter()
                pred = _pred(X_test[i])
                final = _pred_sets(pred, _cut, config.alpha)
                ms = (time.perf_counter() - t0) * 1e3 if config.timing else 0.0
                return pred, final, ms
            except Exception as exc:
                raise ExperimentError(f"(method={_method}, query={i}): {exc}") from exc

        outs = _map_queries(one, range(len(X_test)))
        per_doc = [_doc_scores(final, truth_test[i], tree) for i, (_, final, _) in enumerate(outs)]
        p = float(np.mean([s[0] for s in per_doc]))
        r = float(np.mean([s[1] for s in per_doc]))
        f = float(np.mean([s[2] for s in per_doc]))
        divs = [s[3] for s in per_doc if s[3] is not None]
        hs = [s[4] for s in per_doc if s[4] is not None]
        div = float(np.mean(divs)) if divs else None
        h = float(np.mean(hs)) if hs else None
        ms = float(np.mean([o[2] for o in outs]))
        eval_frac = float(np.mean([o[0].eval_count for o in outs])) / model.n_labels
        rows.append(MultilabelRow(method, config.alpha, p, r, f, div, h, ms, eval_frac))
        if method == config.methods[0]:
            for i, (pred, final, _) in enumerate(outs):
                keep = np.isin(pred.labels, final)
                predictions.append((i, final, pred.scores[keep], pred.eval_count))

    if config.predictions_out:
        write_predictions_text(predictions, config.predictions_out)
    if config.predictions_json:
        write_predictions_json(predictions, config.predictions_json)
    return rows


def write_predictions_text(predictions, path) -> None:
    """One line per query: ``query_id: label,label,...``"""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, labels, _scores, _count in predictions:
            fh.write(f"{qid}: {','.join(str(int(l)) for l in labels)}\n")


def write_predictions_json(predictions, path) -> None:
    records = [
        {
            "query_id": int(qid),
            "labels": [int(l) for l in labels],
            "scores": [float(s) for s in scores],
            "eval_count": int(count),
        }
        for qid, labels, scores, count in predictions
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def emit(rows, path, fmt: str = "csv", json_twin: bool = False) -> None:
    """Write result rows; CSV prints floats with 3 decimals (table
    precision), JSON keeps full precision and every field. json_twin
    additionally writes `<path>.json` next to a CSV so the rounded table
    always has a full-precision sibling."""
    if fmt == "csv":
        if rows:
            fields = type(rows[0]).CSV_FIELDS
        else:
            fields = ResultRow.CSV_FIELDS
        lines = [",".join(fields)]
        for row in rows:
            d = dataclasses.asdict(row)
            lines.append(",".join(_format_cell(d[f]) for f in fields))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        if json_twin:
            emit(rows, f"{path}.json", "json")
    elif fmt == "json":
        payload = [{"_type": type(r).__name__, **dataclasses.asdict(r)} for r in rows]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown output format {fmt!r}")


def load_rows(path) -> list:
    """Inverse of emit(..., fmt="json")."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    out = []
    for rec in payload:
        cls = ResultRow if rec.pop("_type", "ResultRow") == "ResultRow" else MultilabelRow
        out.append(cls(**rec))
    return out
