import json
import os

import numpy as np
import pytest

from conftest import toy_centers
from hashdiv.data import ToyConfig, make_toy, save_dense
from hashdiv.experiment import (
    ExperimentConfig,
    ExperimentError,
    MultilabelConfig,
    MultilabelRow,
    ResultRow,
    emit,
    load_rows,
    run_multilabel_experiment,
    run_retrieval_experiment,
    write_predictions_json,
    write_predictions_text,
)


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    data = root / "data.csv"
    queries = root / "queries.csv"
    save_dense(make_toy(ToyConfig(n_per_class=150, class_centers=toy_centers(8), spread=0.25, seed=0)), data)
    save_dense(make_toy(ToyConfig(n_per_class=10, class_centers=toy_centers(8), spread=0.25, seed=1)), queries)
    return str(data), str(queries)


def base_config(toy_files, out, **kw):
    data, queries = toy_files
    defaults = dict(
        data=data, queries=queries, out=str(out),
        methods=("nn",), hashes=("nh", "lshdiv"), ks=(5,),
        l=10, L=4, seed=0, timing=False,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestConfig:
    def test_empty_methods_rejected(self):
        with pytest.raises(ValueError, match="method"):
            ExperimentConfig(data="x", queries="q", out="o", methods=())

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            ExperimentConfig(data="x", queries="q", out="o", methods=("fancy",))

    def test_unknown_hash(self):
        with pytest.raises(ValueError, match="unknown hash"):
            ExperimentConfig(data="x", queries="q", out="o", hashes=("md5",))

    def test_from_file_rejects_unknown_keys(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"data": "a", "queries": "b", "out": "c", "bogus": 1}))
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_file(p)

    def test_from_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"data": "a", "queries": "b", "out": "c", "ks": [10, 20]}))
        cfg = ExperimentConfig.from_file(p)
        assert cfg.ks == (10, 20)


class TestRetrievalRuns:
    def test_nn_nh_matches_brute_force(self, toy_files, tmp_path):
        config = base_config(toy_files, tmp_path / "o.csv", hashes=("nh",), ks=(5,))
        rows = run_retrieval_experiment(config)
        assert len(rows) == 1
        row = rows[0]
        # independent oracle: brute-force nearest neighbors per query
        from hashdiv.data import load_dense

        ds = load_dense(config.data)
        qs = load_dense(config.queries)
        precs = []
        for i in range(qs.n):
            q = qs.point(i)
            d2 = np.einsum("ij,ij->i", ds.vectors - q.dense(), ds.vectors - q.dense())
            top = np.argsort(d2, kind="stable")[:5]
            precs.append(np.mean(ds.categories[top] == q.category))
        assert row.precision == pytest.approx(float(np.mean(precs)))
        assert row.candidate_fraction == 1.0

    def test_hashed_fraction_below_one(self, toy_files, tmp_path):
        config = base_config(toy_files, tmp_path / "o.csv")
        rows = run_retrieval_experiment(config)
        by_hash = {r.hash: r for r in rows}
        assert by_hash["nh"].candidate_fraction == 1.0
        assert by_hash["lshdiv"].candidate_fraction < 1.0

    def test_full_grid_shape(self, toy_files, tmp_path):
        config = base_config(
            toy_files, tmp_path / "o.csv",
            methods=("nn", "greedy", "mmr", "rerank"),
            hashes=("nh", "lshdiv", "lshsdiv", "pcahash"),
            ks=(5, 10), l=8, alpha=8,
        )
        rows = run_retrieval_experiment(config)
        assert len(rows) == 4 * 4 * 2
        for r in rows:
            assert 0.0 <= r.precision <= 1.0
            assert 0.0 <= r.diversity <= 1.0
            assert 0.0 <= r.h_score <= 1.0

    def test_qprel_nh_gated(self, toy_files, tmp_path):
        config = base_config(toy_files, tmp_path / "o.csv", methods=("qprel",), hashes=("nh",))
        with pytest.raises(ExperimentError, match="allow_expensive"):
            run_retrieval_experiment(config)

    def test_qprel_nh_cap(self, toy_files, tmp_path):
        config = base_config(
            toy_files, tmp_path / "o.csv", methods=("qprel",), hashes=("nh",),
            allow_expensive=True, expensive_cap=10,
        )
        with pytest.raises(ExperimentError, match="capped"):
            run_retrieval_experiment(config)

    def test_qprel_hashed_allowed(self, toy_files, tmp_path):
        config = base_config(toy_files, tmp_path / "o.csv", methods=("qprel",), hashes=("lshdiv",), ks=(3,))
        rows = run_retrieval_experiment(config)
        assert rows[0].precision >= 0.0

    def test_determinism_same_seed(self, toy_files, tmp_path):
        config = base_config(toy_files, tmp_path / "a.csv", methods=("nn", "mmr"), ks=(5,))
        rows_a = run_retrieval_experiment(config)
        rows_b = run_retrieval_experiment(config)
        assert rows_a == rows_b

    def test_subtopic_metrics_path(self, tmp_path):
        # 2 categories x 4 subtopics, one tight cluster per subtopic: the
        # SR and entropy-diversity columns must engage and stay in range
        rng = np.random.default_rng(0)
        d = 10
        centers = rng.standard_normal((2, 4, d))
        centers /= np.linalg.norm(centers, axis=2, keepdims=True)
        lines = []
        for cat in range(2):
            for sub in range(4):
                pts = centers[cat, sub] + 0.05 * rng.standard_normal((25, d))
                pts /= np.linalg.norm(pts, axis=1, keepdims=True)
                for p in pts:
                    lines.append(f"{cat}:{sub}:" + ",".join(repr(float(v)) for v in p))
        data = tmp_path / "labeled.csv"
        data.write_text("\n".join(lines) + "\n")
        qlines = []
        for cat in range(2):
            mean = centers[cat].mean(axis=0)
            mean /= np.linalg.norm(mean)
            for _ in range(5):
                q = mean + 0.05 * rng.standard_normal(d)
                q /= np.linalg.norm(q)
                qlines.append(f"{cat}:0:" + ",".join(repr(float(v)) for v in q))
        queries = tmp_path / "q.csv"
        queries.write_text("\n".join(qlines) + "\n")

        config = ExperimentConfig(
            data=str(data), queries=str(queries), out=str(tmp_path / "o.csv"),
            methods=("nn", "greedy"), hashes=("nh",), ks=(8,), lam=0.5, timing=False,
        )
        rows = {r.method: r for r in run_retrieval_experiment(config)}
        for row in rows.values():
            assert row.subtopic_recall is not None and 0.0 <= row.subtopic_recall <= 1.0
            assert 0.0 <= row.diversity <= 1.0
        # the diversity-aware selector must cover more subtopics than plain NN
        assert rows["greedy"].subtopic_recall >= rows["nn"].subtopic_recall
        assert rows["greedy"].diversity > rows["nn"].diversity

    def test_worker_pool_matches_serial(self, toy_files, tmp_path, monkeypatch):
        config = base_config(toy_files, tmp_path / "o.csv", methods=("greedy",))
        serial = run_retrieval_experiment(config)
        monkeypatch.setenv("HASHDIV_WORKERS", "4")
        pooled = run_retrieval_experiment(config)
        assert serial == pooled


class TestEmit:
    def rows(self):
        return [
            ResultRow("nn", "lshdiv", 10, 0.97, 0.79, 0.76, 0.84, 0.112, 0.2),
            ResultRow("mmr", "nh", 10, 0.5, None, 0.25, 0.3333333, 0.0021, 1.0),
        ]

    def test_csv_three_decimals(self, tmp_path):
        path = tmp_path / "r.csv"
        emit(self.rows(), path, "csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "method,hash,k,precision,subtopic_recall,diversity,h_score,seconds"
        assert lines[1] == "nn,lshdiv,10,0.970,0.790,0.760,0.840,0.112"
        assert lines[2] == "mmr,nh,10,0.500,,0.250,0.333,0.002"

    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "r.csv"
        emit([], path, "csv")
        assert path.read_text().splitlines() == ["method,hash,k,precision,subtopic_recall,diversity,h_score,seconds"]

    def test_json_roundtrip_to_csv(self, tmp_path):
        jpath, c1, c2 = tmp_path / "r.json", tmp_path / "a.csv", tmp_path / "b.csv"
        rows = self.rows()
        emit(rows, jpath, "json")
        emit(rows, c1, "csv")
        emit(load_rows(jpath), c2, "csv")
        assert c1.read_bytes() == c2.read_bytes()

    def test_json_keeps_full_precision(self, tmp_path):
        jpath = tmp_path / "r.json"
        emit(self.rows(), jpath, "json")
        payload = json.loads(jpath.read_text())
        assert payload[1]["h_score"] == 0.3333333

    def test_csv_json_twin(self, tmp_path):
        path = tmp_path / "r.csv"
        emit(self.rows(), path, "csv", json_twin=True)
        twin = tmp_path / "r.csv.json"
        assert twin.exists()
        payload = json.loads(twin.read_text())
        assert payload[0]["candidate_fraction"] == 0.2  # full field set, full precision

    def test_multilabel_rows(self, tmp_path):
        rows = [MultilabelRow("exact", 10, 0.3, 0.2, 0.24, None, None, 1.5, 1.0)]
        path = tmp_path / "m.csv"
        emit(rows, path, "csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "method,alpha,precision,recall,f_score,diversity,h_score,millis"
        assert lines[1] == "exact,10,0.300,0.200,0.240,,,1.500"


class TestMultilabelExperiment:
    def test_synthetic_run(self, tmp_path):
        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), synthetic=True, n_labels=400, n_queries=30,
            rank=8, methods=("exact", "lshsdiv"), alpha=5, pool=10, l=10, L=6,
            seed=0, timing=False,
        )
        rows = run_multilabel_experiment(config)
        assert len(rows) == 2
        exact = next(r for r in rows if r.method == "exact")
        hashed = next(r for r in rows if r.method == "lshsdiv")
        assert exact.eval_fraction == 1.0
        assert hashed.eval_fraction < 1.0
        assert exact.diversity is None and exact.h_score is None

    def test_file_driven_with_hierarchy(self, tmp_path):
        rng = np.random.default_rng(0)
        lines = []
        for i in range(60):
            group = i % 3
            feats = rng.uniform(0.2, 1.0, size=3)
            base = group * 3
            toks = " ".join(f"{base + j + 1}:{feats[j]:.4f}" for j in range(3))
            labels = f"{group * 2},{group * 2 + 1}"
            lines.append(f"{labels} {toks}")
        data = tmp_path / "docs.svm"
        data.write_text("\n".join(lines) + "\n")
        hier = tmp_path / "h.txt"
        # root 100, top-level 10/11/12, labels 0..5 underneath
        hier.write_text("10 100\n11 100\n12 100\n0 10\n1 10\n2 11\n3 11\n4 12\n5 12\n")
        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), data=str(data), d=9, rank=3, ridge=0.1,
            methods=("exact",), alpha=2, pool=4, seed=1, timing=False, hierarchy=str(hier),
        )
        rows = run_multilabel_experiment(config)
        assert rows[0].diversity is not None
        assert rows[0].precision > 0.5  # planted block structure is easy

    def test_prediction_outputs(self, tmp_path):
        tpath = tmp_path / "p.txt"
        jpath = tmp_path / "p.json"
        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), synthetic=True, n_labels=200, n_queries=10,
            rank=6, methods=("exact",), alpha=4, pool=8, seed=2, timing=False,
            predictions_out=str(tpath), predictions_json=str(jpath),
        )
        run_multilabel_experiment(config)
        lines = tpath.read_text().splitlines()
        assert len(lines) == 10
        assert lines[0].startswith("0: ")
        records = json.loads(jpath.read_text())
        assert {"query_id", "labels", "scores", "eval_count"} <= set(records[0])

    def test_requires_data_or_synthetic(self, tmp_path):
        with pytest.raises(ValueError, match="data file or synthetic"):
            MultilabelConfig(out=str(tmp_path / "m.csv"))

    def test_deterministic_rows(self, tmp_path):
        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), synthetic=True, n_labels=300, n_queries=20,
            rank=6, methods=("exact", "lshdiv"), alpha=4, pool=8, l=10, L=6,
            seed=3, timing=False,
        )
        assert run_multilabel_experiment(config) == run_multilabel_experiment(config)

    def test_exact_row_matches_precision_oracle(self, tmp_path):
        # threshold_grid=1 pins the cutoff at the minimum validation score,
        # so the exact row's precision equals top-pool precision, which an
        # independent numpy oracle can recompute from the planted model
        from hashdiv.experiment import make_planted

        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), synthetic=True, n_labels=400, n_queries=25,
            rank=8, methods=("exact",), alpha=6, pool=6, seed=11, timing=False,
            threshold_grid=1,
        )
        rows = run_multilabel_experiment(config)
        model, X_all, truth_all = make_planted(400, 8, 16, 50, n_clusters=50, seed=11)
        X_test, truth_test = X_all[:25], truth_all[:25]
        X_val = X_all[25:]

        def top_pool(x):
            scores = model.W @ (model.H.T @ x)
            top = np.lexsort((np.arange(400), -scores))[:6]
            return top, scores[top]

        cutoff = min(float(top_pool(x)[1].min()) for x in X_val)
        precs = []
        for x, truth in zip(X_test, truth_test):
            top, scores = top_pool(x)
            kept = set(top[scores >= cutoff].tolist())
            precs.append(len(kept & truth) / len(kept) if kept else 0.0)
        assert rows[0].precision == pytest.approx(float(np.mean(precs)))

    def test_mmr_and_pcahash_methods(self, tmp_path):
        # pca_direct hashing only has `rank` distinct directions, so l <= rank
        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), synthetic=True, n_labels=300, n_queries=15,
            rank=8, methods=("mmr", "pcahash"), alpha=4, pool=8, l=8, L=4,
            seed=6, timing=False,
        )
        rows = {r.method: r for r in run_multilabel_experiment(config)}
        assert rows["mmr"].eval_fraction == 1.0  # full scan feeds the MMR pool
        assert rows["pcahash"].eval_fraction < 1.0
        assert 0.0 <= rows["mmr"].precision <= 1.0

    def test_hashed_row_faster_than_exact_at_scale(self, tmp_path):
        # regression bound from the acceptance pipeline: at 10k labels the
        # hashed row's mean prediction time beats the exact scan
        config = MultilabelConfig(
            out=str(tmp_path / "m.csv"), synthetic=True, n_labels=10_000, n_queries=100,
            rank=20, methods=("exact", "lshsdiv"), alpha=10, pool=10, lam=0.9,
            l=14, L=12, seed=5, timing=True,
        )
        rows = {r.method: r for r in run_multilabel_experiment(config)}
        assert rows["lshsdiv"].millis < rows["exact"].millis
        assert rows["lshsdiv"].eval_fraction < 0.2


class TestPredSets:
    def test_cutoff_then_alpha_cap(self):
        from hashdiv.experiment import _pred_sets
        from hashdiv.multilabel import LabelPrediction

        pred = LabelPrediction(
            labels=np.array([7, 2, 9, 4]), scores=np.array([0.9, 0.8, 0.3, 0.7]), eval_count=4
        )
        assert _pred_sets(pred, 0.5, alpha=2).tolist() == [7, 2]
        assert _pred_sets(pred, 0.5, alpha=10).tolist() == [7, 2, 4]
        assert _pred_sets(pred, 1.5, alpha=2).size == 0


class TestPredictionWriters:
    def test_text_format(self, tmp_path):
        path = tmp_path / "p.txt"
        write_predictions_text([(0, np.array([3, 1]), np.array([0.5, 0.2]), 7)], path)
        assert path.read_text() == "0: 3,1\n"

    def test_json_format(self, tmp_path):
        path = tmp_path / "p.json"
        write_predictions_json([(2, np.array([4]), np.array([1.5]), 9)], path)
        rec = json.loads(path.read_text())[0]
        assert rec == {"query_id": 2, "labels": [4], "scores": [1.5], "eval_count": 9}
