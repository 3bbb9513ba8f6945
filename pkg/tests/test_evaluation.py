import numpy as np
import pytest

from noisyor_um.evaluation import (
    EvaluationError,
    EvaluationReport,
    ReportRow,
    build_test_set,
    encode_queries,
    evaluate,
    export_report,
    format_plot_data,
    linear_fit,
    oracle_probabilities,
    parse_sizes,
    read_plot_data,
    scheme_spread,
)
from noisyor_um.inference import brute_force_marginals, exact_conditional_marginals
from noisyor_um.masking import decode
from noisyor_um.model import init_model


def oracle_predictor(net):
    def predict(encoded):
        values, mask = decode(encoded)
        out = np.empty((len(encoded), net.n))
        for row, (v, b) in enumerate(zip(values, mask)):
            ev = {int(i): int(v[i]) for i in np.flatnonzero(b)}
            out[row] = exact_conditional_marginals(net, ev)
        return out

    return predict


class TestTestSets:
    def test_counts_and_sizes(self, canonical):
        queries = build_test_set(canonical, "uniform", range(5), 20, 10, np.random.default_rng(0))
        assert len(queries) == 100
        for k in range(5):
            assert sum(q.k == k for q in queries) == 20
        assert all(10 not in q.evidence_dict() for q in queries)

    def test_distinct_when_possible(self, canonical):
        queries = build_test_set(canonical, "uniform", [6], 200, 8, np.random.default_rng(1))
        assert len({q.evidence for q in queries}) == 200

    def test_zero_size_repeats(self, canonical):
        queries = build_test_set(canonical, "uniform", [0], 5, 8, np.random.default_rng(1))
        assert {q.evidence for q in queries} == {()}

    def test_markov_containment(self, canonical):
        queries = build_test_set(canonical, "markov", range(13), 30, 9, np.random.default_rng(2))
        blankets = [canonical.markov_blanket(d) - {9} for d in canonical.disease_nodes]
        for q in queries:
            nodes = set(q.evidence_dict())
            assert any(nodes <= b for b in blankets)
            assert 9 not in nodes

    def test_markov_infeasible_size(self, canonical):
        largest = max(len(canonical.markov_blanket(d) - {8}) for d in canonical.disease_nodes)
        with pytest.raises(EvaluationError, match="infeasible"):
            build_test_set(canonical, "markov", [largest + 1], 1, 8, np.random.default_rng(0))

    def test_uniform_infeasible_size(self, small_net):
        with pytest.raises(EvaluationError):
            build_test_set(small_net, "uniform", [6], 1, 2, np.random.default_rng(0))

    def test_symptom_query_rejected(self, canonical):
        with pytest.raises(EvaluationError, match="not a disease"):
            build_test_set(canonical, "uniform", [1], 1, 20, np.random.default_rng(0))

    def test_values_consistent_with_network(self, canonical):
        # every evidence set drawn from an ancestral sample has positive probability
        from noisyor_um.inference import evidence_log_probability

        queries = build_test_set(canonical, "uniform", [23], 10, 8, np.random.default_rng(3))
        assert all(np.isfinite(evidence_log_probability(canonical, q.evidence_dict())) for q in queries)

    def test_reproducible(self, canonical):
        a = build_test_set(canonical, "markov", range(4), 10, 12, np.random.default_rng(5))
        b = build_test_set(canonical, "markov", range(4), 10, 12, np.random.default_rng(5))
        assert a == b

    def test_parse_sizes(self):
        assert parse_sizes("0..3") == [0, 1, 2, 3]
        assert parse_sizes("1,4") == [1, 4]
        with pytest.raises(EvaluationError):
            parse_sizes("5..2")
        with pytest.raises(EvaluationError):
            parse_sizes("a,b")


class TestEvaluate:
    def test_oracle_predictor_has_zero_error(self, canonical):
        queries = build_test_set(canonical, "uniform", range(8), 5, 11, np.random.default_rng(6))
        report = evaluate(oracle_predictor(canonical), canonical, queries, "oracle")
        assert all(r.mean <= 1e-12 and r.count == 5 for r in report.rows)

    def test_oracle_matches_brute_force(self, small_net):
        queries = build_test_set(small_net, "uniform", range(6), 10, 2, np.random.default_rng(7))
        truth = oracle_probabilities(small_net, queries)
        brute = [1 - brute_force_marginals(small_net, q.evidence_dict())[2] for q in queries]
        np.testing.assert_allclose(truth, brute, atol=1e-12)

    def test_constant_predictor(self, canonical):
        queries = build_test_set(canonical, "uniform", [0, 3], 10, 9, np.random.default_rng(8))
        truth = oracle_probabilities(canonical, queries)
        report = evaluate(lambda e: np.full((len(e), 24), 0.5), canonical, queries, "half", truth=truth)
        for r in report.rows:
            errs = np.abs(0.5 - truth[[q.k == r.k for q in queries]])
            assert r.mean == pytest.approx(errs.mean(), rel=1e-5)
            assert r.sd == pytest.approx(errs.std(), rel=1e-5, abs=1e-12)

    def test_model_predictor(self, canonical):
        queries = build_test_set(canonical, "uniform", [1, 2], 4, 9, np.random.default_rng(9))
        report = evaluate(init_model(canonical.layer_sizes, 0, 16), canonical, queries, "fresh")
        assert [r.k for r in report.rows] == [1, 2] and all(0 <= r.mean <= 1 for r in report.rows)

    def test_width_mismatch(self, canonical, small_net):
        queries = build_test_set(canonical, "uniform", [1], 2, 9, np.random.default_rng(0))
        with pytest.raises(EvaluationError, match="width"):
            evaluate(init_model(small_net.layer_sizes, 0, 8), canonical, queries)

    def test_empty_queries(self, canonical):
        with pytest.raises(EvaluationError):
            evaluate(lambda e: e, canonical, [])

    def test_encoding(self, canonical):
        queries = build_test_set(canonical, "uniform", [4], 3, 9, np.random.default_rng(10))
        values, mask = decode(encode_queries(canonical, queries))
        for q, v, b in zip(queries, values, mask):
            assert set(np.flatnonzero(b)) == set(q.evidence_dict())
            assert all(v[i] == x for i, x in q.evidence)


class TestFit:
    def test_exact_line(self):
        f = linear_fit([(k, 0.01 + 0.002 * k) for k in range(13)])
        assert f.slope == pytest.approx(0.002, abs=1e-15)
        assert f.intercept == pytest.approx(0.01, abs=1e-15)
        assert f.residual < 1e-28

    def test_matches_lstsq(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([np.arange(13), rng.random(13)])
        coef, rss, *_ = np.linalg.lstsq(np.column_stack([pts[:, 0], np.ones(13)]), pts[:, 1], rcond=None)
        f = linear_fit(pts)
        assert abs(f.slope - coef[0]) < 1e-12 and abs(f.intercept - coef[1]) < 1e-12
        assert f.residual == pytest.approx(rss[0], rel=1e-10)

    def test_constant(self):
        f = linear_fit([(0, 0.05), (4, 0.05), (9, 0.05)])
        assert abs(f.slope) < 1e-15 and f.intercept == pytest.approx(0.05)

    @pytest.mark.parametrize("pts", [[(1, 0.1)], [(2, 0.1), (2, 0.3)], []])
    def test_needs_two_k(self, pts):
        with pytest.raises(EvaluationError):
            linear_fit(pts)


def sample_report():
    rows = []
    for scheme, base in [("uniform", 0.02), ("sizewise", 0.01)]:
        for obs in ("uniform", "markov"):
            for k in range(4):
                rows.append(ReportRow(scheme, obs, k, base + 0.001 * k + 1e-7 / 3, 0.0123456, 200 - k))
    return EvaluationReport(rows, {"network": "abc", "checkpoint": "uniform:1;sizewise:2", "seed": 5, "query_node": 8})


class TestReport:
    def test_mean_error_weights_by_count(self):
        r = sample_report()
        rows = r.select("sizewise", "markov")
        expected = sum(x.mean * x.count for x in rows) / sum(x.count for x in rows)
        assert r.mean_error("sizewise", "markov") == pytest.approx(expected)
        assert r.mean_error("sizewise", "markov", k_min=3) == rows[3].mean
        with pytest.raises(EvaluationError):
            r.mean_error("sizewise", "markov", k_min=9)

    def test_spread(self):
        assert scheme_spread([sample_report()]) == pytest.approx(0.01)
        with pytest.raises(EvaluationError):
            scheme_spread([EvaluationReport([ReportRow("a", "uniform", 0, 0.1, 0, 1)])])

    def test_plot_data_round_trip(self, tmp_path):
        report = evaluate(lambda e: np.full((len(e), 24), 0.3), *_queries())
        report.metadata.update({"network": "n1", "checkpoint": "c1", "seed": 3, "query_node": 8})
        export_report(report, tmp_path / "r.csv")
        again = read_plot_data(tmp_path / "r.csv")
        assert again.rows == report.rows and again.metadata == report.metadata

    def test_header_fields(self):
        text = format_plot_data(sample_report())
        header, columns = text.splitlines()[:2]
        assert header == "# network=abc checkpoint=uniform:1;sizewise:2 seed=5 query_node=8"
        assert columns == "scheme,obs_model,k,mean_abs_err,sd,count"

    def test_table_text(self, tmp_path):
        export_report(sample_report(), tmp_path / "r.txt", "table-text")
        text = (tmp_path / "r.txt").read_text()
        assert "observation model: markov" in text and "linear fit" in text

    def test_refuses_empty(self, tmp_path):
        with pytest.raises(EvaluationError):
            export_report(EvaluationReport(), tmp_path / "x.csv")
        assert not (tmp_path / "x.csv").exists()

    def test_unknown_format(self, tmp_path):
        with pytest.raises(EvaluationError):
            export_report(sample_report(), tmp_path / "x", "json")

    def test_merge_sorted(self):
        r = sample_report()
        a = EvaluationReport(r.select("uniform"), r.metadata)
        b = EvaluationReport(r.select("sizewise"), {})
        merged = EvaluationReport.merge([b, a], r.metadata)
        assert merged.rows == sorted(r.rows, key=lambda x: (x.obs_model, x.scheme, x.k))


def _queries():
    from noisyor_um.network import load_canonical_network

    net = load_canonical_network()
    return net, build_test_set(net, "uniform", range(6), 7, 8, np.random.default_rng(11))
