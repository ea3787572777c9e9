import json

import numpy as np
import pytest

from momsplit.cli import main

SCALAR_PROBLEM = {"generator": "scalar_inclusion",
                  "params": {"spec": {"a": {"name": "l1", "weight": 1.0},
                                      "c": {"slope": 1.0, "offset": -1.0}}},
                  "seed": 0}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_run_scalar_fhrb_defaults(tmp_path, capsys):
    config = {"problem": SCALAR_PROBLEM,
              "method": {"preset": "fhrb", "params": {"alpha": 0.3}},
              "stopping": {"max_iter": 5000, "step_tol": 1e-12}}
    code = main(["run", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path / "out")])
    assert code == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["verdict"]["passed"] is True
    assert summary["final"]["residual_norm"] < 1e-8
    trace = (tmp_path / "out" / "trace.csv").read_text()
    assert trace.splitlines()[0] == \
        "k,step_norm_s,correction_norm,residual_norm,lyapunov,margin"


def test_run_certificate_violation_exits_one(tmp_path, capsys):
    # tau*sigma*|V|^2 = 1.2 > 1 on a two-resolvent scalar problem (|V| = 1)
    config = {"problem": {"generator": "scalar_inclusion",
                          "params": {"spec": {
                              "a": {"name": "quadratic", "q": 0.5, "b": 0.4},
                              "a2": {"name": "l1", "weight": 1.0, "center": 1.0}}},
                          "seed": 0},
              "method": {"preset": "chambolle_pock",
                         "params": {"tau": 1.0, "sigma": 1.2}}}
    code = main(["run", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert "tau*sigma*|V|^2" in err or "certificate" in err


def test_run_unknown_preset_exits_three(tmp_path, capsys):
    config = {"problem": SCALAR_PROBLEM, "method": {"preset": "warp_drive"}}
    assert main(["run", "--config", write_config(tmp_path, config)]) == 3


def test_run_unknown_parameter_exits_three(tmp_path):
    config = {"problem": SCALAR_PROBLEM,
              "method": {"preset": "fhrb", "params": {"alpha": 0.3, "turbo": 1}}}
    assert main(["run", "--config", write_config(tmp_path, config)]) == 3


def test_run_divergence_exits_two(tmp_path, capsys):
    config = {"problem": SCALAR_PROBLEM,
              "method": {"preset": "forward_backward", "params": {"gamma": 3.0}},
              "stopping": {"max_iter": 5000}}
    code = main(["run", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path / "out"), "--no-enforce-certificate"])
    assert code == 2


def test_run_flag_overrides(tmp_path):
    config = {"problem": SCALAR_PROBLEM,
              "method": {"preset": "fhrb", "params": {"alpha": 0.3}}}
    code = main(["run", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path / "out"), "--max-iter", "4000",
                 "--tol", "1e-11"])
    assert code == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["termination"] == "step_tol"


def test_run_trace_is_byte_deterministic(tmp_path):
    config = {"problem": SCALAR_PROBLEM,
              "method": {"preset": "fhrb", "params": {"alpha": 0.3}},
              "stopping": {"max_iter": 60}}
    cfg = write_config(tmp_path, config)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == \
        (tmp_path / "b" / "trace.csv").read_bytes()


def test_list_methods_human_and_json_agree(capsys):
    assert main(["list-methods"]) == 0
    human = capsys.readouterr().out
    assert main(["list-methods", "--json"]) == 0
    machine = json.loads(capsys.readouterr().out)
    names = [e["name"] for e in machine["methods"]]
    assert len(names) == 11
    for name in names:
        assert name in human
    assert names == sorted(names)


def test_list_methods_certificate_texts_golden(capsys):
    assert main(["list-methods", "--json"]) == 0
    machine = json.loads(capsys.readouterr().out)
    texts = {e["name"]: e["certificate"] for e in machine["methods"]}
    golden = {
        "forward_backward": "gamma*beta/2 <= 1 - eps",
        "frb": "alpha_k*delta + alpha_{k+1}*delta <= 1 - eps",
        "fhrb": "alpha_k*delta + alpha_{k+1}*(delta + beta/2) <= 1 - eps",
        "fhrb_momentum":
            "alpha_k*delta + alpha_{k+1}*(delta + beta/2) <= 1 - theta - 2|theta| - eps",
        "chambolle_pock": "tau*sigma*|V|^2 < 1 - eps",
        "vu_condat": "tau*sigma*|V|^2 + tau*beta/2 < 1 - eps",
        "pd_triangular":
            "tau*sigma*|V|^2 + (|2-lambda_k| + |2-lambda_{k+1}|)*sqrt(tau*sigma)*|V|"
            " + tau*(2*delta + beta/2) < 1 - eps",
        "pd_projective_style":
            "tau*sigma*|V|^2 + 4*sqrt(tau*sigma)*|V| + tau*(2*delta + beta/2) < 1 - eps",
        "frdr": "tau*(1/varsigma + 2*delta) < 1 - eps",
        "fhrdr": "tau*(1/varsigma + 2*delta + beta/2) < 1 - eps",
        "pd_resolvent_compensated":
            "2*tau*sigma*|V|^2 + tau*(2*delta + beta/2) < 1 - eps",
    }
    assert texts == golden


def test_compare_scalar_methods(tmp_path, capsys):
    config = {"problem": SCALAR_PROBLEM,
              "methods": [
                  {"preset": "fhrb", "params": {"alpha": 0.3}},
                  {"preset": "fhrb_momentum",
                   "params": {"alpha": 0.2, "theta": 0.15}},
              ],
              "stopping": {"max_iter": 2000, "step_tol": 1e-11}}
    code = main(["compare", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path)])
    assert code == 0
    rows = json.loads((tmp_path / "comparison.json").read_text())["rows"]
    assert [r["method"] for r in rows] == ["fhrb", "fhrb_momentum"]
    assert all(r["certificate"] == "PASS" for r in rows)
    assert all(r["iterations"] is not None for r in rows)


def test_compare_single_config_one_row(tmp_path, capsys):
    config = {"problem": SCALAR_PROBLEM,
              "methods": [{"preset": "forward_backward", "params": {"gamma": 1.0}}],
              "stopping": {"max_iter": 100, "step_tol": 1e-12}}
    code = main(["compare", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path)])
    assert code == 0
    rows = json.loads((tmp_path / "comparison.json").read_text())["rows"]
    assert len(rows) == 1


def test_compare_rejects_per_method_problems(tmp_path):
    config = {"problem": SCALAR_PROBLEM,
              "methods": [{"preset": "fhrb", "params": {"alpha": 0.3},
                           "problem": SCALAR_PROBLEM}]}
    assert main(["compare", "--config", write_config(tmp_path, config)]) == 3


def test_compare_counts_extra_dual_resolvent(tmp_path):
    """On one problem the compensated kernel shows one extra dual-resolvent
    evaluation per iteration relative to the triangular scheme."""
    problem = {"generator": "constructed_saddle",
               "params": {"dim_primal": 8, "dim_dual": 10, "mu": 0.3,
                          "delta": 0.2}, "seed": 21}
    config = {"problem": problem,
              "methods": [
                  {"preset": "pd_triangular",
                   "params": {"tau": 0.15, "sigma": 0.15, "lam": 1.5}},
                  {"preset": "pd_resolvent_compensated",
                   "params": {"tau": 0.1, "sigma": 0.2}},
              ],
              "stopping": {"max_iter": 50}}
    code = main(["compare", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path)])
    assert code == 0
    rows = json.loads((tmp_path / "comparison.json").read_text())["rows"]
    tri = next(r for r in rows if r["method"] == "pd_triangular")
    res = next(r for r in rows if r["method"] == "pd_resolvent_compensated")
    assert res["per_iteration"]["D"] - tri["per_iteration"]["D"] == pytest.approx(1.0, abs=0.1)
    assert tri["per_iteration"]["V"] == pytest.approx(1.0, abs=0.1)
    assert res["per_iteration"]["V*"] == pytest.approx(1.0, abs=0.1)


def test_gen_problem_roundtrip(tmp_path, capsys):
    out = tmp_path / "problem.json"
    code = main(["gen-problem", "--generator", "lasso_saddle",
                 "--params", '{"m": 5, "n": 8, "mu": 0.2}',
                 "--seed", "11", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "lasso_saddle"
    config = {"problem": {"path": str(out)},
              "method": {"preset": "vu_condat",
                         "params": {"tau": 0.3, "sigma": 0.3}},
              "stopping": {"max_iter": 3000, "step_tol": 1e-12}}
    assert main(["run", "--config", write_config(tmp_path, config),
                 "--out", str(tmp_path / "out")]) == 0


def test_gen_problem_unknown_generator(tmp_path):
    assert main(["gen-problem", "--generator", "bogus",
                 "--out", str(tmp_path / "p.json")]) == 3


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 3
