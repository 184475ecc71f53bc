import csv
import json

import numpy as np
import pytest

from adaptive_control.dynamics import ExtendedState, polynomial_model
from adaptive_control.errors import InfeasibleTarget, InvalidArgument
from adaptive_control.filtering import InfoState, posterior_mean, posterior_variance
from adaptive_control.harness import (
    ComparisonReport,
    ComparisonRow,
    CostEstimate,
    compare,
    emit_report,
    estimate_cost,
    find_state_for_moments,
    read_report,
)
from adaptive_control.lq import ce_policy, naive_policy
from adaptive_control.policies import ConstantPolicy, FunctionPolicy
from adaptive_control.simulate import SimConfig


def test_costless_model_gives_zero(uniform_prior):
    m = polynomial_model(b=[[1.0, 0, 1]], k=[[0.0, 0, 0, 0]], g=[[0.0, 0, 0]])
    est = estimate_cost(m, uniform_prior, ConstantPolicy(1.0), 0.0, None, 100, SimConfig(n_steps=8))
    assert est.mean == 0.0 and est.stderr == 0.0 and est.n_paths == 100


def test_needs_two_paths(model, uniform_prior):
    with pytest.raises(InvalidArgument):
        estimate_cost(model, uniform_prior, ConstantPolicy(0.0), 0.0, None, 1, SimConfig())


def test_stderr_scales(model, uniform_prior):
    cfg = SimConfig(n_steps=16, seed=3, chunk_size=1000)
    a = estimate_cost(model, uniform_prior, ConstantPolicy(0.0), 0.0, None, 4000, cfg)
    b = estimate_cost(model, uniform_prior, ConstantPolicy(0.0), 0.0, None, 8000, cfg)
    ratio = a.stderr / b.stderr
    assert np.sqrt(2) / 1.5 < ratio < np.sqrt(2) * 1.5


def test_nonfinite_paths_excluded(model, uniform_prior):
    def pol(t, a, v, g):
        u = np.zeros_like(a)
        u[:1] = np.nan
        return u

    est = estimate_cost(model, uniform_prior, FunctionPolicy(pol), 0.0, None, 200, SimConfig(n_steps=4, chunk_size=200))
    assert est.n_excluded == 1 and est.n_paths == 199

    def bad(t, a, v, g):
        return np.full_like(a, np.nan)

    with pytest.raises(ArithmeticError):
        estimate_cost(model, uniform_prior, FunctionPolicy(bad), 0.0, None, 200, SimConfig(n_steps=4))


def test_find_state_prior_moments(uniform_prior):
    s = find_state_for_moments(uniform_prior, 0.5, 1 / 12)
    assert s.upsilon[0] == 0.0 and s.gamma[0] == 0.0


@pytest.mark.parametrize("mean", [0.37, 0.45, 0.52, 0.6, 0.63])
def test_find_state_var_007(uniform_prior, mean):
    s = find_state_for_moments(uniform_prior, mean, 0.07)
    v, g = s.upsilon[0], s.gamma[0]
    assert abs(posterior_mean(uniform_prior, v, g) - mean) < 1e-4
    assert abs(posterior_variance(uniform_prior, v, g) - 0.07) < 1e-4
    h = 1e-5
    G_v = (posterior_mean(uniform_prior, v + h, g) - posterior_mean(uniform_prior, v - h, g)) / (2 * h)
    assert G_v == pytest.approx(0.07, abs=2e-4)


def test_find_state_comparison_anchor(uniform_prior):
    s = find_state_for_moments(uniform_prior, 0.52, 0.0613)
    assert s.gamma[0] > 0
    assert posterior_variance(uniform_prior, s.upsilon[0], s.gamma[0]) == pytest.approx(0.0613, abs=1e-4)


def test_find_state_infeasible(uniform_prior):
    with pytest.raises(InfeasibleTarget) as err:
        find_state_for_moments(uniform_prior, 0.5, 0.1)
    assert err.value.achievable["variance"][1] == pytest.approx(1 / 12)
    with pytest.raises(InfeasibleTarget):
        find_state_for_moments(uniform_prior, 1.2, 0.01)
    # outside the interior window at variance 0.07
    with pytest.raises(InfeasibleTarget) as err:
        find_state_for_moments(uniform_prior, 0.3, 0.07)
    assert err.value.achievable["variance"][1] == pytest.approx(0.0603, abs=1e-3)


def test_compare_crn_and_report(tmp_path, model, uniform_prior):
    lq = model.lq_params
    pols = {"naive": naive_policy(lq, uniform_prior), "ce": ce_policy(lq, uniform_prior)}
    cfg = SimConfig(n_steps=32, seed=5, chunk_size=1000)
    sweep = {"variable": "state_y", "values": [-1.0, 1.0], "t": 0.0}
    rep = compare(model, uniform_prior, pols, sweep, 4000, cfg)
    assert [r.abscissa for r in rep.rows] == [-1.0, 1.0]
    row = rep.rows[1]
    d_mean, d_se = row.diffs["ce-naive"]
    assert d_mean == pytest.approx(row.estimates["ce"].mean - row.estimates["naive"].mean, abs=1e-12)
    # paired differences are much sharper than independent estimates
    assert d_se < np.hypot(row.estimates["ce"].stderr, row.estimates["naive"].stderr)
    # same seed, same bytes
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_report(rep, "csv", p1)
    emit_report(compare(model, uniform_prior, pols, sweep, 4000, cfg), "csv", p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "abscissa,naive,naive_se,ce,ce_se,adaptive,adaptive_se"
    assert len(lines) == 3
    rows = list(csv.reader(lines[1:]))
    assert rows[1][5] == "" and float(rows[1][1]) == row.estimates["naive"].mean


def test_crn_beats_independent_seeds(model, uniform_prior):
    lq = model.lq_params
    naive, ce = naive_policy(lq, uniform_prior), ce_policy(lq, uniform_prior)
    x0 = ExtendedState(0.0, 1.0, InfoState([0.0], [0.0]))
    cfg = SimConfig(n_steps=32, seed=9, chunk_size=1000)
    _, a = estimate_cost(model, uniform_prior, naive, 0.0, x0, 4000, cfg, return_samples=True)
    _, b = estimate_cost(model, uniform_prior, ce, 0.0, x0, 4000, cfg, return_samples=True)
    _, c = estimate_cost(model, uniform_prior, ce, 0.0, x0, 4000, SimConfig(n_steps=32, seed=10, chunk_size=1000), return_samples=True)
    paired = np.std(b - a, ddof=1)
    independent = np.std(c - a, ddof=1)
    assert paired / independent < 1


def test_variance_sweep(model, uniform_prior):
    pols = {"naive": naive_policy(model.lq_params, uniform_prior)}
    sweep = {"variable": "cond_variance", "values": [0.04, 0.07], "t": 0.1, "y": 1.0, "mean": 0.52}
    rep = compare(model, uniform_prior, pols, sweep, 500, SimConfig(n_steps=16, seed=1))
    assert rep.rows[0].state["var"] == pytest.approx(0.04, abs=1e-4)
    assert rep.rows[1].state["G"] == pytest.approx(0.52, abs=1e-4)


def test_report_validation_and_io(tmp_path):
    with pytest.raises(InvalidArgument):
        ComparisonReport("time", [])
    e = CostEstimate(1.0, 0.1, 10, "physical")
    with pytest.raises(InvalidArgument):
        ComparisonReport("state_y", [ComparisonRow(1.0, {"naive": e}), ComparisonRow(0.0, {"naive": e})])
    empty = ComparisonReport("state_y", [])
    emit_report(empty, "csv", tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "abscissa,naive,naive_se,ce,ce_se,adaptive,adaptive_se\n"
    rows = [ComparisonRow(float(i), {k: CostEstimate(i + 0.5, 0.01, 10, "physical") for k in ("naive", "ce", "adaptive")}) for i in range(3)]
    rep = ComparisonReport("cond_variance", rows, {"seed": 1})
    emit_report(rep, "csv", tmp_path / "r.csv")
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 4
    emit_report(rep, "json", tmp_path / "r.json")
    back = read_report(tmp_path / "r.json")
    assert back.to_dict() == rep.to_dict()
    assert json.loads((tmp_path / "r.json").read_text())["metadata"] == {"seed": 1}
    with pytest.raises(InvalidArgument):
        emit_report(rep, "xml", tmp_path / "r.xml")
