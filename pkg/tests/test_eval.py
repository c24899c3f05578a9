import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import linear_domain, linear_model
from idg.data import DomainDataset, gen_synthetic
from idg.errors import ConfigError, DataError, IDGError
from idg.eval import (RiskCurve, accuracy, emit_report, ideal_curve, max_regret, read_curves_csv,
                      read_regret_csv, risk_curve)
from idg.iro import DEFAULT_GRID, IroConfig, plf_train
from idg.models import ArchitectureSpec, AugmentedParams, init_params
from idg.risk import cvar


def _three_domains():
    return [linear_domain([1.0, 2.0], [1.0, 3.0], "a"),
            linear_domain([0.0, 1.0], [0.0, 0.0], "b"),
            linear_domain([-1.0, 3.0], [2.0, 2.0], "c")]


def test_curve_validation():
    c = RiskCurve([0.0, 0.5, 1.0], [1, 2, 3], "x")
    assert c.values == (1.0, 2.0, 3.0)
    with pytest.raises(ConfigError):
        RiskCurve([0.0, 0.5], [1.0], "x")
    with pytest.raises(ConfigError):
        RiskCurve([0.5, 0.0], [1.0, 2.0], "x")
    with pytest.raises(ConfigError):
        RiskCurve([], [], "x")


def test_constant_risk_model_gives_a_flat_curve():
    doms = [linear_domain([1.0, 2.0], [3.0, 5.0], "a"), linear_domain([0.0, 4.0], [1.0, 9.0], "b")]
    curve = risk_curve(linear_model(2.0, 0.0), doms)
    np.testing.assert_allclose(curve.values, 1.0)


def test_curve_endpoints_and_composition():
    doms = _three_domains()
    model = linear_model(1.0, 0.5)
    risks = np.array([0.25, 1.25, 4.25])
    curve = risk_curve(model, doms, DEFAULT_GRID)
    assert math.isclose(curve.values[0], risks.mean(), rel_tol=1e-14)
    assert math.isclose(curve.values[-1], risks.max(), rel_tol=1e-14)
    for lam, v in zip(curve.lambda_grid, curve.values):
        assert math.isclose(v, cvar(risks, lam), rel_tol=1e-13)


def test_curve_modes():
    doms = _three_domains()
    film = init_params(ArchitectureSpec(1, conditioning="film-affine"), 0)
    augmented = risk_curve(film, doms, [0.0, 1.0])
    assert augmented.lambda_grid == (0.0, 1.0)
    with pytest.raises(ConfigError):
        risk_curve(film, doms, [0.0, 1.0], mode="fixed")
    with pytest.raises(ConfigError):
        risk_curve(film, doms, [0.0, 1.0], mode="other")
    fixed = risk_curve(linear_model(1.0), doms, [0.0, 1.0], mode="fixed")
    same = risk_curve(linear_model(1.0), doms, [0.0, 1.0], mode="augmented")
    assert fixed.values == same.values


def test_ideal_on_a_single_level_is_the_precise_learner():
    train, test = gen_synthetic(6, 20, 0), gen_synthetic(6, 20, 0, "test")
    cfg = IroConfig(eta=0.05, max_outer_steps=100)
    spec = ArchitectureSpec(1, conditioning="film-affine")
    ideal = ideal_curve(spec, train, test, [0.3], cfg)
    direct = risk_curve(plf_train(spec.precise(), train, 0.3, cfg), test, [0.3])
    assert ideal.values == direct.values


def test_ideal_dominates_mismatched_precise_learner_and_rises():
    # three positive slopes for every negative one, so the pooled fit leans positive
    thetas = np.where(np.arange(20) % 4 == 0, -1.05, 1.05)
    train = gen_synthetic(20, 50, 1, thetas=thetas)
    test = gen_synthetic(20, 50, 1, "test", thetas=thetas)
    cfg = IroConfig(eta=0.05, eta_decay=0.05, max_outer_steps=600, batch_size=25)
    spec = ArchitectureSpec(1)
    grid = np.linspace(0, 1, 11)
    ideal = ideal_curve(spec, train, test, grid, cfg)
    erm = risk_curve(plf_train(spec, train, 0.0, cfg), test, grid)
    assert ideal.values[-1] <= erm.values[-1]
    assert np.all(np.diff(ideal.as_array()) >= -1e-3)


def test_max_regret_examples():
    a = RiskCurve([0.0, 0.5, 1.0], [1.0, 2.0, 4.0], "a")
    assert max_regret(a, a) == 0.0
    assert max_regret(RiskCurve([0.4], [3.0]), RiskCurve([0.4], [2.25])) == 0.75
    assert max_regret(a, RiskCurve([0.0, 0.5, 1.0], [0.5, 2.5, 3.0])) == 1.0
    with pytest.raises(ConfigError):
        max_regret(a, RiskCurve([0.0, 1.0], [1.0, 2.0]))


def test_accuracy_of_a_sign_classifier():
    spec = ArchitectureSpec(1, output="logit")
    model = AugmentedParams(spec, np.array([1.0, 0.0]))
    dom = DomainDataset("d", [-2.0, -1.0, 1.0, 3.0], [0.0, 1.0, 1.0, 1.0])
    assert accuracy(model, dom, 0.5) == 0.75


def test_report_files(tmp_path):
    grid = [0.0, 0.5, 1.0]
    curves = [RiskCurve(grid, [1.0, 2.0, 3.0], "IL"), RiskCurve(grid, [1.1, 2.5, 3.5], "PL <f>"),
              RiskCurve(grid, [1.0, 1.9, 3.0], "ideal")]
    regrets = {c.label: max_regret(c, curves[-1]) for c in curves}
    paths = emit_report(curves, regrets, tmp_path / "out")
    assert set(paths) == {"curves.csv", "regret.csv", "curves.svg", "curves.png"}

    back = read_curves_csv(paths["curves.csv"])
    assert [(c.label, c.lambda_grid, c.values) for c in back] == \
        [(c.label, c.lambda_grid, c.values) for c in curves]
    table = read_regret_csv(paths["regret.csv"])
    assert list(table) == ["IL", "PL <f>", "ideal"] and table == regrets

    root = ET.parse(paths["curves.svg"]).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}polyline")) == 3
    texts = {t.text for t in root.iter(f"{ns}text")}
    assert {"λ_op", "aggregated risk"} <= texts

    with open(paths["curves.png"], "rb") as fh:
        assert fh.read(8) == b"\x89PNG\r\n\x1a\n"


def test_report_without_regrets_or_png(tmp_path):
    paths = emit_report([RiskCurve([0.0, 1.0], [1.0, 1.0], "m")], None, tmp_path, png=False)
    assert set(paths) == {"curves.csv", "curves.svg"}


def test_report_io_errors_name_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(IDGError, match="file"):
        emit_report([RiskCurve([0.0], [1.0], "m")], None, blocker / "sub")
    with pytest.raises(DataError, match="nowhere.csv"):
        read_curves_csv(tmp_path / "nowhere.csv")
    with pytest.raises(ConfigError):
        emit_report([], None, tmp_path)
