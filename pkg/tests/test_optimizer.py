import numpy as np
import pytest

from mlmc_evidence import optimizer as opt
from mlmc_evidence.models import (
    ConjugateGaussianModel,
    RandomEffectLogisticModel,
    generate_conjugate_data,
    generate_relogit_data,
)
from mlmc_evidence.optimizer import (
    AdamConfig,
    AdamState,
    EstimatorConfig,
    TrainTrace,
    adam_step,
    fit,
)
from mlmc_evidence.rng import Rng

THETA_STAR = np.array([1.0, 0.0, 0.25, 0.5, 0.75])


def test_adam_zero_gradient_zero_update():
    state = AdamState.init(3)
    state, update = adam_step(state, np.zeros(3))
    assert np.array_equal(update, np.zeros(3))
    assert state.step == 1


def test_adam_first_step_normalized():
    cfg = AdamConfig(lr=0.05)
    state = AdamState.init(2, cfg)
    g = np.array([3.0, -0.2])
    _, update = adam_step(state, g)
    expected = cfg.lr * g / (np.abs(g) + cfg.eps)
    assert np.allclose(update, expected, rtol=1e-12)


def test_adam_climbs_quadratic_bowl():
    state = AdamState.init(3, AdamConfig(lr=0.01))
    theta = np.array([1.0, 1.0, 1.0])
    for _ in range(500):
        grad = -2.0 * theta  # ascent direction of -||theta||^2
        state, update = adam_step(state, grad)
        theta = theta + update
    assert np.linalg.norm(theta) < 0.05


def test_adam_rejects_dimension_mismatch():
    state = AdamState.init(2)
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(3))


def test_estimator_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(kind="bogus")
    assert EstimatorConfig(kind="nmc", k=8).label() == "nmc-k8"
    assert EstimatorConfig(kind="mlmc", level=5).label() == "mlmc-l5"


def test_fit_zero_iterations_records_initial_point():
    model = ConjugateGaussianModel()
    ds = generate_conjugate_data(20, np.array([0.5, 0.0, 0.0]), seed=1)
    trace = fit(model, ds, EstimatorConfig(kind="nmc", k=1, budget=16),
                AdamConfig(), iters=0, record_every=10, seed=0)
    assert trace.iterations == [0]
    assert trace.costs == [0]
    assert np.array_equal(trace.thetas[0], np.zeros(3))


def test_fit_reproducible_bitwise():
    model = RandomEffectLogisticModel(d=3, t=2)
    ds = generate_relogit_data(100, 2, THETA_STAR, seed=5)
    cfg = EstimatorConfig(kind="mlmc", level=3, budget=64)
    a = fit(model, ds, cfg, AdamConfig(), iters=40, record_every=10, seed=9)
    b = fit(model, ds, cfg, AdamConfig(), iters=40, record_every=10, seed=9)
    assert a.to_csv() == b.to_csv()
    c = fit(model, ds, cfg, AdamConfig(), iters=40, record_every=10, seed=10)
    assert c.to_csv() != a.to_csv()


def test_fit_cost_column_accumulates_estimator_costs():
    model = RandomEffectLogisticModel(d=3, t=2)
    ds = generate_relogit_data(60, 2, THETA_STAR, seed=5)
    cfg = EstimatorConfig(kind="nmc", k=4, budget=64)
    trace = fit(model, ds, cfg, AdamConfig(), iters=6, record_every=1, seed=2)
    per_step = (64 // 4) * 4
    assert trace.costs == [0] + [per_step * i for i in range(1, 7)]


def test_fit_recovers_conjugate_mean():
    theta_true = np.array([0.8, 0.0, 0.0])
    model = ConjugateGaussianModel()
    ds = generate_conjugate_data(400, theta_true, seed=12)
    cfg = EstimatorConfig(kind="rmlmc", level=5, budget=64)
    trace = fit(model, ds, cfg, AdamConfig(lr=0.01), iters=2000,
                record_every=500, seed=3)
    mle_mean = ds.responses[:, 0].mean()
    assert abs(trace.final_theta[0] - mle_mean) < 0.05


def test_fit_aborts_on_non_finite_gradient(monkeypatch):
    model = ConjugateGaussianModel()
    ds = generate_conjugate_data(10, np.zeros(3), seed=2)

    def bad_fn(model_, dataset_, n_total_, cfg_):
        return lambda theta, rng: (np.array([np.nan, 0.0, 0.0]), 1)

    monkeypatch.setattr(opt, "make_gradient_fn", bad_fn)
    with pytest.raises(FloatingPointError):
        fit(model, ds, EstimatorConfig(kind="nmc"), AdamConfig(), iters=3,
            record_every=1, seed=0)


def test_trace_csv_schema_and_monotone_iterations():
    tr = TrainTrace()
    tr.record(0, 0, 0.0, 1.0, np.array([1.0, 2.0]))
    tr.record(5, 10, 3.0, 0.5, np.array([0.5, 1.5]))
    lines = tr.to_csv().strip().splitlines()
    assert lines[0] == "iter,cost,wall_ms,mse,theta_0,theta_1"
    assert lines[1].startswith("0,0,0.0,")
    with pytest.raises(ValueError):
        tr.record(5, 20, 0.0, 0.2, np.zeros(2))
    # wall times only on request
    assert tr.to_csv().splitlines()[2].split(",")[2] == "0.0"
    assert tr.to_csv(include_wall=True).splitlines()[2].split(",")[2] == "3.0"


def test_all_estimator_kinds_take_steps():
    model = RandomEffectLogisticModel(d=3, t=2)
    ds = generate_relogit_data(80, 2, THETA_STAR, seed=21)
    for kind, kw in [("nmc", dict(k=2)), ("mlmc", dict(level=2)),
                     ("rmlmc", dict(level=2)), ("sumo", dict()),
                     ("jackknife", dict(k=4))]:
        cfg = EstimatorConfig(kind=kind, budget=32, **kw)
        trace = fit(model, ds, cfg, AdamConfig(), iters=5, record_every=1,
                    seed=4)
        assert len(trace.iterations) == 6
        assert trace.costs[-1] > 0
        assert np.all(np.isfinite(trace.final_theta))
