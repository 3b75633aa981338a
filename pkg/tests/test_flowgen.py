import numpy as np
import pytest

from core.autodiff import Tensor
from core.baselines import Budget, run_comparison
from core.errors import ConfigError
from core.flowgen import (FlowModel, GuidanceConfig, _guidance_gradient, beta, cfm_loss, generate_pool,
                          guided_sample, nfe_per_sample, rescale_grad, sample, train_flow, unguided_batch)
from core.surrogate import PlateProps


class StraightLineFlow:
    """한 점 target 으로 가는 정확한 직선 flow"""

    def __init__(self, target_grid):
        self.target = 2.0 * np.asarray(target_grid, dtype=np.float64) - 1.0
        self.shape = self.target.shape
        self.dtype = np.dtype("float64")

    def velocity(self, x, t):
        return (self.target - x) / (1.0 - t)


class FixedVelocity:
    """cfm_loss 용: 미리 정한 속도를 그대로 반환"""

    dtype = np.dtype("float64")

    def __init__(self, value):
        self.value = value

    def velocity_tape(self, x, t):
        return Tensor(self.value)


def _target(shape=(8, 12)):
    grid = np.zeros(shape)
    grid[2:6, 3:9] = 1.0
    return grid


def test_beta_schedule():
    assert beta(0.0) == pytest.approx(1.0)
    assert beta(0.5) == pytest.approx(0.55)
    assert beta(0.74) > 0.1
    assert beta(0.75) == 0.0
    assert beta(0.9) == 0.0


def test_rescale_matches_flow_norm():
    rng = np.random.default_rng(0)
    grad, v = rng.normal(size=(4, 6)), rng.normal(size=(4, 6)) * 3.0
    scaled = rescale_grad(grad, v)
    assert np.linalg.norm(scaled) == pytest.approx(np.linalg.norm(v))
    np.testing.assert_allclose(scaled / np.linalg.norm(scaled), grad / np.linalg.norm(grad))
    assert not rescale_grad(np.zeros((4, 6)), v).any()
    with pytest.raises(ConfigError):
        rescale_grad(np.zeros((4, 5)), v)


def test_guidance_config_validation():
    with pytest.raises(ConfigError):
        GuidanceConfig(step=0.3)
    with pytest.raises(ConfigError):
        GuidanceConfig(step=0.07)
    with pytest.raises(ConfigError):
        GuidanceConfig(solver="rk4")
    with pytest.raises(ConfigError):
        GuidanceConfig(alpha=-1.0)


def test_midpoint_schedule_counts():
    gcfg = GuidanceConfig()
    times = gcfg.schedule()
    assert len(times) == 40
    assert sum(gcfg.is_guided(t) for t in times) == 30
    assert len(GuidanceConfig(solver="euler").schedule()) == 20
    assert not GuidanceConfig(alpha=0.0).is_guided(0.1)


def test_nfe_per_sample(coarse_objective):
    assert nfe_per_sample(GuidanceConfig(), coarse_objective) == 31 * 3


def test_cfm_loss_zero_for_exact_velocity():
    rng = np.random.default_rng(0)
    x1 = rng.uniform(-1, 1, size=(3, 4, 6))
    x0 = rng.standard_normal((3, 4, 6))
    loss = cfm_loss(FixedVelocity(x1 - x0), x1, rng, t=np.array([0.1, 0.5, 0.9]), x0=x0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("solver", ["euler", "midpoint"])
def test_straight_flow_reaches_target(plate, solver):
    target = _target()
    gcfg = GuidanceConfig(alpha=0.0, solver=solver, postprocess=False)
    pattern, trace = sample(StraightLineFlow(target), gcfg, np.random.default_rng(3), plate)
    np.testing.assert_allclose(pattern.grid, target, atol=1e-9)
    assert trace.evaluations == (20 if solver == "euler" else 40)
    assert trace.guided_evaluations == 0


def test_zero_alpha_matches_unguided(plate, tiny_surrogate, coarse_objective):
    flow = StraightLineFlow(_target())
    gcfg = GuidanceConfig(alpha=0.0)
    props = PlateProps.from_config(plate)
    guided, _ = guided_sample(flow, tiny_surrogate, coarse_objective, gcfg, props, np.random.default_rng(9), plate)
    plain, _ = sample(flow, gcfg, np.random.default_rng(9), plate)
    np.testing.assert_array_equal(guided.grid, plain.grid)
    assert tiny_surrogate.nfe.value == 0


def test_guided_evaluation_counts(plate, tiny_surrogate, coarse_objective):
    flow = StraightLineFlow(_target())
    gcfg = GuidanceConfig(alpha=0.5)
    _, trace = guided_sample(flow, tiny_surrogate, coarse_objective, gcfg, PlateProps.from_config(plate),
                             np.random.default_rng(1), plate, record=True)
    assert trace.evaluations == 40
    assert trace.guided_evaluations == 30
    assert tiny_surrogate.nfe.value == 30 * 3
    assert len(trace.states) == 40 and len(trace.gradients) == 30
    assert trace.raw.shape == (8, 12)


def test_guidance_requires_surrogate(plate):
    with pytest.raises(ConfigError):
        guided_sample(StraightLineFlow(_target()), None, None, GuidanceConfig(alpha=1.0),
                      PlateProps.from_config(plate), np.random.default_rng(0), plate)


def test_guidance_step_descends_objective(plate, tiny_surrogate, coarse_objective):
    props = PlateProps.from_config(plate)
    x = np.random.default_rng(5).standard_normal((8, 12))
    grad, value, _ = _guidance_gradient(tiny_surrogate, coarse_objective, x, props, 0.5)
    step = x - 1e-4 * grad / np.linalg.norm(grad)
    _, moved, _ = _guidance_gradient(tiny_surrogate, coarse_objective, step, props, 0.5)
    assert moved < value


def test_generate_pool(plate, tiny_surrogate, coarse_objective):
    flow = StraightLineFlow(_target())
    gcfg = GuidanceConfig(alpha=0.5, n=3)
    pool = generate_pool(flow, tiny_surrogate, coarse_objective, gcfg, PlateProps.from_config(plate),
                         np.random.default_rng(2), plate, workers=2)
    assert len(pool.candidates) + len(pool.failures) == 3
    predicted = [c.predicted for c in pool.candidates]
    assert predicted == sorted(predicted)
    bests = [best for _, best in pool.trajectory]
    assert all(b >= a for a, b in zip(bests[1:], bests))


def test_pool_limited_by_budget(plate, tiny_surrogate, coarse_objective):
    gcfg = GuidanceConfig(alpha=0.5, n=5)
    budget = 2 * nfe_per_sample(gcfg, coarse_objective)
    pool = generate_pool(StraightLineFlow(_target()), tiny_surrogate, coarse_objective, gcfg,
                         PlateProps.from_config(plate), np.random.default_rng(2), plate, max_nfe=budget)
    assert len(pool.candidates) + len(pool.failures) == 2


def test_unguided_batch_is_seeded(plate):
    flow = StraightLineFlow(_target())
    a = unguided_batch(flow, GuidanceConfig(), 2, np.random.default_rng(4), plate)
    b = unguided_batch(flow, GuidanceConfig(), 2, np.random.default_rng(4), plate)
    assert len(a) == 2
    for left, right in zip(a, b):
        np.testing.assert_array_equal(left.grid, right.grid)


def test_flow_model_velocity_shape():
    model = FlowModel.create((4, 8), np.random.default_rng(0), arch="unet", dtype="float64", base=8)
    v = model.velocity(np.zeros((4, 8)), 0.3)
    assert v.shape == (4, 8) and v.dtype == np.float64


def test_toy_flow_training():
    patterns = np.repeat(_target((4, 6))[None], 8, axis=0)
    result = train_flow(patterns, epochs=60, lr=1e-2, rng=np.random.default_rng(0), batch_size=8, arch="mlp",
                        dtype="float64", hidden=32)
    assert len(result.losses) == 60
    assert np.mean(result.losses[-5:]) < np.mean(result.losses[:5])
    assert np.isfinite(result.final_loss)


def test_flow_training_rejects_flat_input():
    with pytest.raises(ConfigError):
        train_flow(np.zeros((4, 6)), epochs=1, lr=1e-3, rng=np.random.default_rng(0))


class ZeroVelocity:
    """x0 를 그대로 두는 flow; 가이던스 항만 상태를 움직임"""

    dtype = np.dtype("float64")

    def __init__(self, shape):
        self.shape = shape

    def velocity(self, x, t):
        return np.zeros_like(x)


class DivergingFlow(ZeroVelocity):
    def velocity(self, x, t):
        return np.full_like(x, np.nan)


class BowlSurrogate:
    """모든 주파수에서 레벨 = 중심과의 평균 제곱 거리"""

    dtype = np.dtype("float64")

    def __init__(self, center):
        self.center = np.asarray(center, dtype=np.float64)

    def freeze(self):
        pass

    def levels_on_tape(self, x, props, frequencies, t=1.0):
        diff = x - Tensor(self.center)
        return (diff * diff).mean() * Tensor(np.ones(len(frequencies)))


def test_guidance_norm_follows_schedule(plate, tiny_surrogate, coarse_objective):
    gcfg = GuidanceConfig(alpha=0.7)
    _, trace = guided_sample(StraightLineFlow(_target()), tiny_surrogate, coarse_objective, gcfg,
                             PlateProps.from_config(plate), np.random.default_rng(4), plate)
    checked = 0
    for t, guided, v_norm, g_norm in zip(trace.times, trace.guided, trace.v_norms, trace.guidance_norms):
        if guided:
            assert g_norm == pytest.approx(gcfg.alpha * beta(t) * v_norm, rel=1e-10)
            checked += 1
        else:
            assert g_norm == 0.0
    assert checked == 30


def test_pool_counts_failed_samples_in_nfe(plate, tiny_surrogate, coarse_objective):
    gcfg = GuidanceConfig(alpha=0.5, solver="euler", n=4)
    pool = generate_pool(DivergingFlow((8, 12)), tiny_surrogate, coarse_objective, gcfg,
                         PlateProps.from_config(plate), np.random.default_rng(0), plate)
    assert not pool.candidates
    assert len(pool.failures) == 4
    assert pool.nfe == 4 * nfe_per_sample(gcfg, coarse_objective)


def test_comparison_charges_failed_flow_samples(plate, tiny_surrogate, coarse_objective):
    gcfg = GuidanceConfig(alpha=0.5, solver="euler", n=3)
    report = run_comparison(["flow"], Budget(10_000, 3), coarse_objective, plate, np.random.default_rng(0),
                            surrogate=tiny_surrogate, flow=DivergingFlow((8, 12)), gcfg=gcfg, k=1,
                            shape=(8, 12), resolution=(10, 15))
    (outcome,) = report.outcomes
    assert outcome.nfe == 3 * nfe_per_sample(gcfg, coarse_objective)
    assert outcome.plates == 0
    assert len(outcome.failures) == 4


def test_guided_pool_beats_unguided(plate, coarse_objective):
    center = np.linspace(-0.5, 0.5, 96).reshape(8, 12)
    surrogate = BowlSurrogate(center)
    props = PlateProps.from_config(plate)
    pools = {}
    for alpha in (0.0, 50.0):
        gcfg = GuidanceConfig(alpha=alpha, solver="euler", n=160, rescale=False, postprocess=False)
        pools[alpha] = generate_pool(ZeroVelocity((8, 12)), surrogate, coarse_objective, gcfg, props,
                                     np.random.default_rng(21), plate)
    plain = {c.iteration: c.predicted for c in pools[0.0].candidates}
    guided = {c.iteration: c.predicted for c in pools[50.0].candidates}
    assert set(plain) == set(guided) and len(plain) == 160
    # 같은 x0 에서 출발한 쌍마다 가이던스가 중심에 더 가까움
    assert all(guided[i] <= plain[i] + 1e-12 for i in plain)
    assert np.mean(list(guided.values())) < np.mean(list(plain.values()))


def test_one_point_flow_learns_straight_velocity():
    point = np.array([[0.2, 0.9]])
    x1 = 2.0 * point - 1.0
    result = train_flow(np.repeat(point[None], 256, axis=0), epochs=1000, lr=3e-3, rng=np.random.default_rng(0),
                        batch_size=64, arch="mlp", dtype="float64", hidden=64)
    rng = np.random.default_rng(1)
    errors = []
    for t in np.linspace(0.0, 0.9, 10):
        x0 = rng.standard_normal((16, 1, 2))
        xt = t * x1 + (1.0 - t) * x0
        for start, state in zip(x0, xt):
            # 한 점 데이터의 참 속도는 (x1 − x_t)/(1 − t) = x1 − x0
            truth = x1 - start
            predicted = result.model.velocity(state, t)
            errors.append(np.linalg.norm(predicted - truth) / np.linalg.norm(truth))
    assert np.mean(errors) < 0.1


@pytest.mark.slow
def test_two_point_flow_samples_near_data(plate):
    points = np.array([[[0.1, 0.9]], [[0.9, 0.2]]])
    data = np.repeat(points, 128, axis=0)
    result = train_flow(data, epochs=1500, lr=3e-3, rng=np.random.default_rng(0), batch_size=64, arch="mlp",
                        dtype="float64", hidden=64)
    gcfg = GuidanceConfig(alpha=0.0, postprocess=False)
    spread = np.linalg.norm(points[0] - points[1])
    near = 0
    streams = np.random.SeedSequence(5).spawn(200)
    for stream in streams:
        _, trace = sample(result.model, gcfg, np.random.default_rng(stream), plate)
        nearest = min(np.linalg.norm(trace.raw - p) for p in points)
        near += nearest <= 0.1 * spread
    assert near >= 0.95 * len(streams)
