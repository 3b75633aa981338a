import math

import numpy as np
import pytest

from core.baselines import (Budget, Candidate, ComparisonReport, MethodOutcome, differential_evolution,
                            genetic_search, random_search, rotation_criterion_design, run_comparison,
                            validate_top_k)
from core.errors import ConfigError
from core.model import BeadingPattern
from core.objectives import Objective
from core.patterns import GenConfig
from core.surrogate import PlateProps

SHAPE = (8, 12)
MESH = (10, 15)


def _sphere(x):
    return float(np.sum((x - 0.5) ** 2))


def test_budget():
    assert Budget(4000, 11).evaluations == 363
    with pytest.raises(ConfigError):
        Budget(0, 11)


def test_de_solves_sphere():
    result = differential_evolution(_sphere, dim=5, pop=10, iters=100, rng=np.random.default_rng(0))
    assert result.best_f < 1e-6
    assert np.all((result.best_x >= 0) & (result.best_x <= 1))


def test_de_history_non_increasing():
    result = differential_evolution(_sphere, dim=8, pop=10, iters=40, rng=np.random.default_rng(1))
    assert len(result.history) > 0
    assert all(b <= a + 1e-15 for a, b in zip(result.history, result.history[1:]))


def test_de_reproducible():
    a = differential_evolution(_sphere, dim=6, pop=10, iters=20, rng=np.random.default_rng(7))
    b = differential_evolution(_sphere, dim=6, pop=10, iters=20, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(a.best_x, b.best_x)
    assert a.history == b.history


def test_de_respects_evaluation_cap():
    result = differential_evolution(_sphere, dim=4, pop=10, iters=100, rng=np.random.default_rng(2),
                                    max_evaluations=35)
    assert result.evaluations <= 35


def test_random_search(plate, tiny_surrogate, coarse_objective):
    budget = Budget(33, 3)
    result = random_search(tiny_surrogate, coarse_objective, budget, np.random.default_rng(0),
                           PlateProps.from_config(plate), GenConfig(shape=SHAPE), plate)
    assert len(result.candidates) == 11
    assert result.nfe == 33
    assert tiny_surrogate.nfe.value == 33
    predicted = [c.predicted for c in result.candidates]
    assert predicted == sorted(predicted)
    bests = [best for _, best in result.trajectory]
    assert [n for n, _ in result.trajectory] == list(range(3, 34, 3))
    assert all(b <= a for a, b in zip(bests, bests[1:]))


def test_random_search_prefix_stable(plate, tiny_surrogate, coarse_objective):
    props = PlateProps.from_config(plate)
    small = random_search(tiny_surrogate, coarse_objective, Budget(12, 3), np.random.default_rng(5), props,
                          GenConfig(shape=SHAPE), plate)
    large = random_search(tiny_surrogate, coarse_objective, Budget(18, 3), np.random.default_rng(5), props,
                          GenConfig(shape=SHAPE), plate)
    by_index = {c.iteration: c for c in large.candidates}
    for candidate in small.candidates:
        np.testing.assert_array_equal(candidate.pattern.grid, by_index[candidate.iteration].pattern.grid)


def test_genetic_search(plate, tiny_surrogate, coarse_objective):
    budget = Budget(90, 3)
    result = genetic_search(tiny_surrogate, coarse_objective, budget, np.random.default_rng(0),
                            PlateProps.from_config(plate), plate, SHAPE)
    assert 10 <= len(result.candidates) <= 30
    assert result.nfe <= 90
    predicted = [c.predicted for c in result.candidates]
    assert predicted == sorted(predicted)


def test_genetic_needs_population_budget(plate, tiny_surrogate, coarse_objective):
    with pytest.raises(ConfigError):
        genetic_search(tiny_surrogate, coarse_objective, Budget(9, 3), np.random.default_rng(0),
                       PlateProps.from_config(plate), plate, SHAPE)


def test_rotation_design_covers_half(plate):
    pattern = rotation_criterion_design(plate, 100.0, 110.0, shape=(48, 72), resolution=MESH, df=5.0)
    assert pattern.shape == (48, 72)
    assert pattern.beaded_fraction() == pytest.approx(0.5, abs=0.03)
    assert not pattern.grid[0].any()


def test_validate_top_k_ranks_by_prediction(plate, coarse_objective):
    flat = BeadingPattern.flat(SHAPE, plate)
    candidates = [Candidate(flat, 3.0, "random", 0), Candidate(flat, 1.0, "random", 1),
                  Candidate(flat, 2.0, "random", 2)]
    validated = validate_top_k(candidates, coarse_objective, plate, k=2, resolution=MESH)
    assert [c.iteration for c, _, _ in validated] == [1, 2]
    assert all(math.isfinite(value) for _, value, _ in validated)


def test_comparison_rows(plate, tiny_surrogate, coarse_objective):
    report = run_comparison(["random", "rotation"], Budget(15, 3), coarse_objective, plate,
                            np.random.default_rng(0), surrogate=tiny_surrogate, k=2, seed=4, shape=SHAPE,
                            resolution=MESH)
    rows = {row["method"]: row for row in report.rows()}
    assert set(rows) == {"random", "rotation"}
    assert rows["random"]["nfe"] == 15
    assert rows["rotation"]["nfe"] == 0
    assert math.isnan(rows["rotation"]["predicted"])
    assert math.isfinite(rows["rotation"]["validated"])
    assert rows["random"]["gap"] == pytest.approx(rows["random"]["validated"] - rows["random"]["predicted"])
    assert all(row["seed"] == 4 for row in report.rows())


def test_comparison_requires_models(plate, coarse_objective):
    with pytest.raises(ConfigError):
        run_comparison(["random"], Budget(15, 3), coarse_objective, plate, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        run_comparison(["annealing"], Budget(15, 3), coarse_objective, plate, np.random.default_rng(0))


def test_report_best():
    report = ComparisonReport([MethodOutcome("random", 0, 1.0, 5.0, 4.0, 10, 3, 0.1),
                               MethodOutcome("random", 1, 1.0, 2.0, 1.0, 10, 3, 0.1)])
    assert report.best("random").seed == 1
    assert report.best("flow") is None


def test_rotation_outcome_spends_no_nfe(plate, coarse_objective):
    report = run_comparison(["rotation"], Budget(15, 3), coarse_objective, plate, np.random.default_rng(0),
                            k=1, shape=(48, 72), resolution=MESH)
    (outcome,) = report.outcomes
    assert outcome.nfe == 0
    assert outcome.plates == 1
    assert outcome.best.pattern.beaded_fraction() == pytest.approx(0.5, abs=0.03)


def test_validate_top_k_uses_fine_grid(plate, coarse_objective):
    assert coarse_objective.frequencies().size == 3
    flat = BeadingPattern.flat(SHAPE, plate)
    ((_, _, frf),) = validate_top_k([Candidate(flat, 0.0, "random", 0)], coarse_objective, plate, k=1,
                                    resolution=MESH)
    np.testing.assert_allclose(frf.frequencies, np.arange(100.0, 201.0, 1.0))


def test_validated_value_stable_under_grid_refinement(plate):
    pattern = BeadingPattern.flat(SHAPE, plate)
    candidates = [Candidate(pattern, 0.0, "random", 0)]
    values = {}
    for validate_df in (1.0, 0.5):
        objective = Objective("mean-level", 100.0, 200.0, df=10.0, validate_df=validate_df)
        ((_, value, _),) = validate_top_k(candidates, objective, plate, k=1, resolution=MESH)
        values[validate_df] = value
    assert abs(values[1.0] - values[0.5]) < 0.1
