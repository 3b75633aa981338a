"""
비교 최적화 기법과 공통 평가 프로토콜

- random_search: 무작위 프리미티브 패턴을 대리모델로 평가
- differential_evolution / genetic_search: 43 파라미터 인코딩 위 DE/rand/1/bin
- rotation_criterion_design: 평판 회전 속도 기준으로 비드 배치 (대리모델 호출 없음)
- run_comparison: 기법별 후보 중 대리모델 상위 k 개를 FEM 으로 검증
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.ndimage import map_coordinates
from scipy.stats import qmc

from core import autodiff as ad
from core.autodiff import Tensor
from core.constraints import FlankProfile, edge_distance, postprocess
from core.errors import ConfigError, ObjectiveUndefinedError
from core.fem import DESK_RESOLUTION, assemble, build_mesh, solve_frf
from core.model import BeadingPattern, FrequencyResponse, PlateConfig
from core.objectives import Objective
from core.patterns import DEFAULT_SHAPE, PARAM_COUNT, GenConfig, decode_params, sample_pattern

logger = logging.getLogger(__name__)

METHODS = ("flow", "random", "genetic", "rotation")
UNDEFINED_PENALTY = 1e6
BEADED_TARGET = 0.5


@dataclass(frozen=True)
class Budget:
    """NFE 예산: 대리모델 주파수 평가 1회 = 1 NFE"""

    max_nfe: int
    per_eval: int

    def __post_init__(self):
        if self.max_nfe <= 0 or self.per_eval <= 0:
            raise ConfigError(f"NFE 예산 오류: max_nfe={self.max_nfe}, per_eval={self.per_eval}")

    @property
    def evaluations(self) -> int:
        """예산 안에서 평가할 수 있는 패턴 수"""
        return self.max_nfe // self.per_eval


@dataclass
class Candidate:
    pattern: BeadingPattern
    predicted: Optional[float]
    method: str
    iteration: int


@dataclass
class SearchResult:
    """순위가 매겨진 후보 + 최고값 궤적 [(누적 NFE, 최고 예측값)]"""

    candidates: List[Candidate]
    trajectory: List[Tuple[int, float]] = field(default_factory=list)
    nfe: int = 0


def predict_objective(surrogate, objective: Objective, pattern: BeadingPattern, props) -> float:
    """대리모델 예측 FRF 에 대한 목적함수 값 (주파수 수만큼 NFE 소비)"""
    freqs = objective.frequencies()
    with ad.no_grad():
        x = Tensor((2.0 * pattern.grid - 1.0).astype(surrogate.dtype))
        levels = surrogate.levels_on_tape(x, props, freqs)
        return objective.on_tape(levels, freqs).item()


def _best_so_far(values: Sequence[float], per_eval: int) -> List[Tuple[int, float]]:
    trajectory, best = [], math.inf
    for index, value in enumerate(values):
        best = min(best, value)
        trajectory.append(((index + 1) * per_eval, best))
    return trajectory


def random_search(surrogate, objective: Objective, budget: Budget, rng: np.random.Generator, props,
                  gen_cfg: Optional[GenConfig] = None, cfg: Optional[PlateConfig] = None,
                  workers: int = 1) -> SearchResult:
    """
    무작위 탐색

    패턴은 rng 에서 순서대로 생성되므로 예산을 늘려도 앞쪽 패턴은 동일합니다.
    """
    cfg = cfg or PlateConfig()
    gen_cfg = gen_cfg or GenConfig()
    patterns = [sample_pattern(rng, gen_cfg, cfg) for _ in range(budget.evaluations)]

    def score(pattern: BeadingPattern) -> Optional[float]:
        try:
            return predict_objective(surrogate, objective, pattern, props)
        except ObjectiveUndefinedError as e:
            logger.warning("무작위 패턴 목적함수 정의 불가: %s", e)
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        values = list(pool.map(score, patterns))

    candidates = [Candidate(p, v, "random", i) for i, (p, v) in enumerate(zip(patterns, values)) if v is not None]
    trajectory = _best_so_far([v if v is not None else math.inf for v in values], budget.per_eval)
    candidates.sort(key=lambda c: c.predicted)
    return SearchResult(candidates, trajectory, budget.evaluations * budget.per_eval)


@dataclass
class DEResult:
    best_x: np.ndarray
    best_f: float
    history: List[float]
    evaluations: int


def differential_evolution(evaluate: Callable[[np.ndarray], float], dim: int = PARAM_COUNT, pop: int = 10,
                           iters: int = 100, rng: Optional[np.random.Generator] = None,
                           workers: int = 1, max_evaluations: Optional[int] = None) -> DEResult:
    """
    단위 상자 위 DE/rand/1/bin (변이 계수 [0.5, 1] 디더링, 교차율 0.7)

    Args:
        evaluate: [0, 1]^dim 벡터 → 목적함수 값 (입력은 단위 상자로 잘려서 전달)
        dim: 차원 수
        pop: 개체 수
        iters: 세대 수
        rng: 난수 생성기
        workers: 개체 평가 병렬 스레드 수
        max_evaluations: 평가 횟수 상한 (NFE 예산)

    Returns:
        DEResult (최고 벡터, 최고값, 세대별 개체군 최소값, 평가 횟수)
    """
    rng = rng or np.random.default_rng()
    seed = int(rng.integers(2 ** 32))
    init = qmc.LatinHypercube(d=dim, seed=seed).random(pop)
    history: List[float] = []
    counter = {"evaluations": 0}

    def wrapped(x: np.ndarray) -> float:
        counter["evaluations"] += 1
        return float(evaluate(np.clip(x, 0.0, 1.0)))

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))
        if max_evaluations is not None and counter["evaluations"] + pop > max_evaluations:
            return True
        return False

    options = dict(strategy="rand1bin", maxiter=iters, popsize=pop, init=init, mutation=(0.5, 1.0),
                   recombination=0.7, tol=0.0, atol=0.0, polish=False, seed=seed, callback=callback)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            result = optimize.differential_evolution(wrapped, [(0.0, 1.0)] * dim, updating="deferred",
                                                     workers=pool.map, **options)
    else:
        result = optimize.differential_evolution(wrapped, [(0.0, 1.0)] * dim, **options)
    return DEResult(np.clip(result.x, 0.0, 1.0), float(result.fun), history, counter["evaluations"])


def genetic_search(surrogate, objective: Objective, budget: Budget, rng: np.random.Generator, props,
                   cfg: Optional[PlateConfig] = None, shape: Tuple[int, int] = DEFAULT_SHAPE,
                   pop: int = 10, workers: int = 1) -> SearchResult:
    """43 파라미터 인코딩에 DE 적용; 평가된 모든 패턴이 후보"""
    cfg = cfg or PlateConfig()
    evaluations = budget.evaluations
    if evaluations < pop:
        raise ConfigError(f"NFE 예산이 초기 개체군({pop})도 평가하지 못합니다")
    evaluated: List[Tuple[BeadingPattern, float]] = []

    def evaluate(v: np.ndarray) -> float:
        pattern = decode_params(v, cfg, shape)
        try:
            value = predict_objective(surrogate, objective, pattern, props)
        except ObjectiveUndefinedError:
            value = UNDEFINED_PENALTY
        evaluated.append((pattern, value))
        return value

    iters = max(1, evaluations // pop - 1)
    de = differential_evolution(evaluate, PARAM_COUNT, pop, iters, rng, workers, max_evaluations=evaluations)
    candidates = [Candidate(p, v, "genetic", i) for i, (p, v) in enumerate(evaluated) if v < UNDEFINED_PENALTY]
    trajectory = _best_so_far([v for _, v in evaluated], budget.per_eval)
    candidates.sort(key=lambda c: c.predicted)
    logger.info("genetic: %d 평가, 최고 %.4g", de.evaluations, de.best_f)
    return SearchResult(candidates, trajectory, de.evaluations * budget.per_eval)


def _field_to_pixels(node_field: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    ny, nx = node_field.shape
    rows, cols = shape
    r = (np.arange(rows) + 0.5) / rows * (ny - 1)
    c = (np.arange(cols) + 0.5) / cols * (nx - 1)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return map_coordinates(node_field, [rr, cc], order=1, mode="nearest")


def rotation_criterion_design(cfg: PlateConfig, f1: float, f2: float, shape: Tuple[int, int] = DEFAULT_SHAPE,
                              resolution: Tuple[int, int] = DESK_RESOLUTION, df: float = 1.0,
                              workers: int = 1) -> BeadingPattern:
    """
    회전 기준 비딩 설계

    평판 한 번의 FEM 스윕으로 회전 속도 기준을 구하고, 값이 큰 픽셀부터
    판 면적의 50 % 가 될 때까지 비드로 표시한 뒤 후처리합니다.
    """
    from core.fem import rotation_field

    criterion = _field_to_pixels(rotation_field(cfg, f1, f2, df, resolution, workers), shape)
    blank = BeadingPattern.flat(shape, cfg)
    edge = edge_distance(shape, blank.pixel_pitch_x, blank.pixel_pitch_y, cfg.length, cfg.width)
    eligible = edge >= cfg.edge_margin + 0.5 * FlankProfile.from_config(cfg).footprint

    target = int(round(BEADED_TARGET * criterion.size))
    order = np.argsort(np.where(eligible, criterion, -np.inf), axis=None, kind="stable")[::-1]
    chosen = order[:min(target, int(eligible.sum()))]
    grid = np.zeros(criterion.size)
    grid[chosen] = 1.0
    pattern = postprocess(blank.with_grid(grid.reshape(shape)), cfg)
    logger.info("회전 기준 설계: 비드 면적 %.3f", pattern.beaded_fraction())
    return pattern


def fem_frf(pattern: BeadingPattern, cfg: PlateConfig, frequencies: Sequence[float],
            resolution: Tuple[int, int] = DESK_RESOLUTION, workers: int = 1) -> FrequencyResponse:
    """패턴 하나의 FEM 주파수 응답"""
    system = assemble(build_mesh(cfg, pattern, resolution), cfg)
    sweep = solve_frf(system, frequencies, workers)
    if sweep.errors:
        logger.warning("FEM 검증 중 %d 개 주파수 실패", len(sweep.errors))
    return sweep.frf


@dataclass
class MethodOutcome:
    method: str
    seed: int
    predicted: float
    validated: float
    gap: float
    nfe: int
    plates: int
    wall_time: float
    best: Optional[Candidate] = None
    validated_frf: Optional[FrequencyResponse] = None
    trajectory: List[Tuple[int, float]] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    def row(self) -> Dict[str, object]:
        return {"method": self.method, "seed": self.seed, "predicted": self.predicted,
                "validated": self.validated, "gap": self.gap, "nfe": self.nfe,
                "plates": self.plates, "wall_time": round(self.wall_time, 3)}


@dataclass
class ComparisonReport:
    outcomes: List[MethodOutcome] = field(default_factory=list)

    def rows(self) -> List[Dict[str, object]]:
        return [o.row() for o in self.outcomes]

    def best(self, method: str) -> Optional[MethodOutcome]:
        matches = [o for o in self.outcomes if o.method == method]
        return min(matches, key=lambda o: o.validated) if matches else None


def validate_top_k(candidates: Sequence[Candidate], objective: Objective, cfg: PlateConfig, k: int = 4,
                   resolution: Tuple[int, int] = DESK_RESOLUTION,
                   workers: int = 1) -> List[Tuple[Candidate, float, FrequencyResponse]]:
    """
    예측값 상위 k 개 후보를 FEM 으로 검증; 목적함수가 정의되지 않는 후보는 제외

    FEM 은 대리모델 격자가 아닌 objective.validation_frequencies() 격자에서 풉니다.
    """
    ranked = sorted(candidates, key=lambda c: math.inf if c.predicted is None else c.predicted)[:k]
    freqs = objective.validation_frequencies()
    validated = []
    for candidate in ranked:
        frf = fem_frf(candidate.pattern, cfg, freqs, resolution, workers)
        try:
            validated.append((candidate, objective.evaluate(frf), frf))
        except ObjectiveUndefinedError as e:
            logger.warning("%s 후보 %d FEM 목적함수 정의 불가: %s", candidate.method, candidate.iteration, e)
    return validated


def run_comparison(methods: Sequence[str], budget: Budget, objective: Objective, cfg: PlateConfig,
                   rng: np.random.Generator, surrogate=None, flow=None, gcfg=None, k: int = 4, seed: int = 0,
                   shape: Tuple[int, int] = DEFAULT_SHAPE, resolution: Tuple[int, int] = DESK_RESOLUTION,
                   workers: int = 1) -> ComparisonReport:
    """
    기법별 후보 풀 생성 → 대리모델 상위 k 개 FEM 검증 → 최소 검증값과 예측 오차 보고

    Args:
        methods: METHODS 의 부분집합
        budget: 기법 공통 NFE 예산
        objective: 목적함수
        cfg: 판 설정 (하중 위치, 회전 강성 포함)
        rng: 기법마다 독립 스트림으로 분기
        surrogate, flow, gcfg: flow/random/genetic 에 필요한 모델과 가이던스 설정
        k: 검증 후보 수
    """
    from core.surrogate import PlateProps

    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"알 수 없는 기법: {sorted(unknown)} (가능: {', '.join(METHODS)})")
    needs_surrogate = set(methods) & {"flow", "random", "genetic"}
    if needs_surrogate and surrogate is None:
        raise ConfigError(f"{sorted(needs_surrogate)} 기법에는 대리모델이 필요합니다")
    if "flow" in methods and (flow is None or gcfg is None):
        raise ConfigError("flow 기법에는 flow 모델과 가이던스 설정이 필요합니다")

    props = PlateProps.from_config(cfg)
    streams = dict(zip(METHODS, np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(len(METHODS))))
    report = ComparisonReport()

    for method in methods:
        method_rng = np.random.default_rng(streams[method])
        started = time.perf_counter()
        failures: List[str] = []
        logger.info("기법 %s 시작 (NFE 예산 %d)", method, budget.max_nfe)
        if method == "rotation":
            pattern = rotation_criterion_design(cfg, objective.f1, objective.f2, shape, resolution,
                                                df=objective.validate_df, workers=workers)
            result = SearchResult([Candidate(pattern, None, "rotation", 0)], [], 0)
        elif method == "random":
            result = random_search(surrogate, objective, budget, method_rng, props, GenConfig(shape=shape),
                                   cfg, workers)
        elif method == "genetic":
            result = genetic_search(surrogate, objective, budget, method_rng, props, cfg, shape, workers=workers)
        else:
            from core.flowgen import generate_pool

            pool = generate_pool(flow, surrogate, objective, gcfg, props, method_rng, cfg, workers,
                                 max_nfe=budget.max_nfe)
            failures = pool.failures
            result = SearchResult(pool.candidates, pool.trajectory, pool.nfe)

        validated = validate_top_k(result.candidates, objective, cfg, k, resolution, workers)
        elapsed = time.perf_counter() - started
        if not validated:
            logger.error("기법 %s: 검증 가능한 후보가 없습니다", method)
            failures.append("no validated candidate")
            report.outcomes.append(MethodOutcome(method, seed, math.nan, math.nan, math.nan, result.nfe,
                                                 len(result.candidates), elapsed, trajectory=result.trajectory,
                                                 failures=failures))
            continue

        best, value, frf = min(validated, key=lambda item: item[1])
        predicted = math.nan if best.predicted is None else best.predicted
        outcome = MethodOutcome(method, seed, predicted, value, value - predicted, result.nfe,
                                len(result.candidates), elapsed, best, frf, result.trajectory, failures)
        logger.info("기법 %s: 검증 %.4g, 예측 %.4g, %.1f s", method, value, predicted, elapsed)
        report.outcomes.append(outcome)
    return report
