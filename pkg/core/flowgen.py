"""
비딩 패턴 flow matching 생성 모델과 대리모델 가이던스 ODE 샘플링

패턴은 flow 내부에서 [−1, 1] 범위이며, 생성 끝에 [0, 1] 로 변환되어 후처리됩니다.
가이던스 속도: v_flow(x, t) − α·β(t)·∇̂J  (∇̂J 는 ‖v_flow‖ 로 재스케일된 목적함수 기울기)
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from core import autodiff as ad
from core.autodiff import Tensor
from core.baselines import Candidate, predict_objective
from core.constraints import postprocess
from core.errors import ConfigError, PlateBeadError, SampleDivergedError, TrainingDivergedError
from core.model import BeadingPattern, PlateConfig
from core.nn import Adam, Module, NetworkParams, build_network, mse
from core.objectives import Objective
from core.surrogate import T_RANGE, PlateProps, SurrogateModel

logger = logging.getLogger(__name__)

TIME_SCALE = 1000.0
SOLVERS = ("euler", "midpoint")
GUIDANCE_EPS = 1e-12


class FlowModel:
    """v_flow(x, t): 격자 → 격자 속도 네트워크"""

    def __init__(self, network: Module, params: NetworkParams):
        self.network = network
        self.params = params
        self.shape = tuple(params.descriptor["shape"])
        self.dtype = np.dtype(params.descriptor.get("dtype", "float64"))

    @classmethod
    def create(cls, shape: Tuple[int, int], rng: np.random.Generator, arch: str = "unet",
               dtype: str = "float32", **arch_options) -> "FlowModel":
        descriptor = {"kind": "flow", "arch": arch, "in_channels": 1, "out_channels": 1,
                      "cond_scales": [TIME_SCALE], "shape": list(shape), "dtype": dtype, **arch_options}
        return cls.from_descriptor(descriptor, rng)

    @classmethod
    def from_descriptor(cls, descriptor: dict, rng: np.random.Generator) -> "FlowModel":
        network = build_network(descriptor, rng, dtype=np.dtype(descriptor.get("dtype", "float64")))
        return cls(network, NetworkParams(descriptor, network.parameters()))

    def velocity_tape(self, x: Tensor, t: np.ndarray) -> Tensor:
        """(N, H, W) 상태 → (N, H, W) 속도"""
        n = x.shape[0]
        out = self.network(x.reshape(n, 1, *self.shape), [np.asarray(t, dtype=np.float64).reshape(n)])
        return out.reshape(n, *self.shape)

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        with ad.no_grad():
            state = Tensor(np.asarray(x, dtype=self.dtype)[None])
            return self.velocity_tape(state, np.array([t]))[0].data.astype(np.float64)


def cfm_loss(model: FlowModel, x1: np.ndarray, rng: np.random.Generator,
             t: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None) -> Tensor:
    """
    조건부 flow matching 손실

    x_t = t·x1 + (1−t)·x0, 목표 속도 x1 − x0

    Args:
        x1: [−1, 1] 데이터 배치 (N, H, W)
        t, x0: 지정하지 않으면 균등/표준정규 분포에서 추출
    """
    x1 = np.asarray(x1, dtype=np.float64)
    n = x1.shape[0]
    if x0 is None:
        x0 = rng.standard_normal(x1.shape)
    if t is None:
        t = rng.uniform(0.0, 1.0, size=n)
    t = np.asarray(t, dtype=np.float64).reshape(n)
    xt = t[:, None, None] * x1 + (1.0 - t[:, None, None]) * x0
    prediction = model.velocity_tape(Tensor(xt.astype(model.dtype)), t)
    return mse(prediction, (x1 - x0).astype(model.dtype))


@dataclass
class FlowTrainingResult:
    model: FlowModel
    losses: List[float] = field(default_factory=list)
    final_loss: float = float("nan")


def evaluate_flow_loss(model: FlowModel, data: np.ndarray, seed: int = 0, batch_size: int = 32) -> float:
    """고정 시드 CFM 평가 손실"""
    rng = np.random.default_rng(seed)
    total = 0.0
    with ad.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start:start + batch_size]
            total += cfm_loss(model, chunk, rng).item() * len(chunk)
    return total / max(len(data), 1)


def train_flow(patterns: np.ndarray, epochs: int, lr: float, rng: np.random.Generator,
               batch_size: int = 32, arch: str = "unet", dtype: str = "float32",
               model: Optional[FlowModel] = None, progress: bool = False, eval_seed: int = 0,
               **arch_options) -> FlowTrainingResult:
    """
    flow 모델 학습

    Args:
        patterns: [0, 1] 패턴 배열 (N, H, W)
    """
    data = 2.0 * np.asarray(patterns, dtype=np.float64) - 1.0
    if data.ndim != 3 or len(data) == 0:
        raise ConfigError(f"flow 학습 데이터 형상 오류: {data.shape}")
    model = model or FlowModel.create(data.shape[1:], rng, arch=arch, dtype=dtype, **arch_options)
    optimizer = Adam(model.params.tensors, lr=lr)
    losses = []

    epoch_iter = tqdm(range(epochs), desc="flow", disable=not progress)
    for epoch in epoch_iter:
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = data[order[start:start + batch_size]]
            loss = cfm_loss(model, chunk, rng)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"에폭 {epoch + 1} flow 손실이 유한하지 않습니다")
            ad.backward(loss)
            optimizer.step()
            model.params.step += 1
            total += loss.item() * len(chunk)
        losses.append(total / len(data))
        epoch_iter.set_postfix(loss=f"{losses[-1]:.4g}")
        logger.info("flow epoch %d loss %.6g", epoch + 1, losses[-1])

    return FlowTrainingResult(model, losses, evaluate_flow_loss(model, data, seed=eval_seed))


def beta(t: float) -> float:
    """가이던스 스케줄: t < 0.75 에서 감소하는 코사인, 이후 0"""
    if t >= 0.75:
        return 0.0
    return 0.5 * (1.0 + math.cos(math.pi * t)) * 0.9 + 0.1


def rescale_grad(grad: np.ndarray, v_flow: np.ndarray) -> np.ndarray:
    """기울기를 ‖v_flow‖ 크기로 재스케일; 기울기가 0 이면 0 반환"""
    grad = np.asarray(grad, dtype=np.float64)
    v_flow = np.asarray(v_flow, dtype=np.float64)
    if grad.shape != v_flow.shape:
        raise ConfigError(f"기울기/속도 형상 불일치: {grad.shape} vs {v_flow.shape}")
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        logger.info("목적함수 기울기가 0 이라 이 스텝은 가이던스 없이 진행합니다")
        return np.zeros_like(grad)
    return grad * (float(np.linalg.norm(v_flow)) / norm)


@dataclass(frozen=True)
class GuidanceConfig:
    alpha: float = 1.0
    t_cutoff: float = 0.75
    step: float = 0.05
    solver: str = "midpoint"
    k: int = 4
    n: int = 16
    rescale: bool = True
    postprocess: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("α 는 음수일 수 없습니다")
        if not 0 < self.step <= 0.25:
            raise ConfigError(f"스텝 크기는 (0, 0.25] 범위여야 합니다: {self.step}")
        if abs(round(1.0 / self.step) * self.step - 1.0) > 1e-9:
            raise ConfigError(f"스텝 크기 {self.step} 가 [0, 1] 을 나누어떨어지게 하지 않습니다")
        if not 0 < self.t_cutoff <= 1:
            raise ConfigError(f"가이던스 차단 시각 오류: {self.t_cutoff}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"알 수 없는 ODE 솔버: {self.solver}")
        if self.k < 1 or self.n < 1:
            raise ConfigError("k 와 n 은 1 이상이어야 합니다")

    @property
    def steps(self) -> int:
        return int(round(1.0 / self.step))

    def schedule(self) -> List[float]:
        """속도 평가 시각 목록"""
        times = []
        for index in range(self.steps):
            t = index * self.step
            times.append(t)
            if self.solver == "midpoint":
                times.append(t + 0.5 * self.step)
        return times

    def is_guided(self, t: float) -> bool:
        return self.alpha > 0 and t < self.t_cutoff - GUIDANCE_EPS


@dataclass
class ODETrace:
    """생성 과정 기록: 평가마다 norm, 선택적으로 스냅샷"""

    times: List[float] = field(default_factory=list)
    guided: List[bool] = field(default_factory=list)
    v_norms: List[float] = field(default_factory=list)
    guidance_norms: List[float] = field(default_factory=list)
    objectives: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    velocities: List[np.ndarray] = field(default_factory=list)
    gradients: List[np.ndarray] = field(default_factory=list)
    predictions: List[np.ndarray] = field(default_factory=list)
    raw: Optional[np.ndarray] = None

    @property
    def evaluations(self) -> int:
        return len(self.times)

    @property
    def guided_evaluations(self) -> int:
        return int(sum(self.guided))


def _guidance_gradient(surrogate: SurrogateModel, objective: Objective, x: np.ndarray,
                       props: PlateProps, t: float) -> Tuple[np.ndarray, float, np.ndarray]:
    state = Tensor(x.astype(surrogate.dtype), requires_grad=True)
    freqs = objective.frequencies()
    levels = surrogate.levels_on_tape(state, props, freqs, t=max(t, T_RANGE[0]))
    value = objective.on_tape(levels, freqs)
    ad.backward(value)
    grad = state.grad if state.grad is not None else np.zeros_like(state.data)
    return grad.astype(np.float64), value.item(), levels.data.astype(np.float64)


def guided_sample(flow: FlowModel, surrogate: Optional[SurrogateModel], objective: Optional[Objective],
                  gcfg: GuidanceConfig, props: PlateProps, rng: np.random.Generator,
                  cfg: Optional[PlateConfig] = None, record: bool = False) -> Tuple[BeadingPattern, ODETrace]:
    """
    가이던스 ODE 적분으로 패턴 하나 생성

    Args:
        flow: 학습된 flow 모델
        surrogate: 대리모델 (α = 0 이면 호출되지 않음)
        objective: 최소화할 목적함수
        gcfg: 가이던스 설정
        props: 하중 위치, 회전 강성
        rng: x0 샘플링
        record: True 면 평가마다 상태/속도/기울기/예측을 저장

    Returns:
        (패턴, ODETrace)
    """
    cfg = cfg or PlateConfig()
    trace = ODETrace()
    if gcfg.alpha > 0 and (surrogate is None or objective is None):
        raise ConfigError("α > 0 가이던스에는 대리모델과 목적함수가 필요합니다")

    def velocity(x: np.ndarray, t: float) -> np.ndarray:
        v = flow.velocity(x, t)
        guided = gcfg.is_guided(t)
        trace.times.append(t)
        trace.guided.append(guided)
        trace.v_norms.append(float(np.linalg.norm(v)))
        total = v
        if guided:
            grad, value, levels = _guidance_gradient(surrogate, objective, x, props, t)
            direction = rescale_grad(grad, v) if gcfg.rescale else grad
            term = gcfg.alpha * beta(t) * direction
            total = v - term
            trace.guidance_norms.append(float(np.linalg.norm(term)))
            trace.objectives.append(value)
            if record:
                trace.gradients.append(grad)
                trace.predictions.append(levels)
        else:
            trace.guidance_norms.append(0.0)
            trace.objectives.append(float("nan"))
        if record:
            trace.states.append(x.copy())
            trace.velocities.append(v)
        return total

    x = rng.standard_normal(flow.shape)
    h = gcfg.step
    for index in range(gcfg.steps):
        t = index * h
        if gcfg.solver == "euler":
            x = x + h * velocity(x, t)
        else:
            x_mid = x + 0.5 * h * velocity(x, t)
            x = x + h * velocity(x_mid, t + 0.5 * h)
        if not np.all(np.isfinite(x)):
            raise SampleDivergedError(f"t = {t + h:.3f} 에서 ODE 상태가 유한하지 않습니다")

    grid = np.clip(0.5 * (x + 1.0), 0.0, 1.0)
    trace.raw = 0.5 * (x + 1.0)
    pattern = BeadingPattern.for_plate(grid, cfg)
    if gcfg.postprocess:
        pattern = postprocess(pattern, cfg)
    return pattern, trace


def sample(flow: FlowModel, gcfg: GuidanceConfig, rng: np.random.Generator,
           cfg: Optional[PlateConfig] = None, record: bool = False) -> Tuple[BeadingPattern, ODETrace]:
    """가이던스 없는 생성 (α = 0)"""
    unguided = GuidanceConfig(alpha=0.0, t_cutoff=gcfg.t_cutoff, step=gcfg.step, solver=gcfg.solver,
                              k=gcfg.k, n=gcfg.n, rescale=gcfg.rescale, postprocess=gcfg.postprocess)
    props = PlateProps.from_config(cfg or PlateConfig())
    return guided_sample(flow, None, None, unguided, props, rng, cfg, record)


@dataclass
class PoolResult:
    candidates: List[Candidate]
    failures: List[str]
    traces: List[ODETrace]
    trajectory: List[Tuple[int, float]]
    # 실패한 시도도 예산을 소모한 것으로 셈
    nfe: int = 0


def generate_pool(flow: FlowModel, surrogate: SurrogateModel, objective: Objective, gcfg: GuidanceConfig,
                  props: PlateProps, rng: np.random.Generator, cfg: Optional[PlateConfig] = None,
                  workers: int = 1, max_nfe: Optional[int] = None,
                  on_done: Optional[Callable[[int], None]] = None) -> PoolResult:
    """
    n 개 가이던스 샘플 생성 후 대리모델로 점수화

    샘플마다 독립 난수 스트림을 쓰므로 결과는 작업자 수와 무관합니다.
    실패한 샘플은 failures 에 기록되고 나머지는 계속 진행합니다.
    """
    cfg = cfg or PlateConfig()
    surrogate.freeze()
    n = gcfg.n
    if max_nfe is not None:
        n = min(n, max_nfe // max(1, nfe_per_sample(gcfg, objective)))
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(n)]

    def one(index: int):
        pattern, trace = guided_sample(flow, surrogate, objective, gcfg, props, streams[index], cfg)
        predicted = predict_objective(surrogate, objective, pattern, props)
        if on_done:
            on_done(index)
        return Candidate(pattern, predicted, "flow", index), trace

    candidates, failures, traces = [], [], []
    trajectory = []
    best = math.inf
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(one, i) for i in range(n)]
        for index, future in enumerate(futures):
            try:
                candidate, trace = future.result()
            except PlateBeadError as e:
                logger.error("샘플 %d 생성 실패: %s", index, e)
                failures.append(f"{index}: {e}")
                continue
            candidates.append(candidate)
            traces.append(trace)
            best = min(best, candidate.predicted)
            trajectory.append(((index + 1) * nfe_per_sample(gcfg, objective), best))
    candidates.sort(key=lambda c: c.predicted)
    return PoolResult(candidates, failures, traces, trajectory, n * nfe_per_sample(gcfg, objective))


def nfe_per_sample(gcfg: GuidanceConfig, objective: Objective) -> int:
    """샘플 하나의 대리모델 호출 수: 가이던스 평가 + 최종 점수화"""
    guided = sum(1 for t in gcfg.schedule() if gcfg.is_guided(t))
    return (guided + 1) * objective.frequencies().size


def unguided_batch(flow: FlowModel, gcfg: GuidanceConfig, count: int, rng: np.random.Generator,
                   cfg: Optional[PlateConfig] = None) -> List[BeadingPattern]:
    streams = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(count)
    return [sample(flow, gcfg, np.random.default_rng(s), cfg)[0] for s in streams]
