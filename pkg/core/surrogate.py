"""
대리 회귀 모델 r(g, p, Ω)

(잡음이 섞인) 비딩 패턴, 하중 위치, 회전 강성, 주파수로부터 절점별 법선 속도 크기를 예측합니다.
가이던스에서 입력 패턴에 대한 기울기를 얻기 위해 예측 전 과정이 테이프 위에서 계산됩니다.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from core import autodiff as ad
from core.autodiff import Tensor
from core.errors import ContractError, DimensionError, TrainingDivergedError
from core.model import V_REF, BeadingPattern, FrequencyResponse, PlateConfig
from core.nn import Adam, Module, NetworkParams, build_network, freeze, mse

logger = logging.getLogger(__name__)

T_RANGE = (0.25, 1.0)
LOAD_SIGMA = 0.03
ROT_STIFFNESS_SCALE = 100.0
FREQ_SCALE = 1.0
TIME_SCALE = 1000.0
INPUT_CHANNELS = 3


@dataclass(frozen=True)
class PlateProps:
    """학습 데이터에서 변하는 판 속성"""

    load_x: float
    load_y: float
    rot_stiffness: float

    @classmethod
    def from_config(cls, cfg: PlateConfig) -> "PlateProps":
        return cls(cfg.load_x, cfg.load_y, cfg.rot_stiffness)

    def flipped(self, axis: str, cfg: PlateConfig) -> "PlateProps":
        if axis == "x":
            return PlateProps(cfg.length - self.load_x, self.load_y, self.rot_stiffness)
        return PlateProps(self.load_x, cfg.width - self.load_y, self.rot_stiffness)


@dataclass
class Sample:
    """패턴 + 속성 + 15개 주파수의 FEM 속도장과 레벨"""

    pattern: BeadingPattern
    props: PlateProps
    frequencies: np.ndarray
    fields: np.ndarray
    levels: np.ndarray
    node_shape: Tuple[int, int]

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        self.fields = np.asarray(self.fields)
        if self.fields.shape != (self.frequencies.size, self.node_shape[0] * self.node_shape[1]):
            raise DimensionError("샘플 속도장 형상 오류", self.fields.shape,
                                 (self.frequencies.size, self.node_shape[0] * self.node_shape[1]))


def flip_sample(sample: Sample, axis: str, cfg: PlateConfig) -> Sample:
    """패턴, 하중 위치, 속도장을 함께 반전"""
    ny, nx = sample.node_shape
    fields = sample.fields.reshape(-1, ny, nx)
    fields = fields[:, :, ::-1] if axis == "x" else fields[:, ::-1, :]
    return Sample(
        pattern=sample.pattern.mirrored(axis),
        props=sample.props.flipped(axis, cfg),
        frequencies=sample.frequencies,
        fields=fields.reshape(len(sample.frequencies), -1).copy(),
        levels=sample.levels,
        node_shape=sample.node_shape,
    )


class NFECounter:
    """대리모델 주파수 평가 횟수 (스레드 안전)"""

    def __init__(self):
        self._value = 0
        self._lock = threading.Lock()

    def add(self, count: int):
        with self._lock:
            self._value += int(count)

    @property
    def value(self) -> int:
        return self._value

    def reset(self):
        with self._lock:
            self._value = 0


def load_blob(shape: Tuple[int, int], props: PlateProps, cfg: PlateConfig) -> np.ndarray:
    """하중 위치 가우시안 채널 (합 = 1)"""
    rows, cols = shape
    x = (np.arange(cols) + 0.5) * cfg.length / cols
    y = (np.arange(rows) + 0.5) * cfg.width / rows
    blob = np.exp(-((x[None, :] - props.load_x) ** 2 + (y[:, None] - props.load_y) ** 2) / (2 * LOAD_SIGMA ** 2))
    return blob / blob.sum()


def interpolation_matrix(nodes: int, pixels: int) -> np.ndarray:
    """픽셀 중심 값 → 등간격 절점 값 선형 보간 행렬 (nodes, pixels), 양 끝은 최근접"""
    coord = np.clip(np.linspace(0.0, pixels, nodes) - 0.5, 0.0, pixels - 1)
    lower = np.minimum(np.floor(coord).astype(int), pixels - 2) if pixels > 1 else np.zeros(nodes, int)
    frac = coord - lower
    matrix = np.zeros((nodes, pixels))
    matrix[np.arange(nodes), lower] += 1.0 - frac
    if pixels > 1:
        matrix[np.arange(nodes), lower + 1] += frac
    return matrix


def make_training_input(pattern: BeadingPattern, props: PlateProps, frequency: float, t: float,
                        rng: Optional[np.random.Generator] = None, cfg: Optional[PlateConfig] = None,
                        noise: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Tuple[float, float]]:
    """
    네트워크 입력 채널과 스칼라 조건

    Args:
        pattern: 깨끗한 패턴 [0, 1]
        props: 하중 위치, 회전 강성
        frequency: 질의 주파수 [Hz]
        t: 잡음 수준, x_t = t·g + (1−t)·ε (g 는 [−1, 1] 로 변환된 패턴)
        rng: ε 샘플링용
        noise: ε 를 직접 지정 (테스트용)

    Returns:
        ((3, H, W) 입력, (주파수, t))
    """
    if not T_RANGE[0] <= t <= T_RANGE[1]:
        raise ContractError(f"t 는 [{T_RANGE[0]}, {T_RANGE[1]}] 범위여야 합니다: {t}")
    cfg = cfg or PlateConfig()
    clean = 2.0 * pattern.grid - 1.0
    if noise is None:
        noise = (rng or np.random.default_rng()).standard_normal(clean.shape)
    noisy = t * clean + (1.0 - t) * noise
    channels = np.stack([noisy, load_blob(pattern.shape, props, cfg),
                         np.full(pattern.shape, props.rot_stiffness / ROT_STIFFNESS_SCALE)])
    return channels, (float(frequency), float(t))


class SurrogateModel:
    """대리 회귀 모델: 네트워크 + 입력 인코딩 + 출력 스케일"""

    def __init__(self, network: Module, params: NetworkParams, cfg: Optional[PlateConfig] = None):
        self.network = network
        self.params = params
        self.cfg = cfg or PlateConfig()
        self.nfe = NFECounter()
        d = params.descriptor
        self.pattern_shape = tuple(d["pattern_shape"])
        self.node_shape = tuple(d["node_shape"])
        self.v_scale = float(d["v_scale"])
        self.dtype = np.dtype(d.get("dtype", "float64"))
        self._ry = interpolation_matrix(self.node_shape[0], self.pattern_shape[0]).astype(self.dtype)
        self._rx_t = interpolation_matrix(self.node_shape[1], self.pattern_shape[1]).T.astype(self.dtype)

    @classmethod
    def create(cls, pattern_shape: Tuple[int, int], node_shape: Tuple[int, int], v_scale: float,
               rng: np.random.Generator, arch: str = "unet", dtype: str = "float32",
               cfg: Optional[PlateConfig] = None, **arch_options) -> "SurrogateModel":
        descriptor = {
            "kind": "surrogate", "arch": arch, "in_channels": INPUT_CHANNELS, "out_channels": 1,
            "cond_scales": [FREQ_SCALE, TIME_SCALE], "shape": list(pattern_shape),
            "pattern_shape": list(pattern_shape), "node_shape": list(node_shape),
            "v_scale": float(v_scale), "dtype": dtype, **arch_options,
        }
        return cls.from_descriptor(descriptor, rng, cfg)

    @classmethod
    def from_descriptor(cls, descriptor: dict, rng: np.random.Generator,
                        cfg: Optional[PlateConfig] = None) -> "SurrogateModel":
        network = build_network(descriptor, rng, dtype=np.dtype(descriptor.get("dtype", "float64")))
        return cls(network, NetworkParams(descriptor, network.parameters()), cfg)

    def freeze(self):
        freeze(self.params)

    def _forward(self, inputs: Tensor, frequencies: np.ndarray, times: np.ndarray) -> Tensor:
        """(N, 3, H, W) → 로그 압축 절점 필드 (N, ny·nx)"""
        out = self.network(inputs, [frequencies, times])
        nodes = (self._ry @ out[:, 0]) @ self._rx_t
        return nodes.reshape(inputs.shape[0], -1)

    def magnitudes_on_tape(self, x: Tensor, props: PlateProps, frequencies: Sequence[float],
                           t: float = 1.0) -> Tensor:
        """
        [−1, 1] 패턴 텐서 (H, W) 에 대한 주파수별 절점 속도 크기 (F, ny·nx)

        NFE 카운터는 주파수 수만큼 증가합니다.
        """
        freqs = np.asarray(frequencies, dtype=np.float64)
        count = freqs.size
        if x.shape != self.pattern_shape:
            raise DimensionError("대리모델 입력 패턴 형상 불일치", x.shape, self.pattern_shape)
        rows, cols = self.pattern_shape
        static = np.stack([load_blob(self.pattern_shape, props, self.cfg),
                           np.full(self.pattern_shape, props.rot_stiffness / ROT_STIFFNESS_SCALE)])
        pattern_channel = x.reshape(1, 1, rows, cols) * np.ones((count, 1, 1, 1), dtype=self.dtype)
        static_channels = Tensor(np.broadcast_to(static, (count, 2, rows, cols)).astype(self.dtype))
        inputs = ad.concat([pattern_channel, static_channels], axis=1)
        compressed = self._forward(inputs, freqs, np.full(count, t))
        self.nfe.add(count)
        return compressed.expm1() * self.v_scale

    def levels_on_tape(self, x: Tensor, props: PlateProps, frequencies: Sequence[float],
                       t: float = 1.0) -> Tensor:
        return levels_from_tape(self.magnitudes_on_tape(x, props, frequencies, t))

    def predict_fields(self, pattern: BeadingPattern, props: PlateProps, frequencies: Sequence[float],
                       t: float = 1.0) -> np.ndarray:
        with ad.no_grad():
            x = Tensor((2.0 * pattern.grid - 1.0).astype(self.dtype))
            return self.magnitudes_on_tape(x, props, frequencies, t).data.astype(np.float64)


def levels_from_tape(magnitudes: Tensor) -> Tensor:
    """(F, 노드) 속도 크기 → (F,) dB 레벨 (테이프 위)"""
    mean_square = (magnitudes * magnitudes).mean(axis=1)
    return (mean_square * (1.0 / V_REF)).log() * (10.0 / math.log(10.0))


def predict_frf(model: SurrogateModel, pattern: BeadingPattern, props: PlateProps,
                frequencies: Sequence[float], t: float = 1.0) -> FrequencyResponse:
    """주파수마다 한 번의 네트워크 평가로 FRF 예측"""
    with ad.no_grad():
        x = Tensor((2.0 * pattern.grid - 1.0).astype(model.dtype))
        levels = model.levels_on_tape(x, props, frequencies, t).data
    return FrequencyResponse(np.asarray(frequencies, dtype=np.float64), levels.astype(np.float64))


def _compress(fields: np.ndarray, v_scale: float) -> np.ndarray:
    return np.log1p(np.asarray(fields, dtype=np.float64) / v_scale)


def _batch_arrays(model: SurrogateModel, samples: Sequence[Sample], rng: np.random.Generator,
                  freqs_per_sample: int, t_range: Tuple[float, float], flip: bool):
    inputs, freqs, times, targets = [], [], [], []
    for sample in samples:
        if flip:
            for axis in ("x", "y"):
                if rng.random() < 0.5:
                    sample = flip_sample(sample, axis, model.cfg)
        picks = rng.choice(sample.frequencies.size, size=min(freqs_per_sample, sample.frequencies.size),
                           replace=False)
        for index in np.sort(picks):
            t = float(rng.uniform(*t_range))
            channels, _ = make_training_input(sample.pattern, sample.props, sample.frequencies[index], t,
                                              rng=rng, cfg=model.cfg)
            inputs.append(channels)
            freqs.append(sample.frequencies[index])
            times.append(t)
            targets.append(_compress(sample.fields[index], model.v_scale))
    return (np.array(inputs, dtype=model.dtype), np.array(freqs), np.array(times),
            np.array(targets, dtype=model.dtype))


def batch_loss(model: SurrogateModel, samples: Sequence[Sample], rng: np.random.Generator,
               freqs_per_sample: int = 2, t_range: Tuple[float, float] = T_RANGE, flip: bool = True) -> Tensor:
    inputs, freqs, times, targets = _batch_arrays(model, samples, rng, freqs_per_sample, t_range, flip)
    return mse(model._forward(Tensor(inputs), freqs, times), targets)


def evaluate_loss(model: SurrogateModel, samples: Sequence[Sample], seed: int = 0,
                  freqs_per_sample: int = 2, batch_size: int = 16) -> float:
    """고정 시드 평가 손실 (체크포인트 재현 확인용)"""
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    with ad.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            loss = batch_loss(model, chunk, rng, freqs_per_sample, flip=False)
            total += loss.item() * len(chunk)
            count += len(chunk)
    return total / max(count, 1)


def estimate_v_scale(samples: Sequence[Sample]) -> float:
    values = np.concatenate([s.fields.ravel() for s in samples])
    scale = float(np.mean(values))
    if not scale > 0:
        raise ContractError("학습 데이터 속도장이 모두 0 입니다")
    return scale


@dataclass
class TrainingResult:
    model: SurrogateModel
    losses: List[float] = field(default_factory=list)
    final_loss: float = float("nan")


def train_surrogate(samples: Sequence[Sample], epochs: int, lr: float, rng: np.random.Generator,
                    batch_size: int = 16, freqs_per_sample: int = 2, arch: str = "unet",
                    dtype: str = "float32", cfg: Optional[PlateConfig] = None,
                    model: Optional[SurrogateModel] = None, progress: bool = False,
                    eval_seed: int = 0, **arch_options) -> TrainingResult:
    """
    대리모델 학습 (로그 압축 속도장 MSE, 에폭마다 x/y 반전 증강)

    Args:
        samples: 학습 샘플
        epochs: 에폭 수
        lr: Adam 학습률
        rng: 초기화/셔플/잡음 난수
        freqs_per_sample: 샘플마다 스텝당 사용하는 주파수 수
        arch: "unet" 또는 "mlp"

    Returns:
        TrainingResult (모델, 에폭별 평균 손실, 고정 시드 최종 평가 손실)
    """
    if not samples:
        raise ContractError("학습 샘플이 없습니다")
    node_shape = samples[0].node_shape
    if model is None:
        model = SurrogateModel.create(samples[0].pattern.shape, node_shape, estimate_v_scale(samples), rng,
                                      arch=arch, dtype=dtype, cfg=cfg, **arch_options)
    optimizer = Adam(model.params.tensors, lr=lr)
    losses = []

    epoch_iter = tqdm(range(epochs), desc="surrogate", disable=not progress)
    for epoch in epoch_iter:
        order = rng.permutation(len(samples))
        total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = [samples[i] for i in order[start:start + batch_size]]
            loss = batch_loss(model, chunk, rng, freqs_per_sample)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"에폭 {epoch + 1} 손실이 유한하지 않습니다: {loss.item()}")
            ad.backward(loss)
            optimizer.step()
            model.params.step += 1
            total += loss.item() * len(chunk)
        losses.append(total / len(samples))
        epoch_iter.set_postfix(loss=f"{losses[-1]:.4g}")
        logger.info("surrogate epoch %d loss %.6g", epoch + 1, losses[-1])

    final = evaluate_loss(model, samples, seed=eval_seed, freqs_per_sample=freqs_per_sample)
    return TrainingResult(model=model, losses=losses, final_loss=final)
