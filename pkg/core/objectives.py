"""
진동 목적함수 (최소화 대상)

- mean-level: 대역 [f1, f2] 평균 속도 레벨
- first-eig: 첫 두 공진 피크 사이까지의 softmax 가중 평균 주파수의 음수 (첫 고유진동수 상승 유도)

같은 기술자가 대리모델 예측(테이프 위)과 FEM 검증(일반 배열) 모두에 쓰입니다.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from core import autodiff as ad
from core.autodiff import Tensor
from core.errors import ConfigError, ObjectiveUndefinedError
from core.model import FrequencyResponse, trapezoid_weights

KINDS = ("mean-level", "first-eig")


@dataclass(frozen=True)
class Objective:
    kind: str = "mean-level"
    f1: float = 100.0
    f2: float = 200.0
    df: float = 10.0
    beta_j: float = 1.0
    blur_sigma: float = 2.0
    prominence: float = 1.0
    validate_df: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"알 수 없는 목적함수: {self.kind} (가능: {', '.join(KINDS)})")
        if not 0 < self.f1 < self.f2 or self.df <= 0 or self.validate_df <= 0:
            raise ConfigError(f"목적함수 주파수 구간 오류: [{self.f1}, {self.f2}] / {self.df}, {self.validate_df}")

    def frequencies(self) -> np.ndarray:
        """평가 주파수 격자 (대리모델 호출 수 = 길이)"""
        return np.arange(self.f1, self.f2 + 0.5 * self.df, self.df)

    def validation_frequencies(self) -> np.ndarray:
        """FEM 검증용 조밀한 격자 (대리모델 격자와 별개)"""
        return np.arange(self.f1, self.f2 + 0.5 * self.validate_df, self.validate_df)

    def on_tape(self, levels: Tensor, frequencies: np.ndarray) -> Tensor:
        """주파수별 레벨 텐서 (F,) → 스칼라 목적함수 텐서"""
        if self.kind == "mean-level":
            return objective_mean_level(levels, frequencies, self.f1, self.f2)
        return objective_first_eig(levels, frequencies, self.beta_j, self.blur_sigma, self.prominence)

    def evaluate(self, frf: FrequencyResponse) -> float:
        with ad.no_grad():
            return self.on_tape(Tensor(frf.levels), frf.frequencies).item()


def objective_mean_level(levels: Tensor, frequencies: np.ndarray, f1: float, f2: float) -> Tensor:
    weights = trapezoid_weights(frequencies, f1, f2).astype(levels.dtype)
    return (levels * weights).sum()


def first_two_peaks(levels: np.ndarray, frequencies: np.ndarray, blur_sigma: float = 2.0,
                    prominence: float = 1.0) -> Tuple[float, float]:
    """
    블러된 FRF 에서 첫 두 피크 주파수

    blur_sigma 는 Hz 단위이며 격자 간격으로 나눠 샘플 단위로 바꿉니다.
    """
    levels = np.asarray(levels, dtype=np.float64)
    spacing = float(np.median(np.diff(frequencies))) if len(frequencies) > 1 else 1.0
    sigma = blur_sigma / spacing
    smoothed = gaussian_filter1d(levels, sigma) if sigma > 0 else levels
    peaks, _ = find_peaks(smoothed, prominence=prominence)
    if peaks.size < 2:
        raise ObjectiveUndefinedError(f"공진 피크가 {peaks.size}개뿐이라 첫 고유진동수 목적함수를 정의할 수 없습니다")
    return float(frequencies[peaks[0]]), float(frequencies[peaks[1]])


def objective_first_eig(levels: Tensor, frequencies: np.ndarray, beta_j: float = 1.0,
                        blur_sigma: float = 2.0, prominence: float = 1.0) -> Tensor:
    """
    J = −∫Ω e^{β_J L} dΩ / ∫e^{β_J L} dΩ  (0 Hz ~ 첫 두 피크의 중점)

    피크 위치는 이 스텝의 상수로 취급합니다.
    첫 샘플 아래 [0, Ω_0] 구간은 첫 샘플 레벨을 상수로 연장해 닫힌 식으로 더합니다.
    """
    frequencies = np.asarray(frequencies, dtype=np.float64)
    first, second = first_two_peaks(levels.data, frequencies, blur_sigma, prominence)
    start = float(frequencies[0])
    cutoff = 0.5 * (first + second)
    # 정규화 전 사다리꼴 가중치 (dΩ 단위)
    weights = trapezoid_weights(frequencies, start, cutoff) * (cutoff - start)
    end = int(np.flatnonzero(weights > 0)[-1]) + 1
    head = levels[:end]
    shift = float(np.max(head.data))
    soft = ((head - shift) * beta_j).exp()
    weighted = soft * weights[:end].astype(levels.dtype)
    numerator = (weighted * frequencies[:end].astype(levels.dtype)).sum()
    denominator = weighted.sum()
    if start > 0:
        numerator = numerator + soft[0] * (0.5 * start * start)
        denominator = denominator + soft[0] * start
    return -(numerator / denominator)

