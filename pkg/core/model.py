"""
판 모델 도메인 타입과 속도장 → dB 레벨 변환 공식
"""
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from core.errors import ConfigError, DimensionError, InsufficientResolutionError, NonFiniteLevelError

# 제곱 속도 기준값 [m²/s²]
V_REF = 1e-9
# 학습 데이터 하중 위치 최소 여유 [m]
LOAD_MARGIN = 0.05


@dataclass(frozen=True)
class PlateConfig:
    """판 형상, 재료, 경계 조건, 하중 위치, 비딩 단면 치수 (기본값: 알루미늄 판, 자유 회전)"""

    length: float = 0.9
    width: float = 0.6
    thickness: float = 0.003
    density: float = 2700.0
    youngs_modulus: float = 7.0e10
    poisson_ratio: float = 0.3
    loss_factor: float = 0.02
    rot_stiffness: float = 0.0
    load_x: float = 0.31
    load_y: float = 0.21
    bead_height: float = 0.02
    flank_angle: float = 70.0
    foot_radius: float = 0.0095
    head_radius: float = 0.0095
    edge_margin: float = 0.01
    l_min: float = 0.01

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ConfigError(f"판 치수는 양수여야 합니다: {self.length} x {self.width}")
        if not 0 < self.thickness < 0.1 * min(self.length, self.width):
            raise ConfigError(f"두께가 판 치수에 비해 유효하지 않습니다: {self.thickness}")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ConfigError(f"포아송비 범위 오류: {self.poisson_ratio}")
        if self.loss_factor < 0 or self.rot_stiffness < 0:
            raise ConfigError("손실계수와 회전 강성은 음수일 수 없습니다")
        if self.density <= 0 or self.youngs_modulus <= 0:
            raise ConfigError("밀도와 영률은 양수여야 합니다")
        if not (LOAD_MARGIN <= self.load_x <= self.length - LOAD_MARGIN
                and LOAD_MARGIN <= self.load_y <= self.width - LOAD_MARGIN):
            raise ConfigError(
                f"하중 위치 ({self.load_x}, {self.load_y}) 가 가장자리 {LOAD_MARGIN} m 여유 밖에 있습니다")
        if not 0 < self.flank_angle < 90:
            raise ConfigError(f"플랭크 각도 범위 오류: {self.flank_angle}")
        if self.bead_height <= 0 or self.l_min <= 0 or self.edge_margin < 0:
            raise ConfigError("비딩 높이, 최소 길이, 가장자리 여유 값 오류")

    @property
    def bending_stiffness(self) -> float:
        return self.youngs_modulus * self.thickness ** 3 / (12.0 * (1.0 - self.poisson_ratio ** 2))

    def with_props(self, load_x: Optional[float] = None, load_y: Optional[float] = None,
                   rot_stiffness: Optional[float] = None) -> "PlateConfig":
        return replace(
            self,
            load_x=self.load_x if load_x is None else load_x,
            load_y=self.load_y if load_y is None else load_y,
            rot_stiffness=self.rot_stiffness if rot_stiffness is None else rot_stiffness,
        )

    @classmethod
    def preset(cls, name: str) -> "PlateConfig":
        """
        이름으로 경계 조건 프리셋 생성

        Args:
            name: "free" 또는 "clamped"
        """
        try:
            return cls(**PLATE_PRESETS[name])
        except KeyError:
            raise ConfigError(f"알 수 없는 프리셋: {name} (가능: {', '.join(PLATE_PRESETS)})")


PLATE_PRESETS = {
    "free": {"load_x": 0.31, "load_y": 0.21, "rot_stiffness": 0.0},
    "clamped": {"load_x": 0.52, "load_y": 0.35, "rot_stiffness": 100.0},
}


@dataclass(frozen=True)
class BeadingPattern:
    """
    정규화된 비딩 높이맵 (행 = y, 열 = x)

    셀 값 × bead_height 가 실제 높이이며, 격자는 판 사각형 전체를 덮습니다.
    """

    grid: np.ndarray
    pixel_pitch_x: float
    pixel_pitch_y: float

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 2 or grid.size == 0:
            raise DimensionError("패턴은 비어있지 않은 2차원 격자여야 합니다", grid.shape)
        if not np.all(np.isfinite(grid)) or grid.min() < 0.0 or grid.max() > 1.0:
            raise ConfigError("패턴 값은 [0, 1] 범위여야 합니다")
        if self.pixel_pitch_x <= 0 or self.pixel_pitch_y <= 0:
            raise ConfigError("픽셀 간격은 양수여야 합니다")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @classmethod
    def for_plate(cls, grid: np.ndarray, cfg: PlateConfig) -> "BeadingPattern":
        grid = np.asarray(grid)
        rows, cols = grid.shape
        return cls(grid, cfg.length / cols, cfg.width / rows)

    @classmethod
    def flat(cls, shape: Tuple[int, int], cfg: PlateConfig) -> "BeadingPattern":
        return cls.for_plate(np.zeros(shape), cfg)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    @property
    def extent(self) -> Tuple[float, float]:
        """(길이 x, 폭 y) [m]"""
        rows, cols = self.grid.shape
        return cols * self.pixel_pitch_x, rows * self.pixel_pitch_y

    def with_grid(self, grid: np.ndarray) -> "BeadingPattern":
        return BeadingPattern(grid, self.pixel_pitch_x, self.pixel_pitch_y)

    def mirrored(self, axis: str) -> "BeadingPattern":
        """axis="x" 는 좌우(열) 반전, "y" 는 상하(행) 반전"""
        if axis not in ("x", "y"):
            raise ConfigError(f"반전 축 오류: {axis}")
        return self.with_grid(self.grid[:, ::-1] if axis == "x" else self.grid[::-1, :])

    def beaded_fraction(self, threshold: float = 0.5) -> float:
        return float(np.mean(self.grid >= threshold))


@dataclass(frozen=True)
class VelocityField:
    """한 주파수에서의 노드별 법선 속도 크기"""

    frequency: float
    magnitudes: np.ndarray

    def __post_init__(self):
        magnitudes = np.array(self.magnitudes, dtype=np.float64).ravel()
        if magnitudes.size == 0:
            raise DimensionError("속도장이 비어있습니다")
        if np.any(magnitudes < 0):
            raise ConfigError("속도 크기는 음수일 수 없습니다")
        magnitudes.setflags(write=False)
        object.__setattr__(self, "magnitudes", magnitudes)


@dataclass(frozen=True)
class FrequencyResponse:
    """주파수별 평균 제곱 속도 레벨 L_v [dB]"""

    frequencies: np.ndarray
    levels: np.ndarray
    fields: Optional[Tuple[VelocityField, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        freqs = np.array(self.frequencies, dtype=np.float64).ravel()
        levels = np.array(self.levels, dtype=np.float64).ravel()
        if freqs.shape != levels.shape:
            raise DimensionError("주파수와 레벨 길이가 다릅니다", freqs.shape, levels.shape)
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise ConfigError("주파수는 엄격히 증가해야 합니다")
        freqs.setflags(write=False)
        levels.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return self.frequencies.size


def level_from_field(field: VelocityField) -> float:
    """
    공간 평균 제곱 속도를 dB 레벨로 변환

    Returns:
        10·log10(mean(v̂²) / V_REF)
    """
    mean_square = float(np.mean(np.square(field.magnitudes)))
    if not mean_square > 0.0 or not math.isfinite(mean_square):
        raise NonFiniteLevelError(f"{field.frequency} Hz 속도장이 0 이어서 레벨을 계산할 수 없습니다")
    return 10.0 * math.log10(mean_square / V_REF)


def levels_from_magnitudes(magnitudes: np.ndarray) -> np.ndarray:
    """(주파수, 노드) 배열에 대한 level_from_field 일괄 버전"""
    mean_square = np.mean(np.square(magnitudes), axis=-1)
    if np.any(~(mean_square > 0.0)) or not np.all(np.isfinite(mean_square)):
        raise NonFiniteLevelError("속도장이 0 이거나 유한하지 않습니다")
    return 10.0 * np.log10(mean_square / V_REF)


def trapezoid_weights(frequencies: np.ndarray, f1: float, f2: float) -> np.ndarray:
    """
    구간 평균 (1/(f2−f1))∫ L dΩ 의 사다리꼴 가중치

    샘플 사이를 선형 보간한 곡선의 적분이므로 구간 끝이 샘플과 일치하지 않아도 됩니다.

    Args:
        frequencies: 증가하는 샘플 주파수
        f1, f2: 적분 구간

    Returns:
        Σ w·L 이 구간 평균이 되는 가중치 벡터
    """
    freqs = np.asarray(frequencies, dtype=np.float64)
    if not f1 < f2:
        raise InsufficientResolutionError(f"적분 구간이 비어있습니다: [{f1}, {f2}]")
    inside = np.count_nonzero((freqs >= f1) & (freqs <= f2))
    if inside < 2:
        raise InsufficientResolutionError(f"[{f1}, {f2}] Hz 구간의 샘플이 {inside}개뿐입니다")
    if f1 < freqs[0] or f2 > freqs[-1]:
        raise InsufficientResolutionError(
            f"[{f1}, {f2}] Hz 가 샘플 범위 [{freqs[0]}, {freqs[-1]}] 를 벗어납니다")

    left, right = freqs[:-1], freqs[1:]
    span = right - left
    a = np.clip(left, f1, f2)
    b = np.clip(right, f1, f2)
    # 각 구간에서 양 끝 hat 함수의 적분
    w_left = ((right - a) ** 2 - (right - b) ** 2) / (2.0 * span)
    w_right = ((b - left) ** 2 - (a - left) ** 2) / (2.0 * span)

    weights = np.zeros_like(freqs)
    weights[:-1] += w_left
    weights[1:] += w_right
    return weights / (f2 - f1)


def mean_level(frf: FrequencyResponse, f1: float, f2: float) -> float:
    """대역 [f1, f2] 에서의 평균 레벨 (사다리꼴 적분)"""
    weights = trapezoid_weights(frf.frequencies, f1, f2)
    return float(weights @ frf.levels)


def compliance(pattern: BeadingPattern, cfg: Optional[PlateConfig] = None):
    """제약 C1–C4 준수 보고서 (판정 로직은 core.constraints)"""
    from core.constraints import measure_compliance

    return measure_compliance(pattern, cfg or PlateConfig())
