"""
제조 가능성 제약 C1–C4 측정 및 후처리

C1: 가장자리 최소 거리, C2: 비딩 높이, C3: 플랭크 각도, C4: 최소 길이 스케일
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from core.errors import ConfigError
from core.model import BeadingPattern, PlateConfig

logger = logging.getLogger(__name__)

GridLike = Union[BeadingPattern, np.ndarray]


@dataclass(frozen=True)
class StructuringElement:
    """지름 l_min 의 원형 구조 요소 (픽셀 단위)"""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2 or mask.shape[0] != mask.shape[1] or mask.shape[0] % 2 == 0:
            raise ConfigError(f"구조 요소는 홀수 크기 정사각형이어야 합니다: {mask.shape}")
        if not np.array_equal(mask, np.rot90(mask)):
            raise ConfigError("구조 요소는 90도 회전 대칭이어야 합니다")
        object.__setattr__(self, "mask", mask)

    @classmethod
    def disk(cls, radius_px: float) -> "StructuringElement":
        """반지름 radius_px 안에 중심이 있는 픽셀들의 원판"""
        k = max(int(math.floor(radius_px + 1e-9)), 0)
        i, j = np.mgrid[-k:k + 1, -k:k + 1]
        return cls(i ** 2 + j ** 2 <= radius_px ** 2 + 1e-9)

    @classmethod
    def for_length(cls, l_min: float, pitch: float) -> "StructuringElement":
        return cls.disk(l_min / (2.0 * pitch))

    @property
    def reach(self) -> int:
        return self.mask.shape[0] // 2


@dataclass(frozen=True)
class ComplianceReport:
    """제약별 위반 마스크와 전체 준수율"""

    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray

    @property
    def violations(self) -> np.ndarray:
        return self.c1 | self.c2 | self.c3 | self.c4

    @property
    def ratio(self) -> float:
        return 1.0 - float(np.count_nonzero(self.violations)) / self.violations.size

    def counts(self) -> dict:
        return {name: int(np.count_nonzero(getattr(self, name))) for name in ("c1", "c2", "c3", "c4")}


def _as_grid(pattern: GridLike, cfg: PlateConfig) -> Tuple[np.ndarray, float, float]:
    if isinstance(pattern, BeadingPattern):
        return pattern.grid, pattern.pixel_pitch_x, pattern.pixel_pitch_y
    grid = np.asarray(pattern, dtype=np.float64)
    rows, cols = grid.shape
    return grid, cfg.length / cols, cfg.width / rows


def structuring_element(pattern: GridLike, cfg: PlateConfig) -> StructuringElement:
    _, pitch_x, pitch_y = _as_grid(pattern, cfg)
    return StructuringElement.for_length(cfg.l_min, min(pitch_x, pitch_y))


def binarize(pattern: GridLike, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"임계값은 (0, 1) 범위여야 합니다: {threshold}")
    grid = pattern.grid if isinstance(pattern, BeadingPattern) else np.asarray(pattern)
    return grid >= threshold


def _erode(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return ndimage.binary_erosion(mask, structure=se.mask, border_value=0)


def _dilate(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return ndimage.binary_dilation(mask, structure=se.mask, border_value=0)


def open_close(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """
    열림(침식 후 팽창) 다음 닫힘(팽창 후 침식)

    격자 밖은 배경(False)으로 패딩합니다.
    """
    mask = np.asarray(mask, dtype=bool)
    if se.reach == 0:
        return mask.copy()
    pad = 2 * se.reach + 1
    padded = np.pad(mask, pad, constant_values=False)
    opened = _dilate(_erode(padded, se), se)
    closed = _erode(_dilate(opened, se), se)
    return closed[pad:-pad, pad:-pad]


def check_c4(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """
    최소 길이 스케일 위반 픽셀

    같은 위상(비딩/배경) 픽셀로만 이루어진 원판 중 어느 하나에 포함되는 픽셀은 유효합니다.
    격자 밖은 각 위상과 같은 값으로 패딩합니다.
    """
    mask = np.asarray(mask, dtype=bool)
    if se.reach == 0:
        return np.zeros_like(mask)
    pad = 2 * se.reach + 1
    flags = np.zeros_like(mask)
    for phase in (mask, ~mask):
        padded = np.pad(phase, pad, constant_values=True)
        covered = _dilate(_erode(padded, se), se)[pad:-pad, pad:-pad]
        flags |= phase & ~covered
    return flags


def edge_distance(shape: Tuple[int, int], pitch_x: float, pitch_y: float,
                   length: float, width: float) -> np.ndarray:
    rows, cols = shape
    x = (np.arange(cols) + 0.5) * pitch_x
    y = (np.arange(rows) + 0.5) * pitch_y
    dx = np.minimum(x, length - x)
    dy = np.minimum(y, width - y)
    return np.minimum(dy[:, None], dx[None, :])


def check_c1_c3(pattern: GridLike, cfg: Optional[PlateConfig] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    C1, C2, C3 위반 마스크

    Args:
        pattern: BeadingPattern 또는 판 전체를 덮는 원시 격자 (클리핑 전 값 허용)
        cfg: 판 설정

    Returns:
        (c1, c2, c3) 불리언 마스크
    """
    cfg = cfg or PlateConfig()
    grid, pitch_x, pitch_y = _as_grid(pattern, cfg)
    rows, cols = grid.shape

    near_edge = edge_distance(grid.shape, pitch_x, pitch_y, cols * pitch_x, rows * pitch_y) < cfg.edge_margin
    c1 = near_edge & (grid > 0.0)
    c2 = grid > 1.0

    elevation = grid * cfg.bead_height
    limit = math.tan(math.radians(cfg.flank_angle))
    c3 = np.zeros(grid.shape, dtype=bool)
    steep_x = np.abs(np.diff(elevation, axis=1)) / pitch_x > limit
    c3[:, :-1] |= steep_x
    c3[:, 1:] |= steep_x
    steep_y = np.abs(np.diff(elevation, axis=0)) / pitch_y > limit
    c3[:-1, :] |= steep_y
    c3[1:, :] |= steep_y
    return c1, c2, c3


def measure_compliance(pattern: GridLike, cfg: Optional[PlateConfig] = None,
                       se: Optional[StructuringElement] = None) -> ComplianceReport:
    cfg = cfg or PlateConfig()
    c1, c2, c3 = check_c1_c3(pattern, cfg)
    se = se or structuring_element(pattern, cfg)
    c4 = check_c4(binarize(pattern), se)
    return ComplianceReport(c1=c1, c2=c2, c3=c3, c4=c4)


@dataclass(frozen=True)
class FlankProfile:
    """
    비딩 단면: 발 필렛(r_f) → 직선 플랭크(tan α_F) → 머리 필렛(r_h)

    footprint 는 높이 0 에서 최대 높이까지의 수평 거리입니다.
    """

    height: float
    angle_deg: float
    foot_radius: float
    head_radius: float

    @classmethod
    def from_config(cls, cfg: PlateConfig) -> "FlankProfile":
        return cls(cfg.bead_height, cfg.flank_angle, cfg.foot_radius, cfg.head_radius)

    @property
    def _arcs(self) -> Tuple[float, float, float, float]:
        alpha = math.radians(self.angle_deg)
        foot_run = self.foot_radius * math.sin(alpha)
        head_run = self.head_radius * math.sin(alpha)
        arc_rise = (self.foot_radius + self.head_radius) * (1.0 - math.cos(alpha))
        flank_rise = self.height - arc_rise
        if flank_rise < 0:
            raise ConfigError("필렛 반지름이 비딩 높이에 비해 너무 큽니다")
        return foot_run, flank_rise / math.tan(alpha), head_run, alpha

    @property
    def footprint(self) -> float:
        foot_run, flank_run, head_run, _ = self._arcs
        return foot_run + flank_run + head_run

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """수평 위치 u [m] 에서의 정규화 높이 [0, 1]"""
        foot_run, flank_run, head_run, alpha = self._arcs
        total = foot_run + flank_run + head_run
        r_f, r_h = self.foot_radius, self.head_radius
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, total)

        foot = r_f - np.sqrt(np.maximum(r_f ** 2 - u ** 2, 0.0))
        flank = r_f * (1.0 - math.cos(alpha)) + (u - foot_run) * math.tan(alpha)
        head = self.height - r_h + np.sqrt(np.maximum(r_h ** 2 - (total - u) ** 2, 0.0))
        z = np.where(u < foot_run, foot, np.where(u <= foot_run + flank_run, flank, head))
        return np.clip(z / self.height, 0.0, 1.0)


def postprocess(pattern: BeadingPattern, cfg: Optional[PlateConfig] = None,
                enforce_c4: bool = True, se: Optional[StructuringElement] = None) -> BeadingPattern:
    """
    제약 준수를 위한 후처리

    이진화 → 가장자리 여유 제거 → 열림/닫힘 → 거리 변환 기반 플랭크 단면 적용

    Args:
        pattern: 입력 패턴
        cfg: 판 설정
        enforce_c4: False 이면 열림/닫힘을 건너뜀 (대리모델 학습 데이터용)
        se: 구조 요소 (기본: cfg.l_min 과 픽셀 간격으로 생성)
    """
    cfg = cfg or PlateConfig()
    profile = FlankProfile.from_config(cfg)
    half = 0.5 * profile.footprint
    pitch_x, pitch_y = pattern.pixel_pitch_x, pattern.pixel_pitch_y
    length, width = pattern.extent
    edge = edge_distance(pattern.shape, pitch_x, pitch_y, length, width)

    mask = binarize(pattern)
    mask &= edge >= cfg.edge_margin + half
    if enforce_c4:
        mask = open_close(mask, se or structuring_element(pattern, cfg))
    if not mask.any():
        return pattern.with_grid(np.zeros(pattern.shape))

    sampling = (pitch_y, pitch_x)
    half_pitch = 0.5 * min(pitch_x, pitch_y)
    if mask.all():
        signed = np.full(mask.shape, np.inf)
    else:
        d_in = ndimage.distance_transform_edt(mask, sampling=sampling)
        d_out = ndimage.distance_transform_edt(~mask, sampling=sampling)
        signed = np.where(mask, d_in - half_pitch, -(d_out - half_pitch))

    elevation = profile(signed + half)
    elevation[edge < cfg.edge_margin] = 0.0
    return pattern.with_grid(elevation)
