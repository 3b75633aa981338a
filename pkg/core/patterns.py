"""
기하 프리미티브(선, 타원, 사각형) 기반 비딩 패턴 생성과 43개 파라미터 인코딩
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.constraints import postprocess
from core.errors import ConfigError, DimensionError
from core.model import BeadingPattern, PlateConfig

KINDS = ("line", "ellipse", "rectangle")
PARAM_NAMES: Dict[str, Tuple[str, ...]] = {
    "line": ("x0", "y0", "x1", "y1", "stroke"),
    "ellipse": ("length", "width", "cx", "cy", "stroke", "rotation", "full", "arc"),
    "rectangle": ("length", "width", "cx", "cy", "stroke", "rotation", "filled"),
}
SLOTS_PER_KIND = 2
PARAM_COUNT = SLOTS_PER_KIND * sum(len(names) for names in PARAM_NAMES.values()) + len(KINDS)
MAX_STROKE = 0.08
DEFAULT_SHAPE = (48, 72)


@dataclass(frozen=True)
class PrimitiveSpec:
    """
    프리미티브 하나의 물리 파라미터

    좌표(x0, y0, x1, y1, cx, cy)는 판 대비 단위 좌표, 치수(length, width, stroke)는 m,
    rotation/arc 는 rad, 스위치(full, filled)는 0 또는 1 입니다.
    """

    kind: str
    params: Dict[str, float]

    def __post_init__(self):
        if self.kind not in PARAM_NAMES:
            raise ConfigError(f"알 수 없는 프리미티브 종류: {self.kind}")
        if set(self.params) != set(PARAM_NAMES[self.kind]):
            raise ConfigError(f"{self.kind} 파라미터 이름 오류: {sorted(self.params)}")
        p = self.params
        for name in ("stroke", "length", "width"):
            if name in p and p[name] <= 0:
                raise ConfigError(f"{self.kind}.{name} 는 양수여야 합니다")
        for name in ("x0", "y0", "x1", "y1", "cx", "cy"):
            if name in p and not 0.0 <= p[name] <= 1.0:
                raise ConfigError(f"{self.kind}.{name} 는 단위 정사각형 안이어야 합니다")
        for name in ("full", "filled"):
            if name in p and p[name] not in (0.0, 1.0):
                raise ConfigError(f"{self.kind}.{name} 스위치는 0 또는 1 이어야 합니다")

    @classmethod
    def from_unit(cls, kind: str, values: Sequence[float], plate: PlateConfig) -> "PrimitiveSpec":
        """[0, 1] 값들을 물리 파라미터로 변환"""
        names = PARAM_NAMES[kind]
        if len(values) != len(names):
            raise DimensionError(f"{kind} 파라미터 개수 오류", (len(values),), (len(names),))
        u = dict(zip(names, (float(v) for v in values)))
        params = {}
        for name, value in u.items():
            if name == "length":
                params[name] = _scale(value, plate.l_min, 0.5 * plate.length)
            elif name == "width":
                params[name] = _scale(value, plate.l_min, 0.5 * plate.width)
            elif name == "stroke":
                params[name] = _scale(value, plate.l_min, MAX_STROKE)
            elif name == "rotation":
                params[name] = value * math.pi
            elif name == "arc":
                params[name] = value * 2.0 * math.pi
            elif name in ("full", "filled"):
                params[name] = 1.0 if value >= 0.5 else 0.0
            else:
                params[name] = value
        return cls(kind, params)


def _scale(u: float, low: float, high: float) -> float:
    return low + u * (high - low)


@dataclass(frozen=True)
class GenConfig:
    """프리미티브 생성 설정"""

    max_per_kind: int = 2
    mirror_x: float = 0.5
    mirror_y: float = 0.5
    seed: int = 0
    enforce_c4: bool = True
    shape: Tuple[int, int] = DEFAULT_SHAPE

    def __post_init__(self):
        if self.max_per_kind < 0:
            raise ConfigError("프리미티브 개수는 음수일 수 없습니다")
        if not (0.0 <= self.mirror_x <= 1.0 and 0.0 <= self.mirror_y <= 1.0):
            raise ConfigError("반전 확률은 [0, 1] 범위여야 합니다")


def _pixel_centers(shape: Tuple[int, int], plate: PlateConfig) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = shape
    x = (np.arange(cols) + 0.5) * plate.length / cols
    y = (np.arange(rows) + 0.5) * plate.width / rows
    return np.meshgrid(x, y)


def _local(xx: np.ndarray, yy: np.ndarray, cx: float, cy: float, angle: float):
    dx, dy = xx - cx, yy - cy
    c, s = math.cos(angle), math.sin(angle)
    return c * dx + s * dy, -s * dx + c * dy


def rasterize(spec: PrimitiveSpec, shape: Tuple[int, int], plate: PlateConfig) -> np.ndarray:
    """픽셀 중심이 프리미티브 안에 있으면 True"""
    xx, yy = _pixel_centers(shape, plate)
    p = spec.params
    half = 0.5 * p["stroke"]

    if spec.kind == "line":
        ax, ay = p["x0"] * plate.length, p["y0"] * plate.width
        bx, by = p["x1"] * plate.length, p["y1"] * plate.width
        ex, ey = bx - ax, by - ay
        seg2 = ex * ex + ey * ey
        if seg2 == 0.0:
            t = np.zeros_like(xx)
        else:
            t = np.clip(((xx - ax) * ex + (yy - ay) * ey) / seg2, 0.0, 1.0)
        return np.hypot(xx - (ax + t * ex), yy - (ay + t * ey)) <= half

    cx, cy = p["cx"] * plate.length, p["cy"] * plate.width
    a, b = 0.5 * p["length"], 0.5 * p["width"]
    xr, yr = _local(xx, yy, cx, cy, p["rotation"])

    if spec.kind == "ellipse":
        level = (xr / a) ** 2 + (yr / b) ** 2 - 1.0
        grad = 2.0 * np.sqrt(xr ** 2 / a ** 4 + yr ** 2 / b ** 4)
        ring = np.abs(level) <= half * np.maximum(grad, 1e-12)
        if p["full"] == 1.0:
            return ring
        angle = np.mod(np.arctan2(yr / b, xr / a), 2.0 * math.pi)
        return ring & (angle <= p["arc"])

    inside = (np.abs(xr) <= a) & (np.abs(yr) <= b)
    if p["filled"] == 1.0:
        return inside
    outer = (np.abs(xr) <= a + half) & (np.abs(yr) <= b + half)
    inner = (np.abs(xr) < a - half) & (np.abs(yr) < b - half)
    return outer & ~inner


def mirror(grid: np.ndarray, axis: str) -> np.ndarray:
    """x 축 반전은 열 순서, y 축 반전은 행 순서를 뒤집음"""
    if axis == "x":
        return grid[:, ::-1]
    if axis == "y":
        return grid[::-1, :]
    raise ConfigError(f"반전 축 오류: {axis}")


def compose(specs: Sequence[PrimitiveSpec], shape: Tuple[int, int], plate: PlateConfig,
            mirror_axes: Sequence[str] = ()) -> np.ndarray:
    """프리미티브 합집합을 래스터화하고 지정한 축으로 대칭 복사본을 합침"""
    grid = np.zeros(shape)
    for spec in specs:
        grid = np.maximum(grid, rasterize(spec, shape, plate).astype(np.float64))
    for axis in mirror_axes:
        grid = np.maximum(grid, mirror(grid, axis))
    return np.clip(grid, 0.0, 1.0)


def sample_specs(rng: np.random.Generator, cfg: GenConfig, plate: PlateConfig) -> List[PrimitiveSpec]:
    specs = []
    for kind in KINDS:
        count = int(rng.integers(0, cfg.max_per_kind + 1))
        for _ in range(count):
            specs.append(PrimitiveSpec.from_unit(kind, rng.random(len(PARAM_NAMES[kind])), plate))
    return specs


def sample_pattern(rng: np.random.Generator, cfg: GenConfig = GenConfig(),
                   plate: Optional[PlateConfig] = None) -> BeadingPattern:
    """
    무작위 프리미티브 패턴 생성

    Args:
        rng: 난수 생성기 (호출자가 관리)
        cfg: 생성 설정
        plate: 판 설정

    Returns:
        후처리를 거친 BeadingPattern
    """
    plate = plate or PlateConfig()
    specs = sample_specs(rng, cfg, plate)
    axes = [axis for axis, prob in (("x", cfg.mirror_x), ("y", cfg.mirror_y)) if rng.random() < prob]
    grid = compose(specs, cfg.shape, plate, axes)
    return postprocess(BeadingPattern.for_plate(grid, plate), plate, enforce_c4=cfg.enforce_c4)


def decode_specs(v: Sequence[float], plate: PlateConfig) -> List[PrimitiveSpec]:
    """43 차원 벡터 → 프리미티브 목록 (마지막 3개 값은 종류별 개수)"""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != PARAM_COUNT:
        raise DimensionError("파라미터 벡터 길이 오류", v.shape, (PARAM_COUNT,))
    v = np.clip(v, 0.0, 1.0)
    counts = np.minimum(np.floor(3.0 * v[-len(KINDS):]).astype(int), SLOTS_PER_KIND)

    specs = []
    offset = 0
    for kind, count in zip(KINDS, counts):
        width = len(PARAM_NAMES[kind])
        for slot in range(SLOTS_PER_KIND):
            if slot < count:
                specs.append(PrimitiveSpec.from_unit(kind, v[offset:offset + width], plate))
            offset += width
    return specs


def decode_params(v: Sequence[float], plate: Optional[PlateConfig] = None,
                  shape: Tuple[int, int] = DEFAULT_SHAPE) -> BeadingPattern:
    """유전 알고리즘용 43 파라미터 벡터를 후처리된 패턴으로 변환"""
    plate = plate or PlateConfig()
    grid = compose(decode_specs(v, plate), shape, plate)
    return postprocess(BeadingPattern.for_plate(grid, plate), plate)


def encode_unit(specs: Dict[str, List[Sequence[float]]]) -> np.ndarray:
    """
    종류별 단위 파라미터 목록을 43 차원 벡터로 패킹 (테스트와 초기 개체 생성용)

    Args:
        specs: {"rectangle": [[...7개...]], ...}
    """
    v = np.zeros(PARAM_COUNT)
    offset = 0
    counts = []
    for kind in KINDS:
        width = len(PARAM_NAMES[kind])
        entries = list(specs.get(kind, []))
        if len(entries) > SLOTS_PER_KIND:
            raise ConfigError(f"{kind} 는 최대 {SLOTS_PER_KIND}개입니다")
        for slot, entry in enumerate(entries):
            v[offset + slot * width: offset + (slot + 1) * width] = entry
        offset += SLOTS_PER_KIND * width
        counts.append(len(entries))
    v[-len(KINDS):] = (np.asarray(counts) + 0.5) / 3.0
    return v
