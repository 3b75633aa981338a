"""
실행 환경 설정 모듈
.env / 환경 변수에서 데스크 스케일 실행 설정을 읽어옵니다.
"""
import os
from dataclasses import dataclass
from typing import Optional, Tuple

from dotenv import load_dotenv

from core.errors import ConfigError

# 환경 변수 로드
load_dotenv()


def parse_shape(text: str) -> Tuple[int, int]:
    """
    "HxW" 형식 문자열을 (H, W) 튜플로 변환

    Args:
        text: 예) "48x72"

    Returns:
        (행 수, 열 수)
    """
    try:
        rows, cols = (int(part) for part in text.lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"형상 문자열 형식 오류 '{text}': {e}")
    if rows <= 0 or cols <= 0:
        raise ConfigError(f"형상은 양수여야 합니다: '{text}'")
    return rows, cols


def _env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class DeskSettings:
    """데스크 스케일 실행 설정"""

    threads: int
    pattern_shape: Tuple[int, int]
    mesh_shape: Tuple[int, int]
    train_dtype: str
    tracing: bool
    run_slow: bool

    @classmethod
    def from_env(cls,
                 threads: Optional[int] = None,
                 pattern_shape: Optional[str] = None,
                 mesh_shape: Optional[str] = None) -> "DeskSettings":
        """
        환경 변수에서 설정 생성 (인자가 주어지면 우선)

        Args:
            threads: 작업자 수 (PLATEBEAD_THREADS)
            pattern_shape: 패턴 격자 "HxW" (PLATEBEAD_GRID)
            mesh_shape: FEM 노드 격자 "NyxNx" (PLATEBEAD_MESH)
        """
        raw_threads = threads or os.getenv("PLATEBEAD_THREADS") or os.cpu_count() or 1
        try:
            threads_value = int(raw_threads)
        except ValueError as e:
            raise ConfigError(f"PLATEBEAD_THREADS 값 오류: {e}")
        if threads_value <= 0:
            raise ConfigError("PLATEBEAD_THREADS 는 1 이상이어야 합니다")

        train_dtype = os.getenv("PLATEBEAD_TRAIN_DTYPE", "float32")
        if train_dtype not in ("float32", "float64"):
            raise ConfigError(f"지원하지 않는 학습 dtype: {train_dtype}")

        return cls(
            threads=threads_value,
            pattern_shape=parse_shape(pattern_shape or os.getenv("PLATEBEAD_GRID", "48x72")),
            mesh_shape=parse_shape(mesh_shape or os.getenv("PLATEBEAD_MESH", "31x46")),
            train_dtype=train_dtype,
            tracing=_env_flag("PLATEBEAD_TRACING"),
            run_slow=_env_flag("PLATEBEAD_RUN_SLOW"),
        )


def validate_settings(settings: Optional[DeskSettings] = None) -> bool:
    """
    실행 설정 검증

    Returns:
        설정이 유효하면 True
    """
    try:
        settings = settings or DeskSettings.from_env()
    except ConfigError as e:
        print(f"❌ 설정 오류: {e}")
        return False

    problems = []
    rows, cols = settings.pattern_shape
    if rows % 4 or cols % 4:
        problems.append(f"패턴 격자 {rows}x{cols} 는 4의 배수여야 합니다 (UNet 2단 다운샘플)")
    if min(settings.mesh_shape) < 8:
        problems.append(f"FEM 격자 {settings.mesh_shape} 가 너무 거칩니다 (최소 8x8)")

    print("⚙️ 실행 설정:")
    print(f"  - 작업자 수: {settings.threads}")
    print(f"  - 패턴 격자: {rows}x{cols}")
    print(f"  - FEM 격자: {settings.mesh_shape[0]}x{settings.mesh_shape[1]}")
    print(f"  - 학습 dtype: {settings.train_dtype}")
    print(f"  - 추적: {'켜짐' if settings.tracing else '꺼짐'}")

    for problem in problems:
        print(f"❌ {problem}")
    return not problems
