"""
패턴, 주파수 응답, 비교 결과 파일 입출력

- PGM (P5, 8비트): 확인용 이미지, pillow 로 읽고 씀
- BPAT: "BPAT" | u32 H | u32 W | u32 예약 | little-endian float32 H·W 값
- CSV: FRF ("frequency_hz,level_db"), 비교 보고서, 최고값 궤적, 손실 곡선
"""
import csv
import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from core.errors import ConfigError, PatternFormatError
from core.model import BeadingPattern, FrequencyResponse, PlateConfig

BPAT_MAGIC = b"BPAT"
BPAT_HEADER = struct.Struct("<4sIII")
FRF_HEADER = ("frequency_hz", "level_db")
REPORT_COLUMNS = ("method", "seed", "predicted", "validated", "gap", "nfe", "plates", "wall_time")


def write_pgm(path: Path, grid: np.ndarray) -> Path:
    """[0, 1] 격자를 8비트 PGM 으로 저장 (1 = 흰색)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round(np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PPM")
    return path


def read_pgm(path: Path, cfg: Optional[PlateConfig] = None) -> BeadingPattern:
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.mode != "L":
                raise PatternFormatError(f"8비트 그레이스케일 PGM 이 아닙니다 ({image.mode}): {path}")
            pixels = np.asarray(image, dtype=np.float64)
    except (UnidentifiedImageError, OSError) as e:
        raise PatternFormatError(f"PGM 읽기 실패 {path}: {e}")
    return BeadingPattern.for_plate(pixels / 255.0, cfg or PlateConfig())


def write_bpat(path: Path, pattern: BeadingPattern) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = pattern.shape
    data = np.ascontiguousarray(pattern.grid, dtype="<f4")
    path.write_bytes(BPAT_HEADER.pack(BPAT_MAGIC, rows, cols, 0) + data.tobytes())
    return path


def decode_bpat(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    """BPAT 바이트열 → (H, W) float64 격자"""
    if len(blob) < BPAT_HEADER.size:
        raise PatternFormatError(f"BPAT 헤더가 잘렸습니다: {source}")
    magic, rows, cols, _ = BPAT_HEADER.unpack_from(blob)
    if magic != BPAT_MAGIC:
        raise PatternFormatError(f"BPAT 매직 불일치 ({magic!r}): {source}")
    expected = BPAT_HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise PatternFormatError(f"BPAT 크기 불일치: {len(blob)} bytes, 기대값 {expected}: {source}")
    return np.frombuffer(blob, dtype="<f4", offset=BPAT_HEADER.size).reshape(rows, cols).astype(np.float64)


def read_bpat(path: Path, cfg: Optional[PlateConfig] = None) -> BeadingPattern:
    path = Path(path)
    grid = decode_bpat(path.read_bytes(), str(path))
    try:
        return BeadingPattern.for_plate(grid, cfg or PlateConfig())
    except ConfigError as e:
        raise PatternFormatError(f"BPAT 값 오류 {path}: {e}")


def read_pattern(path: Path, cfg: Optional[PlateConfig] = None) -> BeadingPattern:
    """확장자(.pgm / .bpat)로 형식을 골라 패턴 읽기"""
    path = Path(path)
    if not path.exists():
        raise PatternFormatError(f"패턴 파일이 없습니다: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path, cfg)
    if suffix in (".bpat", ".raw"):
        return read_bpat(path, cfg)
    raise PatternFormatError(f"알 수 없는 패턴 형식 '{suffix}': {path}")


def write_pattern(stem: Path, pattern: BeadingPattern) -> Tuple[Path, Path]:
    """같은 이름으로 PGM 과 BPAT 를 함께 저장"""
    stem = Path(stem)
    return write_pgm(stem.with_suffix(".pgm"), pattern.grid), write_bpat(stem.with_suffix(".bpat"), pattern)


def write_frf_csv(path: Path, frf: FrequencyResponse) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(FRF_HEADER)
        for freq, level in zip(frf.frequencies, frf.levels):
            writer.writerow([f"{freq:.6f}", f"{level:.6f}"])
    return path


def read_frf_csv(path: Path) -> FrequencyResponse:
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != FRF_HEADER:
            raise PatternFormatError(f"FRF CSV 헤더 불일치 {header}: {path}")
        try:
            rows = [(float(f), float(level)) for f, level in reader]
        except ValueError as e:
            raise PatternFormatError(f"FRF CSV 값 오류 {path}: {e}")
    freqs, levels = zip(*rows) if rows else ((), ())
    return FrequencyResponse(np.array(freqs), np.array(levels))


def write_rows(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, object]]) -> Path:
    """딕셔너리 행들을 지정한 열 순서의 CSV 로 저장"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_rows(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))


def write_trajectory_csv(path: Path, trajectories: Dict[str, Sequence[Tuple[int, float]]]) -> Path:
    """기법별 최고값 궤적: method,nfe,best_predicted"""
    rows = [{"method": method, "nfe": nfe, "best_predicted": best}
            for method, points in trajectories.items() for nfe, best in points]
    return write_rows(path, ("method", "nfe", "best_predicted"), rows)


def write_losses_csv(path: Path, losses: Sequence[float]) -> Path:
    return write_rows(path, ("epoch", "loss"), ({"epoch": i + 1, "loss": loss} for i, loss in enumerate(losses)))


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False, default=str))
    return path


def dump_trace(directory: Path, trace) -> List[Path]:
    """
    ODETrace 를 PGM 프레임 + norm CSV 로 저장

    상태 스냅샷이 기록된 경우에만 프레임을 씁니다 (x 는 [−1, 1] → [0, 1] 로 변환).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = ({"index": i, "t": t, "guided": int(g), "v_norm": v, "guidance_norm": gn, "objective": j}
            for i, (t, g, v, gn, j) in enumerate(zip(trace.times, trace.guided, trace.v_norms,
                                                     trace.guidance_norms, trace.objectives)))
    written = [write_rows(directory / "norms.csv",
                          ("index", "t", "guided", "v_norm", "guidance_norm", "objective"), rows)]
    for index, state in enumerate(trace.states):
        written.append(write_pgm(directory / f"state_{index:03d}.pgm", 0.5 * (state + 1.0)))
    for index, grad in enumerate(trace.gradients):
        scale = float(np.max(np.abs(grad))) or 1.0
        written.append(write_pgm(directory / f"grad_{index:03d}.pgm", 0.5 * (grad / scale + 1.0)))
    return written
