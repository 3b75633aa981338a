"""
학습 데이터셋 생성과 로딩

두 종류의 데이터셋을 만듭니다.
- surrogate: C4 평활화 없이 생성한 패턴 + 무작위 하중 위치/회전 강성 + 15개 이동 주파수 FEM 응답
- flow: C1~C4 를 모두 적용한 패턴만

디렉토리 구성:
    manifest.json           샘플 id, 속성, 주파수 목록
    samples/<id>.bpat       패턴 (BPAT)
    samples/<id>.fields     little-endian float32 (주파수 × 절점) 속도 크기 (surrogate 만)
    frf.csv                 sample_id,frequency_hz,level_db (surrogate 만)
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from core.errors import ConfigError, PatternFormatError, PlateBeadError, SolverError
from core.fem import DESK_RESOLUTION, assemble, build_mesh, solve_frf
from core.model import LOAD_MARGIN, PlateConfig, levels_from_magnitudes
from core.patterns import DEFAULT_SHAPE, GenConfig, sample_pattern
from core.surrogate import ROT_STIFFNESS_SCALE, PlateProps, Sample
from utils.io import read_bpat, write_bpat, write_rows

logger = logging.getLogger(__name__)

FLAVORS = ("surrogate", "flow")
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class DatasetSpec:
    """데이터셋 생성 설정"""

    flavor: str = "surrogate"
    count: int = 512
    freqs: int = 15
    fmin: float = 1.0
    fmax: float = 300.0
    seed: int = 0
    pattern_shape: Tuple[int, int] = DEFAULT_SHAPE
    mesh_shape: Tuple[int, int] = DESK_RESOLUTION

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ConfigError(f"알 수 없는 데이터셋 종류: {self.flavor} (가능: {', '.join(FLAVORS)})")
        if self.count <= 0 or self.freqs <= 0:
            raise ConfigError("샘플 수와 주파수 수는 1 이상이어야 합니다")
        if not 0 < self.fmin < self.fmax:
            raise ConfigError(f"주파수 구간 오류: [{self.fmin}, {self.fmax}]")


@dataclass
class Dataset:
    spec: DatasetSpec
    samples: List[Sample] = field(default_factory=list)
    patterns: Optional[np.ndarray] = None
    failures: List[str] = field(default_factory=list)


def shifted_frequencies(fmin: float, fmax: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """공통 무작위 이동량을 가진 등간격 주파수 f_k = fmin + (k + u)·Δ"""
    step = (fmax - fmin) / count
    return fmin + (np.arange(count) + rng.random()) * step


def random_props(rng: np.random.Generator, cfg: PlateConfig) -> PlateProps:
    """가장자리 5 cm 안쪽 균등 하중 위치, [0, 100] Nm/rad 회전 강성"""
    return PlateProps(
        load_x=float(rng.uniform(LOAD_MARGIN, cfg.length - LOAD_MARGIN)),
        load_y=float(rng.uniform(LOAD_MARGIN, cfg.width - LOAD_MARGIN)),
        rot_stiffness=float(rng.uniform(0.0, ROT_STIFFNESS_SCALE)),
    )


def make_sample(spec: DatasetSpec, rng: np.random.Generator, cfg: Optional[PlateConfig] = None) -> Sample:
    """surrogate 샘플 하나: 패턴 생성 → 속성 추출 → FEM 스윕"""
    cfg = cfg or PlateConfig()
    pattern = sample_pattern(rng, GenConfig(enforce_c4=False, shape=spec.pattern_shape), cfg)
    props = random_props(rng, cfg)
    freqs = shifted_frequencies(spec.fmin, spec.fmax, spec.freqs, rng)
    plate = cfg.with_props(props.load_x, props.load_y, props.rot_stiffness)
    system = assemble(build_mesh(plate, pattern, spec.mesh_shape), plate)
    sweep = solve_frf(system, freqs)
    if sweep.errors:
        raise SolverError(f"FEM 스윕 실패 주파수 {sorted(sweep.errors)}")
    return Sample(pattern, props, sweep.frf.frequencies, sweep.fields.astype(np.float32),
                  sweep.frf.levels, spec.mesh_shape)


def _sample_id(index: int) -> str:
    return f"{index:06d}"


def generate_dataset(spec: DatasetSpec, out_dir: Path, cfg: Optional[PlateConfig] = None, workers: int = 1,
                     progress: bool = False, on_done: Optional[Callable[[int], None]] = None) -> Path:
    """
    데이터셋 생성

    샘플마다 SeedSequence 로 분기한 독립 스트림을 쓰므로 같은 시드면 작업자 수와 무관하게
    같은 바이트가 만들어집니다. 실패한 샘플은 로그를 남기고 건너뜁니다.

    Returns:
        manifest.json 경로
    """
    cfg = cfg or PlateConfig()
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(spec.seed).spawn(spec.count)

    def one(index: int):
        rng = np.random.default_rng(streams[index])
        if spec.flavor == "flow":
            return sample_pattern(rng, GenConfig(enforce_c4=True, shape=spec.pattern_shape), cfg)
        return make_sample(spec, rng, cfg)

    entries, frf_rows, failures = [], [], []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(one, i) for i in range(spec.count)]
        for index, future in enumerate(tqdm(futures, desc=spec.flavor, disable=not progress)):
            sample_id = _sample_id(index)
            try:
                result = future.result()
            except PlateBeadError as e:
                logger.error("샘플 %s 건너뜀: %s", sample_id, e)
                failures.append(f"{sample_id}: {e}")
                continue
            if on_done:
                on_done(index)

            if spec.flavor == "flow":
                write_bpat(out_dir / "samples" / f"{sample_id}.bpat", result)
                entries.append({"id": sample_id})
                continue

            write_bpat(out_dir / "samples" / f"{sample_id}.bpat", result.pattern)
            np.ascontiguousarray(result.fields, dtype="<f4").tofile(out_dir / "samples" / f"{sample_id}.fields")
            entries.append({"id": sample_id, **asdict(result.props),
                            "frequencies": [float(f) for f in result.frequencies]})
            frf_rows.extend({"sample_id": sample_id, "frequency_hz": f"{f:.6f}", "level_db": f"{level:.6f}"}
                            for f, level in zip(result.frequencies, result.levels))

    if spec.flavor == "surrogate":
        write_rows(out_dir / "frf.csv", ("sample_id", "frequency_hz", "level_db"), frf_rows)
    manifest = {"spec": {**asdict(spec), "pattern_shape": list(spec.pattern_shape),
                         "mesh_shape": list(spec.mesh_shape)},
                "plate": asdict(cfg), "samples": entries, "failures": failures}
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("%s 데이터셋: %d 샘플, %d 실패 → %s", spec.flavor, len(entries), len(failures), out_dir)
    return path


def load_dataset(directory: Path, cfg: Optional[PlateConfig] = None) -> Dataset:
    """manifest.json 과 샘플 블록을 읽어 Dataset 생성"""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise ConfigError(f"데이터셋 매니페스트가 없습니다: {path}")
    try:
        manifest = json.loads(path.read_text())
        raw = manifest["spec"]
        spec = DatasetSpec(**{**raw, "pattern_shape": tuple(raw["pattern_shape"]),
                              "mesh_shape": tuple(raw["mesh_shape"])})
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise PatternFormatError(f"데이터셋 매니페스트 파싱 실패 {path}: {e}")
    cfg = cfg or PlateConfig(**manifest.get("plate", {}))

    dataset = Dataset(spec=spec, failures=list(manifest.get("failures", [])))
    patterns = []
    for entry in manifest["samples"]:
        pattern = read_bpat(directory / "samples" / f"{entry['id']}.bpat", cfg)
        if pattern.shape != spec.pattern_shape:
            raise PatternFormatError(f"샘플 {entry['id']} 패턴 형상 {pattern.shape} ≠ {spec.pattern_shape}")
        if spec.flavor == "flow":
            patterns.append(pattern.grid)
            continue
        freqs = np.asarray(entry["frequencies"], dtype=np.float64)
        ny, nx = spec.mesh_shape
        fields = np.fromfile(directory / "samples" / f"{entry['id']}.fields", dtype="<f4")
        if fields.size != freqs.size * ny * nx:
            raise PatternFormatError(f"샘플 {entry['id']} 속도장 크기 {fields.size} 오류")
        fields = fields.reshape(freqs.size, ny * nx)
        levels = levels_from_magnitudes(fields.astype(np.float64))
        props = PlateProps(entry["load_x"], entry["load_y"], entry["rot_stiffness"])
        dataset.samples.append(Sample(pattern, props, freqs, fields, levels, spec.mesh_shape))

    if spec.flavor == "flow":
        dataset.patterns = np.array(patterns)
    return dataset
