"""
파이프라인 명령: 데이터셋 생성, 학습, 최적화, FEM 검증, 보고서 집계

각 명령은 성공/실패와 관계없이 출력 디렉토리에 run_manifest.json 을 남깁니다.
"""
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from traceloop.sdk.decorators import task, workflow

from core.baselines import METHODS, Budget, run_comparison
from core.constraints import measure_compliance
from core.errors import ConfigError, PatternFormatError
from core.fem import assemble, build_mesh, solve_frf, write_mesh_obj
from core.flowgen import FlowModel, GuidanceConfig, guided_sample, train_flow
from core.model import PlateConfig
from core.objectives import Objective
from core.settings import DeskSettings
from core.surrogate import PlateProps, SurrogateModel, evaluate_loss, train_surrogate
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.dataset import DatasetSpec, generate_dataset, load_dataset
from utils.io import (REPORT_COLUMNS, dump_trace, read_pattern, read_rows, write_frf_csv, write_json,
                      write_losses_csv, write_pattern, write_rows, write_trajectory_csv)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"
SUMMARY_COLUMNS = ("method", "objective_mean", "objective_std", "nfe", "plates", "time", "runs", "failures")


def tool_version() -> str:
    try:
        return metadata.version("platebead")
    except metadata.PackageNotFoundError:
        return "0.1.0"


@dataclass
class RunManifest:
    command: str
    config: Dict[str, object]
    seed: Optional[int]
    version: str = field(default_factory=tool_version)
    artifacts: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    nfe: Dict[str, int] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)
    status: str = "running"
    error: Optional[str] = None

    def add(self, *paths: Path):
        self.artifacts.extend(str(p) for p in paths)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = round(time.perf_counter() - started, 3)


@contextmanager
def manifest_for(out_dir: Path, command: str, config: Dict[str, object],
                 seed: Optional[int]) -> Iterator[RunManifest]:
    """명령 실행을 감싸 예외가 나도 매니페스트를 기록"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command, config, seed)
    try:
        yield manifest
        manifest.status = "ok"
    except Exception as e:
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        raise
    finally:
        manifest.artifacts.append(str(out_dir / MANIFEST_NAME))
        write_json(out_dir / MANIFEST_NAME, asdict(manifest))


def load_surrogate(path: Path, cfg: Optional[PlateConfig] = None) -> SurrogateModel:
    checkpoint = load_checkpoint(path)
    if checkpoint.descriptor.get("kind") != "surrogate":
        raise ConfigError(f"대리모델 체크포인트가 아닙니다: {path}")
    model = SurrogateModel.from_descriptor(checkpoint.descriptor, np.random.default_rng(0), cfg)
    model.params.load_arrays(checkpoint.arrays)
    model.params.step = checkpoint.step
    return model


def load_flow(path: Path) -> FlowModel:
    checkpoint = load_checkpoint(path)
    if checkpoint.descriptor.get("kind") != "flow":
        raise ConfigError(f"flow 체크포인트가 아닙니다: {path}")
    model = FlowModel.from_descriptor(checkpoint.descriptor, np.random.default_rng(0))
    model.params.load_arrays(checkpoint.arrays)
    model.params.step = checkpoint.step
    return model


@workflow(name="gen-dataset")
def cmd_gen_dataset(out: Path, flavor: str = "surrogate", count: int = 512, freqs: int = 15,
                    fmin: float = 1.0, fmax: float = 300.0, seed: int = 0,
                    settings: Optional[DeskSettings] = None, progress: bool = False) -> RunManifest:
    settings = settings or DeskSettings.from_env()
    spec = DatasetSpec(flavor, count, freqs, fmin, fmax, seed, settings.pattern_shape, settings.mesh_shape)
    config = {**asdict(spec), "threads": settings.threads}
    with manifest_for(out, "gen-dataset", config, seed) as manifest:
        print(f"\n1️⃣ {flavor} 데이터셋 생성 중... ({count}개)")
        with manifest.timed("generate"):
            path = generate_dataset(spec, out, workers=settings.threads, progress=progress)
        dataset = load_dataset(out)
        manifest.add(path, *sorted((Path(out) / "samples").iterdir()))
        if flavor == "surrogate":
            manifest.add(Path(out) / "frf.csv")
        manifest.metrics["samples"] = len(dataset.samples) if flavor == "surrogate" else len(dataset.patterns)
        manifest.metrics["failures"] = len(dataset.failures)
        print(f"✅ 데이터셋 저장 완료: {manifest.metrics['samples']}개 (실패 {len(dataset.failures)}개)")
        return manifest


@task(name="train-surrogate")
def _train_surrogate(data_dir: Path, epochs: int, lr: float, batch_size: int, arch: str,
                     rng: np.random.Generator, settings: DeskSettings, progress: bool):
    dataset = load_dataset(data_dir)
    if dataset.spec.flavor != "surrogate":
        raise ConfigError(f"대리모델 학습에는 surrogate 데이터셋이 필요합니다 (현재: {dataset.spec.flavor})")
    result = train_surrogate(dataset.samples, epochs, lr, rng, batch_size=batch_size, arch=arch,
                             dtype=settings.train_dtype, progress=progress)
    return result.model, result.losses, result.final_loss


@task(name="train-flow")
def _train_flow(data_dir: Path, epochs: int, lr: float, batch_size: int, arch: str,
                rng: np.random.Generator, settings: DeskSettings, progress: bool):
    dataset = load_dataset(data_dir)
    if dataset.spec.flavor != "flow":
        raise ConfigError(f"flow 학습에는 flow 데이터셋이 필요합니다 (현재: {dataset.spec.flavor})")
    result = train_flow(dataset.patterns, epochs, lr, rng, batch_size=batch_size, arch=arch,
                        dtype=settings.train_dtype, progress=progress)
    return result.model, result.losses, result.final_loss


@workflow(name="train")
def cmd_train(model: str, data: Path, out: Path, epochs: int = 10, seed: int = 0, lr: float = 1e-3,
              batch_size: int = 16, arch: str = "unet", settings: Optional[DeskSettings] = None,
              progress: bool = False) -> RunManifest:
    if model not in ("surrogate", "flow"):
        raise ConfigError(f"알 수 없는 모델: {model} (가능: surrogate, flow)")
    settings = settings or DeskSettings.from_env()
    config = {"model": model, "data": str(data), "epochs": epochs, "lr": lr, "batch_size": batch_size,
              "arch": arch, "dtype": settings.train_dtype}
    with manifest_for(out, "train", config, seed) as manifest:
        rng = np.random.default_rng(seed)
        print(f"\n1️⃣ {model} 모델 학습 중... ({epochs} 에폭)")
        trainer = _train_surrogate if model == "surrogate" else _train_flow
        with manifest.timed("train"):
            trained, losses, final_loss = trainer(data, epochs, lr, batch_size, arch, rng, settings, progress)

        print("\n2️⃣ 체크포인트 저장 중...")
        checkpoint = save_checkpoint(Path(out) / f"{model}.nnck", trained.params)
        manifest.add(checkpoint, write_losses_csv(Path(out) / "losses.csv", losses))
        manifest.metrics.update(final_loss=final_loss, parameters=trained.params.count)
        print(f"✅ 학습 완료: 최종 손실 {final_loss:.6g}, 파라미터 {trained.params.count:,}개")
        return manifest


def reload_loss(model: str, checkpoint: Path, data: Path) -> float:
    """체크포인트를 다시 읽어 고정 시드 평가 손실 계산"""
    dataset = load_dataset(data)
    if model == "surrogate":
        return evaluate_loss(load_surrogate(checkpoint), dataset.samples)
    from core.flowgen import evaluate_flow_loss

    return evaluate_flow_loss(load_flow(checkpoint), 2.0 * dataset.patterns - 1.0)


@task(name="guided-trace")
def write_guided_trace(out_dir: Path, flow: FlowModel, surrogate: SurrogateModel, objective: Objective,
                       gcfg: GuidanceConfig, props: PlateProps, rng: np.random.Generator,
                       cfg: PlateConfig) -> List[Path]:
    """
    가이던스 샘플 하나를 기록 모드로 생성해 ODE 궤적을 덤프

    비교 실행의 풀과는 별개 샘플이며 NFE 예산에 포함되지 않습니다.

    Returns:
        norms.csv, state/grad PGM 프레임, 최종 패턴 경로
    """
    surrogate.freeze()
    pattern, trace = guided_sample(flow, surrogate, objective, gcfg, props, rng, cfg, record=True)
    written = dump_trace(out_dir, trace)
    written.extend(write_pattern(Path(out_dir) / "final", pattern))
    logger.info("ODE 궤적 %d 스텝 저장: %s", len(trace.times), out_dir)
    return written


@workflow(name="optimize")
def cmd_optimize(out: Path, methods: Sequence[str] = ("flow",), objective: str = "mean-level",
                 f1: float = 100.0, f2: float = 200.0, df: float = 10.0, beta_j: float = 1.0,
                 config: str = "free", nfe: int = 4000, pool: int = 16, k: int = 4, alpha: float = 1.0,
                 step: float = 0.05, solver: str = "midpoint", rescale: bool = True, postprocess: bool = True,
                 seed: int = 0, surrogate: Optional[Path] = None, flow: Optional[Path] = None,
                 validate_df: float = 1.0, trace: Optional[Path] = None,
                 settings: Optional[DeskSettings] = None) -> RunManifest:
    settings = settings or DeskSettings.from_env()
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"알 수 없는 기법: {sorted(unknown)}")
    needs_surrogate = set(methods) - {"rotation"}
    if needs_surrogate and surrogate is None:
        raise ConfigError(f"{sorted(needs_surrogate)} 기법에는 --surrogate 체크포인트가 필요합니다")
    if "flow" in methods and flow is None:
        raise ConfigError("flow 기법에는 --flow 체크포인트가 필요합니다")

    cfg = PlateConfig.preset(config)
    if trace is not None and "flow" not in methods:
        raise ConfigError("--trace 는 flow 기법과 함께 써야 합니다")
    target = Objective(objective, f1, f2, df, beta_j, validate_df=validate_df)
    gcfg = GuidanceConfig(alpha=alpha, step=step, solver=solver, k=k, n=pool, rescale=rescale,
                          postprocess=postprocess)
    budget = Budget(nfe, target.frequencies().size)
    run_config = {"methods": list(methods), "objective": asdict(target), "config": config,
                  "plate": asdict(cfg), "budget": asdict(budget), "guidance": asdict(gcfg),
                  "surrogate": str(surrogate) if surrogate else None, "flow": str(flow) if flow else None,
                  "trace": str(trace) if trace else None}

    with manifest_for(out, "optimize", run_config, seed) as manifest:
        out = Path(out)
        print("\n1️⃣ 모델 불러오는 중...")
        surrogate_model = load_surrogate(surrogate, cfg) if surrogate and needs_surrogate else None
        flow_model = load_flow(flow) if "flow" in methods else None

        print(f"\n2️⃣ 최적화 실행 중... ({', '.join(methods)}, NFE 예산 {nfe})")
        with manifest.timed("optimize"):
            report = run_comparison(methods, budget, target, cfg, np.random.default_rng(seed),
                                    surrogate=surrogate_model, flow=flow_model, gcfg=gcfg, k=k, seed=seed,
                                    shape=settings.pattern_shape, resolution=settings.mesh_shape,
                                    workers=settings.threads)

        print("\n3️⃣ 결과 저장 중...")
        for outcome in report.outcomes:
            manifest.nfe[outcome.method] = outcome.nfe
            manifest.metrics[f"{outcome.method}_validated"] = outcome.validated
            if outcome.best is not None:
                manifest.add(*write_pattern(out / f"{outcome.method}_best", outcome.best.pattern))
            if outcome.validated_frf is not None:
                manifest.add(write_frf_csv(out / f"{outcome.method}_frf.csv", outcome.validated_frf))
            status = "✅" if math.isfinite(outcome.validated) else "❌"
            print(f"   {status} {outcome.method}: 검증 {outcome.validated:.3f}, 예측 {outcome.predicted:.3f}, "
                  f"NFE {outcome.nfe}, {outcome.wall_time:.1f}s")
        manifest.add(write_rows(out / "comparison.csv", REPORT_COLUMNS, report.rows()),
                     write_trajectory_csv(out / "trajectory.csv",
                                          {o.method: o.trajectory for o in report.outcomes}))
        if trace is not None:
            print(f"\n4️⃣ ODE 궤적 기록 중... ({trace})")
            with manifest.timed("trace"):
                manifest.add(*write_guided_trace(trace, flow_model, surrogate_model, target, gcfg,
                                                 PlateProps.from_config(cfg), np.random.default_rng(seed), cfg))
        return manifest


@workflow(name="validate")
def cmd_validate(pattern: Path, out: Path, config: str = "free", fmin: float = 1.0, fmax: float = 300.0,
                 df: float = 1.0, mesh_obj: bool = False, settings: Optional[DeskSettings] = None) -> RunManifest:
    settings = settings or DeskSettings.from_env()
    if not 0 < fmin <= fmax or df <= 0:
        raise ConfigError(f"주파수 구간 오류: [{fmin}, {fmax}] / {df}")
    cfg = PlateConfig.preset(config)
    run_config = {"pattern": str(pattern), "config": config, "fmin": fmin, "fmax": fmax, "df": df,
                  "mesh": list(settings.mesh_shape), "mesh_obj": mesh_obj}
    with manifest_for(out, "validate", run_config, None) as manifest:
        print("\n1️⃣ 패턴 읽는 중...")
        beading = read_pattern(pattern, cfg)
        report = measure_compliance(beading, cfg)
        counts = report.counts()
        print(f"📊 제약 준수율: {report.ratio:.4f} (C1 {counts['c1']}, C2 {counts['c2']}, "
              f"C3 {counts['c3']}, C4 {counts['c4']})")

        print("\n2️⃣ FEM 스윕 중...")
        freqs = np.arange(fmin, fmax + 0.5 * df, df)
        with manifest.timed("sweep"):
            mesh = build_mesh(cfg, beading, settings.mesh_shape)
            system = assemble(mesh, cfg)
            sweep = solve_frf(system, freqs, workers=settings.threads)
        if sweep.errors:
            print(f"   ❌ {len(sweep.errors)}개 주파수 풀이 실패")
        path = write_frf_csv(Path(out) / f"{Path(pattern).stem}_frf.csv", sweep.frf)
        manifest.add(path)
        if mesh_obj:
            manifest.add(write_mesh_obj(mesh, Path(out) / f"{Path(pattern).stem}_mesh.obj"))
        manifest.metrics.update(compliance=report.ratio, frequencies=len(sweep.frf))
        print(f"✅ FRF 저장 완료: {path}")
        return manifest


def summarize(rows: Sequence[Dict[str, str]]) -> List[Dict[str, object]]:
    """
    기법별 집계: 검증 목적함수 평균/표본 표준편차, 평균 NFE, 생성 판 수, 시간

    검증값이 NaN 인 실행은 평균과 표준편차에서 빼고 failures 로 셉니다.

    Args:
        rows: comparison.csv 행들 (여러 실행)
    """
    grouped: Dict[str, List[Dict[str, str]]] = {}
    for row in rows:
        grouped.setdefault(row["method"], []).append(row)

    summary = []
    for method, items in grouped.items():
        values = np.array([float(r["validated"]) for r in items])
        finite = values[np.isfinite(values)]
        std = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
        summary.append({
            "method": method,
            "objective_mean": float(np.mean(finite)) if finite.size else math.nan,
            "objective_std": std,
            "nfe": float(np.mean([float(r["nfe"]) for r in items])),
            "plates": float(np.mean([float(r["plates"]) for r in items])),
            "time": float(np.mean([float(r["wall_time"]) for r in items])),
            "runs": len(items),
            "failures": int(values.size - finite.size),
        })
    return summary


@workflow(name="report")
def cmd_report(runs: Sequence[Path], out: Path) -> RunManifest:
    if not runs:
        raise ConfigError("집계할 실행이 없습니다")
    with manifest_for(out, "report", {"runs": [str(r) for r in runs]}, None) as manifest:
        rows = []
        for run in runs:
            path = Path(run)
            path = path / "comparison.csv" if path.is_dir() else path
            if not path.exists():
                raise PatternFormatError(f"비교 보고서가 없습니다: {path}")
            rows.extend(read_rows(path))
        summary = summarize(rows)
        manifest.add(write_rows(Path(out) / "summary.csv", SUMMARY_COLUMNS, summary))
        print("\n📊 기법별 결과:")
        for item in summary:
            print(f"   - {item['method']}: {item['objective_mean']:.3f} ({item['objective_std']:.3f}), "
                  f"NFE {item['nfe']:.0f}, 판 {item['plates']:.0f}, {item['time']:.1f}s, "
                  f"실패 {item['failures']}/{item['runs']}")
        return manifest
