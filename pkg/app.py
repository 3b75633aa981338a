"""
platebead - 비딩 판 진동 최적화 명령줄 도구
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from core.baselines import METHODS
from core.errors import ConfigError, PlateBeadError
from core.model import PLATE_PRESETS
from core.objectives import KINDS
from core.settings import DeskSettings, validate_settings
from utils.pipeline import cmd_gen_dataset, cmd_optimize, cmd_report, cmd_train, cmd_validate
from utils.tracing import init_tracing

# =============================================================================
# 인자 정의
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platebead", description="비딩 판 진동 최적화 도구")
    parser.add_argument("--threads", type=int, default=None, help="작업자 수 (기본: PLATEBEAD_THREADS)")
    parser.add_argument("--verbose", action="store_true", help="디버그 로그 출력")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-dataset", help="학습 데이터셋 생성")
    gen.add_argument("--flavor", choices=("surrogate", "flow"), default="surrogate")
    gen.add_argument("--count", type=int, default=512)
    gen.add_argument("--freqs", type=int, default=15)
    gen.add_argument("--fmin", type=float, default=1.0)
    gen.add_argument("--fmax", type=float, default=300.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)

    train = commands.add_parser("train", help="대리모델 / flow 모델 학습")
    train.add_argument("--model", choices=("surrogate", "flow"), required=True)
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--batch-size", type=int, default=16)
    train.add_argument("--arch", choices=("unet", "mlp"), default="unet")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", type=Path, required=True)

    opt = commands.add_parser("optimize", help="최적화 실행 + 상위 k 개 FEM 검증")
    opt.add_argument("--method", nargs="+", choices=METHODS, default=["flow"])
    opt.add_argument("--objective", choices=KINDS, default="mean-level")
    opt.add_argument("--f1", type=float, default=100.0)
    opt.add_argument("--f2", type=float, default=200.0)
    opt.add_argument("--df", type=float, default=10.0, help="대리모델 평가 격자 간격 (Hz)")
    opt.add_argument("--validate-df", type=float, default=1.0, help="상위 k 개 FEM 검증 격자 간격 (Hz)")
    opt.add_argument("--beta-j", type=float, default=1.0)
    opt.add_argument("--config", choices=tuple(PLATE_PRESETS), default="free")
    opt.add_argument("--nfe", type=int, default=4000)
    opt.add_argument("--pool", type=int, default=16)
    opt.add_argument("--k", type=int, default=4)
    opt.add_argument("--alpha", type=float, default=1.0)
    opt.add_argument("--step", type=float, default=0.05)
    opt.add_argument("--solver", choices=("midpoint", "euler"), default="midpoint")
    opt.add_argument("--no-rescale", action="store_true", help="기울기 재스케일 끄기")
    opt.add_argument("--no-postprocess", action="store_true", help="생성 패턴 후처리 끄기")
    opt.add_argument("--surrogate", type=Path, default=None)
    opt.add_argument("--flow", type=Path, default=None)
    opt.add_argument("--seed", type=int, default=0)
    opt.add_argument("--trace", type=Path, default=None, help="가이던스 ODE 궤적 덤프 디렉토리")
    opt.add_argument("--out", type=Path, required=True)

    val = commands.add_parser("validate", help="패턴 FEM 주파수 응답")
    val.add_argument("--pattern", type=Path, required=True)
    val.add_argument("--config", choices=tuple(PLATE_PRESETS), default="free")
    val.add_argument("--fmin", type=float, default=1.0)
    val.add_argument("--fmax", type=float, default=300.0)
    val.add_argument("--df", type=float, default=1.0)
    val.add_argument("--mesh-obj", action="store_true", help="셸 메시를 OBJ 로 함께 저장")
    val.add_argument("--out", type=Path, required=True)

    rep = commands.add_parser("report", help="여러 실행 결과 집계")
    rep.add_argument("--runs", type=Path, nargs="+", required=True)
    rep.add_argument("--out", type=Path, required=True)
    return parser


# =============================================================================
# 명령 실행
# =============================================================================


def run(args: argparse.Namespace, settings: DeskSettings):
    if args.command == "gen-dataset":
        return cmd_gen_dataset(args.out, args.flavor, args.count, args.freqs, args.fmin, args.fmax, args.seed,
                               settings=settings, progress=True)
    if args.command == "train":
        return cmd_train(args.model, args.data, args.out, args.epochs, args.seed, args.lr, args.batch_size,
                         args.arch, settings=settings, progress=True)
    if args.command == "optimize":
        return cmd_optimize(args.out, args.method, args.objective, args.f1, args.f2, args.df, args.beta_j,
                            args.config, args.nfe, args.pool, args.k, args.alpha, args.step, args.solver,
                            not args.no_rescale, not args.no_postprocess, args.seed, args.surrogate,
                            args.flow, validate_df=args.validate_df, trace=args.trace, settings=settings)
    if args.command == "validate":
        return cmd_validate(args.pattern, args.out, args.config, args.fmin, args.fmax, args.df,
                            mesh_obj=args.mesh_obj, settings=settings)
    return cmd_report(args.runs, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    print("=" * 60)
    print(f"platebead {args.command}")
    print("=" * 60)

    try:
        settings = DeskSettings.from_env(threads=args.threads)
    except ConfigError as e:
        print(f"❌ 설정 오류: {e}")
        return 2
    if not validate_settings(settings):
        print("❌ 실행 설정이 올바르지 않습니다.")
        return 2
    init_tracing(settings)

    try:
        manifest = run(args, settings)
    except ConfigError as e:
        print(f"\n❌ 사용법 오류: {e}")
        return 2
    except PlateBeadError as e:
        print(f"\n❌ 오류 발생: {e}")
        return 1

    print("\n" + "=" * 60)
    print(f"🎉 {args.command} 완료 ({len(manifest.artifacts)}개 파일)")
    print("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
