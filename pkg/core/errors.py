"""
platebead 예외 계층

라이브러리 코드는 구체적인 하위 클래스를 발생시키고,
CLI 계층(app.py)에서 PlateBeadError 를 한 번에 잡아 상태 메시지로 출력합니다.
"""


class PlateBeadError(Exception):
    """모든 도메인 오류의 기반 클래스"""


class ConfigError(PlateBeadError):
    """설정 값 또는 모델/데이터셋 조합이 잘못됨"""


class DimensionError(PlateBeadError):
    """배열/텐서 형상 불일치"""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class ContractError(PlateBeadError):
    """함수 사전조건 위반"""


class NonFiniteLevelError(PlateBeadError):
    """속도장이 모두 0 이어서 dB 레벨이 유한하지 않음"""


class InsufficientResolutionError(PlateBeadError):
    """적분 구간 안에 주파수 샘플이 부족함"""


class AssemblyError(PlateBeadError):
    """조립된 시스템이 특이(singular)함"""


class SolverError(PlateBeadError):
    """주파수 하나에 대한 선형 풀이 실패"""


class ObjectiveUndefinedError(PlateBeadError):
    """목적함수를 정의할 수 없음 (예: 공진 피크 부족)"""


class TrainingDivergedError(PlateBeadError):
    """학습 손실이 유한하지 않음"""


class SampleDivergedError(PlateBeadError):
    """ODE 적분 중 상태가 유한하지 않음"""


class PatternFormatError(PlateBeadError):
    """파일 형식 오류 (매직, 잘린 블록, 형상)"""
