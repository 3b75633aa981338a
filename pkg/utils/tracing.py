"""
Traceloop 트레이싱 초기화

PLATEBEAD_TRACING 이 켜져 있을 때만 Traceloop.init() 을 호출합니다.
꺼져 있으면 @workflow / @task 데코레이터는 기록 없이 함수만 실행합니다.
"""
import logging

from core.settings import DeskSettings

logger = logging.getLogger(__name__)

_initialized = False


def init_tracing(settings: DeskSettings, app_name: str = "platebead") -> bool:
    """
    트레이싱 초기화 (프로세스당 한 번)

    Returns:
        트레이싱이 활성화되었는지 여부
    """
    global _initialized
    if not settings.tracing:
        return False
    if _initialized:
        return True

    from traceloop.sdk import Traceloop

    Traceloop.init(app_name=app_name, disable_batch=True)
    _initialized = True
    logger.info("Traceloop 트레이싱 활성화 (%s)", app_name)
    return True
