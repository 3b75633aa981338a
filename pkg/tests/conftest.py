"""
공통 fixture 와 slow 마커 처리

slow 테스트는 PLATEBEAD_RUN_SLOW=1 일 때만 실행합니다.
"""
import numpy as np
import pytest

from core.model import PlateConfig
from core.settings import DeskSettings


def pytest_collection_modifyitems(config, items):
    if DeskSettings.from_env(threads=1).run_slow:
        return
    skip_slow = pytest.mark.skip(reason="PLATEBEAD_RUN_SLOW=1 로 실행하세요")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def plate() -> PlateConfig:
    return PlateConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def tiny_surrogate():
    """(8, 12) 패턴, (4, 5) 절점의 작은 MLP 대리모델"""
    from core.surrogate import SurrogateModel

    return SurrogateModel.create((8, 12), (4, 5), 1e-3, np.random.default_rng(0), arch="mlp",
                                 dtype="float64", hidden=16)


@pytest.fixture
def coarse_objective():
    from core.objectives import Objective

    return Objective("mean-level", f1=100.0, f2=200.0, df=50.0)
