import pytest
import numpy as np

from src.logic.data_loader import SystemLoader, SystemDescription
from src.logic.model import LpvDelaySystem, JumpKernel
from src.logic.polymat import ParamBox
from src.utils.constants import SYSTEMS_DIR
from src.utils.helpers import Settings


@pytest.fixture
def box() -> ParamBox:
    return ParamBox(0.0, 1.0)


@pytest.fixture
def fast_settings() -> Settings:
    """Пресет с сетками 15×15; без кэша и без пула процессов."""
    settings = Settings.from_preset("fast")
    settings.workers = 1
    settings.use_cache = False
    return settings


@pytest.fixture
def scalar_system(box) -> LpvDelaySystem:
    """ẋ = −x + w, z = x; норма H∞ равна 1."""
    return LpvDelaySystem.from_constant(box, 1e-3, name="scalar", A=[[-1.0]], E=[[1.0]], C=[[1.0]])


@pytest.fixture
def zero_kernel(box) -> JumpKernel:
    return JumpKernel.constant(0.0, box)


@pytest.fixture
def analysis_desc() -> SystemDescription:
    return SystemLoader(SYSTEMS_DIR / "example_analysis.yaml").load()


@pytest.fixture
def synthesis_desc() -> SystemDescription:
    return SystemLoader(SYSTEMS_DIR / "example_synthesis.yaml").load()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)
