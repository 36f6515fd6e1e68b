from dataclasses import dataclass
from typing import TYPE_CHECKING

from orbtrack.core.config import Settings

if TYPE_CHECKING:
    from orbtrack.services.scenarios import ScenarioRunner


@dataclass
class AppContainer:
    settings: Settings
    runner: "ScenarioRunner"


def build_container(settings: Settings | None = None) -> AppContainer:
    from orbtrack.services.scenarios import ScenarioRunner

    settings = settings or Settings()
    return AppContainer(settings=settings, runner=ScenarioRunner(settings))
