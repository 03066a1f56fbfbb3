from pathlib import Path
from typing import Any, Mapping, Type, TypeVar

from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

ModelT = TypeVar("ModelT", bound=BaseModel)


class Settings(BaseSettings):
    SERVICE_NAME: str = "condor-ordinal"
    SERVICE_VERSION: str = "0.1.0"

    # Data / output locations
    DATA_DIR: Path = Path("./data")  # CONDOR_DATA_DIR overrides
    RESULTS_DIR: Path = Path("./results")

    # MNIST fetch
    MNIST_BASE_URL: str = "https://ossci-datasets.s3.amazonaws.com/mnist/"
    HTTP_TIMEOUT: float = 60.0

    # Logging
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="CONDOR_",
        case_sensitive=False,
        extra="ignore",
    )

    @property
    def mnist_dir(self) -> Path:
        return self.DATA_DIR / "mnist"


settings = Settings()


def validate_config(model_cls: Type[ModelT], data: Mapping[str, Any]) -> ModelT:
    """Validate a config mapping, turning pydantic errors into ConfigError"""
    try:
        return model_cls.model_validate(dict(data))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or model_cls.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"Invalid {model_cls.__name__}: {problems}") from e
