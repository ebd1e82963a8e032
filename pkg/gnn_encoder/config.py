"""Configuration module using pydantic-settings."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings.

    Experiment hyperparameters live in ``TrainConfig``; these only control
    how the process runs.
    """

    model_config = SettingsConfigDict(
        env_prefix="GNNENC_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    log_level: str = "INFO"

    # joblib workers used when building the passage index
    n_jobs: int = 1

    data_dir: str = "data"
    output_dir: str = "runs"


settings = Settings()
