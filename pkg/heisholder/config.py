import json
import logging
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt

from heisholder.params import CarnotParams

load_dotenv()

logger = logging.getLogger(__name__)


def thread_count() -> int:
    """Worker threads for the batch solvers, capped by HEIS_THREADS."""
    default = os.cpu_count() or 1
    raw = os.getenv("HEIS_THREADS")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer HEIS_THREADS={raw!r}")
        return default
    return max(1, min(value, default))


def log_level() -> str:
    return os.getenv("HEIS_LOG_LEVEL", "INFO").upper()


def log_json() -> bool:
    return os.getenv("HEIS_LOG_JSON", "").lower() in ("1", "true", "yes")


class ParamOverrides(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: Optional[PositiveInt] = None
    L: Optional[PositiveFloat] = None
    K: Optional[PositiveFloat] = None
    c: Optional[PositiveFloat] = None
    n: Optional[PositiveInt] = None
    n0: Optional[PositiveInt] = None
    mu: Optional[PositiveFloat] = None
    b: Optional[PositiveFloat] = None


class Tolerances(BaseModel):
    model_config = ConfigDict(extra="forbid")

    distance: PositiveFloat = 1e-9
    horizontal: PositiveFloat = 1e-9
    evaluate: PositiveFloat = 1e-6


def _default_outputs() -> Dict[str, str]:
    return {
        "lift": "curve.json",
        "fill": "filling.json",
        "extend": "tree.bin",
        "mesh": "mesh.obj",
        "skeleton": "skeleton.obj",
        "grid": "grid.json",
    }


class Config(BaseModel):
    model_config = ConfigDict(extra="forbid")

    params: ParamOverrides = Field(default_factory=ParamOverrides)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    seed: int = 0
    outputs: Dict[str, str] = Field(default_factory=_default_outputs)
    max_nodes: PositiveInt = 20000
    max_triangles: PositiveInt = 200000

    def carnot_params(self, **cli_overrides) -> CarnotParams:
        values = self.params.model_dump(exclude_none=True)
        values.update({k: v for k, v in cli_overrides.items() if v is not None})
        return CarnotParams().override(**values) if values else CarnotParams()

    def output_for(self, command: str, explicit: Optional[str]) -> str:
        if explicit:
            return explicit
        return self.outputs.get(command) or _default_outputs()[command]


def load_config(path: Optional[str]) -> Config:
    """Reads a JSON config file; no path gives the defaults."""
    if not path:
        return Config()
    text = Path(path).read_text(encoding="utf-8")
    config = Config.model_validate(json.loads(text))
    logger.info(f"Loaded config from {path}")
    return config
