import logging
import math
from enum import Enum
from typing import Dict

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, computed_field, model_validator

logger = logging.getLogger(__name__)


class Provenance(str, Enum):
    FITTED = "fitted"
    CHOSEN = "chosen"
    DERIVED = "derived"


_INPUT_FIELDS = ("k", "L", "K", "c", "n", "n0", "mu", "b")
_DERIVED_FIELDS = ("eta", "rho", "E")


def _default_provenance() -> Dict[str, Provenance]:
    tags = {name: Provenance.CHOSEN for name in _INPUT_FIELDS}
    tags.update({name: Provenance.DERIVED for name in _DERIVED_FIELDS})
    return tags


class CarnotParams(BaseModel):
    """Named constants of the construction.

    eta, rho and E are derived on access and never stored.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    k: PositiveInt = 2
    L: PositiveFloat = 1.0
    K: PositiveFloat = 1.0
    c: PositiveFloat = 2.0
    n: PositiveInt = 1
    n0: PositiveInt = 1
    mu: PositiveFloat = 1.0
    b: PositiveFloat = 1.0
    provenance: Dict[str, Provenance] = Field(default_factory=_default_provenance)

    @model_validator(mode="after")
    def _check_ranges(self) -> "CarnotParams":
        if self.c <= 1.0:
            raise ValueError(f"c must exceed 1, got {self.c}")
        if self.n < self.n0:
            raise ValueError(f"n must be at least n0, got n={self.n}, n0={self.n0}")
        unknown = set(self.provenance) - set(_INPUT_FIELDS) - set(_DERIVED_FIELDS)
        if unknown:
            raise ValueError(f"provenance names unknown fields: {sorted(unknown)}")
        return self

    @computed_field
    @property
    def eta(self) -> float:
        return self.n / (1.5 * self.n + math.log2(self.c))

    @computed_field
    @property
    def rho(self) -> float:
        return 2.0 ** (-1.5 * self.n) / self.c

    @computed_field
    @property
    def E(self) -> float:
        return 4.0 * self.b + self.mu

    def override(self, **values) -> "CarnotParams":
        """Copy with some inputs replaced, re-validated and tagged as chosen."""
        data = self.model_dump(include=set(_INPUT_FIELDS))
        data.update(values)
        tags = dict(self.provenance)
        tags.update({name: Provenance.CHOSEN for name in values})
        return CarnotParams(**data, provenance=tags)

    def fitted(self, fitted_L: float) -> "CarnotParams":
        """Replace L by the doubled fitted value, never below 1."""
        L = max(1.0, 2.0 * fitted_L)
        logger.info(f"Using fitted L={fitted_L:.6g}, doubled and clamped to {L:.6g}")
        data = self.model_dump(include=set(_INPUT_FIELDS))
        data["L"] = L
        tags = dict(self.provenance)
        tags["L"] = Provenance.FITTED
        return CarnotParams(**data, provenance=tags)
