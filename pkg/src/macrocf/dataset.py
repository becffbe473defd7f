"""Aligned observable panels and external instrument series."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from macrocf.errors import SchemaError, ShapeError
from macrocf.svma import VariableRoles


@dataclass
class PanelDataset:
    """Observable series with role assignments and a time index.

    ``observations`` is T x n_obs; ``variable_roles`` marks which columns
    play the driver/outcome/policy parts.  ``columns`` and ``time_index``
    are carried for reporting and must match the data dimensions.
    """

    observations: np.ndarray
    variable_roles: VariableRoles
    columns: Optional[tuple[str, ...]] = None
    time_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim != 2 or self.observations.shape[0] < 1:
            raise ShapeError("observations must be a nonempty T x n matrix")
        if not np.all(np.isfinite(self.observations)):
            raise ShapeError("observations must be finite")
        self.variable_roles.validate(self.observations.shape[1])
        if self.columns is not None:
            self.columns = tuple(self.columns)
            if len(self.columns) != self.observations.shape[1]:
                raise ShapeError("one column name per observable required")
        if self.time_index is not None:
            self.time_index = np.asarray(self.time_index)
            if self.time_index.shape[0] != self.observations.shape[0]:
                raise ShapeError("time index length must equal T")

    @property
    def n_periods(self) -> int:
        return self.observations.shape[0]

    @property
    def n_obs(self) -> int:
        return self.observations.shape[1]

    def series(self, role: str) -> np.ndarray:
        return self.observations[:, getattr(self.variable_roles, role)]


@dataclass
class InstrumentSeries:
    """Scalar external instrument, observed on a contiguous span.

    Missing periods are encoded as NaN and may appear only at the edges of
    the sample; an interior gap is a schema violation.
    """

    values: np.ndarray
    valid_span: tuple[int, int] = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        observed = np.flatnonzero(~np.isnan(self.values))
        if observed.size == 0:
            raise SchemaError("instrument has no observed values")
        start, stop = int(observed[0]), int(observed[-1]) + 1
        if observed.size != stop - start:
            gaps = np.flatnonzero(np.isnan(self.values[start:stop])) + start
            raise SchemaError(f"instrument has interior missing values at rows {gaps.tolist()}")
        if not np.all(np.isfinite(self.values[start:stop])):
            raise SchemaError("instrument must be finite on its observed span")
        self.valid_span = (start, stop)

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    def observed(self, t: int) -> bool:
        return self.valid_span[0] <= t < self.valid_span[1]


def instrument_from_column(values: Sequence[float]) -> InstrumentSeries:
    return InstrumentSeries(np.asarray(values, dtype=float))
