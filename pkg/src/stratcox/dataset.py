"""Stratified right-censored survival data: containers, CSV ingestion,
risk-set indexing, and cross-validation fold assignment.

A dataset is a list of strata; each stratum holds observed times, event
indicators (1 = event, 0 = censored), and a covariate matrix. All strata
share the same covariate count, and regression coefficients are assumed
common across strata while baseline hazards are stratum-specific.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError


@dataclass(frozen=True)
class StratumBlock:
    """One stratum: times, event indicators, and covariate rows.

    Invariants (enforced at construction): times are strictly positive,
    events are 0/1, the covariate matrix is finite with one row per
    observation.
    """

    stratum_id: str
    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        events = np.asarray(self.events)
        covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if times.ndim != 1 or times.size == 0:
            raise ValueError("times must be a nonempty 1-d array")
        if covariates.shape[0] != times.size or events.shape != times.shape:
            raise ValueError("times, events, and covariate rows must align")
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            raise ValueError("times must be finite and strictly positive")
        if not np.isin(events, (0, 1)).all():
            raise ValueError("events must contain only 0 or 1")
        if not np.all(np.isfinite(covariates)):
            raise ValueError("covariates must be finite (no missing values)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events.astype(np.int8))
        object.__setattr__(self, "covariates", covariates)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def n_events(self) -> int:
        return int(self.events.sum())


@dataclass(frozen=True)
class StratifiedSurvivalDataset:
    """Immutable collection of strata with a common covariate count."""

    strata: tuple[StratumBlock, ...]
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        strata = tuple(self.strata)
        if not strata:
            raise ValueError("dataset needs at least one stratum")
        p = strata[0].covariates.shape[1]
        for block in strata:
            if block.covariates.shape[1] != p:
                raise ValueError(
                    "all strata must share the same covariate count; "
                    f"stratum {block.stratum_id!r} has {block.covariates.shape[1]}, expected {p}"
                )
        names = self.covariate_names
        if names is not None:
            names = tuple(names)
            if len(names) != p:
                raise ValueError("covariate_names length must equal the covariate count")
        object.__setattr__(self, "strata", strata)
        object.__setattr__(self, "covariate_names", names)

    @property
    def K(self) -> int:
        return len(self.strata)

    @property
    def p(self) -> int:
        return self.strata[0].covariates.shape[1]

    @property
    def N(self) -> int:
        return sum(block.n for block in self.strata)

    @property
    def n_events(self) -> int:
        return sum(block.n_events for block in self.strata)

    def stratum_sizes(self) -> tuple[int, ...]:
        return tuple(block.n for block in self.strata)

    def names(self) -> tuple[str, ...]:
        if self.covariate_names is not None:
            return self.covariate_names
        return tuple(f"x{j + 1}" for j in range(self.p))

    @classmethod
    def from_arrays(cls, time, status, covariates, strata=None, covariate_names=None):
        """Build a dataset from flat arrays, grouping rows by stratum label.

        Strata appear in first-occurrence order; row order within a stratum
        follows the input. ``strata=None`` places everything in one stratum.
        """
        time = np.asarray(time, dtype=float)
        status = np.asarray(status)
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if covariates.shape[0] != time.size:
            raise ValueError("covariates must have one row per observation")
        if strata is None:
            strata = np.zeros(time.size, dtype=int)
        labels = np.asarray(strata)
        blocks = []
        seen = []
        for lab in labels:
            if not any(lab == s for s in seen):
                seen.append(lab)
        for lab in seen:
            mask = labels == lab
            blocks.append(
                StratumBlock(str(lab), time[mask], status[mask], covariates[mask])
            )
        return cls(tuple(blocks), covariate_names=covariate_names)


@dataclass(frozen=True)
class CsvSchema:
    """Column names selecting the stratum, time, status, and covariates."""

    stratum: str
    time: str
    status: str
    covariates: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate column")
        all_cols = [self.stratum, self.time, self.status, *self.covariates]
        if len(set(all_cols)) != len(all_cols):
            raise SchemaError("schema columns must be distinct")


def load_csv(path, schema: CsvSchema) -> StratifiedSurvivalDataset:
    """Read a UTF-8, comma-separated file into a stratified dataset.

    The file must carry a header row; columns are selected by name. Status is
    coded 1 = event, 0 = censored. Rows are grouped by the stratum column
    (strata in first-occurrence order, rows in file order), and any invalid
    cell raises :class:`DataError` citing its physical line number. Missing
    covariate values are rejected, never imputed.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        positions = {}
        for name in (schema.stratum, schema.time, schema.status, *schema.covariates):
            hits = [i for i, col in enumerate(header) if col == name]
            if not hits:
                raise SchemaError(f"{path}: missing required column {name!r}")
            if len(hits) > 1:
                raise SchemaError(f"{path}: column {name!r} appears more than once")
            positions[name] = hits[0]

        order: list[str] = []
        rows: dict[str, list[tuple[float, int, list[float]]]] = {}
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise DataError(
                    f"expected {len(header)} fields, found {len(row)}", line=line
                )
            stratum = row[positions[schema.stratum]]
            time = _parse_time(row[positions[schema.time]], line)
            status = _parse_status(row[positions[schema.status]], line)
            covs = [
                _parse_covariate(row[positions[name]], name, line)
                for name in schema.covariates
            ]
            if stratum not in rows:
                rows[stratum] = []
                order.append(stratum)
            rows[stratum].append((time, status, covs))

    if not order:
        raise DataError("file contains no data rows", line=1)
    blocks = []
    for stratum in order:
        recs = rows[stratum]
        blocks.append(
            StratumBlock(
                stratum,
                np.array([r[0] for r in recs]),
                np.array([r[1] for r in recs]),
                np.array([r[2] for r in recs]),
            )
        )
    return StratifiedSurvivalDataset(tuple(blocks), covariate_names=schema.covariates)


def _parse_time(text, line):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"time {text!r} is not a number", line=line) from None
    if not np.isfinite(value) or value <= 0:
        raise DataError(f"time {text!r} is not a positive real", line=line)
    return value


def _parse_status(text, line):
    if text.strip() in ("0", "1"):
        return int(text)
    raise DataError(f"status {text!r} is not 0 or 1", line=line)


def _parse_covariate(text, name, line):
    if text.strip() == "":
        raise DataError(f"covariate {name!r} is missing", line=line)
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"covariate {name!r} value {text!r} is not a number", line=line) from None
    if not np.isfinite(value):
        raise DataError(f"covariate {name!r} value {text!r} is not finite", line=line)
    return value


def write_csv(data: StratifiedSurvivalDataset, path, schema: CsvSchema | None = None):
    """Write a dataset back to CSV; round-trips bit-for-bit through load_csv.

    Floats are rendered with ``repr`` (shortest round-trip form), so reloading
    reproduces the in-memory values exactly.
    """
    if schema is None:
        schema = CsvSchema("stratum", "time", "status", data.names())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.stratum, schema.time, schema.status, *schema.covariates])
        for block in data.strata:
            for i in range(block.n):
                writer.writerow(
                    [
                        block.stratum_id,
                        repr(float(block.times[i])),
                        int(block.events[i]),
                        *[repr(float(v)) for v in block.covariates[i]],
                    ]
                )


@dataclass(frozen=True)
class StratumIndex:
    """Sorted view of one stratum plus at-risk bookkeeping.

    ``order`` sorts times ascending (stable, so ties keep file order). For
    the observation at sorted position i, the at-risk set {j : Y_j >= Y_i}
    is exactly the sorted positions ``risk_start[i] .. n-1``; tied event
    times share one at-risk set, which is the convention implied by using
    the indicator Y_j >= Y_i directly.
    """

    stratum_id: str
    order: np.ndarray
    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray
    risk_start: np.ndarray
    event_pos: np.ndarray

    @property
    def n(self) -> int:
        return self.times.size

    def at_risk_counts(self) -> np.ndarray:
        """Number at risk at each event time, in ascending time order."""
        return self.n - self.risk_start[self.event_pos]


@dataclass(frozen=True)
class RiskSetIndex:
    """Per-stratum sorted orders and at-risk ranges for a dataset."""

    strata: tuple[StratumIndex, ...]

    @property
    def K(self) -> int:
        return len(self.strata)


def build_risk_index(data: StratifiedSurvivalDataset) -> RiskSetIndex:
    """Precompute sorted orders and at-risk ranges for every stratum."""
    out = []
    for block in data.strata:
        order = np.argsort(block.times, kind="stable")
        times = block.times[order]
        events = block.events[order]
        covs = block.covariates[order]
        risk_start = np.searchsorted(times, times, side="left")
        event_pos = np.flatnonzero(events == 1)
        out.append(
            StratumIndex(
                block.stratum_id,
                order,
                times,
                events,
                covs,
                risk_start.astype(np.intp),
                event_pos.astype(np.intp),
            )
        )
    return RiskSetIndex(tuple(out))


@dataclass(frozen=True)
class FoldAssignment:
    """A seeded partition of strata or observations into M folds.

    ``by-stratum`` mode assigns whole strata to folds (a stratum is never
    split); ``within-stratum`` mode splits each stratum's observations
    across folds as evenly as possible. ``stratum_folds`` maps stratum
    position to fold id in the first mode; ``row_folds`` maps each row of
    each stratum to a fold id in the second.
    """

    mode: str
    n_folds: int
    seed: int
    stratum_folds: np.ndarray | None = None
    row_folds: tuple[np.ndarray, ...] | None = None


_FOLD_STREAM = 0x5F0


def assign_folds(data: StratifiedSurvivalDataset, mode: str, n_folds: int, seed: int) -> FoldAssignment:
    """Assign cross-validation folds, deterministically for a given seed.

    ``by-stratum`` takes the stratum as the sampling unit and spreads the K
    strata over folds as evenly as possible; it requires K >= n_folds.
    ``within-stratum`` partitions each stratum's rows across folds.
    """
    if mode not in ("by-stratum", "within-stratum"):
        raise ConfigError(f"unknown fold mode {mode!r}")
    if n_folds < 2:
        raise ConfigError("fold count must be at least 2")
    rng = np.random.default_rng(np.random.SeedSequence([_FOLD_STREAM, int(seed)]))
    if mode == "by-stratum":
        if n_folds > data.K:
            raise ConfigError(
                f"by-stratum mode needs at least as many strata as folds (K={data.K}, M={n_folds})"
            )
        perm = rng.permutation(data.K)
        folds = np.empty(data.K, dtype=np.intp)
        for fold, chunk in enumerate(np.array_split(perm, n_folds)):
            folds[chunk] = fold
        return FoldAssignment(mode, n_folds, int(seed), stratum_folds=folds)

    row_folds = []
    counts = np.zeros(n_folds, dtype=int)
    for block in data.strata:
        perm = rng.permutation(block.n)
        folds = np.empty(block.n, dtype=np.intp)
        for fold, chunk in enumerate(np.array_split(perm, n_folds)):
            folds[chunk] = fold
            counts[fold] += chunk.size
        row_folds.append(folds)
    if (counts == 0).any():
        raise ConfigError(
            f"{n_folds} folds cannot all be nonempty with {data.N} observations"
        )
    return FoldAssignment(mode, n_folds, int(seed), row_folds=tuple(row_folds))


def split_fold(data: StratifiedSurvivalDataset, folds: FoldAssignment, fold: int):
    """Return (train, test) datasets for one fold.

    Strata left empty on either side are dropped from that side; in
    by-stratum mode the test set is exactly the held-out strata.
    """
    if not 0 <= fold < folds.n_folds:
        raise ConfigError(f"fold {fold} out of range for {folds.n_folds} folds")
    train_blocks, test_blocks = [], []
    for k, block in enumerate(data.strata):
        if folds.mode == "by-stratum":
            if folds.stratum_folds[k] == fold:
                test_blocks.append(block)
            else:
                train_blocks.append(block)
            continue
        mask = folds.row_folds[k] == fold
        if mask.any():
            test_blocks.append(
                StratumBlock(block.stratum_id, block.times[mask], block.events[mask], block.covariates[mask])
            )
        if (~mask).any():
            train_blocks.append(
                StratumBlock(block.stratum_id, block.times[~mask], block.events[~mask], block.covariates[~mask])
            )
    if not train_blocks or not test_blocks:
        raise ConfigError(f"fold {fold} leaves an empty training or test set")
    names = data.covariate_names
    return (
        StratifiedSurvivalDataset(tuple(train_blocks), covariate_names=names),
        StratifiedSurvivalDataset(tuple(test_blocks), covariate_names=names),
    )
