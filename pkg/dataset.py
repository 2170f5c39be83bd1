"""Cross-classified observations: loading, validation and per-level indexing."""
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from config import Config
from errors import ConfigError, DomainError, LoadError, RankDeficiencyError
from families import FamilySpec, get_family

logger = logging.getLogger(__name__)

# Count responses are stored as int64
MAX_COUNT = np.iinfo(np.int64).max


@dataclass(frozen=True)
class Schema:
    response: str
    covariates: tuple = ()
    ways: tuple = ()
    family: str = None
    n_categories: int = None

    def __post_init__(self):
        object.__setattr__(self, 'covariates', tuple(self.covariates))
        object.__setattr__(self, 'ways', tuple(self.ways))
        if not self.ways:
            raise ConfigError("Schema needs at least one way column")
        columns = [self.response, *self.covariates, *self.ways]
        duplicated = sorted({c for c in columns if columns.count(c) > 1})
        if duplicated:
            raise ConfigError(f"Schema columns must be distinct, repeated: {', '.join(duplicated)}")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {'response', 'covariates', 'ways', 'family', 'n_categories'}
        if unknown:
            raise ConfigError(f"Unknown schema keys: {', '.join(sorted(unknown))}")
        if 'response' not in data:
            raise ConfigError("Schema must name a response column")
        return cls(
            response=data['response'],
            covariates=data.get('covariates', ()),
            ways=data.get('ways', ()),
            family=data.get('family'),
            n_categories=data.get('n_categories'),
        )

    @classmethod
    def parse(cls, text):
        """Schema from inline JSON or from a path to a JSON file"""
        if isinstance(text, dict):
            return cls.from_dict(text)
        if os.path.exists(text):
            with open(text, 'r', encoding='utf-8') as f:
                return cls.from_dict(json.load(f))
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Schema is neither a file nor valid JSON: {e}") from e

    def family_spec(self, family=None, y=None):
        """Resolve the declared family; ordered gets placeholder thresholds"""
        name = family or self.family
        if name is None:
            raise ConfigError("No family declared (use --family or the schema 'family' key)")
        kind = Config.FAMILY_ALIASES.get(name)
        if kind is None:
            raise ConfigError(f"Unknown family '{name}'")
        if kind != 'ordered_probit':
            return FamilySpec(kind)
        n_categories = self.n_categories
        if n_categories is None:
            if y is None:
                raise ConfigError("ordered family needs n_categories")
            n_categories = int(np.max(y))
        return FamilySpec.ordered_placeholder(int(n_categories))


@dataclass(frozen=True)
class Dataset:
    """N observations: response, design matrix (no intercept) and K way codes (0-based)"""
    y: np.ndarray
    X: np.ndarray
    codes: tuple
    family: FamilySpec
    n_levels: tuple
    level_labels: tuple = None
    response_name: str = 'y'
    covariate_names: tuple = None
    way_names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(len(self.y), 0)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'codes', tuple(np.asarray(c, dtype=np.int64) for c in self.codes))
        object.__setattr__(self, 'n_levels', tuple(int(n) for n in self.n_levels))
        if self.level_labels is None:
            labels = tuple(tuple(str(l + 1) for l in range(n)) for n in self.n_levels)
            object.__setattr__(self, 'level_labels', labels)
        if self.covariate_names is None:
            object.__setattr__(self, 'covariate_names', tuple(f'x{j + 1}' for j in range(X.shape[1])))
        if self.way_names is None:
            object.__setattr__(self, 'way_names', tuple(f'way{k + 1}' for k in range(len(self.codes))))
        self.validate()

    @property
    def N(self):
        return len(self.y)

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def K(self):
        return len(self.codes)

    def validate(self):
        if self.N < 1:
            raise LoadError("Dataset has no observations")
        if self.K < 1:
            raise ConfigError("Dataset needs at least one way")
        if self.X.shape[0] != self.N:
            raise ConfigError(f"Design matrix has {self.X.shape[0]} rows for {self.N} responses")
        if len(self.n_levels) != self.K:
            raise ConfigError("One level count per way is required")
        for k, (codes, n) in enumerate(zip(self.codes, self.n_levels)):
            if codes.shape != (self.N,):
                raise ConfigError(f"Way {k + 1} has {codes.size} indicators for {self.N} observations")
            if codes.min() < 0 or codes.max() >= n:
                raise ConfigError(f"Way {k + 1} indicators outside 0..{n - 1}")
            missing = np.flatnonzero(np.bincount(codes, minlength=n) == 0)
            if missing.size:
                raise ConfigError(f"Way {k + 1} level {missing[0] + 1} has no observations")
        if self.N > 1:
            for j in range(self.p):
                if np.all(self.X[:, j] == self.X[0, j]):
                    raise ConfigError(
                        f"Covariate '{self.covariate_names[j]}' is constant; the intercept lives in the effects")
        get_family(self.family).check_support(self.y)

    @classmethod
    def from_labels(cls, y, X, way_labels, family, response_name='y', covariate_names=None, way_names=None):
        """Build from raw labels, coding levels by order of first appearance"""
        codes, labels = [], []
        for raw in way_labels:
            c, uniques = pd.factorize(np.asarray(raw), sort=False)
            codes.append(c)
            labels.append(tuple(str(u) for u in uniques))
        return cls(
            y=np.asarray(y),
            X=X,
            codes=tuple(codes),
            family=family,
            n_levels=tuple(len(l) for l in labels),
            level_labels=tuple(labels),
            response_name=response_name,
            covariate_names=tuple(covariate_names) if covariate_names is not None else None,
            way_names=tuple(way_names) if way_names is not None else None,
        )

    def way_label_values(self, k):
        return np.asarray(self.level_labels[k], dtype=object)[self.codes[k]]

    def with_family(self, family):
        return replace(self, family=family)

    def subset(self, rows):
        """Rows re-coded so every kept level still appears"""
        rows = np.asarray(rows)
        return Dataset.from_labels(
            y=self.y[rows],
            X=self.X[rows],
            way_labels=[self.way_label_values(k)[rows] for k in range(self.K)],
            family=self.family,
            response_name=self.response_name,
            covariate_names=self.covariate_names,
            way_names=self.way_names,
        )

    def aligned(self, level_labels):
        """Re-coded so level i of way k carries level_labels[k][i]"""
        codes = []
        for k, labels in enumerate(level_labels):
            index = pd.Index([str(l) for l in labels])
            positions = index.get_indexer(self.way_label_values(k).astype(str))
            if (positions < 0).any():
                label = self.way_label_values(k)[np.flatnonzero(positions < 0)[0]]
                raise ConfigError(f"Level '{label}' of way '{self.way_names[k]}' is not in the fitted model")
            codes.append(positions)
        return replace(self, codes=tuple(codes), n_levels=tuple(len(l) for l in level_labels),
                       level_labels=tuple(tuple(str(l) for l in labels) for labels in level_labels))

    def to_frame(self):
        data = {self.response_name: self.y}
        for j, name in enumerate(self.covariate_names):
            data[name] = self.X[:, j]
        for k, name in enumerate(self.way_names):
            data[name] = self.way_label_values(k)
        return pd.DataFrame(data)

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, encoding='utf-8')


@dataclass(frozen=True)
class LevelIndex:
    """For each way, the ascending observation indices of every level"""
    members: tuple = field(default_factory=tuple)

    def sizes(self, k):
        return np.array([len(m) for m in self.members[k]], dtype=np.int64)


def build_level_index(ds):
    members = []
    for codes, n in zip(ds.codes, ds.n_levels):
        order = np.argsort(codes, kind='stable')
        bounds = np.cumsum(np.bincount(codes, minlength=n))[:-1]
        members.append(tuple(np.split(order, bounds)))
    return LevelIndex(members=tuple(members))


def check_full_rank(ds):
    """Raise naming the first covariate that is a combination of earlier ones"""
    if ds.p == 0:
        return
    for j in range(ds.p):
        if np.linalg.matrix_rank(ds.X[:, :j + 1]) < j + 1:
            name = ds.covariate_names[j]
            raise RankDeficiencyError(f"Design matrix is rank deficient: column '{name}' is collinear", column=name)


def _is_finite_number(cell):
    try:
        return bool(np.isfinite(float(cell)))
    except ValueError:
        return False


def _parse_numeric(frame, column, lines):
    cells = frame[column].str.strip().to_numpy(dtype=str)
    try:
        # numpy parses with correctly rounded float(), so written values read back bit-exact
        values = cells.astype(float)
    except ValueError:
        values = None
    if values is None or not np.isfinite(values).all():
        i = next(i for i, cell in enumerate(cells) if not _is_finite_number(cell))
        raise LoadError(
            f"Cannot parse {frame[column].iloc[i]!r} in column '{column}' at row {lines[i]}",
            row=int(lines[i]), column=column)
    return values


def _parse_response(frame, schema, kind, lines):
    column = schema.response
    values = _parse_numeric(frame, column, lines)
    if kind == 'gaussian':
        return values
    integral = (values == np.floor(values)) & (values >= 0)
    if not integral.all():
        i = int(np.flatnonzero(~integral)[0])
        raise LoadError(f"Response {frame[column].iloc[i]!r} at row {lines[i]} is not a count",
                        row=int(lines[i]), column=column)
    too_big = values >= float(MAX_COUNT)
    if too_big.any():
        i = int(np.flatnonzero(too_big)[0])
        raise LoadError(f"Count overflow at row {lines[i]}", row=int(lines[i]), column=column)
    return values.astype(np.int64)


def load_csv(path, schema, family=None):
    """Read a UTF-8 CSV with a header row into a Dataset"""
    if not isinstance(schema, Schema):
        schema = Schema.parse(schema)
    # Header is line 1, so data row i sits on line i + 2
    line_offset = 2
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except FileNotFoundError as e:
        raise LoadError(f"Input file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise LoadError(f"Input file is empty: {path}") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise LoadError(f"Failed to parse {path}: {e}") from e

    columns = [schema.response, *schema.covariates, *schema.ways]
    for column in columns:
        if column not in frame.columns:
            raise LoadError(f"Missing column '{column}' in {path}", column=column)
    frame = frame[columns]
    if frame.empty:
        raise LoadError(f"Input file has no data rows: {path}")

    missing = (frame.apply(lambda s: s.str.strip()) == '').any(axis=1).to_numpy()
    if missing.any():
        logger.warning(f"⚠ Rejected {int(missing.sum())} rows with missing fields "
                       f"(first at row {int(np.flatnonzero(missing)[0]) + line_offset})")
        kept_lines = np.flatnonzero(~missing)
        frame = frame.loc[~missing].reset_index(drop=True)
        if frame.empty:
            raise LoadError(f"Every row of {path} has a missing field")
    else:
        kept_lines = np.arange(len(frame))
    lines = kept_lines + line_offset

    fam = family if isinstance(family, FamilySpec) else None
    kind = fam.kind if fam else Config.FAMILY_ALIASES.get(family or schema.family)
    if kind is None:
        raise ConfigError(f"Unknown or missing family '{family or schema.family}'")
    y = _parse_response(frame, schema, kind, lines)
    X = np.column_stack([_parse_numeric(frame, c, lines) for c in schema.covariates]) \
        if schema.covariates else np.empty((len(frame), 0))

    for j, column in enumerate(schema.covariates):
        if len(frame) > 1 and np.all(X[:, j] == X[0, j]):
            raise LoadError(f"Covariate column '{column}' is constant", column=column)

    if fam is None:
        fam = schema.family_spec(family, y)
    try:
        get_family(fam).check_support(y)
    except DomainError as e:
        bad = _first_bad_row(fam, y)
        raise LoadError(f"{e} (row {lines[bad]})",
                        row=int(lines[bad]), column=schema.response) from e

    ds = Dataset.from_labels(
        y=y,
        X=X,
        way_labels=[frame[w].to_numpy() for w in schema.ways],
        family=fam,
        response_name=schema.response,
        covariate_names=schema.covariates,
        way_names=schema.ways,
    )
    logger.info(f"✓ Loaded {ds.N} rows from {path}: p={ds.p}, levels={ds.n_levels}")
    return ds


def _first_bad_row(fam, y):
    family = get_family(fam)
    for i, value in enumerate(y):
        try:
            family.check_support(np.asarray([value]))
        except DomainError:
            return i
    return 0
