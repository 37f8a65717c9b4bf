"""Survey-record schema, coupon-linkage validation and file formats.

Skips (missing answers) are ``None`` in memory, an empty cell in CSV and
``null`` in JSON. Explicit zeros are the integer ``0``.
"""

import json
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from logger import log_data_event


MAX_COUPONS = 3
TOP_CODES = {'2023': 15, '2024': 20}

CSV_COLUMNS = [
    'respondent_id', 'recruiter_coupon', 'coupon1', 'coupon2', 'coupon3',
    'hub_id', 'age_bracket', 'gender', 'race', 'ethnicity', 'shelter_status',
    'veteran', 'chronic', 'mental_health', 'substance_use', 'disability',
    'acq_degree', 'friend_degree', 'kin_degree',
]

AGE_BRACKETS = ['18-24', '25-34', '35-44', '45-54', '55-64', '65+']
GENDERS = ['male', 'female', 'other']
ETHNICITIES = ['hispanic', 'non-hispanic']
SHELTER_STATUSES = ['housed', 'sheltered', 'unsheltered']

# Hispanic/Latina/o/x became a race category in 2024
RACE_CATEGORIES = {
    '2023': ['american_indian_alaska_native', 'asian', 'black', 'multiracial',
             'pacific_islander', 'white', 'other'],
    '2024': ['american_indian_alaska_native', 'asian', 'black', 'hispanic_latino',
             'multiracial', 'pacific_islander', 'white', 'other'],
}

CATEGORICAL_FIELDS = ('age_bracket', 'gender', 'race', 'ethnicity', 'shelter_status')
BOOLEAN_FLAGS = ('veteran', 'chronic', 'mental_health', 'substance_use', 'disability')

# CSV column name -> record field name
DEGREE_COLUMNS = {
    'acq_degree': 'acquaintance_degree',
    'friend_degree': 'close_friend_degree',
    'kin_degree': 'kinship_degree',
}

# Network label -> record field, in the order of the zero/skip table
NETWORKS = {
    'kinship': 'kinship_degree',
    'close_friendship': 'close_friend_degree',
    'acquaintance': 'acquaintance_degree',
    'referral': 'referral_out_degree',
}

VARIABLE_ALIASES = dict(DEGREE_COLUMNS)
VARIABLE_ALIASES.update(NETWORKS)
VARIABLE_ALIASES.update({
    'referral_degree': 'referral_out_degree',
    'close_friend': 'close_friend_degree',
})


class DatasetError(Exception):
    """Raised when a survey dataset cannot be loaded, validated or saved"""

    def __init__(self, message: str, report: 'Optional[ValidationReport]' = None):
        super().__init__(message)
        self.report = report


@dataclass
class SurveyRecord:
    """One respondent row"""
    respondent_id: str
    recruiter_coupon: Optional[str] = None
    own_coupons: List[str] = field(default_factory=list)
    hub_id: Optional[str] = None
    age_bracket: Optional[str] = None
    gender: Optional[str] = None
    race: Optional[str] = None
    ethnicity: Optional[str] = None
    shelter_status: Optional[str] = None
    veteran: Optional[bool] = None
    chronic: Optional[bool] = None
    mental_health: Optional[bool] = None
    substance_use: Optional[bool] = None
    disability: Optional[bool] = None
    acquaintance_degree: Optional[int] = None
    close_friend_degree: Optional[int] = None
    kinship_degree: Optional[int] = None
    referral_out_degree: int = 0


RECORD_FIELDS = tuple(f.name for f in fields(SurveyRecord))


def default_categories(year_label: str = '2024') -> Dict[str, List[str]]:
    """Category dictionaries for a survey year"""
    race = RACE_CATEGORIES.get(str(year_label), RACE_CATEGORIES['2024'])
    return {
        'age_bracket': list(AGE_BRACKETS),
        'gender': list(GENDERS),
        'race': list(race),
        'ethnicity': list(ETHNICITIES),
        'shelter_status': list(SHELTER_STATUSES),
    }


@dataclass
class ValidationReport:
    """Aggregated result of dataset validation"""
    n_records: int = 0
    violations: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    orphan_ids: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def orphan_count(self) -> int:
        return len(self.orphan_ids)

    def summary(self) -> str:
        return (f"{self.n_records} records, {len(self.violations)} violations, "
                f"{len(self.warnings)} warnings")


@dataclass
class SurveyDataset:
    """A validated collection of survey records for one survey year"""
    year_label: str = '2024'
    records: List[SurveyRecord] = field(default_factory=list)
    top_code: int = 20
    category_dictionaries: Dict[str, List[str]] = field(default_factory=default_categories)
    orphan_ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def index_of(self) -> Dict[str, int]:
        """Map respondent_id -> position in ``records``"""
        return {r.respondent_id: i for i, r in enumerate(self.records)}

    def coupon_owner(self) -> Dict[str, str]:
        """Map coupon -> respondent_id of the record that holds it"""
        owners = {}
        for record in self.records:
            for coupon in record.own_coupons:
                owners[coupon] = record.respondent_id
        return owners

    def parent_map(self) -> Dict[str, Optional[str]]:
        """Map respondent_id -> recruiter respondent_id (None for seeds)"""
        owners = self.coupon_owner()
        orphans = set(self.orphan_ids)
        parents = {}
        for record in self.records:
            parent = None
            if record.recruiter_coupon is not None and record.respondent_id not in orphans:
                parent = owners.get(record.recruiter_coupon)
            parents[record.respondent_id] = parent
        return parents

    def seed_mask(self) -> np.ndarray:
        """Boolean array, True where the record is a seed"""
        parents = self.parent_map()
        return np.array([parents[r.respondent_id] is None for r in self.records], dtype=bool)

    def refresh_referral_degrees(self):
        """Recompute referral_out_degree from coupon linkage"""
        counts = {r.respondent_id: 0 for r in self.records}
        for parent in self.parent_map().values():
            if parent is not None:
                counts[parent] += 1
        for record in self.records:
            record.referral_out_degree = counts[record.respondent_id]

    def value(self, record: SurveyRecord, variable: str) -> Any:
        """Resolve a variable for one record

        Supports field names, aliases (``acq_degree``, ``kinship`` ...) and
        indicator syntax ``attribute=level`` which yields 1.0/0.0/None.
        """
        if '=' in variable:
            attr, level = variable.split('=', 1)
            raw = getattr(record, _resolve(attr.strip()))
            if raw is None:
                return None
            if isinstance(raw, bool):
                return float(raw == (level.strip().lower() in ('1', 'true', 'yes')))
            return float(str(raw) == level.strip())
        raw = getattr(record, _resolve(variable))
        if isinstance(raw, bool):
            return float(raw)
        return raw

    def numeric_values(self, variable: str) -> np.ndarray:
        """Float array of a numeric variable, NaN where missing"""
        out = np.full(len(self.records), np.nan)
        for i, record in enumerate(self.records):
            value = self.value(record, variable)
            if value is None:
                continue
            if isinstance(value, str):
                raise DatasetError(f"variable '{variable}' is categorical, not numeric")
            out[i] = float(value)
        return out

    def categorical_values(self, attribute: str) -> List[Optional[str]]:
        return [getattr(r, _resolve(attribute)) for r in self.records]

    def levels(self, attribute: str) -> List[str]:
        """Known levels of a categorical attribute, dictionary order first"""
        name = _resolve(attribute)
        known = list(self.category_dictionaries.get(name, []))
        if name in BOOLEAN_FLAGS:
            known = ['False', 'True']
            observed = [str(v) for v in self.categorical_values(name) if v is not None]
        else:
            observed = [v for v in self.categorical_values(name) if v is not None]
        for value in observed:
            if value not in known:
                known.append(value)
        return known

    def model_frame(self) -> pd.DataFrame:
        """Typed frame for regression: degrees and flags as floats, NaN for skips"""
        data: Dict[str, Any] = {'respondent_id': [r.respondent_id for r in self.records]}
        for name in CATEGORICAL_FIELDS + ('hub_id',):
            data[name] = pd.Series([getattr(r, name) for r in self.records], dtype=object)
        for name in BOOLEAN_FLAGS + tuple(DEGREE_COLUMNS.values()) + ('referral_out_degree',):
            data[name] = self.numeric_values(name)
        return pd.DataFrame(data)


def _resolve(variable: str) -> str:
    name = VARIABLE_ALIASES.get(variable, variable)
    if name not in RECORD_FIELDS:
        raise DatasetError(f"unknown variable '{variable}'")
    return name


def validate_dataset(ds: SurveyDataset, orphan_policy: str = 'seed') -> ValidationReport:
    """Check schema invariants and coupon linkage without raising

    Args:
        ds: Dataset to check
        orphan_policy: 'reject' makes unmatched recruiter coupons violations,
            'seed' turns those respondents into seeds and records a warning

    Returns:
        ValidationReport with row-numbered violations
    """
    if orphan_policy not in ('reject', 'seed'):
        raise DatasetError(f"unknown orphan policy '{orphan_policy}'")

    report = ValidationReport(n_records=len(ds.records))
    id_rows: Dict[str, List[int]] = {}
    coupon_rows: Dict[str, List[int]] = {}

    for row, record in enumerate(ds.records, start=1):
        id_rows.setdefault(record.respondent_id, []).append(row)
        if len(record.own_coupons) > MAX_COUPONS:
            report.violations.append(
                f"coupon limit exceeded: respondent '{record.respondent_id}' lists "
                f"{len(record.own_coupons)} coupons (row {row})")
        for coupon in record.own_coupons:
            coupon_rows.setdefault(coupon, []).append(row)

        for name in DEGREE_COLUMNS.values():
            value = getattr(record, name)
            if value is not None and value < 0:
                report.violations.append(f"{name} {value} is negative (row {row})")
        friends = record.close_friend_degree
        if friends is not None and friends > ds.top_code:
            report.violations.append(
                f"close_friend_degree {friends} exceeds top code {ds.top_code} (row {row})")

        for name in CATEGORICAL_FIELDS:
            value = getattr(record, name)
            allowed = ds.category_dictionaries.get(name)
            if value is not None and allowed is not None and value not in allowed:
                report.violations.append(f"unknown {name} '{value}' (row {row})")

    for rid, rows in id_rows.items():
        if len(rows) > 1:
            report.violations.append(
                f"duplicate respondent_id '{rid}' (rows {', '.join(map(str, rows))})")
    for coupon, rows in coupon_rows.items():
        if len(rows) > 1:
            report.violations.append(
                f"duplicate coupon '{coupon}' (rows {', '.join(map(str, rows))})")

    owners = ds.coupon_owner()
    for row, record in enumerate(ds.records, start=1):
        coupon = record.recruiter_coupon
        if coupon is None:
            continue
        if coupon in record.own_coupons:
            report.violations.append(
                f"respondent '{record.respondent_id}' redeemed their own coupon '{coupon}' (row {row})")
        elif coupon not in owners:
            if orphan_policy == 'reject':
                report.violations.append(
                    f"orphan recruiter coupon '{coupon}' (row {row})")
            else:
                report.orphan_ids.append(record.respondent_id)
                report.warnings.append(
                    f"orphan recruiter coupon '{coupon}' treated as seed (row {row})")

    if not report.violations:
        cycle = _find_cycle(ds, set(report.orphan_ids))
        if cycle:
            report.violations.append(f"referral cycle through respondent '{cycle}'")

    return report


def _find_cycle(ds: SurveyDataset, orphans: set) -> Optional[str]:
    owners = ds.coupon_owner()
    parent = {}
    for record in ds.records:
        if record.recruiter_coupon is not None and record.respondent_id not in orphans:
            parent[record.respondent_id] = owners.get(record.recruiter_coupon)
    state: Dict[str, int] = {}
    for start in parent:
        path = []
        node = start
        while node is not None and state.get(node, 0) == 0:
            state[node] = 1
            path.append(node)
            node = parent.get(node)
        if node is not None and state.get(node) == 1:
            return node
        for visited in path:
            state[visited] = 2
    return None


class DatasetLoader:
    """Reads survey files, parses cells and validates the result"""

    def __init__(self, top_code: int = 20, orphan_policy: str = 'seed',
                 year_label: str = '2024',
                 category_dictionaries: Optional[Dict[str, List[str]]] = None):
        if top_code <= 0:
            raise DatasetError("top_code must be a positive integer")
        self.top_code = top_code
        self.orphan_policy = orphan_policy
        self.year_label = str(year_label)
        self._explicit_categories = category_dictionaries is not None
        self.category_dictionaries = category_dictionaries or default_categories(self.year_label)
        self.logger = logging.getLogger(__name__)

        self.stats = {
            'rows_read': 0,
            'parse_violations': 0,
            'orphans': 0,
        }

    def read(self, path: str, format: str = 'csv') -> Tuple[SurveyDataset, ValidationReport]:
        """Parse a file and validate it, returning dataset and report"""
        if format == 'csv':
            rows = self._read_csv(path)
        elif format == 'json':
            rows = self._read_json(path)
        else:
            raise DatasetError(f"unsupported format '{format}'")

        records = []
        parse_violations = []
        for row_number, raw in enumerate(rows, start=1):
            record, problems = self._parse_row(raw, row_number)
            records.append(record)
            parse_violations.extend(problems)
        self.stats['rows_read'] += len(records)
        self.stats['parse_violations'] += len(parse_violations)

        ds = SurveyDataset(
            year_label=self.year_label,
            records=records,
            top_code=self.top_code,
            category_dictionaries=self.category_dictionaries,
        )
        report = validate_dataset(ds, self.orphan_policy)
        report.violations = parse_violations + report.violations
        ds.orphan_ids = list(report.orphan_ids)
        ds.refresh_referral_degrees()
        self.stats['orphans'] += report.orphan_count
        return ds, report

    def load(self, path: str, format: str = 'csv') -> SurveyDataset:
        """Parse and validate; raise DatasetError on any violation"""
        ds, report = self.read(path, format)
        if not report.valid:
            for violation in report.violations[:10]:
                log_data_event(self.logger, violation, "error")
            raise DatasetError(
                f"{path}: {len(report.violations)} violations; first: {report.violations[0]}",
                report)
        if report.orphan_count:
            log_data_event(self.logger,
                           f"{report.orphan_count} orphan recruiter coupons treated as seeds",
                           "warning")
        log_data_event(self.logger, f"Loaded {len(ds)} records from {path}")
        return ds

    def get_stats(self) -> Dict[str, int]:
        return self.stats.copy()

    def _read_csv(self, path: str) -> List[Dict[str, Any]]:
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except FileNotFoundError:
            raise DatasetError(f"file not found: {path}")
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DatasetError(f"parse failure in {path}: {e}")
        if list(frame.columns) != CSV_COLUMNS:
            raise DatasetError(
                f"header mismatch in {path}: expected {','.join(CSV_COLUMNS)}")
        return frame.to_dict(orient='records')

    def _set_year(self, year_label: str):
        if year_label == self.year_label:
            return
        self.year_label = year_label
        if not self._explicit_categories:
            self.category_dictionaries = default_categories(year_label)
        log_data_event(self.logger, f"Survey year {year_label} taken from file", "debug")

    def _read_json(self, path: str) -> List[Dict[str, Any]]:
        try:
            with open(path, 'r') as f:
                payload = json.load(f)
        except FileNotFoundError:
            raise DatasetError(f"file not found: {path}")
        except json.JSONDecodeError as e:
            raise DatasetError(f"parse failure in {path}: {e}")
        if isinstance(payload, dict):
            if 'year_label' in payload:
                self._set_year(str(payload['year_label']))
            rows = payload.get('records', [])
        else:
            rows = payload
        if not isinstance(rows, list):
            raise DatasetError(f"parse failure in {path}: records must be a list")
        return rows

    def _parse_row(self, raw: Dict[str, Any], row: int) -> Tuple[SurveyRecord, List[str]]:
        """Convert one raw row (CSV strings or JSON values) into a record"""
        problems: List[str] = []

        def text(key):
            value = raw.get(key)
            if value is None:
                return None
            value = str(value).strip()
            return value if value else None

        def category(key):
            value = text(key)
            return value.lower() if value is not None else None

        def integer(key):
            value = raw.get(key)
            if value is None or (isinstance(value, str) and not value.strip()):
                return None
            if isinstance(value, bool):
                problems.append(f"invalid integer for {key} (row {row})")
                return None
            try:
                if isinstance(value, float):
                    if not value.is_integer():
                        raise ValueError(value)
                    return int(value)
                return int(str(value).strip())
            except ValueError:
                problems.append(f"invalid integer '{value}' for {key} (row {row})")
                return None

        def boolean(key):
            value = raw.get(key)
            if value is None or (isinstance(value, str) and not value.strip()):
                return None
            if isinstance(value, bool):
                return value
            token = str(value).strip().lower()
            if token in ('1', 'true'):
                return True
            if token in ('0', 'false'):
                return False
            problems.append(f"invalid boolean '{value}' for {key} (row {row})")
            return None

        respondent_id = text('respondent_id')
        if respondent_id is None:
            problems.append(f"missing respondent_id (row {row})")
            respondent_id = f"__row{row}"

        if isinstance(raw.get('own_coupons'), list):
            coupons = [str(c).strip() for c in raw['own_coupons'] if c is not None and str(c).strip()]
        else:
            coupons = [c for c in (text('coupon1'), text('coupon2'), text('coupon3')) if c]

        record = SurveyRecord(
            respondent_id=respondent_id,
            recruiter_coupon=text('recruiter_coupon'),
            own_coupons=coupons,
            hub_id=text('hub_id'),
            age_bracket=category('age_bracket'),
            gender=category('gender'),
            race=category('race'),
            ethnicity=category('ethnicity'),
            shelter_status=category('shelter_status'),
            veteran=boolean('veteran'),
            chronic=boolean('chronic'),
            mental_health=boolean('mental_health'),
            substance_use=boolean('substance_use'),
            disability=boolean('disability'),
            acquaintance_degree=integer('acq_degree'),
            close_friend_degree=integer('friend_degree'),
            kinship_degree=integer('kin_degree'),
        )
        return record, problems


def load_dataset(path: str, format: str = 'csv', top_code: int = 20,
                 orphan_policy: str = 'seed', year_label: str = '2024') -> SurveyDataset:
    """Load and validate a survey file (raises DatasetError on violations)"""
    loader = DatasetLoader(top_code=top_code, orphan_policy=orphan_policy, year_label=year_label)
    return loader.load(path, format)


def validate_file(path: str, format: str = 'csv', top_code: int = 20,
                  orphan_policy: str = 'seed', year_label: str = '2024') -> ValidationReport:
    """Validation report for a file; parse failures become a single violation"""
    loader = DatasetLoader(top_code=top_code, orphan_policy=orphan_policy, year_label=year_label)
    try:
        _, report = loader.read(path, format)
    except DatasetError as e:
        report = ValidationReport(violations=[str(e)])
    return report


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return '1' if value else '0'
    return str(value)


def _record_row(record: SurveyRecord) -> Dict[str, Any]:
    coupons = list(record.own_coupons) + [None] * (MAX_COUPONS - len(record.own_coupons))
    row = {
        'respondent_id': record.respondent_id,
        'recruiter_coupon': record.recruiter_coupon,
        'coupon1': coupons[0],
        'coupon2': coupons[1],
        'coupon3': coupons[2],
        'hub_id': record.hub_id,
    }
    for name in CATEGORICAL_FIELDS + BOOLEAN_FLAGS:
        row[name] = getattr(record, name)
    for column, name in DEGREE_COLUMNS.items():
        row[column] = getattr(record, name)
    return row


def save_dataset(ds: SurveyDataset, path: str, format: str = 'csv'):
    """Write a dataset in the documented column order

    Raises:
        DatasetError: a record holds more than MAX_COUPONS coupons, which the
            three coupon columns cannot carry without breaking linkage
    """
    for row, record in enumerate(ds.records, start=1):
        if len(record.own_coupons) > MAX_COUPONS:
            raise DatasetError(
                f"cannot write {path}: respondent '{record.respondent_id}' holds "
                f"{len(record.own_coupons)} coupons, the file format carries {MAX_COUPONS} (row {row})")
    rows = [_record_row(r) for r in ds.records]
    try:
        if format == 'csv':
            frame = pd.DataFrame(
                [[_cell(row[c]) for c in CSV_COLUMNS] for row in rows],
                columns=CSV_COLUMNS,
            )
            frame.to_csv(path, index=False, lineterminator='\n')
        elif format == 'json':
            payload = {
                'year_label': ds.year_label,
                'top_code': ds.top_code,
                'records': rows,
            }
            with open(path, 'w') as f:
                json.dump(payload, f, indent=1)
                f.write('\n')
        else:
            raise DatasetError(f"unsupported format '{format}'")
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}")


def zero_skip_summary(ds: SurveyDataset) -> pd.DataFrame:
    """Per-network N and share of zeros-or-skips

    ``fraction_zero_or_skip`` is (missing + explicit zeros) / record count.
    """
    total = len(ds.records)
    rows = []
    for network, name in NETWORKS.items():
        values = [getattr(r, name) for r in ds.records]
        missing = sum(1 for v in values if v is None)
        zeros = sum(1 for v in values if v == 0)
        rows.append({
            'network': network,
            'n_nonmissing': total - missing,
            'n_missing': missing,
            'n_zero': zeros,
            'fraction_zero_or_skip': (missing + zeros) / total if total else 0.0,
        })
    return pd.DataFrame(rows)
