"""Provenance-stamped CSV/JSON output for toolkit tables"""

import hashlib
import json
import logging
import math
import os
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from logger import log_system_event


TOOL_NAME = 'rdsnet'
TOOL_VERSION = '1.0.0'
FORMATS = ('csv', 'json')


class OutputError(Exception):
    """Raised when an output file cannot be written"""
    pass


def to_jsonable(value: Any) -> Any:
    """Plain-Python copy of ``value``; NaN and infinities become None"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, pd.DataFrame):
        return to_jsonable(value.to_dict(orient='records'))
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value is pd.NA or value is pd.NaT:
        return None
    return value


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a config block"""
    canonical = json.dumps(to_jsonable(config), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class OutputWriter:
    """Writes tables and documents under one output directory

    Every file carries the same metadata block: tool, version, command,
    rng_seed and config_hash. No timestamps are written, so a rerun with the
    same config and seed produces identical bytes.
    """

    def __init__(self, output_dir: str, format: str = 'csv', command: str = '',
                 config: Optional[Dict[str, Any]] = None, rng_seed: Optional[int] = None):
        if format not in FORMATS:
            raise OutputError(f"unknown output format '{format}'")
        self.output_dir = output_dir
        self.format = format
        self.metadata = {
            'tool': TOOL_NAME,
            'version': TOOL_VERSION,
            'command': command,
            'rng_seed': rng_seed,
            'config_hash': config_hash(config or {}),
        }
        self.logger = logging.getLogger(__name__)
        self.stats = {
            'files_written': 0,
            'rows_written': 0,
        }
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name: str, extension: Optional[str] = None) -> str:
        return os.path.join(self.output_dir, f"{name}.{extension or self.format}")

    def write_table(self, name: str, table: pd.DataFrame, format: Optional[str] = None) -> str:
        """Write a DataFrame as CSV with ``# key=value`` header lines, or as JSON records"""
        format = format or self.format
        path = self.path(name, format)
        try:
            if format == 'csv':
                with open(path, 'w', newline='') as f:
                    for key in sorted(self.metadata):
                        value = self.metadata[key]
                        f.write(f"# {key}={'' if value is None else value}\n")
                    table.to_csv(f, index=False, lineterminator='\n', na_rep='')
            else:
                self._dump(path, table)
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e}")
        self.stats['files_written'] += 1
        self.stats['rows_written'] += len(table)
        log_system_event(self.logger, f"Wrote {len(table)} rows to {path}", "debug")
        return path

    def write_document(self, name: str, data: Any) -> str:
        """Write structured data as a JSON document regardless of the table format"""
        path = self.path(name, 'json')
        try:
            self._dump(path, data)
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e}")
        self.stats['files_written'] += 1
        log_system_event(self.logger, f"Wrote {path}", "debug")
        return path

    def write_text(self, name: str, text: str, extension: str = 'txt') -> str:
        path = self.path(name, extension)
        try:
            with open(path, 'w') as f:
                f.write(text if text.endswith('\n') else text + '\n')
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e}")
        self.stats['files_written'] += 1
        return path

    def _dump(self, path: str, data: Any):
        document = {'metadata': self.metadata, 'data': to_jsonable(data)}
        with open(path, 'w') as f:
            json.dump(to_jsonable(document), f, sort_keys=True, indent=2)
            f.write('\n')

    def get_stats(self) -> Dict[str, int]:
        return self.stats.copy()


def read_metadata(path: str) -> Dict[str, str]:
    """Metadata block of a file written by OutputWriter"""
    if path.endswith('.json'):
        with open(path) as f:
            return {k: '' if v is None else str(v) for k, v in json.load(f)['metadata'].items()}
    metadata = {}
    with open(path) as f:
        for line in f:
            if not line.startswith('# '):
                break
            key, _, value = line[2:].rstrip('\n').partition('=')
            metadata[key] = value
    return metadata


def read_table(path: str) -> pd.DataFrame:
    """Table part of a CSV or JSON file written by OutputWriter"""
    if path.endswith('.json'):
        with open(path) as f:
            return pd.DataFrame(json.load(f)['data'])
    return pd.read_csv(path, skiprows=len(read_metadata(path)))
