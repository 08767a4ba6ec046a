"""CSV and key=value sinks for run artifacts."""
import csv
import os
from typing import Any, Iterable, Mapping

from src import types_ as types


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return '%.17g' % value
    if hasattr(value, 'item'):  # numpy / jax scalars
        return _format(value.item())
    return str(value)


def _parse(raw: str) -> int | float | str:
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


class CSVLogger:
    """Appends one row per `write`; the first row fixes the columns."""

    def __init__(self, logdir: str, label: str, step_key: str = 'step') -> None:
        self.path = os.path.join(logdir, f'{label}.csv')
        self.step_key = step_key
        self._columns = None
        if os.path.exists(self.path):
            os.remove(self.path)

    def write(self, metrics: types.Metrics) -> None:
        if self.step_key not in metrics:
            raise KeyError(f'Metrics lack the step column {self.step_key!r}')
        if self._columns is None:
            rest = [k for k in metrics if k != self.step_key]
            self._columns = [self.step_key] + rest
            with open(self.path, 'w', newline='') as f:
                csv.writer(f).writerow(self._columns)
        elif set(metrics) != set(self._columns):
            raise ValueError(f'Columns changed: {sorted(metrics)} vs {sorted(self._columns)}')
        with open(self.path, 'a', newline='') as f:
            csv.writer(f).writerow([_format(metrics[k]) for k in self._columns])


def write_table(path: str | os.PathLike, rows: Iterable[types.Row]) -> None:
    rows = list(rows)
    columns = list(rows[0]) if rows else []
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row[k]) for k in columns])


def read_table(path: str | os.PathLike) -> list[types.Row]:
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        return [{k: _parse(v) for k, v in row.items()} for row in reader]


def write_kv(path: str | os.PathLike, values: Mapping[str, Any]) -> None:
    with open(path, 'w') as f:
        for key, value in values.items():
            f.write(f'{key}={_format(value)}\n')


def read_kv(path: str | os.PathLike) -> dict[str, int | float | str]:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.rstrip('\n')
            if not line:
                continue
            key, value = line.split('=', 1)
            out[key] = _parse(value)
    return out

