"""File I/O: atomic writes, the CSV schemas and per-item parameter records.

Numbers are written with ``repr`` (shortest round-trip form), so loading a
file and writing it back reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..cutsim import ForceProfile
from ..errors import NonFiniteValue, NonMonotonicTime, ParseError

PROFILE_COLUMNS = ("t_s", "f_y_N", "f_z_N", "z_m")
TRIAL_COLUMNS = (
    "trial_index",
    "cut_spring_stiffness",
    "cut_spring_softness",
    "contact_stiffness",
    "contact_damping",
    "contact_friction_stiffness",
    "contact_friction_coeff",
    "loss",
)
CURVE_COLUMNS = ("step", "mean_return", "success_rate")
SCHEMA_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, columns, rows) -> Path:
    return atomic_write_text(path, csv_text(columns, rows))


def read_csv(path, columns: Sequence[str] | None = None) -> tuple[list, list]:
    """Header and raw string rows; checks the header when ``columns`` given."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(path, 1, "missing header row") from None
    if columns is not None and tuple(header) != tuple(columns):
        raise ParseError(path, 1, f"expected header {','.join(columns)!r}, got {','.join(header)!r}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            raise ParseError(path, lineno, "empty line")
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        rows.append((lineno, row))
    return header, rows


# --- force profiles ------------------------------------------------------------


def profile_rows(profile: ForceProfile):
    for t, (fy, fz), z in zip(profile.t, profile.force, profile.z):
        yield (float(t), float(fy), float(fz), float(z))


def save_force_profile(profile: ForceProfile, path) -> Path:
    return write_csv(path, PROFILE_COLUMNS, profile_rows(profile))


def load_force_profile(path) -> ForceProfile:
    path = Path(path)
    _, rows = read_csv(path, PROFILE_COLUMNS)
    values = np.empty((len(rows), 4))
    prev_t = -math.inf
    for k, (lineno, row) in enumerate(rows):
        try:
            parsed = [float(x) for x in row]
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric field in {row!r}") from None
        if not all(math.isfinite(v) for v in parsed):
            raise NonFiniteValue(path, lineno, "non-finite value")
        if not parsed[0] > prev_t:
            raise NonMonotonicTime(path, lineno, f"time {parsed[0]} does not increase")
        prev_t = parsed[0]
        values[k] = parsed
    return ForceProfile(values[:, 0], values[:, 1:3], values[:, 3])


# --- parameter records ---------------------------------------------------------


@dataclass
class ItemRecord:
    item: str
    model_tag: str
    params: dict
    loss: float
    source_profiles: list = field(default_factory=list)
    created: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "schema": SCHEMA_VERSION,
            "item": self.item,
            "model_tag": self.model_tag,
            "params": self.params,
            "loss": self.loss,
            "source_profiles": list(self.source_profiles),
            "created": self.created,
        }
        return json.dumps(body, sort_keys=True, indent=2, allow_nan=False) + "\n"

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "ItemRecord":
        path = Path(path)
        try:
            body = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from exc
        if body.get("model_tag") not in ("cutsim", "baseline"):
            raise ParseError(path, 1, f"unknown model tag {body.get('model_tag')!r}")
        return cls(
            item=body["item"],
            model_tag=body["model_tag"],
            params=body["params"],
            loss=body["loss"],
            source_profiles=body.get("source_profiles", []),
            created=body.get("created", {}),
        )


def write_meta(path, meta: dict) -> Path:
    """Sidecar ``<file>.meta.json`` carrying config hash and seeds for a CSV."""
    path = Path(path)
    side = path.with_name(path.name + ".meta.json")
    return atomic_write_text(side, json.dumps(meta, sort_keys=True, indent=2) + "\n")
