import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _to_serializable(obj):
    # numpy scalars
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return int(bool(obj))
    if isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, (int, float, str)):
        return obj
    if obj is None:
        return ""
    raise TypeError(f"Type {type(obj)} not serializable")


def atomic_write_text(path: str, text: str):
    """Write `text` to `path` through a temp file so readers never see partial output."""
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent or Path(".")))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Render rows as UTF-8 CSV with `\\n` line endings; floats use repr (shortest round-trip)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_to_serializable(v) for v in row])
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    atomic_write_text(path, csv_text(header, rows))
    return str(path)
