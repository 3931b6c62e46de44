"""CSV and manifest helpers.

All artifact files are written atomically (temp file + rename) with '.'
decimals, '\\n' line endings, a header row, and floats at 17 significant
digits so that repeated runs are byte-identical.
"""

import hashlib
import json
import os

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _cell(value) -> str:
    text = fmt(value)
    if any(ch in text for ch in ",\"\n"):
        return '"%s"' % text.replace('"', '""')
    return text


def _atomic_write(path, data: bytes) -> None:
    tmp = "%s.tmp-%d" % (path, os.getpid())
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_csv(path, header, columns) -> None:
    """Write columns (equal-length sequences) under the given header."""
    columns = [np.asarray(c) for c in columns]
    n = len(columns[0])
    for c in columns:
        if len(c) != n:
            raise ValueError("column lengths differ")
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(_cell(c[i]) for c in columns))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path, record: dict) -> None:
    data = json.dumps(record, indent=2, sort_keys=True) + "\n"
    _atomic_write(path, data.encode("ascii"))
