"""Canonical JSON serialization and hashing helpers.

All files the package writes go through `canonical_dumps`: keys sorted,
compact separators, floats via repr (shortest round-trip), trailing
newline. Identical in-memory values therefore serialize to identical
bytes, which is what the reproducibility checks compare.
"""

import hashlib
import json
from pathlib import Path


def canonical_dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(canonical_dumps(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    return sha256_bytes(Path(path).read_bytes())
