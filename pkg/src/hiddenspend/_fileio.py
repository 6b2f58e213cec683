"""Atomic file writing: outputs are complete or absent, never partial."""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from collections.abc import Iterator
from typing import IO


@contextlib.contextmanager
def atomic_open(path: str) -> Iterator[IO[str]]:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    handle = os.fdopen(fd, "w", newline="", encoding="utf-8")
    try:
        yield handle
        handle.flush()
        os.fsync(handle.fileno())
        handle.close()
        os.replace(tmp_path, path)
    except BaseException:
        handle.close()
        with contextlib.suppress(OSError):
            os.unlink(tmp_path)
        raise


def write_text(path: str, text: str) -> None:
    with atomic_open(path) as handle:
        handle.write(text)


def write_json(path: str, payload: object) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
