"""State snapshot persistence with cross-process exclusion.

The whole world serializes to one JSON file (schema version field "v").
Writers take an exclusive flock on a sibling ``.lock`` file, write to a
temp file, and rename into place, so concurrent CLI invocations serialize
cleanly and readers never observe a torn snapshot.
"""

import fcntl
import json
import os
from contextlib import contextmanager

from .errors import StateIOError
from .world import World

DEFAULT_STATE_PATH = "./minimano-state.json"


def save_world(world: World, path: str):
    data = json.dumps(world.to_snapshot(), separators=(",", ":"))
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise StateIOError(f"cannot write state file {path!r}: {exc}") from None


def load_world(path: str) -> World:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise StateIOError(
            f"state file {path!r} does not exist (run 'minimano init' first)"
        ) from None
    except (OSError, ValueError) as exc:
        raise StateIOError(f"cannot read state file {path!r}: {exc}") from None
    return World.from_snapshot(data)


@contextmanager
def locked_state(path: str):
    """Exclusive lock scope around load/mutate/save of one state file."""
    lock_path = f"{path}.lock"
    try:
        lock = open(lock_path, "w")
    except OSError as exc:
        raise StateIOError(f"cannot open lock file {lock_path!r}: {exc}") from None
    try:
        fcntl.flock(lock.fileno(), fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(lock.fileno(), fcntl.LOCK_UN)
        lock.close()
