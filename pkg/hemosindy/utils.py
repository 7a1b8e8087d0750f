import hashlib
import os
import typing
from collections import abc
from concurrent import futures

import orjson
import pydantic

SCHEMA_VERSION = 1

Item = typing.TypeVar('Item')
Result = typing.TypeVar('Result')


def logical_cpus() -> int:
    """Return the number of logical CPUs, at least 1"""
    return os.cpu_count() or 1


def fingerprint(config: pydantic.BaseModel | dict[str, typing.Any]) -> str:
    """Return a stable SHA-256 digest of a configuration.

    Args:
        config: Configuration model or plain mapping

    Returns:
        Hex digest of the canonical sorted-key JSON encoding

    """
    if isinstance(config, pydantic.BaseModel):
        config = config.model_dump(mode='json')
    encoded = orjson.dumps(config, option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(encoded).hexdigest()


def document(
    kind: str,
    payload: pydantic.BaseModel | dict[str, typing.Any] | list,
    config_fingerprint: str,
) -> dict[str, typing.Any]:
    """Wrap an output payload with its schema version and provenance"""
    if isinstance(payload, pydantic.BaseModel):
        payload = payload.model_dump(mode='json')
    return {
        'schema_version': SCHEMA_VERSION,
        'kind': kind,
        'config_fingerprint': config_fingerprint,
        'data': payload,
    }


def dumps(value: typing.Any) -> bytes:
    """Serialize to deterministic, human readable JSON"""
    if isinstance(value, pydantic.BaseModel):
        value = value.model_dump(mode='json')
    return (
        orjson.dumps(
            value,
            option=orjson.OPT_INDENT_2
            | orjson.OPT_SORT_KEYS
            | orjson.OPT_SERIALIZE_NUMPY,
        )
        + b'\n'
    )


def run_parallel(
    fn: abc.Callable[[Item], Result],
    items: abc.Sequence[Item],
    threads: int = 1,
) -> list[Result]:
    """Apply ``fn`` to every item on a worker pool.

    Results are returned in input order regardless of completion order.
    With ``threads <= 1`` the items are processed inline.

    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with futures.ThreadPoolExecutor(
        max_workers=min(threads, len(items))
    ) as executor:
        return list(executor.map(fn, items))
