from __future__ import annotations

import json
import logging
from typing import Any, Optional

import redis

from core.config import get_settings
from core.models import FitnessRecord

logger = logging.getLogger(__name__)
_CLIENT: redis.Redis | InMemoryRedis | None = None

LATEST_KEY = "evolution:latest"


class InMemoryRedis:
    def __init__(self) -> None:
        self._store: dict[str, str] = {}

    def get(self, key: str) -> Optional[bytes]:
        value = self._store.get(key)
        return value.encode() if isinstance(value, str) else value

    def set(self, key: str, value: Any, ex: int | None = None) -> bool:
        if isinstance(value, bytes):
            value = value.decode()
        self._store[key] = value
        return True

    def ping(self) -> bool:
        return True


def _build_client():
    settings = get_settings()
    if not settings.redis_url:
        return InMemoryRedis()
    try:
        client = redis.from_url(settings.redis_url, decode_responses=False)
        client.ping()
        return client
    except Exception:
        logger.warning("Redis at %s unreachable; falling back to in-memory cache", settings.redis_url)
        return InMemoryRedis()


def get_client():
    global _CLIENT
    if _CLIENT is None:
        _CLIENT = _build_client()
    return _CLIENT


def cache_snapshot(key: str, payload: Any, expire: int | None = None) -> None:
    client = get_client()
    serialized = json.dumps(payload, default=str)
    client.set(key, serialized, ex=expire)


def get_snapshot(key: str) -> Any:
    client = get_client()
    raw = client.get(key)
    if not raw:
        return None
    try:
        return json.loads(raw)
    except (TypeError, json.JSONDecodeError):
        return raw


class FitnessCache:
    """Fitness records by individual id, scoped to one run namespace."""

    def __init__(self, namespace: str, client=None) -> None:
        self.namespace = namespace
        self.client = client if client is not None else get_client()
        self.hits = 0

    def _key(self, individual_id: str) -> str:
        return f"fitness:{self.namespace}:{individual_id}"

    def get(self, individual_id: str) -> Optional[FitnessRecord]:
        raw = self.client.get(self._key(individual_id))
        if not raw:
            return None
        try:
            record = FitnessRecord.parse_raw(raw)
        except ValueError:
            logger.warning("Discarding unreadable cached fitness for %s", individual_id)
            return None
        self.hits += 1
        logger.debug("Fitness cache hit for %s", individual_id)
        return record

    def put(self, individual_id: str, record: FitnessRecord) -> None:
        self.client.set(self._key(individual_id), record.json())


__all__ = ["FitnessCache", "InMemoryRedis", "LATEST_KEY", "cache_snapshot", "get_client", "get_snapshot"]
