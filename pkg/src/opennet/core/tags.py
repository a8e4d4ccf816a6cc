"""Namespaced key/value tags carried in a payload's top-level ``tags`` list."""

from __future__ import annotations

import copy
from typing import Any, Iterator, Optional

from opennet.core.model import Tag


def upsert_tag(payload: dict[str, Any], tag: Tag) -> dict[str, Any]:
    out = copy.deepcopy(payload)
    tags = out.setdefault("tags", [])
    for entry in tags:
        if entry.get("namespace") == tag.namespace and entry.get("key") == tag.key:
            entry["value"] = tag.value
            return out
    tags.append({"key": tag.key, "namespace": tag.namespace, "value": tag.value})
    return out


def read_tag(payload: dict[str, Any], namespace: str, key: str) -> Optional[str]:
    for entry in payload.get("tags") or ():
        if isinstance(entry, dict) and entry.get("namespace") == namespace and entry.get("key") == key:
            return entry.get("value")
    return None


def iter_tag_lists(doc: Any, path: str = "") -> Iterator[tuple[str, list]]:
    """Yield ``(path, tag_list)`` for every ``tags`` list anywhere in ``doc``."""
    if isinstance(doc, dict):
        for key in sorted(doc):
            sub = f"{path}.{key}" if path else key
            if key == "tags" and isinstance(doc[key], list):
                yield sub, doc[key]
            else:
                yield from iter_tag_lists(doc[key], sub)
    elif isinstance(doc, list):
        for i, item in enumerate(doc):
            yield from iter_tag_lists(item, f"{path}[{i}]")
