"""The domain-agnostic payload model and dotted field paths over it.

A field path is a dotted key sequence; a ``[]`` suffix on a segment means
"every element of this list", e.g. ``order.items[].quantity.count``.
Leaves are typed ``str``, ``num``, ``bool``; ``any`` marks an opaque
sub-document (consented data, catalog extras) whose inner keys are free.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Iterator

from opennet.errors import UnknownFieldPath

STR, NUM, BOOL, ANY = "str", "num", "bool", "any"

DESCRIPTOR = {"name": STR, "code": STR, "short_desc": STR}
TAGS = [{"namespace": STR, "key": STR, "value": STR}]
PRICE = {"value": STR, "currency": STR}
LOCATION = {
    "id": STR,
    "gps": STR,
    "area_code": STR,
    "address": STR,
    "descriptor": DESCRIPTOR,
}
FULFILLMENT = {
    "id": STR,
    "type": STR,
    "state": {"descriptor": DESCRIPTOR},
    "start": {"location": LOCATION, "time": {"timestamp": STR}},
    "end": {"location": LOCATION, "time": {"timestamp": STR}},
    "vehicle": {"category": STR, "registration": STR},
    "agent": {"name": STR, "phone": STR},
    "customer": {"person": {"name": STR}, "contact": {"phone": STR, "email": STR}},
    "tags": TAGS,
}
ITEM = {
    "id": STR,
    "descriptor": DESCRIPTOR,
    "category_ids": [STR],
    "price": PRICE,
    "quantity": {"count": NUM},
    "fulfillment_ids": [STR],
    "tags": TAGS,
}
PROVIDER = {
    "id": STR,
    "descriptor": DESCRIPTOR,
    "category_id": STR,
    "locations": [LOCATION],
    "items": [ITEM],
    "fulfillments": [FULFILLMENT],
    "tags": TAGS,
}
ORDER = {
    "id": STR,
    "state": STR,
    "provider": {"id": STR},
    "items": [ITEM],
    "billing": {"name": STR, "phone": STR, "email": STR, "tax_number": STR},
    "fulfillments": [FULFILLMENT],
    "quote": {"price": PRICE, "breakup": [{"title": STR, "price": PRICE}]},
    "xinput": {
        "required": BOOL,
        "form": {"url": STR, "mime_type": STR},
        "form_response": {"status": STR, "submission_id": STR, "data": ANY},
    },
    "cancellation": {"reason_id": STR},
    "tags": TAGS,
}

CORE_PAYLOAD = {
    "intent": {
        "category": {"id": STR, "descriptor": DESCRIPTOR},
        "provider": {"id": STR, "descriptor": DESCRIPTOR},
        "item": ITEM,
        "fulfillment": FULFILLMENT,
        "tags": TAGS,
    },
    "catalog": {"descriptor": DESCRIPTOR, "providers": [PROVIDER]},
    "order": ORDER,
    "order_id": STR,
    "update_target": STR,
    "cancellation_reason_id": STR,
    "ratings": [{"id": STR, "rating_category": STR, "value": STR}],
    "rating_ack": BOOL,
    "support": {"ref_id": STR, "phone": STR, "email": STR, "url": STR},
    "tracking": {"url": STR, "status": STR},
    "error": {"code": STR, "message": STR},
    "tags": TAGS,
}


@dataclass(frozen=True)
class Segment:
    key: str
    each: bool = False

    def __str__(self) -> str:
        return self.key + ("[]" if self.each else "")


def parse_path(path: str) -> tuple[Segment, ...]:
    if not isinstance(path, str) or not path:
        raise UnknownFieldPath(f"empty field path {path!r}")
    return _parse(path)


@lru_cache(maxsize=4096)
def _parse(path: str) -> tuple[Segment, ...]:
    out = []
    for raw in path.split("."):
        each = raw.endswith("[]")
        key = raw[:-2] if each else raw
        if not key or "[" in key or "]" in key:
            raise UnknownFieldPath(f"bad segment {raw!r} in {path!r}")
        out.append(Segment(key, each))
    return tuple(out)


def format_path(segments: tuple[Segment, ...]) -> str:
    return ".".join(str(s) for s in segments)


def check_core_path(path: str, schema: Any = CORE_PAYLOAD) -> tuple[Segment, ...]:
    """Parse ``path`` and confirm it exists in the core payload model."""
    if schema is CORE_PAYLOAD and isinstance(path, str):
        return _check_core(path)
    return _check(path, schema)


@lru_cache(maxsize=4096)
def _check_core(path: str) -> tuple[Segment, ...]:
    return _check(path, CORE_PAYLOAD)


def _check(path: str, schema: Any) -> tuple[Segment, ...]:
    segments = parse_path(path)
    node = schema
    for seg in segments:
        if node == ANY:
            return segments
        if not isinstance(node, dict) or seg.key not in node:
            raise UnknownFieldPath(f"{path!r} is not part of the core payload model")
        node = node[seg.key]
        if seg.each:
            if not isinstance(node, list):
                raise UnknownFieldPath(f"{seg.key!r} in {path!r} is not a list")
            node = node[0]
        elif isinstance(node, list):
            raise UnknownFieldPath(f"{seg.key!r} in {path!r} is a list; write {seg.key}[]")
    return segments


def walk(doc: Any, segments: tuple[Segment, ...], prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield ``(concrete_path, value)`` for every place ``segments`` reaches.

    A missing or wrongly-typed step yields the concrete path reached so far
    with ``MISSING`` so callers can report where the data stopped. An empty
    list under ``[]`` also counts as missing.
    """
    if not segments:
        yield prefix, doc
        return
    seg, rest = segments[0], segments[1:]
    here = f"{prefix}.{seg.key}" if prefix else seg.key
    if not isinstance(doc, dict) or doc.get(seg.key) is None:
        yield format_path_tail(here, seg, rest), MISSING
        return
    value = doc[seg.key]
    if not seg.each:
        yield from walk(value, rest, here)
        return
    if not isinstance(value, list) or not value:
        yield format_path_tail(here, seg, rest), MISSING
        return
    for i, item in enumerate(value):
        elem = f"{here}[{i}]"
        if item is None:
            yield format_path_tail(elem, Segment(""), rest), MISSING
        else:
            yield from walk(item, rest, elem)


def format_path_tail(here: str, seg: Segment, rest: tuple[Segment, ...]) -> str:
    base = here + ("[]" if seg.each else "")
    return ".".join([base] + [str(s) for s in rest]) if rest else base


class _Missing:
    def __repr__(self) -> str:
        return "MISSING"


MISSING = _Missing()


def resolve(doc: Any, path: str) -> list[Any]:
    """All present values at ``path`` (lists under ``[]`` are expanded)."""
    return [v for _, v in walk(doc, parse_path(path)) if v is not MISSING]


def delete_path(doc: Any, segments: tuple[Segment, ...]) -> bool:
    """Remove the final key of ``segments`` wherever it occurs; in place."""
    if not isinstance(doc, dict) or not segments:
        return False
    seg, rest = segments[0], segments[1:]
    if seg.key not in doc:
        return False
    if not rest:
        del doc[seg.key]
        return True
    value = doc[seg.key]
    if seg.each and isinstance(value, list):
        hits = [delete_path(item, rest) for item in value]
        return any(hits)
    return delete_path(value, rest)


def set_path(doc: dict, segments: tuple[Segment, ...], value: Any) -> int:
    """Overwrite every existing occurrence of the path; returns the count set."""
    if not isinstance(doc, dict) or not segments:
        return 0
    seg, rest = segments[0], segments[1:]
    if seg.key not in doc:
        return 0
    if not rest:
        if seg.each and isinstance(doc[seg.key], list):
            doc[seg.key] = [value for _ in doc[seg.key]]
            return len(doc[seg.key])
        doc[seg.key] = value
        return 1
    sub = doc[seg.key]
    if seg.each and isinstance(sub, list):
        return sum(set_path(item, rest, value) for item in sub)
    return set_path(sub, rest, value)


def leaf_paths(schema: Any = CORE_PAYLOAD, prefix: str = "") -> list[str]:
    """Every leaf path of the core model (opaque nodes count as leaves)."""
    out: list[str] = []
    if isinstance(schema, dict):
        for key, sub in schema.items():
            here = f"{prefix}.{key}" if prefix else key
            if isinstance(sub, list):
                out += leaf_paths(sub[0], here + "[]")
            else:
                out += leaf_paths(sub, here)
    else:
        out.append(prefix)
    return out
