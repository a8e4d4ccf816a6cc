"""Domain adaptations: enumerations and required fields over the core payload.

An adaptation config is one canonical document::

    {"domain": "mobility", "version": "1.0.0",
     "required": {"search": ["intent.fulfillment.end.location.gps", ...]},
     "enumerations": {"intent.fulfillment.vehicle.category": ["CAB", ...]},
     "tag_namespaces": ["experimental"]}

Paths must exist in the core payload model; adaptations never extend it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

from opennet.core.actions import CORE_ACTIONS, ActionRegistry
from opennet.core.codec import canonical_bytes, load_document
from opennet.core.schema import MISSING, Segment, check_core_path, walk
from opennet.core.tags import iter_tag_lists
from opennet.errors import DomainMismatch, MalformedConfig, MalformedDocument, UnknownAction


class Kind(str, Enum):
    MISSING_REQUIRED = "MISSING_REQUIRED"
    VALUE_NOT_IN_ENUM = "VALUE_NOT_IN_ENUM"
    UNKNOWN_TAG_NAMESPACE = "UNKNOWN_TAG_NAMESPACE"


WARNING_KINDS = frozenset({Kind.UNKNOWN_TAG_NAMESPACE})


@dataclass(frozen=True, order=True)
class Violation:
    path: str
    kind: Kind
    detail: str = ""

    @property
    def blocking(self) -> bool:
        return self.kind not in WARNING_KINDS

    def __str__(self) -> str:
        return f"{self.kind.value} @ {self.path}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class DomainAdaptation:
    domain: str
    version: str = "0.0.0"
    enumerations: Mapping[str, frozenset] = field(default_factory=dict)
    required: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    tag_namespaces: frozenset[str] = frozenset()

    def to_doc(self) -> dict[str, Any]:
        return {
            "domain": self.domain,
            "enumerations": {p: sorted(v, key=repr) for p, v in sorted(self.enumerations.items())},
            "required": {a: list(paths) for a, paths in sorted(self.required.items()) if paths},
            "tag_namespaces": sorted(self.tag_namespaces),
            "version": self.version,
        }

    def encode(self) -> bytes:
        return canonical_bytes(self.to_doc())

    @property
    def major(self) -> int:
        return int(self.version.split(".")[0])


def _check_version(v: Any) -> str:
    parts = v.split(".") if isinstance(v, str) else []
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise MalformedConfig(f"version must be MAJOR.MINOR.PATCH, got {v!r}")
    return v


def load_adaptation(config: Union[bytes, str, Mapping[str, Any]], *,
                    actions: ActionRegistry = CORE_ACTIONS) -> DomainAdaptation:
    if isinstance(config, (bytes, str)):
        if not config.strip():
            raise MalformedConfig("empty config needs at least a domain")
        try:
            config = load_document(config)
        except MalformedDocument as exc:
            raise MalformedConfig(str(exc)) from None
    if not isinstance(config, Mapping):
        raise MalformedConfig("adaptation config must be an object")
    unknown = set(config) - {"domain", "version", "enumerations", "required", "tag_namespaces"}
    if unknown:
        raise MalformedConfig(f"unknown config keys {sorted(unknown)}")
    domain = config.get("domain")
    if not isinstance(domain, str) or not domain:
        raise MalformedConfig("domain must be a non-empty string")
    version = _check_version(config.get("version", "0.0.0"))

    enums_doc = config.get("enumerations", {})
    if not isinstance(enums_doc, Mapping):
        raise MalformedConfig("enumerations must map field paths to value lists")
    enumerations = {}
    for path, values in enums_doc.items():
        check_core_path(path)
        if not isinstance(values, list) or not values:
            raise MalformedConfig(f"enumeration for {path} must be a non-empty list")
        enumerations[path] = frozenset(values)

    req_doc = config.get("required", {})
    if not isinstance(req_doc, Mapping):
        raise MalformedConfig("required must map actions to path lists")
    required = {}
    for action, paths in req_doc.items():
        if action not in actions:
            raise MalformedConfig(f"required rules for unknown action {action!r}")
        if not isinstance(paths, list):
            raise MalformedConfig(f"required[{action}] must be a list")
        for p in paths:
            check_core_path(p)
        required[action] = tuple(dict.fromkeys(paths))

    ns = config.get("tag_namespaces", [])
    if not isinstance(ns, list) or not all(isinstance(x, str) for x in ns):
        raise MalformedConfig("tag_namespaces must be a list of strings")
    return DomainAdaptation(domain, version, enumerations, required, frozenset(ns))


def load_adaptation_file(path: Union[str, Path]) -> DomainAdaptation:
    return load_adaptation(Path(path).read_bytes())


def validate_payload(
    a: DomainAdaptation,
    action: str,
    payload: Any,
    *,
    actions: ActionRegistry = CORE_ACTIONS,
) -> list[Violation]:
    """All rule violations for ``payload`` sent as ``action``, sorted.

    Unknown tag namespaces are reported with non-blocking kind; use
    :func:`is_valid` to ask whether the payload satisfies the rules.
    """
    if action not in actions:
        raise UnknownAction(action)
    out: set[Violation] = set()
    for path in a.required.get(action, ()):
        for where, value in walk(payload, check_core_path(path)):
            if value is MISSING:
                out.add(Violation(where, Kind.MISSING_REQUIRED, f"required for {action}"))
    for path, allowed in a.enumerations.items():
        for where, value in walk(payload, check_core_path(path)):
            if value is not MISSING and not _in_enum(value, allowed):
                out.add(Violation(where, Kind.VALUE_NOT_IN_ENUM, f"{value!r}"))
    for where, tags in iter_tag_lists(payload):
        for i, tag in enumerate(tags):
            ns = tag.get("namespace") if isinstance(tag, dict) else None
            if ns not in a.tag_namespaces:
                out.add(Violation(f"{where}[{i}]", Kind.UNKNOWN_TAG_NAMESPACE, f"namespace {ns!r}"))
    return sorted(out, key=lambda v: (v.path, v.kind.value, v.detail))


def _in_enum(value: Any, allowed: frozenset) -> bool:
    # True == 1 in Python; booleans only match booleans
    return any(value == x and isinstance(value, bool) == isinstance(x, bool) for x in allowed)


def is_valid(violations: Iterable[Violation]) -> bool:
    return not any(v.blocking for v in violations)


@dataclass(frozen=True)
class Compatibility:
    compatible: bool
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.compatible


def _segments(path: str) -> tuple[Segment, ...]:
    return check_core_path(path)


def _implied_by(p: str, q: str) -> bool:
    """Does requiring ``q`` force ``p`` to be present?"""
    sp, sq = _segments(p), _segments(q)
    if len(sp) > len(sq):
        return False
    for i, seg in enumerate(sp):
        other = sq[i]
        if seg.key != other.key:
            return False
        last = i == len(sp) - 1
        if seg.each != other.each and not (last and not seg.each):
            return False
    return True


def check_compat(old: DomainAdaptation, new: DomainAdaptation) -> Compatibility:
    """Rule-subsumption check: may ``new`` reject anything ``old`` accepts?"""
    if old.domain != new.domain:
        raise DomainMismatch(f"{old.domain!r} vs {new.domain!r}")
    reasons = []
    for action in sorted(new.required):
        for p in new.required[action]:
            if not any(_implied_by(p, q) for q in old.required.get(action, ())):
                reasons.append(f"new required field {p} for {action}")
    for path in sorted(new.enumerations):
        allowed = new.enumerations[path]
        if path not in old.enumerations:
            reasons.append(f"new enumeration restricts {path}")
            continue
        removed = old.enumerations[path] - allowed
        if removed:
            reasons.append(f"enumeration {path} drops {sorted(removed, key=repr)}")
    for ns in sorted(old.tag_namespaces - new.tag_namespaces):
        reasons.append(f"tag namespace {ns!r} removed")
    return Compatibility(not reasons, tuple(reasons))


def check_version_bump(old: DomainAdaptation, new: DomainAdaptation) -> Compatibility:
    """Minor and patch bumps must be compatible; major bumps may break."""
    result = check_compat(old, new)
    if result.compatible or new.major > old.major:
        return Compatibility(True, result.reasons)
    return result
