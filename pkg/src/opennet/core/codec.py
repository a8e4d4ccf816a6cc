"""Canonical wire encoding.

Every document on the wire (envelopes, registry records, policies, configs,
logs) is UTF-8 JSON with lexicographically sorted keys, no insignificant
whitespace and non-ASCII characters emitted verbatim. Absent optional
fields are omitted rather than written as ``null``. Envelopes look like::

    {"context":{...},"message":{...},"signature":{...}}

and the signed body is the same document without ``signature``.
"""

from __future__ import annotations

import base64
import json
from typing import Any

from opennet.core.actions import CORE_ACTIONS, ActionRegistry
from opennet.core.model import (
    Context,
    Envelope,
    SignatureHeader,
    format_timestamp,
    parse_timestamp,
)
from opennet.errors import MalformedDocument, MissingContextField, UnknownAction

_REQUIRED_CONTEXT = (
    "action",
    "bap_id",
    "bap_uri",
    "core_version",
    "domain",
    "message_id",
    "timestamp",
    "transaction_id",
    "ttl",
)
_OPTIONAL_CONTEXT = ("bpp_id", "bpp_uri")
_SIGNATURE_FIELDS = ("algorithm", "created", "digest", "expires", "key_id", "signature", "subscriber_id")


def canonical_bytes(doc: Any) -> bytes:
    try:
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(f"not encodable: {exc}") from None
    return text.encode("utf-8")


def _reject_constant(name: str) -> Any:
    raise MalformedDocument(f"non-finite number {name}")


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    for key, value in pairs:
        if key in doc:
            raise MalformedDocument(f"duplicate key {key!r}")
        doc[key] = value
    return doc


def load_document(data: bytes | str) -> Any:
    """Parse one canonical-encoding document (strict JSON)."""
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        return json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except MalformedDocument:
        raise
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedDocument(f"not a well-formed document: {exc}") from None


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: Any) -> bytes:
    if not isinstance(text, str):
        raise MalformedDocument("expected base64 string")
    try:
        return base64.b64decode(text, validate=True)
    except ValueError:
        raise MalformedDocument("invalid base64") from None


def context_to_doc(ctx: Context) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "action": ctx.action,
        "bap_id": ctx.bap_id,
        "bap_uri": ctx.bap_uri,
        "core_version": ctx.core_version,
        "domain": ctx.domain,
        "message_id": ctx.message_id,
        "timestamp": format_timestamp(ctx.timestamp),
        "transaction_id": ctx.transaction_id,
        "ttl": ctx.ttl,
    }
    if ctx.bpp_id is not None:
        doc["bpp_id"] = ctx.bpp_id
    if ctx.bpp_uri is not None:
        doc["bpp_uri"] = ctx.bpp_uri
    return doc


def context_from_doc(doc: Any, actions: ActionRegistry = CORE_ACTIONS) -> Context:
    if not isinstance(doc, dict):
        raise MalformedDocument("context must be an object")
    for name in _REQUIRED_CONTEXT:
        if name not in doc:
            raise MissingContextField(f"context.{name} missing")
    unknown = set(doc) - set(_REQUIRED_CONTEXT) - set(_OPTIONAL_CONTEXT)
    if unknown:
        raise MalformedDocument(f"unexpected context fields {sorted(unknown)}")
    for name in _REQUIRED_CONTEXT + _OPTIONAL_CONTEXT:
        if name == "ttl" or name not in doc:
            continue
        if not isinstance(doc[name], str) or not doc[name]:
            raise MalformedDocument(f"context.{name} must be a non-empty string")
    ttl = doc["ttl"]
    if isinstance(ttl, bool) or not isinstance(ttl, int) or ttl <= 0:
        raise MalformedDocument("context.ttl must be a positive integer")
    if doc["action"] not in actions:
        raise UnknownAction(doc["action"])
    return Context(
        domain=doc["domain"],
        action=doc["action"],
        core_version=doc["core_version"],
        bap_id=doc["bap_id"],
        bap_uri=doc["bap_uri"],
        bpp_id=doc.get("bpp_id"),
        bpp_uri=doc.get("bpp_uri"),
        transaction_id=doc["transaction_id"],
        message_id=doc["message_id"],
        timestamp=parse_timestamp(doc["timestamp"]),
        ttl=ttl,
    )


def signature_to_doc(h: SignatureHeader) -> dict[str, Any]:
    return {
        "algorithm": h.algorithm,
        "created": format_timestamp(h.created),
        "digest": b64(h.digest),
        "expires": format_timestamp(h.expires),
        "key_id": h.key_id,
        "signature": b64(h.signature),
        "subscriber_id": h.subscriber_id,
    }


def signature_from_doc(doc: Any) -> SignatureHeader:
    if not isinstance(doc, dict) or set(doc) != set(_SIGNATURE_FIELDS):
        raise MalformedDocument("signature header must carry exactly " + ", ".join(_SIGNATURE_FIELDS))
    for name in ("algorithm", "key_id", "subscriber_id"):
        if not isinstance(doc[name], str):
            raise MalformedDocument(f"signature.{name} must be a string")
    return SignatureHeader(
        subscriber_id=doc["subscriber_id"],
        key_id=doc["key_id"],
        algorithm=doc["algorithm"],
        created=parse_timestamp(doc["created"]),
        expires=parse_timestamp(doc["expires"]),
        digest=unb64(doc["digest"]),
        signature=unb64(doc["signature"]),
    )


def body_doc(e: Envelope) -> dict[str, Any]:
    return {"context": context_to_doc(e.context), "message": e.payload}


def envelope_to_doc(e: Envelope) -> dict[str, Any]:
    doc = body_doc(e)
    if e.signature is not None:
        doc["signature"] = signature_to_doc(e.signature)
    return doc


def encode_body(e: Envelope) -> bytes:
    """Canonical bytes of the signed portion (context + message)."""
    return canonical_bytes(body_doc(e))


def encode_envelope(e: Envelope) -> bytes:
    return canonical_bytes(envelope_to_doc(e))


def envelope_from_doc(doc: Any, actions: ActionRegistry = CORE_ACTIONS) -> Envelope:
    if not isinstance(doc, dict):
        raise MalformedDocument("envelope must be an object")
    if "context" not in doc or "message" not in doc:
        raise MalformedDocument("envelope needs 'context' and 'message'")
    extra = set(doc) - {"context", "message", "signature"}
    if extra:
        raise MalformedDocument(f"unexpected envelope fields {sorted(extra)}")
    if not isinstance(doc["message"], dict):
        raise MalformedDocument("message must be an object")
    signature = signature_from_doc(doc["signature"]) if "signature" in doc else None
    return Envelope(context_from_doc(doc["context"], actions), doc["message"], signature)


def decode_envelope(
    data: bytes, actions: ActionRegistry = CORE_ACTIONS, *, canonical: bool = False
) -> Envelope:
    """Decode wire bytes.

    With ``canonical=True`` the bytes must already be in canonical form;
    receivers use this so that no two distinct byte strings decode to the
    same signed document.
    """
    env = envelope_from_doc(load_document(data), actions)
    if canonical and encode_envelope(env) != bytes(data):
        raise MalformedDocument("envelope is not canonically encoded")
    return env
