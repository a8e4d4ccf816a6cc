"""Protocol data model: actions, contexts, envelopes, lifecycle, tags, codec."""

from opennet.core.actions import CORE_ACTIONS, ActionRegistry, ActionSpec, pair_callback
from opennet.core.codec import (
    canonical_bytes,
    decode_envelope,
    encode_body,
    encode_envelope,
    load_document,
)
from opennet.core.lifecycle import (
    CANONICAL_PATH,
    FULFILLMENT_COMPLETE,
    TERMINAL,
    OrderLifecycle,
    State,
    order_transition,
)
from opennet.core.model import (
    UTC,
    Context,
    Envelope,
    SignatureHeader,
    Tag,
    new_context,
    seeded_ids,
)
from opennet.core.tags import read_tag, upsert_tag

__all__ = [
    "ActionRegistry",
    "ActionSpec",
    "CANONICAL_PATH",
    "CORE_ACTIONS",
    "Context",
    "Envelope",
    "FULFILLMENT_COMPLETE",
    "OrderLifecycle",
    "SignatureHeader",
    "State",
    "TERMINAL",
    "Tag",
    "UTC",
    "canonical_bytes",
    "decode_envelope",
    "encode_body",
    "encode_envelope",
    "load_document",
    "new_context",
    "order_transition",
    "pair_callback",
    "read_tag",
    "seeded_ids",
    "upsert_tag",
]
