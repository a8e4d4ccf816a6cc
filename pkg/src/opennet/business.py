"""Reference business logic for simulated and certified nodes.

:class:`ReferenceSeller` is a stateless BPP business hook: every callback
payload is derived from the request alone. :class:`ReferenceBuyer` builds
the next BAP request from what the previous callback returned.
"""

from __future__ import annotations

import copy
import hashlib
from typing import Any, Optional

from opennet.core.model import Context

DEFAULT_INTENTS: dict[str, dict[str, Any]] = {
    "mobility": {
        "intent": {
            "fulfillment": {
                "start": {"location": {"gps": "12.9716,77.5946", "area_code": "560001"}},
                "end": {"location": {"gps": "13.1986,77.7066", "area_code": "560300"}},
                "vehicle": {"category": "CAB"},
            },
            "item": {"quantity": {"count": 2}},
        }
    },
    "retail": {
        "intent": {
            "category": {"id": "grocery"},
            "item": {"descriptor": {"name": "basmati rice"}},
            "fulfillment": {"type": "Delivery", "end": {"location": {"gps": "28.6139,77.2090", "area_code": "110001"}}},
        }
    },
    "energy": {
        "intent": {
            "category": {"id": "ev-charging"},
            "item": {"descriptor": {"code": "CCS2"}},
            "fulfillment": {"start": {"location": {"gps": "19.0760,72.8777", "area_code": "400001"}}},
        }
    },
    "financial-services": {
        "intent": {
            "category": {"id": "store-credit"},
            "item": {"descriptor": {"name": "working capital line"}},
        }
    },
}

DEFAULT_CATALOGS: dict[str, dict[str, Any]] = {
    "mobility": {
        "items": [
            {"id": "ride-cab", "descriptor": {"name": "City cab", "code": "RIDE"},
             "price": {"value": "420.00", "currency": "INR"}, "fulfillment_ids": ["f1"]},
        ],
        "fulfillments": [{"id": "f1", "type": "ride", "vehicle": {"category": "CAB"}}],
    },
    "retail": {
        "items": [
            {"id": "rice-5kg", "descriptor": {"name": "Basmati rice 5kg", "code": "SKU-RICE-5"},
             "category_ids": ["grocery"], "price": {"value": "650.00", "currency": "INR"}},
        ],
        "fulfillments": [{"id": "f1", "type": "Delivery"}],
    },
    "energy": {
        "items": [
            {"id": "ccs2-slot", "descriptor": {"name": "60 kW DC slot", "code": "CCS2"},
             "price": {"value": "18.00", "currency": "INR"}},
        ],
        "fulfillments": [{"id": "f1", "type": "charging"}],
    },
    "financial-services": {
        "items": [
            {"id": "credit-line", "descriptor": {"name": "Store credit line", "code": "STORE_CREDIT"},
             "price": {"value": "0.00", "currency": "INR"}},
        ],
        "fulfillments": [{"id": "f1", "type": "loan-disbursal"}],
        "form_url": "https://forms.example.org/consent/store-credit",
    },
}

SUMMARY_3M = {
    "period_months": 3,
    "orders_accepted": 412,
    "orders_delivered": 398,
    "orders_paid": 391,
    "order_value": 184250.5,
}


def order_id_for(transaction_id: str) -> str:
    return "ord-" + hashlib.sha256(transaction_id.encode()).hexdigest()[:12]


def _money(value: float, currency: str) -> dict[str, str]:
    return {"value": f"{value:.2f}", "currency": currency}


class ReferenceSeller:
    def __init__(self, provider_id: str, domain: str, catalog: Optional[dict] = None, *, name: str = "") -> None:
        self.provider_id = provider_id
        self.domain = domain
        self.catalog = copy.deepcopy(catalog if catalog is not None else DEFAULT_CATALOGS[domain])
        self.name = name or provider_id

    def __call__(self, action: str, payload: dict, ctx: Context) -> Optional[dict]:
        method = getattr(self, "on_" + action.replace("-", "_"), None)
        return method(payload, ctx) if method else {}

    def _order_from(self, payload: dict) -> dict:
        order = copy.deepcopy(payload.get("order") or {})
        order.setdefault("provider", {"id": self.provider_id})
        return order

    def on_search(self, payload: dict, ctx: Context) -> dict:
        provider = {
            "id": self.provider_id,
            "descriptor": {"name": self.name},
            "items": copy.deepcopy(self.catalog["items"]),
            "fulfillments": copy.deepcopy(self.catalog.get("fulfillments", [])),
        }
        return {"catalog": {"descriptor": {"name": self.name}, "providers": [provider]}}

    def _priced(self, order: dict) -> dict:
        by_id = {i["id"]: i for i in self.catalog["items"]}
        total, currency = 0.0, "INR"
        items = []
        for it in order.get("items") or []:
            ref = by_id.get(it.get("id"))
            qty = (it.get("quantity") or {}).get("count", 1)
            entry = {"id": it.get("id"), "quantity": {"count": qty}}
            if ref is not None:
                currency = ref["price"]["currency"]
                total += float(ref["price"]["value"]) * (qty if isinstance(qty, (int, float)) else 1)
                entry["price"] = copy.deepcopy(ref["price"])
            items.append(entry)
        order["items"] = items
        order["quote"] = {"price": _money(total, currency)}
        if not order.get("fulfillments") and self.catalog.get("fulfillments"):
            order["fulfillments"] = copy.deepcopy(self.catalog["fulfillments"][:1])
        return order

    def on_select(self, payload: dict, ctx: Context) -> dict:
        return {"order": self._priced(self._order_from(payload))}

    def on_init(self, payload: dict, ctx: Context) -> dict:
        order = self._priced(self._order_from(payload))
        if self.catalog.get("form_url"):
            order["xinput"] = {"required": True, "form": {"url": self.catalog["form_url"], "mime_type": "text/html"}}
        return {"order": order}

    def on_confirm(self, payload: dict, ctx: Context) -> dict:
        order = self._priced(self._order_from(payload))
        order.pop("xinput", None)
        order["id"] = order_id_for(ctx.transaction_id)
        order["state"] = "ACTIVE"
        for f in order.get("fulfillments", []):
            f["state"] = {"descriptor": {"code": "assigned"}}
        return {"order": order}

    def _order_ref(self, payload: dict, ctx: Context) -> str:
        return payload.get("order_id") or (payload.get("order") or {}).get("id") or order_id_for(ctx.transaction_id)

    def on_status(self, payload: dict, ctx: Context) -> dict:
        fulfillments = [{"id": f["id"], "state": {"descriptor": {"code": "complete"}}}
                        for f in self.catalog.get("fulfillments", [])] or [
                           {"id": "f1", "state": {"descriptor": {"code": "complete"}}}]
        return {"order": {"id": self._order_ref(payload, ctx), "state": "COMPLETED", "fulfillments": fulfillments}}

    def on_track(self, payload: dict, ctx: Context) -> dict:
        ref = self._order_ref(payload, ctx)
        return {"tracking": {"url": f"https://track.example.org/{self.provider_id}/{ref}", "status": "active"}}

    def on_update(self, payload: dict, ctx: Context) -> dict:
        order = self._order_from(payload)
        order["id"] = self._order_ref(payload, ctx)
        order["state"] = "ACTIVE"
        return {"order": order}

    def on_cancel(self, payload: dict, ctx: Context) -> dict:
        reason = payload.get("cancellation_reason_id", "000")
        return {"order": {"id": self._order_ref(payload, ctx), "state": "CANCELLED",
                          "cancellation": {"reason_id": reason}}}

    def on_rating(self, payload: dict, ctx: Context) -> dict:
        return {"rating_ack": True}

    def on_support(self, payload: dict, ctx: Context) -> dict:
        return {"support": {"ref_id": self._order_ref(payload, ctx), "phone": "+91-80-0000-0000",
                            "email": f"support@{self.provider_id}.example.org"}}


class ScraperSeller:
    """Harvests search intents and never answers or fulfils."""

    def __init__(self) -> None:
        self.harvested = 0

    def __call__(self, action: str, payload: dict, ctx: Context) -> Optional[dict]:
        if action == "search":
            self.harvested += 1
        return None


class ReferenceBuyer:
    """Builds each request payload from the transaction so far."""

    def __init__(self, *, billing: Optional[dict] = None, summary: Optional[dict] = None) -> None:
        self.billing = billing or {"name": "A. Buyer", "phone": "+91-99999-00000", "email": "buyer@example.org"}
        self.summary = summary or SUMMARY_3M

    def next_payload(self, action: str, *, intent: dict, offer: Optional[dict] = None,
                     last: Optional[dict] = None, form_link: Optional[str] = None) -> dict:
        last = last or {}
        order = copy.deepcopy(last.get("order") or {})
        order_id = order.get("id", "")
        if action == "search":
            return copy.deepcopy(intent)
        if action == "select":
            provider = (offer or {}).get("catalog", {}).get("providers", [{}])[0]
            item = provider.get("items", [{}])[0]
            qty = intent.get("intent", {}).get("item", {}).get("quantity", {}).get("count", 1)
            sel = {"provider": {"id": provider.get("id", "")}, "items": [{"id": item.get("id", ""), "quantity": {"count": qty}}]}
            if provider.get("fulfillments"):
                sel["fulfillments"] = copy.deepcopy(provider["fulfillments"][:1])
            return {"order": sel}
        if action == "init":
            order.pop("quote", None)
            order["billing"] = dict(self.billing)
            return {"order": order}
        if action == "confirm":
            order["billing"] = dict(self.billing)
            if form_link:
                order["xinput"] = {"form_response": {"status": "SUBMITTED", "submission_id": "sub-" + order_id_for(form_link)[4:],
                                                     "data": dict(self.summary)}}
            else:
                order.pop("xinput", None)
            return {"order": order}
        if action in ("status", "track"):
            return {"order_id": order_id}
        if action == "update":
            return {"update_target": "order.billing", "order": {"id": order_id, "billing": dict(self.billing)}}
        if action == "cancel":
            return {"order_id": order_id, "cancellation_reason_id": "001"}
        if action == "rating":
            return {"ratings": [{"id": order_id, "rating_category": "Order", "value": "5"}]}
        if action == "support":
            return {"support": {"ref_id": order_id}}
        return {"order_id": order_id}
