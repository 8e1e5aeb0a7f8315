"""Handoff control messages and their one-line trace format.

Trace lines look like::

    t=27345000 MN.RADIO2->* REQUEST-ROUTE {requested_bandwidth=2000,radio2_mac=02:00:00:00:77:02,floating_ip=172.16.0.10}

Field order is the declaration order below; a broadcast destination renders as ``*``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from ipaddress import IPv4Address
from typing import ClassVar, Union


@dataclass(frozen=True, slots=True)
class RequestRoute:
    VARIANT: ClassVar[str] = "REQUEST-ROUTE"
    requested_bandwidth: int
    radio2_mac: str
    floating_ip: IPv4Address


@dataclass(frozen=True, slots=True)
class OfferRoute:
    VARIANT: ClassVar[str] = "OFFER-ROUTE"
    available_bandwidth: int
    ap_ip: IPv4Address
    ap_mac: str


@dataclass(frozen=True, slots=True)
class SwitchRouteMnToB:
    VARIANT: ClassVar[str] = "SWITCH-ROUTE-MN-TO-B"
    floating_ip: IPv4Address


@dataclass(frozen=True, slots=True)
class SwitchRouteBToG:
    VARIANT: ClassVar[str] = "SWITCH-ROUTE-B-TO-G"
    floating_ip: IPv4Address
    ap_hostname: str


@dataclass(frozen=True, slots=True)
class SwitchRouteOk:
    VARIANT: ClassVar[str] = "SWITCH-ROUTE-OK"
    floating_ip: IPv4Address
    ap_hostname: str


HandoffMessage = Union[RequestRoute, OfferRoute, SwitchRouteMnToB, SwitchRouteBToG, SwitchRouteOk]

MESSAGE_TYPES: dict[str, type] = {
    cls.VARIANT: cls
    for cls in (RequestRoute, OfferRoute, SwitchRouteMnToB, SwitchRouteBToG, SwitchRouteOk)
}

BROADCAST = "*"

_LINE = re.compile(r"^t=(\d+) (\S+)->(\S+) (\S+) \{(.*)\}$")


def field_names(message: HandoffMessage | type) -> tuple[str, ...]:
    return tuple(f.name for f in fields(message))


def format_fields(message: HandoffMessage) -> str:
    return ",".join(f"{f.name}={getattr(message, f.name)}" for f in fields(message))


def format_trace_line(t: int, src: str, dst: str, message: HandoffMessage) -> str:
    return f"t={t} {src}->{dst} {message.VARIANT} {{{format_fields(message)}}}"


def parse_trace_line(line: str) -> tuple[int, str, str, str, dict[str, str]]:
    """Split a trace line into ``(t, src, dst, variant, fields)``. Values stay strings."""
    m = _LINE.match(line.strip())
    if not m:
        raise ValueError(f"not a trace line: {line!r}")
    t, src, dst, variant, body = m.groups()
    values: dict[str, str] = {}
    if body:
        for item in body.split(","):
            key, _, value = item.partition("=")
            values[key] = value
    return int(t), src, dst, variant, values


def decode_fields(variant: str, values: dict[str, str]) -> HandoffMessage:
    """Rebuild a message from parsed trace fields (exact field set required)."""
    cls = MESSAGE_TYPES.get(variant)
    if cls is None:
        raise ValueError(f"unknown message variant '{variant}'")
    expected = field_names(cls)
    if tuple(values) != expected:
        raise ValueError(f"{variant} fields {tuple(values)} do not match {expected}")
    kwargs: dict[str, object] = {}
    for f in fields(cls):
        raw = values[f.name]
        if f.name.endswith("_ip"):
            kwargs[f.name] = IPv4Address(raw)
        elif f.name.endswith("bandwidth"):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)
