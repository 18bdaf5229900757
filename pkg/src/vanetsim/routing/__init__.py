from .aodv import Aodv, AodvParams, AodvRouteEntry
from .common import (
    BROADCAST,
    IP_HEADER_BYTES,
    ControlIds,
    MalformedControl,
    Packet,
    RoutingProtocol,
    RoutingProtocolKind,
    data_packet,
)
from .dsr import Dsr, DsrParams, DsrRouteCache, DsrSourceRoute

__all__ = [
    "Aodv", "AodvParams", "AodvRouteEntry", "BROADCAST", "IP_HEADER_BYTES", "ControlIds",
    "Dsr", "DsrParams", "DsrRouteCache", "DsrSourceRoute", "MalformedControl", "Packet",
    "RoutingProtocol", "RoutingProtocolKind", "data_packet",
]
