"""Data brokering: MQTT 3.1.1 subset broker, client, and topic schema."""

from .broker import Broker, BrokerLimits
from .client import (
    AckTimeoutError,
    Client,
    ClientError,
    ConnectionLostError,
    ConnectRefusedError,
    SubscribeError,
)
from .packets import decode_packet, encode_packet
from .schema import Envelope, SchemaError
from .topics import InvalidFilterError, InvalidTopicError, topic_matches

__all__ = [
    "AckTimeoutError",
    "Broker",
    "BrokerLimits",
    "Client",
    "ClientError",
    "ConnectRefusedError",
    "ConnectionLostError",
    "Envelope",
    "InvalidFilterError",
    "InvalidTopicError",
    "SchemaError",
    "SubscribeError",
    "decode_packet",
    "encode_packet",
    "topic_matches",
]
