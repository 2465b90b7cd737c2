"""
AIP - fork-linearizable access to an authenticated data structure
"""

from .chain import Genesis, Status, build_genesis, provision_keyring
from .client import AipClient, AlarmKind, ClientUsageError, FaultAlarm, RetryPolicy
from .messages import MessageCodec, MessageKind
from .server import AipServer, ProtocolViolation

__all__ = [
    'AipClient',
    'AipServer',
    'AlarmKind',
    'ClientUsageError',
    'FaultAlarm',
    'Genesis',
    'MessageCodec',
    'MessageKind',
    'ProtocolViolation',
    'RetryPolicy',
    'Status',
    'build_genesis',
    'provision_keyring',
]
