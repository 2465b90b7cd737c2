"""
Transport layer for VICOS
"""

from .channel import (Channel, ChannelClosedError, InProcessChannel, TcpChannel,
                      TcpListener, connect_tcp)

__all__ = [
    'Channel',
    'ChannelClosedError',
    'InProcessChannel',
    'TcpChannel',
    'TcpListener',
    'connect_tcp',
]
