"""
Object storage: COS backends and the VICOS client
"""

from .cos import CosBackend, CosError, FilesystemCos, InMemoryCos, create_backend
from .vicos import ObjectRecord, VicosClient, VicosError, VicosSession

__all__ = [
    'CosBackend',
    'CosError',
    'FilesystemCos',
    'InMemoryCos',
    'ObjectRecord',
    'VicosClient',
    'VicosError',
    'VicosSession',
    'create_backend',
]
