"""
vicos - Verifiable object storage over an untrusted server
Fork-linearizable access protocol, authenticated dictionary and object store client
"""

__version__ = "0.3.0"
