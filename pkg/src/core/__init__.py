"""
Core primitives: canonical encoding, signatures, Merkle trees and the authenticated dictionary
"""
