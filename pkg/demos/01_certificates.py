"""
Keys, certificates and signatures
=================================

A tiny PKI: one certificate authority, one node it vouches for, and a
self-signed miner certificate of the kind the proof-of-work lottery draws.
"""

from __future__ import annotations

import numpy as np

from r2s import crypto

rng = np.random.default_rng(7)

# Seeded key generation is reproducible: the same 32-byte seed always gives
# the same key pair.
ca_keys = crypto.generate_keypair(bytes(32))
print("CA public key  ", ca_keys.public_key.hex())
assert crypto.generate_keypair(bytes(32)) == ca_keys

# The CA certifies itself, then issues a certificate for a node key.
ca_cert = crypto.make_self_signed_certificate(ca_keys, "root", rng)
node_keys = crypto.generate_keypair(rng.bytes(crypto.SEED_SIZE))
node_cert = crypto.issue_certificate(ca_keys, "root", node_keys.public_key, "node-1", rng)
print("node serial    ", node_cert.serial.hex())
print("issued by root?", crypto.verify_certificate(node_cert, ca_cert))

# A certificate from some other authority with the same name does not pass.
impostor = crypto.generate_keypair(rng.bytes(crypto.SEED_SIZE))
forged = crypto.issue_certificate(impostor, "root", node_keys.public_key, "node-1", rng)
print("forged passes? ", crypto.verify_certificate(forged, ca_cert))

# Signatures never raise on bad input; they just fail.
message = b"hello"
sig = crypto.sign(node_keys.private_key, message)
print("good signature ", crypto.verify(node_keys.public_key, message, sig))
print("wrong message  ", crypto.verify(node_keys.public_key, b"hullo", sig))

# Certificates serialize to a compact canonical byte string; the fingerprint
# is its SHA-256 and is what allowlists store.
print("fingerprint    ", crypto.certificate_fingerprint(node_cert).hex)
print(crypto.dump_certificate(node_cert))
