import numpy as np
import pytest

from r2s import crypto
from r2s.chain import Chain
from r2s.consensus import ConsensusMode, Identity


def seed_bytes(n: int) -> bytes:
    return bytes([n]) * 32


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ca(rng):
    keys = crypto.generate_keypair(seed_bytes(1))
    cert = crypto.make_self_signed_certificate(keys, "root", rng)
    return keys, cert


@pytest.fixture
def identity(ca, rng):
    ca_keys, _ = ca
    keys = crypto.generate_keypair(seed_bytes(2))
    cert = crypto.issue_certificate(ca_keys, "root", keys.public_key, "node-1", rng)
    return Identity(keys, cert)


@pytest.fixture
def second_identity(ca, rng):
    ca_keys, _ = ca
    keys = crypto.generate_keypair(seed_bytes(3))
    cert = crypto.issue_certificate(ca_keys, "root", keys.public_key, "node-2", rng)
    return Identity(keys, cert)


@pytest.fixture
def mixed_chain(ca, identity, second_identity, rng):
    """Build a chain whose modes cycle external, PoW d=4, external, PoW d=16, ..."""

    def build(length: int = 5) -> Chain:
        modes = [
            ConsensusMode.external(identity),
            ConsensusMode.pow(4),
            ConsensusMode.external(second_identity),
            ConsensusMode.pow(16),
        ]
        chain = Chain((), [ca[1]])
        for i in range(length):
            mode = modes[i % len(modes)]
            opts = {"rng": rng} if mode.global_difficulty else {}
            chain.seal_and_append(mode, f"payload {i}".encode(), **opts)
        return chain

    return build


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item.call_report = report
