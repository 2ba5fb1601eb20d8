"""Command-line interface: ``r2s <subcommand> ...``.

Exit codes: 0 ok, 1 usage or identity error, 2 verification rejection,
3 I/O or parse error. Machine-readable output goes to stdout; failures print
``error: <reason-token>: <detail>`` on stderr.
"""
from __future__ import annotations

import argparse
import fcntl
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from r2s import crypto
from r2s.chain import (
    Allowlist,
    BlockRejected,
    Chain,
    ChainFormatError,
    attest_report,
    init_chain,
    load_chain,
    verify_chain,
)
from r2s.consensus import (
    ConsensusError,
    ConsensusMode,
    Identity,
    IterationCapExceeded,
    RandomLeader,
    RoundRobin,
    SingleNode,
    seal_block,
)
from r2s.sim import (
    NodeProfile,
    nodes_from_rates,
    run_pow_race_analytic,
    run_pow_race_real,
    run_schedule,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_REJECTED = 2
EXIT_IO = 3


class CliError(Exception):
    def __init__(self, code: int, token: str, detail: str = ""):
        super().__init__(detail)
        self.code = code
        self.token = token
        self.detail = detail


def _rng(args):
    return None if args.seed is None else np.random.default_rng(args.seed)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_IO, "io-error", str(exc)) from None


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_USAGE, "unwritable-path", str(exc)) from None


def _load_keys(path) -> crypto.KeyPair:
    try:
        return crypto.load_private_key(_read_text(path))
    except crypto.CryptoError as exc:
        raise CliError(EXIT_USAGE, "bad-key-file", f"{path}: {exc}") from None


def _load_cert(path) -> crypto.Certificate:
    try:
        return crypto.load_certificate(_read_text(path))
    except crypto.CryptoError as exc:
        raise CliError(EXIT_USAGE, "bad-cert-file", f"{path}: {exc}") from None


def _emit(obj, fmt: str) -> None:
    if fmt == "text":
        for k, v in obj.items():
            print(f"{k}: {v}")
    else:
        print(json.dumps(obj))


def _mode(args) -> ConsensusMode:
    if args.external:
        if not (args.key and args.cert):
            raise CliError(EXIT_USAGE, "usage", "--external needs --key and --cert")
        keys, cert = _load_keys(args.key), _load_cert(args.cert)
        if cert.is_self_issued:
            raise CliError(EXIT_USAGE, "untrusted-certificate", "external mode needs a CA-signed certificate")
        if cert.public_key != keys.public_key:
            raise CliError(EXIT_USAGE, "identity-mismatch", "certificate does not match the key")
        return ConsensusMode.external(Identity(keys, cert))
    if args.difficulty is None or args.difficulty < 1:
        raise CliError(EXIT_USAGE, "usage", "choose --difficulty N (N >= 1) or --external")
    return ConsensusMode.pow(args.difficulty)


def _payload(args, default: bytes | None = None) -> bytes:
    if args.payload is not None:
        return args.payload.encode("utf-8")
    if args.payload_file and args.payload_file != "-":
        try:
            return Path(args.payload_file).read_bytes()
        except OSError as exc:
            raise CliError(EXIT_IO, "io-error", str(exc)) from None
    if default is not None and not args.payload_file:
        return default
    return sys.stdin.buffer.read()


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise CliError(EXIT_USAGE, "usage", f"--{name.replace('_', '-')} is required")


def _load(args) -> Chain:
    _require(args, "chain", "manifest")
    try:
        return load_chain(args.chain, args.manifest)
    except ChainFormatError as exc:
        raise CliError(EXIT_IO, "malformed", str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, "io-error", str(exc)) from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    seed = None
    if args.seed_hex is not None:
        try:
            seed = bytes.fromhex(args.seed_hex)
        except ValueError:
            raise CliError(EXIT_USAGE, "usage", "--seed-hex must be hex") from None
    try:
        keys = crypto.generate_keypair(seed)
    except crypto.CryptoError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    _write_text(args.out, crypto.dump_private_key(keys))
    _emit({"public_key": keys.public_key.hex(), "path": str(args.out)}, args.format)
    return EXIT_OK


def cmd_ca_init(args) -> int:
    keys = _load_keys(args.key)
    cert = crypto.make_self_signed_certificate(keys, args.name, _rng(args))
    _write_text(args.out, crypto.dump_certificate(cert))
    _emit({"subject": cert.subject, "fingerprint": crypto.certificate_fingerprint(cert).hex}, args.format)
    return EXIT_OK


def cmd_cert_issue(args) -> int:
    ca_keys = _load_keys(args.ca_key)
    ca_cert = _load_cert(args.ca_cert)
    if ca_cert.public_key != ca_keys.public_key:
        raise CliError(EXIT_USAGE, "identity-mismatch", "CA certificate does not match the CA key")
    subject_keys = _load_keys(args.subject_key)
    try:
        cert = crypto.issue_certificate(
            ca_keys, ca_cert.subject, subject_keys.public_key, args.subject, _rng(args)
        )
    except crypto.CryptoError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    _write_text(args.out, crypto.dump_certificate(cert))
    _emit(
        {
            "subject": cert.subject,
            "issuer": cert.issuer,
            "fingerprint": crypto.certificate_fingerprint(cert).hex,
        },
        args.format,
    )
    return EXIT_OK


def cmd_chain_init(args) -> int:
    _require(args, "chain", "manifest")
    anchors = [_load_cert(p) for p in args.trust or ()]
    allowlist = None
    if args.allow is not None:
        allowlist = Allowlist.of(_load_cert(p) for p in args.allow)
    mode = _mode(args)
    try:
        chain = init_chain(
            anchors, allowlist, _payload(args, b"genesis"), mode, subject=args.subject, **_pow_options(args, mode)
        )
    except BlockRejected as exc:
        raise CliError(EXIT_REJECTED, str(exc.reason), "genesis block does not verify") from None
    except IterationCapExceeded as exc:
        raise CliError(EXIT_USAGE, "iteration-cap", str(exc)) from None
    try:
        chain.save(args.chain, args.manifest)
    except OSError as exc:
        raise CliError(EXIT_IO, "io-error", str(exc)) from None
    tip = chain.tip
    _emit({"block_number": tip.block_number, "block_hash": tip.hash().hex}, args.format)
    return EXIT_OK


def _pow_options(args, mode: ConsensusMode) -> dict:
    if mode.global_difficulty == 0:
        return {}
    return {"rng": _rng(args), "iteration_cap": args.iteration_cap}


@contextmanager
def _locked(path):
    with open(path, "r+b") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            yield fh
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def _commit(path, original: bytes, block, chain: Chain) -> None:
    """Append ``block`` as one line if the file still holds ``original``."""
    with _locked(path) as fh:
        current = fh.read()
        if current != original:
            raise CliError(EXIT_REJECTED, "stale-chain", "chain file changed while sealing; nothing written")
        try:
            chain.append(block)
        except BlockRejected as exc:
            raise CliError(EXIT_REJECTED, str(exc.reason), str(exc)) from None
        fh.seek(0, os.SEEK_END)
        fh.write((block.to_json() + "\n").encode("utf-8"))
        fh.flush()
        os.fsync(fh.fileno())


def cmd_append(args) -> int:
    _require(args, "chain", "manifest")
    try:
        original = Path(args.chain).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, "io-error", str(exc)) from None
    chain = _load(args)
    mode = _mode(args)
    payload = _payload(args)
    number, prev = chain.next_link()
    try:
        outcome = seal_block(mode, number, prev, payload, subject=args.subject, **_pow_options(args, mode))
    except ConsensusError as exc:
        raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    except IterationCapExceeded as exc:
        raise CliError(EXIT_USAGE, "iteration-cap", str(exc)) from None
    _commit(args.chain, original, outcome.block, chain)
    out = {"block_number": number, "block_hash": outcome.block.hash().hex}
    if mode.global_difficulty > 0:
        out["iterations"] = outcome.iterations
    _emit(out, args.format)
    return EXIT_OK


def cmd_verify(args) -> int:
    chain = _load(args)
    verdict = verify_chain(chain)
    if not verdict:
        print(json.dumps({"result": "reject", "index": verdict.index, "reason": str(verdict.reason)}))
        raise CliError(EXIT_REJECTED, str(verdict.reason), f"block {verdict.index}")
    _emit({"result": "accept", "length": len(chain), "tip": chain.tip.hash().hex if len(chain) else None}, args.format)
    return EXIT_OK


def cmd_attest(args) -> int:
    chain = _load(args)
    try:
        report = attest_report(chain, args.index)
    except IndexError as exc:
        raise CliError(EXIT_USAGE, "index-out-of-range", str(exc)) from None
    _emit(report.as_dict(), args.format)
    return EXIT_OK


def _parse_rates(text: str) -> list[float]:
    try:
        rates = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(EXIT_USAGE, "invalid-rates", text) from None
    if not rates or any(not r > 0 for r in rates):
        raise CliError(EXIT_USAGE, "invalid-rates", text)
    return rates


def cmd_simulate(args) -> int:
    if args.kind in ("pow-analytic", "pow-real"):
        if args.difficulty is None or args.difficulty < 1:
            raise CliError(EXIT_USAGE, "invalid-difficulty", "--difficulty must be >= 1")
        nodes = nodes_from_rates(_parse_rates(args.rates))
        if args.kind == "pow-analytic":
            report = run_pow_race_analytic(nodes, args.difficulty, args.blocks, args.seed)
        else:
            report = run_pow_race_real(nodes, args.difficulty, args.blocks, args.seed, lottery=args.lottery)
    else:
        if args.round_robin is not None:
            scheduler = RoundRobin(args.round_robin)
        elif args.random_leader is not None:
            scheduler = RandomLeader(
                args.random_leader,
                (args.election_min, args.election_max),
                args.network_mean,
                seed=args.seed,
            )
        else:
            scheduler = SingleNode()
        nodes = [NodeProfile(f"node-{i}") for i in range(scheduler.n_nodes)]
        report = run_schedule(scheduler, args.blocks, nodes, seed=args.seed)

    fmt = args.format
    text = report.to_csv() if fmt == "csv" else report.to_text() if fmt == "text" else report.to_json() + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags with suppressed defaults so a value
    # given before the subcommand name is not overwritten.
    p = argparse.ArgumentParser(add_help=False)
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--chain", help="chain file (newline-delimited JSON)", **kw)
    p.add_argument("--manifest", help="manifest JSON with trust anchors and allowlist", **kw)
    p.add_argument("--seed", type=int, help="seed for reproducible randomness", **kw)
    p.add_argument("--format", choices=("json", "csv", "text"), **(kw or {"default": "json"}))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)

    mode = argparse.ArgumentParser(add_help=False)
    group = mode.add_mutually_exclusive_group()
    group.add_argument("--difficulty", type=int, help="proof-of-work difficulty (> 0)")
    group.add_argument("--external", action="store_true", help="external consensus, sign with --key/--cert")
    mode.add_argument("--key", help="private key file for --external")
    mode.add_argument("--cert", help="CA-signed certificate file for --external")
    mode.add_argument("--subject", default="miner", help="subject name for PoW certificates")
    mode.add_argument("--iteration-cap", type=int, default=None)
    mode.add_argument("--payload-file", help="read payload from file ('-' for stdin)")
    mode.add_argument("payload", nargs="?", help="payload text (default: read stdin)")

    parser = argparse.ArgumentParser(
        prog="r2s", description="signature-attested chain tool", parents=[_global_flags(suppress=False)]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[common], help="create an Ed25519 private key file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed-hex", help="32-byte seed as hex, for reproducible keys")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("ca-init", parents=[common], help="write a self-signed CA certificate")
    p.add_argument("--key", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ca_init)

    p = sub.add_parser("cert-issue", parents=[common], help="issue a CA-signed node certificate")
    p.add_argument("--ca-key", required=True)
    p.add_argument("--ca-cert", required=True)
    p.add_argument("--subject-key", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cert_issue)

    p = sub.add_parser("chain-init", parents=[common, mode], help="create a chain with a sealed genesis block")
    p.add_argument("--trust", action="append", help="trust anchor certificate file (repeatable)")
    p.add_argument("--allow", action="append", help="allowlisted certificate file (repeatable)")
    p.set_defaults(func=cmd_chain_init)

    p = sub.add_parser("append", parents=[common, mode], help="seal and append one block")
    p.set_defaults(func=cmd_append)

    p = sub.add_parser("verify", parents=[common], help="verify the whole chain")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attest", parents=[common], help="attestation report for one block")
    p.add_argument("--index", type=int, required=True)
    p.set_defaults(func=cmd_attest)

    p = sub.add_parser("simulate", parents=[common], help="run a consensus simulation")
    p.add_argument("kind", choices=("pow-analytic", "pow-real", "schedule"))
    p.add_argument("--rates", default="1", help="comma-separated hash rates")
    p.add_argument("--difficulty", type=int, default=256)
    p.add_argument("--blocks", type=int, default=1000)
    p.add_argument("--lottery", choices=("nonce", "certificate"), default="nonce")
    sched = p.add_mutually_exclusive_group()
    sched.add_argument("--round-robin", type=int, metavar="N")
    sched.add_argument("--random-leader", type=int, metavar="N")
    sched.add_argument("--single", action="store_true")
    p.add_argument("--election-min", type=float, default=0.150)
    p.add_argument("--election-max", type=float, default=0.300)
    p.add_argument("--network-mean", type=float, default=0.010)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        detail = f": {exc.detail}" if exc.detail else ""
        print(f"error: {exc.token}{detail}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
