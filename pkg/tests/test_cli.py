import json
import os
import stat

import pytest

from r2s import cli, crypto


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def pki(tmp_path, capsys):
    """CA key/cert plus one CA-signed node identity on disk."""
    p = {name: tmp_path / name for name in ("ca.key", "ca.cert", "n1.key", "n1.cert")}
    assert run(capsys, "keygen", "--out", p["ca.key"], "--seed-hex", "01" * 32)[0] == 0
    assert run(capsys, "ca-init", "--key", p["ca.key"], "--name", "root", "--out", p["ca.cert"], "--seed", 1)[0] == 0
    assert run(capsys, "keygen", "--out", p["n1.key"], "--seed-hex", "02" * 32)[0] == 0
    code, _, _ = run(
        capsys, "cert-issue", "--ca-key", p["ca.key"], "--ca-cert", p["ca.cert"],
        "--subject-key", p["n1.key"], "--subject", "node-1", "--out", p["n1.cert"],
    )
    assert code == 0
    p["chain"] = tmp_path / "chain.ndjson"
    p["manifest"] = tmp_path / "manifest.json"
    return p


def chain_flags(p):
    return ["--chain", p["chain"], "--manifest", p["manifest"]]


def ext_flags(p):
    return ["--external", "--key", p["n1.key"], "--cert", p["n1.cert"]]


@pytest.fixture
def initialized(pki, capsys):
    code, _, err = run(capsys, "chain-init", *chain_flags(pki), "--trust", pki["ca.cert"], *ext_flags(pki))
    assert code == 0, err
    return pki


class TestKeygen:
    def test_seeded_twice_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.key", tmp_path / "b.key"
        run(capsys, "keygen", "--out", a, "--seed-hex", "aa" * 32)
        run(capsys, "keygen", "--out", b, "--seed-hex", "aa" * 32)
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_read_only_dir(self, tmp_path, capsys):
        ro = tmp_path / "ro"
        ro.mkdir()
        ro.chmod(stat.S_IRUSR | stat.S_IXUSR)
        code, out, err = run(capsys, "keygen", "--out", ro / "k.key")
        assert code == 1 and "unwritable-path" in err and out == ""

    def test_unwritable_path(self, tmp_path, capsys):
        code, out, err = run(capsys, "keygen", "--out", tmp_path / "missing" / "k.key")
        assert code == 1 and err.startswith("error: unwritable-path") and out == ""

    def test_printed_public_key_matches_file(self, tmp_path, capsys):
        path = tmp_path / "k.key"
        _, out, _ = run(capsys, "keygen", "--out", path)
        assert json.loads(out)["public_key"] == crypto.load_private_key(path.read_text()).public_key.hex()

    def test_bad_seed(self, tmp_path, capsys):
        assert run(capsys, "keygen", "--out", tmp_path / "k", "--seed-hex", "abcd")[0] == 1


class TestCertificates:
    def test_issued_certificate_verifies(self, pki):
        ca = crypto.load_certificate(pki["ca.cert"].read_text())
        node = crypto.load_certificate(pki["n1.cert"].read_text())
        assert crypto.verify_certificate(ca)
        assert crypto.verify_certificate(node, ca)
        assert (node.subject, node.issuer) == ("node-1", "root")

    def test_subject_equal_to_ca(self, pki, capsys):
        code, _, err = run(
            capsys, "cert-issue", "--ca-key", pki["ca.key"], "--ca-cert", pki["ca.cert"],
            "--subject-key", pki["n1.key"], "--subject", "root", "--out", pki["n1.cert"],
        )
        assert code == 1

    def test_bad_key_file(self, pki, capsys, tmp_path):
        bad = tmp_path / "bad.key"
        bad.write_text("nonsense\n")
        code, _, err = run(capsys, "ca-init", "--key", bad, "--name", "x", "--out", tmp_path / "x.cert")
        assert code == 1 and "bad-key-file" in err


class TestChainLifecycle:
    def test_init_writes_files(self, initialized):
        assert initialized["chain"].read_text().count("\n") == 1
        manifest = json.loads(initialized["manifest"].read_text())
        assert manifest["allowlist"] is None and len(manifest["trust_anchors"]) == 1

    def test_append_pow(self, initialized, capsys):
        code, out, _ = run(capsys, "append", *chain_flags(initialized), "--difficulty", 16, "hello")
        assert code == 0
        result = json.loads(out)
        assert result["block_number"] == 1 and result["iterations"] >= 1
        assert initialized["chain"].read_text().count("\n") == 2

    def test_append_payload_file_and_stdin(self, initialized, capsys, tmp_path, monkeypatch):
        f = tmp_path / "payload.bin"
        f.write_bytes(b"\x00\x01binary")
        assert run(capsys, "append", *chain_flags(initialized), *ext_flags(initialized), "--payload-file", f)[0] == 0
        import io, sys

        monkeypatch.setattr(sys, "stdin", io.TextIOWrapper(io.BytesIO(b"from stdin")))
        assert run(capsys, "append", *chain_flags(initialized), "--difficulty", 2)[0] == 0
        from r2s.chain import load_chain

        chain = load_chain(initialized["chain"], initialized["manifest"])
        assert [b.payload for b in chain][1:] == [b"\x00\x01binary", b"from stdin"]

    def test_append_external_with_self_signed(self, initialized, capsys):
        before = initialized["chain"].read_bytes()
        code, _, err = run(
            capsys, "append", *chain_flags(initialized), "--external",
            "--key", initialized["ca.key"], "--cert", initialized["ca.cert"], "x",
        )
        assert code == 1 and "untrusted-certificate" in err
        assert initialized["chain"].read_bytes() == before

    def test_mode_flags_exclusive(self, initialized, capsys):
        code, _, _ = run(capsys, "append", *chain_flags(initialized), "--difficulty", 4, *ext_flags(initialized), "x")
        assert code == 1

    def test_no_mode(self, initialized, capsys):
        assert run(capsys, "append", *chain_flags(initialized), "x")[0] == 1

    def test_stale_chain_rejected(self, initialized, capsys, monkeypatch):
        before = None
        real_seal = cli.seal_block

        def seal_while_someone_writes(*args, **kwargs):
            nonlocal before
            outcome = real_seal(*args, **kwargs)
            with open(initialized["chain"], "a") as fh:
                fh.write("garbage\n")
            before = initialized["chain"].read_bytes()
            return outcome

        monkeypatch.setattr(cli, "seal_block", seal_while_someone_writes)
        code, _, err = run(capsys, "append", *chain_flags(initialized), "--difficulty", 2, "x")
        assert code == 2 and "stale-chain" in err
        assert initialized["chain"].read_bytes() == before

    @pytest.mark.parametrize("modes", ["external", "pow", "mixed"])
    def test_round_trip_fifty_appends(self, initialized, capsys, modes):
        for i in range(50):
            pow_flags = ["--difficulty", 2 + i % 3 * 7]
            if modes == "external" or (modes == "mixed" and i % 2 == 0):
                mode = ext_flags(initialized)
            else:
                mode = pow_flags
            assert run(capsys, "append", *chain_flags(initialized), *mode, f"p{i}")[0] == 0
        code, out, _ = run(capsys, "verify", *chain_flags(initialized))
        report = json.loads(out)
        assert code == 0 and report["result"] == "accept" and report["length"] == 51

    def test_global_flags_before_subcommand(self, initialized, capsys):
        assert run(capsys, *chain_flags(initialized), "verify")[0] == 0

    def test_attest(self, initialized, capsys):
        run(capsys, "append", *chain_flags(initialized), "--difficulty", 8, "x")
        code, out, _ = run(capsys, "attest", *chain_flags(initialized), "--index", 1)
        report = json.loads(out)
        assert code == 0 and report["mode"] == "pow" and report["self_signed"]
        assert int(report["achieved_difficulty"]) >= 8
        code, out, _ = run(capsys, "attest", *chain_flags(initialized), "--index", 0)
        assert json.loads(out)["trusted_issuer"] == "root"
        assert run(capsys, "attest", *chain_flags(initialized), "--index", 5)[0] == 1

    def test_allowlist_blocks_rogue_pow(self, pki, capsys):
        code, _, _ = run(
            capsys, "chain-init", *chain_flags(pki), "--trust", pki["ca.cert"],
            "--allow", pki["n1.cert"], *ext_flags(pki),
        )
        assert code == 0
        code, _, err = run(capsys, "append", *chain_flags(pki), "--difficulty", 2, "x")
        assert code == 2 and "unknown-certificate" in err

    def test_pow_genesis(self, pki, capsys):
        code, _, _ = run(capsys, "chain-init", *chain_flags(pki), "--difficulty", 4, "--seed", 3)
        assert code == 0
        assert run(capsys, "verify", *chain_flags(pki))[0] == 0


class TestVerify:
    def test_flipped_byte(self, initialized, capsys):
        run(capsys, "append", *chain_flags(initialized), "--difficulty", 4, "payload-one")
        data = bytearray(initialized["chain"].read_bytes())
        second_line = data.index(b"\n") + 1
        pos = data.index(b'"payload_digest":"', second_line) + len('"payload_digest":"')
        data[pos] = ord("0") if data[pos] != ord("0") else ord("1")
        initialized["chain"].write_bytes(bytes(data))
        code, out, err = run(capsys, "verify", *chain_flags(initialized))
        assert code == 2
        assert json.loads(out)["index"] == 1 and "bad-payload" in err

    def test_truncated_last_line(self, initialized, capsys):
        data = initialized["chain"].read_bytes()
        initialized["chain"].write_bytes(data[:-10])
        code, out, err = run(capsys, "verify", *chain_flags(initialized))
        assert code == 3 and "malformed" in err and out == ""

    def test_missing_file(self, initialized, capsys, tmp_path):
        code, _, _ = run(capsys, "verify", "--chain", tmp_path / "nope", "--manifest", initialized["manifest"])
        assert code == 3

    def test_missing_flags(self, capsys):
        assert run(capsys, "verify")[0] == 1


class TestSimulate:
    def test_pow_analytic(self, capsys):
        code, out, _ = run(capsys, "simulate", "pow-analytic", "--rates", "3,1", "--blocks", 10000, "--seed", 7)
        shares = [n["share"] for n in json.loads(out)["nodes"]]
        assert code == 0 and abs(shares[0] - 0.75) < 0.02 and abs(shares[1] - 0.25) < 0.02

    def test_round_robin(self, capsys):
        code, out, _ = run(capsys, "simulate", "schedule", "--round-robin", 4, "--blocks", 400)
        assert code == 0 and [n["share"] for n in json.loads(out)["nodes"]] == [0.25] * 4

    @pytest.mark.parametrize(
        "args",
        [
            ("pow-analytic", "--rates", "3,1", "--blocks", 300),
            ("pow-real", "--rates", "2,1", "--blocks", 30, "--difficulty", 16),
            ("pow-real", "--blocks", 10, "--difficulty", 8, "--lottery", "certificate"),
            ("schedule", "--random-leader", 3, "--blocks", 50),
        ],
    )
    def test_same_seed_same_bytes(self, capsys, args):
        a = run(capsys, "simulate", *args, "--seed", 11)
        b = run(capsys, "simulate", *args, "--seed", 11)
        assert a[0] == 0 and a == b

    def test_csv_and_text(self, capsys, tmp_path):
        out_file = tmp_path / "r.csv"
        run(capsys, "simulate", "schedule", "--single", "--blocks", 3, "--format", "csv", "--out", out_file)
        assert out_file.read_text().splitlines()[0] == "block_index,winner,T_sample"
        code, out, _ = run(capsys, "simulate", "pow-analytic", "--rates", "1,1", "--blocks", 10, "--format", "text")
        assert code == 0 and "share=" in out

    @pytest.mark.parametrize(
        "args", [("--rates", "3,-1"), ("--rates", "a,b"), ("--difficulty", 0)]
    )
    def test_invalid_flags(self, capsys, args):
        code, out, err = run(capsys, "simulate", "pow-analytic", *args)
        assert code == 1 and out == "" and err.startswith("error:")
