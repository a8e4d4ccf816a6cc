from __future__ import annotations

import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from opennet.cli import main
from opennet.core.codec import decode_envelope
from opennet.registry import Registry
from opennet.signing import verify_envelope


def invoke(*args, input=None):
    return CliRunner().invoke(main, [str(a) for a in args], input=input)


@pytest.fixture
def keyed(tmp_path):
    """Two deterministic keys and a snapshot with a BAP and a retail BPP."""
    snap = tmp_path / "reg.ndjson"
    for sid, role, extra in [("bap-1", "BAP", []), ("bpp-1", "BPP", ["--domain", "retail"])]:
        r = invoke("keys", "gen", "--algorithm", "test-deterministic", "--seed", sid, "--out", tmp_path / f"{sid}.key")
        assert r.exit_code == 0, r.output
        r = invoke("registry", "add", "--snapshot", snap, "--subscriber-id", sid, "--role", role,
                   "--endpoint", f"http://{sid}.example/", "--key", tmp_path / f"{sid}.key", *extra)
        assert r.exit_code == 0, r.output
    return tmp_path, snap


def test_keys_gen_ed25519(tmp_path):
    r = invoke("keys", "gen", "--out", tmp_path / "k.json")
    assert r.exit_code == 0
    assert r.output.startswith("key_id ") and "verification_key " in r.output
    assert invoke("keys", "gen", "--algorithm", "rsa", "--out", tmp_path / "x").exit_code == 2


def test_registry_add_and_load(keyed):
    tmp, snap = keyed
    assert len(snap.read_bytes().splitlines()) == 2
    out = tmp / "merged.ndjson"
    r = invoke("registry", "load", snap, "--output", out)
    assert r.exit_code == 0 and "BAP=1 BPP=1" in r.output
    assert out.read_bytes() == snap.read_bytes()
    dup = invoke("registry", "add", "--snapshot", snap, "--subscriber-id", "bpp-1", "--role", "BPP",
                 "--endpoint", "http://x/", "--key", tmp / "bpp-1.key")
    assert dup.exit_code == 2


def test_registry_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ndjson"
    bad.write_text("{not json\n")
    assert invoke("registry", "load", bad).exit_code == 2


def test_registry_dump_from_scenario():
    r = invoke("registry", "dump", "--scenario", "single-network", "--registry", "reg-a")
    assert r.exit_code == 0
    reg = Registry("copy")
    assert reg.load(r.output.encode()) >= 3
    assert invoke("registry", "dump", "--scenario", "single-network", "--registry", "nope").exit_code == 2


def test_envelope_sign_then_gateway(keyed):
    tmp, snap = keyed
    r = invoke("envelope", "sign", "--key", tmp / "bap-1.key", "--subscriber-id", "bap-1",
               "--uri", "http://bap-1.example/", "--domain", "retail")
    assert r.exit_code == 0, r.output
    env = decode_envelope(r.output.strip().encode())
    reg = Registry("r")
    reg.load(snap.read_bytes())
    assert verify_envelope(env, env.signature, reg.resolve_key, now=env.signature.created).ok
    g = invoke("gateway", "run", "--registry", snap, input=r.output)
    assert g.exit_code == 0, g.output
    report = json.loads(g.output)
    assert report["targets"] == ["bpp-1"]


def test_gateway_refuses_tampered_envelope(keyed):
    tmp, snap = keyed
    r = invoke("envelope", "sign", "--key", tmp / "bap-1.key", "--subscriber-id", "bap-1",
               "--uri", "http://bap-1.example/", "--domain", "retail")
    tampered = r.output.replace('"retail"', '"mobility"', 1)
    g = invoke("gateway", "run", "--registry", snap, input=tampered)
    assert g.exit_code == 2 and "DigestMismatch" in g.output


def test_sim_run_writes_log_and_report(tmp_path):
    log = tmp_path / "events.ndjson"
    r = invoke("sim", "run", "--scenario", "single-network", "--log", log, "--report-dir", tmp_path / "rep")
    assert r.exit_code == 0, r.output
    assert "COMPLETED=1" in r.output and "PASS " in r.output
    assert log.read_bytes() == (Path(__file__).parent / "golden" / "single-network.log").read_bytes()
    assert (tmp_path / "rep" / "lifecycle_states.png").exists()
    assert invoke("sim", "run", "--scenario", "no-such-scenario").exit_code == 2


def test_certify_reference_and_mutant(tmp_path):
    out = tmp_path / "report.json"
    r = invoke("certify", "--suite", "retail-bpp", "--adaptation", "retail", "--report", out)
    assert r.exit_code == 0, r.output
    assert json.loads(out.read_text())["passed"] is True
    m = invoke("certify", "--suite", "retail-bpp", "--adaptation", "retail",
               "--target", "mutant:out_of_order:on_confirm:skip")
    assert m.exit_code == 1 and "FSM_ORDER" in m.output
    assert invoke("certify", "--suite", "retail-bpp", "--adaptation", "retail", "--target", "who").exit_code == 2


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_two_process_loopback_lifecycle(tmp_path):
    bap_port, bpp_port = free_port(), free_port()
    snap = tmp_path / "reg.ndjson"
    for sid, role, port, extra in [("bap-1", "BAP", bap_port, []),
                                   ("bpp-1", "BPP", bpp_port, ["--domain", "mobility"])]:
        assert invoke("keys", "gen", "--out", tmp_path / f"{sid}.key").exit_code == 0
        assert invoke("registry", "add", "--snapshot", snap, "--subscriber-id", sid, "--role", role,
                      "--endpoint", f"http://127.0.0.1:{port}/", "--key", tmp_path / f"{sid}.key",
                      *extra).exit_code == 0
    (tmp_path / "bpp.json").write_text(json.dumps({
        "subscriber_id": "bpp-1", "port": bpp_port, "key": "bpp-1.key", "registry": "reg.ndjson",
        "domains": ["mobility"]}))
    (tmp_path / "bap.json").write_text(json.dumps({
        "subscriber_id": "bap-1", "port": bap_port, "key": "bap-1.key", "registry": "reg.ndjson",
        "domain": "mobility", "peer_id": "bpp-1", "peer": f"http://127.0.0.1:{bpp_port}/"}))
    cli = [sys.executable, "-m", "opennet.cli", "node", "run"]
    server = subprocess.Popen(cli + ["--role", "BPP", "--config", tmp_path / "bpp.json", "--serve-seconds", "30"],
                              stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    try:
        deadline = time.monotonic() + 15
        while True:
            with socket.socket() as s:
                if s.connect_ex(("127.0.0.1", bpp_port)) == 0:
                    break
            assert time.monotonic() < deadline and server.poll() is None
            time.sleep(0.05)
        bap = subprocess.run(cli + ["--role", "BAP", "--config", tmp_path / "bap.json"],
                             capture_output=True, text=True, timeout=60)
    finally:
        server.terminate()
        server.wait(10)
    assert bap.returncode == 0, bap.stderr
    assert bap.stdout.strip().endswith("COMPLETED")
    records = [json.loads(line) for line in bap.stderr.splitlines() if line.startswith("{")]
    assert {r["action"] for r in records if r["dir"] == "in"} >= {"on_search", "on_confirm", "on_status"}
