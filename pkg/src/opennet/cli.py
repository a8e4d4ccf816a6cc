"""Command line entry point: ``opennet <group> <command>``."""

from __future__ import annotations

import sys
import time
from pathlib import Path
from typing import Optional

import click

from opennet.core.codec import canonical_bytes, load_document
from opennet.errors import ProtocolError


def _fail(msg: str, code: int = 2) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _emit_doc(doc, output: Optional[str]) -> None:
    data = canonical_bytes(doc) + b"\n"
    if output:
        Path(output).write_bytes(data)
    else:
        click.echo(data.decode(), nl=False)


@click.group()
def main() -> None:
    """Open-network protocol toolkit: nodes, registries, gateways, simulation, certification."""


# -- keys ------------------------------------------------------------------------

@main.group()
def keys() -> None:
    """Signing keys."""


@keys.command("gen")
@click.option("--algorithm", default="ed25519", show_default=True)
@click.option("--seed", default=None, help="Deterministic test key (test-deterministic only).")
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False))
def keys_gen(algorithm: str, seed: Optional[str], out: str) -> None:
    from opennet.core.codec import b64
    from opennet.signing import generate_keypair, save_keypair

    try:
        kp = generate_keypair(algorithm, seed=seed)
    except ProtocolError as exc:
        _fail(str(exc))
    save_keypair(kp, out)
    click.echo(f"key_id {kp.key_id}")
    click.echo(f"verification_key {b64(kp.verification_key)}")


# -- envelopes ---------------------------------------------------------------------

@main.group()
def envelope() -> None:
    """Signed envelopes."""


@envelope.command("sign")
@click.option("--key", "key_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--subscriber-id", required=True)
@click.option("--uri", required=True, help="Sender callback endpoint.")
@click.option("--action", default="search", show_default=True)
@click.option("--domain", required=True)
@click.option("--payload", "payload_file", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Message payload; defaults to the shipped sample intent for the domain.")
@click.option("--validity", default=300, show_default=True, help="Signature validity in seconds.")
def envelope_sign(key_file, subscriber_id, uri, action, domain, payload_file, validity) -> None:
    """Print a signed request envelope as canonical JSON."""
    from opennet.business import DEFAULT_INTENTS
    from opennet.core.codec import encode_envelope
    from opennet.core.model import Envelope, new_context
    from opennet.signing import load_keypair, sign

    try:
        payload = load_document(Path(payload_file).read_bytes()) if payload_file else DEFAULT_INTENTS.get(domain)
        if payload is None:
            _fail(f"no sample intent for {domain!r}; pass --payload")
        e = Envelope(new_context(domain, action, subscriber_id, uri), payload)
        signed = sign(e, load_keypair(key_file), subscriber_id, validity)
    except ProtocolError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    click.echo(encode_envelope(signed).decode())


# -- registry ----------------------------------------------------------------------

@main.group()
def registry() -> None:
    """Registry snapshots (newline-delimited canonical records)."""


@registry.command("load")
@click.argument("snapshots", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--registry-id", default="registry", show_default=True)
@click.option("--output", default=None, type=click.Path(dir_okay=False), help="Write the merged snapshot here.")
def registry_load(snapshots, registry_id: str, output: Optional[str]) -> None:
    """Validate snapshots and merge them into one registry."""
    from opennet.registry import Registry

    reg = Registry(registry_id)
    for path in snapshots:
        try:
            n = reg.load(Path(path).read_bytes())
        except ProtocolError as exc:
            _fail(f"{path}: {exc}")
        click.echo(f"{path}: {n} records", err=True)
    counts: dict[str, int] = {}
    for r in reg.records:
        counts[r.role.value] = counts.get(r.role.value, 0) + 1
    click.echo(" ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "empty", err=True)
    if output:
        Path(output).write_bytes(reg.dump())


@registry.command("dump")
@click.option("--scenario", required=True, help="Shipped scenario name or file.")
@click.option("--registry", "registry_id", required=True)
@click.option("--output", default=None, type=click.Path(dir_okay=False))
def registry_dump(scenario: str, registry_id: str, output: Optional[str]) -> None:
    """Snapshot a registry as a scenario populates it."""
    from opennet.harness.scenario import World, load_scenario, scenario_path

    try:
        world = World(load_scenario(scenario_path(scenario)))
    except ProtocolError as exc:
        _fail(str(exc))
    if registry_id not in world.registries:
        _fail(f"no registry {registry_id!r} in scenario")
    data = world.registries[registry_id].dump()
    if output:
        Path(output).write_bytes(data)
    else:
        click.echo(data.decode(), nl=False)


@registry.command("add")
@click.option("--snapshot", required=True, type=click.Path(dir_okay=False))
@click.option("--subscriber-id", required=True)
@click.option("--role", required=True, type=click.Choice(["BAP", "BPP", "BG"]))
@click.option("--endpoint", required=True)
@click.option("--key", "key_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--domain", "domains", multiple=True)
@click.option("--region", default="")
def registry_add(snapshot: str, subscriber_id: str, role: str, endpoint: str, key_file: str, domains, region) -> None:
    """Append a subscriber record (creating the snapshot if needed)."""
    from opennet.registry import Registry, SubscriberRecord
    from opennet.signing import load_keypair

    reg = Registry("registry")
    path = Path(snapshot)
    try:
        if path.exists():
            reg.load(path.read_bytes())
        kp = load_keypair(key_file)
        reg.register(SubscriberRecord(subscriber_id, role, set(domains), endpoint, kp.key_id,
                                      kp.verification_key, region))
    except ProtocolError as exc:
        _fail(str(exc))
    path.write_bytes(reg.dump())
    click.echo(f"{subscriber_id} registered ({len(reg.records)} records)")


# -- gateway -----------------------------------------------------------------------

@main.group()
def gateway() -> None:
    """Search broadcast."""


@gateway.command("run")
@click.option("--registry", "snapshot", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--policies", "policy_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--fairness-seed", default=0, show_default=True)
@click.option("--envelope", default="-", show_default=True, help="Signed search envelope; '-' reads stdin.")
@click.option("--subscriber-id", default="gateway", show_default=True)
def gateway_run(snapshot: str, policy_dir: Optional[str], fairness_seed: int, envelope: str,
                subscriber_id: str) -> None:
    """Verify one search and print where it would be broadcast (dry run)."""
    from opennet.gateway import Gateway, load_policy
    from opennet.registry import Registry

    reg = Registry("registry")
    try:
        reg.load(Path(snapshot).read_bytes())
        policies = [load_policy(p.read_bytes()) for p in sorted(Path(policy_dir).glob("*.json"))] if policy_dir else []
        data = sys.stdin.buffer.read() if envelope == "-" else Path(envelope).read_bytes()
        gw = Gateway(subscriber_id, reg, policies, fairness_seed)
        report = gw.handle(data.strip(), lambda record, payload: True)
    except ProtocolError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    _emit_doc(report.to_doc(), None)


# -- node ----------------------------------------------------------------------------

@main.group()
def node() -> None:
    """A node over the loopback HTTP transport."""


def _load_node_config(path: str) -> dict:
    try:
        cfg = load_document(Path(path).read_bytes())
    except (OSError, ProtocolError) as exc:
        _fail(f"{path}: {exc}")
    for key in ("subscriber_id", "port", "key", "registry"):
        if key not in cfg:
            _fail(f"{path}: missing {key!r}")
    return cfg


@node.command("run")
@click.option("--role", required=True, type=click.Choice(["BAP", "BPP"], case_sensitive=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--serve-seconds", default=0.0, help="BPP: stop after this long (0 serves forever).")
def node_run(role: str, config_path: str, serve_seconds: float) -> None:
    """Serve a BPP, or drive one BAP lifecycle against a BPP.

    The config names subscriber_id, port, key (key file), registry
    (snapshot), domains (BPP) and, for a BAP, peer_id, peer and domain.
    """
    from opennet.business import DEFAULT_INTENTS, ReferenceBuyer, ReferenceSeller
    from opennet.clock import SystemClock
    from opennet.harness.loopback import HttpTransport, LoopbackServer
    from opennet.node import Node, NodeConfig
    from opennet.registry import Registry
    from opennet.signing import load_keypair

    role = role.upper()
    cfg = _load_node_config(config_path)
    base = Path(config_path).parent
    reg = Registry("registry")
    reg.load((base / cfg["registry"]).read_bytes())
    kp = load_keypair(base / cfg["key"])
    sid = cfg["subscriber_id"]
    endpoint = f"http://127.0.0.1:{cfg['port']}/"
    domains = set(cfg.get("domains", []))
    business = ReferenceSeller(f"{sid}-provider", sorted(domains)[0]) if role == "BPP" else None
    n = Node(NodeConfig(sid, role, endpoint, domains, key=kp), keys=reg.resolve_key, transport=HttpTransport(),
             clock=SystemClock(), business=business,
             log=lambda rec: click.echo(canonical_bytes(rec).decode(), err=True))
    server = LoopbackServer(n, port=int(cfg["port"])).start()
    try:
        if role == "BPP":
            click.echo(f"{sid} serving on {endpoint}")
            deadline = time.monotonic() + serve_seconds if serve_seconds > 0 else None
            while deadline is None or time.monotonic() < deadline:
                time.sleep(0.05)
            return
        domain, peer, peer_id = cfg["domain"], cfg["peer"], cfg["peer_id"]
        intent = DEFAULT_INTENTS[domain]
        buyer = ReferenceBuyer()
        handle, ack = n.request("search", buyer.next_payload("search", intent=intent), peer, domain=domain)
        txn = handle.transaction_id
        for action in cfg.get("script", ["select", "init", "confirm", "status"]):
            _wait_for(lambda: n.last_callback.get(txn) is not None and n.offers.get(txn))
            last = n.last_callback[txn]
            payload = buyer.next_payload(action, intent=intent, offer=n.offers[txn][0].payload, last=last.payload,
                                         form_link=n.lifecycle(txn).form_link)
            before = len(n.lifecycle(txn).history)
            handle, ack = n.request(action, payload, peer, domain=domain, transaction_id=txn,
                                    bpp_id=peer_id, bpp_uri=peer)
            if not ack.ok:
                _fail(f"{action} refused: {ack}", 1)
            _wait_for(lambda: len(n.lifecycle(txn).history) >= before + 2)
        click.echo(f"{txn} {n.lifecycle(txn).state.value}")
    finally:
        server.stop()


def _wait_for(cond, timeout: float = 10.0) -> None:
    end = time.monotonic() + timeout
    while not cond():
        if time.monotonic() > end:
            _fail("timed out waiting for a callback", 1)
        time.sleep(0.01)


# -- simulation -----------------------------------------------------------------------

@main.group()
def sim() -> None:
    """Deterministic simulation."""


@sim.command("run")
@click.option("--scenario", required=True, help="Shipped scenario name or file.")
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
@click.option("--log", "log_path", default=None, type=click.Path(dir_okay=False), help="Write the event log (NDJSON).")
@click.option("--report-dir", default=None, type=click.Path(file_okay=False), help="Write CSV tables and figures.")
def sim_run(scenario: str, seed: Optional[int], log_path: Optional[str], report_dir: Optional[str]) -> None:
    from opennet.harness.scenario import load_scenario, run_scenario, scenario_path

    try:
        s = load_scenario(scenario_path(scenario))
        if seed is not None:
            s = s.with_seed(seed)
        result = run_scenario(s)
    except ProtocolError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    if log_path:
        Path(log_path).write_bytes(result.log_bytes())
    states: dict[str, int] = {}
    for lc in result.lifecycles:
        states[lc.state.value] = states.get(lc.state.value, 0) + 1
    click.echo(f"scenario {result.scenario} seed {result.seed}: {len(result.lifecycles)} lifecycles, "
               + ", ".join(f"{k}={v}" for k, v in sorted(states.items())))
    click.echo("stats " + " ".join(f"{k}={v}" for k, v in sorted(result.stats.items())))
    for a in result.assertions:
        click.echo(f"{'PASS' if a.passed else 'FAIL'} {a.name}: {a.detail}")
    if report_dir:
        from opennet.reporting import write_report

        for path in write_report(result, report_dir):
            click.echo(f"wrote {path}")
    sys.exit(0 if result.passed else 1)


# -- certification ----------------------------------------------------------------------

def _target(locator: str, suite):
    from opennet.conformance import MutantSpec, SeededMutator, reference_target

    kind, _, rest = locator.partition(":")
    if kind == "reference":
        return reference_target(rest or suite.target_role, suite.domain)
    if kind == "mutant":
        # mutant:<kind>:<at>:<arg>
        parts = rest.split(":", 2)
        if len(parts) != 3:
            _fail("mutant locator is mutant:<kind>:<at>:<arg>")
        mkind, at, arg = parts
        if mkind == "bad_enum":
            arg = tuple(arg.split("=", 1))
        return reference_target(suite.target_role, suite.domain, mutator=SeededMutator(MutantSpec(mkind, at, arg)))
    _fail(f"unknown target locator {locator!r} (reference[:ROLE] or mutant:...)")


@main.command("certify")
@click.option("--suite", "suite_path", required=True, help="Suite file or shipped suite id.")
@click.option("--adaptation", "adaptation_path", required=True, help="Adaptation file or shipped domain name.")
@click.option("--target", "locator", default="reference", show_default=True)
@click.option("--report", "report_path", default=None, type=click.Path(dir_okay=False))
def certify_cmd(suite_path: str, adaptation_path: str, locator: str, report_path: Optional[str]) -> None:
    """Certify a target against a suite; exits nonzero on failure."""
    from opennet.adaptation import load_adaptation_file
    from opennet.conformance import SUITES_DIR, certify, load_suite

    data = Path(__file__).parent / "data"
    sp = Path(suite_path) if Path(suite_path).exists() else SUITES_DIR / f"{suite_path}.json"
    ap = Path(adaptation_path) if Path(adaptation_path).exists() else data / "adaptations" / f"{adaptation_path}.json"
    try:
        suite = load_suite(sp)
        adaptation = load_adaptation_file(ap)
        report = certify(_target(locator, suite), suite, adaptation)
    except (ProtocolError, OSError) as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    click.echo(report.summary())
    if report_path:
        Path(report_path).write_bytes(canonical_bytes(report.to_doc()) + b"\n")
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
