#!/usr/bin/env python3
"""
vicos - Command line entry point
Key generation, the AIP server, VICOS object commands, benchmarks and
attack scenarios.
"""

import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

import click

from .bench.acop import commutative_compatibility
from .bench.workload import (WorkloadSpec, close_cluster, local_cluster,
                             run_live_bench, run_simulated_bench)
from .bench.zipf import BenchConfigError
from .core.adict import Adict
from .core.ads import ABORT
from .core.crypto import CryptoConfigError, HashFunction, KeyRing, SignatureScheme
from .harness.adversary import AttackScript, ScenarioError, run_scenario
from .harness.checkers import (check_fork_linearizable, check_linearizable, search_budget,
                               summarize)
from .protocol.chain import build_genesis, provision_keyring
from .protocol.client import AipClient, FaultAlarm, RetryPolicy
from .protocol.journal import ServerJournal
from .protocol.messages import MessageCodec
from .protocol.runtime import ClientConnection, ServerRuntime
from .protocol.server import AipServer
from .storage.cos import CosError, create_backend
from .storage.vicos import VicosClient
from .transport.channel import ChannelClosedError, connect_tcp


DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "config" / "config.json"

EXIT_ABORTED = 2
EXIT_ALARM = 3


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Configure logging for the application."""
    handlers: list = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def load_config(config_path: Path = DEFAULT_CONFIG_PATH) -> Dict[str, Any]:
    """Load application configuration."""
    try:
        with open(config_path, 'r') as f:
            return json.load(f)
    except FileNotFoundError:
        logging.error(f"Configuration file not found: {config_path}")
        return {}
    except json.JSONDecodeError as e:
        logging.error(f"Invalid JSON in config file: {e}")
        return {}


def parse_address(address: str) -> Tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise click.BadParameter(f"expected host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def _section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    return config.setdefault(name, {})


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Configuration file (JSON).')
@click.option('--log-level', default=None, help='Logging level, e.g. DEBUG.')
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], log_level: Optional[str]) -> None:
    """Verifiable object storage over an untrusted server."""
    config = load_config(Path(config_path) if config_path else DEFAULT_CONFIG_PATH)
    logging_config = config.get('logging', {})
    setup_logging(log_level or logging_config.get('level', 'INFO'), logging_config.get('file'))
    ctx.obj = config


@cli.command()
@click.option('--mode', type=click.Choice([s.value for s in SignatureScheme]), default=None)
@click.option('--clients', type=int, required=True, help='Number of client identities.')
@click.option('--hash', 'hash_name', default=None, help='Hash function, e.g. sha256.')
@click.option('--out', type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def keygen(config: Dict[str, Any], mode: Optional[str], clients: int,
           hash_name: Optional[str], out: Optional[str]) -> None:
    """Generate client keys and the signed genesis record."""
    crypto_config = config.get('crypto', {})
    scheme = SignatureScheme(mode or crypto_config.get('mode', 'mac'))
    hash_name = hash_name or crypto_config.get('hash', 'sha256')
    path = Path(out or crypto_config.get('key_file', 'keys.json'))
    try:
        ads = Adict(HashFunction(hash_name))
        keyring = provision_keyring(scheme, clients, ads, hash_name)
    except (CryptoConfigError, ValueError) as e:
        raise click.ClickException(str(e))
    keyring.save(path)
    click.echo(f"Wrote {scheme.value} keys for clients 1..{clients} to {path}")


@cli.command()
@click.option('--host', default=None)
@click.option('--port', type=int, default=None)
@click.option('--pending-limit', type=int, default=None)
@click.option('--query-fast-path/--no-query-fast-path', default=None)
@click.option('--prune-aborted/--no-prune-aborted', default=None)
@click.option('--journal', type=click.Path(dir_okay=False), default=None)
@click.option('--keys', type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
def serve(config: Dict[str, Any], host: Optional[str], port: Optional[int],
          pending_limit: Optional[int], query_fast_path: Optional[bool],
          prune_aborted: Optional[bool], journal: Optional[str], keys: Optional[str]) -> None:
    """Run the AIP server over TCP until interrupted."""
    logger = logging.getLogger(__name__)
    protocol = _section(config, 'protocol')
    for name, value in (('pending_limit', pending_limit), ('query_fast_path', query_fast_path),
                        ('prune_aborted', prune_aborted)):
        if value is not None:
            protocol[name] = value
    server_config = config.get('server', {})
    host = host or server_config.get('host', '127.0.0.1')
    port = port if port is not None else server_config.get('port', 7411)
    journal_path = journal or server_config.get('journal_path')

    try:
        keyring = KeyRing.load(Path(keys or config.get('crypto', {}).get('key_file', 'keys.json')))
        ads = Adict(keyring.hash_fn)
        genesis = build_genesis(keyring, ads)
    except CryptoConfigError as e:
        raise click.ClickException(str(e))

    codec = MessageCodec(ads)
    server_journal = ServerJournal(Path(journal_path), codec) if journal_path else None
    server = AipServer(ads, keyring, genesis, config, server_journal)
    server.restore_from_journal()

    runtime = ServerRuntime(server, codec, config)
    runtime.start()
    max_frame = config.get('transport', {}).get('max_frame_bytes', 256 * 1024 * 1024)
    listener = runtime.serve_tcp(host, port, max_frame)
    logger.info(f"Serving on {listener.address[0]}:{listener.address[1]}")
    try:
        runtime.wait_stopped()
    except KeyboardInterrupt:
        logger.info("Shutting down")
    finally:
        runtime.stop()
    if runtime.failure is not None:
        raise click.ClickException(f"server stopped: {runtime.failure}")


def client_options(command):
    """Connection options shared by the object commands."""
    options = [
        click.option('--server', 'address', default=None, help='Server host:port.'),
        click.option('--client-id', type=int, required=True),
        click.option('--keys', type=click.Path(exists=True, dir_okay=False), default=None),
        click.option('--backend', type=click.Choice(['memory', 'filesystem']), default=None),
        click.option('--cos-root', type=click.Path(file_okay=False), default=None),
        click.option('--state', type=click.Path(dir_okay=False), default=None,
                     help='Client state file kept between invocations.'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@contextmanager
def open_client(config: Dict[str, Any], address: Optional[str], client_id: int,
                keys: Optional[str], backend: Optional[str], cos_root: Optional[str],
                state: Optional[str]) -> Iterator[VicosClient]:
    """Connected VICOS client; its protocol state is saved again on exit."""
    vicos_config = _section(config, 'vicos')
    if backend:
        vicos_config['backend'] = backend
    if cos_root:
        vicos_config['cos_root'] = cos_root

    server_config = config.get('server', {})
    if address:
        host, port = parse_address(address)
    else:
        host, port = server_config.get('host', '127.0.0.1'), server_config.get('port', 7411)
    state_path = Path(state) if state else Path(f"client-{client_id}.state.json")

    try:
        keyring = KeyRing.load(Path(keys or config.get('crypto', {}).get('key_file', 'keys.json')))
        ads = Adict(keyring.hash_fn)
        client = AipClient(client_id, ads, keyring, build_genesis(keyring, ads), config)
        if state_path.exists():
            client.restore(json.loads(state_path.read_text(encoding="utf-8")))
        transport = config.get('transport', {})
        channel = connect_tcp(host, port, client_id,
                              max_frame_bytes=transport.get('max_frame_bytes', 256 * 1024 * 1024))
        cos = create_backend(config)
    except (CryptoConfigError, CosError, ChannelClosedError, ValueError) as e:
        raise click.ClickException(str(e))

    connection = ClientConnection(client, channel, MessageCodec(ads), config).start()
    try:
        yield VicosClient(connection, cos, config)
    finally:
        connection.drain()
        connection.close()
        if not client.halted:
            state_path.write_text(json.dumps(client.snapshot()), encoding="utf-8")


def _run_object_command(ctx: click.Context, action, **connection: Any) -> Any:
    try:
        with open_client(ctx.obj, **connection) as client:
            result = RetryPolicy.from_config(ctx.obj).run(action, client)
    except FaultAlarm as alarm:
        click.echo(f"server misbehaviour detected: {alarm}", err=True)
        ctx.exit(EXIT_ALARM)
    except (TimeoutError, ChannelClosedError, CosError) as e:
        raise click.ClickException(str(e))
    if result is ABORT:
        click.echo("operation aborted by a concurrent conflict; retry", err=True)
        ctx.exit(EXIT_ABORTED)
    return result


@cli.command()
@click.argument('key')
@click.option('--value', default=None, help='Object content as text.')
@click.option('--file', 'source', type=click.File('rb'), default=None,
              help='Read object content from a file ("-" for stdin).')
@client_options
@click.pass_context
def put(ctx: click.Context, key: str, value: Optional[str], source, **connection: Any) -> None:
    """Store an object."""
    if (value is None) == (source is None):
        raise click.UsageError("give exactly one of --value and --file")
    data = source.read() if source is not None else value.encode("utf-8")
    _run_object_command(ctx, lambda client: client.put(key, data), **connection)
    click.echo(f"stored {key} ({len(data)} bytes)")


@cli.command()
@click.argument('key')
@client_options
@click.pass_context
def get(ctx: click.Context, key: str, **connection: Any) -> None:
    """Fetch and verify an object."""
    data = _run_object_command(ctx, lambda client: client.get(key), **connection)
    if data is None:
        click.echo(f"no object named {key}", err=True)
        ctx.exit(1)
    click.echo(data, nl=False)


@cli.command(name='del')
@click.argument('key')
@client_options
@click.pass_context
def delete(ctx: click.Context, key: str, **connection: Any) -> None:
    """Remove an object."""
    _run_object_command(ctx, lambda client: client.delete(key), **connection)
    click.echo(f"deleted {key}")


@cli.command(name='list')
@client_options
@click.pass_context
def list_objects(ctx: click.Context, **connection: Any) -> None:
    """List object names."""
    for key in _run_object_command(ctx, lambda client: client.list(), **connection):
        click.echo(key)


@cli.command(name='gc-orphans')
@click.option('--grace', 'grace_s', type=float, default=None,
              help='Keep objects written less than this many seconds ago (vicos.gc_grace_s).')
@client_options
@click.pass_context
def gc_orphans(ctx: click.Context, grace_s: Optional[float], **connection: Any) -> None:
    """Delete stored objects no longer referenced by the dictionary."""
    removed = _run_object_command(ctx, lambda client: client.gc_orphans(grace_s), **connection)
    click.echo(f"removed {len(removed)} orphaned objects")


@cli.command()
@click.option('--mode', 'run_mode', type=click.Choice(['sim', 'local', 'tcp']), default='sim',
              help='Deterministic simulation, in-process threads, or a TCP server.')
@click.option('--clients', type=int, default=None)
@click.option('--objects', type=int, default=None)
@click.option('--object-size', type=int, default=None)
@click.option('--read-ratio', type=float, default=None)
@click.option('--theta', 'zipf_theta', type=float, default=None)
@click.option('--op-count', type=int, default=None)
@click.option('--warmup', 'warmup_s', type=float, default=None)
@click.option('--measure', 'measure_s', type=float, default=None)
@click.option('--conflict-mode', type=click.Choice(['compatible', 'commutative']), default=None)
@click.option('--seed', type=int, default=None)
@click.option('--server', 'address', default=None, help='Server host:port for --mode tcp.')
@click.option('--keys', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def bench(config: Dict[str, Any], run_mode: str, address: Optional[str], keys: Optional[str],
          csv_path: Optional[str], **overrides: Any) -> None:
    """Run a read/write workload and report success rates and latencies."""
    try:
        spec = WorkloadSpec.from_config(config, **overrides)
    except BenchConfigError as e:
        raise click.ClickException(str(e))

    compatibility = commutative_compatibility if spec.conflict_mode == "commutative" else None
    if run_mode == 'sim':
        stats = run_simulated_bench(spec, config)
    elif run_mode == 'local':
        runtime, clients = local_cluster(spec.clients, config, compatibility)
        try:
            stats = run_live_bench(spec, clients)
        finally:
            close_cluster(runtime, clients)
    else:
        stats = _tcp_bench(config, spec, address, keys, compatibility)

    stats.write_csv(Path(csv_path or config.get('bench', {}).get('output', 'results/bench.csv')))
    click.echo(json.dumps(stats.summary(), indent=2))


def _tcp_bench(config: Dict[str, Any], spec: WorkloadSpec, address: Optional[str],
               keys: Optional[str], compatibility) -> Any:
    server_config = config.get('server', {})
    host, port = (parse_address(address) if address
                  else (server_config.get('host', '127.0.0.1'), server_config.get('port', 7411)))
    try:
        keyring = KeyRing.load(Path(keys or config.get('crypto', {}).get('key_file', 'keys.json')))
    except CryptoConfigError as e:
        raise click.ClickException(str(e))
    ads = Adict(keyring.hash_fn)
    genesis = build_genesis(keyring, ads)
    codec = MessageCodec(ads)
    cos = create_backend(config)

    clients = {}
    try:
        for client_id in range(1, spec.clients + 1):
            client = AipClient(client_id, ads, keyring, genesis, config, compatibility)
            channel = connect_tcp(host, port, client_id)
            connection = ClientConnection(client, channel, codec, config).start()
            clients[client_id] = VicosClient(connection, cos, config)
        return run_live_bench(spec, clients)
    except ChannelClosedError as e:
        raise click.ClickException(str(e))
    finally:
        close_cluster(None, clients)


@cli.command()
@click.option('--script', 'script_path', required=True,
              help='Attack script file, or a name from the scenario directory.')
@click.option('--seed', type=int, default=0)
@click.option('--seeds', type=int, default=1, help='Number of consecutive seeds to run.')
@click.option('--linearizability', is_flag=True,
              help='Also search the whole history for a linearization (harness.search_budget).')
@click.pass_obj
def scenario(config: Dict[str, Any], script_path: str, seed: int, seeds: int,
             linearizability: bool) -> None:
    """Run an attack script in the deterministic simulation."""
    path = Path(script_path)
    if not path.exists():
        path = Path(config.get('harness', {}).get('scenario_dir', 'scenarios')) / f"{script_path}.json"
    try:
        script = AttackScript.load(path)
    except ScenarioError as e:
        raise click.ClickException(str(e))

    failures = 0
    for run_seed in range(seed, seed + seeds):
        outcome = run_scenario(script, run_seed, config)
        alarms = {cid: alarm.kind.value for cid, alarm in outcome.alarms.items()}
        consistency = check_fork_linearizable(outcome.views, outcome.history.entries)
        detected = bool(alarms) == script.expect_alarm
        failures += 0 if detected else 1
        report = {
            "script": script.name,
            "seed": run_seed,
            "alarms": alarms,
            "expected": script.expect_alarm,
            "views": summarize(consistency),
        }
        if linearizability:
            report["history"] = summarize(
                check_linearizable(outcome.history.entries, search_budget(config)))
        click.echo(json.dumps(report))
    if failures:
        raise click.ClickException(f"{failures} of {seeds} runs did not match the expectation")


def main() -> int:
    """Main application entry point."""
    return cli(obj={})


if __name__ == "__main__":
    sys.exit(main())
