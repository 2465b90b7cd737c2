"""
Integration tests for the command line
"""

import json
import time

import pytest
from click.testing import CliRunner

from src.core.crypto import KeyRing, SignatureScheme
from src.main import cli


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, temp_config_file, *args):
    return runner.invoke(cli, ["--config", str(temp_config_file), "--log-level", "ERROR", *args],
                         obj={})


def json_lines(output):
    return [json.loads(line) for line in output.splitlines() if line.startswith("{")]


@pytest.mark.integration
class TestKeygen:
    """Test cases for key generation."""

    def test_mac_keys(self, runner, temp_config_file, tmp_path):
        """MAC key files hold every client and the genesis signatures."""
        out = tmp_path / "keys.json"
        result = invoke(runner, temp_config_file, "keygen", "--clients", "3", "--out", str(out))
        assert result.exit_code == 0, result.output
        keyring = KeyRing.load(out)
        assert keyring.scheme is SignatureScheme.MAC
        assert keyring.client_ids == [0, 1, 2, 3]
        assert keyring.genesis is not None

    def test_public_key_mode(self, runner, temp_config_file, tmp_path):
        out = tmp_path / "pk.json"
        result = invoke(runner, temp_config_file, "keygen", "--mode", "public-key",
                        "--clients", "2", "--out", str(out))
        assert result.exit_code == 0, result.output
        assert KeyRing.load(out).scheme is SignatureScheme.PUBLIC_KEY

    def test_unknown_hash(self, runner, temp_config_file, tmp_path):
        result = invoke(runner, temp_config_file, "keygen", "--clients", "2",
                        "--hash", "md4", "--out", str(tmp_path / "k.json"))
        assert result.exit_code != 0


@pytest.mark.integration
class TestScenarioCommand:
    """Test cases for running attack scripts from the command line."""

    def test_named_script(self, runner, temp_config_file):
        """Scripts are found by name in the scenario directory."""
        result = invoke(runner, temp_config_file, "scenario", "--script", "signature-strip",
                        "--seeds", "3")
        assert result.exit_code == 0, result.output
        runs = json_lines(result.output)
        assert [run["seed"] for run in runs] == [0, 1, 2]
        assert all(run["alarms"] for run in runs)
        assert all(run["views"]["outcome"] == "ok" for run in runs)

    def test_script_path(self, runner, temp_config_file, scenario_dir):
        result = invoke(runner, temp_config_file, "scenario", "--script",
                        str(scenario_dir / "split-view-fork.json"), "--seed", "5")
        assert result.exit_code == 0, result.output
        assert json_lines(result.output)[0]["seed"] == 5

    def test_undetected_expectation_fails(self, runner, temp_config_file, tmp_path):
        """A script that expects an alarm on an honest run exits with an error."""
        script = tmp_path / "honest.json"
        script.write_text(json.dumps({"name": "honest", "workload": {"clients": 2,
                                                                     "ops_per_client": 3}}))
        result = invoke(runner, temp_config_file, "scenario", "--script", str(script))
        assert result.exit_code != 0
        assert "did not match" in result.output

    def honest_script(self, tmp_path):
        script = tmp_path / "steps.json"
        script.write_text(json.dumps({
            "name": "steps", "expect_alarm": False,
            "workload": {"steps": {"1": ["put a x1", "get a"], "2": ["put b x2", "get b"]}},
        }))
        return script

    def test_linearizability_report(self, runner, temp_config_file, tmp_path):
        """--linearizability adds a search result for the whole history."""
        result = invoke(runner, temp_config_file, "scenario", "--script",
                        str(self.honest_script(tmp_path)), "--linearizability")
        assert result.exit_code == 0, result.output
        [run] = json_lines(result.output)
        assert run["history"]["outcome"] == "ok"
        assert run["views"]["outcome"] == "ok"

    def test_search_budget_from_config(self, runner, test_config, tmp_path):
        """harness.search_budget bounds the linearizability search."""
        test_config["harness"]["search_budget"] = 0
        config_file = tmp_path / "config.json"
        config_file.write_text(json.dumps(test_config))
        result = invoke(runner, config_file, "scenario", "--script",
                        str(self.honest_script(tmp_path)), "--linearizability")
        assert result.exit_code == 0, result.output
        [run] = json_lines(result.output)
        assert run["history"]["outcome"] == "inconclusive"

    def test_missing_script(self, runner, temp_config_file):
        result = invoke(runner, temp_config_file, "scenario", "--script", "no-such-attack")
        assert result.exit_code != 0
        assert "Cannot read attack script" in result.output


@pytest.mark.integration
class TestBenchCommand:
    """Test cases for the simulated benchmark."""

    def test_simulated_run(self, runner, temp_config_file, tmp_path):
        """A simulated run prints a summary and writes the CSV."""
        csv_path = tmp_path / "bench.csv"
        result = invoke(runner, temp_config_file, "bench", "--mode", "sim", "--clients", "3",
                        "--objects", "8", "--object-size", "64", "--op-count", "10",
                        "--theta", "0.5", "--csv", str(csv_path))
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert summary["operations"] == 30
        assert set(summary["success_rate"]) == {"get", "put"}
        assert csv_path.read_text().splitlines()[0].startswith("op_kind")

    def test_invalid_theta(self, runner, temp_config_file, tmp_path):
        result = invoke(runner, temp_config_file, "bench", "--theta", "1.0",
                        "--csv", str(tmp_path / "b.csv"))
        assert result.exit_code != 0
        assert "theta" in result.output


@pytest.mark.integration
class TestObjectCommands:
    """Test cases for put/get/list against a live server."""

    @pytest.fixture
    def live_server(self, runner, temp_config_file, tmp_path, test_config):
        from src.core.adict import Adict
        from src.protocol.chain import build_genesis
        from src.protocol.messages import MessageCodec
        from src.protocol.runtime import ServerRuntime
        from src.protocol.server import AipServer

        keys = tmp_path / "keys.json"
        assert invoke(runner, temp_config_file, "keygen", "--clients", "2",
                      "--out", str(keys)).exit_code == 0
        keyring = KeyRing.load(keys)
        ads = Adict(keyring.hash_fn)
        server = AipServer(ads, keyring, build_genesis(keyring, ads), test_config)
        runtime = ServerRuntime(server, MessageCodec(ads), test_config)
        runtime.start()
        host, port = runtime.serve_tcp("127.0.0.1", 0, 1 << 20).address
        yield runtime, keys, f"{host}:{port}"
        runtime.stop()

    def client_args(self, tmp_path, keys, address, client_id):
        return ["--server", address, "--client-id", str(client_id), "--keys", str(keys),
                "--backend", "filesystem", "--cos-root", str(tmp_path / "cos"),
                "--state", str(tmp_path / f"client-{client_id}.json")]

    def test_put_get_list(self, runner, temp_config_file, tmp_path, live_server):
        """Objects stored by one client are read by another through the shared store."""
        runtime, keys, address = live_server
        server = runtime.server

        result = invoke(runner, temp_config_file, "put", "notes/a.txt", "--value", "hello",
                        *self.client_args(tmp_path, keys, address, 1))
        assert result.exit_code == 0, result.output
        assert "stored notes/a.txt (5 bytes)" in result.output
        deadline = time.monotonic() + 5
        while server.applied < server.invoked and time.monotonic() < deadline:
            time.sleep(0.01)

        result = invoke(runner, temp_config_file, "get", "notes/a.txt",
                        *self.client_args(tmp_path, keys, address, 2))
        assert result.exit_code == 0, result.output
        assert result.output.endswith("hello")

        result = invoke(runner, temp_config_file, "list",
                        *self.client_args(tmp_path, keys, address, 2))
        assert result.exit_code == 0, result.output
        assert "notes/a.txt" in result.output
        assert (tmp_path / "client-1.json").exists()

    def test_missing_object(self, runner, temp_config_file, tmp_path, live_server):
        _, keys, address = live_server
        result = invoke(runner, temp_config_file, "get", "nothing",
                        *self.client_args(tmp_path, keys, address, 1))
        assert result.exit_code == 1
        assert "no object named nothing" in result.output

    def test_put_needs_one_source(self, runner, temp_config_file, tmp_path, live_server):
        _, keys, address = live_server
        result = invoke(runner, temp_config_file, "put", "k",
                        *self.client_args(tmp_path, keys, address, 1))
        assert result.exit_code != 0
        assert "exactly one of --value and --file" in result.output
