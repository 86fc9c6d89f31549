import subprocess
import sys

import pytest

from seqpas import cli
from seqpas import experiments as ex
from seqpas.source_models import load_model

TINY = """\
[experiment]
seed = 3

[rateloss]
payload_bits = 64, 128
trials = 100

[roundtrip]
payload_bits = 64
trials = 5

[train]
steps = 2
batch_size = 2
sequence_length = 32
surrogate = kernel

[airsweep]
launch_powers_dbm = 0
symbols_per_frame = 256
frames = 1
n_bootstrap = 5
adm_rate_loss_trials = 100
adm_payload_bits = 256
"""

COMMANDS = ["rateloss", "adm-roundtrip", "ess-info", "train", "airsweep"]


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return str(path)


@pytest.mark.parametrize("command", COMMANDS)
def test_subcommand_output_is_byte_stable(command, tiny, tmp_path):
    outputs = []
    for run in range(2):
        out = tmp_path / f"{command}-{run}.csv"
        assert cli.main([command, "--config", tiny, "--seed", "11", "--out", str(out)]) == cli.EXIT_OK
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[0].count(b"\n") >= 2


def test_seed_changes_output(tiny, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli.main(["rateloss", "--config", tiny, "--seed", "1", "--out", str(a)])
    cli.main(["rateloss", "--config", tiny, "--seed", "2", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_train_writes_model(tiny, tmp_path):
    out = tmp_path / "trace.csv"
    assert cli.main(["train", "--config", tiny, "--objective", "L", "--out", str(out)]) == cli.EXIT_OK
    assert load_model(str(tmp_path / "trace.model")).alphabet_size == 16
    assert out.read_text().splitlines()[0].startswith("step,temperature,loss")


def test_airsweep_reports_all_schemes(tiny, tmp_path):
    out = tmp_path / "air.csv"
    cli.main(["airsweep", "--config", tiny, "--out", str(out)])
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == list(ex.AIR_CSV_COLUMNS)
    assert {ln.split(",")[0] for ln in lines[1:]} == {"uniform", "ess", "ess+sel", "seq-npas", "seq-npas++"}


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["rateloss", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG


def test_invalid_config_exit_code(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[fiber]\nspan_length_km = -1\n")
    assert cli.main(["ess-info", "--config", str(path)]) == cli.EXIT_CONFIG


def test_missing_model_file_exit_code(tiny, tmp_path):
    path = tmp_path / "m.ini"
    path.write_text(TINY + "model_seq_npas = nowhere.model\n")
    assert cli.main(["airsweep", "--config", str(path), "--out", str(tmp_path / "a.csv")]) == cli.EXIT_CONFIG


def test_invariant_failure_exit_code(tiny, tmp_path, monkeypatch):
    monkeypatch.setattr(ex, "run_adm_roundtrip", lambda cfg, seed: [(64, 5, 1, 40.0)])
    assert cli.main(["adm-roundtrip", "--config", tiny, "--out", str(tmp_path / "r.csv")]) == cli.EXIT_INVARIANT


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        cli.main(["rateloss", "--seed", "-1"])


def test_gradcheck_command(tmp_path):
    out = tmp_path / "g.csv"
    assert cli.main(["gradcheck", "--out", str(out)]) == cli.EXIT_OK
    assert out.read_text().splitlines()[0] == "term,max_rel_error,tolerance"


def test_module_entry_point(tiny, tmp_path):
    out = tmp_path / "ess.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "seqpas", "ess-info", "--config", tiny, "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "k=62" in proc.stdout
