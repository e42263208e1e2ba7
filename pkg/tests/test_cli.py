import json

import pytest

from earid import cli
from earid.protocol import CredentialStore


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen", "--subjects", "10", "--scans", "12", "--enroll", "4", "--seed", "9", "--attacks",
                     "--out", str(root / "data")]) == 0
    return root


def test_parse_trials():
    assert cli.parse_trials("0,2,4-6") == [0, 2, 4, 5, 6]
    with pytest.raises(Exception):
        cli.parse_trials(",")


def test_gen_writes_manifest(data_dir):
    manifest = json.loads((data_dir / "data" / "manifest.json").read_text())
    assert manifest["config"]["n_subjects"] == 10 and manifest["config"]["attacks"]


def test_features_json(data_dir, capsys):
    assert cli.main(["features", "--in", str(data_dir / "data"), "--subject", "S001", "--scans", "0-3"]) == 0
    coeffs = json.loads(capsys.readouterr().out)
    assert len(coeffs) == 256


def test_enroll_and_auth(data_dir, capsys):
    d = str(data_dir / "data")
    store = str(data_dir / "store")
    helper = str(data_dir / "helper.bin")
    assert cli.main(["enroll", "--in", d, "--subject", "S002", "--gallery", "rest", "--store", store,
                     "--out-key", str(data_dir / "key.bin"), "--out-helper", helper]) == 0
    assert CredentialStore(store).users() == ["S002"]
    assert cli.main(["auth", "--in", d, "--subject", "S002", "--helper", helper, "--store", store]) == 0
    assert "ACCEPT" in capsys.readouterr().out
    assert cli.main(["auth", "--in", d, "--subject", "S003", "--claim", "S002", "--scans", "4,5",
                     "--helper", helper, "--store", store]) == 1
    assert "REJECT" in capsys.readouterr().out


def test_enroll_gallery_validation(data_dir):
    d = str(data_dir / "data")
    args = ["--out-key", str(data_dir / "k"), "--out-helper", str(data_dir / "h")]
    with pytest.raises(SystemExit):
        cli.main(["enroll", "--in", d, "--subject", "S000", "--gallery", "S000,S001", *args])
    with pytest.raises(SystemExit):
        cli.main(["enroll", "--in", d, "--subject", "S000", "--gallery", "S001,X9", *args])


def test_eval_attack_drift_json(data_dir):
    d = str(data_dir / "data")
    with pytest.warns(UserWarning):
        assert cli.main(["eval", "--in", d, "--trials", "2", "--json", str(data_dir / "eval.json")]) == 0
    rep = json.loads((data_dir / "eval.json").read_text())
    assert rep["rates"]["threshold_bits"] == 19 and rep["protocol_mismatches"] == 0
    with pytest.warns(UserWarning):
        assert cli.main(["attack", "--in", d, "--trials", "1", "--ecc", "bch127",
                         "--json", str(data_dir / "attack.json")]) == 0
    assert json.loads((data_dir / "attack.json").read_text())["ecc"] == "bch127"
    with pytest.warns(UserWarning):
        assert cli.main(["drift", "--in", d, "--periods", "2", "--attempts", "2", "--mode", "session",
                         "--json", str(data_dir / "drift.json")]) == 0
    assert len(json.loads((data_dir / "drift.json").read_text())["periods"]) == 2


def test_strict_exit_code(tmp_path):
    # heavy wear jitter breaks the accuracy targets
    d = str(tmp_path / "bad")
    assert cli.main(["gen", "--subjects", "8", "--scans", "12", "--enroll", "4", "--jitter", "8", "--out", d]) == 0
    with pytest.warns(UserWarning):
        assert cli.main(["eval", "--in", d, "--trials", "2", "--strict"]) == cli.EXIT_TARGET_MISS


def test_unknown_subject(data_dir):
    with pytest.raises(SystemExit):
        cli.main(["features", "--in", str(data_dir / "data"), "--subject", "S999", "--scans", "0"])
