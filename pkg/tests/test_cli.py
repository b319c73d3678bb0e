import csv
import json
import subprocess
import sys

import pytest

from percolab.cli import CSV_HEADER, config_digest, main, validate_config
from percolab.errors import ConfigError

CONFIG = {
    "kernel": {"family": "nn", "d": 2},
    "p": {"mode": "fixed", "value": 1.5},
    "observables": [
        {"name": "one_arm", "grid": [2, 4, 8], "samples": 3000},
        {"name": "ball_volume", "grid": [1, 2, 4, 8], "samples": 2000},
        {"name": "size_tail", "label": "tail", "grid": [1, 4, 16], "samples": 2000},
    ],
    "seed": 7,
    "chunk": 700,
}


def write_config(tmp_path, cfg=CONFIG, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_estimate_resume_is_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["estimate", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
    assert main(["estimate", "--config", cfg, "--out", str(b), "--workers", "3", "--max-chunks", "2"]) == 0
    assert json.loads((b / "manifest.json").read_text())["status"] == "partial"
    assert main(["estimate", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert mb["status"] == "complete"
    for label in ("one_arm", "ball_volume", "tail"):
        assert (a / f"{label}.csv").read_bytes() == (b / f"{label}.csv").read_bytes()
        assert ma["outputs"][label]["sha256"] == mb["outputs"][label]["sha256"]
    with open(a / "one_arm.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 4


def test_checkpoint_mismatch_is_a_config_error(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["estimate", "--config", write_config(tmp_path), "--out", str(out), "--max-chunks", "1"]) == 0
    other = json.loads(json.dumps(CONFIG))
    other["seed"] = 8
    assert main(["estimate", "--config", write_config(tmp_path, other, "c2.json"), "--out", str(out)]) == 2
    assert "different configuration" in capsys.readouterr().err
    assert main(["estimate", "--config", write_config(tmp_path, other, "c2.json"), "--out", str(out),
                 "--fresh"]) == 0


@pytest.mark.parametrize("mutate,where", [
    (lambda c: c.update(bogus=1), "<root>"),
    (lambda c: c["p"].pop("value"), "p.value"),
    (lambda c: c["observables"][0].update(name="nope"), "observables.0.name"),
    (lambda c: c["observables"].append(dict(c["observables"][0])), "observables.3.label"),
    (lambda c: c["observables"][2].update(grid=[1.5, 4]), "observables.2.grid"),
    (lambda c: c["kernel"].update(family="lrso"), "kernel"),
    (lambda c: c["p"].update(mode="critical"), "p.r_pair"),
])
def test_schema_errors_name_the_path(mutate, where):
    cfg = json.loads(json.dumps(CONFIG))
    mutate(cfg)
    with pytest.raises(ConfigError, match=f"at {where}"):
        validate_config(cfg)


def test_digest_ignores_execution_settings():
    a = validate_config(CONFIG)
    b = validate_config({**CONFIG, "workers": 4, "out": "elsewhere"})
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(validate_config({**CONFIG, "seed": 1}))


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["estimate", "--config", write_config(tmp_path, {"kernel": {}})]) == 2
    assert main(["kernel-info", "--family", "nn", "-d", "0"]) == 2


def test_kernel_info_and_oracle(capsys):
    assert main(["kernel-info", "--family", "frso", "-d", "2", "-L", "1"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["family"]
    graph = json.dumps({"edges": [[0, 1], [1, 2]], "probs": [0.5, 0.4], "boundary": [2]})
    assert main(["oracle", "--graph", graph, "--event", '{"type": "boundary"}',
                 "--condition", '{"type": "edge-open", "edge": [0, 1]}', "--size-biased"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["P(F)"] == pytest.approx(0.2)
    assert res["P(F|C)"] == pytest.approx(0.4)
    assert res["Q(F)"] == pytest.approx(0.2 * 3 / (1 + 0.5 + 0.2))


def test_fit_and_budget_exit_codes(tmp_path, capsys):
    path = tmp_path / "c.csv"
    path.write_text(",".join(CSV_HEADER) + "\n" + "".join(f"{x},{x ** 0.5},{0.01 * x ** 0.5},100\n"
                                                            for x in (2, 4, 8, 16)))
    assert main(["fit", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)[str(path)]["exponent"] == pytest.approx(0.5)
    short = tmp_path / "s.csv"
    short.write_text(",".join(CSV_HEADER) + "\n1,1,0.1,10\n2,2,0.1,10\n")
    assert main(["fit", str(short)]) == 3
    assert main(["backbone", "--family", "nn", "-d", "2", "--p", "0.0", "--r-grid", "1,2"]) == 4


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "percolab", "kernel-info", "--family", "nn", "-d", "3"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["d"] == 3


def test_estimate_from_flags(tmp_path, capsys):
    out = tmp_path / "f"
    argv = ["estimate", "--family", "lrso", "-d", "1", "-L", "2", "--alpha", "0.5", "--observable", "long-edge",
            "--grid", "2,4", "--samples", "500", "--p", "0.9", "--out", str(out)]
    assert main(argv) == 0
    with open(out / "long_edge.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3 and all(0 <= float(r[1]) <= 1 for r in rows[1:])
    assert main(argv[:-2] + ["--k", "50", "--out", str(tmp_path / "g")]) == 2
    assert main(["estimate", "--family", "nn", "-d", "1", "--observable", "one-arm"]) == 2
