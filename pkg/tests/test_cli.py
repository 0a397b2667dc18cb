import json
import subprocess
import sys

import pytest

from crdtmerge.cli import main
from crdtmerge.reporting import strip_timings
from crdtmerge.state import state_deserialize
from crdtmerge.tensor import Tensor

FAST = ["--shape", "4x4", "--nodes", "4"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_phase1_table(capsys):
    code, out, _ = run(capsys, "phase1")
    assert code == 0
    assert "weight_average" in out and "evolutionary_merge" in out


def test_phase2_json_deterministic(capsys):
    _, a, _ = run(capsys, "phase2", "--format", "json", "--trials", "3")
    _, b, _ = run(capsys, "phase2", "--format", "json", "--trials", "3")
    assert json.loads(a) == json.loads(b)


def test_converge_json_modulo_timings(capsys):
    code, a, _ = run(capsys, "converge", *FAST, "--orderings", "3", "--format", "json")
    _, b, _ = run(capsys, "converge", *FAST, "--orderings", "3", "--format", "json")
    assert code == 0
    assert strip_timings(json.loads(a)) == strip_timings(json.loads(b))


def test_env_seed_changes_output(capsys, monkeypatch):
    _, a, _ = run(capsys, "converge", *FAST, "--orderings", "1", "--format", "json")
    monkeypatch.setenv("CRDT_MERGE_SEED", "123")
    _, b, _ = run(capsys, "converge", *FAST, "--orderings", "1", "--format", "json")
    _, c, _ = run(capsys, "converge", *FAST, "--orderings", "1", "--format", "json", "--seed", "123")
    assert strip_timings(json.loads(a)) != strip_timings(json.loads(b))
    assert strip_timings(json.loads(b)) == strip_timings(json.loads(c))
    monkeypatch.setenv("CRDT_MERGE_SEED", "abc")
    assert run(capsys, "phase2", "--trials", "1")[0] == 2


@pytest.mark.parametrize(
    "argv,code",
    [
        (["converge", "--strategy", "adarank", *FAST], 4),
        (["phase1", "--strategy", "nope"], 4),
        (["converge", "--nodes", "1"], 2),
        (["partition", "--nodes", "10", "--partitions", "3"], 2),
        (["bench", "--ladder", "1,2"], 2),
        (["phase1", "--t", "1.5"], 2),
        (["phase1", "--shape", "0x4"], 2),
        (["frobnicate"], 2),
        ([], 2),
        (["state", "inspect", "/nonexistent/file.cms"], 3),
    ],
)
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_csv_and_output_file(capsys, tmp_path):
    out = tmp_path / "r" / "bench.csv"
    code, stdout, _ = run(capsys, "bench", "--ladder", "2,3", "--shape", "2x2", "--format", "csv", "--output", str(out))
    assert code == 0 and stdout == ""
    lines = out.read_text().splitlines()
    assert len(lines) >= 3 and "," in lines[0]


def test_plot_dir(capsys, tmp_path):
    for argv in (
        ["phase1", "--trials", "2"],
        ["converge", *FAST, "--orderings", "2"],
        ["partition", "--shape", "4x4", "--nodes", "4", "--partitions", "2"],
        ["sweep", *FAST],
        ["bench", "--ladder", "2,3", "--shape", "2x2"],
    ):
        d = tmp_path / argv[0]
        assert run(capsys, *argv, "--plot-dir", str(d))[0] == 0
        pngs = list(d.glob("*.png"))
        assert pngs and all(p.read_bytes()[:4] == b"\x89PNG" for p in pngs)


def test_state_workflow(capsys, tmp_path):
    a, b = tmp_path / "a.cms", tmp_path / "b.cms"
    code, out, _ = run(capsys, "state", "add", str(a), "--owner", "alice", "--values", "1,2,3,4", "--shape", "2x2")
    assert code == 0
    h1 = out.split()[0]
    tfile = tmp_path / "t.cmt"
    tfile.write_bytes(Tensor([2, 2], [3, 2, 1, 0]).canonical_bytes())
    assert run(capsys, "state", "add", str(b), "--owner", "bob", "--tensor", str(tfile))[0] == 0
    assert run(capsys, "state", "add", str(tmp_path / "c.cms"), "--values", "1")[0] == 2

    code, out, _ = run(capsys, "state", "merge", str(a), str(b))
    assert code == 0
    root = out.strip()
    assert run(capsys, "state", "hash", str(a))[1].strip() == root
    assert state_deserialize(a.read_bytes()).root.hex() == root

    code, out, _ = run(capsys, "state", "inspect", str(a), "--format", "json")
    info = json.loads(out)
    assert info["owner"] == "alice" and len(info["visible"]) == 2

    res = tmp_path / "out.cmt"
    code, out, _ = run(capsys, "state", "resolve", str(a), "--out", str(res))
    assert code == 0
    merged = Tensor.from_bytes(res.read_bytes())
    assert merged.shape == (2, 2) and merged.to_list() == [2.0] * 4
    assert out.strip() == merged.content_hash().hex()

    assert run(capsys, "state", "remove", str(a), h1)[0] == 0
    assert run(capsys, "state", "remove", str(a), h1)[0] == 3
    assert run(capsys, "state", "remove", str(a), "zz")[0] == 2
    assert len(state_deserialize(a.read_bytes()).visible()) == 1
    assert "visible: 1" in run(capsys, "state", "inspect", str(a))[1]


def test_state_errors(capsys, tmp_path):
    junk = tmp_path / "junk.cms"
    junk.write_bytes(b"CMS1garbage")
    assert run(capsys, "state", "hash", str(junk))[0] == 3
    empty = tmp_path / "e.cms"
    run(capsys, "state", "add", str(empty), "--owner", "x", "--values", "1")
    h = json.loads(run(capsys, "state", "inspect", str(empty), "--format", "json")[1])["visible"][0]
    run(capsys, "state", "remove", str(empty), h)
    assert run(capsys, "state", "resolve", str(empty), "--out", str(tmp_path / "o"))[0] == 3
    assert run(capsys, "state", "resolve", str(empty), "--strategy", "zzz", "--out", str(tmp_path / "o"))[0] == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "crdtmerge", "-v", "bench", "--ladder", "2", "--shape", "2", "-v"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout
