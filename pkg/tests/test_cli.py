import json
import subprocess
import sys

import numpy as np
import pytest

from dispvox.cli import main
from dispvox.pointset import read_points, write_correspondences


def run(*args):
    return subprocess.run([sys.executable, "-m", "dispvox.cli", *map(str, args)],
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    d = tmp_path_factory.mktemp("seq")
    assert main(["synth", str(d / "s"), "--n-states", "8", "--grid-res", "11", "--seed", "1"]) == 0
    return d / "s"


def test_synth_writes_sequence(seq):
    files = sorted(seq.iterdir())
    assert len(files) == 8 and len(read_points(files[0])) == 121


def test_synth_binary(tmp_path):
    main(["synth", str(tmp_path), "--n-states", "2", "--grid-res", "3", "--format", "binary"])
    assert (tmp_path / "state_0000.vxpt").read_bytes()[:4] == b"VXPT"


def test_perturb_noise_and_chunk(seq, tmp_path):
    main(["perturb", str(seq / "state_0000.txt"), str(tmp_path / "n.txt"), "--noise-ratio", "0.5"])
    ps = read_points(tmp_path / "n.txt")
    assert len(ps) == 121 + 60 and ps.labels.sum() == 60
    main(["perturb", str(seq / "state_0000.txt"), str(tmp_path / "c.vxpt"), "--outlier", "chunk",
          "--format", "binary"])
    assert len(read_points(tmp_path / "c.vxpt")) < 121


def test_register_cpd_with_trace_and_rmse(seq, tmp_path, capsys):
    write_correspondences(np.stack([np.arange(121)] * 2, 1), tmp_path / "gt.txt")
    main(["register", str(seq / "state_0000.txt"), str(seq / "state_0003.txt"), str(tmp_path / "o.txt"),
          "--method", "cpd", "--trace", str(tmp_path / "t.csv"), "--correspondences",
          str(tmp_path / "gt.txt")])
    out = dict(line.split(",") for line in capsys.readouterr().out.split())
    assert float(out["rmse"]) < float(out["rmse_input"])
    assert (tmp_path / "t.csv").read_text().startswith("iter,objective\n0,")


def test_eval_writes_tables(seq, tmp_path):
    main(["eval", "--data", str(seq), "--method", "identity,nricp", "--n-pairs", "3",
          "--noise-ratio", "0,0.5", "--output", str(tmp_path / "t.csv"),
          "--pairs-output", str(tmp_path / "p.csv")])
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 4
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 1 + 12


def test_train_and_register_with_network(seq, tmp_path):
    ck = tmp_path / "net.vxpp"
    main(["train", "--data", str(seq), "--checkpoint", str(ck), "--q", "8", "--de-iterations", "2",
          "--refine-iterations", "1", "--log", str(tmp_path / "log.csv")])
    assert ck.read_bytes()[:4] == b"VXPP"
    assert len((tmp_path / "log.csv").read_text().splitlines()) == 4
    main(["register", str(seq / "state_0000.txt"), str(seq / "state_0001.txt"), str(tmp_path / "o.txt"),
          "--method", "dispvoxnet", "--checkpoint", str(ck)])
    assert len(read_points(tmp_path / "o.txt")) == 121


def test_bench_csv(capsys):
    main(["bench", "--method", "nricp", "--sizes", "30,60", "--repeats", "1"])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "n_points,seconds" and lines[1].startswith("30,")


@pytest.mark.parametrize("args,kind", [
    (["register", "missing.txt", "missing2.txt", "o.txt", "--method", "cpd"], "FileNotFoundError"),
    (["eval", "--method", "dispvoxnet", "--n-pairs", "1"], "MissingCheckpointError"),
    (["perturb", "x", "y", "--outlier", "cube"], "UsageError"),
    (["bench", "--sizes", "10,5", "--method", "nricp"], "ValueError"),
])
def test_errors_are_machine_readable(tmp_path, args, kind):
    res = run(*args)
    assert res.returncode != 0
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"] == kind and err["message"]
