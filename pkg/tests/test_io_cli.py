import json

import numpy as np
import pytest

from epr_spatial import io
from epr_spatial.cli import main
from epr_spatial.exceptions import DataError
from epr_spatial.scoring import roc_auc

TINY = {"sim": {"grid_n": 5, "n_regions": 9, "cells_per_axis": 15, "r": 4, "n_replicates": 1},
        "reps": 200, "iters": 400, "burnin": 200}


def test_dataset_roundtrip(tmp_path, tiny_data):
    ds, _ = tiny_data
    io.write_dataset(tmp_path, ds, {"seed": 1})
    back = io.read_dataset(tmp_path)
    np.testing.assert_array_equal(back.points, ds.points)
    np.testing.assert_array_equal(back.z3, ds.z3)
    np.testing.assert_array_equal(back.z1, ds.z1)
    np.testing.assert_array_equal(back.x1, ds.x1)
    np.testing.assert_array_equal(back.z2, ds.z2)
    assert [r.cells for r in back.regions] == [r.cells for r in ds.regions]
    assert list(back.point_ids) == [str(i) for i in ds.point_ids]


def _rewrite_points(path, edit):
    p = path / "points.csv"
    lines = p.read_text().splitlines()
    lines = edit(lines)
    p.write_text("\n".join(lines) + "\n")


def test_zero_inflation_rejected_with_row_id(tmp_path, tiny_data):
    ds, _ = tiny_data
    io.write_dataset(tmp_path, ds, {})
    i = int(np.flatnonzero(ds.z3 == 0)[0])
    rid = ds.point_ids[i]

    def edit(lines):
        head = lines[1].split(",")
        row = lines[2 + i].split(",")
        row[head.index("z1")] = "1.5"
        lines[2 + i] = ",".join(row)
        return lines

    _rewrite_points(tmp_path, edit)
    with pytest.raises(DataError) as e:
        io.read_dataset(tmp_path)
    assert str(rid) in str(e.value) and e.value.row_id == str(rid)


def test_truncated_declared_counts(tmp_path, tiny_data):
    ds, _ = tiny_data
    io.write_dataset(tmp_path, ds, {})
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta.update(declared_points=80_817, declared_regions=3_109)
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DataError):
        io.read_dataset(tmp_path)
    meta["truncated"] = True
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    assert io.read_dataset(tmp_path).points.shape[0] == 25


def test_archive_roundtrip_and_tamper(tmp_path):
    a = {"zeta": np.arange(6.0).reshape(2, 3), "theta": np.ones((2, 3))}
    io.write_archive(tmp_path / "fit", a, {"kind": "epr"})
    back, meta = io.read_archive(tmp_path / "fit")
    assert meta["kind"] == "epr"
    np.testing.assert_array_equal(back["zeta"], a["zeta"])
    np.save(tmp_path / "fit" / "zeta.npy", np.zeros((2, 3)))
    with pytest.raises(DataError):
        io.read_archive(tmp_path / "fit")


def test_table_format(tmp_path):
    io.write_table(tmp_path / "t.csv", ["a", "b"], [[1, float("nan")], [0.1, 2]], "t/1", {"seed": 3})
    tags, header, rows = io.read_table(tmp_path / "t.csv")
    assert tags["schema"] == "t/1" and tags["seed"] == "3"
    assert header == ["a", "b"] and rows == [["1", ""], ["0.10000000000000001", "2"]]
    assert io.config_hash({"a": 1, "b": 2}) == io.config_hash({"b": 2, "a": 1})


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    c = ["--config", str(cfg)]
    assert main(["simulate", *c, "--seed", "7", "--out", str(root / "data")]) == 0
    assert main(["fit-epr", *c, "--seed", "8", "--data", str(root / "data"),
                 "--out", str(root / "epr")]) == 0
    assert main(["fit-mcmc", *c, "--seed", "9", "--data", str(root / "data"),
                 "--out", str(root / "mcmc")]) == 0
    for fit in ("epr", "mcmc"):
        assert main(["predict", *c, "--data", str(root / "data"), "--fit", str(root / fit),
                     "--out", str(root / f"pred_{fit}")]) == 0
        assert main(["score", *c, "--data", str(root / "data"), "--fit", str(root / fit),
                     "--out", str(root / f"score_{fit}")]) == 0
    return root, c


def test_pipeline_outputs(pipeline):
    root, _ = pipeline
    for f in ("points.csv", "regions.csv", "cells.csv", "meta.json", "truth_points.csv"):
        assert (root / "data" / f).exists()
    assert (root / "mcmc" / "gelman_rubin.csv").exists()
    tags, header, rows = io.read_table(root / "score_epr" / "report.csv")
    metrics = {r[0]: float(r[1]) for r in rows}
    assert {"auc_y3", "mspe_y1", "crps_y2", "hd_y3", "interval_score_y2"} <= set(metrics)
    assert all(np.isfinite(v) for v in metrics.values())
    assert "config_hash" in tags


def test_roc_input_reproduces_auc(pipeline):
    root, _ = pipeline
    _, _, rows = io.read_table(root / "pred_epr" / "roc_input.csv")
    auc = roc_auc([float(r[1]) for r in rows], [int(r[2]) for r in rows]).auc
    _, _, rep = io.read_table(root / "score_epr" / "report.csv")
    assert auc == pytest.approx(dict((r[0], float(r[1])) for r in rep)["auc_y3"], abs=1e-15)


def test_fit_thread_invariance(pipeline, monkeypatch):
    root, c = pipeline
    assert main(["fit-epr", *c, "--seed", "8", "--threads", "3", "--data", str(root / "data"),
                 "--out", str(root / "epr3")]) == 0
    assert io.tree_digest(root / "epr") == io.tree_digest(root / "epr3")
    monkeypatch.setenv("EPR_THREADS", "2")
    assert main(["fit-mcmc", *c, "--seed", "9", "--data", str(root / "data"),
                 "--out", str(root / "mcmc2")]) == 0
    assert io.tree_digest(root / "mcmc") == io.tree_digest(root / "mcmc2")


def test_simulate_deterministic(pipeline):
    root, c = pipeline
    assert main(["simulate", *c, "--seed", "7", "--out", str(root / "data2")]) == 0
    assert io.tree_digest(root / "data") == io.tree_digest(root / "data2")


def test_compare_outputs(pipeline, monkeypatch):
    root, c = pipeline
    assert main(["compare", *c, "--seed", "1", "--reps", "2", "--out", str(root / "cmp")]) == 0
    tags, header, rows = io.read_table(root / "cmp" / "report.csv")
    assert tags["partial"] == "0" and len(rows) == 14
    _, _, reps = io.read_table(root / "cmp" / "replicates.csv")
    assert len(reps) == 2
    monkeypatch.setenv("EPR_THREADS", "2")
    assert main(["compare", *c, "--seed", "1", "--reps", "2", "--out", str(root / "cmp2")]) == 0
    assert io.tree_digest(root / "cmp") == io.tree_digest(root / "cmp2")


@pytest.mark.parametrize("argv,status,code", [
    (["bogus"], 2, "CONFIG"),
    ([], 2, "CONFIG"),
    (["simulate", "--out", "x"], 2, "CONFIG"),
    (["fit-epr", "--seed", "1", "--out", "x", "--data", "/nonexistent"], 2, "CONFIG"),
])
def test_error_exit_codes(argv, status, code, capsys):
    assert main(argv) == status
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error code={code} status={status}")


def test_bad_data_exit_code(tmp_path, tiny_data, capsys):
    ds, _ = tiny_data
    io.write_dataset(tmp_path / "d", ds, {}, extra={"r": 4})
    (tmp_path / "d" / "points.csv").write_text("# schema=points/1\nid,x\n1,0.5\n")
    assert main(["fit-epr", "--seed", "1", "--data", str(tmp_path / "d"), "--out",
                 str(tmp_path / "o")]) == 3
    assert capsys.readouterr().err.startswith("error code=DATA status=3")


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"sedd": 1}')
    assert main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2
