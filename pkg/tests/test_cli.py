import csv
import json

import numpy as np
import pytest
from PIL import Image

from mrfrecon.bench import relative_error
from mrfrecon.cli import config_hash, main
from mrfrecon.core import read_array, write_array


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["build-dict", "--L", "60", "--seed", "1", "--out", str(d / "dict")]) == 0
    assert main(["simulate", "--dict", str(d / "dict"), "--nx", "16", "--ny", "16", "--R", "4",
                 "--noise", "0.001", "--coils", "2", "--out", str(d / "data")]) == 0
    return d


def test_build_dict_outputs(work, tmp_path):
    _, meta = read_array(work / "dict" / "dictionary.mrfa")
    assert meta["n_atoms"] == 5366
    V, _ = read_array(work / "dict" / "basis.mrfa")
    assert V.shape == (60, 10)
    assert main(["build-dict", "--L", "60", "--seed", "1", "--out", str(tmp_path)]) == 0
    for f in ("dictionary.mrfa", "lut.mrfa", "basis.mrfa", "schedule.mrfa"):
        assert (tmp_path / f).read_bytes() == (work / "dict" / f).read_bytes()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == json.loads((work / "dict" / "manifest.json").read_text())["config_hash"]


def test_build_dict_bad_grid(tmp_path):
    (tmp_path / "g.json").write_text('{"t1": [10], "t2": [500]}')
    assert main(["build-dict", "--L", "5", "--grid", str(tmp_path / "g.json"), "--out", str(tmp_path / "o")]) == 1
    assert main(["build-dict", "--L", "5", "--grid", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 1


def test_recon_gfb_and_usage_errors(work, capsys):
    out = work / "gfb"
    assert main(["recon", "--data", str(work / "data"), "--dict", str(work / "dict"),
                 "--method", "gfb-mrf", "--out", str(out)]) == 0
    for f in ("t1.mrfa", "t2.mrfa", "pd.mrfa", "diagnostics.jsonl", "manifest.json"):
        assert (out / f).exists()
    rows = [json.loads(r) for r in (out / "diagnostics.jsonl").read_text().splitlines()]
    assert set(rows[0]) == {"iter", "alpha", "fidelity", "backtracks", "wall_ms"}
    with pytest.raises(SystemExit) as exc:
        main(["recon", "--data", str(work / "data"), "--dict", str(work / "dict"),
              "--method", "nonsense", "--out", str(work / "x")])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_recon_missing_input(work):
    assert main(["recon", "--data", str(work / "nothing"), "--dict", str(work / "dict"),
                 "--method", "classical", "--out", str(work / "y")]) == 1


def test_lambda_zero_igp_equals_air(work):
    common = ["--data", str(work / "data"), "--dict", str(work / "dict"), "--lambda", "0", "--step", "fsz"]
    assert main(["recon", *common, "--method", "igp-mrf-01", "--out", str(work / "igp0")]) == 0
    assert main(["recon", *common, "--method", "air-mrf", "--out", str(work / "air0")]) == 0
    for f in ("t1.mrfa", "t2.mrfa", "pd.mrfa"):
        assert (work / "igp0" / f).read_bytes() == (work / "air0" / f).read_bytes()


def test_eval(work, tmp_path):
    truth = work / "data" / "truth"
    assert main(["eval", "--maps", str(truth), "--truth", str(truth), "--out", str(tmp_path / "e.csv")]) == 0
    row = next(csv.DictReader((tmp_path / "e.csv").open()))
    assert float(row["err_t1"]) == 0 and float(row["err_t2"]) == 0
    scaled = tmp_path / "scaled"
    scaled.mkdir()
    for p in ("t1", "t2"):
        write_array(scaled / f"{p}.mrfa", 1.1 * read_array(truth / f"{p}.mrfa")[0])
    assert main(["eval", "--maps", str(scaled), "--truth", str(truth), "--roi", str(truth / "labels.mrfa"),
                 "--out", str(tmp_path / "s.csv")]) == 0
    row = next(csv.DictReader((tmp_path / "s.csv").open()))
    assert float(row["err_t1"]) == pytest.approx(0.1, abs=1e-14)
    assert any(k.endswith("_t1_nstd") for k in row)
    main(["recon", "--data", str(work / "data"), "--dict", str(work / "dict"), "--method", "classical",
          "--out", str(tmp_path / "cl")])
    assert main(["eval", "--maps", str(tmp_path / "cl"), "--truth", str(truth), "--out", str(tmp_path / "c.csv")]) == 0
    mask = read_array(truth / "mask.mrfa")[0].astype(bool)
    ref = relative_error(read_array(tmp_path / "cl" / "t1.mrfa")[0], read_array(truth / "t1.mrfa")[0], mask)
    assert float(next(csv.DictReader((tmp_path / "c.csv").open()))["err_t1"]) == ref


def test_render(tmp_path):
    write_array(tmp_path / "c.mrfa", np.full((5, 7), 3.0))
    assert main(["render", "--map", str(tmp_path / "c.mrfa"), "--range", "0:10", "--out", str(tmp_path / "a.png")]) == 0
    img = np.asarray(Image.open(tmp_path / "a.png"))
    assert img.shape == (5, 7, 3) and img.dtype == np.uint8
    assert np.all(img == img[0, 0])
    main(["render", "--map", str(tmp_path / "c.mrfa"), "--range", "0:10", "--out", str(tmp_path / "b.png")])
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    write_array(tmp_path / "r.mrfa", np.array([[-5.0, 20.0]]))
    main(["render", "--map", str(tmp_path / "r.mrfa"), "--range", "0:10", "--out", str(tmp_path / "r.png")])
    px = np.asarray(Image.open(tmp_path / "r.png"))
    # out-of-range values clamp to the range ends
    write_array(tmp_path / "e.mrfa", np.array([[0.0, 10.0]]))
    main(["render", "--map", str(tmp_path / "e.mrfa"), "--range", "0:10", "--out", str(tmp_path / "e.png")])
    assert np.array_equal(px, np.asarray(Image.open(tmp_path / "e.png")))
    assert main(["render", "--map", str(tmp_path / "c.mrfa"), "--range", "4:4", "--out", str(tmp_path / "x.png")]) == 2
    (tmp_path / "junk.mrfa").write_bytes(b"XXXXjunk")
    assert main(["render", "--map", str(tmp_path / "junk.mrfa"), "--range", "0:1", "--out", str(tmp_path / "y.png")]) == 1


def test_sweep_command(tmp_path):
    spec = {"nx": 16, "ny": 16, "lengths": [40], "noise": [0.001], "R": 4, "kmax": 3, "k": 5,
            "methods": ["classical", "gfb-mrf"], "timing": False}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert main(["sweep", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "a")]) == 0
    assert main(["sweep", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "results.csv").read_text()
    assert len(text.strip().splitlines()) == 3
    assert text == (tmp_path / "b" / "results.csv").read_text()
    assert (tmp_path / "a" / "cells" / "gfb-mrf_L40_n0.001" / "t1.mrfa").exists()
    (tmp_path / "u.json").write_text(json.dumps({**spec, "methods": ["nonsense", "classical"]}))
    assert main(["sweep", "--spec", str(tmp_path / "u.json"), "--out", str(tmp_path / "u")]) == 0
    assert "failed" in (tmp_path / "u" / "results.csv").read_text()
    (tmp_path / "f.json").write_text(json.dumps({**spec, "methods": ["nonsense"]}))
    assert main(["sweep", "--spec", str(tmp_path / "f.json"), "--out", str(tmp_path / "f")]) == 1


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
