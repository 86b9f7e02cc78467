import io
import logging
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from frf import __version__
from frf.cli import BANNER, run
from frf.structure import load_definition

SVG_NS = "{http://www.w3.org/2000/svg}"

INTERVAL = """\
name: segment
m: 2
b: 2
gluing:
  - [1, 1, 0, 1]
  - [2, 2, 0, 2]
  - [1, 2, 2, 1]
"""


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    d = tmp_path / "cache"
    monkeypatch.setenv("FRF_CACHE_DIR", str(d))
    monkeypatch.chdir(tmp_path)
    return d


def frf(*argv):
    buf = io.StringIO()
    code = run(list(argv), stdout=buf)
    return code, buf.getvalue()


def field(text, key):
    line = next(x for x in text.splitlines() if x.startswith(key + ":"))
    return line.split(":", 1)[1].strip()


def test_header_carries_provenance():
    code, out = frf("renorm", "sg", "--seed", "9")
    assert code == 0
    assert out.startswith(f"frf {__version__}\n")
    assert BANNER in out
    assert f"hash={load_definition('sg').digest()}" in out
    assert "seed: 9" in out


@pytest.mark.parametrize(
    "name,rho,regular",
    [("sg", 5 / 3, "true"), ("pci9", 53 / 50, "true"), ("pci6a", 5 / 4, "true"), ("pci6b", 4 / 5, "false")],
)
def test_renorm(name, rho, regular):
    code, out = frf("renorm", name)
    assert code == 0
    assert float(field(out, "rho")) == pytest.approx(rho, rel=1e-12)
    assert field(out, "regular") == regular
    assert float(field(out, "residual")) < 1e-12


def test_renorm_with_fixed_point_weights():
    code, out = frf("renorm", "sg", "--weights", "1.6666666666666667,1.6666666666666667,1.6666666666666667")
    assert code == 0
    assert field(out, "converged") == "true"


def test_renorm_wrong_weights_is_numerical_failure():
    code, out = frf("renorm", "sg", "--weights", "2,2,2")
    assert code == 2
    assert "not a fixed point" in out


@pytest.mark.parametrize("name", ["sg", "vicsek"])
def test_validate_passes(name):
    code, out = frf("validate", name, "--level", "3")
    assert code == 0
    assert "result: pass" in out


def test_validate_merged_boundary_fails(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(INTERVAL + "  - [1, 1, 2, 2]\n")
    code, out = frf("validate", str(p), "--level", "2")
    assert code == 1


def test_malformed_definition(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(INTERVAL.replace("[1, 2, 2, 1]", "[1, 2, 2]"))
    code, out = frf("validate", str(p))
    assert code == 1
    assert out == ""
    assert "bad.yaml:7:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate", "sg"], ["renorm", "sg", "--level", "-1"], ["renorm", "sg", "--weights", "a,b"],
     ["embed", "sg", "--weights", "1,2"], ["embed", "pci9", "--level", "12"], ["zstats", "sg", "--samples", "0"]],
)
def test_usage_errors(argv):
    assert frf(*argv)[0] == 3


def test_missing_file():
    assert frf("validate", "no/such/file.yaml")[0] == 1


def test_embed_svg_well_formed(tmp_path):
    code, out = frf("embed", "sg", "--level", "6", "--svg", "--out", "res")
    assert code == 0
    svg = tmp_path / "res" / "embed-sg-L6.svg"
    root = ET.parse(svg).getroot()
    assert root.tag == SVG_NS + "svg"
    assert len(root.findall(f".//{SVG_NS}polygon")) == 3**6
    coords = (tmp_path / "res" / "embed-sg-L6.txt").read_text().splitlines()
    assert len(coords) == 3 * (3**6 + 1) // 2
    assert (tmp_path / "res" / "embed-sg-L6.report.txt").read_text() == out


def test_embed_interval_degenerate():
    code, out = frf("embed", "interval", "--level", "5")
    assert code == 0
    assert "degenerate hull" in out
    assert Path("embed-interval-L5.txt").exists()


def test_embed_vicsek_svg_polygons(tmp_path):
    frf("embed", "vicsek", "--level", "3", "--svg", "--out", "v")
    root = ET.parse(tmp_path / "v" / "embed-vicsek-L3.svg").getroot()
    assert len(root.findall(f".//{SVG_NS}polygon")) == 5**3


def test_embed_deterministic_and_cached(tmp_path, cache_dir):
    a = frf("embed", "sg", "--level", "5", "--svg", "--out", "a")
    assert any(cache_dir.iterdir())
    b = frf("embed", "sg", "--level", "5", "--svg", "--out", "b")
    c = frf("embed", "sg", "--level", "5", "--svg", "--out", "c", "--no-cache")
    assert a == b == c
    for name in ("embed-sg-L5.svg", "embed-sg-L5.txt"):
        blobs = {(tmp_path / d / name).read_bytes() for d in "abc"}
        assert len(blobs) == 1


def test_zstats_deterministic():
    a = frf("zstats", "sg", "--depth", "8", "--samples", "200", "--seed", "7")
    b = frf("zstats", "sg", "--depth", "8", "--samples", "200", "--seed", "7")
    c = frf("zstats", "sg", "--depth", "8", "--samples", "200", "--seed", "8")
    assert a[0] == 0 and a == b
    assert a[1] != c[1]


def test_measure_null_cells():
    code, out = frf("measure", "vicsek", "--level", "4")
    assert code == 0
    assert "null cells: none" not in out
    code, out = frf("measure", "sg", "--level", "4")
    assert "null cells: none" in out


def test_laplacian_and_energy_reports():
    code, out = frf("laplacian", "sg", "--level", "5")
    assert code == 0
    assert "level" in out
    code, out = frf("energy", "interval", "--level", "6")
    assert code == 0
    assert "holds: true" in out


def test_definition_edit_changes_hash(tmp_path, cache_dir):
    p = tmp_path / "seg.yaml"
    p.write_text(INTERVAL)
    _, a = frf("embed", str(p), "--level", "3")
    n_before = len(list(cache_dir.iterdir()))
    p.write_text(INTERVAL.replace("segment", "segment2"))
    _, b = frf("embed", str(p), "--level", "3")
    assert field(a, "fractal") != field(b, "fractal")
    assert len(list(cache_dir.iterdir())) > n_before


def test_corrupt_cache_recomputed(cache_dir, caplog):
    _, good = frf("embed", "sg", "--level", "3")
    for entry in cache_dir.iterdir():
        entry.write_bytes(b"not a zip file")
    with caplog.at_level(logging.WARNING):
        code, again = frf("embed", "sg", "--level", "3")
    assert code == 0
    assert again == good
    assert "corrupt cache entry" in caplog.text


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "frf", "renorm", "interval"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "rho: 2" in res.stdout
