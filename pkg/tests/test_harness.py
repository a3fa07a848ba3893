import csv

import numpy as np
import pytest

from segrecon import cli
from segrecon.experiment import (
    DEFAULT_GRIDS,
    METRICS_HEADER,
    ExperimentSpec,
    SpecError,
    Variant,
    load_spec,
    parse_spec,
    run_experiment,
)
from segrecon.config import ReconConfig
from segrecon.geometry import Geometry, back_project
from segrecon.metrics import SNR_CAP, band_energy_fraction, snr_db, spectrum_magnitude
from segrecon.simulate import PhantomSpec, load_grayscale, make_phantom, save_raw

# -- metrics ---------------------------------------------------------------------


def test_snr_examples():
    rng = np.random.default_rng(0)
    ref = rng.random((8, 8))
    assert snr_db(ref, ref) == SNR_CAP
    e = rng.normal(size=ref.shape)
    e *= 0.1 * np.linalg.norm(ref) / np.linalg.norm(e)
    assert snr_db(ref, ref + e) == pytest.approx(20.0, abs=1e-12)
    est = ref + 0.3 * rng.random(ref.shape)
    assert snr_db(3.7 * ref, 3.7 * est) == pytest.approx(snr_db(ref, est), rel=1e-12)
    # origin sensitivity: a shared offset changes the value
    assert snr_db(ref + 5, est + 5) != pytest.approx(snr_db(ref, est))
    with pytest.raises(ValueError):
        snr_db(ref, ref[:4])


def test_spectrum_examples():
    const = spectrum_magnitude(np.full((16, 16), 2.0))
    dc = const[8, 8]
    assert dc == 1.0
    others = np.delete(const.ravel(), 8 * 16 + 8)
    assert np.all(others < 1e-8 * dc)

    rng = np.random.default_rng(1)
    s = spectrum_magnitude(rng.random((15, 15)))
    np.testing.assert_allclose(s, s[::-1, ::-1], atol=1e-6)

    geom = Geometry(64, (0.0,))
    sino = np.zeros(geom.sinogram_shape)
    sino[0] = rng.random(geom.detector_count)
    stripe = back_project(sino, geom)
    assert band_energy_fraction(spectrum_magnitude(stripe), 1) >= 0.9


# -- spec files ------------------------------------------------------------------

SPEC = """
[experiment]
name = tiny
phantom = shepp_logan
size = 24
modified = true
output = out
seed = 3

[condition]
kind = sparse_view
values = 6, 12

[variants]
list = tv, tv+global

[config]
alpha = 1.0
n_iter = 8
n_stop = 8
n_c = 4
n_g = 2
"""


def test_variant_parse():
    assert Variant.parse("TV+global") == Variant("tv", True)
    assert Variant.parse("qggmrf").label == "qggmrf"
    with pytest.raises(SpecError):
        Variant.parse("lasso")
    with pytest.raises(SpecError):
        Variant.parse("tv+local")


def test_parse_spec(tmp_path):
    spec = parse_spec(SPEC, tmp_path)
    assert spec.name == "tiny" and spec.values == ("6", "12")
    assert spec.config.alpha == 1.0 and spec.config.n_iter == 8
    assert spec.output == str(tmp_path / "out")
    assert [v.label for v in spec.variants] == ["tv", "tv+global"]


def test_spec_defaults_and_errors(tmp_path):
    text = "[experiment]\nname=x\n[condition]\nkind=limited_angle\n"
    spec = parse_spec(text)
    assert spec.values == DEFAULT_GRIDS["limited_angle"]
    assert spec.condition_geometry_args("150") == (15.0, 165.0, None, None)
    assert spec.condition_geometry_args("15:165") == (15.0, 165.0, None, None)
    assert DEFAULT_GRIDS["sparse_view"] == tuple(str(v) for v in range(30, 181, 30))
    with pytest.raises(SpecError):
        parse_spec("[experiment]\nname=x\n[condition]\nkind=foo\n")
    with pytest.raises(SpecError):
        parse_spec("[experiment]\nname=x\n[condition]\nkind=sparse_view\nvalues=0\n")
    with pytest.raises(SpecError):
        parse_spec("[experiment]\nname=x\n[condition]\nkind=limited_angle\nvalues=90:40\n")
    with pytest.raises(SpecError):
        parse_spec("[experiment]\nname=x\n[condition]\nkind=sparse_view\n[config]\nbogus=1\n")
    with pytest.raises(SpecError):
        parse_spec("[condition]\nkind=sparse_view\n")
    with pytest.raises(SpecError):
        parse_spec("not an ini file")


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_experiment_outputs_and_determinism(tmp_path):
    (tmp_path / "tiny.spec").write_text(SPEC)
    spec = load_spec(tmp_path / "tiny.spec")
    rows = run_experiment(spec)
    assert len(rows) == 4 and all(r.error is None for r in rows)
    out = tmp_path / "out"
    table = _rows(out / "metrics.csv")
    assert tuple(table[0]) == METRICS_HEADER and len(table) == 5
    for r in rows:
        img = load_grayscale(r.image)
        assert img.data.shape == (24, 24)
        trace = _rows(r.trace)
        assert trace[0][0] == "iteration" and len(trace) == 9
    err = load_grayscale(out / "tv_global_6_error.pgm")
    assert err.meta["bit_depth"] == 8

    first = [row[:4] for row in table]
    images = {r.image: load_grayscale(r.image).data for r in rows}
    run_experiment(spec)
    assert [row[:4] for row in _rows(out / "metrics.csv")] == first
    for path, data in images.items():
        np.testing.assert_array_equal(load_grayscale(path).data, data)


def test_empty_variant_list(tmp_path):
    spec = ExperimentSpec("none", "sparse_view", ("30",), (), output=str(tmp_path / "e"))
    assert run_experiment(spec) == []
    assert _rows(tmp_path / "e" / "metrics.csv") == [list(METRICS_HEADER)]


def test_failed_case_is_recorded_and_others_continue(tmp_path, monkeypatch):
    import segrecon.experiment as exp

    real = exp.reconstruct

    def flaky(g, geom, cfg, **kw):
        if cfg.regularizer.kind == "qggmrf":
            raise RuntimeError("boom")
        return real(g, geom, cfg, **kw)

    monkeypatch.setattr(exp, "reconstruct", flaky)
    img = tmp_path / "img.raw"
    save_raw(img, make_phantom(PhantomSpec("disk", 20, radius=6)))
    spec = ExperimentSpec(
        "mixed", "low_dose", ("1e4", "1e5"), (Variant("tv", False), Variant("qggmrf", True)),
        phantom=None, input_path=str(img), n_views=10, output=str(tmp_path / "m"),
        config=ReconConfig(n_iter=3, n_stop=3),
    )
    rows = run_experiment(spec)
    assert [r.error is None for r in rows] == [True, False, True, False]
    assert "boom" in rows[1].error
    assert len(_rows(tmp_path / "m" / "metrics.csv")) == 3
    assert len(_rows(tmp_path / "m" / "errors.csv")) == 3


def test_unreadable_input_is_a_spec_error(tmp_path):
    bad = tmp_path / "img.raw"
    save_raw(bad, np.ones((20, 21)))
    spec = ExperimentSpec("x", "sparse_view", ("4",), (Variant("tv", False),), phantom=None,
                          input_path=str(bad), output=str(tmp_path / "o"))
    with pytest.raises(SpecError, match="square"):
        run_experiment(spec)


def test_low_dose_rows_use_noise(tmp_path):
    text = SPEC.replace("kind = sparse_view", "kind = low_dose\nviews = 12").replace("values = 6, 12", "values = 1e2, 1e6")
    text = text.replace("list = tv, tv+global", "list = tv")
    rows = run_experiment(parse_spec(text, tmp_path))
    assert rows[0].snr_db < rows[1].snr_db


# -- command line ------------------------------------------------------------------


def test_cli_snr_identical(tmp_path, capsys):
    p = tmp_path / "img.raw"
    save_raw(p, np.random.default_rng(2).random((8, 8)))
    assert cli.main(["snr", str(p), str(p)]) == 0
    assert capsys.readouterr().out.strip() == "999.0"


def test_cli_pipeline_disk(tmp_path, capsys):
    d = str(tmp_path)
    assert cli.main(["phantom", "--kind", "disk", "--size", "64", "--radius", "20", "-o", f"{d}/disk.raw"]) == 0
    assert cli.main(["project", f"{d}/disk.raw", "--views", "180", "--angles", "0:180", "-o", f"{d}/sino.raw"]) == 0
    assert cli.main(["noise", f"{d}/sino.raw", "--i0", "1e5", "-o", f"{d}/noisy.raw"]) == 0
    args = ["recon", f"{d}/sino.raw", "--views", "180", "--angles", "0:180", "--reg", "tv", "--global", "off",
            "--iters", "50", "--alpha", "1.9", "-o", f"{d}/rec.raw", "--trace", f"{d}/trace.csv"]
    assert cli.main(args) == 0
    assert (tmp_path / "rec.raw").exists() and len(_rows(tmp_path / "trace.csv")) == 51
    capsys.readouterr()
    assert cli.main(["snr", f"{d}/disk.raw", f"{d}/rec.raw"]) == 0
    assert float(capsys.readouterr().out) > 20.0
    # geometry is also recoverable from the sinogram header
    assert cli.main(["recon", f"{d}/noisy.raw", "--iters", "3", "-o", f"{d}/rec2.pgm"]) == 0
    assert cli.main(["spectrum", f"{d}/rec.raw", "-o", f"{d}/spec.pgm"]) == 0
    assert load_grayscale(tmp_path / "spec.pgm").data.max() == 1.0


def test_cli_experiment(tmp_path, capsys):
    (tmp_path / "fig.spec").write_text(SPEC.replace("values = 6, 12", "values = 6"))
    assert cli.main(["experiment", str(tmp_path / "fig.spec")]) == 0
    header = _rows(tmp_path / "out" / "metrics.csv")[0]
    assert header == ["experiment", "variant", "param", "snr_db", "seconds"]


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["snr", str(tmp_path / "a.raw"), str(tmp_path / "b.raw")]) != 0
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["recon", "x.raw", "--global", "maybe", "-o", "y.raw"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit):
        cli.main(["nonsense"])
    p = tmp_path / "img.raw"
    save_raw(p, make_phantom(PhantomSpec("disk", 16, radius=4)))
    assert cli.main(["recon", str(p), "-o", str(tmp_path / "o.raw")]) != 0
    (tmp_path / "bad.spec").write_text("[experiment]\n[condition]\nkind = nope\n")
    assert cli.main(["experiment", str(tmp_path / "bad.spec")]) != 0
