import numpy as np
import pytest

from segrecon.config import ReconConfig
from segrecon.geometry import Geometry, forward_project
from segrecon.metrics import snr_db
from segrecon.simulate import (
    SHEPP_LOGAN,
    ImageFormatError,
    NoiseSpec,
    PhantomSpec,
    ellipse_value_at,
    load_grayscale,
    make_phantom,
    save_pgm,
    save_raw,
    simulate_lowdose,
)
from segrecon.solver import reconstruct


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec("cube")
    with pytest.raises(ValueError):
        PhantomSpec(size=8)
    with pytest.raises(ValueError):
        PhantomSpec("disk", 32, radius=-1)
    with pytest.raises(ValueError):
        PhantomSpec("custom_ellipses", 32, ellipses=((0, 0, 0, 1, 0, 1),))
    with pytest.raises(ValueError):
        NoiseSpec(0)


def test_disk_radius_zero_is_empty():
    assert not make_phantom(PhantomSpec("disk", 32, radius=0)).any()


@pytest.mark.parametrize("modified", [False, True])
def test_centre_value_resolution_independent(modified):
    col = 6 if modified else 5
    table = [(e[0], e[1], e[2], e[3], e[4], e[col]) for e in SHEPP_LOGAN]
    expected = max(ellipse_value_at(0.0, 0.0, table), 0.0)
    for n in (64, 512):
        spec = PhantomSpec("shepp_logan", n + 1, modified=modified)  # odd size puts a pixel on the centre
        img = make_phantom(spec)
        assert img[n // 2, n // 2] == pytest.approx(expected, abs=1e-12)


def test_shepp_logan_range_and_orientation():
    img = make_phantom(PhantomSpec("shepp_logan", 128))
    assert img.min() >= 0 and img.max() <= 2
    mod = make_phantom(PhantomSpec("shepp_logan", 128, modified=True))
    assert mod.max() == pytest.approx(1.0)
    # the large top blob (y = +0.35) sits in the upper half
    top = mod[:64].sum()
    assert ellipse_value_at(0.0, 0.35, [(e[0], e[1], e[2], e[3], e[4], e[6]) for e in SHEPP_LOGAN]) == pytest.approx(0.3)
    assert mod[int(64 - 0.35 * 64), 64] == pytest.approx(0.3)
    assert top > 0


def test_custom_ellipses():
    spec = PhantomSpec("custom_ellipses", 32, ellipses=((0, 0, 0.5, 0.5, 0, 1.0), (0, 0, 0.2, 0.2, 0, -2.0)))
    img = make_phantom(spec)
    assert img[16, 16] == 0.0  # clamped
    assert img[16, 10] == 1.0  # x = -0.34


def test_pgm_roundtrip_and_all_white(tmp_path):
    rng = np.random.default_rng(0)
    f = rng.random((13, 17))
    p = tmp_path / "a.pgm"
    save_pgm(p, f, window=(0.0, 1.0))
    back = load_grayscale(p)
    assert back.meta["bit_depth"] == 8 and back.meta["width"] == 17
    assert np.abs(back.data - f).max() <= 1 / 255
    save_pgm(p, np.ones((4, 4)), window=(0.0, 1.0))
    np.testing.assert_array_equal(load_grayscale(p).data, 1.0)
    p16 = tmp_path / "b.pgm"
    save_pgm(p16, f, 16, window=(0.0, 1.0))
    out = load_grayscale(p16)
    assert out.meta["bit_depth"] == 16 and np.abs(out.data - f).max() <= 1 / 65535


def test_raw_roundtrip_exact(tmp_path):
    f = np.random.default_rng(1).random((9, 11)).astype(np.float32).astype(np.float64)
    p = tmp_path / "x.raw"
    save_raw(p, f, note="hi")
    back = load_grayscale(p)
    np.testing.assert_array_equal(back.data, f)
    assert back.meta["note"] == "hi"


def test_loader_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_grayscale(tmp_path / "nope.pgm")
    bad = tmp_path / "x.png"
    bad.write_bytes(b"\x89PNG")
    with pytest.raises(ImageFormatError, match="unsupported"):
        load_grayscale(bad)
    trunc = tmp_path / "t.pgm"
    trunc.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageFormatError, match="truncated"):
        load_grayscale(trunc)
    ascii_pgm = tmp_path / "p2.pgm"
    ascii_pgm.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ImageFormatError):
        load_grayscale(ascii_pgm)
    raw = tmp_path / "r.raw"
    raw.write_bytes(b"\x00" * 8)
    with pytest.raises(ImageFormatError, match="sidecar"):
        load_grayscale(raw)
    raw.with_suffix(".hdr").write_text("width 3\nheight 3\n")
    with pytest.raises(ImageFormatError, match="bytes"):
        load_grayscale(raw)


def test_pgm_comments_in_header(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(load_grayscale(p).data, [[0.0, 1.0]])


def test_lodopab_sized_input_reconstructs(tmp_path):
    n = 362
    f = make_phantom(PhantomSpec("shepp_logan", n, modified=True))
    p = tmp_path / "lung.pgm"
    save_pgm(p, f, window=(0.0, 1.0))
    img = load_grayscale(p).data
    geom = Geometry.uniform(n, 6)
    out, rec = reconstruct(forward_project(img, geom), geom, ReconConfig(n_iter=2, n_stop=0, n_g=0))
    assert out.shape == (n, n) and len(rec) == 2


def test_blank_measurement_is_unbiased():
    g = np.zeros((1, 100_000))
    i0 = 1e6
    noisy = simulate_lowdose(g, NoiseSpec(i0, seed=3))
    sigma = 1 / np.sqrt(i0)  # delta method: std of -ln(Y / I0)
    assert abs(noisy.mean()) < 3 * sigma / np.sqrt(g.size) + 1e-7


def test_noise_level_matches_dose():
    f = make_phantom(PhantomSpec("shepp_logan", 256))
    geom = Geometry.uniform(256, 180).scaled(1 / 256)
    g = forward_project(f, geom)
    assert snr_db(g, simulate_lowdose(g, NoiseSpec(1e7))) == pytest.approx(60, abs=3)
    assert snr_db(g, simulate_lowdose(g, NoiseSpec(1e3))) == pytest.approx(20, abs=3)


def test_noise_determinism():
    g = np.abs(np.random.default_rng(4).normal(size=(5, 40)))
    a = simulate_lowdose(g, NoiseSpec(1e3, 7))
    b = simulate_lowdose(g, NoiseSpec(1e3, 7))
    c = simulate_lowdose(g, NoiseSpec(1e3, 8))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_zero_counts_are_clamped():
    out = simulate_lowdose(np.full((1, 10), 50.0), NoiseSpec(10.0))
    np.testing.assert_allclose(out, np.log(10.0))
    with pytest.raises(ValueError):
        simulate_lowdose(np.array([[np.nan]]), NoiseSpec(10.0))
