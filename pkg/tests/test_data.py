import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polsarclf import data
from polsarclf.data import (
    ClassModel,
    CoherencyMatrix,
    LabelMap,
    MultiBandImage,
    ScatteringMatrix,
    load_image,
    load_labels,
    multilook_coherency,
    pauli_vector,
    save_image,
    save_labels,
    synth_scene,
)
from polsarclf.errors import (
    DimensionMismatch,
    EmptyImage,
    IoFailure,
    MalformedHeader,
    MissingClassModel,
    NonFiniteValue,
)


def random_image(rng, bands=("L",), h=5, w=4):
    d = rng.normal(size=(len(bands), h, w, 3)) + 1j * rng.normal(size=(len(bands), h, w, 3))
    return MultiBandImage(list(bands), d.astype(np.complex64))


class TestScatteringMatrix:
    def test_reciprocity(self):
        s = ScatteringMatrix(1 + 1j, 0.5j, -2)
        assert s.s_vh == s.s_hv
        assert s.as_array().shape == (3,)

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteValue):
            ScatteringMatrix(float("nan"), 0, 1)

    def test_coherency_matrix_hermitian(self):
        c = CoherencyMatrix(2, 1, 0.5, 0.1 + 0.2j, 0.3j, -0.1)
        t = c.matrix()
        np.testing.assert_array_equal(t, t.conj().T)
        assert CoherencyMatrix.from_matrix(t) == c
        assert c.span == 3.5


class TestPauli:
    def test_surface(self):
        np.testing.assert_allclose(pauli_vector(ScatteringMatrix(1, 0, 1)), [math.sqrt(2), 0, 0], atol=1e-15)

    def test_dihedral(self):
        np.testing.assert_allclose(pauli_vector(ScatteringMatrix(1, 0, -1)), [0, math.sqrt(2), 0], atol=1e-15)

    def test_power_preserved(self, rng):
        s = rng.normal(size=(1000, 3)) + 1j * rng.normal(size=(1000, 3))
        span = np.abs(s[:, 0]) ** 2 + np.abs(s[:, 2]) ** 2 + 2 * np.abs(s[:, 1]) ** 2
        k = pauli_vector(s)
        np.testing.assert_allclose(np.sum(np.abs(k) ** 2, axis=1), span, rtol=1e-12)

    def test_inverse(self, rng):
        s = rng.normal(size=(10, 3)) + 1j * rng.normal(size=(10, 3))
        np.testing.assert_allclose(data.scattering_from_pauli(pauli_vector(s)), s, atol=1e-14)


class TestImageIO:
    def test_single_pixel(self, tmp_path):
        img = MultiBandImage(["L"], np.array([[[[1, 0, 1]]]], dtype=np.complex64))
        save_image(img, tmp_path / "a.plsr")
        back = load_image(tmp_path / "a.plsr")
        assert back.shape == (1, 1)
        t = multilook_coherency(back, "L", 1)
        assert data.span(t)[0, 0] == pytest.approx(2.0, abs=1e-12)
        assert t[0, 0, 0, 0].real == pytest.approx(2.0, abs=1e-12)

    def test_two_band_header(self, tmp_path, rng):
        img = random_image(rng, ("L", "C"), h=2, w=4)
        save_image(img, tmp_path / "b.plsr")
        back = load_image(tmp_path / "b.plsr")
        assert back.bands == ["L", "C"] and back.width == 4 and back.height == 2
        assert back == img

    def test_file_size(self, tmp_path, rng):
        img = random_image(rng, ("L", "P", "C"), h=32, w=32)
        path = tmp_path / "c.plsr"
        save_image(img, path)
        raw = path.read_bytes()
        header_len = raw.index(b"\n", len(data.MAGIC)) + 1
        assert len(raw) == header_len + 32 * 32 * 3 * 6 * 4

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "d.plsr"
        save_image(random_image(rng), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DimensionMismatch):
            load_image(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "e.plsr"
        path.write_bytes(b"NOTPLSR\n{}\n")
        with pytest.raises(MalformedHeader):
            load_image(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "f.plsr"
        path.write_bytes(data.MAGIC + b"{oops\n")
        with pytest.raises(MalformedHeader):
            load_image(path)

    def test_nonfinite_payload(self, tmp_path):
        path = tmp_path / "g.plsr"
        payload = np.array([np.nan, 0, 0, 0, 0, 0], dtype="<f4").tobytes()
        data.write_envelope(path, {"width": 1, "height": 1, "bands": ["L"], "dtype": "f32"}, payload)
        with pytest.raises(NonFiniteValue):
            load_image(path)

    def test_unwritable(self, tmp_path, rng):
        with pytest.raises(IoFailure):
            save_image(random_image(rng), tmp_path / "missing" / "x.plsr")

    def test_too_many_bands(self, tmp_path, rng):
        with pytest.raises(Exception):
            save_image(random_image(rng, ("a", "b", "c", "d")), tmp_path / "x.plsr")

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.just(6)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_roundtrip_bit_exact(self, tmp_path_factory, values):
        img = MultiBandImage([f"b{i}" for i in range(values.shape[0])],
                             values.view(np.complex64).reshape(values.shape[:3] + (3,)))
        path = tmp_path_factory.mktemp("rt") / "x.plsr"
        save_image(img, path)
        back = load_image(path)
        assert back.data.tobytes() == img.data.tobytes()


class TestLabels:
    def test_roundtrip(self, tmp_path, rng):
        lab = LabelMap(rng.integers(0, 4, size=(7, 5)), ["a", "b", "c"])
        save_labels(lab, tmp_path / "l.pgm")
        assert load_labels(tmp_path / "l.pgm") == lab

    def test_pgm_header_with_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n2\n\x01\x02")
        lab = load_labels(path)
        np.testing.assert_array_equal(lab.grid, [[1, 2]])
        assert lab.class_names == ["class1", "class2"]

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            LabelMap(np.array([[3]]), ["a"])

    def test_counts(self):
        lab = LabelMap(np.array([[0, 1, 1], [2, 2, 2]]), ["a", "b"])
        np.testing.assert_array_equal(lab.counts(), [2, 3])
        assert lab.present_classes() == [1, 2]


class TestMultilook:
    def test_window_one_rank_one(self, rng):
        img = random_image(rng)
        t = multilook_coherency(img, "L", 1)
        ev = np.linalg.eigvalsh(t.reshape(-1, 3, 3))
        np.testing.assert_allclose(ev[:, :2], 0, atol=1e-12 * ev[:, 2:].max())

    def test_constant_image(self):
        d = np.broadcast_to(np.array([1 + 1j, 0.2, -0.5j], dtype=np.complex64), (1, 6, 6, 3)).copy()
        t = multilook_coherency(MultiBandImage(["L"], d), "L", 3)
        for y in range(1, 5):
            for x in range(1, 5):
                np.testing.assert_array_equal(t[y, x], t[1, 1])

    def test_matches_brute_force_mean(self, rng):
        img = random_image(rng, h=3, w=3)
        t = multilook_coherency(img, "L", 3)
        k = [pauli_vector(img.pixel("L", y, x)) for y in range(3) for x in range(3)]
        ref = sum(np.outer(v, v.conj()) for v in k) / 9.0
        np.testing.assert_allclose(t[1, 1], ref, atol=1e-12)

    def test_edge_replication(self, rng):
        img = random_image(rng, h=4, w=4)
        t = multilook_coherency(img, "L", 3)
        k = pauli_vector(img.band("L").astype(np.complex128))
        ys = [0, 0, 1]
        xs = [0, 0, 1]
        ref = sum(np.outer(k[y, x], k[y, x].conj()) for y in ys for x in xs) / 9.0
        np.testing.assert_allclose(t[0, 0], ref, atol=1e-12)

    def test_psd(self, rng):
        img = random_image(rng, h=12, w=12)
        for window in (1, 3, 5):
            t = multilook_coherency(img, "L", window)
            ev = np.linalg.eigvalsh(t.reshape(-1, 3, 3))
            assert np.all(ev[:, 0] >= -1e-9 * data.span(t).reshape(-1))

    def test_empty(self):
        with pytest.raises(EmptyImage):
            multilook_coherency(MultiBandImage(["L"], np.zeros((1, 0, 3, 3), np.complex64)), "L")

    def test_even_window(self, rng):
        with pytest.raises(ValueError):
            multilook_coherency(random_image(rng), "L", 2)


class TestSynth:
    def test_surface_only(self):
        layout = LabelMap(np.ones((8, 8), dtype=np.int32), ["s"])
        model = ClassModel("s", {"L": np.diag([1.0, 0, 0]).astype(complex)})
        img, _ = synth_scene([model], layout, seed=3)
        s = img.band("L")
        np.testing.assert_allclose(s[..., 1], 0, atol=1e-6)
        np.testing.assert_allclose(s[..., 0], s[..., 2], atol=1e-6)

    def test_deterministic(self):
        a = synth_scene_fixture(seed=5)
        b = synth_scene_fixture(seed=5)
        assert a[0] == b[0]
        assert not (a[0] == synth_scene_fixture(seed=6)[0])

    def test_law_of_large_numbers(self):
        sig1 = np.diag([1.0, 0.5, 0.2]).astype(complex)
        sig2 = np.diag([1.0, 2.0, 0.2]).astype(complex)
        grid = np.ones((64, 64), dtype=np.int32)
        grid[:, 32:] = 2
        layout = LabelMap(grid, ["a", "b"])
        img, _, coh = synth_scene([ClassModel("a", {"L": sig1}), ClassModel("b", {"L": sig2})],
                                  layout, looks=9, seed=0, return_coherency=True)
        for c, sig in ((1, sig1), (2, sig2)):
            mean = coh[0][grid == c].mean(axis=0)
            assert (grid == c).sum() >= 2000
            np.testing.assert_allclose(np.diag(mean).real, np.diag(sig).real, rtol=0.05)
            off = mean - np.diag(np.diag(mean))
            assert np.abs(off).max() < 0.05 * np.trace(sig).real

    def test_missing_model(self):
        layout = LabelMap(np.array([[1, 2]]), ["a", "b"])
        with pytest.raises(MissingClassModel):
            synth_scene([ClassModel("a", {"L": np.eye(3, dtype=complex)})], layout)

    def test_row_streams_independent_of_height(self):
        models = [ClassModel("a", {"L": np.eye(3, dtype=complex)})]
        small, _ = synth_scene(models, LabelMap(np.ones((4, 5), np.int32), ["a"]), seed=2)
        big, _ = synth_scene(models, LabelMap(np.ones((9, 5), np.int32), ["a"]), seed=2)
        np.testing.assert_array_equal(small.data, big.data[:, :4])

    def test_class_model_validation(self):
        with pytest.raises(ValueError):
            ClassModel("x", {"L": np.diag([1.0, -1.0, 0.5]).astype(complex)})
        with pytest.raises(ValueError):
            ClassModel("x", {"L": np.array([[1, 1j, 0], [1j, 1, 0], [0, 0, 1]])})


def synth_scene_fixture(seed):
    from polsarclf import scenes
    return scenes.five_class_fixture(16, seed=seed)


def test_env_threads(monkeypatch):
    monkeypatch.setenv("POLSAR_THREADS", "3")
    assert data.env_threads() == 3
    monkeypatch.setenv("POLSAR_THREADS", "junk")
    assert data.env_threads() == 0
