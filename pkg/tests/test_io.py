import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from numpy.testing import assert_array_equal

from crasim import io
from crasim.geometry import ReflectorParams, build_cra_surface


@given(hnp.arrays(np.complex128, hnp.array_shapes(max_dims=3, max_side=5),
                  elements=st.complex_numbers(allow_nan=False, allow_infinity=False)))
@settings(max_examples=30, deadline=None)
def test_complex_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("bin") / "a.bin"
    io.save_complex(path, arr, {"note": "x"})
    back, meta = io.load_complex(path)
    assert back.tobytes() == arr.tobytes()
    assert meta["note"] == "x" and meta["shape"] == list(arr.shape)


def test_binary_layout_is_little_endian_interleaved(tmp_path):
    path = io.save_complex(tmp_path / "z.bin", np.array([1 + 2j, -3.5j]))
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    assert raw.tolist() == [1.0, 2.0, 0.0, -3.5]
    assert io.sidecar_path(path).name == "z.json"


def test_mesh_round_trip(tmp_path):
    mesh = build_cra_surface(ReflectorParams(aperture_size=100, focal_length=100, offset=70, mean_facet_edge=25,
                                             seed=5))
    path = io.write_mesh(mesh, tmp_path / "m.obj", {"config_hash": "abc"})
    text = path.read_text().splitlines()
    assert text[1].startswith("v ") and any(line == "f 1 6 2" for line in text)
    back, meta = io.read_mesh(path)
    assert_array_equal(back.vertices, mesh.vertices)
    assert_array_equal(back.faces, mesh.faces)
    assert_array_equal(back.distortions, mesh.distortions)
    assert back.params == mesh.params and meta["config_hash"] == "abc"


def test_pgm_round_trip(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 0.25j]])
    io.write_pgm(tmp_path / "a.pgm", img)
    back = io.read_pgm(tmp_path / "a.pgm")
    assert back.tolist() == [[0, 128], [255, 64]]
    io.write_pgm(tmp_path / "z.pgm", np.zeros((2, 3)))
    assert not io.read_pgm(tmp_path / "z.pgm").any()
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        io.read_pgm(tmp_path / "bad.pgm")


def test_csv_image(tmp_path):
    io.write_csv_image(tmp_path / "a.csv", np.array([[0.1, 2.0]]))
    assert np.loadtxt(tmp_path / "a.csv", delimiter=",").tolist() == [0.1, 2.0]
