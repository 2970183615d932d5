import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from crasim.config import ConfigError, ExperimentConfig, load_config, parse_config, write_config


def test_empty_file_gives_reference_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    cfg = load_config(path)
    assert cfg == ExperimentConfig()
    p = cfg.reflector_params()
    assert (p.aperture_size, p.focal_length, p.offset, p.mean_facet_edge, p.max_distortion) == \
        (500.0, 500.0, 350.0, 16.4, 0.8)
    assert cfg.roi_grid().n_voxels == 140_000
    assert len(cfg.feed_ports()) == 8
    a = cfg.aperture_grid()
    assert (a.x_extent, a.z_extent) == (880.0, 640.0) and a.center[1] - p.center[1] == 900.0
    assert (cfg.admm.lambda_r, cfg.admm.block_count) == (20.0, 40)
    assert (cfg.postproc.na, cfg.postproc.tau, cfg.noise.snr_db) == (4, 0.35, 30.0)


def test_thirty_frequencies_inclusive():
    f = parse_config("[frequencies]\ncount = 30\nstart_ghz = 71\nstop_ghz = 76\n").frequencies_ghz()
    assert f[0] == 71 and f[-1] == 76
    assert_allclose(np.diff(f), 5 / 29, rtol=1e-12)


def test_negative_distortion_is_a_validation_error():
    with pytest.raises(ConfigError, match="max_distortion"):
        parse_config("[reflector]\nmax_distortion = -1\n")


def test_every_problem_is_listed():
    text = "[bogus]\n[admm]\nrho = -1\nfoo = 2\n[frequencies]\nstart_ghz = 60\n[postproc]\nna = 3\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    problems = info.value.problems
    assert len(problems) == 5
    joined = "\n".join(problems)
    for needle in ("[bogus]", "'foo'", "71-76 GHz", "rho", "na"):
        assert needle in joined


def test_out_of_band_allowed_when_requested():
    cfg = parse_config("[frequencies]\nstart_ghz = 60\nstop_ghz = 61\nallow_outside_band = yes\n")
    assert cfg.frequencies_ghz()[0] == 60


def test_bad_value_types_reported():
    with pytest.raises(ConfigError, match="roi.*extent"):
        parse_config("[roi]\nextent = 1, 2\n")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config("[postproc]\nrenormalize = maybe\n")


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/file.ini")


def test_target_outside_roi_rejected():
    with pytest.raises(ConfigError, match="target"):
        parse_config("[roi]\nextent = 60, 30, 60\n")


def test_round_trip_and_hash(tmp_path):
    cfg = parse_config("[admm]\nlambda_r = 0.5\n[target]\nshape = point_set\npoints = 0 0 0; 6 0 6\n"
                       "reflectivity = 1-2j\n[noise]\nsnr_db = inf\n")
    path = tmp_path / "c.ini"
    write_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    assert again.hash() == cfg.hash()
    assert len(cfg.hash()) == 16 and int(cfg.hash(), 16) >= 0
    assert math.isinf(again.noise.snr_db)
    assert again.target_spec().reflectivity == 1 - 2j


def test_stage_hashes_track_dependencies():
    base = ExperimentConfig()
    noisy = parse_config("[noise]\nsnr_db = 10\n")
    assert base.stage_hash("calibrate") == noisy.stage_hash("calibrate")
    assert base.stage_hash("simulate") != noisy.stage_hash("simulate")
    assert base.hash() != noisy.hash()
    reseeded = parse_config("[seeds]\ngeometry = 3\n")
    assert base.stage_hash("geometry") != reseeded.stage_hash("geometry")
    post = parse_config("[postproc]\ntau = 0.5\n")
    assert base.stage_hash("reconstruct") == post.stage_hash("reconstruct")


def test_explicit_port_positions():
    cfg = parse_config("[ports]\ntx_positions = 0 0 0; 5 0 0\nrx_positions = 0 0 5\n")
    ports = cfg.feed_ports()
    assert [p.role for p in ports] == ["tx", "tx", "rx"]
    assert_allclose(ports[1].position, [355, 0, 0])
