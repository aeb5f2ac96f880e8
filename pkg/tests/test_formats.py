import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lomap.checkpoints import load_model, model_checkpoint, schedule_hash
from lomap.config import UNHASHED_KEYS, config_hash, hash_hex, load_config_file, parse_config_text
from lomap.denoisers import TrainConfig, init_mlp_denoiser
from lomap.diffusion import TrajectoryLayout
from lomap.errors import ConfigurationError, DataFormatError, ParameterError, ShapeError
from lomap.formats import (CheckpointFile, DatasetFile, decode_checkpoint, decode_dataset, decode_index,
                           encode_checkpoint, encode_dataset, encode_index, index_file, read_dataset,
                           restore_index, write_dataset)
from lomap.guidance import init_mse_guide
from lomap.index import build_index, knn
from lomap.stats import energy_distance, energy_test
from lomap.synthworld import Normalizer


def small_dataset(rng, n=6, T=3, sd=2, ad=1):
    traj = rng.standard_normal((n, T * (sd + ad))).astype(np.float32).astype(float)
    rets = rng.standard_normal(n).astype(np.float32).astype(float)
    return DatasetFile(traj, rets, T, sd, ad, config_hash=0xDEADBEEF, seed=42)


# -- datasets ---------------------------------------------------------------------------


def test_dataset_round_trip(rng, tmp_path):
    ds = small_dataset(rng)
    blob = encode_dataset(ds)
    back = decode_dataset(blob)
    np.testing.assert_array_equal(back.trajectories, ds.trajectories)
    np.testing.assert_array_equal(back.returns, ds.returns)
    assert (back.horizon, back.state_dim, back.action_dim) == (3, 2, 1)
    assert back.config_hash == 0xDEADBEEF and back.seed == 42
    assert encode_dataset(back) == blob
    write_dataset(tmp_path / "a" / "d.lmpd", ds)
    assert read_dataset(tmp_path / "a" / "d.lmpd").N == 6


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)),
       st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_dataset_round_trip_property(traj, h, seed):
    n, d = traj.shape
    ds = DatasetFile(traj.astype(float), np.zeros(n), 1, d, 0, h, seed)
    blob = encode_dataset(ds)
    back = decode_dataset(blob)
    assert back.trajectories.astype(np.float32).tobytes() == traj.tobytes()
    assert (back.config_hash, back.seed) == (h, seed)
    assert encode_dataset(back) == blob


def test_dataset_corruption_detected(rng):
    blob = bytearray(encode_dataset(small_dataset(rng)))
    for pos in (0, 5, 30, len(blob) - 1):
        bad = bytearray(blob)
        bad[pos] ^= 0x01
        with pytest.raises(DataFormatError):
            decode_dataset(bytes(bad))
    with pytest.raises(DataFormatError):
        decode_dataset(bytes(blob[:-5]))
    with pytest.raises(DataFormatError):
        decode_dataset(b"LMPD")


def test_wrong_magic_and_version(rng):
    from lomap.formats import checksum

    blob = encode_dataset(small_dataset(rng))
    with pytest.raises(DataFormatError, match="magic"):
        decode_checkpoint(blob)
    body = bytearray(blob[:-8])
    body[4] = 9  # version field
    with pytest.raises(DataFormatError, match="version"):
        decode_dataset(bytes(body) + checksum(bytes(body)))


def test_dataset_layout_mismatch(rng):
    ds = small_dataset(rng)
    ds.horizon = 4
    with pytest.raises(ParameterError):
        encode_dataset(ds)


def test_missing_file(tmp_path):
    with pytest.raises(ParameterError):
        read_dataset(tmp_path / "nope.lmpd")


# -- checkpoints ------------------------------------------------------------------------


def test_checkpoint_round_trip(rng):
    ck = CheckpointFile({"a": [1, 2], "b": {"c": 0.5}}, {"w": rng.standard_normal((3, 2)), "s": np.array(2.0)},
                        7, 8)
    blob = encode_checkpoint(ck)
    back = decode_checkpoint(blob)
    assert back.meta == ck.meta and (back.config_hash, back.seed) == (7, 8)
    assert back.tensors["s"].shape == ()
    np.testing.assert_allclose(back.tensors["w"], ck.tensors["w"], rtol=1e-7)
    assert encode_checkpoint(back) == blob


def test_checkpoint_bad_json():
    from lomap.formats import _Writer

    w = _Writer(b"LMPC", 0, 0)
    w.pack("I", 3)
    w.raw(b"{x]")
    w.pack("I", 0)
    with pytest.raises(DataFormatError, match="JSON"):
        decode_checkpoint(w.finish())


@pytest.mark.parametrize("kind", ["denoiser", "guide"])
def test_model_checkpoint_predictions(rng, linear20, kind):
    layout = TrajectoryLayout(3, 2, 1)
    cfg = TrainConfig(hidden=(16, 16), embed_dim=8)
    if kind == "guide":
        model = init_mse_guide(layout.dim, 20, cfg, rng, y_mean=0.3, y_scale=2.0)
    else:
        model = init_mlp_denoiser(layout.dim, 20, cfg, rng, np.full(layout.dim, 0.1), np.full(layout.dim, 0.5))
        model.attach_schedule(linear20.alpha_bars)
    model.loss_history = [1.0, 0.5]
    norm = Normalizer(np.zeros(3), np.ones(3))
    blob = encode_checkpoint(model_checkpoint(model, linear20, layout, norm, {"level": "flat"}, 5, 6))
    loaded = load_model(decode_checkpoint(blob))
    assert loaded.meta["kind"] == kind and loaded.meta["level"] == "flat"
    assert loaded.layout == layout and loaded.schedule.M == 20
    assert schedule_hash(loaded.schedule) == schedule_hash(linear20)
    np.testing.assert_array_equal(loaded.schedule.alpha_bars, linear20.alpha_bars)
    x = rng.standard_normal((10, layout.dim))
    steps = rng.integers(0, 21, size=10)
    if kind == "guide":
        np.testing.assert_allclose(loaded.model.predict(x, steps), model.predict(x, steps), rtol=1e-4, atol=1e-5)
    else:
        np.testing.assert_allclose(loaded.model.predict_noise(x, steps), model.predict_noise(x, steps),
                                   rtol=1e-4, atol=1e-5)
    assert loaded.model.loss_history == [1.0, 0.5]
    again = model_checkpoint(loaded.model, loaded.schedule, loaded.layout, loaded.normalizer, {"level": "flat"}, 5, 6)
    assert encode_checkpoint(again) == blob


def test_malformed_model_checkpoint():
    with pytest.raises(DataFormatError):
        load_model(CheckpointFile({"kind": "denoiser"}, {}))


# -- retrieval index --------------------------------------------------------------------


def test_index_round_trip_and_restore(rng):
    data = rng.standard_normal((300, 4))
    idx = build_index(data, 8, seed=1)
    blob = encode_index(index_file(idx, 3, 1))
    ix = decode_index(blob)
    assert encode_index(ix) == blob
    back = restore_index(ix, data)
    q = rng.standard_normal((5, 4))
    for row in q:
        a, b = knn(idx, row, 5, n_probe=3), knn(back, row, 5, n_probe=3)
        np.testing.assert_array_equal(a.ids, b.ids)


def test_restore_refuses_other_rows(rng):
    data = rng.standard_normal((100, 3))
    ix = index_file(build_index(data, 4))
    other = data.copy()
    other[7, 1] += 1e-3
    with pytest.raises(DataFormatError):
        restore_index(ix, other)
    with pytest.raises(DataFormatError):
        restore_index(ix, data[:-1])


def test_index_lists_and_list_count(rng):
    from lomap.formats import IndexFile

    ix = IndexFile(np.zeros((2, 2)), [np.array([0, 1]), np.array([2])], 3, 0)
    blob = bytearray(encode_index(ix))
    good = decode_index(bytes(blob))
    assert [l.tolist() for l in good.lists] == [[0, 1], [2]]
    with pytest.raises(ParameterError):
        encode_index(IndexFile(np.zeros((2, 2)), [np.array([0])], 1, 0))


# -- config -----------------------------------------------------------------------------


def test_parse_config_text(tmp_path):
    text = "# run\nseed = 3\nhidden-dims=64,64  # inline\n\n"
    assert parse_config_text(text) == {"seed": "3", "hidden_dims": "64,64"}
    path = tmp_path / "c.cfg"
    path.write_text(text)
    assert load_config_file(path) == {"seed": "3", "hidden_dims": "64,64"}


@pytest.mark.parametrize("text", ["novalue", "=3", "a=1\na=2"])
def test_bad_config_text(text):
    with pytest.raises(ConfigurationError):
        parse_config_text(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ParameterError):
        load_config_file(tmp_path / "none.cfg")


def test_config_hash_ignores_order_and_output_keys():
    a = {"seed": 1, "dims": [4, 16], "command": "gap"}
    b = {"command": "gap", "dims": (4, 16), "seed": 1, "out": "x", "threads": 4, "config": "c"}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})
    assert {"out", "threads", "config"} == UNHASHED_KEYS
    assert len(hash_hex(config_hash(a))) == 16


@given(st.dictionaries(st.text("abcdefgh_", min_size=1, max_size=5), st.integers(), max_size=5))
def test_config_hash_is_order_free(values):
    assert config_hash(values) == config_hash(dict(reversed(list(values.items()))))


# -- energy test ------------------------------------------------------------------------


def test_energy_distance_hand_value():
    # X = {0, 2}, Y = {1}: 2*1 - (0+2+2+0)/4 - 0 = 1
    assert energy_distance([[0.0], [2.0]], [[1.0]]) == pytest.approx(1.0)
    assert energy_distance([[0.0], [1.0]], [[0.0], [1.0]]) == pytest.approx(0.0)


def test_energy_test_power_and_size(rng):
    x = rng.standard_normal((150, 2))
    y = rng.standard_normal((150, 2))
    z = rng.standard_normal((150, 2)) + 0.8
    assert not energy_test(x, y, permutations=199).rejects(0.01)
    res = energy_test(x, z, permutations=199)
    assert res.rejects(0.01) and res.p_value == pytest.approx(1 / 200)


def test_energy_test_errors():
    with pytest.raises(ShapeError):
        energy_test(np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(ParameterError):
        energy_test(np.zeros((1, 2)), np.zeros((3, 2)))
    with pytest.raises(ParameterError):
        energy_test(np.zeros((3, 2)), np.zeros((3, 2)), permutations=0)
