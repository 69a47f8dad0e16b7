import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glucolens import dataio, forest, nn
from glucolens.dataio import FormatError, ManifestRow

tmp_ok = settings(max_examples=120, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


# --------------------------------------------------------------------- PGM


def test_pgm_header_and_endpoints(tmp_path):
    img = np.zeros((128, 128))
    img[0, 0] = 1.0
    p = tmp_path / "a.pgm"
    dataio.write_pgm(img, p)
    data = p.read_bytes()
    head = b"P5\n128 128\n65535\n"
    assert data.startswith(head)
    assert len(data) == len(head) + 2 * 128 * 128
    assert data[len(head) : len(head) + 4] == b"\xff\xff\x00\x00"


def test_pgm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        dataio.write_pgm(np.array([[1.5]]), tmp_path / "x.pgm")
    with pytest.raises(ValueError):
        dataio.write_pgm(np.zeros(4), tmp_path / "x.pgm")


@tmp_ok
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.floats(0, 1)))
def test_pgm_round_trip(tmp_path, img):
    p = tmp_path / "r.pgm"
    dataio.write_pgm(img, p)
    back = dataio.read_pgm(p)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 1 / 65535
    # re-encoding a decoded frame is exact
    dataio.write_pgm(back, p)
    assert np.array_equal(dataio.read_pgm(p), back)


def test_pgm_eight_bit_and_comments(tmp_path):
    p = tmp_path / "b.pgm"
    p.write_bytes(b"P5\n# comment line\n2 1\n255\n" + bytes([128, 255]))
    np.testing.assert_array_equal(dataio.read_pgm(p), [[128 / 255, 1.0]])


def test_pgm_truncation_names_offset(tmp_path):
    p = tmp_path / "t.pgm"
    dataio.write_pgm(np.full((4, 4), 0.5), p)
    data = p.read_bytes()
    p.write_bytes(data[:-3])
    with pytest.raises(FormatError, match=f"byte offset {len(data) - 3}"):
        dataio.read_pgm(p)
    p.write_bytes(b"P5\n4 4")
    with pytest.raises(FormatError, match="byte offset"):
        dataio.read_pgm(p)


@pytest.mark.parametrize(
    "blob, msg",
    [(b"P2\n1 1\n255\n\x00", "not a binary PGM"), (b"P5\n1 1\n1023\n\x00\x00", "maxval"),
     (b"P5\nx 1\n255\n\x00", "non-numeric"), (b"P5\n0 1\n255\n", "dimensions")],
)
def test_pgm_malformed(tmp_path, blob, msg):
    p = tmp_path / "m.pgm"
    p.write_bytes(blob)
    with pytest.raises(FormatError, match=msg):
        dataio.read_pgm(p)


# ---------------------------------------------------------------- manifest

text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00\r"), max_size=12)
rows_st = st.lists(
    st.builds(
        ManifestRow,
        path=text,
        wavelength_nm=st.floats(300, 2500),
        source_kind=st.sampled_from(["laser", "led"]),
        concentration_mgdl=st.floats(70, 200),
        split=st.sampled_from(["train", "test", "none"]),
        augmented_from=text,
    ),
    max_size=15,
)


@tmp_ok
@given(rows_st)
def test_manifest_round_trip(tmp_path, rows):
    p = tmp_path / "m.csv"
    dataio.write_manifest(rows, p)
    assert dataio.read_manifest(p) == rows


def test_manifest_header_only(tmp_path):
    p = tmp_path / "e.csv"
    dataio.write_manifest([], p)
    assert p.read_text() == ",".join(dataio.MANIFEST_COLUMNS) + "\n"
    assert dataio.read_manifest(p) == []


def test_manifest_large_round_trip(tmp_path):
    from glucolens.phantom import SOURCES, plan_dataset

    rows = [
        ManifestRow(f"images/{i}.pgm", SOURCES[r.source].wavelength_nm, SOURCES[r.source].source_kind,
                    r.concentration_mgdl, "train" if i % 3 else "test")
        for i, r in enumerate(plan_dataset(list(SOURCES), 70, 200, 2, 10, 42))
    ]
    assert len(rows) == 2640
    dataio.write_manifest(rows, tmp_path / "m.csv")
    assert set(dataio.read_manifest(tmp_path / "m.csv")) == set(rows)


def test_manifest_schema_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("path,wavelength_nm,source_kind,split,augmented_from\n")
    with pytest.raises(FormatError, match="missing column.*concentration_mgdl"):
        dataio.read_manifest(p)
    p.write_text(",".join(dataio.MANIFEST_COLUMNS) + ",extra\n")
    with pytest.raises(FormatError, match="unknown column.*extra"):
        dataio.read_manifest(p)
    p.write_text(",".join(dataio.MANIFEST_COLUMNS) + "\na.pgm,650.0,laser,100.0,maybe,\n")
    with pytest.raises(FormatError, match="split"):
        dataio.read_manifest(p)
    p.write_text("")
    with pytest.raises(FormatError, match="missing header"):
        dataio.read_manifest(p)


def test_features_round_trip(tmp_path):
    rows = [ManifestRow(f"{i}.pgm", 650.0, "laser", 70.0 + i) for i in range(5)]
    mat = np.random.default_rng(0).normal(size=(5, 3))
    dataio.write_features(rows, mat, ["a", "b", "c"], tmp_path / "f.csv")
    back_rows, back = dataio.read_features(tmp_path / "f.csv", ["a", "b", "c"])
    assert back_rows == rows and back.tobytes() == mat.tobytes()
    with pytest.raises(ValueError):
        dataio.write_features(rows, mat[:, :2], ["a", "b", "c"], tmp_path / "g.csv")


# ------------------------------------------------------------------ models


def _nn_model(mid, seed):
    shape = (1, 12, 12) if mid == "M4" else None
    spec = nn.build_model(mid, shape, nn.TrainConfig(seed=seed))
    m = nn.init_model(spec, seed)
    rng = np.random.default_rng(seed)
    n_in = int(np.prod(spec.input_shape))
    m.x_mean = rng.normal(size=spec.input_shape if mid == "M4" else n_in)
    m.x_std = np.abs(rng.normal(size=1 if mid == "M4" else n_in)) + 0.1
    m.y_mean, m.y_std = float(rng.uniform(70, 200)), float(rng.uniform(1, 40))
    m.history = [{"epoch": e + 1, "mse": float(rng.random()), "mae": float(rng.random()), "mape": float(rng.random())} for e in range(3)]
    m.meta = {"model": mid, "wavelength": "650-laser", "seed": seed}
    for s in m.state:
        for k in s:
            s[k] = rng.random(s[k].shape)
    return m


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.sampled_from(["M1", "M2", "M3", "M4", "ols", "forest"]), st.integers(0, 2**31 - 1))
def test_model_round_trip(tmp_path, kind, seed):
    rng = np.random.default_rng(seed)
    if kind == "ols":
        X = rng.normal(size=(20, 3))
        model = forest.fit_ols(X, rng.normal(size=20), scale=bool(seed % 2))
        x = rng.normal(size=(7, 3))
    elif kind == "forest":
        X = rng.normal(size=(30, 3))
        model = forest.fit_forest(X, rng.normal(size=30), n_estimators=3, seed=seed, max_depth=5)
        x = rng.normal(size=(7, 3))
    else:
        model = _nn_model(kind, seed)
        x = rng.normal(size=(7,) + model.spec.input_shape)
    p = tmp_path / "m.glm"
    dataio.model_save(model, p)
    back = dataio.model_load(p)
    assert type(back) is type(model)
    assert back.predict(x).tobytes() == model.predict(x).tobytes()
    assert back.meta == model.meta
    # re-encoding is byte-stable
    dataio.model_save(back, tmp_path / "n.glm")
    assert (tmp_path / "n.glm").read_bytes() == p.read_bytes()


def test_nn_round_trip_preserves_everything(tmp_path):
    m = _nn_model("M2", 3)
    dataio.model_save(m, tmp_path / "a.glm")
    b = dataio.model_load(tmp_path / "a.glm")
    assert b.spec == m.spec and b.history == m.history
    for p, q in zip(m.params + m.state, b.params + b.state):
        assert p.keys() == q.keys()
        for k in p:
            assert p[k].shape == q[k].shape and p[k].tobytes() == q[k].tobytes()


def test_forest_hundred_trees(tmp_path):
    rng = np.random.default_rng(0)
    f = forest.fit_forest(rng.normal(size=(40, 3)), rng.normal(size=40), n_estimators=100, max_depth=4)
    dataio.model_save(f, tmp_path / "f.glm")
    g = dataio.model_load(tmp_path / "f.glm")
    assert len(g.trees) == 100 and g.n_estimators == 100


def test_model_file_errors(tmp_path):
    m = forest.fit_ols(np.arange(5.0)[:, None], np.arange(5.0))
    p = tmp_path / "m.glm"
    dataio.model_save(m, p)
    data = p.read_bytes()
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="bad magic"):
        dataio.model_load(p)
    p.write_bytes(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(FormatError, match="version"):
        dataio.model_load(p)
    p.write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncated"):
        dataio.model_load(p)
    p.write_bytes(data + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        dataio.model_load(p)
    bad = dataio.encode_model_file(dataio.ModelFile("svm", {}, {}))
    p.write_bytes(bad)
    with pytest.raises(FormatError, match="unknown model kind"):
        dataio.model_load(p)
