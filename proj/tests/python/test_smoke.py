import json

import numpy as np
import pytest

import bioanon


@pytest.fixture(scope="module")
def gait_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("gait")
    return bioanon.generate_gait(4, 6, 3, out)


def test_halving_grid():
    assert bioanon.halving_grid(57) == [57, 28, 14, 7, 3]


def test_noise_zero_is_identity():
    (_, seq), *_ = bioanon.synthesize_gait(2, 2, 1)
    assert seq.shape == (100, 156)
    out = bioanon.anonymize_gait(seq, {"kind": "noise", "scale": 0}, seed=5)
    np.testing.assert_array_equal(out, seq)


def test_motion_extraction_ignores_translation():
    (_, seq), *_ = bioanon.synthesize_gait(2, 2, 1)
    shifted = seq + 250.0
    a = bioanon.anonymize_gait(seq, "motion_extraction")
    b = bioanon.anonymize_gait(shifted, "motion_extraction")
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_eye_mask_blacks_out_strip():
    img = np.full((224, 224, 3), 200, dtype=np.uint8)
    out = bioanon.anonymize_image(img, {"kind": "eye_mask"})
    assert out.shape == img.shape
    assert (out[20:160] == 0).all()
    assert (out[:20] == 200).all()


def test_dp_snow_is_seeded():
    img = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    a = bioanon.anonymize_image(img, "dp_snow", seed=9)
    b = bioanon.anonymize_image(img, "dp_snow", seed=9)
    np.testing.assert_array_equal(a, b)


def test_errors_carry_kind():
    with pytest.raises(bioanon.BioanonError) as info:
        bioanon.anonymize_gait(np.zeros((100, 156)), {"kind": "keep", "region": "tail"})
    assert info.value.kind == "UnknownRegion"


def test_run_experiment_is_deterministic(gait_manifest, tmp_path):
    config = {
        "dataset": str(gait_manifest),
        "anonymizers": ["none", {"kind": "noise", "scale": 10}],
        "recognizers": ["svm+simple"],
        "protocols": ["naive", "parrot"],
        "repeats": 2,
    }
    first = bioanon.run_experiment(dict(config, output=str(tmp_path / "a")))
    second = bioanon.run_experiment(dict(config, output=str(tmp_path / "b"), jobs=1))
    assert first["n_cells"] == 8
    assert first["errors"] == []
    assert [r["accuracy"] for r in first["results"]] == [r["accuracy"] for r in second["results"]]
    for r in first["results"]:
        assert r["chance_level"] == pytest.approx(0.25)
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_resolve_config_and_select(gait_manifest):
    config = {"dataset": str(gait_manifest), "anonymizers": ["none"], "recognizers": ["svm+flatten"],
              "protocols": ["parrot"], "selections": ["center"], "n_identities": [2]}
    resolved, run_id = bioanon.resolve_config(config)
    assert resolved["selections"] == ["center"]
    assert run_id == bioanon.resolve_config(dict(config, jobs=3))[1]
    chosen = bioanon.select(config)
    assert len(chosen) == 2 and len(set(chosen)) == 2


def test_anonymize_dataset_writes_manifest(gait_manifest, tmp_path):
    manifest = bioanon.anonymize_dataset(gait_manifest, {"kind": "keep", "region": "legs"}, tmp_path / "anon")
    doc = json.loads(open(manifest).read())
    assert len(doc["identities"]) == 4
