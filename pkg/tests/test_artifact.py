from __future__ import annotations

import numpy as np
import pytest

from formscreen.artifact import ModelArtifact, config_hash
from formscreen.errors import ConventionError, DatasetError
from formscreen.formulation import DescriptorConvention
from formscreen.gcn import GcnModel
from formscreen.regressor import RegressorModel


@pytest.fixture
def artifact():
    enc = GcnModel.init(seed=3, hidden=8, head_hidden=4).freeze()
    conv = DescriptorConvention(enc.version)
    reg = RegressorModel.init(802, conv, hidden=(6, 5), seed=1)
    return ModelArtifact(enc, reg, {"seed": "1", "config_hash": config_hash({"a": 1})})


def test_round_trip_is_byte_identical(artifact, tmp_path):
    artifact.save(tmp_path / "m.fsm")
    back = ModelArtifact.load(tmp_path / "m.fsm")
    assert back.to_bytes() == artifact.to_bytes()
    assert back.meta == artifact.meta
    assert back.regressor.convention == artifact.regressor.convention
    for (W, b), (W2, b2) in zip(artifact.regressor.layers, back.regressor.layers):
        np.testing.assert_array_equal(W, W2)
        np.testing.assert_array_equal(b, b2)


def test_loaded_encoder_is_frozen(artifact):
    back = ModelArtifact.from_bytes(artifact.to_bytes())
    assert back.encoder.frozen
    with pytest.raises(ValueError):
        back.encoder.weights["conv1"][0, 0] = 1.0


def test_encoder_only_artifact(artifact):
    enc_only = ModelArtifact(artifact.encoder)
    back = ModelArtifact.from_bytes(enc_only.to_bytes())
    assert back.regressor is None
    with pytest.raises(ConventionError):
        back.check_convention(DescriptorConvention(back.encoder.version))


def test_manifest_is_text(artifact):
    head = artifact.to_bytes().split(b"END-MANIFEST\n")[0].decode()
    assert "encoder.mode=multi-task" in head
    assert f"convention.gr_version={artifact.encoder.version}" in head


def test_convention_mismatch(artifact):
    artifact.check_convention(DescriptorConvention(artifact.encoder.version))
    with pytest.raises(ConventionError, match="does not match"):
        artifact.check_convention(DescriptorConvention(artifact.encoder.version, loading_scale="raw"))
    other = GcnModel.init(seed=4, hidden=8, head_hidden=4).freeze()
    with pytest.raises(ConventionError, match="trained on encoder"):
        ModelArtifact.from_bytes(ModelArtifact(other, artifact.regressor).to_bytes())


def test_corrupt_inputs(artifact, tmp_path):
    data = artifact.to_bytes()
    with pytest.raises(DatasetError, match="not a model"):
        ModelArtifact.from_bytes(b"hello\n" + data)
    with pytest.raises(DatasetError, match="truncated"):
        ModelArtifact.from_bytes(data[:-5])
    with pytest.raises(DatasetError, match="truncated manifest"):
        ModelArtifact.from_bytes(data[:40])
    i = data.index(b"BLOCK encoder.conv1")
    bad = bytearray(data)
    j = i + len(b"BLOCK encoder.conv1 1 8\n") + 30
    bad[j] ^= 0xFF
    with pytest.raises(DatasetError, match="recorded version"):
        ModelArtifact.from_bytes(bytes(bad))
    with pytest.raises(DatasetError, match="not found"):
        ModelArtifact.load(tmp_path / "missing.fsm")


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
