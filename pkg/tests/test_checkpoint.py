"""Checkpoint format: bit-exact round trips and corruption detection."""

import struct

import numpy as np
import pytest

from tcvae.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from tcvae.data import fit_normalize, make_windows
from tcvae.model import ModelConfig, TCVAE
from tcvae.synthetic import drifting_series

TINY = dict(d_x=3, w=8, h=4, d=16, k=8, heads=2)


def _model_and_scaler(seed=0, train_epochs=0):
    series = drifting_series(length=70, num_variables=3, seed=seed)
    normalized, scaler = fit_normalize(series)
    model = TCVAE(ModelConfig(**TINY, seed=seed, epochs=train_epochs))
    if train_epochs:
        model.fit(make_windows(normalized, 8, 4))
    return model, scaler, series


class TestRoundTrip:
    def test_parameters_bit_exact(self, tmp_path):
        model, scaler, _ = _model_and_scaler(train_epochs=1)
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        loaded, loaded_scaler = load_checkpoint(target)
        original = dict(model.named_parameters())
        restored = dict(loaded.named_parameters())
        assert original.keys() == restored.keys()
        for name in original:
            assert np.array_equal(original[name].data, restored[name].data), name
            assert original[name].data.dtype == restored[name].data.dtype
        assert np.array_equal(scaler.min_vec, loaded_scaler.min_vec)
        assert np.array_equal(scaler.max_vec, loaded_scaler.max_vec)
        assert np.array_equal(scaler.offset, loaded_scaler.offset)

    def test_forecasts_bit_exact(self, tmp_path):
        model, scaler, series = _model_and_scaler(train_epochs=1)
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        loaded, loaded_scaler = load_checkpoint(target)
        window = series.slice(10, 18)
        before = model.forecast(window.values, window.timestamps, scaler, seed=4)
        after = loaded.forecast(window.values, window.timestamps, loaded_scaler, seed=4)
        assert np.array_equal(before, after)

    def test_config_fully_reconstructed(self, tmp_path):
        model, scaler, _ = _model_and_scaler()
        model.config.use_ccnf = False
        model.config.lambda_kl = 0.1
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        loaded, _ = load_checkpoint(target)
        assert loaded.config == model.config

    def test_magic_bytes_lead_the_file(self, tmp_path):
        model, scaler, _ = _model_and_scaler()
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        assert target.read_bytes()[:4] == MAGIC == b"TCVA"


class TestCorruption:
    def test_flipped_byte_fails_checksum(self, tmp_path):
        model, scaler, _ = _model_and_scaler()
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        blob = bytearray(target.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        target.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(target)

    def test_version_mismatch_names_both_versions(self, tmp_path):
        model, scaler, _ = _model_and_scaler()
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        blob = bytearray(target.read_bytes())
        blob[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
        import zlib
        blob[-4:] = struct.pack("<I", zlib.crc32(bytes(blob[:-4])))
        target.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(target)
        assert f"version {FORMAT_VERSION + 1}" in str(excinfo.value)
        assert f"version {FORMAT_VERSION}" in str(excinfo.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.tcva")

    def test_truncated_file(self, tmp_path):
        model, scaler, _ = _model_and_scaler()
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        blob = target.read_bytes()
        target.write_bytes(blob[:6])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(target)

    def test_wrong_magic(self, tmp_path):
        model, scaler, _ = _model_and_scaler()
        target = tmp_path / "model.tcva"
        save_checkpoint(model, scaler, target)
        blob = bytearray(target.read_bytes())
        blob[:4] = b"NOPE"
        import zlib
        blob[-4:] = struct.pack("<I", zlib.crc32(bytes(blob[:-4])))
        target.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(target)
