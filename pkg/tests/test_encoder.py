import struct

import numpy as np
import pytest

from mec.encoder import (
    MAGIC,
    EncoderArch,
    EncoderParams,
    ParamsFormatError,
    backbone_features,
    backprop_branch,
    embed_samples,
    encode_branch,
    load_params,
    mlp_forward,
    read_tensor_file,
)


def toy_arch(predictor=True):
    return EncoderArch(
        backbone=(5, 7, 6),
        projector=(6, 8, 4),
        predictor=(4, 3, 4) if predictor else None,
    )


def toy_params(predictor=True, seed=0):
    return EncoderParams.init(toy_arch(predictor), np.random.default_rng(seed))


class TestArch:
    def test_chain_validation(self):
        with pytest.raises(ValueError, match="projector input"):
            EncoderArch(backbone=(5, 6), projector=(7, 4))
        with pytest.raises(ValueError, match="predictor"):
            EncoderArch(backbone=(5, 6), projector=(6, 4), predictor=(4, 3, 5))

    def test_dims(self):
        arch = toy_arch()
        assert arch.input_dim == 5
        assert arch.feat_dim == 6
        assert arch.embed_dim == 4


class TestForward:
    def test_shapes_and_unit_norm(self):
        params = toy_params()
        x = np.random.default_rng(1).standard_normal((5, 9))
        z, cache = encode_branch(params, x, use_predictor=True)
        assert z.shape == (4, 9)
        assert np.allclose(np.linalg.norm(z, axis=0), 1.0, atol=1e-12)

    def test_hidden_normalization_is_affine_free(self):
        params = toy_params(predictor=False)
        x = np.random.default_rng(2).standard_normal((5, 11))
        _, cache = encode_branch(params, x, use_predictor=False)
        # Pre-rectifier activations of the hidden backbone layer are
        # standardized per sample: zero mean, unit variance across features.
        hn = cache.backbone[0][1]
        assert np.allclose(hn.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(hn.var(axis=0), 1.0, atol=1e-4)

    def test_backbone_features_row_convention(self):
        params = toy_params()
        samples = np.random.default_rng(3).standard_normal((9, 5))
        feats = backbone_features(params, samples)
        assert feats.shape == (9, 6)

    def test_predictor_requires_stack(self):
        params = toy_params(predictor=False)
        x = np.zeros((5, 2))
        with pytest.raises(ValueError, match="predictor"):
            encode_branch(params, x, use_predictor=True)


class TestBackward:
    @pytest.mark.parametrize("use_predictor", [False, True])
    def test_full_pipeline_gradcheck(self, use_predictor):
        # Central differences on a scalar readout of the l2-normalized
        # output, through every layer and the normalization Jacobian.
        params = toy_params()
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 6))
        probe = rng.standard_normal((4, 6))

        def value(p):
            z, _ = encode_branch(p, x, use_predictor=use_predictor)
            return float(np.sum(z * probe))

        z, cache = encode_branch(params, x, use_predictor=use_predictor)
        grads = backprop_branch(params, cache, probe)

        h = 1e-6
        worst = 0.0
        gmax = max(float(np.abs(g).max()) for g in grads)
        check = np.random.default_rng(5)
        for t_idx, tensor in enumerate(params.tensors):
            for _ in range(min(6, tensor.size)):
                flat = int(check.integers(tensor.size))
                orig = tensor.flat[flat]
                tensor.flat[flat] = orig + h
                plus = value(params)
                tensor.flat[flat] = orig - h
                minus = value(params)
                tensor.flat[flat] = orig
                fd = (plus - minus) / (2 * h)
                an = grads[t_idx].flat[flat]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3 * gmax))
        assert worst < 1e-3

    def test_skipped_predictor_gets_zero_grads(self):
        params = toy_params(predictor=True)
        x = np.random.default_rng(6).standard_normal((5, 4))
        z, cache = encode_branch(params, x, use_predictor=False)
        grads = backprop_branch(params, cache, np.ones_like(z))
        for g in grads[-4:]:
            assert not g.any()
        assert any(g.any() for g in grads[:-4])


class TestSerialization:
    def test_byte_layout(self, tmp_path):
        arch = EncoderArch(backbone=(2, 3), projector=(3, 2))
        tensors = [
            np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
            np.array([7.0, 8.0, 9.0]),
            np.array([[1.5, 2.5, 3.5], [4.5, 5.5, 6.5]]),
            np.array([0.25, 0.75]),
        ]
        params = EncoderParams(arch, tensors)
        path = tmp_path / "enc.mec"
        params.save(path)
        blob = path.read_bytes()
        assert blob[:4] == MAGIC
        rank, r0, c0 = struct.unpack_from("<III", blob, 4)
        assert (rank, r0, c0) == (2, 3, 2)
        first = struct.unpack_from("<6d", blob, 16)
        assert first == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
        (rank_b,) = struct.unpack_from("<I", blob, 16 + 48)
        assert rank_b == 1

    @pytest.mark.parametrize("predictor", [False, True])
    def test_round_trip(self, tmp_path, predictor):
        params = toy_params(predictor)
        path = tmp_path / "enc.mec"
        params.save(path)
        loaded = load_params(path, params.arch.backbone, params.arch.projector)
        assert loaded.arch == params.arch
        for a, b in zip(loaded.tensors, params.tensors):
            assert np.array_equal(a, b)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "enc.mec"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParamsFormatError, match="magic"):
            read_tensor_file(path)

    def test_truncated_payload(self, tmp_path):
        params = toy_params(False)
        path = tmp_path / "enc.mec"
        params.save(path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(ParamsFormatError, match="truncated"):
            read_tensor_file(path)

    def test_arch_mismatch(self, tmp_path):
        params = toy_params(False)
        path = tmp_path / "enc.mec"
        params.save(path)
        with pytest.raises(ParamsFormatError):
            load_params(path, (9, 7, 6), params.arch.projector)

    def test_embed_samples_matches_branch(self):
        params = toy_params(False)
        samples = np.random.default_rng(8).standard_normal((7, 5))
        z = embed_samples(params, samples)
        z2, _ = encode_branch(params, samples.T, use_predictor=False)
        assert np.array_equal(z, z2)

    def test_mlp_forward_single_linear(self):
        w = np.array([[2.0, 0.0], [0.0, 3.0]])
        b = np.array([1.0, -1.0])
        out, _ = mlp_forward([w, b], np.array([[1.0], [1.0]]))
        assert np.allclose(out[:, 0], [3.0, 2.0])
