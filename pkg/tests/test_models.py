import math

import numpy as np
import pytest
import torch

from aerial2ground.domain.config import CodecConfig, DenoiserConfig, ExtractorConfig, SemanticConfig
from aerial2ground.domain.models import HeightNormalization
from aerial2ground.domain.samples import HeightMap
from aerial2ground.errors import ConfigError, DataError, ShapeError
from aerial2ground.models.classifier import CLASSES, MetricClassifier
from aerial2ground.models.codec import LOGVAR_MIN, LatentCodec, LatentDistribution, align_latent, reconstruction_error
from aerial2ground.models.layers import freeze, timestep_embedding
from aerial2ground.models.semantic import NullEmbedding, SemanticEncoder, info_nce, retrieval_accuracy
from aerial2ground.models.tensors import heights_to_tensor, images_to_tensor, tensor_to_images
from aerial2ground.models.unet import ConditionalUNet

SMALL_CODEC = CodecConfig(base_channels=8)
SMALL_SEMANTIC = SemanticConfig(patch_grid=2, width=16, layers=1, heads=2)
SMALL_DENOISER = DenoiserConfig(base_channels=8, channel_mult=(1, 2), attention_levels=(1,), heads=2)


def images(batch=2, size=64, seed=0):
    return torch.rand(batch, 3, size, size, generator=torch.Generator().manual_seed(seed)) * 2 - 1


# ── tensors ─────────────────────────────────────────────────────────


def test_image_tensor_conversion():
    pixels = np.random.default_rng(0).random((2, 8, 8, 3)).astype(np.float32)
    t = images_to_tensor(pixels)
    assert t.shape == (2, 3, 8, 8)
    assert t.min() >= -1 and t.max() <= 1
    np.testing.assert_allclose(tensor_to_images(t), pixels, atol=1e-6)
    with pytest.raises(ShapeError):
        images_to_tensor(np.zeros((2, 8, 8, 4), dtype=np.float32))


def test_raw_heights_are_rescaled():
    raw = HeightMap(values=np.full((4, 4), 15.0, dtype=np.float32), normalization=HeightNormalization.RAW_M)
    unit = HeightMap(values=np.full((4, 4), 0.25, dtype=np.float32), normalization=HeightNormalization.UNIT_SCALED)
    t = heights_to_tensor([raw, unit])
    assert t.shape == (2, 1, 4, 4)
    assert t[0].unique().tolist() == [0.5]
    assert t[1].unique().tolist() == [0.25]


def test_timestep_embedding_shape():
    emb = timestep_embedding(torch.tensor([0, 5, 999]), 9)
    assert emb.shape == (3, 9)
    assert torch.equal(emb[0, :4], torch.ones(4, dtype=emb.dtype))


# ── latent codec ────────────────────────────────────────────────────


def test_codec_latent_shape():
    codec = LatentCodec(CodecConfig())
    dist = codec.encode(images())
    assert dist.mean.shape == (2, 4, 16, 16)
    assert codec.decode(dist.mean).shape == (2, 3, 64, 64)


def test_codec_is_deterministic_for_a_seed():
    torch.manual_seed(0)
    a = LatentCodec(SMALL_CODEC).eval()
    torch.manual_seed(0)
    b = LatentCodec(SMALL_CODEC).eval()
    x = images()
    with torch.no_grad():
        assert torch.equal(a.encode(x).mean, b.encode(x).mean)


def test_decode_stays_in_range():
    codec = LatentCodec(SMALL_CODEC).eval()
    with torch.no_grad():
        out = codec.decode(torch.randn(1, 4, 16, 16) * 50)
    assert out.min() >= -1 and out.max() <= 1


def test_zero_height_encodes_like_black_image():
    codec = LatentCodec(SMALL_CODEC).eval()
    with torch.no_grad():
        h = codec.encode_height(torch.zeros(2, 1, 64, 64)).mean
        x = codec.encode(torch.full((2, 3, 64, 64), -1.0)).mean
    assert torch.equal(h, x)


@pytest.mark.parametrize("shape", [(2, 1, 64, 64), (2, 3, 62, 64), (3, 64, 64)])
def test_codec_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        LatentCodec(SMALL_CODEC).encode(torch.zeros(shape))


def test_codec_scale_factor_must_be_power_of_two():
    with pytest.raises(ConfigError):
        LatentCodec(CodecConfig(scale_factor=3))


def test_log_variance_is_clamped():
    dist = LatentDistribution(mean=torch.zeros(1, 4, 2, 2), log_variance=torch.full((1, 4, 2, 2), -100.0))
    assert dist.log_variance.min().item() == LOGVAR_MIN
    with pytest.raises(ShapeError):
        LatentDistribution(mean=torch.zeros(1, 4, 2, 2), log_variance=torch.zeros(1, 4, 2, 3))


def test_sample_latent_is_seeded_with_posterior_variance():
    dist = LatentDistribution(mean=torch.zeros(1, 4, 64, 64), log_variance=torch.zeros(1, 4, 64, 64))
    a = LatentCodec.sample_latent(dist, seed=1)
    assert torch.equal(a, LatentCodec.sample_latent(dist, seed=1))
    assert not torch.equal(a, LatentCodec.sample_latent(dist, seed=2))
    assert a.var().item() == pytest.approx(1.0, abs=0.05)


def test_reconstruction_error_averages_over_batches():
    codec = LatentCodec(SMALL_CODEC).eval()
    pixels = [np.random.default_rng(i).random((64, 64, 3)).astype(np.float32) for i in range(5)]
    whole = reconstruction_error(codec, pixels)
    assert whole > 0
    assert reconstruction_error(codec, pixels, batch_size=2) == pytest.approx(whole, rel=1e-5)
    with pytest.raises(DataError):
        reconstruction_error(codec, [])


def test_align_latent():
    z = torch.randn(1, 4, 8, 8)
    assert align_latent(z, (8, 8)) is z
    assert align_latent(z, (8, 32)).shape == (1, 4, 8, 32)


# ── semantic encoder ────────────────────────────────────────────────


def test_token_sequence_shape():
    encoder = SemanticEncoder(SMALL_SEMANTIC).eval()
    with torch.no_grad():
        seq = encoder.embed(images(3), "aerial")
    assert encoder.token_shape == (5, 16)
    assert seq.tokens.shape == (3, 5, 16)
    torch.testing.assert_close(seq.pooled.norm(dim=-1), torch.ones(3))


def test_towers_are_distinct():
    encoder = SemanticEncoder(SMALL_SEMANTIC).eval()
    with torch.no_grad():
        x = images(1)
        assert not torch.equal(encoder.embed(x, "aerial").pooled, encoder.embed(x, "ground").pooled)


def test_null_embedding_starts_at_zero():
    null = NullEmbedding(5, 16)
    out = null(3)
    assert out.shape == (3, 5, 16)
    assert not out.any()


def test_info_nce_with_flat_logits_is_log_batch():
    a = torch.nn.functional.normalize(torch.randn(8, 16), dim=-1)
    g = torch.nn.functional.normalize(torch.randn(8, 16), dim=-1)
    assert info_nce(a, g, temperature=1e6).item() == pytest.approx(math.log(8), abs=1e-4)


def test_info_nce_rewards_matched_pairs():
    a = torch.eye(4)
    assert info_nce(a, a, 0.07).item() < info_nce(a, a.roll(1, dims=0), 0.07).item()


def test_retrieval_accuracy_needs_aligned_sets():
    encoder = SemanticEncoder(SMALL_SEMANTIC).eval()
    with pytest.raises(DataError):
        retrieval_accuracy(encoder, images(2), images(3))
    assert 0.0 <= retrieval_accuracy(encoder, images(2), images(2, seed=1)) <= 1.0


# ── denoiser ────────────────────────────────────────────────────────


def unet(**flags):
    config = SMALL_DENOISER.model_copy(update=flags)
    return ConditionalUNet(config, latent_channels=4, tokens=5, token_width=16)


def test_full_variant_takes_twelve_channels():
    model = unet()
    assert model.in_channels == 12
    out = model(torch.randn(2, 12, 16, 16), torch.tensor([0, 19]), torch.randn(2, 5, 16))
    assert out.shape == (2, 4, 16, 16)
    # Zero-initialised output projection.
    assert not out.any()


@pytest.mark.parametrize(
    "flags, channels",
    [
        ({"use_height": False}, 8),
        ({"use_clip": False}, 12),
        ({"use_clip": False, "use_vae_cond": False, "use_height": False}, 4),
    ],
)
def test_variant_input_channels(flags, channels):
    model = unet(**flags)
    assert model.in_channels == channels
    context = None if not model.config.use_clip else torch.randn(1, 5, 16)
    assert model(torch.randn(1, channels, 16, 16), torch.tensor([3]), context).shape == (1, 4, 16, 16)


def test_panoramic_latent_grid():
    model = unet()
    assert model(torch.randn(1, 12, 8, 32), torch.tensor([1]), torch.randn(1, 5, 16)).shape == (1, 4, 8, 32)


def test_denoiser_shape_errors():
    model = unet()
    with pytest.raises(ShapeError):
        model(torch.randn(1, 8, 16, 16), torch.tensor([0]), torch.randn(1, 5, 16))
    with pytest.raises(ShapeError):
        model(torch.randn(1, 12, 15, 16), torch.tensor([0]), torch.randn(1, 5, 16))
    with pytest.raises(ShapeError):
        model(torch.randn(1, 12, 16, 16), torch.tensor([0]))


def test_clip_free_variant_has_no_attention():
    model = unet(use_clip=False)
    assert model.null_tokens is None
    assert not any(type(m).__name__ == "CrossAttention" for m in model.modules())


def test_attention_heads_must_divide_channels():
    with pytest.raises(ShapeError):
        unet(heads=3)


# ── metric classifier ───────────────────────────────────────────────


def test_classifier_taps_and_probabilities():
    model = MetricClassifier(ExtractorConfig(channels=(4, 8, 8))).eval()
    with torch.no_grad():
        taps = model.taps(images(2))
        probs = model.probabilities(images(2))
    assert [t.shape[1] for t in taps] == [4, 8, 8]
    assert model.features(images(2)).shape == (2, model.feature_dim)
    assert probs.shape == (2, len(CLASSES))
    torch.testing.assert_close(probs.sum(dim=1), torch.ones(2))


def test_classifier_needs_two_taps():
    with pytest.raises(ShapeError):
        MetricClassifier(ExtractorConfig(channels=(8,)))


def test_freeze_stops_gradients():
    model = freeze(MetricClassifier(ExtractorConfig(channels=(4, 8))))
    assert not model.training
    assert not any(p.requires_grad for p in model.parameters())
