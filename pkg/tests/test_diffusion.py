import pytest
import torch
import torch.nn as nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from aerial2ground.diffusion.conditioning import assemble, encode_conditions, null_bundle
from aerial2ground.diffusion.sampler import Sampler, cfg_predict, derive_seed, sample_latents, timestep_plan
from aerial2ground.diffusion.schedule import make_schedule, q_sample, schedule_from_betas
from aerial2ground.diffusion.trainer import DiffusionTrainer, EncodedSet, diffusion_loss, encode_samples
from aerial2ground.domain.config import CodecConfig, DenoiserConfig, DiffusionConfig, GeneratorConfig, SemanticConfig
from aerial2ground.domain.provenance import weights_hash
from aerial2ground.errors import ConfigError, DataError, ShapeError
from aerial2ground.models.codec import LatentCodec
from aerial2ground.models.semantic import SemanticEncoder
from aerial2ground.models.unet import ConditionalUNet
from aerial2ground.scene.pipeline import make_sample

SEMANTIC = SemanticConfig(patch_grid=2, width=16, layers=1, heads=2)
DENOISER = DenoiserConfig(base_channels=8, channel_mult=(1, 2), attention_levels=(1,), heads=2, zero_init_out=False)
DIFFUSION = DiffusionConfig(timesteps=20, beta_end=0.5, batch_size=2, steps=5, denoiser=DENOISER)


def build(denoiser=DENOISER, dtype=torch.float32):
    torch.manual_seed(0)
    codec = LatentCodec(CodecConfig(base_channels=8)).eval()
    semantic = SemanticEncoder(SEMANTIC).eval()
    model = ConditionalUNet(denoiser, codec.latent_channels, SEMANTIC.tokens, SEMANTIC.width).to(dtype)
    return codec, semantic, model


def synthetic_set(n=4, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return EncodedSet(
        ids=[f"{i:06d}" for i in range(n)],
        z_mean=torch.randn(n, 4, 4, 4, generator=g, dtype=dtype),
        z_std=torch.full((n, 4, 4, 4), 0.1, dtype=dtype),
        v_x=torch.randn(n, 4, 4, 4, generator=g, dtype=dtype),
        v_h=torch.randn(n, 4, 4, 4, generator=g, dtype=dtype),
        c_x=torch.randn(n, 5, 16, generator=g, dtype=dtype),
    )


@pytest.fixture(scope="module")
def small_samples():
    config = GeneratorConfig(aerial_resolution=32, ground_resolution=(32, 32))
    return [make_sample(f"{i:06d}", 100 + i, config) for i in range(3)]


# ── schedule ────────────────────────────────────────────────────────


def test_linear_schedule_endpoints():
    sched = make_schedule("linear", 1000)
    assert sched.alpha_bar[0].item() == pytest.approx(0.9999)
    assert sched.alpha_bar[-1].item() < 0.01
    assert bool((sched.alpha_bar[1:] < sched.alpha_bar[:-1]).all())


def test_cosine_schedule_is_monotone():
    sched = make_schedule("cosine", 1000)
    assert sched.betas.max().item() <= 0.999
    assert bool((sched.alpha_bar[1:] <= sched.alpha_bar[:-1]).all())


def test_two_step_schedule_and_forward_process():
    sched = schedule_from_betas([0.1, 0.2], strict=False)
    torch.testing.assert_close(sched.alpha_bar, torch.tensor([0.9, 0.72], dtype=torch.float64))
    z = q_sample(torch.ones(1, 1, 1, 1), 1, torch.ones(1, 1, 1, 1), sched)
    assert z.item() == pytest.approx(0.72**0.5 + 0.28**0.5, abs=1e-5)
    assert z.item() == pytest.approx(1.37768, abs=1e-4)
    with pytest.raises(IndexError):
        q_sample(torch.ones(1, 1, 1, 1), 2, torch.ones(1, 1, 1, 1), sched)


@pytest.mark.parametrize("betas", [[0.1, 0.2], [0.2, 0.1], [0.0, 0.5], [0.5]])
def test_invalid_schedules(betas):
    with pytest.raises(ConfigError):
        schedule_from_betas(betas)


def test_q_sample_at_last_step_is_mostly_noise():
    sched = make_schedule("linear", 1000)
    g = torch.Generator().manual_seed(0)
    z0 = torch.randn(256, 4, 8, 8, generator=g)
    eps = torch.randn(256, 4, 8, 8, generator=g)
    zt = q_sample(z0, 999, eps, sched)
    assert zt.var().item() == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ShapeError):
        q_sample(z0, 0, eps[:, :2], sched)


def test_q_sample_variance_matches_the_schedule():
    sched = schedule_from_betas([0.1, 0.2], strict=False)
    g = torch.Generator().manual_seed(4)
    z0 = torch.full((10_000, 1, 4, 4), 0.5, dtype=torch.float64)
    eps = torch.randn(z0.shape, generator=g, dtype=torch.float64)
    var = q_sample(z0, 1, eps, sched).var(dim=0)
    assert bool(((var > 0.28 * 0.94) & (var < 0.28 * 1.06)).all())


# ── conditioning ────────────────────────────────────────────────────


def test_assemble_zeroes_dropped_spatial_slots_and_swaps_tokens():
    z = torch.randn(2, 4, 4, 4)
    v = torch.ones(2, 4, 4, 4)
    c = torch.ones(2, 5, 16)
    null = torch.full((5, 16), 7.0)
    drop = torch.tensor([True, False])
    bundle = assemble(v, v, c, z, torch.zeros(2, dtype=torch.long), drop, drop, null_tokens=null)
    assert not bundle.v_x[0].any() and bundle.v_x[1].eq(1).all()
    assert not bundle.v_h[0].any()
    assert bundle.c_x[0].eq(7).all() and bundle.c_x[1].eq(1).all()
    assert bundle.denoiser_input().shape == (2, 12, 4, 4)


def test_assemble_validates_inputs():
    z = torch.randn(1, 4, 4, 4)
    t = torch.zeros(1, dtype=torch.long)
    with pytest.raises(ConfigError):
        assemble(None, torch.ones_like(z), None, z, t)
    with pytest.raises(ShapeError):
        assemble(torch.ones(1, 4, 2, 2), None, None, z, t)
    with pytest.raises(ConfigError):
        assemble(None, None, torch.ones(1, 5, 16), z, t, drop_semantic=True)


def test_null_bundle_uses_model_null_tokens():
    _, _, model = build()
    z = torch.randn(1, 4, 4, 4)
    cond = assemble(torch.ones_like(z), torch.ones_like(z), torch.ones(1, 5, 16), z, torch.zeros(1, dtype=torch.long))
    null = null_bundle(cond, model)
    assert not null.v_x.any() and not null.v_h.any()
    torch.testing.assert_close(null.c_x[0], model.null_tokens.tokens.detach())


def test_no_height_keeps_a_zero_height_slot():
    codec, semantic, _ = build()
    aerial = torch.rand(1, 3, 32, 32) * 2 - 1
    heights = torch.rand(1, 1, 32, 32)
    v_x, v_h, c_x = encode_conditions(codec, semantic, aerial, heights, (8, 8), DENOISER, no_height=True)
    assert v_x.shape == v_h.shape == (1, 4, 8, 8)
    assert not v_h.any()
    assert c_x.shape == (1, 5, 16)
    with pytest.raises(ConfigError):
        encode_conditions(codec, None, aerial, heights, (8, 8), DENOISER)


class _Linear(nn.Module):
    """ε prediction equal to the aerial-latent slot; the null branch therefore predicts zero."""

    null_tokens = None

    def forward(self, x, t, context=None):
        return x[:, 4:8]


def test_guidance_arithmetic():
    z = torch.zeros(1, 4, 2, 2)
    t = torch.zeros(1, dtype=torch.long)
    model = _Linear()
    cond = assemble(torch.full_like(z, 0.25), None, None, z, t)
    uncond = null_bundle(cond, model)
    assert cfg_predict(model, cond, uncond, 1.0).eq(0.25).all()
    assert cfg_predict(model, cond, uncond, 0.0).eq(0.0).all()
    assert cfg_predict(model, cond, uncond, 2.0).eq(0.5).all()
    assert cfg_predict(model, cond, uncond, 4.0).eq(1.0).all()


def test_guidance_shortcuts_match_branches():
    _, _, model = build()
    model.eval()
    z = torch.randn(1, 4, 4, 4)
    t = torch.tensor([3])
    cond = assemble(torch.randn_like(z), torch.randn_like(z), torch.randn(1, 5, 16), z, t)
    uncond = null_bundle(cond, model)
    with torch.no_grad():
        eps_c = model(cond.denoiser_input(), t, cond.c_x)
        eps_u = model(uncond.denoiser_input(), t, uncond.c_x)
        torch.testing.assert_close(cfg_predict(model, cond, uncond, 1.0), eps_c)
        torch.testing.assert_close(cfg_predict(model, cond, uncond, 0.0), eps_u)
        torch.testing.assert_close(cfg_predict(model, cond, uncond, 3.0), eps_u + 3.0 * (eps_c - eps_u))


# ── training ────────────────────────────────────────────────────────


def test_loss_gradient_matches_finite_differences():
    _, _, model = build(dtype=torch.float64)
    model.eval()
    sched = make_schedule("linear", 20, beta_end=0.5)
    data = synthetic_set(n=1, dtype=torch.float64)
    t = torch.tensor([7])
    g = torch.Generator().manual_seed(1)
    eps = torch.randn(1, 4, 4, 4, dtype=torch.float64, generator=g)

    def loss():
        return diffusion_loss(model, sched, data.z_mean, t, eps, data.v_x, data.v_h, data.c_x, False)

    model.zero_grad()
    loss().backward()
    params = [p for p in model.parameters() if p.grad is not None]
    grad = torch.cat([p.grad.reshape(-1) for p in params])
    # A random direction over 32 weight coordinates.
    direction = torch.zeros_like(grad)
    direction[torch.randperm(grad.numel(), generator=g)[:32]] = torch.randn(32, dtype=torch.float64, generator=g)
    analytic = (grad @ direction).item()

    weights = parameters_to_vector(params).detach().clone()
    h = 1e-6
    with torch.no_grad():
        vector_to_parameters(weights + h * direction, params)
        up = loss().item()
        vector_to_parameters(weights - h * direction, params)
        down = loss().item()
        vector_to_parameters(weights, params)
    numeric = (up - down) / (2 * h)
    assert analytic != 0.0
    assert abs(numeric - analytic) <= 1e-3 * abs(analytic)


def test_full_drop_equals_explicit_nulls():
    _, _, model = build()
    model.eval()
    sched = make_schedule("linear", 20, beta_end=0.5)
    data = synthetic_set(n=2)
    t = torch.tensor([3, 11])
    eps = torch.randn(2, 4, 4, 4)
    null = model.null_tokens(2)
    with torch.no_grad():
        dropped = diffusion_loss(model, sched, data.z_mean, t, eps, data.v_x, data.v_h, data.c_x, True)
        explicit = diffusion_loss(
            model, sched, data.z_mean, t, eps, torch.zeros_like(data.v_x), torch.zeros_like(data.v_h), null, False
        )
    assert dropped.item() == pytest.approx(explicit.item(), rel=1e-6)


def test_training_updates_only_the_denoiser():
    codec, semantic, model = build()
    frozen = weights_hash(codec), weights_hash(semantic)
    before = weights_hash(model)
    trainer = DiffusionTrainer(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), DIFFUSION)
    data = synthetic_set()
    for _ in range(100):
        trainer.step_encoded(data)
    assert weights_hash(model) != before
    assert (weights_hash(codec), weights_hash(semantic)) == frozen
    assert not any(p.requires_grad for p in codec.parameters())


def test_drop_mask_follows_p_drop(monkeypatch):
    codec, semantic, model = build()
    trainer = DiffusionTrainer(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), DIFFUSION)
    masks = []

    def recording_loss(*args):
        masks.append(args[-1])
        return diffusion_loss(*args)

    monkeypatch.setattr("aerial2ground.diffusion.trainer.diffusion_loss", recording_loss)
    data = synthetic_set(n=8)
    for _ in range(5):
        trainer.step_encoded(data, p_drop=0.0)
    assert not any(bool(m.any()) for m in masks)
    masks.clear()
    trainer.step_encoded(data, p_drop=1.0)
    assert bool(masks[0].all())


def test_initial_loss_is_the_noise_power():
    codec, semantic, model = build(DENOISER.model_copy(update={"zero_init_out": True}))
    trainer = DiffusionTrainer(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), DIFFUSION)
    assert trainer.step_encoded(synthetic_set(n=16)) == pytest.approx(1.0, abs=0.2)


def test_training_step_encodes_samples(small_samples):
    codec, semantic, model = build()
    trainer = DiffusionTrainer(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), DIFFUSION)
    for p_drop in (0.0, 1.0):
        loss = trainer.training_step(small_samples, p_drop=p_drop)
        assert loss > 0 and loss == loss
    with pytest.raises(DataError):
        trainer.training_step([])


def test_trainer_rejects_certain_dropout():
    codec, semantic, model = build()
    with pytest.raises(ConfigError):
        DiffusionTrainer(
            model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), DIFFUSION.model_copy(update={"p_drop": 1.0})
        )


def test_encode_samples_matches_variant(small_samples):
    codec, semantic, _ = build()
    encoded = encode_samples(small_samples, codec, semantic, DIFFUSION, batch_size=2)
    assert len(encoded) == 3
    assert encoded.z_mean.shape == (3, 4, 8, 8)
    assert encoded.c_x.shape == (3, 5, 16)
    clip_only = DIFFUSION.model_copy(update={"denoiser": DENOISER.model_copy(update={"use_vae_cond": False})})
    encoded = encode_samples(small_samples, codec, semantic, clip_only)
    assert encoded.v_x is None and encoded.v_h is None
    with pytest.raises(DataError):
        encode_samples([], codec, semantic, DIFFUSION)


def test_resumed_training_matches_uninterrupted():
    sched = make_schedule("linear", 20, beta_end=0.5)
    data = synthetic_set(n=4)

    codec, semantic, model = build()
    straight = DiffusionTrainer(model, codec, semantic, sched, DIFFUSION)
    straight.fit(data, None, epochs=2)

    codec, semantic, model = build()
    first = DiffusionTrainer(model, codec, semantic, sched, DIFFUSION)
    first.fit(data, None, epochs=1)
    state = first.state_dict()

    codec, semantic, model = build()
    resumed = DiffusionTrainer(model, codec, semantic, sched, DIFFUSION)
    resumed.load_state_dict(state)
    resumed.fit(data, None, epochs=2)

    assert resumed.epoch == 2
    assert [row[0] for row in resumed.history] == [1, 2]
    for key, value in straight.model.state_dict().items():
        torch.testing.assert_close(resumed.model.state_dict()[key], value)


def test_validation_loss_is_repeatable():
    codec, semantic, model = build()
    trainer = DiffusionTrainer(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), DIFFUSION)
    data = synthetic_set(n=3)
    assert trainer.validation_loss(data) == trainer.validation_loss(data)


# ── sampling ────────────────────────────────────────────────────────


def test_timestep_plan():
    sched = make_schedule("linear", 20, beta_end=0.5)
    assert timestep_plan(sched, 20) == list(range(19, -1, -1))
    plan = timestep_plan(sched, 5)
    assert len(plan) == 5 and plan[0] == 19 and plan[-1] == 0
    assert plan == sorted(plan, reverse=True)
    assert timestep_plan(sched, 1) == [19]
    assert timestep_plan(sched, 2) == [19, 0]
    for steps in (0, 21):
        with pytest.raises(ConfigError):
            timestep_plan(sched, steps)


def test_derived_seeds_differ_by_index_and_stream():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, i) for i in range(10)}) == 10
    assert derive_seed(0, 1, 0) != derive_seed(0, 1, 1)


@pytest.mark.parametrize("steps", [5, 20])
def test_sample_latents_shape_and_seed(steps):
    _, _, model = build()
    sched = make_schedule("linear", 20, beta_end=0.5)
    v = torch.randn(2, 4, 4, 4)
    c = torch.randn(2, 5, 16)
    a = sample_latents(model, sched, v, v, c, (4, 4, 4), [1, 2], steps=steps)
    b = sample_latents(model, sched, v, v, c, (4, 4, 4), [1, 2], steps=steps)
    assert a.shape == (2, 4, 4, 4)
    torch.testing.assert_close(a, b)
    with pytest.raises(DataError):
        sample_latents(model, sched, v, v, c, (4, 4, 4), [], steps=steps)


def test_sampler_is_deterministic_and_batch_independent(small_samples):
    codec, semantic, model = build()
    sampler = Sampler(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), (32, 32))
    together = sampler.generate(small_samples, steps=5, seed=3, batch_size=3)
    again = sampler.generate(small_samples, steps=5, seed=3, batch_size=3)
    alone = sampler.generate(small_samples[2:], steps=5, seed=3, offset=2)
    assert [v.id for v in together] == [s.id for s in small_samples]
    assert together[0].pixels.shape == (32, 32, 3)
    for a, b in zip(together, again):
        assert (a.pixels == b.pixels).all()
    assert abs(together[2].pixels - alone[0].pixels).max() < 1e-4


def test_sampler_height_controls(small_samples):
    codec, semantic, model = build()
    sampler = Sampler(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), (32, 32))
    base = sampler.generate(small_samples[:1], steps=5, seed=0)[0].pixels
    no_height = sampler.generate(small_samples[:1], steps=5, seed=0, no_height=True)[0].pixels
    noisy = sampler.generate(small_samples[:1], steps=5, seed=0, height_noise_sigma=0.2)[0].pixels
    assert not (base == no_height).all()
    assert not (base == noisy).all()


def test_sampler_rejects_too_many_steps(small_samples):
    codec, semantic, model = build()
    sampler = Sampler(model, codec, semantic, make_schedule("linear", 20, beta_end=0.5), (32, 32))
    with pytest.raises(ConfigError):
        sampler.generate(small_samples[:1], steps=21)
