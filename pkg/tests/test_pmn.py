"""Prompt modulation: chaining, depth contract, gradient connectivity."""

import numpy as np
import pytest

from hcvp.autodiff import Tensor
from hcvp.models import (
    HCVPModel,
    PromptGenerator,
    PromptModulator,
    PromptPair,
    ViTConfig,
    VisionTransformer,
    build_extractor,
)


def make_modulator(depth=4, dim=64, seed=0):
    return PromptModulator(depth, dim, np.random.default_rng(seed))


def make_pair(b=3, dim=64, seed=1):
    rng = np.random.default_rng(seed)
    return PromptPair(domain=Tensor(rng.random((b, dim))), task=Tensor(rng.random((b, dim))))


def test_roll_forward_length():
    prompts = make_modulator().roll_forward(make_pair())
    assert len(prompts) == 4
    for c, p in prompts:
        assert c.shape == (3, 64) and p.shape == (3, 64)


def test_roll_forward_equals_manual_chain():
    mod = make_modulator()
    pair = make_pair()
    rolled = mod.roll_forward(pair)
    c, p = pair.domain, pair.task
    for i in range(mod.depth):
        c, p = mod.modulate(i, c, p)
        assert np.array_equal(rolled[i][0].data, c.data)
        assert np.array_equal(rolled[i][1].data, p.data)


def test_zero_blocks_emit_zero_prompts():
    mod = make_modulator()
    for param in mod.parameters():
        param.data = np.zeros_like(param.data)
    for c, p in mod.roll_forward(make_pair()):
        assert np.array_equal(c.data, np.zeros((3, 64)))
        assert np.array_equal(p.data, np.zeros((3, 64)))


def test_identity_blocks_pass_nonnegative_input():
    mod = make_modulator()
    eye = np.eye(64)
    for block in mod.blocks:
        for lin in (block.c_in, block.c_out, block.p_in, block.p_out):
            lin.weight.data = eye.copy()
            lin.bias.data = np.zeros(64)
    rng = np.random.default_rng(2)
    pair = PromptPair(domain=Tensor(rng.random((2, 64))), task=Tensor(rng.random((2, 64))))
    for c, p in mod.roll_forward(pair):
        assert np.allclose(c.data, pair.domain.data, atol=0)
        assert np.allclose(p.data, pair.task.data, atol=0)


def test_modulate_index_range():
    mod = make_modulator()
    pair = make_pair()
    with pytest.raises(IndexError):
        mod.modulate(4, pair.domain, pair.task)
    with pytest.raises(IndexError):
        mod.modulate(-1, pair.domain, pair.task)


def test_distinct_inputs_distinct_outputs():
    mod = make_modulator()
    a = mod.roll_forward(make_pair(seed=3))
    b = mod.roll_forward(make_pair(seed=4))
    for (ca, _), (cb, _) in zip(a, b):
        assert np.abs(ca.data - cb.data).max() > 1e-9


def test_depth_mismatch_is_hard_error():
    extractor = build_extractor(0)
    extractor.freeze()
    rng = np.random.default_rng(1)
    config = ViTConfig()
    generator = PromptGenerator(extractor, rng)
    backbone = VisionTransformer(config, rng)
    bad = PromptModulator(config.depth - 1, config.embed_dim, rng)
    with pytest.raises(ValueError, match="depth"):
        HCVPModel(generator, bad, backbone)
    good = PromptModulator(config.depth, config.embed_dim, rng)
    HCVPModel(generator, good, backbone)


def test_gradient_reaches_block0_and_generator():
    extractor = build_extractor(0)
    extractor.freeze()
    rng = np.random.default_rng(5)
    config = ViTConfig()
    model = HCVPModel(
        PromptGenerator(extractor, rng),
        PromptModulator(config.depth, config.embed_dim, rng),
        VisionTransformer(config, rng),
    )
    images = Tensor(np.random.default_rng(6).random((2, 3, 32, 32)))
    embedding, _ = model.forward(images)
    embedding.sum().backward()
    block0 = model.modulator.blocks[0]
    assert np.abs(block0.c_in.weight.grad).max() > 0
    assert np.abs(block0.p_in.weight.grad).max() > 0
    assert np.abs(model.generator.fc1.weight.grad).max() > 0
