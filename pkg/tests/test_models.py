import numpy as np
import pytest
import torch

from landslide_ensemble.losses import LOSS_NAMES, get_loss
from landslide_ensemble.models import (
    ArchSpec,
    ModelError,
    arch_names,
    build_model,
    forward,
    load_weights,
    predict_scene,
    predict_stack,
    save_weights,
)
from landslide_ensemble.scenes import NormStats, Scene, normalized_stack

ARCHS = arch_names()


def test_registry():
    assert ARCHS == ["Unet", "UnetPP", "MANet", "Linknet", "FPN", "PSPNet", "PAN", "DeepLabV3", "DeepLabV3Plus"]
    with pytest.raises(ModelError) as e:
        ArchSpec("SegFormer", 2)
    for name in ARCHS:
        assert name in str(e.value)


def test_deterministic_build():
    a = build_model(ArchSpec("Unet", 2), seed=1)
    b = build_model(ArchSpec("Unet", 2), seed=1)
    c = build_model(ArchSpec("Unet", 2), seed=2)
    assert a.parameter_bytes() == b.parameter_bytes()
    assert a.parameter_bytes() != c.parameter_bytes()


def test_build_does_not_touch_global_rng():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    build_model(ArchSpec("FPN", 2, 4, 2), seed=5)
    assert torch.equal(torch.rand(3), expected)


def test_linknet_and_unet_differ_in_size():
    assert build_model(ArchSpec("Linknet", 2)).param_count != build_model(ArchSpec("Unet", 2)).param_count


@pytest.mark.parametrize("arch", ARCHS)
def test_shape_contract_default_width(arch):
    m = build_model(ArchSpec(arch, 2), seed=0)
    out = forward(m, np.zeros((2, 256, 256), np.float32))
    assert out.shape == (1, 256, 256) and np.isfinite(out).all()


@pytest.mark.parametrize("arch", ARCHS)
def test_shape_contract_sweep(arch):
    rng = np.random.default_rng(0)
    for c in (2, 9, 11, 15):
        m = build_model(ArchSpec(arch, c, width=4), seed=0)
        for size in (256, 512):
            out = forward(m, rng.normal(size=(c, size, size)).astype(np.float32))
            assert out.shape == (1, size, size) and np.isfinite(out).all()


def test_forward_errors():
    m = build_model(ArchSpec("Unet", 2, 4, 2))
    with pytest.raises(ModelError, match="channel"):
        forward(m, np.zeros((9, 32, 32)))
    with pytest.raises(ModelError, match="divisible"):
        forward(m, np.zeros((2, 30, 32)))


def _grad_check(arch):
    torch.manual_seed(0)
    m = build_model(ArchSpec(arch, 2, width=4, depth=2), seed=3)
    net = m.net.double().train()
    x = torch.randn(2, 2, 32, 32, dtype=torch.float64)
    y = (torch.rand(2, 1, 32, 32) < 0.3).double()

    def loss():
        return torch.nn.functional.binary_cross_entropy_with_logits(net(x), y)

    p = next(p for name, p in net.named_parameters() if p.ndim == 4)
    v = torch.randn_like(p)
    net.zero_grad()
    loss().backward()
    analytic = float((p.grad * v).sum())
    # float64 and a tiny step keep the probe away from ReLU / max-pool kinks
    eps = 1e-7
    with torch.no_grad():
        p += eps * v
        up = float(loss())
        p -= 2 * eps * v
        down = float(loss())
        p += eps * v
    numeric = (up - down) / (2 * eps)
    return analytic, numeric


@pytest.mark.parametrize("arch", ARCHS)
def test_gradient_matches_finite_difference(arch):
    a, n = _grad_check(arch)
    assert abs(a - n) <= 1e-2 * max(abs(a), abs(n), 1e-8)


@pytest.mark.parametrize("arch", ARCHS)
def test_one_step_descends_for_every_loss(arch):
    rng = np.random.default_rng(0)
    x = torch.from_numpy(rng.normal(size=(2, 2, 32, 32)).astype(np.float32))
    y = torch.from_numpy((rng.random((2, 1, 32, 32)) < 0.2).astype(np.float32))
    v = torch.ones_like(y)
    for loss_name in LOSS_NAMES:
        m = build_model(ArchSpec(arch, 2, width=4, depth=2), seed=1)
        fn = get_loss(loss_name)
        opt = torch.optim.Adam(m.net.parameters(), lr=1e-3)
        m.net.train()
        before = fn(m.net(x), y, v)
        opt.zero_grad()
        before.backward()
        opt.step()
        with torch.no_grad():
            after = fn(m.net(x), y, v)
        assert float(after) < float(before), (arch, loss_name)


def _stats(n=15):
    return NormStats(np.zeros(n), np.ones(n), np.zeros(n, bool), np.zeros(n, bool))


def test_predict_one_tile_equals_forward():
    m = build_model(ArchSpec("FPN", 2, 4, 2), seed=0)
    rng = np.random.default_rng(0)
    stack = rng.normal(size=(2, 256, 256)).astype(np.float32)
    ref = 1 / (1 + np.exp(-forward(m, stack)[0].astype(np.float64)))
    np.testing.assert_allclose(predict_stack(m, stack, 256, 256), ref, atol=1e-6)


def test_predict_scene_shape_and_mask():
    m = build_model(ArchSpec("Linknet", 2, 4, 2), seed=0)
    rng = np.random.default_rng(1)
    valid = np.ones((300, 300), np.uint8)
    valid[:10] = 0
    s = Scene("p", rng.normal(size=(15, 300, 300)), np.zeros((300, 300)), valid)
    p = predict_scene(m, s, "S2", _stats())
    assert p.shape == (300, 300)
    assert p.min() >= 0 and p.max() <= 1
    assert np.all(p[:10] == 0)
    with pytest.raises(ModelError):
        predict_scene(m, s, "S1", _stats())


@pytest.mark.parametrize("arch", ARCHS)
def test_stride_invariance_on_constant_input(arch):
    m = build_model(ArchSpec(arch, 2, 4, 2), seed=0)
    stack = np.full((2, 384, 384), 0.7, np.float32)
    a = predict_stack(m, stack, 128, 128)
    b = predict_stack(m, stack, 128, 64)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_stride_invariance_full_tile():
    m = build_model(ArchSpec("Unet", 2, 8, 4), seed=0)
    s = Scene("c", np.full((15, 512, 512), 0.3, np.float32), np.zeros((512, 512)), np.ones((512, 512)))
    a = predict_scene(m, s, "S2", _stats(), 256, 128)
    b = predict_scene(m, s, "S2", _stats(), 256, 256)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_weights_roundtrip(tmp_path):
    m = build_model(ArchSpec("PAN", 9, 4, 2), seed=4)
    probe = np.random.default_rng(0).normal(size=(9, 32, 32)).astype(np.float32)
    save_weights(m, tmp_path / "w.pt")
    m2 = load_weights(ArchSpec("PAN", 9, 4, 2), tmp_path / "w.pt")
    assert np.abs(forward(m, probe) - forward(m2, probe)).max() == 0
    with pytest.raises(ModelError, match="requested"):
        load_weights(ArchSpec("Linknet", 9, 4, 2), tmp_path / "w.pt")
    raw = bytearray((tmp_path / "w.pt").read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    (tmp_path / "w.pt").write_bytes(bytes(raw))
    with pytest.raises(ModelError, match="w.pt"):
        load_weights(ArchSpec("PAN", 9, 4, 2), tmp_path / "w.pt")
    with pytest.raises(ModelError, match="sidecar"):
        load_weights(ArchSpec("PAN", 9, 4, 2), tmp_path / "missing.pt")
