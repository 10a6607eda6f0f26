import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from PIL import Image

from hatefusion.errors import ShapeMismatch, UnreadableImage, UnsupportedColorSpace
from hatefusion.vision import (
    InceptionBackbone,
    PreprocessConfig,
    StubVisionBackbone,
    VisionBranch,
    encode_image,
    preprocess_image,
)


def test_preprocess_shape_default(tmp_path):
    Image.new("RGB", (120, 80), (10, 200, 30)).save(tmp_path / "a.jpg")
    x = preprocess_image(tmp_path / "a.jpg")
    assert x.shape == (3, 299, 299) and x.dtype == torch.float32
    assert torch.isfinite(x).all()


def test_pixel_at_mean_normalizes_to_zero(tmp_path):
    Image.new("RGB", (16, 16), (128, 64, 200)).save(tmp_path / "u.png")
    cfg = PreprocessConfig(16, 16, mean=(128 / 255, 64 / 255, 200 / 255), std=(0.2, 0.3, 0.4))
    x = preprocess_image(tmp_path / "u.png", cfg)
    assert torch.equal(x, torch.zeros(3, 16, 16))


def test_grayscale_replicates_channels(tmp_path):
    arr = np.arange(64, dtype=np.uint8).reshape(8, 8) * 3
    Image.fromarray(arr, mode="L").save(tmp_path / "g.png")
    cfg = PreprocessConfig(8, 8, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
    x = preprocess_image(tmp_path / "g.png", cfg)
    assert torch.equal(x[0], x[1]) and torch.equal(x[1], x[2])


def test_preprocess_errors(tmp_path):
    (tmp_path / "x.png").write_bytes(b"garbage")
    with pytest.raises(UnreadableImage):
        preprocess_image(tmp_path / "x.png")
    Image.new("F", (4, 4)).save(tmp_path / "f.tiff")
    with pytest.raises(UnsupportedColorSpace):
        preprocess_image(tmp_path / "f.tiff")


def _stub_branch(native_dim=256, grid=4, size=(32, 32), seed=0):
    return VisionBranch(StubVisionBackbone(native_dim, grid, size, seed), seed)


def test_stub_encode_shape_and_determinism():
    branch = _stub_branch().eval()
    x = torch.randn(3, 32, 32, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        a = encode_image(x, branch)
        b = encode_image(x, branch)
    assert a.role == "F1" and a.vector.shape == (512,)
    assert torch.isfinite(a.vector).all()
    assert torch.equal(a.vector, b.vector)


def test_stub_constant_on_zero_image():
    # identity projection: F1 = relu(body bias) for an all-zero image
    branch = VisionBranch(StubVisionBackbone(512, 8, (64, 64), seed=0))
    with torch.no_grad():
        branch.projection.weight.copy_(torch.eye(512))
        branch.projection.bias.zero_()
        f1 = encode_image(torch.zeros(3, 64, 64), branch).vector
    expected = torch.relu(branch.backbone.body.bias.detach())
    assert torch.equal(f1, expected)
    # frozen regression values of the seeded stub
    assert f1[:6].tolist() == pytest.approx([0.060002245, 0.0, 0.0, 0.0, 0.0, 0.104403555], abs=1e-8)
    assert float(f1.sum()) == pytest.approx(19.564201355, abs=1e-5)
    assert int((f1 > 0).sum()) == 243


def test_shape_mismatch():
    branch = _stub_branch()
    with pytest.raises(ShapeMismatch):
        encode_image(torch.zeros(3, 30, 32), branch)
    with pytest.raises(ShapeMismatch):
        encode_image(torch.zeros(1, 32, 32), branch)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([16, 64, 512, 2048]), st.integers(1, 6), st.integers(0, 99))
def test_output_dim_is_512_for_any_stub(native_dim, grid, seed):
    branch = _stub_branch(native_dim, grid, (24, 24), seed)
    out = encode_image(torch.randn(2, 3, 24, 24), branch).vector
    assert out.shape == (2, 512)


def test_projection_gradient_matches_finite_differences():
    torch.manual_seed(0)
    branch = _stub_branch(64, 2, (8, 8)).double()
    x = torch.randn(4, 3, 8, 8, dtype=torch.float64)
    target = torch.randn(4, 512, dtype=torch.float64)

    def loss_fn():
        return ((branch(x) - target) ** 2).sum()

    loss_fn().backward()
    grad = branch.projection.weight.grad.clone()
    W = branch.projection.weight
    gen = torch.Generator().manual_seed(1)
    eps = 1e-6
    for _ in range(20):
        i = int(torch.randint(512, (1,), generator=gen))
        j = int(torch.randint(64, (1,), generator=gen))
        with torch.no_grad():
            orig = W[i, j].item()
            W[i, j] = orig + eps
            up = loss_fn().item()
            W[i, j] = orig - eps
            down = loss_fn().item()
            W[i, j] = orig
        fd = (up - down) / (2 * eps)
        g = grad[i, j].item()
        assert abs(fd - g) <= 1e-4 * max(abs(fd), abs(g), 1e-8)


def test_inception_trunk_emits_pooled_2048():
    torch.manual_seed(0)
    branch = VisionBranch(InceptionBackbone()).eval()
    assert branch.backbone.native_dim == 2048
    with torch.no_grad():
        out = encode_image(torch.zeros(3, 299, 299), branch)
    assert out.vector.shape == (512,)
