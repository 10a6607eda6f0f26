import pytest
import torch
from hypothesis import given, settings, strategies as st

from hatefusion.errors import BackboneMismatch, ConfigError, ShapeMismatch
from hatefusion.text import (
    HFTextBackbone,
    StubTextBackbone,
    TextBranch,
    TokenSequence,
    encode_text,
    pool,
    tokenize,
)


@pytest.fixture(scope="module")
def branch_a():
    return TextBranch(StubTextBackbone(seed=0, name="stub-text_a"), "F2", seed=0).eval()


@pytest.fixture(scope="module")
def branch_b():
    return TextBranch(StubTextBackbone(seed=0, name="stub-text_b"), "F3", seed=0).eval()


def test_tokenize_empty_string(branch_a):
    tok = tokenize("", branch_a, 512)
    assert len(tok) == 512
    assert int(tok.attention_mask.sum()) == 2
    assert tok.token_ids[:2].tolist() == [1, 2]
    assert tok.backbone_id == branch_a.identity


def test_tokenize_truncates_long_text(branch_a):
    text = ("word " * 2000)[:10_000]
    tok = tokenize(text, branch_a, 512)
    assert tok.token_ids.shape == (512,) and tok.attention_mask.shape == (512,)
    assert int(tok.attention_mask.sum()) == 512
    assert tok.token_ids[-1].item() == 2  # SEP survives truncation


def test_tokenize_deterministic(branch_a):
    a = tokenize("Putin is coming", branch_a, 32)
    b = tokenize("Putin is coming", branch_a, 32)
    assert torch.equal(a.token_ids, b.token_ids) and torch.equal(a.attention_mask, b.attention_mask)


def test_tokenize_rejects_tiny_budget(branch_a):
    with pytest.raises(ConfigError):
        tokenize("x", branch_a, 1)


def test_token_sequence_shape_guard():
    with pytest.raises(ShapeMismatch):
        TokenSequence(torch.zeros(4, dtype=torch.long), torch.zeros(5, dtype=torch.long), "x")


def test_encode_shape_and_role(branch_a):
    with torch.no_grad():
        f = encode_text(tokenize("some meme text", branch_a, 64), branch_a)
    assert f.role == "F2" and f.vector.shape == (512,)
    assert torch.isfinite(f.vector).all()


def test_padding_amount_does_not_change_feature(branch_a):
    with torch.no_grad():
        short = encode_text(tokenize("war is peace", branch_a, 8), branch_a).vector
        long = encode_text(tokenize("war is peace", branch_a, 512), branch_a).vector
    assert torch.equal(short, long)


@settings(max_examples=25, deadline=None)
@given(st.text(max_size=60), st.integers(0, 40))
def test_extra_padding_is_invisible(branch_a, text, extra):
    tok = tokenize(text, branch_a, 64)
    pad = torch.zeros(extra, dtype=torch.long)
    padded = TokenSequence(torch.cat([tok.token_ids, pad]), torch.cat([tok.attention_mask, pad]), tok.backbone_id)
    with torch.no_grad():
        assert torch.equal(encode_text(tok, branch_a).vector, encode_text(padded, branch_a).vector)


def test_hello_regression(branch_a):
    tok = tokenize("hello", branch_a, 16)
    assert tok.token_ids[:3].tolist() == [1, 2505, 2]
    with torch.no_grad():
        f = encode_text(tok, branch_a).vector
    # independent recomputation: mean of the three embeddings, affine map, rectifier
    emb = branch_a.backbone.embedding.weight.detach().double()
    W = branch_a.projection.weight.detach().double()
    b = branch_a.projection.bias.detach().double()
    ref = torch.relu(W @ emb[[1, 2505, 2]].mean(0) + b)
    assert torch.allclose(f.double(), ref, atol=1e-6)
    assert f[:6].tolist() == pytest.approx([0.257195711, 0.0, 0.0, 0.474668890, 0.241933167, 0.0], abs=1e-6)
    assert float(f.sum()) == pytest.approx(66.125252, abs=1e-4)


def test_backbone_mismatch(branch_a, branch_b):
    with pytest.raises(BackboneMismatch):
        encode_text(tokenize("x", branch_a, 8), branch_b)


def test_branches_are_parameter_disjoint():
    a = TextBranch(StubTextBackbone(seed=0, name="stub-text_a"), "F2")
    b = TextBranch(StubTextBackbone(seed=0, name="stub-text_b"), "F3")
    assert not {id(p) for p in a.parameters()} & {id(p) for p in b.parameters()}
    tok_b = tokenize("same text", b, 16)
    with torch.no_grad():
        before = encode_text(tok_b, b).vector.clone()
        for p in a.parameters():
            p.add_(1.0)
        assert torch.equal(encode_text(tok_b, b).vector, before)


def test_pool_rules():
    hidden = torch.arange(2 * 4 * 3, dtype=torch.float32).reshape(2, 4, 3)
    right = torch.tensor([[1, 1, 0, 0], [1, 1, 1, 0]])
    left = torch.tensor([[0, 0, 1, 1], [0, 1, 1, 1]])
    assert torch.equal(pool(hidden, right, "first_token"), hidden[[0, 1], [0, 0]])
    assert torch.equal(pool(hidden, right, "last_token"), hidden[[0, 1], [1, 2]])
    assert torch.equal(pool(hidden, left, "first_token"), hidden[[0, 1], [2, 1]])
    assert torch.equal(pool(hidden, left, "last_token"), hidden[[0, 1], [3, 3]])
    assert torch.allclose(pool(hidden, right, "mean")[0], hidden[0, :2].mean(0))
    with pytest.raises(ConfigError):
        pool(hidden, right, "max")


def test_projection_gradient_matches_finite_differences():
    branch = TextBranch(StubTextBackbone(vocab_size=64, seed=1), "F2").double()
    toks = [tokenize(t, branch, 12) for t in ("a b c", "hate speech here", "")]
    ids = torch.stack([t.token_ids for t in toks])
    mask = torch.stack([t.attention_mask for t in toks])
    target = torch.randn(3, 512, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

    def loss_fn():
        return ((branch(ids, mask) - target) ** 2).sum()

    loss_fn().backward()
    grad = branch.projection.weight.grad.clone()
    W = branch.projection.weight
    gen = torch.Generator().manual_seed(2)
    for _ in range(20):
        i, j = int(torch.randint(512, (1,), generator=gen)), int(torch.randint(768, (1,), generator=gen))
        with torch.no_grad():
            orig = W[i, j].item()
            W[i, j] = orig + 1e-6
            up = loss_fn().item()
            W[i, j] = orig - 1e-6
            down = loss_fn().item()
            W[i, j] = orig
        fd = (up - down) / 2e-6
        assert abs(fd - grad[i, j].item()) <= 1e-4 * max(abs(fd), abs(grad[i, j].item()), 1e-8)


# -- real transformer architectures, randomly initialized ---------------------


@pytest.fixture(scope="module")
def tiny_vocab(tmp_path_factory):
    d = tmp_path_factory.mktemp("vocab")
    words = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "<cls>", "<sep>"] + [
        "putin", "is", "coming", "war", "peace", "hate", "the", "of", "invasion", "ukraine"
    ]
    (d / "vocab.txt").write_text("\n".join(words) + "\n")
    return d / "vocab.txt"


def test_bert_architecture_from_dir(tmp_path, tiny_vocab):
    from transformers import BertConfig, BertModel, BertTokenizerFast

    torch.manual_seed(0)
    cfg = BertConfig(vocab_size=32, hidden_size=768, num_hidden_layers=1, num_attention_heads=12, intermediate_size=64)
    BertModel(cfg).save_pretrained(tmp_path / "bert")
    BertTokenizerFast(vocab_file=str(tiny_vocab)).save_pretrained(tmp_path / "bert")
    backbone = HFTextBackbone.from_dir(tmp_path / "bert", "first_token")
    assert backbone.pooled_dim == 768
    branch = TextBranch(backbone, "F2").eval()
    tok = tokenize("Invasion of Ukraine", branch, 512)
    assert len(tok) == 512 and tok.token_ids[0].item() == 2  # [CLS]
    with torch.no_grad():
        f = encode_text(tok, branch)
    assert f.vector.shape == (512,)


def test_xlnet_architecture_last_token(tiny_vocab):
    from transformers import BertTokenizerFast, XLNetConfig, XLNetModel

    torch.manual_seed(0)
    model = XLNetModel(XLNetConfig(vocab_size=32, d_model=768, n_layer=1, n_head=12, d_inner=64))
    tokenizer = BertTokenizerFast(vocab_file=str(tiny_vocab), padding_side="left")
    backbone = HFTextBackbone(model, tokenizer, "last_token", "xlnet-tiny")
    branch = TextBranch(backbone, "F3").eval()
    tok = tokenize("war is peace", branch, 64)
    assert tok.attention_mask[-1].item() == 1 and tok.attention_mask[0].item() == 0
    with torch.no_grad():
        f = encode_text(tok, branch)
    assert f.vector.shape == (512,) and f.role == "F3"


def test_missing_weight_dir(tmp_path):
    with pytest.raises(ConfigError):
        HFTextBackbone.from_dir(tmp_path / "nope", "first_token")
