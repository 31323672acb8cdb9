import numpy as np
import pytest

from platerec import layers as L
from platerec.blocks import (
    ConvBN,
    CornerModel,
    InceptionBBlock,
    Recognizer,
    SeparableConv,
    XceptionBlock,
    XceptionReduceBlock,
    param_count,
)
from platerec.ctc import Alphabet
from platerec.tensor import ShapeError, Tensor, gradcheck

LAYER_TABLE = [
    ("Concat", (128, 32, 2)),
    ("Conv + BN + LeakyReLU", (64, 16, 32)),
    ("Conv + BN + LeakyReLU", (64, 16, 64)),
    ("Xception Module", (64, 16, 64)),
    ("Xception Module", (64, 16, 64)),
    ("Inception Module B", (64, 16, 64)),
    ("Inception Module B", (64, 16, 64)),
    ("Xception Reduce Module", (32, 8, 128)),
    ("Xception Module", (32, 8, 128)),
    ("Xception Module", (32, 8, 128)),
    ("Inception Module B", (32, 8, 128)),
    ("Inception Module B", (32, 8, 128)),
    ("Xception Module", (32, 8, 128)),
    ("Xception Module", (32, 8, 128)),
    ("Permute", (8, 32, 128)),
    ("GlobalAvgPool1D", (32, 128)),
    ("LSTM", (32, 38)),
]


@pytest.fixture(scope="module")
def full_model():
    return Recognizer(seed=0)


def test_layer_table_shapes(full_model, rng):
    trace = []
    out = full_model.eval()(rng.random((1, 128, 32, 2)), trace=trace)
    assert trace == LAYER_TABLE
    assert out.shape == (1, 32, 38)
    np.testing.assert_allclose(np.exp(out.data).sum(axis=-1), 1.0, atol=1e-12)


def test_recognizer_accepts_single_sample_and_rejects_wrong_size(full_model, rng):
    assert full_model.eval()(rng.random((128, 32, 2))).shape == (1, 32, 38)
    with pytest.raises(ShapeError):
        full_model(rng.random((1, 100, 32, 2)))


def test_separable_economy_for_64_channels(rng):
    assert param_count(SeparableConv(rng, 64, 64)) == 64 * 9 + 64 * 64 + 64 == 4736
    assert param_count(L.ConvParams.init(rng, 64, 64, 3)) == 64 * 64 * 9 + 64 == 36928


def test_param_count_excludes_running_stats():
    assert param_count(L.BNParams.init(10)) == 20
    assert param_count(None) == 0


def test_width_scales_channels_not_topology(rng):
    small = Recognizer(Alphabet("AB-"), width=0.25)
    trace = []
    out = small.eval()(rng.random((2, 128, 32, 2)), trace=trace)
    assert [name for name, _ in trace] == [name for name, _ in LAYER_TABLE]
    assert trace[7][1] == (32, 8, 32)
    assert out.shape == (2, 32, 4)
    assert param_count(small) < param_count(Recognizer(Alphabet("AB-"), width=0.5))


@pytest.mark.parametrize("block_cls", [XceptionBlock, InceptionBBlock])
def test_residual_blocks_preserve_shape(rng, block_cls):
    block = block_cls(rng, 8).train()
    x = Tensor(rng.normal(size=(2, 10, 6, 8)))
    assert block(x).shape == x.shape
    with pytest.raises(ShapeError):
        block(Tensor(rng.normal(size=(2, 10, 6, 4))))


def test_inception_zero_merge_is_identity(rng):
    block = InceptionBBlock(rng, 6)
    block.merge.weight.data[:] = 0.0
    x = Tensor(rng.normal(size=(1, 5, 9, 6)))
    np.testing.assert_array_equal(block.eval()(x).data, x.data)


def test_reduce_block_halves_and_doubles(rng):
    block = XceptionReduceBlock(rng, 4).eval()
    assert block(Tensor(rng.normal(size=(2, 8, 6, 4)))).shape == (2, 4, 3, 8)
    with pytest.raises(ShapeError):
        block(Tensor(rng.normal(size=(2, 7, 6, 4))))


@pytest.mark.parametrize("seed", range(2))
def test_block_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 4, 4, 4)), requires_grad=True)
    for block in (XceptionBlock(rng, 4), InceptionBBlock(rng, 4), XceptionReduceBlock(rng, 4), ConvBN(rng, 4, 3, 3, stride=2)):
        block.eval()
        w = rng.normal(size=block(x).shape)
        params = list(block.parameters().values())
        assert gradcheck(lambda: L.weighted_sum(block(x), w), [x] + params[:3]) <= 1e-4


def test_train_and_eval_propagate_to_children():
    m = Recognizer(Alphabet("AB"), width=0.25)
    m.train()
    assert m.encoder.stage1[0].training and m.stage2[-1].training
    m.eval()
    assert not m.encoder.stem1.training


def test_named_tensors_are_unique_and_cover_running_stats():
    m = Recognizer(Alphabet("AB"), width=0.25)
    names = m.named_tensors()
    assert "encoder.stem1.bn.running_var" in names
    assert len({id(t) for t in names.values()}) == len(names)
    assert len(m.parameters()) < len(names)


def test_same_seed_same_weights():
    a = Recognizer(Alphabet("AB"), width=0.25, seed=3).named_tensors()
    b = Recognizer(Alphabet("AB"), width=0.25, seed=3).named_tensors()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_corner_model_outputs_unit_interval(rng):
    m = CornerModel(seed=0).eval()
    out = m(rng.random((3, 128, 32, 2)))
    assert out.shape == (3, 8)
    assert np.all((out.data > 0) & (out.data < 1))
    np.testing.assert_array_equal(CornerModel(zero=True).eval()(rng.random((1, 128, 32, 2))).data, 0.5)
