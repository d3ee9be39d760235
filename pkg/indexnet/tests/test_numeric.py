import pytest
import torch
from torch.testing import assert_close

from indexnet.errors import NumericError, ShapeError
from indexnet.numeric import (DTYPE, AdamState, AffineLayer, ResidualBlock, adam_step, affine_backward,
                              affine_forward, grad_check, relu_backward, relu_forward, residual_backward,
                              residual_forward)


def test_affine_forward():
    layer = AffineLayer(2, 2)
    layer.weight.copy_(torch.tensor([[1., 2.], [3., 4.]]))
    layer.bias.copy_(torch.tensor([1., -1.]))
    y = affine_forward(layer, torch.tensor([1., 1.], dtype=DTYPE))
    assert_close(y, torch.tensor([4., 6.], dtype=DTYPE))


def test_affine_init_bound():
    layer = AffineLayer(16, 8, generator=torch.Generator().manual_seed(0))
    assert layer.weight.abs().max() <= .25
    assert layer.bias.abs().max() <= .25
    assert layer.weight.dtype == DTYPE


def test_affine_shape_error():
    layer = AffineLayer(3, 2)
    with pytest.raises(ShapeError, match='expected 3, got 4'):
        affine_forward(layer, torch.zeros(5, 4, dtype=DTYPE))


@pytest.mark.parametrize("device", ['cpu', 'cuda'])
def test_affine_backward_accumulates(device):
    if device == 'cuda' and not torch.cuda.is_available():
        pytest.skip('No cuda')
    layer = AffineLayer(3, 2, generator=torch.Generator().manual_seed(0), device=device)
    x = torch.randn(4, 3, dtype=DTYPE, device=device)
    g = torch.randn(4, 2, dtype=DTYPE, device=device)
    grad_x = affine_backward(layer, x, g)
    affine_backward(layer, x, g)
    assert_close(layer.grad_weight, 2 * g.T @ x)
    assert_close(layer.grad_bias, 2 * g.sum(0))
    assert_close(grad_x, g @ layer.weight)
    layer.zero_grads()
    assert not layer.grad_weight.any()


def test_relu():
    x = torch.tensor([-1., 0., 2.], dtype=DTYPE)
    y, mask = relu_forward(x)
    assert_close(y, torch.tensor([0., 0., 2.], dtype=DTYPE))
    assert_close(relu_backward(mask, torch.ones(3, dtype=DTYPE)), torch.tensor([0., 0., 1.], dtype=DTYPE))


def test_residual_block_zero_is_identity():
    block = ResidualBlock(4, 3)
    for layer in block.layers().values():
        layer.fill_(0.)
    h = torch.randn(2, 4, dtype=DTYPE)
    out, _ = residual_forward(block, h)
    assert_close(out, h)


def test_residual_grad_check():
    torch.manual_seed(0)
    block = ResidualBlock(4, 6, generator=torch.Generator().manual_seed(1))
    h = torch.randn(5, 4, dtype=DTYPE)
    target = torch.randn(5, 4, dtype=DTYPE)

    def f():
        out, _ = residual_forward(block, h)
        return ((out - target) ** 2).sum().item()

    out, cache = residual_forward(block, h)
    block.zero_grads()
    residual_backward(block, cache, 2 * (out - target))
    params = {f'{prefix}{k}': v for prefix, layer in block.layers().items() for k, v in layer.parameters().items()}
    grads = {f'{prefix}{k}': v for prefix, layer in block.layers().items() for k, v in layer.gradients().items()}
    assert grad_check(f, params, grads) < 1e-5


def test_adam_single_step():
    p = torch.zeros(1, dtype=DTYPE)
    state = AdamState(lr=.1)
    adam_step(state, {'p': p}, {'p': torch.ones(1, dtype=DTYPE)})
    assert p.item() == pytest.approx(-.1, rel=1e-6)
    assert state.step == 1


def test_adam_two_steps_monotone():
    p = torch.zeros(1, dtype=DTYPE)
    state = AdamState(lr=.1)
    g = torch.full((1,), .5, dtype=DTYPE)
    adam_step(state, {'p': p}, {'p': g})
    first = p.item()
    adam_step(state, {'p': p}, {'p': g})
    assert first < 0
    assert p.item() < first


def test_adam_zero_gradient_is_noop():
    p = torch.randn(3, dtype=DTYPE)
    q = torch.randn(3, dtype=DTYPE)
    p0, q0 = p.clone(), q.clone()
    state = AdamState(lr=.1)
    adam_step(state, {'p': p, 'q': q}, {'p': torch.zeros(3, dtype=DTYPE), 'q': torch.ones(3, dtype=DTYPE)})
    assert torch.equal(p, p0)
    assert not state.m['p'].any() and not state.v['p'].any()
    assert not torch.equal(q, q0)


def test_adam_errors():
    state = AdamState(lr=.1)
    with pytest.raises(ShapeError, match='gradient of w'):
        adam_step(state, {'w': torch.zeros(2, dtype=DTYPE)}, {'w': torch.zeros(3, dtype=DTYPE)})
    with pytest.raises(NumericError, match='block w'):
        adam_step(state, {'w': torch.zeros(2, dtype=DTYPE)}, {'w': torch.tensor([1., float('nan')], dtype=DTYPE)})


def test_grad_check_detects_wrong_gradient():
    w = torch.tensor([1., 2.], dtype=DTYPE)

    def f():
        return (w ** 2).sum().item()

    assert grad_check(f, {'w': w}, {'w': 2 * w.clone()}) < 1e-8
    errors = grad_check(f, {'w': w}, {'w': w.clone()}, return_all=True)
    assert errors['w'] == pytest.approx(.5, rel=1e-4)
    assert_close(w, torch.tensor([1., 2.], dtype=DTYPE))


def away_from_kinks(generator, shape, margin=1e-1):
    x = torch.randn(shape, generator=generator, dtype=DTYPE)
    return x + margin * torch.sign(x)


@pytest.mark.parametrize("trial", range(34))
@pytest.mark.parametrize("kind", ['affine', 'relu', 'residual'])
def test_random_shape_gradients(kind, trial):
    generator = torch.Generator().manual_seed(trial)
    batch, width, hidden = (int(v) for v in torch.randint(1, 6, (3,), generator=generator))
    target = torch.randn(batch, width, generator=generator, dtype=DTYPE)
    if kind == 'affine':
        layer = AffineLayer(hidden, width, generator=generator)
        x = torch.randn(batch, hidden, generator=generator, dtype=DTYPE)

        def f():
            return ((affine_forward(layer, x) - target) ** 2).sum().item()

        grad_x = affine_backward(layer, x, 2 * (affine_forward(layer, x) - target))
        params = dict(layer.parameters(), x=x)
        grads = dict(layer.gradients(), x=grad_x)
    elif kind == 'relu':
        x = away_from_kinks(generator, (batch, width))

        def f():
            return ((relu_forward(x)[0] - target) ** 2).sum().item()

        y, mask = relu_forward(x)
        params, grads = {'x': x}, {'x': relu_backward(mask, 2 * (y - target))}
    else:
        block = ResidualBlock(width, hidden, generator=generator)
        h = torch.randn(batch, width, generator=generator, dtype=DTYPE)
        while (affine_forward(block.inner, h).abs() < 1e-3).any():
            h = torch.randn(batch, width, generator=generator, dtype=DTYPE)

        def f():
            return ((residual_forward(block, h)[0] - target) ** 2).sum().item()

        out, cache = residual_forward(block, h)
        grad_h = residual_backward(block, cache, 2 * (out - target))
        params = {f'{prefix}{k}': v for prefix, layer in block.layers().items() for k, v in layer.parameters().items()}
        grads = {f'{prefix}{k}': v for prefix, layer in block.layers().items() for k, v in layer.gradients().items()}
        params['h'], grads['h'] = h, grad_h
    assert grad_check(f, params, grads) < 1e-4


@pytest.mark.parametrize("alpha,beta", [(1, 1), (2, -3), (0, 5), (-4, 0)])
def test_affine_linearity(alpha, beta):
    generator = torch.Generator().manual_seed(0)
    layer = AffineLayer(4, 3)
    layer.weight.copy_(torch.randint(-5, 6, (3, 4), generator=generator))
    layer.bias.copy_(torch.randint(-5, 6, (3,), generator=generator))
    x = torch.randint(-9, 10, (4,), generator=generator).to(DTYPE)
    y = torch.randint(-9, 10, (4,), generator=generator).to(DTYPE)
    lhs = affine_forward(layer, alpha * x + beta * y)
    rhs = alpha * affine_forward(layer, x) + beta * affine_forward(layer, y) - (alpha + beta - 1) * layer.bias
    assert torch.equal(lhs, rhs)


def test_kernels_are_deterministic():
    def run():
        generator = torch.Generator().manual_seed(7)
        block = ResidualBlock(5, 8, generator=generator)
        h = torch.randn(6, 5, generator=generator, dtype=DTYPE)
        out, cache = residual_forward(block, h)
        grad_h = residual_backward(block, cache, out)
        params = {f'{prefix}{k}': v for prefix, layer in block.layers().items() for k, v in layer.parameters().items()}
        grads = {f'{prefix}{k}': v for prefix, layer in block.layers().items() for k, v in layer.gradients().items()}
        adam_step(AdamState(lr=1e-2), params, grads)
        return [out, grad_h] + list(params.values())

    for a, b in zip(run(), run()):
        assert torch.equal(a, b)
