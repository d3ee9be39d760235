import math
from typing import Callable, Dict, Optional, Tuple

import torch

from indexnet.errors import NumericError, ShapeError

DTYPE = torch.float64


def check_width(what, x: torch.Tensor, width: int):
    if x.shape[-1] != width:
        raise ShapeError(what, width, x.shape[-1])


class AffineLayer:
    """y = W x + b, with gradient buffers of the same shapes as W and b.

    Weights and bias are drawn uniformly in [-1/sqrt(in), 1/sqrt(in)].
    """

    def __init__(self, in_features: int, out_features: int, generator: Optional[torch.Generator] = None,
                 device='cpu'):
        bound = 1. / math.sqrt(in_features)
        weight = torch.rand((out_features, in_features), generator=generator, dtype=DTYPE) * 2 - 1
        bias = torch.rand((out_features,), generator=generator, dtype=DTYPE) * 2 - 1
        self.weight = (weight * bound).to(device)
        self.bias = (bias * bound).to(device)
        self.grad_weight = torch.zeros_like(self.weight)
        self.grad_bias = torch.zeros_like(self.bias)

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def zero_grads(self):
        self.grad_weight.zero_()
        self.grad_bias.zero_()

    def fill_(self, value: float):
        self.weight.fill_(value)
        self.bias.fill_(value)
        return self

    def to(self, device):
        self.weight = self.weight.to(device)
        self.bias = self.bias.to(device)
        self.grad_weight = self.grad_weight.to(device)
        self.grad_bias = self.grad_bias.to(device)
        return self

    def parameters(self, prefix=''):
        return {f'{prefix}weight': self.weight, f'{prefix}bias': self.bias}

    def gradients(self, prefix=''):
        return {f'{prefix}weight': self.grad_weight, f'{prefix}bias': self.grad_bias}


def affine_forward(layer: AffineLayer, x: torch.Tensor) -> torch.Tensor:
    check_width('affine input width', x, layer.in_features)
    return x @ layer.weight.transpose(0, 1) + layer.bias


def affine_backward(layer: AffineLayer, x: torch.Tensor, grad_out: torch.Tensor) -> torch.Tensor:
    """Accumulate dL/dW and dL/db into the layer buffers and return dL/dx."""
    check_width('affine input width', x, layer.in_features)
    check_width('affine output gradient width', grad_out, layer.out_features)
    if x.shape[:-1] != grad_out.shape[:-1]:
        raise ShapeError('affine batch shape', tuple(x.shape[:-1]), tuple(grad_out.shape[:-1]))
    x2 = x.reshape(-1, layer.in_features)
    g2 = grad_out.reshape(-1, layer.out_features)
    layer.grad_weight += g2.transpose(0, 1) @ x2
    layer.grad_bias += g2.sum(dim=0)
    return grad_out @ layer.weight


def relu_forward(x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    mask = x > 0
    return torch.where(mask, x, torch.zeros_like(x)), mask


def relu_backward(mask: torch.Tensor, grad_out: torch.Tensor) -> torch.Tensor:
    # subgradient 0 at x == 0
    return torch.where(mask, grad_out, torch.zeros_like(grad_out))


class ResidualBlock:
    """h + outer(relu(inner(h))), outer widths `width`, inner width `hidden`."""

    def __init__(self, width: int, hidden: int, generator=None, device='cpu'):
        self.inner = AffineLayer(width, hidden, generator=generator, device=device)
        self.outer = AffineLayer(hidden, width, generator=generator, device=device)

    @property
    def width(self):
        return self.inner.in_features

    def layers(self, prefix=''):
        return {f'{prefix}inner.': self.inner, f'{prefix}outer.': self.outer}

    def zero_grads(self):
        self.inner.zero_grads()
        self.outer.zero_grads()


def residual_forward(block: ResidualBlock, h: torch.Tensor):
    pre = affine_forward(block.inner, h)
    act, mask = relu_forward(pre)
    out = h + affine_forward(block.outer, act)
    return out, (h, act, mask)


def residual_backward(block: ResidualBlock, cache, grad_out: torch.Tensor) -> torch.Tensor:
    h, act, mask = cache
    grad_act = affine_backward(block.outer, act, grad_out)
    grad_pre = relu_backward(mask, grad_act)
    return grad_out + affine_backward(block.inner, h, grad_pre)


class AdamState:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.step = 0

    def state_dict(self):
        return dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, step=self.step,
                    m=dict(self.m), v=dict(self.v))


def adam_step(state: AdamState, params: Dict[str, torch.Tensor], grads: Dict[str, torch.Tensor]):
    """Bias-corrected Adam update, in place on `params`.

    A block whose gradient is identically zero is left untouched, moments included.
    Gradient buffers are not reset here.
    """
    state.step += 1
    bc1 = 1. - state.beta1 ** state.step
    bc2 = 1. - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f'gradient of {name}', tuple(p.shape), tuple(g.shape))
        if not torch.isfinite(g).all():
            raise NumericError(f'Non-finite gradient in parameter block {name} at step {state.step}')
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        if not g.any():
            continue
        m, v = state.m[name], state.v[name]
        m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-state.lr / bc1)
    return params


def grad_check(f: Callable[[], float], params: Dict[str, torch.Tensor], grads: Dict[str, torch.Tensor],
               h: float = 1e-5, return_all=False):
    """Compare analytic gradients against central differences of `f`.

    `f` is re-evaluated after in-place perturbation of every coordinate of every tensor
    of `params`. Returns the max relative error |a - n| / max(|a|, |n|, 1e-8), or the
    per-block maxima when `return_all` is set.
    """
    if h <= 0:
        raise ValueError('h must be positive')
    errors = {}
    for name, p in params.items():
        analytic = grads[name].reshape(-1)
        flat = p.view(-1)
        err = 0.
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            f_plus = float(f())
            flat[i] = orig - h
            f_minus = float(f())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = analytic[i].item()
            err = max(err, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        errors[name] = err
    if return_all:
        return errors
    return max(errors.values(), default=0.)
