"""Adam with decoupled weight decay, written as a pure per-tensor update so
training state serializes exactly and single steps are testable in closed form."""

from __future__ import annotations

import torch


def update_step(param: torch.Tensor, grad: torch.Tensor, m: torch.Tensor, v: torch.Tensor,
                step: int, lr: float, wd: float = 0.0, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step; weight decay is applied directly to the
    parameter (w <- w - lr*wd*w), independent of the gradient term.

    Mutates param, m and v in place. `step` is 1-based.
    """
    if wd:
        param.mul_(1.0 - lr * wd)
    m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
    v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param.addcdiv_(m_hat, v_hat.sqrt().add_(eps), value=-lr)


class AdamW:
    """Minimal decoupled-weight-decay optimizer over named parameters."""

    def __init__(self, named_params: dict[str, torch.nn.Parameter], lr: float,
                 weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: torch.zeros_like(p, requires_grad=False) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p, requires_grad=False) for k, p in self.params.items()}

    @torch.no_grad()
    def step(self):
        """Update every parameter that received a gradient; parameters with
        grad None are left untouched (moments included)."""
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            update_step(p.data, p.grad, self.m[name], self.v[name], self.step_count,
                        self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {k: t.clone() for k, t in self.m.items()},
            "v": {k: t.clone() for k, t in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.step_count = state["step_count"]
        for k in self.m:
            self.m[k].copy_(state["m"][k])
            self.v[k].copy_(state["v"][k])
