import math

import pytest
import torch

from gatedseg.optim import AdamW, update_step


def test_single_scalar_step_matches_closed_form():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w0, g = 2.0, 0.5
    p = torch.tensor([w0], dtype=torch.float64)
    m = torch.zeros(1, dtype=torch.float64)
    v = torch.zeros(1, dtype=torch.float64)
    update_step(p, torch.tensor([g], dtype=torch.float64), m, v, step=1, lr=lr,
                wd=0.0, beta1=b1, beta2=b2, eps=eps)
    # first step: m_hat = g, v_hat = g^2, so w <- w - lr * g/(|g| + eps)
    expected = w0 - lr * g / (math.sqrt(g * g) + eps)
    assert abs(p.item() - expected) < 1e-12
    assert abs(m.item() - (1 - b1) * g) < 1e-12
    assert abs(v.item() - (1 - b2) * g * g) < 1e-12


def test_second_step_matches_hand_recursion():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    p = torch.tensor([1.0], dtype=torch.float64)
    m = torch.zeros(1, dtype=torch.float64)
    v = torch.zeros(1, dtype=torch.float64)
    grads = [0.3, -0.7]
    # independent recursion in python floats
    w, mm, vv = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        update_step(p, torch.tensor([g], dtype=torch.float64), m, v, step=t,
                    lr=lr, wd=0.0, beta1=b1, beta2=b2, eps=eps)
        mm = b1 * mm + (1 - b1) * g
        vv = b2 * vv + (1 - b2) * g * g
        mh = mm / (1 - b1 ** t)
        vh = vv / (1 - b2 ** t)
        w = w - lr * mh / (math.sqrt(vh) + eps)
        assert abs(p.item() - w) < 1e-12


def test_weight_decay_is_decoupled_multiplicative_shrink():
    lr, wd = 0.1, 0.01
    p = torch.tensor([3.0], dtype=torch.float64)
    update_step(p, torch.zeros(1, dtype=torch.float64),
                torch.zeros(1, dtype=torch.float64),
                torch.zeros(1, dtype=torch.float64),
                step=1, lr=lr, wd=wd)
    # zero gradient: only the decay acts, w <- w * (1 - lr*wd)
    assert abs(p.item() - 3.0 * (1 - lr * wd)) < 1e-15


def test_zero_gradient_zero_decay_is_noop():
    p = torch.tensor([1.5])
    update_step(p, torch.zeros(1), torch.zeros(1), torch.zeros(1), step=1, lr=0.1)
    assert p.item() == 1.5


def test_optimizer_skips_params_without_gradients():
    a = torch.nn.Parameter(torch.tensor([1.0]))
    b = torch.nn.Parameter(torch.tensor([2.0]))
    opt = AdamW({"a": a, "b": b}, lr=0.1)
    a.grad = torch.tensor([1.0])
    opt.step()
    assert a.item() != 1.0
    assert b.item() == 2.0
    assert torch.all(opt.m["b"] == 0) and torch.all(opt.v["b"] == 0)


def test_optimizer_matches_torch_adamw_on_small_model():
    torch.manual_seed(0)
    ours = torch.nn.Linear(4, 3)
    ref = torch.nn.Linear(4, 3)
    ref.load_state_dict(ours.state_dict())
    opt = AdamW(dict(ours.named_parameters()), lr=1e-2, weight_decay=0.05)
    ref_opt = torch.optim.AdamW(ref.parameters(), lr=1e-2, weight_decay=0.05,
                                betas=(0.9, 0.999), eps=1e-8)
    x = torch.randn(8, 4)
    for _ in range(5):
        opt.zero_grad()
        ours(x).pow(2).mean().backward()
        opt.step()
        ref_opt.zero_grad()
        ref(x).pow(2).mean().backward()
        ref_opt.step()
    for p1, p2 in zip(ours.parameters(), ref.parameters()):
        torch.testing.assert_close(p1, p2, atol=1e-6, rtol=1e-6)


def test_state_dict_roundtrip_resumes_identically():
    torch.manual_seed(1)
    model = torch.nn.Linear(3, 2)
    opt = AdamW(dict(model.named_parameters()), lr=1e-2)
    x = torch.randn(4, 3)
    for _ in range(3):
        opt.zero_grad()
        model(x).sum().backward()
        opt.step()
    saved = opt.state_dict()
    weights = {k: v.clone() for k, v in model.state_dict().items()}

    # continue two more steps
    for _ in range(2):
        opt.zero_grad()
        model(x).sum().backward()
        opt.step()
    final = {k: v.clone() for k, v in model.state_dict().items()}

    # rewind and resume from the snapshot: must land bitwise on the same point
    model.load_state_dict(weights)
    opt2 = AdamW(dict(model.named_parameters()), lr=1e-2)
    opt2.load_state_dict(saved)
    assert opt2.step_count == 3
    for _ in range(2):
        opt2.zero_grad()
        model(x).sum().backward()
        opt2.step()
    for k, v in model.state_dict().items():
        assert torch.equal(v, final[k])
