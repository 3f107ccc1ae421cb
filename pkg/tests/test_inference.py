from types import SimpleNamespace

import numpy as np
import pytest
import torch

from gatedseg.config import tiny_model_config
from gatedseg.data.normalize import NormStats, compute_stats
from gatedseg.data.phantom import default_phantom_spec, generate_phantom
from gatedseg.errors import ShapeError
from gatedseg.inference import infer_volume
from gatedseg.model.net import GatedSegNet


@pytest.fixture(scope="module")
def volume():
    return generate_phantom(default_phantom_spec((8, 32, 32), seed=0), "subj")


@pytest.fixture(scope="module")
def stats(volume):
    return compute_stats([volume])


def tiny_net(**overrides):
    torch.manual_seed(0)
    return GatedSegNet(tiny_model_config(**overrides))


def suppress_detection(net):
    """Pin the detection head to near-zero probabilities for every input."""
    with torch.no_grad():
        net.detection_head.fc2.weight.zero_()
        net.detection_head.fc2.bias.fill_(-20.0)
    return net


def test_output_shapes_and_ranges(volume, stats):
    probs, hard, det = infer_volume(tiny_net(), volume, stats, "none")
    assert probs.shape == (3, 8, 32, 32)
    assert hard.shape == (3, 8, 32, 32)
    assert det.shape == (8, 3)
    assert probs.min() >= 0.0 and probs.max() <= 1.0
    assert set(np.unique(hard)) <= {0, 1}
    assert det.min() >= 0.0 and det.max() <= 1.0


def test_inference_deterministic(volume, stats):
    net = tiny_net()
    a = infer_volume(net, volume, stats, "none")
    b = infer_volume(net, volume, stats, "none")
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_geometry_mismatch_raises_before_compute(stats):
    bad = generate_phantom(default_phantom_spec((8, 64, 64), seed=0), "bad")
    with pytest.raises(ShapeError, match="64x64"):
        infer_volume(tiny_net(), bad, stats)


def test_hard_gate_with_suppressed_detection_yields_empty_volume(volume, stats):
    net = suppress_detection(tiny_net())
    probs, hard, det = infer_volume(net, volume, stats, "hard", 0.5)
    assert det.max() < 1e-6
    assert probs.sum() == 0.0
    assert hard.sum() == 0


def test_mode_none_ignores_suppressed_detection(volume, stats):
    net = suppress_detection(tiny_net())
    probs, _, _ = infer_volume(net, volume, stats, "none")
    assert probs.sum() > 0.0  # raw sigmoid output passes through ungated


def test_gating_defaults_come_from_model_config(volume, stats):
    net = suppress_detection(tiny_net(gating_mode="hard"))
    _, hard_default, _ = infer_volume(net, volume, stats)  # mode from config
    assert hard_default.sum() == 0
    _, hard_none, _ = infer_volume(net, volume, stats, "none")
    assert not np.array_equal(hard_default, hard_none) or hard_none.sum() == 0


class RecordingStub:
    """Oracle stand-in for the network: plays back scripted logits and records
    every context tensor it is given."""

    def __init__(self, config, logits_per_slice, det_prob=1.0):
        self.config = config
        self.logits = logits_per_slice
        self.det_prob = det_prob
        self.received_prev = []
        self.calls = 0

    def eval(self):
        return self

    def __call__(self, image, prev):
        self.received_prev.append(prev.clone())
        out = SimpleNamespace(
            seg_logits=self.logits[self.calls],
            det_probs=torch.full((1, self.config.num_roi), self.det_prob),
        )
        self.calls += 1
        return out


def test_autoregressive_context_is_previous_hard_gated_output(volume, stats):
    cfg = tiny_model_config()
    torch.manual_seed(4)
    logits = [torch.randn(1, 3, 32, 32) * 4 for _ in range(8)]
    stub = RecordingStub(cfg, logits)
    probs, hard, _ = infer_volume(stub, volume, stats, "none")
    assert stub.calls == 8
    assert torch.all(stub.received_prev[0] == 0)
    for z in range(1, 8):
        expect = torch.from_numpy(hard[:, z - 1]).float()[None]
        assert torch.equal(stub.received_prev[z], expect)
    # hard output is the thresholded gated probability of that same call
    for z in range(8):
        assert np.array_equal(hard[:, z],
                              (torch.sigmoid(logits[z])[0] >= 0.5).numpy())


def test_context_propagation_respects_gating(volume, stats):
    # under a failing hard gate every prediction is zeroed, so the context
    # passed forward must stay all-zero even for confident logits
    cfg = tiny_model_config()
    logits = [torch.full((1, 3, 32, 32), 8.0) for _ in range(8)]
    stub = RecordingStub(cfg, logits, det_prob=0.1)
    _, hard, _ = infer_volume(stub, volume, stats, "hard", 0.5)
    assert hard.sum() == 0
    for prev in stub.received_prev:
        assert torch.all(prev == 0)
