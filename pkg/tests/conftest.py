from __future__ import annotations

import numpy as np
import pytest
import torch

from kinemic.datasets import CaptionedSample, LabeledSample
from kinemic.features import FeatureLayout, FeatureSequence
from kinemic.motion import toy_skeleton
from kinemic.textspace import HashedBagOfTokensEncoder
from kinemic.toy import ToyConfig, generate_toy_corpus

# tiny sizes keep the unit suite fast; the acceptance module runs the
# realistic configuration
TINY_TOY = ToyConfig(
    source_count=12,
    shots_per_class=2,
    source_length_range=(30, 44),
    target_length_range=(12, 20),
)

_ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = ""):
    _ACCEPTANCE_RESULTS.append((number, name, passed, detail))
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    print(line, flush=True)
    assert passed, f"criterion {number} ({name}) failed: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number, name, ok, detail in sorted(_ACCEPTANCE_RESULTS):
            status = "PASS" if ok else "FAIL"
            terminalreporter.write_line(
                f"[{status}] criterion {number:2d} {name}: {detail}"
            )


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_toy_corpus(TINY_TOY, seed=0)


@pytest.fixture(scope="session")
def encoder():
    return HashedBagOfTokensEncoder()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_feature_sequence(n: int, joints: int = 8, seed: int = 0,
                            fps: float = 20.0) -> FeatureSequence:
    layout = FeatureLayout(joints)
    data = np.random.default_rng(seed).normal(size=(n, layout.total_dim))
    top = toy_skeleton() if joints == 8 else None
    return FeatureSequence(data=data, layout=layout, fps=fps, topology=top)


def make_labeled(n: int, label: str, sample_id: str, seed: int = 0) -> LabeledSample:
    return LabeledSample(
        motion=random_feature_sequence(n, seed=seed), label=label, sample_id=sample_id
    )


def make_captioned(n: int, caption: str, source_id: str, seed: int = 0) -> CaptionedSample:
    return CaptionedSample(
        motion=random_feature_sequence(n, seed=seed), caption=caption,
        source_id=source_id,
    )


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
    yield
