import sys

import numpy as np
import pytest
import torch

from gesturestyle.corpus import validate_and_load_corpus
from gesturestyle.synthcorpus import SynthConfig, generate_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 speakers x 20 segments, narrow text stream to keep tests quick."""
    root = tmp_path_factory.mktemp("small_corpus")
    cfg = SynthConfig(n_speakers=4, segments_per_speaker=20, seed=7, mel_bins=16, text_dim=24)
    generate_synthetic_corpus(cfg, root)
    manifest, accessor = validate_and_load_corpus(root)
    return root, manifest, accessor, cfg


def fd_grad(f, tensors, h=1e-6, max_entries=6, seed=0):
    """Central-difference estimate of df/dx for a few entries of each tensor (in place, float64)."""
    rng = np.random.default_rng(seed)
    out = []
    for x in tensors:
        flat = x.data.view(-1)
        idx = rng.choice(flat.numel(), size=min(max_entries, flat.numel()), replace=False)
        est = []
        for i in idx:
            old = flat[i].item()
            flat[i] = old + h
            fp = f().item()
            flat[i] = old - h
            fm = f().item()
            flat[i] = old
            est.append((fp - fm) / (2 * h))
        out.append((idx, np.array(est)))
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
