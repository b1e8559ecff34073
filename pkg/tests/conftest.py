import numpy as np
import pytest
import torch

from timebalance.synthgen import SynthSpec, gen_benchmark, gen_corpus

torch.set_num_threads(1)

TINY = SynthSpec(num_classes_atomic=2, num_classes_composite=2, videos_per_class=4, T=32, H=16, W=16)


@pytest.fixture(scope="session")
def tiny_spec():
    return TINY


@pytest.fixture(scope="session")
def tiny_corpus():
    return gen_corpus(TINY)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny") / "corpus"
    gen_benchmark(TINY, root)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
