import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Default desk-scale dataset (seed 0: 60 train / 10 validation / 20 test), rendered once."""
    from avsep.pipeline.config import TOY
    from avsep.pipeline.run import RunConfig, prepare_split, simulate

    root = tmp_path_factory.mktemp("toy_data")
    cfg = RunConfig(seed=0)
    simulate(cfg, root, jobs=4)
    return {
        "dir": root,
        "train": prepare_split(root, "train", TOY, jobs=4),
        "validation": prepare_split(root, "validation", TOY, jobs=4),
        "test": prepare_split(root, "test", TOY, jobs=4),
    }


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """A handful of short scenes for pipeline plumbing tests."""
    from avsep.pipeline.config import TOY
    from avsep.pipeline.run import RunConfig, prepare_split, simulate
    from avsep.room.dataset import SamplerConfig

    root = tmp_path_factory.mktemp("mini_data")
    cfg = RunConfig(seed=3, counts={"train": 4, "validation": 2, "test": 3},
                    sampler=SamplerConfig(duration_s=2.0))
    simulate(cfg, root, jobs=2)
    return {"dir": root, **{s: prepare_split(root, s, TOY, jobs=2) for s in ("train", "validation", "test")}}
