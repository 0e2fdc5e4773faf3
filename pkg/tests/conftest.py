import numpy as np
import pytest

from contra_cluster.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_blob_images(n, seed=0, classes=2):
    """Synthetic 28x28 images: class c is a bright square at a class-specific spot plus noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    imgs = rng.uniform(0.0, 0.1, size=(n, 1, 28, 28)).astype(np.float32)
    for i, c in enumerate(labels):
        r0 = 4 + 12 * (c % 2)
        c0 = 4 + 12 * ((c // 2) % 2)
        imgs[i, 0, r0 : r0 + 10, c0 : c0 + 10] = rng.uniform(0.7, 1.0)
    return Dataset(imgs, labels.astype(np.int64), "train", max(2, classes))


@pytest.fixture
def blob_dataset():
    return make_blob_images(128, seed=0)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion: PASS / FAIL / SKIP plus detail."""
    rows = {}
    for outcome in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            if rep.when != "call" and outcome == "passed":
                continue
            name = nodeid.split("::")[-1]
            num = int(name.split("_")[2])
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            if outcome == "skipped":
                status = "SKIP"
                if isinstance(rep.longrepr, tuple):
                    detail = rep.longrepr[2].removeprefix("Skipped: ")
            else:
                status = "PASS" if outcome == "passed" else "FAIL"
            rows[num] = (status, name, detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(rows):
        status, name, detail = rows[num]
        terminalreporter.write_line(f"criterion {num:2d} {status:4s} {name} {detail}".rstrip())
