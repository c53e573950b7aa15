import numpy as np
import pytest

from sgmfs import Dataset


def planted(n=60, d=15, c=4, informative=4, noise=0.3, seed=0):
    """Features x samples data whose labels depend on the first ``informative`` features."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(d, n))
    w = np.zeros((d, c))
    w[:informative] = rng.normal(size=(informative, c))
    y = (x.T @ w + noise * rng.normal(size=(n, c)) > 0).astype(float)
    # every label needs a positive and a negative
    y[0] = 1.0
    y[1] = 0.0
    return Dataset(x, y)


@pytest.fixture
def small_dataset():
    return planted()


def write_csv(path, x_rows, y_rows, names=None):
    d = len(x_rows[0])
    c = len(y_rows[0])
    header = names or [f"f{i}" for i in range(d)] + [f"l{j}" for j in range(c)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for xr, yr in zip(x_rows, y_rows):
            fh.write(",".join([repr(float(v)) for v in xr] + [str(int(v)) for v in yr]) + "\n")
    return path


# ---- acceptance reporting ------------------------------------------------

ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store one criterion verdict for the end-of-session summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})")
