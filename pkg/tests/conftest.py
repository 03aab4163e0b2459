import numpy as np
import pytest

FD_STEP = 1e-5
# relative error floor: central differences carry ~1e-10 absolute error,
# so entries whose true gradient is ~0 are compared against this scale
FD_SCALE_FLOOR = 1e-6


def numeric_grad(f, arr, h=FD_STEP):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric):
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    denom = np.maximum(np.abs(a) + np.abs(n), FD_SCALE_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Records one acceptance verdict; lines are printed in the terminal summary."""
    store = request.config.stash.setdefault(CRITERIA_KEY, {})

    def record(number, ok, detail):
        store[number] = (ok, detail)

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(CRITERIA_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
