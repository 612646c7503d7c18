import numpy as np
import pytest

from promptevo import _edt_py, kernels

BACKENDS = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])


@pytest.fixture(params=BACKENDS)
def edt_backend(request, monkeypatch):
    """Run a test once per available distance-transform backend."""
    if request.param == "python":
        monkeypatch.setattr(kernels, "edt_sq", _edt_py.edt_sq)
    return request.param


def brute_force_sdt(mask: np.ndarray) -> np.ndarray:
    """All-pairs signed distance: O(N^4), independent of the envelope algorithm."""
    fg = mask > 0.5
    ys, xs = np.mgrid[0 : mask.shape[0], 0 : mask.shape[1]]
    pts = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
    flat = fg.ravel()
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        other = flat != flat[i]
        dist = np.sqrt(d2[i, other].min())
        out[i] = dist if flat[i] else -dist
    return out.reshape(mask.shape)


def random_mask(rng: np.random.Generator, shape, p=None) -> np.ndarray:
    """Random binary mask with at least one pixel of each class."""
    while True:
        m = (rng.random(shape) < (p if p is not None else rng.uniform(0.1, 0.9))).astype(np.float64)
        if 0 < m.sum() < m.size:
            return m


# --- acceptance reporting ------------------------------------------------------

_ACCEPTANCE: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(code, title): end-to-end acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    code, title = marker.args
    props = ", ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE[code] = (title, "PASS" if call.excinfo is None else "FAIL", props)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(_ACCEPTANCE):
        title, status, props = _ACCEPTANCE[code]
        terminalreporter.write_line(f"{code} {title}: {status}" + (f"  ({props})" if props else ""))
