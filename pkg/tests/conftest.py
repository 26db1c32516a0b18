import numpy as np
import pytest

from facereenact.morphable_model import make_basis
from facereenact.synthetic import make_synthetic_basis


@pytest.fixture(scope="session")
def basis():
    """Procedural face basis with 30 identity and 20 expression modes."""
    return make_synthetic_basis(30, 20, seed=0)


@pytest.fixture(scope="session")
def small_basis():
    """Coarser face mesh for tests that rasterise or fit many times."""
    return make_synthetic_basis(8, 6, grid=25, seed=3)


def tiny_basis(rng=None, n=70, n_id=3, n_exp=2):
    """Random orthonormal basis over a random point cloud; enough for container tests."""
    rng = rng or np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.normal(size=(3 * n, n_id + n_exp)))
    tris = rng.integers(0, n, size=(10, 3))
    return make_basis(rng.normal(size=3 * n), 0.1 * rng.normal(size=3 * n),
                      U[:, :n_id], U[:, n_id:], rng.uniform(0.5, 2, n_id),
                      rng.uniform(0.5, 2, n_exp), tris, np.arange(68))


@pytest.fixture
def acceptance(request):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        lines.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
