import numpy as np
import pytest

from rscn.config import ExperimentConfig

ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(**sections):
    """Shallow config with short schedules, for fast trainer tests."""
    base = {
        "seed": 0,
        "data": {"k": 3, "subspace_dim": 2, "ambient_dim": 10, "n_per_class": 6},
        "schedule": {"ae_epochs": 5, "dsc_epochs": 40, "dsc_lr": 0.01, "t_max": 30,
                     "t0": 5, "warmup": 10, "lr_start": 0.005, "early_stop": False},
        "postprocess": {"rank": 6},
    }
    for name, values in sections.items():
        base.setdefault(name, {}).update(values) if isinstance(values, dict) else base.update({name: values})
    return ExperimentConfig.from_dict(base)


def fd_gradient(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar f at array x (entrywise)."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))
