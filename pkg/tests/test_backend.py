import numpy as np
import pytest

from gswdesign import build_setup, run_gsw
from gswdesign.backend import backend_name


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("GSWDESIGN_BACKEND", "numpy")
    assert backend_name() == "numpy"
    setup = build_setup(np.ones((6, 1)), 0.5)
    z = run_gsw(setup, seed=1)  # dispatches through the env-selected backend
    assert set(np.unique(z)) <= {-1.0, 1.0}


def test_env_flag_numba(monkeypatch):
    monkeypatch.setenv("GSWDESIGN_BACKEND", "numba")
    assert backend_name() == "numba"


def test_env_flag_auto(monkeypatch):
    monkeypatch.delenv("GSWDESIGN_BACKEND", raising=False)
    assert backend_name() in ("numba", "numpy")


def test_env_flag_invalid(monkeypatch):
    monkeypatch.setenv("GSWDESIGN_BACKEND", "cuda")
    with pytest.raises(ValueError):
        backend_name()


def test_backends_match_on_default_dispatch(monkeypatch):
    setup = build_setup(np.random.default_rng(0).standard_normal((20, 2)), 0.4)
    monkeypatch.setenv("GSWDESIGN_BACKEND", "numpy")
    z_np = run_gsw(setup, seed=5)
    monkeypatch.setenv("GSWDESIGN_BACKEND", "numba")
    z_nb = run_gsw(setup, seed=5)
    assert np.array_equal(z_np, z_nb)
