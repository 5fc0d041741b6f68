import os
import sys

import pytest

# flat module layout: make the repository root importable
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: convergence studies and reference solutions (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test starts from default settings and an empty result cache"""
    import cache_manager
    import settings

    for name in list(os.environ):
        if name.startswith("PEER_"):
            monkeypatch.delenv(name)
    settings.reload_settings(env_file=os.devnull)
    cache_manager._cache_manager = None
    yield
    settings._settings = None
    cache_manager._cache_manager = None
