import os

import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: desk-scale training runs, enabled with CTXLATE_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CTXLATE_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set CTXLATE_RUN_SLOW=1 to run desk-scale acceptance")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
