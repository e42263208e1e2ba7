import time

import numpy as np
import pytest

from earid.config import DatasetConfig
from earid.dataset import gen_population

TIMINGS = {}
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "detail": ""})
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        e = ACCEPTANCE[number]
        status = "PASS" if e["ok"] else "FAIL"
        line = f"criterion {number} {e['title']}: {status}"
        terminalreporter.write_line(line + (f" ({e['detail']})" if e["detail"] else ""))


@pytest.fixture
def detail(request):
    """Attach measured values to the acceptance summary line."""
    mark = request.node.get_closest_marker("acceptance")

    def record(text):
        number, title = mark.args
        entry = ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "detail": ""})
        entry["detail"] = "; ".join(filter(None, [entry["detail"], text]))
        print(f"criterion {number}: {text}")

    return record


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    cfg = DatasetConfig(n_subjects=8, scans_per_subject=12, n_enroll=4, attacks=True,
                        n_attack_scans=20, n_public=4, population_seed=11)
    return gen_population(cfg, tmp_path_factory.mktemp("small"))


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    t0 = time.perf_counter()
    ds = gen_population(DatasetConfig(attacks=True), tmp_path_factory.mktemp("default"))
    TIMINGS["gen_default"] = time.perf_counter() - t0
    return ds


@pytest.fixture(scope="session")
def default_cache(default_dataset):
    from earid.harness import FeatureCache

    t0 = time.perf_counter()
    cache = FeatureCache(default_dataset)
    TIMINGS["cache_default"] = time.perf_counter() - t0
    return cache


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
