import os
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from cheapseg.config import RunConfig  # noqa: E402
from cheapseg.dataset import ClassSet, synthesize  # noqa: E402
from cheapseg.dstf import DstfParams  # noqa: E402
from cheapseg.ilp import IlpParams  # noqa: E402
from cheapseg.presets import easy  # noqa: E402
from cheapseg.stf import StfParams, train_stf  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_STF = StfParams(patch_size=5, n_trees=2, max_depth=6, n_candidates=40, min_samples_leaf=3, stride=2)
SMALL_ILP = IlpParams(n_trees=5, max_depth=6, n_candidates=16)


def small_config(**kw):
    cfg = RunConfig(stf=SMALL_STF, ilp=SMALL_ILP, dstf=DstfParams(cap_fraction=0.5))
    return replace(cfg, **kw)


@pytest.fixture(scope="session")
def tiny_data():
    spec = replace(easy(), n_train=8, n_val=2, n_test=4, width=32, height=32)
    images, labels, splits, cats = synthesize(spec, 3)
    return spec, images, labels, splits, cats


@pytest.fixture(scope="session")
def tiny_split(tiny_data):
    spec, images, labels, splits, cats = tiny_data
    pick = lambda name: [i for i, s in enumerate(splits) if s == name]  # noqa: E731
    tr, te = pick("train"), pick("test")
    return {
        "class_set": ClassSet(spec.class_names),
        "train": ([images[i] for i in tr], [labels[i] for i in tr], [cats[i] for i in tr]),
        "test": ([images[i] for i in te], [labels[i] for i in te], [cats[i] for i in te]),
    }


@pytest.fixture(scope="session")
def tiny_forest(tiny_split):
    images, labels, _ = tiny_split["train"]
    return train_stf(images, labels, 6, SMALL_STF, seed=11)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_split):
    from cheapseg.pipeline import train_bundle
    images, labels, _ = tiny_split["train"]
    return train_bundle(images, labels, tiny_split["class_set"], small_config(seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report -------------------------------------------------------

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    ok, seen, names = _criteria.get(n, (True, title, []))
    if rep.failed or rep.skipped:
        ok = False
        names.append(item.name)
    _criteria[n] = (ok, seen, names)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, title, names = _criteria[n]
        extra = "" if ok else "  (%s)" % ", ".join(names)
        terminalreporter.write_line("criterion %2d %s  %s%s" % (n, "PASS" if ok else "FAIL", title, extra))
