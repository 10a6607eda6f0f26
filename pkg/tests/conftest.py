import pytest
from PIL import Image

from hatefusion.corpus import load_manifest
from hatefusion.fusion import ModelSpec
from hatefusion.synthetic import make_separable_corpus, make_report_fixture

# stub geometry used throughout: 64px tiles, quadrant pooling
STUB_SPEC = ModelSpec(image_size=64, stub_grid=2, stub_native_dim=256)


def png_captions(manifest):
    """Read captions straight from PNG metadata (what the stub OCR engine prints)."""
    return {s.index: Image.open(s.path).text.get("ocr_text", "") for s in manifest}


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("separable")
    make_separable_corpus(d)
    return d


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    m = load_manifest(corpus_dir / "manifest.csv", "train")
    return m.with_texts(png_captions(m))


@pytest.fixture(scope="session")
def report_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("report_set")
    make_report_fixture(d)
    return d


@pytest.fixture(scope="session")
def report_set(report_dir):
    m = load_manifest(report_dir / "manifest.csv")
    return m.with_texts(png_captions(m))


@pytest.fixture
def stub_spec():
    return STUB_SPEC


# -- acceptance reporting ------------------------------------------------------
# tests marked ``criterion("name")`` get one PASS/FAIL/SKIP line each in the
# terminal summary; a criterion spread over several tests fails if any part fails

_criteria: dict[str, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        state = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _criteria.setdefault(mark.args[0], []).append(state)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, states in _criteria.items():
        if "FAIL" in states:
            verdict = "FAIL"
        elif "PASS" in states:
            verdict = "PASS" + (" (partly skipped)" if "SKIP" in states else "")
        else:
            verdict = "SKIP"
        terminalreporter.write_line(f"{verdict:<4}  {name}")
