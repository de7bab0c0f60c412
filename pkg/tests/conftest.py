import warnings

import numpy as np
import pytest

from xqclme.geometry import Circle, Segment, Square
from xqclme.lattice import MaterialRule, benchmark_bcs, build_lattice, solve_full
from xqclme.lme import RepatomGrid
from xqclme.qc import QcProblem

# Small stand-ins for the benchmark inclusions on a 33 x 33 lattice (d = 1, h = 4).
SMALL_GEOMETRIES = {
    "circle": Circle((-1.0, 0.0), 6.5),
    "square": Square((0.5, 0.0), 5.5),
    "fiber": Segment((-7.0, -7.0), (7.0, 7.0)),
}


def small_problem(name, half=16, h=4, contrast=10.0, u_d=0.32, enrich=True):
    geo = SMALL_GEOMETRIES[name]
    model = build_lattice(half, 1, MaterialRule(geometry=geo, contrast=contrast))
    bcs = benchmark_bcs(model, u_d)
    radius = 2.5 if geo.closed else 0.7
    prob = QcProblem(model, bcs, RepatomGrid.regular(model, h), geometry=geo,
                     enrichment_radius=radius, enrich=enrich)
    return prob


@pytest.fixture(scope="session")
def small_cases():
    """Reduced problems and full reference states for the three small inclusions."""
    out = {}
    for name in SMALL_GEOMETRIES:
        prob = small_problem(name)
        out[name] = (prob, solve_full(prob.model, prob.bcs))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield


# ---------------------------------------------------------------------------
# Full-size benchmark cells, computed once per test session.

_CELLS = {}


def cell(example, scheme, h):
    """Run (or reuse) one benchmark cell of an example at repatom spacing ``h``."""
    from xqclme.bench import get_example, reference_solution, run_scheme
    key = (example, scheme, h)
    if key not in _CELLS:
        spec = get_example(example)
        _CELLS[key] = run_scheme(spec, reference_solution(spec), scheme, h)
    return _CELLS[key]


# ---------------------------------------------------------------------------
# Acceptance verdicts, printed as one line per criterion at the end of the run.

_VERDICTS = {}


def record_verdict(number, ok, detail):
    _VERDICTS[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
