import numpy as np
import pytest

from xqclme.bench import (EXAMPLES, binned_gamma_stats, get_example, interface_profile,
                          read_summary, run_benchmark, write_sweep)
from xqclme.errors import InvalidGeometryError
from xqclme.geometry import Circle


def test_examples_are_valid():
    assert set(EXAMPLES) == {"circle", "square", "square-modified", "fiber"}
    c = get_example("circle")
    assert c.bounds_for("lme-nonuniform-noH") == (0.3, 4.0)
    assert c.bounds_for("lme-uniform-H") == (0.8, 4.0)
    assert get_example("square-modified").bounds_for("lme-nonuniform-noH") == (1.0, 4.0)
    f = get_example("fiber")
    assert f.geometry.length == pytest.approx(80.0)
    assert f.stiffness_contrast == 100.0
    with pytest.raises(ValueError):
        get_example("hexagon")
    with pytest.raises(ValueError):
        get_example("circle", spacings=(7,))
    with pytest.raises(InvalidGeometryError):
        get_example("circle", geometry=Circle((120.0, 0.0), 40.0))


def test_binning_quartiles():
    psi = np.linspace(-10, 10, 21)
    gamma = np.where(np.abs(psi) <= 1, 0.5, 3.0)
    st = binned_gamma_stats(gamma, psi, n_bins=20)
    assert st.edges.size == 21
    assert st.count.sum() == 21
    i0 = st.bin_of(0.0)
    assert st.median[i0] == pytest.approx(0.5)
    prof = interface_profile(st, 4.0)
    assert prof["interface"] == pytest.approx(0.5)
    assert prof["inside"] == pytest.approx(3.0) and prof["outside"] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        binned_gamma_stats(gamma, psi, 0)


def test_small_sweep_writes_deterministic_files(tmp_path):
    spec = get_example("circle", half_extent=16.0, geometry=Circle((-2.0, 0.0), 6.5),
                       spacings=(8, 4), u_d=0.32,
                       schemes=("linear-H", "lme-baseline-H", "lme-pattern-H"))
    recs = run_benchmark(spec, cache=False)
    assert all(r.status == "ok" for r in recs)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    write_sweep(recs, out1, ["test"])
    write_sweep(run_benchmark(spec, cache=False), out2, ["test"])
    for f in sorted(out1.iterdir()):
        assert f.read_bytes() == (out2 / f.name).read_bytes(), f.name
    rows = read_summary(out1 / "sweep_summary.csv")
    assert len(rows) == 6 and rows[0]["wall_s"] == ""
    by = {(r["scheme"], r["h"]): float(r["eps_u"]) for r in rows}
    assert by[("lme-baseline-H", "4")] < by[("linear-H", "4")]


def test_failed_cells_are_recorded():
    spec = get_example("circle", half_extent=16.0, geometry=Circle((-2.0, 0.0), 6.5),
                       spacings=(4,), u_d=0.32, schemes=("lme-baseline-H",))
    recs = run_benchmark(spec, cache=False, gamma0=-1.0)
    assert recs[0].status == "failed" and "InvalidGeometryError" in recs[0].error


def test_binning_examples():
    st = binned_gamma_stats(np.full(30, 1.7), np.linspace(-5, 5, 30), n_bins=6)
    assert np.all(st.median == 1.7) and np.all(st.q1 == 1.7) and np.all(st.q3 == 1.7)
    st = binned_gamma_stats(np.array([1.0, 2.0, 3.0, 9.0]), np.array([0.1, 0.2, 0.3, 10.0]),
                            n_bins=2)
    assert st.median[0] == 2.0


def test_identical_fields_give_zero_error():
    from xqclme.qc import displacement_errors
    u = np.random.default_rng(0).standard_normal((10, 2))
    assert displacement_errors(u, u)[0] == 0.0
