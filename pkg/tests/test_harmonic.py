import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import structure_for
from frf.harmonic import (
    InfeasibleTangent,
    NotFixedPointWarning,
    check_hc,
    embed,
    extension_matrices,
    harmonic_extend,
    tangent,
    wn_diagnostic,
)
from frf.resistance import QuadForm
from frf.structure import BUILTINS, load_definition, parse_word, word_index


def slot_positions(fdef, n):
    """Reference-map coordinates of each vertex id at level n."""
    lg = fdef.level(n)
    pts = fdef.geometry.level_points(n)
    out = np.zeros((lg.n_vertices, fdef.geometry.dim))
    out[lg.cells] = pts
    return out


def test_constant_boundary_gives_constant(hs):
    vals = harmonic_extend(hs.form(3), np.full(hs.fdef.b, 2.5))
    assert np.abs(vals - 2.5).max() < 1e-12


def test_sg_two_fifths_rule():
    hs = structure_for("sg")
    a, b, c = 0.7, -1.3, 2.0
    vals = harmonic_extend(hs.form(1), [a, b, c])
    # oracle: direct 3x3 interior solve of the unit-triangle network
    # midpoints m01, m02, m12 each see two corners and the other two midpoints
    L = np.array([[4.0, -1, -1], [-1, 4, -1], [-1, -1, 4]])
    rhs = np.array([a + b, a + c, b + c])
    mids = np.linalg.solve(L, rhs)
    expected = sorted([(2 * a + 2 * b + c) / 5, (2 * a + 2 * c + b) / 5, (2 * b + 2 * c + a) / 5])
    assert np.allclose(sorted(mids), expected, atol=1e-14)
    assert np.allclose(sorted(vals[3:]), expected, atol=1e-12)


def test_interval_linear_interpolation():
    hs = structure_for("interval")
    fdef = hs.fdef
    vals = harmonic_extend(hs.form(3), [0.0, 1.0])
    x = slot_positions(fdef, 3)[:, 0]
    assert np.allclose(vals, x, atol=1e-14)
    assert np.allclose(np.sort(vals), np.arange(9) / 8)


def test_sg_extension_entries():
    A = structure_for("sg").ext.A
    vals = np.unique(np.round(A, 12))
    assert set(vals.tolist()) <= {0.0, 0.2, 0.4, 1.0}


def test_interval_extension_matrices():
    A = structure_for("interval").ext.A
    assert np.allclose(A[0], [[1, 0], [0.5, 0.5]])
    assert np.allclose(A[1], [[0.5, 0.5], [0, 1]])


def test_extension_rows_and_signs(hs):
    A = hs.ext.A
    assert np.abs(A.sum(axis=2) - 1).max() < 1e-12
    assert A.min() >= -1e-14


def test_not_fixed_point_warns():
    fdef = load_definition("sg")
    with pytest.warns(NotFixedPointWarning):
        extension_matrices(QuadForm.complete(3), fdef, np.ones(3))


@pytest.mark.parametrize("name", BUILTINS)
def test_products_match_direct_solve(name):
    hs = structure_for(name)
    top = 3 if hs.fdef.m > 6 else 4
    for n in range(1, top + 1):
        a = embed(hs, n).coords
        b = embed(hs, n, method="dirichlet").coords
        assert np.abs(a - b).max() < 1e-9


def test_composition_order_against_solve():
    # M_{w.j} = A_j M_w: cell w's vertex values for boundary data h equal M_w h
    hs = structure_for("pci6a")
    h = np.array([0.2, -1.0, 3.0])
    vals = harmonic_extend(hs.form(3), h)
    lg = hs.fdef.level(3)
    for word in [(0, 1, 2), (5, 0, 3), (2, 2, 4)]:
        assert np.abs(hs.ext.M(word) @ h - vals[lg.cell(word)]).max() < 1e-10


def test_barycentric_identity(hs):
    coords = embed(hs, 3).coords
    assert np.abs(coords.sum(axis=1) - 1).max() < 1e-12
    assert np.array_equal(coords[: hs.fdef.b], np.eye(hs.fdef.b))
    assert coords.min() >= -1e-14


@given(st.sampled_from(BUILTINS), st.integers(0, 2**32 - 1))
def test_maximum_principle(name, seed):
    hs = structure_for(name)
    rng = np.random.default_rng(seed)
    for _ in range(100 // 20):
        bv = rng.normal(size=hs.fdef.b)
        vals = harmonic_extend(hs.form(3), bv)
        assert vals.min() >= bv.min() - 1e-12
        assert vals.max() <= bv.max() + 1e-12


@pytest.mark.parametrize("name", BUILTINS)
def test_harmonic_energy_invariance(name, rng):
    hs = structure_for(name)
    top = {"pci9": 4, "hexagasket": 5, "vicsek": 5, "pci6a": 5, "pci6b": 5}.get(name, 6)
    h = rng.normal(size=hs.fdef.b)
    e0 = hs.e0.energy(h)
    for n in range(1, top + 1):
        vals = embed(hs, n).coords @ h
        assert hs.form(n).energy(vals) == pytest.approx(e0, rel=1e-10)


def test_interval_embedding_closed_form():
    hs = structure_for("interval")
    x = slot_positions(hs.fdef, 5)[:, 0]
    coords = embed(hs, 5).coords
    assert np.allclose(coords, np.stack([1 - x, x], 1), atol=1e-14)


def test_vicsek_image_is_four_segments():
    hs = structure_for("vicsek")
    coords = embed(hs, 4).coords
    centre = np.full(4, 0.25)
    on_segment = np.zeros(len(coords), bool)
    for i in range(4):
        d = np.eye(4)[i] - centre
        t = (coords - centre) @ d / (d @ d)
        resid = np.linalg.norm(coords - centre - t[:, None] * d, axis=1)
        on_segment |= (resid < 1e-12) & (t > -1e-12) & (t < 1 + 1e-12)
    assert on_segment.all()
    # the junction is a limit point (fixed point of the centre map), approached level by level
    gaps = [np.linalg.norm(embed(hs, n).coords - centre, axis=1).min() for n in range(1, 5)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


@pytest.mark.parametrize("name,level", [("sg", 4), ("interval", 4), ("pci9", 2), ("pci6a", 3), ("pci6b", 3)])
def test_check_hc_passes(name, level):
    rep = check_hc(structure_for(name), level)
    assert rep.passed, rep.lines()
    assert rep.nested


def test_check_hc_vicsek_fails_injectivity():
    rep = check_hc(structure_for("vicsek"), 2)
    assert not rep.passed
    assert not rep.injective


def test_check_hc_hexagasket_fails():
    rep = check_hc(structure_for("hexagasket"), 3)
    assert not rep.passed
    assert rep.witness


def test_tangent_of_harmonic(sg, rng):
    h = rng.normal(size=3)
    vals = embed(sg, 3).coords @ h
    for word in [(0, 1, 2), (2, 2, 2)]:
        assert np.allclose(tangent(sg, vals, word), h - h.mean(), atol=1e-10)


def test_tangent_invertible_cell(sg, rng):
    f = rng.normal(size=sg.fdef.level(2).n_vertices)
    word = (1, 2)
    M = sg.ext.M(word)
    direct = np.linalg.solve(M, f[sg.fdef.level(2).cell(word)])
    assert np.allclose(tangent(sg, f, word), direct - direct.mean(), atol=1e-10)


def test_tangent_rank_deficient_minimises_energy(rng):
    hs = structure_for("vicsek")
    lg = hs.fdef.level(2)
    word = parse_word("11", 5)
    M = hs.ext.M(word)
    assert np.linalg.matrix_rank(M, tol=1e-10) < hs.fdef.b
    # feasible data: restriction of some harmonic function
    h_true = rng.normal(size=4)
    f = np.zeros(lg.n_vertices)
    f[lg.cell(word)] = M @ h_true
    t = tangent(hs, f, word)
    assert np.allclose(M @ t - (M @ t).mean(), M @ h_true - (M @ h_true).mean(), atol=1e-10)
    _, s, vt = np.linalg.svd(M)
    null = vt[(s > 1e-10 * s[0]).sum():]
    e_min = t @ hs.d0 @ t
    for _ in range(100):
        other = t + rng.normal(size=len(null)) @ null
        assert other @ hs.d0 @ other >= e_min - 1e-12


def test_tangent_infeasible():
    hs = structure_for("vicsek")
    lg = hs.fdef.level(2)
    word = parse_word("11", 5)
    f = np.zeros(lg.n_vertices)
    f[lg.cell(word)] = [0.0, 1.0, 2.0, 7.0]
    with pytest.raises(InfeasibleTangent):
        tangent(hs, f, word)


def test_wn_sg_has_no_null_cells():
    rep = wn_diagnostic(structure_for("sg"), 6)
    assert rep.full_support
    assert rep.maximal_null == []


def test_wn_interval_has_no_null_cells():
    assert wn_diagnostic(structure_for("interval"), 6).full_support


def test_wn_vicsek_collapse():
    rep = wn_diagnostic(structure_for("vicsek"), 3)
    assert not rep.full_support
    assert rep.maximal_null
    # the null cells really carry no energy of any harmonic function
    hs = structure_for("vicsek")
    M = hs.ext.M(parse_word(rep.maximal_null[0], 5))
    assert np.abs(M - M[0]).max() < 1e-12


def test_embedding_export_lines(interval):
    lines = embed(interval, 2).lines()
    assert len(lines) == 5
    assert lines[0].split()[:2] == ["0", "0"]
    assert lines[-1].split()[1] == "2"


def test_word_index_matches_product_stack(sg):
    stack = sg.ext.level(3)
    word = (2, 0, 1)
    assert np.allclose(stack[word_index(word, 3)], sg.ext.M(word))
