import gmpy2
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwchain.core import (
    ChainModel,
    FieldSpec,
    Profile,
    build_coupling_matrix,
    kappa,
    make_window,
    model_from_mapping,
    parse_model_text,
)
from cwchain.errors import ValidationError
from cwchain.precision import working_precision


@pytest.mark.parametrize("kind", ["uniform", "triangular"])
@pytest.mark.parametrize("w", [1, 2, 3, 7])
def test_named_window_normalised(kind, w):
    with working_precision(30):
        win = make_window(kind, w)
        assert abs(win.normalization() - 1) < gmpy2.mpfr("1e-29")
        assert win.support_radius == w


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=6).filter(lambda t: any(t)),
       st.integers(1, 5))
def test_tabulated_window_normalised(table, w):
    with working_precision(30):
        win = make_window("tabulated", w, table)
        assert abs(win.normalization() - 1) < gmpy2.mpfr("1e-28")
        assert all(g >= 0 for g in win.weights)


def test_kappa_oracles():
    with working_precision(30):
        # uniform: (w+1)/(6w)
        for w in (1, 2, 5):
            assert abs(kappa(make_window("uniform", w)) - gmpy2.mpfr(w + 1) / (6 * w)) < 1e-28
        # triangular values worked out by hand for w = 1..4
        exact = [gmpy2.mpfr(1) / 4, gmpy2.mpfr(11) / 56, gmpy2.mpfr(8) / 45, gmpy2.mpfr(35) / 208]
        for w, k in zip((1, 2, 3, 4), exact):
            assert abs(kappa(make_window("triangular", w)) - k) < 1e-28
        # g0=1/2, g1=1/4 window
        assert abs(kappa(make_window("tabulated", 1, ["0.5", "0.25"])) - gmpy2.mpfr("0.25")) < 1e-28


@pytest.mark.parametrize("w", [1, 3])
def test_coupling_matrix_symmetric_and_bulk_columns_vanish(w):
    model = ChainModel.build("1.3", 12, w, "triangular", precision=30)
    with working_precision(30):
        D = build_coupling_matrix(model)
        M = D.dense()
        n = len(M)
        assert all(M[i][j] == M[j][i] for i in range(n) for j in range(n))
        R = D.band_radius
        for zp in range(D.lo + R, D.hi - R + 1):
            assert abs(D.column_sum(zp)) < gmpy2.mpfr("1e-28")
        assert abs(D.diagonal_value - (model.J / w * model.window.weights[0] - model.J)) < 1e-28
        v = [gmpy2.mpfr(i) / 7 for i in range(n)]
        Dv = D.matvec(v)
        dense = [sum((M[i][j] * v[j] for j in range(n)), gmpy2.mpfr(0)) for i in range(n)]
        assert max(abs(a - b) for a, b in zip(Dv, dense)) < 1e-26


def test_model_validation():
    with pytest.raises(ValidationError):
        ChainModel.build("-1", 10)
    with pytest.raises(ValidationError):
        ChainModel.build("1.2", 0)
    with pytest.raises(ValidationError):
        ChainModel.build("1.2", 2, 5)
    with pytest.raises(ValidationError):
        ChainModel.build("1.2", 10, precision=10)
    with pytest.raises(ValidationError):
        make_window("gaussian", 2)
    with pytest.raises(ValidationError):
        make_window("tabulated", 1, [0, 0])
    with pytest.raises(ValidationError):
        make_window("tabulated", 1, [1, -1])


def test_field_spec_validation():
    FieldSpec.build(["-0.1", "0.1"], ["0.5", "0.5"])
    with pytest.raises(ValidationError):
        FieldSpec.build(["0.1", "0.2"], ["0.5", "0.5"])
    with pytest.raises(ValidationError):
        FieldSpec.build(["-0.1", "0.1"], ["0.5", "0.6"])
    with pytest.raises(ValidationError):
        FieldSpec.build(["0"], [])


def test_fingerprint_tracks_parameters():
    a = ChainModel.build("1.4", 10, 1, precision=30)
    assert a.fingerprint() == ChainModel.build("1.4", 10, 1, precision=30).fingerprint()
    assert a.fingerprint() != ChainModel.build("1.4", 11, 1, precision=30).fingerprint()
    assert a.fingerprint() != a.with_precision(40).fingerprint()


def test_profile_helpers():
    p = Profile.constant("0.5", 3)
    assert len(p.values) == 7 and p.L == 3
    assert abs(p.mean - gmpy2.mpfr("0.5")) < 1e-25
    q = Profile(tuple(gmpy2.mpfr(i) / 4 for i in range(-1, 4)))
    assert [float(v) for v in q.mirrored().values] == [-0.75, -0.5, -0.25, 0.0, 0.25]
    with pytest.raises(ValidationError):
        Profile((gmpy2.mpfr(2),))


def test_parse_model_text():
    text = "# comment\nJ = 1.4\nL = 25\nw = 1\nwindow.kind = tabulated\nwindow.table = 0.5, 0.25\n"
    cfg = parse_model_text(text)
    model = model_from_mapping(cfg, precision=30)
    assert model.L == 25 and model.window.kind == "tabulated"
    with working_precision(30):
        assert abs(model.J - gmpy2.mpfr("1.4")) < 1e-25
    with pytest.raises(ValidationError):
        parse_model_text("J = 1\nJ = 2\n")
    with pytest.raises(ValidationError):
        parse_model_text("colour = red\n")
