import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from vbpp.baseline import (
    InsufficientDataError,
    KsModel,
    fit_bandwidth,
    ks_intensity,
    ks_log_predictive,
    ks_log_predictive_rate_form,
    loo_objective,
    truncnorm_pdf,
)
from vbpp.pointdata import Domain, EventSet


def test_ksmodel_rejects_nonpositive_bandwidth():
    with pytest.raises(ValueError):
        KsModel(EventSet(np.zeros((3, 1))), np.array([0.0]))


def test_truncnorm_reduces_to_normal_on_wide_domain():
    d = Domain([-100.0], [100.0])
    got = truncnorm_pdf([0.3], [0.0], [1.0], d)
    assert got == pytest.approx(norm.pdf(0.3), rel=1e-12)


def test_truncnorm_end_correction_at_boundary():
    # kernel centred on the left edge: half the mass is cut away, so the
    # corrected density doubles relative to the plain normal
    d = Domain([0.0], [100.0])
    got = truncnorm_pdf([0.1], [0.0], [1.0], d)
    assert got == pytest.approx(2.0 * norm.pdf(0.1), rel=1e-9)
    plain = truncnorm_pdf([0.1], [0.0], [1.0], d, end_correction=False)
    assert plain == pytest.approx(norm.pdf(0.1), rel=1e-12)


def test_corrected_kernel_integrates_to_one():
    d = Domain([0.0], [3.0])
    for center, sigma in [(0.1, 0.8), (1.5, 0.4), (2.9, 1.5)]:
        mass, _ = quad(lambda x: truncnorm_pdf([x], [center], [sigma], d),
                       0.0, 3.0, epsabs=1e-12, epsrel=1e-11)
        assert mass == pytest.approx(1.0, abs=1e-9)


def test_intensity_integrates_to_n():
    d = Domain([0.0], [2.0])
    train = EventSet(np.array([[0.05], [0.6], [1.9]]))
    model = KsModel(train, np.array([0.5]))
    mass, _ = quad(lambda x: ks_intensity(model, [[x]], d)[0], 0.0, 2.0,
                   epsabs=1e-11, epsrel=1e-10)
    assert mass == pytest.approx(3.0, abs=1e-8)


def test_loo_objective_permutation_invariant():
    rng = np.random.default_rng(0)
    d = Domain([0.0], [1.0])
    pts = rng.random((12, 1))
    sigma = np.array([0.2])
    a = loo_objective(EventSet(pts), sigma, d, True)
    b = loo_objective(EventSet(pts[::-1]), sigma, d, True)
    assert a == pytest.approx(b, rel=1e-13)


def test_two_point_optimal_bandwidth():
    # untruncated, two points distance t apart: the LOO objective is
    # 2 log N(t; 0, s^2), maximised at s = t
    t = 0.31
    d = Domain([-50.0], [50.0])
    train = EventSet(np.array([[0.0], [t]]))
    model = fit_bandwidth(train, d)
    assert model.sigma[0] == pytest.approx(t, rel=1e-4)


def test_fit_bandwidth_needs_two_points():
    d = Domain([0.0], [1.0])
    with pytest.raises(InsufficientDataError):
        fit_bandwidth(EventSet(np.array([[0.5]])), d)


def test_duplicate_points_hit_the_floor():
    d = Domain([0.0], [1.0])
    train = EventSet(np.array([[0.4], [0.4], [0.4]]))
    model = fit_bandwidth(train, d)
    assert model.sigma[0] == pytest.approx(1e-3, rel=1e-2)


def test_fit_bandwidth_2d_shapes():
    rng = np.random.default_rng(1)
    d = Domain([0.0, 0.0], [1.0, 4.0])
    train = EventSet(np.column_stack([rng.random(30), rng.random(30) * 4]))
    model = fit_bandwidth(train, d)
    assert model.sigma.shape == (2,)
    assert (model.sigma > 0).all()


def test_log_predictive_two_routes_agree():
    rng = np.random.default_rng(2)
    d = Domain([0.0], [2.0])
    train = EventSet(rng.uniform(0, 2, 15)[:, None])
    test = EventSet(rng.uniform(0, 2, 9)[:, None])
    model = KsModel(train, np.array([0.3]))
    a = ks_log_predictive(model, test, d)
    b = ks_log_predictive_rate_form(model, test, d)
    assert a == pytest.approx(b, abs=1e-10)


def test_log_predictive_empty_test():
    train = EventSet(np.linspace(0.1, 0.9, 7)[:, None])
    model = KsModel(train, np.array([0.2]))
    d = Domain([0.0], [1.0])
    assert ks_log_predictive(model, EventSet(np.empty((0, 1))), d) == -7.0


def test_better_bandwidth_scores_better():
    # held-out likelihood should prefer the LOO-selected bandwidth over an
    # absurdly narrow one
    rng = np.random.default_rng(3)
    d = Domain([0.0], [1.0])
    pts = rng.beta(2, 2, 60)[:, None]
    train, test = EventSet(pts[:40]), EventSet(pts[40:])
    fitted = fit_bandwidth(train, d)
    narrow = KsModel(train, np.array([1e-3]))
    assert ks_log_predictive(fitted, test, d) > ks_log_predictive(narrow, test, d)
