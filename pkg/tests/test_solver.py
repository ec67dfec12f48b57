import warnings

import numpy as np
import pytest
from scipy import ndimage

from nightflare import formation, raster, solver
from nightflare.errors import NonFiniteError, ParameterError
from nightflare.psf import BolParams, KernelParams
from nightflare.solver import Problem, SolverConfig, SolverState


def random_problem(seed, size=16, ksize=5, bol_mode="sigma", prior=None):
    rng = np.random.default_rng(seed)
    r = rng.random((size, size, 3)) * 0.6
    m = np.zeros((size, size))
    a, b = rng.integers(2, size - 5, 2)
    m[a:a + 3, b:b + 3] = 1
    r[m > 0] = 0.95 + 0.05 * rng.random((9, 3))
    y = np.clip(r + 0.05 * rng.standard_normal(r.shape), 0, 1)
    lm = r * m[:, :, None]
    return Problem(r, y, m, lm, BolParams(), ksize, True, bol_mode, prior)


def random_state(problem, seed):
    rng = np.random.default_rng(seed + 100)
    d = rng.normal(0, 1.0, problem.r.shape)
    logits = rng.normal(0, 1.0, (problem.kernel_size, problem.kernel_size))
    return SolverState(d, KernelParams(logits, problem.kernel_size))


# -- squashing -------------------------------------------------------------------

def test_squash_maps_unit_interval_onto_itself():
    assert solver.squash(0.0) == pytest.approx(0.0, abs=1e-15)
    assert solver.squash(1.0) == pytest.approx(1.0, abs=1e-15)
    x = np.linspace(-0.2, 1.2, 57)
    np.testing.assert_allclose(solver.unsquash(solver.squash(x[(x > 0) & (x < 1)])), x[(x > 0) & (x < 1)],
                               atol=1e-12)
    h = 1e-6
    fd = (solver.squash(x + h) - solver.squash(x - h)) / (2 * h)
    np.testing.assert_allclose(solver.squash_grad(x), fd, rtol=1e-7)


# -- compose_estimate ------------------------------------------------------------

def test_estimate_without_glow_is_squashed_d():
    rng = np.random.default_rng(0)
    r = rng.random((12, 12, 3))
    z = np.zeros((12, 12))
    problem = Problem(r, r, z, np.zeros_like(r), BolParams(), 5)
    state = SolverState(rng.normal(size=r.shape), KernelParams.from_seed(5))
    y_hat = solver.compose_estimate(state, problem)
    assert np.array_equal(y_hat, solver.squash(solver.sigmoid(state.d_pixels)))


def test_oracle_d_gives_zero_loss():
    problem = random_problem(1)
    state = random_state(problem, 1)
    fw = solver.forward(problem, state.d_pixels, state.kernel_logits.logits)
    # choose y so that the oracle D = unsquash(y) - L - light_map lies inside (0, 1)
    d_star = np.full(problem.r.shape, 0.3)
    problem.y = solver.squash(d_star + fw["L"] + problem.light_map)
    state.d_pixels = np.log(d_star / (1 - d_star))
    y_hat = solver.compose_estimate(state, problem)
    for it in (0, 5000):
        assert solver.loss(y_hat, problem.y, it, SolverConfig()) < 1e-20


def test_sharper_kernel_changes_estimate_only_inside_glow_support():
    problem = random_problem(2, size=24, ksize=5)
    state = random_state(problem, 2)
    before = solver.compose_estimate(state, problem)
    logits = state.kernel_logits.logits
    i, j = np.unravel_index(np.argmax(logits), logits.shape)
    logits[i, j] *= 2
    after = solver.compose_estimate(state, problem)
    # kernel radius 2: the glow reaches at most 2 px beyond the source, outside it
    support = ndimage.binary_dilation(problem.m_s > 0, np.ones((5, 5), bool)) & (problem.m_s <= 0)
    # the FFT path leaves round-off of order 1e-17 away from the support
    changed = np.any(np.abs(after - before) > 1e-12, axis=2)
    assert changed.any()
    assert not np.any(changed & (support == 0))


# -- loss --------------------------------------------------------------------------

def test_loss_examples():
    cfg = SolverConfig()
    a = np.full((16, 16, 3), 0.3)
    assert solver.loss(a, a, 0, cfg) == 0 and solver.loss(a, a, 2000, cfg) == 0
    assert solver.loss(a, a + 0.1, 10, cfg) == pytest.approx(0.01)
    rng = np.random.default_rng(3)
    b = rng.random((16, 16, 3))
    c = rng.random((16, 16, 3))
    assert raster.ssim(b, c) < 1
    assert solver.loss(b, c, 1001, cfg) > solver.loss(b, c, 999, cfg)


def test_loss_jump_at_schedule_boundary_is_one_minus_ssim():
    cfg = SolverConfig(iterations=6, mse_only_iters=3, log_every=0)
    problem = random_problem(4)
    state = solver.init_state(problem, cfg)
    for _ in range(3):
        solver.step(state, problem, cfg)
    y_hat = solver.compose_estimate(state, problem)
    mse_only = raster.mse(y_hat, problem.y)
    solver.step(state, problem, cfg)
    assert state.loss_history[3] == pytest.approx(mse_only + 1 - raster.ssim(y_hat, problem.y), abs=1e-9)


# -- gradients ---------------------------------------------------------------------

def numeric_gradient(problem, state, it, cfg, factors, group, idx, h=1e-6):
    def f(delta):
        d, k = state.d_pixels.copy(), state.kernel_logits.logits.copy()
        (d if group == "d_pixels" else k)[idx] += delta
        return solver.objective(problem, d, k, it, cfg, factors)
    return (f(h) - f(-h)) / (2 * h)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    problem = random_problem(seed, bol_mode="full" if seed % 2 else "sigma")
    state = random_state(problem, seed)
    it = 5 if seed < 5 else 20
    cfg = SolverConfig(iterations=30, mse_only_iters=10, tv_weight=1e-2)
    factors = solver.forward(problem, state.d_pixels, state.kernel_logits.logits)["factors"]
    g = solver.gradients(state, problem, it, cfg, factors)
    for group, shape in (("d_pixels", state.d_pixels.shape), ("kernel_logits", state.kernel_logits.logits.shape)):
        for _ in range(8):
            idx = tuple(int(rng.integers(0, s)) for s in shape)
            fd = numeric_gradient(problem, state, it, cfg, factors, group, idx)
            an = g[group][idx]
            assert abs(an - fd) <= 1e-4 * max(abs(fd), abs(an)) + 1e-11, (group, idx, an, fd)


def test_gradients_vanish_at_exact_fit():
    problem = random_problem(5)
    state = random_state(problem, 5)
    problem.y = solver.compose_estimate(state, problem)
    cfg = SolverConfig(tv_weight=0.0)
    for it in (0, 2000):
        g = solver.gradients(state, problem, it, cfg)
        assert np.max(np.abs(g["d_pixels"])) < 1e-9
        assert np.max(np.abs(g["kernel_logits"])) < 1e-9


def test_mse_gradient_is_local():
    rng = np.random.default_rng(6)
    r = rng.random((20, 20, 3))
    z = np.zeros((20, 20))
    problem = Problem(r, r, z, np.zeros_like(r), BolParams(), 5)
    state = SolverState(np.zeros(r.shape), KernelParams.from_seed(5))
    problem.y = solver.compose_estimate(state, problem)
    cfg = SolverConfig(tv_weight=0.0)
    state.d_pixels[7, 9, 1] += 0.5
    g = solver.gradients(state, problem, 0, cfg)["d_pixels"]
    assert list(zip(*np.nonzero(g))) == [(7, 9, 1)]


def test_non_finite_values_are_caught_by_stage():
    problem = random_problem(7)
    state = random_state(problem, 7)
    state.d_pixels[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError) as info:
        solver.gradients(state, problem, 0, SolverConfig())
    assert info.value.stage == "forward"


def test_solver_config_validation():
    with pytest.raises(ParameterError):
        SolverConfig(iterations=10, mse_only_iters=20)
    with pytest.raises(ParameterError):
        SolverConfig(learning_rate=0)
    with pytest.raises(ParameterError):
        SolverConfig(bol_mode="other")
    assert SolverConfig.from_dict(SolverConfig().to_dict()) == SolverConfig()


def test_problem_adjoint_is_exact():
    problem = random_problem(8, size=20, ksize=7)
    rng = np.random.default_rng(8)
    k = rng.random((7, 7))
    g = rng.random(problem.r.shape)
    lhs = np.sum(problem.glow_candidate(k) * g)
    rhs = np.sum(k * problem.kernel_correlation(g))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    direct = raster.convolve2d(problem.source, k, "direct")
    np.testing.assert_allclose(problem.glow_candidate(k), direct, atol=1e-12)


# -- full runs ---------------------------------------------------------------------

def test_flare_free_input_is_reproduced():
    rng = np.random.default_rng(9)
    r = raster.gaussian_blur(rng.random((48, 48, 3)), 1.5) * 0.6
    res = solver.run(r, SolverConfig())
    assert res.report["n_sources"] == 0
    assert raster.psnr(res.restored, r) >= 40


@pytest.fixture(scope="module")
def corner_scene():
    clean = np.full((96, 96, 3), 0.12)
    clean = raster.gaussian_blur(clean + 0.1 * np.random.default_rng(10).random(clean.shape), 1.0)
    opt = formation.OpticalConfig(source_xy=[(14, 16)], source_radius=4)
    flared, gt, scene = formation.synth_pair(clean, opt, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = solver.run(flared, SolverConfig(), opt, gt=gt)
    return flared, gt, scene, res


def test_run_is_deterministic():
    problem_in = random_problem(11, size=48)
    cfg = SolverConfig(iterations=40, mse_only_iters=20, kernel_size=9)
    a = solver.run(problem_in.r, cfg)
    b = solver.run(problem_in.r, cfg)
    assert a.report == b.report
    assert np.array_equal(a.restored, b.restored) and np.array_equal(a.kernel, b.kernel)


@pytest.mark.slow
def test_pixels_far_from_flare_keep_their_values(corner_scene):
    flared, gt, scene, res = corner_scene
    radius = SolverConfig().kernel_size // 2
    touched = ndimage.binary_dilation(res.source_mask > 0, np.ones((2 * radius + 1,) * 2, bool))
    touched |= res.ghost_mask > 0
    far = ~touched
    assert far.sum() > 1000
    assert np.max(np.abs(res.restored - flared)[far]) <= 2 / 255


@pytest.mark.slow
def test_run_improves_synthetic_scene(corner_scene):
    flared, gt, scene, res = corner_scene
    assert res.report["psnr_out"] > res.report["psnr_in"]


@pytest.mark.slow
def test_smoothed_loss_decreases_within_each_phase(corner_scene):
    *_, res = corner_scene
    hist = np.array(res.report["loss_history"])
    cut = res.report["mse_only_iters"]
    for phase in (hist[:cut], hist[cut:]):
        smooth = np.convolve(phase, np.ones(100) / 100, mode="valid")
        assert np.all(np.diff(smooth) <= 1e-12)
        assert phase[-1] <= phase[0]


def test_accepted_steps_never_raise_the_objective():
    problem = random_problem(12, size=32, ksize=7)
    cfg = SolverConfig(iterations=120, mse_only_iters=60, learning_rate=5.0, log_every=0)
    state = solver.init_state(problem, cfg)
    for _ in range(cfg.iterations):
        solver.step(state, problem, cfg)
    obj = np.array(state.loss_history) + cfg.tv_weight * np.array(state.tv_history)
    for phase in (obj[:60], obj[60:]):
        assert np.all(np.diff(phase) <= 0)
    assert state.step_scale < 1  # the oversized step had to be cut back
