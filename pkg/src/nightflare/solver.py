"""Self-supervised joint glow/ghost removal.

The flare-free estimate ``D`` (a sigmoid of free per-pixel parameters) and the
glow kernel logits are fitted so that::

    y_hat = squash(D + L(k) + light_map)

matches the ghost-free, still glowing pseudo-target ``y`` produced by
inpainting. The loss is MSE for the first ``mse_only_iters`` iterations and
MSE + (1 - SSIM) afterwards, plus a small total-variation term on ``D``.
"""

import dataclasses
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import raster
from .errors import DimensionError, NonFiniteError, ParameterError, PipelineError
from .formation import FlareScene, OpticalConfig, scatter_kernel
from .lightsource import detection_from_mask, extract_light_mask, weighted_light_map
from .ostpm import derive_ghost_mask, inpaint
from .psf import (BolParams, KernelParams, bol_factors, brightness_sigma,
                  gen_kernel, local_brightness, softmax_vjp)

log = logging.getLogger(__name__)

TV_EPS = 1e-3
BOL_MODES = ("sigma", "full")
D_EPS = 1e-4
PRIOR_FLOOR = 1e-12

_S_LO = 1.0 / (1.0 + np.exp(2.0))
_S_HI = 1.0 / (1.0 + np.exp(-2.0))
_S_SPAN = _S_HI - _S_LO


@dataclass
class SolverConfig:
    iterations: int = 3000
    mse_only_iters: int = 1000
    learning_rate: float = 0.03
    kernel_learning_rate: float = 20.0
    lr_decay: float = 0.99
    decay_every: int = 100
    seed: int = 0
    tv_weight: float = 1e-4
    log_every: int = 100
    kernel_size: int = 33
    percentile: float = 0.99
    min_area: int = 9
    ghost_dilation: int = 2
    patch_radius: int = 4
    search_window: int = 64
    feather_sigma: float = 0.0
    max_backtracks: int = 20
    use_psfr: bool = True
    use_ostpm: bool = True
    bol_mode: str = "sigma"
    kernel_prior: bool = True

    def __post_init__(self):
        if self.mse_only_iters > self.iterations:
            raise ParameterError("mse_only_iters must not exceed iterations")
        if self.learning_rate <= 0 or self.kernel_learning_rate <= 0:
            raise ParameterError("learning rates must be positive")
        if self.tv_weight < 0:
            raise ParameterError("tv_weight must be >= 0")
        if self.bol_mode not in BOL_MODES:
            raise ParameterError(f"bol_mode must be one of {BOL_MODES}")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown solver fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class SolverState:
    d_pixels: np.ndarray
    kernel_logits: KernelParams
    iter: int = 0
    loss_history: list = field(default_factory=list)
    tv_history: list = field(default_factory=list)
    step_scale: float = 1.0
    cache: dict = None


# -- elementwise maps -----------------------------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def squash(x):
    """Sigmoid of slope 4 about 0.5, rescaled so 0 -> 0 and 1 -> 1."""
    return (sigmoid(4.0 * (x - 0.5)) - _S_LO) / _S_SPAN


def squash_grad(x):
    s = sigmoid(4.0 * (x - 0.5))
    return 4.0 * s * (1.0 - s) / _S_SPAN


def unsquash(y):
    v = np.asarray(y) * _S_SPAN + _S_LO
    return 0.5 + np.log(v / (1.0 - v)) / 4.0


def total_variation(d):
    """Mean Charbonnier total variation with forward differences; returns (tv, grad)."""
    dx = np.zeros_like(d)
    dy = np.zeros_like(d)
    dx[:, :-1] = d[:, 1:] - d[:, :-1]
    dy[:-1, :] = d[1:, :] - d[:-1, :]
    mag = np.sqrt(dx * dx + dy * dy + TV_EPS * TV_EPS)
    n = d.size
    px = dx / mag / n
    py = dy / mag / n
    g = -px - py
    g[:, 1:] += px[:, :-1]
    g[1:, :] += py[:-1, :]
    return float(np.mean(mag)), g


# -- problem context --------------------------------------------------------------

@dataclass
class Problem:
    """Fixed inputs of one solve: image, pseudo-target, masks and cached terms."""

    r: np.ndarray
    y: np.ndarray
    m_s: np.ndarray
    light_map: np.ndarray
    bol: BolParams
    kernel_size: int
    use_psfr: bool = True
    bol_mode: str = "sigma"
    prior: np.ndarray = None

    def __post_init__(self):
        self.r = raster.as_image(self.r)
        self.y = raster.as_image(self.y)
        self.light_map = raster.as_image(self.light_map)
        self.m_s = raster.as_mask(self.m_s, self.r.shape)
        if not (self.r.shape == self.y.shape == self.light_map.shape):
            raise DimensionError("r, y and light_map must share a shape")
        p = self.kernel_size // 2
        if self.kernel_size > min(self.r.shape[:2]):
            raise DimensionError("kernel larger than image")
        self.source = self.r * self.m_s[:, :, None]
        self.src_pad = raster.reflect_pad(self.source, p, p)
        # Circular FFTs of the padded size are exact for every valid-mode
        # output we need, so the source spectrum is computed once.
        self._n = self.src_pad.shape[:2]
        self._src_f = np.fft.rfft2(self.src_pad, axes=(0, 1))
        self.has_glow = self.use_psfr and bool(np.any(self.m_s > 0))
        self.loc = local_brightness(self.r, self.m_s, self.bol.window)
        self.sigma = brightness_sigma(self.r, self.m_s, self.bol)
        # the glow is only modelled where the source itself is not saturated
        self.outside = (self.m_s <= 0).astype(np.float64)[:, :, None]

    def glow_candidate(self, k):
        """``B_l = (r * m_s) conv k`` with reflect padding, same size as ``r``."""
        fk = np.fft.rfft2(k, s=self._n)
        full = np.fft.irfft2(self._src_f * fk[:, :, None], s=self._n, axes=(0, 1))
        m = self.kernel_size - 1
        return full[m:, m:]

    def kernel_correlation(self, g):
        """Adjoint of :meth:`glow_candidate`: d<g, B_l>/dk, summed over channels."""
        h, w = g.shape[:2]
        fg = np.fft.rfft2(g[::-1, ::-1], s=self._n, axes=(0, 1))
        corr = np.fft.irfft2(np.sum(self._src_f * fg, axis=2), s=self._n)
        return corr[h - 1:, w - 1:][::-1, ::-1]


def _guard(stage, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(stage)


def forward(problem, d_pixels, logits, factors=None):
    """All intermediate terms of the estimate for the given parameters.

    ``factors`` fixes the three brightness factors; by default they are
    recomputed from the current glow candidate.
    """
    d = sigmoid(d_pixels)
    out = {"D": d}
    if problem.has_glow:
        k = gen_kernel(KernelParams(logits, problem.kernel_size))
        b_l = problem.glow_candidate(k)
        if factors is None:
            if problem.bol_mode == "full":
                factors = bol_factors(b_l, problem.r, problem.m_s, problem.bol, problem.loc)
            else:
                factors = (problem.sigma, 1.0, 1.0)
        scale = float(np.prod(factors))
        glow = b_l * scale * problem.outside
        out.update(k=k, B_l=b_l, factors=tuple(factors), scale=scale)
    else:
        glow = np.zeros_like(d)
        out.update(k=None, B_l=glow, factors=(1.0, 1.0, 1.0), scale=0.0)
    z = d + glow + problem.light_map
    out.update(L=glow, z=z, y_hat=squash(z))
    _guard("forward", out["y_hat"])
    return out


def compose_estimate(state, problem):
    """Estimate ``y_hat`` for the current solver state."""
    return forward(problem, state.d_pixels, state.kernel_logits.logits)["y_hat"]


def loss(y_hat, y, it, cfg):
    """Scheduled data loss: MSE, plus ``1 - SSIM`` once ``it >= mse_only_iters``."""
    value = raster.mse(y_hat, y)
    if it >= cfg.mse_only_iters:
        value += 1.0 - raster.ssim(y_hat, y)
    return value


def objective(problem, d_pixels, logits, it, cfg, factors=None):
    """Scheduled loss plus the weighted TV term, as a single scalar."""
    fw = forward(problem, d_pixels, logits, factors)
    tv, _ = total_variation(fw["D"])
    return loss(fw["y_hat"], problem.y, it, cfg) + cfg.tv_weight * tv


def gradients(state, problem, it, cfg, factors=None):
    """Analytic gradients of the objective for both parameter groups.

    The brightness factors are held constant within a step. Returns a dict
    with ``d_pixels``, ``kernel_logits``, ``loss``, ``mse``, ``tv`` and
    ``forward``.
    """
    return evaluate(problem, state.d_pixels, state.kernel_logits.logits, it, cfg, factors)


def evaluate(problem, d_pixels, logits, it, cfg, factors=None):
    """Loss terms and gradients at explicit parameters (see :func:`gradients`)."""
    fw = forward(problem, d_pixels, logits, factors)
    y_hat, y = fw["y_hat"], problem.y
    n = y_hat.size
    resid = y_hat - y
    g_yhat = 2.0 * resid / n
    mse = float(np.mean(resid * resid))
    data = mse
    if it >= cfg.mse_only_iters:
        s, g_s = raster.ssim_grad(y_hat, y)
        data += 1.0 - s
        g_yhat = g_yhat - g_s
    _guard("loss", g_yhat)
    g_z = g_yhat * squash_grad(fw["z"])
    _guard("squash", g_z)

    d = fw["D"]
    tv, g_tv = total_variation(d)
    g_d = (g_z + cfg.tv_weight * g_tv) * d * (1.0 - d)
    _guard("d_pixels", g_d)

    if problem.has_glow:
        g_l = fw["scale"] * g_z * problem.outside
        g_logits = softmax_vjp(fw["k"], problem.kernel_correlation(g_l))
        _guard("kernel", g_logits)
    else:
        g_logits = np.zeros_like(logits)
    return {"d_pixels": g_d, "kernel_logits": g_logits, "loss": data, "mse": mse, "tv": tv,
            "forward": fw, "iter": it}


def init_state(problem, cfg):
    """``D`` starts at the pseudo-target (pre-squash), logits at seeded U[0, 1] noise."""
    kp = KernelParams.from_seed(problem.kernel_size, cfg.seed)
    if problem.prior is not None:
        kp.logits = kp.logits + np.log(problem.prior + PRIOR_FLOOR)
    d0 = np.clip(unsquash(np.clip(problem.y, 0.0, 1.0)), D_EPS, 1.0 - D_EPS)
    d_pixels = np.log(d0 / (1.0 - d0))
    return SolverState(d_pixels, kp)


def step(state, problem, cfg):
    """One gradient-descent update; returns the gradient record.

    A proposed update that would raise the objective is retried with half
    the step, and the reduced step scale is kept for later iterations. The
    evaluation at the accepted point is kept for the next call.
    """
    it = state.iter
    g = state.cache if state.cache is not None and state.cache["iter"] == it else gradients(state, problem, it, cfg)
    current = g["loss"] + cfg.tv_weight * g["tv"]
    decay = cfg.lr_decay ** (it // cfg.decay_every)
    n = problem.r.size
    d_dir = cfg.learning_rate * decay * n * g["d_pixels"]
    k_dir = cfg.kernel_learning_rate * decay * g["kernel_logits"]
    state.cache = None
    for _ in range(cfg.max_backtracks + 1):
        d_new = state.d_pixels - state.step_scale * d_dir
        k_new = state.kernel_logits.logits - state.step_scale * k_dir
        _guard("update", d_new, k_new)
        nxt = evaluate(problem, d_new, k_new, it + 1, cfg)
        # compare under this iteration's schedule, which may still be MSE only
        value = (nxt["loss"] if it >= cfg.mse_only_iters else nxt["mse"]) + cfg.tv_weight * nxt["tv"]
        if value <= current:
            state.d_pixels = d_new
            state.kernel_logits.logits = k_new
            state.cache = nxt
            break
        state.step_scale *= 0.5
    state.loss_history.append(g["loss"])
    state.tv_history.append(g["tv"])
    state.iter += 1
    if cfg.log_every and state.iter % cfg.log_every == 0:
        log.debug("iter %d loss %.6g step scale %.3g", state.iter, g["loss"], state.step_scale)
    return g


# -- pipeline -----------------------------------------------------------------------

@dataclass
class RunResult:
    """Outputs of one pipeline run."""

    restored: np.ndarray
    glow: np.ndarray
    pseudo_target: np.ndarray
    d: np.ndarray
    light_map: np.ndarray
    source_mask: np.ndarray
    ghost_mask: np.ndarray
    kernel: np.ndarray
    state: SolverState
    report: dict

    flared: np.ndarray = None

    @property
    def scene(self):
        ghost = np.clip(self.flared - self.pseudo_target, 0.0, None)
        return FlareScene(self.restored, self.glow, ghost, self.source_mask, self.ghost_mask)


def restore(state, problem):
    """Flare-free output: ``squash(D + light_map)``."""
    return np.clip(squash(sigmoid(state.d_pixels) + problem.light_map), 0.0, 1.0)


class _Stages:
    def __init__(self, record):
        self.record = record
        self.ms = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        finally:
            if self.record:
                self.ms[name] = self.ms.get(name, 0.0) + 1000.0 * (time.perf_counter() - t0)


def glow_prior(optics, size):
    """Scattered part of the lens kernel (no direct term), embedded in ``size``."""
    o = dataclasses.replace(optics, scatter_alpha=1.0, kernel_size=min(optics.kernel_size, size))
    return raster.embed_kernel(scatter_kernel(o), size)


def prepare(r, cfg, optics, bol, stages=None, masks=None):
    """Detection, ghost mask, pseudo-target and light map for image ``r``.

    ``masks = (m_s, m_r)`` replaces detection and the mirrored ghost mask,
    e.g. with the true masks of a synthesized scene.
    """
    stages = stages or _Stages(False)
    r = raster.as_image(r)
    if masks is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            det = stages.run("detect", extract_light_mask, r, cfg.percentile, cfg.min_area)
    else:
        det = detection_from_mask(r, masks[0])
    m_s = det.mask
    if cfg.use_ostpm and not det.empty:
        if masks is not None:
            m_r = raster.as_mask(masks[1], r.shape)
        else:
            center = optics.resolve_center(r.shape)
            m_r = stages.run("ghost_mask", derive_ghost_mask, m_s, center, cfg.ghost_dilation)
        m_r = m_r * (m_s <= 0)
        y = stages.run("inpaint", inpaint, r, m_r, cfg.patch_radius, cfg.search_window)
    else:
        m_r = np.zeros(r.shape[:2])
        y = r.copy()
    lm = stages.run("light_map", weighted_light_map, r, det, cfg.feather_sigma)
    prior = glow_prior(optics, cfg.kernel_size) if cfg.kernel_prior else None
    problem = Problem(r, y, m_s, lm, bol, cfg.kernel_size, cfg.use_psfr, cfg.bol_mode, prior)
    return problem, det, m_r


def run(r, cfg=None, optics=None, bol=None, gt=None, name="input", record_timings=False, masks=None):
    """Full pipeline on flared image ``r``; returns a :class:`RunResult`.

    ``gt`` (optional ground truth) adds PSNR/SSIM before and after to the
    report; ``masks`` is passed on to :func:`prepare`. Timings are only
    recorded when ``record_timings`` is set, so reports are otherwise
    reproducible byte for byte.
    """
    cfg = cfg or SolverConfig()
    optics = optics or OpticalConfig()
    bol = bol or BolParams()
    stages = _Stages(record_timings)
    r = raster.as_image(r)
    problem, det, m_r = prepare(r, cfg, optics, bol, stages, masks)
    state = stages.run("init", init_state, problem, cfg)
    for _ in range(cfg.iterations):
        stages.run("optimize", step, state, problem, cfg)

    fw = forward(problem, state.d_pixels, state.kernel_logits.logits)
    restored = restore(state, problem)
    report = {
        "input": name,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "mse_only_iters": cfg.mse_only_iters,
        "loss_history": [float(v) for v in state.loss_history],
        "psnr_in": None,
        "psnr_out": None,
        "ssim_in": None,
        "ssim_out": None,
        "wall_ms_per_stage": {k: round(v, 3) for k, v in stages.ms.items()} if record_timings else None,
        "rng": "PCG64",
        "n_sources": len(det.components),
        "source_threshold": det.threshold_used,
        "bol_factors": [float(f) for f in fw["factors"]],
    }
    if gt is not None:
        gt = raster.as_image(gt)
        report.update(
            psnr_in=raster.psnr(r, gt), psnr_out=raster.psnr(restored, gt),
            ssim_in=raster.ssim(r, gt), ssim_out=raster.ssim(restored, gt),
        )
    k = fw["k"] if fw["k"] is not None else gen_kernel(state.kernel_logits)
    result = RunResult(restored, fw["L"], problem.y, fw["D"], problem.light_map,
                       problem.m_s, m_r, k, state, report, flared=r)
    return result
