"""Verification suites: scan-form equivalence, formation round trips,
finite-difference gradient checks, closed-form estimator values, and metric
sanity. The CLI `selftest` runs them all and the acceptance tests assert
them; each check returns a name, a pass flag, and a measured detail string.

`uiqm_reference` is an independent plain-Python implementation of the
quality-score component formulas (explicit loops, stdlib math only) used to
pin the vectorized metric.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import formation, gbl, losses, metrics, ssm
from .autodiff import Tensor
from .formation import FormationModel
from .losses import LossWeights, total_loss, uiqm_loss
from .nets import JNetConfig, SELayer
from .ssm import SelectiveSSM, selective_scan
from .trainer import TrainConfig, build_model


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}" + (f" ({self.detail})" if self.detail else "")


# --------------------------------------------------------------------------
# suite 1: scan-form equivalence
# --------------------------------------------------------------------------

def ssm_equivalence_suite(trials: int = 200, seed: int = 101,
                          tol: float = 1e-8) -> list[CheckResult]:
    """Recurrent vs convolutional evaluation of random stable diagonal systems."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        length = int(rng.integers(1, 65))
        a = rng.uniform(-2.0, -0.01, size=n)
        b = rng.standard_normal(n)
        c = rng.standard_normal(n)
        d = float(rng.standard_normal())
        delta = float(rng.uniform(0.05, 1.0))
        x = rng.standard_normal(length)
        disc = ssm.discretize_zoh(a, b, delta)
        y_rec = ssm.scan_recurrent(disc.a_bar, disc.b_bar, c, d, x)
        kernel = ssm.kernel_conv_form(disc.a_bar, disc.b_bar, c, length)
        y_conv = ssm.apply_kernel(kernel, d, x)
        worst = max(worst, float(np.max(np.abs(y_rec - y_conv))))
    elapsed = time.perf_counter() - start
    return [CheckResult(
        f"scan-form equivalence over {trials} random systems",
        worst <= tol and elapsed <= 5.0,
        f"max |recurrent - conv| = {worst:.3e}, {elapsed:.2f}s")]


# --------------------------------------------------------------------------
# suite 2: discretization closed forms
# --------------------------------------------------------------------------

def zoh_suite() -> list[CheckResult]:
    results = []
    disc = ssm.discretize_zoh(np.array([-1.0]), np.array([1.0]), math.log(2.0))
    err_a = abs(float(disc.a_bar[0]) - 0.5)
    results.append(CheckResult("ZOH scalar: A=-1, delta=ln 2 gives Abar=0.5",
                               err_a <= 1e-12, f"|err| = {err_a:.2e}"))
    b_vals = np.array([1.0, -0.7, 2.5])
    disc_b = ssm.discretize_zoh(np.full(3, -1.0), b_vals, math.log(2.0))
    err_b = float(np.max(np.abs(disc_b.b_bar - 0.5 * b_vals)))
    results.append(CheckResult("ZOH scalar: Bbar = 0.5 B at A=-1, delta=ln 2",
                               err_b <= 1e-12, f"max |err| = {err_b:.2e}"))
    delta = 0.37
    disc_lim = ssm.discretize_zoh(np.array([1e-9]), np.array([1.3]), delta)
    err_lim = abs(float(disc_lim.b_bar[0]) - delta * 1.3)
    results.append(CheckResult("ZOH limit: Bbar -> delta B as A -> 0",
                               err_lim <= 1e-6, f"|err| = {err_lim:.2e}"))
    disc_zero = ssm.discretize_zoh(np.array([0.0]), np.array([2.0]), delta)
    results.append(CheckResult("ZOH singular state falls back to delta B, flagged",
                               disc_zero.taylor_fallback
                               and disc_zero.b_bar[0] == delta * 2.0))
    return results


# --------------------------------------------------------------------------
# suite 3: formation round trips
# --------------------------------------------------------------------------

def formation_roundtrip_suite(trials: int = 100, seed: int = 202,
                              tol: float = 1e-12) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    in_range = True
    for _ in range(trials):
        h, w = int(rng.integers(4, 12)), int(rng.integers(4, 12))
        j = rng.uniform(0.0, 1.0, size=(h, w, 3))
        depth = rng.uniform(0.0, 3.0, size=(h, w))
        beta_d = rng.uniform(0.2, 2.0, size=3)
        beta_b = beta_d * rng.uniform(0.3, 1.0, size=3)  # T_B >= T_D keeps I in range
        a = rng.uniform(0.2, 0.8, size=3)
        image, components = formation.synthesize_degraded(j, depth, beta_d, beta_b, a)
        recon = formation.reconstruct_revised(components)
        worst = max(worst, float(np.max(np.abs(recon.raw - image))))
        in_range = in_range and bool(np.all(image >= 0.0) and np.all(image <= 1.0))
    results = [CheckResult(
        f"formation round trip over {trials} random draws (pre-clamp)",
        worst <= tol and in_range, f"max |err| = {worst:.3e}")]

    j = rng.uniform(0.0, 1.0, size=(6, 7, 3))
    t = rng.uniform(0.0, 1.0, size=(6, 7, 3))
    a = rng.uniform(0.0, 1.0, size=3)
    same = formation.reconstruct_revised(
        formation.ComponentSet(j=j, t_d=t, t_b=t, a=a))
    kosch = formation.reconstruct_koschmieder(j, t, a)
    results.append(CheckResult(
        "single-transmission model == revised model when T_D = T_B (exact)",
        bool(np.array_equal(same.raw, kosch.raw))))

    jaffe = formation.reconstruct_jaffe(j, t, a, np.zeros((9, 9)))
    results.append(CheckResult(
        "PSF model with zero kernel == single-transmission model (exact)",
        bool(np.array_equal(jaffe.raw, kosch.raw))))
    return results


# --------------------------------------------------------------------------
# suite 4: gradient checks
# --------------------------------------------------------------------------

def model_grad_check(loss_fn, tensors: dict[str, Tensor], eps: float = 1e-5,
                     max_coords: int | None = None,
                     rng: np.random.Generator | None = None) -> float:
    """Max relative error |analytic - central difference| / max(1, |analytic|)
    over (a sample of) the coordinates of every tensor in `tensors`.

    `loss_fn` must be a pure scalar function of the tensors' current data.
    """
    for t in tensors.values():
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    flags = {name: t.requires_grad for name, t in tensors.items()}
    for t in tensors.values():
        t.requires_grad = False
    worst = 0.0
    try:
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            ga = analytic[name].reshape(-1)
            n = flat.size
            if max_coords is not None and n > max_coords:
                assert rng is not None
                idxs = np.sort(rng.choice(n, size=max_coords, replace=False))
            else:
                idxs = np.arange(n)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(loss_fn().data)
                flat[i] = orig - eps
                f_minus = float(loss_fn().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                err = abs(ga[i] - numeric) / max(1.0, abs(ga[i]))
                worst = max(worst, err)
    finally:
        for name, t in tensors.items():
            t.requires_grad = flags[name]
    return worst


def _op_checks(rng: np.random.Generator) -> list[tuple[str, object, np.ndarray]]:
    """(name, scalar function of a Tensor, point) for every primitive op.

    Every closed-over constant is drawn once so the functions are pure.
    """
    w234 = rng.standard_normal((2, 3, 4))
    w24 = rng.standard_normal((2, 4))
    w23 = rng.standard_normal((2, 3))
    w35 = rng.standard_normal((3, 5))
    w3 = rng.standard_normal(3)
    w6 = rng.standard_normal(6)
    w256 = rng.standard_normal((2, 5, 6))
    w345 = rng.standard_normal((3, 4, 5))
    c1 = rng.standard_normal((2, 3, 4))
    pos = rng.uniform(0.5, 2.0, size=(2, 3, 4))
    mat = rng.standard_normal((4, 5))
    vec = rng.standard_normal(5)
    kernel = rng.standard_normal((2, 3, 3, 3))
    conv_input = rng.standard_normal((3, 5, 6))
    in_input = rng.standard_normal((3, 4, 5))
    gamma = rng.uniform(0.5, 1.5, size=3)
    beta = rng.standard_normal(3)
    gather_idx = np.array([0, 3, 3, 7, 11, 5])

    def weighted(expr, w):
        return ad.reduce_sum(ad.mul(expr, Tensor(w)))

    point = rng.standard_normal((2, 3, 4))
    away = point + 0.1 * np.sign(point)  # keep clear of relu/clamp kinks

    return [
        ("add", lambda x: weighted(ad.add(x, Tensor(c1)), w234), point),
        ("sub", lambda x: weighted(ad.sub(Tensor(c1), x), w234), point),
        ("mul", lambda x: weighted(ad.mul(x, Tensor(c1)), w234), point),
        ("div numerator", lambda x: weighted(ad.div(x, Tensor(pos)), w234), point),
        ("div denominator", lambda x: weighted(ad.div(Tensor(c1), x), w234), pos),
        ("pow_const", lambda x: weighted(ad.pow_const(x, 3.0), w234), point),
        ("exp", lambda x: weighted(ad.exp(x), w234), point),
        ("log", lambda x: weighted(ad.log(x), w234), pos),
        ("sqrt", lambda x: weighted(ad.sqrt(x), w234), pos),
        ("tanh", lambda x: weighted(ad.tanh(x), w234), point),
        ("sigmoid", lambda x: weighted(ad.sigmoid(x), w234), point),
        ("relu", lambda x: weighted(ad.relu(x), w234), away),
        ("softplus", lambda x: weighted(ad.softplus(x), w234), point),
        ("mish", lambda x: weighted(ad.mish(x), w234), point),
        ("clamp01", lambda x: weighted(ad.clamp01(x), w234),
         rng.uniform(0.1, 0.9, size=(2, 3, 4))),
        ("reduce_sum axis", lambda x: weighted(ad.reduce_sum(x, axis=1), w24), point),
        ("reduce_mean", lambda x: ad.mul(ad.reduce_mean(x), 3.7), point),
        ("reduce_max", lambda x: weighted(ad.reduce_max(x, axis=2), w23), point),
        ("reduce_min", lambda x: ad.reduce_sum(ad.reduce_min(x, axis=0)), point),
        ("reshape/transpose", lambda x: weighted(
            ad.transpose(ad.reshape(x, (3, 2, 4)), (1, 0, 2)),
            np.transpose(w234.reshape(3, 2, 4), (1, 0, 2))), point),
        ("getitem slice", lambda x: ad.reduce_sum(ad.mul(x[1:, :2], 1.7)), point),
        ("getitem gather", lambda x: ad.reduce_sum(
            ad.mul(ad.reshape(x, (-1,))[gather_idx], Tensor(w6))), point),
        ("concat", lambda x: weighted(ad.concat([x[:1], x[1:]], axis=0), w234), point),
        ("matmul", lambda x: ad.reduce_sum(ad.mul(ad.matmul(x, Tensor(mat)), Tensor(w35))),
         rng.standard_normal((3, 4))),
        ("matvec", lambda x: ad.reduce_sum(ad.mul(ad.matvec(x, Tensor(vec)), Tensor(w3))),
         rng.standard_normal((3, 5))),
        ("conv2d input", lambda x: weighted(ad.conv2d(x, Tensor(kernel), padding=1), w256),
         conv_input),
        ("conv2d kernel", lambda k: weighted(ad.conv2d(Tensor(conv_input), k, padding=1), w256),
         kernel),
        ("instance_norm input", lambda x: weighted(
            ad.instance_norm(x, Tensor(gamma), Tensor(beta)), w345), in_input),
        ("instance_norm affine", lambda g: weighted(
            ad.instance_norm(Tensor(in_input), g, Tensor(beta)), w345), gamma),
        ("global_avg_pool", lambda x: ad.reduce_sum(ad.mul(ad.global_avg_pool(x), Tensor(w3))),
         in_input),
    ]


def grad_check_ops(points: int = 10, seed: int = 303, tol: float = 1e-4) -> list[CheckResult]:
    """Every primitive op against central differences at random points."""
    results = []
    worst_overall = 0.0
    worst_name = ""
    for trial in range(points):
        rng = np.random.default_rng(seed + trial)
        for name, f, point in _op_checks(rng):
            err = ad.grad_check(f, Tensor(point), eps=1e-5)
            if err > worst_overall:
                worst_overall, worst_name = err, name
    results.append(CheckResult(
        f"primitive op gradients at {points} random points each",
        worst_overall <= tol,
        f"worst = {worst_overall:.3e} ({worst_name})"))
    return results


def toy_config(size: int = 8, formation_model: FormationModel = FormationModel.REVISED,
               seed: int = 7, **loss_kwargs) -> TrainConfig:
    """Smallest full-featured configuration, used by gradient checks."""
    return TrainConfig(
        formation_model=formation_model,
        loss_weights=LossWeights(**loss_kwargs),
        jnet=JNetConfig(base_channels=4, num_blocks=2, state_size=2,
                        mic_injection=(0,), se_reduction=2),
        tnet_channels=4,
        size=size,
        seed=seed,
    )


def grad_check_networks(seed: int = 404, tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    size = 8
    model = build_model(toy_config(size=size))
    x = Tensor(rng.uniform(0.05, 0.95, size=(3, size, size)), requires_grad=True)
    results = []

    weight_j = Tensor(rng.standard_normal((3, size, size)))
    params_j = {"input": x, **{f"jnet.{n}": p for n, p in model.jnet.named_params()}}
    err_j = model_grad_check(
        lambda: ad.reduce_sum(ad.mul(model.jnet(x), weight_j)), params_j)
    results.append(CheckResult("scene net end-to-end gradient", err_j <= tol,
                               f"max rel err = {err_j:.3e}"))

    for label, net in (("direct-map net", model.tdnet), ("backscatter-map net", model.tbnet)):
        weight_t = Tensor(rng.standard_normal((3, size, size)))
        params_t = {"input": x, **{f"{label}.{n}": p for n, p in net.named_params()}}
        err_t = model_grad_check(
            lambda net=net, w=weight_t: ad.reduce_sum(ad.mul(net(x), w)), params_t)
        results.append(CheckResult(f"{label} end-to-end gradient", err_t <= tol,
                                   f"max rel err = {err_t:.3e}"))
    return results


def grad_check_selective_scan(seed: int = 505, tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    params = SelectiveSSM.init(3, 2, rng)
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    weight = Tensor(rng.standard_normal((5, 3)))
    tensors = {"input": x, **dict(params.named_params())}
    err = model_grad_check(
        lambda: ad.reduce_sum(ad.mul(selective_scan(x, params), weight)), tensors)
    return [CheckResult("selective scan gradient (input and every parameter)",
                        err <= tol, f"max rel err = {err:.3e}")]


def grad_check_se_layer(seed: int = 606, tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    se = SELayer(4, 2, rng)
    x = Tensor(rng.standard_normal((4, 3, 3)), requires_grad=True)
    weight = Tensor(rng.standard_normal((4, 3, 3)))
    tensors = {"input": x, **dict(se.named_params())}
    err = model_grad_check(lambda: ad.reduce_sum(ad.mul(se(x), weight)), tensors)
    return [CheckResult("SE layer gradient", err <= tol, f"max rel err = {err:.3e}")]


def grad_check_losses(seed: int = 707, tol: float = 1e-4,
                      uiqm_tol: float = 1e-3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    size = 12
    shape = (3, size, size)
    j = Tensor(rng.uniform(0.1, 0.9, size=shape), requires_grad=True)
    label = Tensor(rng.uniform(0.1, 0.9, size=shape))
    raw = Tensor(rng.uniform(0.1, 0.9, size=shape))
    recon = Tensor(rng.uniform(0.1, 0.9, size=shape))
    results = []

    err = model_grad_check(
        lambda: total_loss(j, label, raw, recon, LossWeights(enable_uiqm=False)).tensor,
        {"j": j})
    results.append(CheckResult("total loss gradient w.r.t. scene estimate",
                               err <= tol, f"max rel err = {err:.3e}"))

    size_u = 16
    ju = Tensor(rng.uniform(0.05, 0.95, size=(3, size_u, size_u)), requires_grad=True)
    err_u = model_grad_check(lambda: uiqm_loss(ju), {"j": ju})
    results.append(CheckResult(
        "quality-surrogate loss gradient (away from nonsmooth points)",
        err_u <= uiqm_tol, f"max rel err = {err_u:.3e}"))
    return results


def grad_check_train_graph(seed: int = 808, tol: float = 1e-4) -> list[CheckResult]:
    """Full pipeline (nets -> reconstruction -> loss) on sampled coordinates."""
    rng = np.random.default_rng(seed)
    size = 12
    cfg = toy_config(size=size, enable_uiqm=False)
    model = build_model(cfg)
    raw = rng.uniform(0.1, 0.9, size=(size, size, 3))
    label = rng.uniform(0.1, 0.9, size=(size, size, 3))
    x = Tensor(np.moveaxis(raw, 2, 0))
    label_t = Tensor(np.moveaxis(label, 2, 0))
    a_const = Tensor(gbl.estimate_background_light(raw))

    def loss_fn():
        jt = model.jnet(x)
        td = model.tdnet(x)
        tb = model.tbnet(x)
        recon = formation.reconstruct_tensor(FormationModel.REVISED, jt, td, tb, a_const)
        return total_loss(jt, label_t, x, recon, cfg.loss_weights).tensor

    err = model_grad_check(loss_fn, model.named_params(), max_coords=3, rng=rng)
    psf = Tensor(rng.uniform(-0.05, 0.05, size=(9, 9)), requires_grad=True)
    td_const = Tensor(rng.uniform(0.2, 0.8, size=(3, size, size)))
    j_const = Tensor(rng.uniform(0.1, 0.6, size=(3, size, size)))

    def psf_loss():
        recon = formation.reconstruct_tensor(
            FormationModel.JAFFE_MCGLAMERY, j_const, td_const, None, a_const, psf=psf)
        return losses.l2_loss(recon, label_t)

    err_psf = model_grad_check(psf_loss, {"psf": psf})
    worst = max(err, err_psf)
    return [CheckResult("training graph gradient (sampled coords + PSF)",
                        worst <= tol, f"max rel err = {worst:.3e}")]


def grad_check_suite(op_points: int = 10) -> list[CheckResult]:
    results = []
    results += grad_check_ops(points=op_points)
    results += grad_check_selective_scan()
    results += grad_check_se_layer()
    results += grad_check_networks()
    results += grad_check_losses()
    results += grad_check_train_graph()
    return results


# --------------------------------------------------------------------------
# suite 5: background-light closed forms
# --------------------------------------------------------------------------

def gbl_suite() -> list[CheckResult]:
    results = []
    val = gbl.estimate_gb(gbl.ChannelStats(avg=100.0, std=50.0, median=0.0))
    results.append(CheckResult("green/blue estimate at (avg 100, std 50) = 142.9",
                               abs(val - 142.9) <= 1e-9, f"value = {val!r}"))
    red0 = gbl.estimate_r(gbl.ChannelStats(avg=0.0, std=0.0, median=0.0))
    results.append(CheckResult("red estimate at median 0 = 140/15.4",
                               abs(red0 - 140.0 / 15.4) <= 1e-9, f"value = {red0!r}"))
    black = gbl.estimate_background_light(np.zeros((16, 16, 3)))
    white = gbl.estimate_background_light(np.ones((16, 16, 3)))
    lo, hi = gbl.CLAMP_LO / 255.0, gbl.CLAMP_HI / 255.0
    ok_black = black[1] == lo and black[2] == lo and np.all(black >= lo) and np.all(black <= hi)
    ok_white = white[1] == hi and white[2] == hi and np.all(white >= lo) and np.all(white <= hi)
    results.append(CheckResult("clamp bounds on black image (G/B pinned to 5/255)",
                               bool(ok_black), f"A = {np.round(black * 255, 3)}"))
    results.append(CheckResult("clamp bounds on saturated image (G/B pinned to 250/255)",
                               bool(ok_white), f"A = {np.round(white * 255, 3)}"))
    return results


# --------------------------------------------------------------------------
# suite 6: metric sanity
# --------------------------------------------------------------------------

def uiqm_reference(img: np.ndarray, block: int = 8) -> float:
    """Plain-Python reference for the quality score (loops + stdlib math).

    Colorfulness / sharpness / contrast weights: 0.0282, 0.2953, 3.5753;
    colorfulness inner coefficients -0.0268 and 0.1586; sharpness channel
    weights 0.299, 0.587, 0.144 (Panetta et al. 2016).
    """
    h, w = img.shape[0], img.shape[1]
    px = [[(255.0 * float(img[i, j, 0]), 255.0 * float(img[i, j, 1]),
            255.0 * float(img[i, j, 2])) for j in range(w)] for i in range(h)]

    rg, yb = [], []
    for i in range(h):
        for j in range(w):
            r, g, b = px[i][j]
            rg.append(r - g)
            yb.append(0.5 * (r + g) - b)

    def trimmed_mean(vals):
        vs = sorted(vals)
        k = len(vs)
        lo = math.ceil(0.1 * k)
        hi = math.floor(0.1 * k)
        kept = vs[lo:k - hi]
        return sum(kept) / len(kept)

    mu_rg, mu_yb = trimmed_mean(rg), trimmed_mean(yb)
    s_rg = sum((v - mu_rg) ** 2 for v in rg) / len(rg)
    s_yb = sum((v - mu_yb) ** 2 for v in yb) / len(yb)
    uicm = -0.0268 * math.hypot(mu_rg, mu_yb) + 0.1586 * math.sqrt(s_rg + s_yb)

    def eme(plane, blk):
        k2, k1 = len(plane) // blk, len(plane[0]) // blk
        total = 0.0
        for bi in range(k2):
            for bj in range(k1):
                vals = [plane[bi * blk + u][bj * blk + v]
                        for u in range(blk) for v in range(blk)]
                mx, mn = max(vals), min(vals)
                if mn > 0:
                    total += math.log(mx / mn)
        return 2.0 * total / (k1 * k2)

    uism = 0.0
    for c, wgt in zip(range(3), (0.299, 0.587, 0.144)):
        plane = [[px[i][j][c] for j in range(w)] for i in range(h)]
        edge = [[0.0] * w for _ in range(h)]
        for i in range(h):
            for j in range(w):
                def at(di, dj):
                    return plane[(i + di) % h][(j + dj) % w]
                gx = (at(-1, -1) + 2 * at(0, -1) + at(1, -1)
                      - at(-1, 1) - 2 * at(0, 1) - at(1, 1))
                gy = (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1)
                      - at(1, -1) - 2 * at(1, 0) - at(1, 1))
                edge[i][j] = math.hypot(gx, gy) * plane[i][j]
        uism += wgt * eme(edge, block)

    k2, k1 = h // block, w // block
    total = 0.0
    for bi in range(k2):
        for bj in range(k1):
            vals = [px[bi * block + u][bj * block + v][c]
                    for u in range(block) for v in range(block) for c in range(3)]
            mx, mn = max(vals), min(vals)
            top, bot = mx - mn, mx + mn
            if top > 0 and bot > 0:
                total += (top / bot) * math.log(top / bot)
    uiconm = -total / (k1 * k2)

    return 0.0282 * uicm + 0.2953 * uism + 3.5753 * uiconm


def fixture_images(count: int = 5, size: int = 32, seed: int = 909) -> list[np.ndarray]:
    """Structured + noisy unit-interval fixtures for metric pinning."""
    rng = np.random.default_rng(seed)
    images = []
    ramp = np.linspace(0.0, 1.0, size)
    grid_y, grid_x = np.meshgrid(ramp, ramp, indexing="ij")
    for k in range(count):
        base = np.stack([
            0.5 + 0.4 * np.sin(2 * np.pi * (k + 1) * grid_x),
            grid_y,
            0.5 + 0.4 * np.cos(2 * np.pi * (k + 2) * grid_y) * grid_x,
        ], axis=2)
        noise = rng.uniform(-0.15, 0.15, size=(size, size, 3))
        images.append(np.clip(0.5 * base + 0.5 * rng.uniform(0, 1, (size, size, 3))
                              + 0.2 * noise, 0.0, 1.0))
    return images


def metric_suite() -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(111)
    img = rng.uniform(0.0, 1.0, size=(24, 20, 3))
    s_self = metrics.ssim(img, img)
    results.append(CheckResult("SSIM(x, x) = 1", abs(s_self - 1.0) <= 1e-12,
                               f"value = {s_self!r}"))
    a = np.full((16, 16, 3), 0.2)
    b = np.full((16, 16, 3), 0.3)
    _, psnr = metrics.mse_psnr(a, b)
    results.append(CheckResult("PSNR at uniform 0.1 offset = 20 dB",
                               abs(psnr - 20.0) <= 1e-6, f"value = {psnr!r} dB"))
    gray = np.full((32, 32, 3), 0.5)
    u_gray = metrics.uiqm(gray)
    c_gray = metrics.uciqe(gray)
    results.append(CheckResult("quality scores of uniform gray are both 0",
                               u_gray == 0.0 and c_gray == 0.0,
                               f"uiqm = {u_gray!r}, uciqe = {c_gray!r}"))
    worst = 0.0
    for fixture in fixture_images():
        worst = max(worst, abs(metrics.uiqm(fixture) - uiqm_reference(fixture)))
    results.append(CheckResult(
        "vectorized quality score matches loop reference on 5 fixtures",
        worst <= 1e-6, f"max |diff| = {worst:.3e}"))
    return results


# --------------------------------------------------------------------------
# runner
# --------------------------------------------------------------------------

SUITES = (
    ("scan forms", ssm_equivalence_suite),
    ("discretization", zoh_suite),
    ("formation", formation_roundtrip_suite),
    ("gradients", grad_check_suite),
    ("background light", gbl_suite),
    ("metrics", metric_suite),
)


def run_all(verbose: bool = True) -> list[CheckResult]:
    results: list[CheckResult] = []
    for suite_name, suite in SUITES:
        suite_results = suite()
        results.extend(suite_results)
        if verbose:
            for res in suite_results:
                print(f"{suite_name}: {res.line()}")
    return results
