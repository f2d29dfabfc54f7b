"""Shared numeric oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np

from latentdriver.diffnum import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    ``coords`` limits evaluation to the given flat indices; others stay zero.
    """
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error ``|a - b|_inf / max(|a|_inf, |b|_inf)``."""
    scale = max(np.abs(a).max(), np.abs(b).max())
    if scale == 0:
        return 0.0
    return float(np.abs(a - b).max() / scale)


def check_module_grads(module, loss_fn, rng: np.random.Generator, per_param: int = 6, h: float = 1e-5):
    """Worst relative error between tape and finite-difference gradients over sampled coordinates."""
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic, numeric = [], []
    for name, p in module.named_parameters():
        if not p.learnable:
            continue
        n = p.data.size
        coords = rng.choice(n, size=min(per_param, n), replace=False)
        tape = np.zeros(n) if p.grad is None else p.grad.reshape(-1)
        num = numeric_grad(lambda: loss_fn().item(), p.data, h, coords).reshape(-1)
        analytic.append(tape[coords])
        numeric.append(num[coords])
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def check_input_grads(fn, inputs: list[np.ndarray], h: float = 1e-5) -> float:
    """Relative error of d fn(*tensors) / d inputs against finite differences."""
    ts = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    fn(*ts).backward()
    errs = []
    for i, x in enumerate(inputs):
        def f():
            return fn(*[Tensor(t.data) if j != i else Tensor(x) for j, t in enumerate(ts)]).item()
        num = numeric_grad(f, x, h)
        errs.append(rel_error(ts[i].grad, num))
    return max(errs)


def mc_iou(a, b, n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo IoU of two (x, y, yaw, length, width) boxes over their joint bounding square."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    lo = np.minimum(a[:2] - ra, b[:2] - rb)
    hi = np.maximum(a[:2] + ra, b[:2] + rb)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box):
        c, s = math.cos(box[2]), math.sin(box[2])
        d = pts - box[:2]
        u = c * d[:, 0] + s * d[:, 1]
        v = -s * d[:, 0] + c * d[:, 1]
        return (np.abs(u) <= box[3] / 2) & (np.abs(v) <= box[4] / 2)

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def bivariate_logpdf(x, y, mx, my, sx, sy, rho) -> float:
    """Correlated 2-D normal log density, written out directly."""
    zx, zy = (x - mx) / sx, (y - my) / sy
    q = (zx * zx - 2 * rho * zx * zy + zy * zy) / (1 - rho * rho)
    return -math.log(2 * math.pi * sx * sy * math.sqrt(1 - rho * rho)) - 0.5 * q


def laplace_logpdf(x, mu, b=1.0) -> float:
    return -math.log(2 * b) - abs(x - mu) / b


def kl_oracle(m1, s1, m2, s2) -> float:
    """KL(N(m1, s1^2) || N(m2, s2^2)) summed elementwise, direct formula."""
    m1, s1, m2, s2 = map(np.asarray, (m1, s1, m2, s2))
    return float(np.sum(np.log(s2 / s1) + (s1 ** 2 + (m1 - m2) ** 2) / (2 * s2 ** 2) - 0.5))


def eq8_label(kappa: float, delta: float) -> str:
    """Curvature/heading rule written out independently of the package."""
    if kappa >= 0.18:
        return "u_turn"
    if 0.03 < kappa < 0.18 and delta > 0.2:
        return "turn"
    if 0.1 < kappa < 0.18:
        return "turn"
    return "straight"


def arc_path(kappa: float, sweep: float, lead: float, tail: float, ds: float,
             heading: float = 0.0, origin=(0.0, 0.0)) -> np.ndarray:
    """Straight lead-in, circular arc of signed ``sweep`` at curvature ``kappa``, straight tail.

    Points are sampled every ``ds`` metres of arc length from the closed-form path.
    """
    arc_len = abs(sweep) / kappa if kappa > 0 else 0.0
    total = lead + arc_len + tail
    s = np.append(np.arange(0.0, total, ds), total)
    turn = math.copysign(1.0, sweep)
    out = np.empty((len(s), 2))
    for i, si in enumerate(s):
        if si <= lead:
            x, y = si, 0.0
        elif si <= lead + arc_len:
            u = si - lead
            r = 1.0 / kappa
            x, y = lead + r * math.sin(kappa * u), turn * r * (1 - math.cos(kappa * u))
        else:
            r = 1.0 / kappa if kappa > 0 else 0.0
            ex, ey = lead + r * math.sin(abs(sweep)), turn * r * (1 - math.cos(abs(sweep)))
            u = si - lead - arc_len
            x, y = ex + u * math.cos(sweep), ey + u * math.sin(sweep)
        out[i] = (x, y)
    c, sn = math.cos(heading), math.sin(heading)
    return out @ np.array([[c, sn], [-sn, c]]) + np.asarray(origin)


def constructed_trajectories(n: int, rng: np.random.Generator):
    """Yield (points, kappa, delta, sweep) drawn away from the rule's thresholds."""
    regions = [
        ("stationary", None, None),
        ("straight_flat", (0.0, 0.027), (0.0, 2.0)),
        ("straight_shallow", (0.034, 0.09), (0.02, 0.18)),
        ("turn_heading", (0.034, 0.09), (0.23, 2.5)),
        ("turn_sharp", (0.11, 0.17), (0.03, 3.0)),
        ("u_turn", (0.2, 0.33), (0.05, 3.1)),
    ]
    for i in range(n):
        name, kr, dr = regions[i % len(regions)]
        heading = rng.uniform(-math.pi, math.pi)
        origin = rng.uniform(-100, 100, 2)
        if name == "stationary":
            length = rng.uniform(0.3, 2.7)
            pts = arc_path(0.0, 0.0, length, 0.0, 0.1, heading, origin)
            yield pts, None, None, 0.0
            continue
        kappa = rng.uniform(*kr)
        delta = rng.uniform(*dr) if kappa > 0 else 0.0
        if name == "straight_flat":
            delta = min(delta, 60 * kappa)
        if name == "straight_flat" and rng.uniform() < 0.2:
            kappa, delta = 0.0, 0.0
        sweep = delta * (1 if rng.uniform() < 0.5 else -1)
        arc_len = delta / kappa if kappa > 0 else 0.0
        ds = min(0.5, arc_len / 12) if arc_len > 0 else 0.5
        pts = arc_path(kappa, sweep, rng.uniform(5, 15), rng.uniform(5, 15), ds, heading, origin)
        yield pts, kappa, delta, sweep
