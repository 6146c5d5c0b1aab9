"""Split Bregman reconstruction of the occlusion-free image.

Each observed frame y_m is modeled as y_m = O_m H_m W_m x + noise, where
W_m warps the latent image x into the frame's geometry, H_m is an
optional blur and O_m keeps only unoccluded pixels. The latent image is
recovered by minimizing

    1/2 sum_m ||y_m - O_m H_m W_m x||^2 + mu ||grad x||_1

with the TV term split off through an auxiliary variable d and a Bregman
variable b: a gradient-descent x-subproblem alternates with a closed-form
shrinkage of d, and b accumulates the splitting residual.
"""

from dataclasses import dataclass, field

import numpy as np

from . import imgcore, motion
from .motion import FlowField, GlobalShift


class SolverError(RuntimeError):
    """Raised when the inner gradient descent cannot make progress."""


# ---------------------------------------------------------------------------
# Discrete gradient (forward differences, zero at the far edge)


def grad(x):
    """Forward-difference gradient (gx, gy); last column/row get 0."""
    x = imgcore.as_plane(x)
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def grad_adjoint(gx, gy):
    """Exact transpose of :func:`grad` (a negative divergence)."""
    gx = imgcore.as_plane(gx)
    gy = imgcore.as_plane(gy)
    if gx.shape != gy.shape:
        raise ValueError(f"gx/gy shape mismatch: {gx.shape} vs {gy.shape}")
    out = np.zeros_like(gx)
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    out[:-1, :] -= gy[:-1, :]
    out[1:, :] += gy[:-1, :]
    return out


# ---------------------------------------------------------------------------
# Shrinkage


def shrink(gx, gy, threshold, mode="isotropic"):
    """Soft-threshold a gradient-domain pair.

    Isotropic: shrink the per-pixel magnitude sqrt(gx^2 + gy^2), keeping
    the direction. Anisotropic: soft-threshold each component on its own.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    if mode == "isotropic":
        s = np.hypot(gx, gy)
        scale = np.zeros_like(s)
        np.divide(np.maximum(s - threshold, 0.0), s, out=scale, where=s > 0)
        return gx * scale, gy * scale
    if mode == "anisotropic":
        return (np.sign(gx) * np.maximum(np.abs(gx) - threshold, 0.0),
                np.sign(gy) * np.maximum(np.abs(gy) - threshold, 0.0))
    raise ValueError(f"unknown tv mode {mode!r}")


# ---------------------------------------------------------------------------
# Per-frame degradation operator


@dataclass
class FrameObservation:
    """One observed frame with its occlusion mask, motion and optional blur.

    The effective observation mask is the AND of the fence mask and the
    warp validity map: samples the warp pulls from outside the latent
    image carry no information.
    """

    y: np.ndarray
    mask: np.ndarray
    motion: object = None  # FlowField, GlobalShift, or None (identity)
    psf: np.ndarray = None
    eff_mask: np.ndarray = field(init=False, repr=False)
    y_masked: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.y = imgcore.as_plane(self.y)
        self.mask = imgcore.as_mask(self.mask)
        if self.mask.shape != self.y.shape:
            raise ValueError(
                f"mask {self.mask.shape} does not match frame {self.y.shape}")
        eff = self.mask.astype(np.float64)
        if isinstance(self.motion, GlobalShift):
            eff = eff * motion.shift_validity(self.motion, self.y.shape)
        elif isinstance(self.motion, FlowField):
            if self.motion.shape != self.y.shape:
                raise ValueError(
                    f"flow {self.motion.shape} does not match frame {self.y.shape}")
            eff = eff * motion.warp_validity(self.motion)
        elif self.motion is not None:
            raise ValueError(f"unsupported motion type {type(self.motion)}")
        if self.psf is not None:
            self.psf = imgcore._check_kernel(self.psf)
        self.eff_mask = eff
        # occluded pixels of the observation hold fence color, not scene
        # data, so the data term only ever sees the masked frame
        self.y_masked = self.y * eff


def apply_forward(obs, x):
    """O H W x: warp into frame geometry, blur, zero out occluded pixels."""
    if isinstance(obs.motion, GlobalShift):
        z = motion.shift_forward(x, obs.motion)
    elif isinstance(obs.motion, FlowField):
        z = motion.warp_forward(x, obs.motion)
    else:
        z = imgcore.as_plane(x)
    if obs.psf is not None:
        z = imgcore.convolve(z, obs.psf)
    return z * obs.eff_mask


def apply_adjoint(obs, r):
    """W^T H^T O^T r: the exact transpose of :func:`apply_forward`."""
    z = imgcore.as_plane(r) * obs.eff_mask
    if obs.psf is not None:
        z = imgcore.convolve_adjoint(z, obs.psf)
    if isinstance(obs.motion, GlobalShift):
        return motion.shift_adjoint(z, obs.motion)
    if isinstance(obs.motion, FlowField):
        return motion.warp_adjoint(z, obs.motion)
    return z


# ---------------------------------------------------------------------------
# Split Bregman iteration


@dataclass
class SolverParams:
    mu: float = 1e-5
    lam: float = 0.01
    outer_iters: int = 50
    inner_iters: int = 10
    step_tau: float = None  # default 1/(n_frames + 4*lam), set per solve
    tol: float = 1e-4
    tv_mode: str = "isotropic"
    # comparison switch: threshold the shrinkage by lam/mu instead of the
    # mu/lam that optimality of the d-subproblem dictates
    invert_shrink_threshold: bool = False

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError("mu and lam must be > 0")
        if self.step_tau is not None and self.step_tau <= 0:
            raise ValueError("step_tau must be > 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.tv_mode not in ("isotropic", "anisotropic"):
            raise ValueError(f"unknown tv mode {self.tv_mode!r}")

    def shrink_threshold(self):
        if self.invert_shrink_threshold:
            return self.lam / self.mu
        return self.mu / self.lam

    def default_tau(self, n_frames):
        # masks/warps are non-expansive and grad^T grad has norm <= 8,
        # so 1/(p + 4*lam) keeps the quadratic subproblem stable
        return 1.0 / (n_frames + 4.0 * self.lam)


@dataclass
class BregmanState:
    x: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    iter: int = 0
    tau: float = None

    @classmethod
    def initial(cls, x0, tau=None):
        x0 = imgcore.as_plane(x0)
        z = np.zeros_like(x0)
        return cls(x=x0, dx=z.copy(), dy=z.copy(), bx=z.copy(), by=z.copy(),
                   iter=0, tau=tau)


@dataclass(frozen=True)
class ConvergenceRecord:
    iter: int
    data_energy: float
    tv_energy: float
    total: float
    rel_change: float


def data_energy(observations, x):
    """1/2 sum_m ||y_m - O_m H_m W_m x||^2."""
    e = 0.0
    for obs in observations:
        r = apply_forward(obs, x) - obs.y_masked
        e += 0.5 * np.sum(r * r)
    return float(e)


def tv_energy(x, mode="isotropic"):
    gx, gy = grad(x)
    if mode == "isotropic":
        return float(np.sum(np.hypot(gx, gy)))
    return float(np.sum(np.abs(gx)) + np.sum(np.abs(gy)))


def _subproblem_objective(state, observations, lam, x):
    gx, gy = grad(x)
    rx = gx - state.dx + state.bx
    ry = gy - state.dy + state.by
    return data_energy(observations, x) + 0.5 * lam * (np.sum(rx * rx)
                                                       + np.sum(ry * ry))


def solve_x_subproblem(state, observations, params):
    """Gradient descent on the quadratic x-subproblem.

    Runs ``inner_iters`` steps of size tau; if the objective increases on
    two consecutive steps, tau is halved and the last step retried. A tau
    underflow below 1e-8 aborts with SolverError. Returns the new x and
    the (possibly reduced) step size.
    """
    if not observations:
        raise ValueError("at least one observation is required")
    lam = params.lam
    tau = state.tau
    if tau is None:
        tau = params.step_tau if params.step_tau is not None \
            else params.default_tau(len(observations))
    x = state.x
    obj = _subproblem_objective(state, observations, lam, x)
    increases = 0
    steps = 0
    while steps < params.inner_iters:
        g = np.zeros_like(x)
        for obs in observations:
            g += apply_adjoint(obs, apply_forward(obs, x) - obs.y_masked)
        gx, gy = grad(x)
        g += lam * grad_adjoint(gx - state.dx + state.bx,
                                gy - state.dy + state.by)
        x_new = x - tau * g
        obj_new = _subproblem_objective(state, observations, lam, x_new)
        if not np.isfinite(obj_new) or obj_new > obj:
            increases += 2 if not np.isfinite(obj_new) else 1
            if increases >= 2:
                tau *= 0.5
                if tau < 1e-8:
                    raise SolverError(
                        "gradient-descent step size underflowed below 1e-8")
                increases = 0
                continue  # retry the step from the same x
        else:
            increases = 0
        x = x_new
        obj = obj_new
        steps += 1
    return x, tau


def bregman_step(state, observations, params):
    """One outer split Bregman iteration; returns (state', record)."""
    x_prev = state.x
    x, tau = solve_x_subproblem(state, observations, params)
    gx, gy = grad(x)
    t = params.shrink_threshold()
    dx, dy = shrink(gx + state.bx, gy + state.by, t, params.tv_mode)
    bx = gx + state.bx - dx
    by = gy + state.by - dy
    new_state = BregmanState(x=x, dx=dx, dy=dy, bx=bx, by=by,
                             iter=state.iter + 1, tau=tau)
    denom = np.linalg.norm(x_prev)
    rel = float(np.linalg.norm(x - x_prev) / denom) if denom > 0 \
        else float(np.linalg.norm(x - x_prev))
    de = data_energy(observations, x)
    te = params.mu * tv_energy(x, params.tv_mode)
    record = ConvergenceRecord(iter=new_state.iter, data_energy=de,
                               tv_energy=te, total=de + te, rel_change=rel)
    return new_state, record


def solve_plane(observations, params, x0):
    """Run the Bregman loop on one channel until tol or the iteration cap."""
    state = BregmanState.initial(x0)
    records = []
    for _ in range(params.outer_iters):
        state, rec = bregman_step(state, observations, params)
        records.append(rec)
        if rec.rel_change < params.tol:
            break
    return state.x, records


def _check_consistent(frames, masks, motions, psfs):
    n = len(frames)
    if n < 1:
        raise ValueError("at least one frame is required")
    if len(masks) != n or len(motions) != n:
        raise ValueError(
            f"got {n} frames, {len(masks)} masks, {len(motions)} motions")
    if psfs is not None and len(psfs) != n:
        raise ValueError(f"got {n} frames but {len(psfs)} psfs")
    shape = frames[0].shape[:2]
    for i, f in enumerate(frames):
        if f.shape != frames[0].shape:
            raise ValueError(f"frame {i + 1} shape {f.shape} != {frames[0].shape}")
    for i, m in enumerate(masks):
        if np.shape(m) != shape:
            raise ValueError(f"mask {i + 1} shape {np.shape(m)} != {shape}")
    for i, mo in enumerate(motions):
        if isinstance(mo, FlowField) and mo.shape != shape:
            raise ValueError(f"flow {i + 1} shape {mo.shape} != {shape}")


def defence(frames, masks, motions, params, init="random", seed=0, psfs=None):
    """Reconstruct the de-fenced color image from observed frames.

    Each color channel is solved independently and the results recombined.
    ``init`` selects the starting estimate: "random" draws uniform values
    in 0..255 from the seeded generator; "reference" starts from the first
    frame with its fence pixels set to mid-gray.

    Returns (image, per-channel ConvergenceRecord lists).
    """
    frames = [imgcore.as_color(f) for f in frames]
    _check_consistent(frames, masks, motions, psfs)
    if init not in ("random", "reference"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    h, w, _ = frames[0].shape
    out = np.zeros((h, w, 3))
    all_records = []
    for c in range(3):
        observations = [
            FrameObservation(frames[m][:, :, c], masks[m], motions[m],
                             None if psfs is None else psfs[m])
            for m in range(len(frames))
        ]
        if init == "random":
            x0 = rng.uniform(0.0, 255.0, (h, w))
        else:
            x0 = frames[0][:, :, c].copy()
            x0[np.asarray(masks[0]) == 0] = 128.0
        x, records = solve_plane(observations, params, x0)
        out[:, :, c] = x
        all_records.append(records)
    return out, all_records
