"""Joint rig-and-motion fitting by gradient descent on reconstruction error.

The rig (Gaussian bones) and the per-frame transforms are optimized with
Adam on analytic gradients of the mean squared per-vertex reconstruction
error. Skinning weights are not free parameters: they are recomputed from
the bone parameters every forward pass, so bones and weights can never
drift apart. The binary coherence mask, the per-row top-k support pattern,
and any nearest-bone fallback rows are treated as constants of the current
forward pass (they are non-differentiable selections).

Parameterization choices that matter for optimization:

- scales are stored as logs, so positivity is structural;
- quaternions are optimized as raw 4-vectors and normalized inside the
  forward pass, with gradients flowing through the normalization;
- a bone's local transform pivots at the bone's effective center
  (translate(-c), rotate, translate(+c), after the frame translation),
  which decouples rotation from the large induced translation an
  origin-pivot parameterization would need. Composed into a single rigid
  transform this is the plain hierarchical transform the blend uses.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    FitDivergedError,
    InvalidInputError,
    InvalidParameterError,
)
from .geodesic import (
    GeodesicField,
    coherence_mask,
    default_tau,
    geodesic_distances,
)
from .geometry import (
    MeshSequence,
    RigidTransform,
    TriMesh,
    bbox_diagonal,
    edge_graph,
    quat_to_rotmat,
)
from .sampling import AnchorSet, farthest_point_sample
from .skinning import (
    DEFAULT_TOP_K,
    REFINE_EPS,
    BoneTransforms,
    GaussianBone,
    SkinningWeights,
    raw_weights,
    refine_weights,
    sparsify_weights,
    support_pattern,
)


@dataclass(frozen=True)
class FitConfig:
    """Everything that controls one fitting run."""

    n_bones: int = 48
    iterations: int = 2000
    rig_lr: float = 1e-3
    motion_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tau: float | None = None  # None -> 0.4 x canonical bbox diagonal; inf disables masking
    top_k: int = DEFAULT_TOP_K
    clip_norm: float = 1.0
    seed: int = 0
    init_jitter: float = 0.0  # relative stddev of random rig-init perturbation
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidParameterError("iterations must be >= 1")
        if self.rig_lr <= 0 or self.motion_lr <= 0:
            raise InvalidParameterError("learning rates must be positive")
        if self.n_bones < 1:
            raise InvalidParameterError("n_bones must be >= 1")
        if self.top_k < 1:
            raise InvalidParameterError("top_k must be >= 1")
        if self.tau is not None and not self.tau > 0:
            raise InvalidParameterError("tau must be positive (inf disables masking)")
        if self.clip_norm < 0:
            raise InvalidParameterError("clip_norm must be >= 0 (0 disables clipping)")
        if self.init_jitter < 0:
            raise InvalidParameterError("init_jitter must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_bones": self.n_bones,
            "iterations": self.iterations,
            "rig_lr": self.rig_lr,
            "motion_lr": self.motion_lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "tau": self.tau,
            "top_k": self.top_k,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
            "init_jitter": self.init_jitter,
            "log_every": self.log_every,
        }


@dataclass
class RigParams:
    """Optimizable rig state: K Gaussian bones hanging off fixed anchors.

    Scales are stored linear (strictly positive); the optimizer works on
    their logs internally and exponentiates back when it hands the rig out,
    so serialization never has to round-trip through a log.
    """

    anchors: AnchorSet
    delta_center: np.ndarray  # (K, 3)
    scale: np.ndarray  # (K, 3) strictly positive
    orientation: np.ndarray  # (K, 4) raw quaternions, normalized in forward
    tau: float
    top_k: int = DEFAULT_TOP_K

    @property
    def n_bones(self) -> int:
        return len(self.anchors)

    def centers(self) -> np.ndarray:
        return self.anchors.coords + self.delta_center

    def scales(self) -> np.ndarray:
        return self.scale

    def bones(self) -> list[GaussianBone]:
        return [
            GaussianBone(
                int(self.anchors.indices[k]),
                self.delta_center[k],
                self.scale[k],
                self.orientation[k],
            )
            for k in range(self.n_bones)
        ]

    def copy(self) -> "RigParams":
        return RigParams(
            self.anchors,
            self.delta_center.copy(),
            self.scale.copy(),
            self.orientation.copy(),
            self.tau,
            self.top_k,
        )


@dataclass
class MotionParams:
    """Per-frame transforms for frames 1..T-1 (frame 0 is the rest pose)."""

    root_quat: np.ndarray  # (T-1, 4)
    root_trans: np.ndarray  # (T-1, 3)
    local_quat: np.ndarray  # (T-1, K, 4)
    local_trans: np.ndarray  # (T-1, K, 3)

    @classmethod
    def identity(cls, n_frames: int, n_bones: int) -> "MotionParams":
        rq = np.zeros((n_frames, 4))
        rq[:, 0] = 1.0
        lq = np.zeros((n_frames, n_bones, 4))
        lq[:, :, 0] = 1.0
        return cls(rq, np.zeros((n_frames, 3)), lq, np.zeros((n_frames, n_bones, 3)))

    @property
    def n_frames(self) -> int:
        return self.root_quat.shape[0]

    @property
    def n_bones(self) -> int:
        return self.local_quat.shape[1]

    def copy(self) -> "MotionParams":
        return MotionParams(
            self.root_quat.copy(),
            self.root_trans.copy(),
            self.local_quat.copy(),
            self.local_trans.copy(),
        )


@dataclass
class FitReport:
    """Outcome of one optimization run."""

    final_loss: float
    loss_history: np.ndarray
    wall_time_s: float
    per_frame_mse: np.ndarray
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "loss_history": self.loss_history.tolist(),
            "wall_time_s": self.wall_time_s,
            "per_frame_mse": self.per_frame_mse.tolist(),
            "config": self.config,
        }


def recon_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over frames and vertices of squared vertex error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {target.shape}")
    r = pred - target
    n_terms = r.shape[0] * r.shape[1] if r.ndim == 3 else len(r)
    return float(np.sum(r * r) / n_terms)


# ---------------------------------------------------------------------------
# weights as a function of rig parameters


def rig_weights(rig: RigParams, vertices: np.ndarray,
                field: GeodesicField | None) -> np.ndarray:
    """Dense (N, K) skinning weights implied by the current rig state."""
    raw = raw_weights(vertices, rig.centers(), rig.scales(), rig.orientation)
    if math.isinf(rig.tau):
        refined = raw / (raw.sum(axis=1, keepdims=True) + REFINE_EPS)
    else:
        if field is None:
            raise InvalidInputError("finite tau requires a geodesic field")
        mask = coherence_mask(field, rig.tau)
        refined = refine_weights(raw, mask, field)
    return sparsify_weights(refined, rig.top_k)


def rig_weights_for_mesh(rig: RigParams, mesh: TriMesh, graph=None) -> np.ndarray:
    """Weights for a mesh the rig was not fitted on (any resolution).

    Bones are continuous functions of 3D position, so the Gaussian part
    transfers as-is; only the geodesic mask needs graph sources, which are
    taken as the new mesh's nearest vertices to the stored anchor
    coordinates.
    """
    field = None
    if not math.isinf(rig.tau):
        if graph is None:
            graph = edge_graph(mesh)
        from scipy.spatial import cKDTree

        snap = cKDTree(mesh.vertices).query(rig.anchors.coords)[1]
        field = geodesic_distances(graph, np.asarray(snap, dtype=np.int64))
    return rig_weights(rig, mesh.vertices, field)


# ---------------------------------------------------------------------------
# forward deformation


def _motion_rotmats(motion: MotionParams):
    rr = quat_to_rotmat(motion.root_quat)  # (T, 3, 3)
    rl = quat_to_rotmat(motion.local_quat)  # (T, K, 3, 3)
    return rr, rl


def _combined_transforms(motion: MotionParams, centers: np.ndarray):
    """Hierarchical per-frame, per-bone transforms as arrays.

    Local transform (pivot at bone center c): x -> Rl (x + t - c) + c,
    then the root on top: R = Rr Rl, tau = Rr (Rl (t - c) + c) + tr.
    """
    rr, rl = _motion_rotmats(motion)
    delta = motion.local_trans - centers[None, :, :]  # (T, K, 3)
    tau_l = np.einsum("tkab,tkb->tka", rl, delta) + centers[None, :, :]
    r_tot = np.einsum("tab,tkbc->tkac", rr, rl)
    tau_tot = np.einsum("tab,tkb->tka", rr, tau_l) + motion.root_trans[:, None, :]
    return r_tot, tau_tot


def deform_frames(rest: np.ndarray, weights: np.ndarray,
                  motion: MotionParams, centers: np.ndarray) -> np.ndarray:
    """Blend-skin ``rest`` through every frame of ``motion``, (T-1, N, 3)."""
    rest = np.asarray(rest, dtype=np.float64)
    w = weights.to_dense() if isinstance(weights, SkinningWeights) else np.asarray(weights)
    r_tot, tau_tot = _combined_transforms(motion, centers)
    # pred[t,n,:] = sum_k w[n,k] (R[t,k] rest[n] + tau[t,k]); contract k first
    m1 = np.einsum("nk,tkab->tnab", w, r_tot)
    return np.einsum("tnab,nb->tna", m1, rest) + np.einsum("nk,tka->tna", w, tau_tot)


def forward(rig: RigParams, motion: MotionParams, canonical: np.ndarray,
            field: GeodesicField | None = None) -> np.ndarray:
    """Full forward model: rig -> weights, then LBS over all motion frames."""
    w = rig_weights(rig, canonical, field)
    return deform_frames(canonical, w, motion, rig.centers())


def frame_transforms(rig: RigParams, motion: MotionParams, t: int) -> BoneTransforms:
    """Frame ``t`` of the motion as plain rigid transforms.

    The pivot parameterization is folded in: each local transform carries
    translation Rl (tl - c) + c, so root.compose(local) reproduces exactly
    what the fitter optimized.
    """
    centers = rig.centers()
    rl = quat_to_rotmat(motion.local_quat[t])
    delta = motion.local_trans[t] - centers
    tau_l = np.einsum("kab,kb->ka", rl, delta) + centers
    root = RigidTransform(motion.root_quat[t].copy(), motion.root_trans[t].copy())
    locals_ = [
        RigidTransform(motion.local_quat[t, k].copy(), tau_l[k])
        for k in range(motion.n_bones)
    ]
    return BoneTransforms(root=root, local=locals_, frame_index=t + 1)


# ---------------------------------------------------------------------------
# analytic gradients

_DR_DQ_SIGNS = None  # built lazily; see _rotmat_grad_wrt_quat


def _rotmat_grad_wrt_quat(q_raw: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Backpropagate d(loss)/dR into d(loss)/d(raw quaternion).

    ``q_raw`` is (..., 4) unnormalized; ``g_rot`` is (..., 3, 3). The chain
    runs through the unit-quaternion rotation formula and then the
    normalization Jacobian (I - qq^T)/|q|.
    """
    q_raw = np.asarray(q_raw, dtype=np.float64)
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    qn = q_raw / norm
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    zero = np.zeros_like(w)

    def m(r0, r1, r2):
        return np.stack([np.stack(r0, -1), np.stack(r1, -1), np.stack(r2, -1)], -2)

    dr_dw = 2.0 * m([zero, -z, y], [z, zero, -x], [-y, x, zero])
    dr_dx = 2.0 * m([zero, y, z], [y, -2 * x, -w], [z, w, -2 * x])
    dr_dy = 2.0 * m([-2 * y, x, w], [x, zero, z], [-w, z, -2 * y])
    dr_dz = 2.0 * m([-2 * z, -w, x], [w, -2 * z, y], [x, y, zero])
    dr = np.stack([dr_dw, dr_dx, dr_dy, dr_dz], axis=-3)  # (..., 4, 3, 3)

    g_unit = np.einsum("...qab,...ab->...q", dr, g_rot)
    dot = np.sum(g_unit * qn, axis=-1, keepdims=True)
    return (g_unit - qn * dot) / norm


@dataclass
class _Problem:
    """Precomputed constants of one fitting run."""

    rest: np.ndarray  # (N, 3)
    target: np.ndarray  # (T-1, N, 3)
    anchor_coords: np.ndarray  # (K, 3)
    mask: np.ndarray | None  # (N, K) of {0,1}; None disables masking
    geo_dist: np.ndarray | None  # (N, K); None when masking disabled
    top_k: int
    fixed_weights: np.ndarray | None = None  # set in motion-only mode

    @property
    def loss_scale(self) -> float:
        return float(self.target.shape[0] * self.target.shape[1])


def _weights_with_cache(problem: _Problem, delta_center, log_scale, bone_quat):
    """Forward weight pipeline keeping every intermediate for backprop."""
    rest = problem.rest
    c = problem.anchor_coords + delta_center
    s = np.exp(log_scale)
    rot = quat_to_rotmat(bone_quat)  # (K, 3, 3)

    y = rest[:, None, :] - c[None, :, :]  # (N, K, 3)
    p = np.einsum("kam,nka->nkm", rot, y)
    u = p / s[None, :, :]
    d = 0.5 * np.einsum("nkm,nkm->nk", u, u)

    logits = -d
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    raw = e / e.sum(axis=1, keepdims=True)

    if problem.mask is None:
        gated = raw
    else:
        gated = raw * problem.mask
    denom = gated.sum(axis=1) + REFINE_EPS
    w1 = gated / denom[:, None]
    dead = np.flatnonzero(gated.sum(axis=1) == 0.0)
    if dead.size:
        w1[dead] = 0.0
        w1[dead, np.argmin(problem.geo_dist[dead], axis=1)] = 1.0

    pattern = support_pattern(w1, problem.top_k)
    wp = np.where(pattern, w1, 0.0)
    s2 = wp.sum(axis=1)
    w = wp / s2[:, None]

    cache = dict(
        c=c, s=s, rot=rot, y=y, u=u, raw=raw, denom=denom, w1=w1,
        dead=dead, pattern=pattern, s2=s2, w=w,
    )
    return w, cache


def _weights_backward(problem: _Problem, cache: dict, g_w: np.ndarray):
    """Gradients of the weight pipeline wrt delta_center, log_scale, quat.

    Also returns the gradient wrt the effective centers coming from the
    Mahalanobis term, which the caller merges with the pivot-term center
    gradient.
    """
    w, w1, s2 = cache["w"], cache["w1"], cache["s2"]
    pattern, dead, denom = cache["pattern"], cache["dead"], cache["denom"]
    raw, u, s, rot, y = cache["raw"], cache["u"], cache["s"], cache["rot"], cache["y"]

    # top-k renormalization
    g_w1 = np.where(pattern, (g_w - (g_w * w).sum(axis=1, keepdims=True)) / s2[:, None], 0.0)
    # mask renormalization; fallback one-hot rows are constants
    g_gated = (g_w1 - (g_w1 * w1).sum(axis=1, keepdims=True)) / denom[:, None]
    if dead.size:
        g_gated[dead] = 0.0
    g_raw = g_gated if problem.mask is None else g_gated * problem.mask
    # softmax
    g_logit = raw * (g_raw - (g_raw * raw).sum(axis=1, keepdims=True))
    g_d = -g_logit

    g_u = g_d[:, :, None] * u
    g_log_scale = -np.einsum("nkm,nkm->km", g_u, u)
    g_p = g_u / s[None, :, :]
    g_y = np.einsum("kam,nkm->nka", rot, g_p)
    g_center_weights = -g_y.sum(axis=0)
    g_rot = np.einsum("nkm,nka->kam", g_p, y)
    return g_center_weights, g_log_scale, g_rot


def loss_and_gradients(problem: _Problem, params: dict, freeze_rig: bool = False,
                       want_grads: bool = True):
    """Reconstruction loss and its exact gradient wrt all free parameters.

    ``params`` holds 'root_quat', 'root_trans', 'local_quat', 'local_trans'
    and, unless the rig is frozen, 'delta_center', 'log_scale',
    'bone_quat'. Discrete selections made during this forward pass (mask,
    top-k support, fallback rows) are held constant for the gradient.
    """
    rest, target = problem.rest, problem.target

    if freeze_rig:
        w = problem.fixed_weights
        c = problem.anchor_coords + params["delta_center"]
        w_cache = None
    else:
        w, w_cache = _weights_with_cache(
            problem, params["delta_center"], params["log_scale"], params["bone_quat"]
        )
        c = w_cache["c"]

    rq, tr = params["root_quat"], params["root_trans"]
    lq, tl = params["local_quat"], params["local_trans"]
    rr = quat_to_rotmat(rq)  # (T, 3, 3)
    rl = quat_to_rotmat(lq)  # (T, K, 3, 3)
    delta = tl - c[None, :, :]
    tau_l = np.einsum("tkab,tkb->tka", rl, delta) + c[None, :, :]
    r_tot = np.einsum("tab,tkbc->tkac", rr, rl)
    tau_tot = np.einsum("tab,tkb->tka", rr, tau_l) + tr[:, None, :]

    m1 = np.einsum("nk,tkab->tnab", w, r_tot)
    pred = np.einsum("tnab,nb->tna", m1, rest) + np.einsum("nk,tka->tna", w, tau_tot)

    resid = pred - target
    scale = problem.loss_scale
    loss = float(np.sum(resid * resid) / scale)
    if not want_grads:
        return loss, None, pred

    g_pred = (2.0 / scale) * resid  # (T, N, 3)

    # blend: pred = sum_k w[n,k] (R[t,k] v[n] + tau[t,k])
    g_rtot = np.einsum("tna,nb->tnab", g_pred, rest)
    g_rtot = np.einsum("tnab,nk->tkab", g_rtot, w)
    g_tautot = np.einsum("tna,nk->tka", g_pred, w)

    # hierarchy: R = Rr Rl, tau = Rr tau_l + tr
    g_rr = np.einsum("tkac,tkbc->tab", g_rtot, rl) + np.einsum(
        "tka,tkb->tab", g_tautot, tau_l
    )
    g_rl = np.einsum("tkac,tab->tkbc", g_rtot, rr)
    g_taul = np.einsum("tka,tab->tkb", g_tautot, rr)
    g_tr = g_tautot.sum(axis=1)

    # local pivot: tau_l = Rl (tl - c) + c
    g_rl += np.einsum("tka,tkb->tkab", g_taul, delta)
    rl_t_gtaul = np.einsum("tkab,tka->tkb", rl, g_taul)
    g_tl = rl_t_gtaul

    grads = {
        "root_quat": _rotmat_grad_wrt_quat(rq, g_rr),
        "root_trans": g_tr,
        "local_quat": _rotmat_grad_wrt_quat(lq, g_rl),
        "local_trans": g_tl,
    }

    if not freeze_rig:
        # center gradient from the pivot path: d tau_l/dc = I - Rl
        g_center_pivot = (g_taul - rl_t_gtaul).sum(axis=0)
        g_w = np.einsum("tna,tkab->nkb", g_pred, r_tot)
        g_w = np.einsum("nkb,nb->nk", g_w, rest) + np.einsum(
            "tna,tka->nk", g_pred, tau_tot
        )
        g_center_w, g_log_scale, g_rot_b = _weights_backward(problem, w_cache, g_w)
        grads["delta_center"] = g_center_pivot + g_center_w
        grads["log_scale"] = g_log_scale
        grads["bone_quat"] = _rotmat_grad_wrt_quat(params["bone_quat"], g_rot_b)

    return loss, grads, pred


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment accumulators for a dict of parameter arrays."""

    m: dict
    v: dict
    step_count: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(state: AdamState, params: dict, grads: dict, lr, beta1=0.9,
              beta2=0.999, eps=1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    ``lr`` is a scalar or a per-parameter-name dict.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step_lr = lr[name] if isinstance(lr, dict) else lr
        params[name] -= step_lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint 2-norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


# ---------------------------------------------------------------------------
# fitting entry points


def _mean_anchor_spacing(coords: np.ndarray, fallback: float) -> float:
    if len(coords) < 2:
        return fallback
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def _init_rig_arrays(anchors: AnchorSet, bbox_diag: float, jitter: float,
                     seed: int) -> dict:
    """Initial optimization state: zero offsets, isotropic log-scales at the
    mean anchor spacing, identity orientations, optionally jittered."""
    k = len(anchors)
    spacing = _mean_anchor_spacing(anchors.coords, fallback=0.25 * bbox_diag)
    if spacing <= 0:
        spacing = max(0.25 * bbox_diag, 1e-6)
    delta = np.zeros((k, 3))
    log_scale = np.full((k, 3), math.log(spacing))
    quat = np.zeros((k, 4))
    quat[:, 0] = 1.0
    if jitter > 0:
        rng = np.random.default_rng(seed)
        delta += rng.normal(scale=jitter * spacing, size=delta.shape)
        log_scale += rng.normal(scale=jitter, size=log_scale.shape)
        quat[:, 1:] += rng.normal(scale=jitter, size=(k, 3))
    return {"delta_center": delta, "log_scale": log_scale, "bone_quat": quat}


def _resolve_tau(cfg_tau, bbox_diag: float) -> float:
    tau = default_tau(bbox_diag) if cfg_tau is None else float(cfg_tau)
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    return tau


def _prepare_field(seq: MeshSequence, anchors, tau: float, graph):
    """Geodesic field and mask for a sequence, or (None, None) with tau=inf."""
    if math.isinf(tau):
        return None, None
    if graph is None:
        if seq.faces.size == 0:
            raise InvalidInputError(
                "sequence has no faces and no connectivity graph was given; "
                "pass the resampler's proxy graph or set tau=inf"
            )
        graph = edge_graph(seq.canonical())
    field = geodesic_distances(graph, anchors)
    return field, coherence_mask(field, tau)


def _run_adam(problem: _Problem, params: dict, cfg: FitConfig, lr: dict,
              freeze_rig: bool):
    state = adam_init(params)
    history = np.empty(cfg.iterations + 1)
    last_finite = None
    # non-finite intermediates are how divergence is *detected*, so the
    # floating-point warnings along that path are noise
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for it in range(cfg.iterations):
            loss, grads, _ = loss_and_gradients(problem, params, freeze_rig=freeze_rig)
            if not math.isfinite(loss):
                raise FitDivergedError(
                    f"non-finite loss at iteration {it}", state=last_finite
                )
            history[it] = loss
            last_finite = {k: p.copy() for k, p in params.items()}
            grad_norm = clip_by_global_norm(grads, cfg.clip_norm)
            if not math.isfinite(grad_norm):
                raise FitDivergedError(
                    f"non-finite gradients at iteration {it}", state=last_finite
                )
            adam_step(state, params, grads, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        final_loss, _, pred = loss_and_gradients(
            problem, params, freeze_rig=freeze_rig, want_grads=False
        )
    if not math.isfinite(final_loss):
        raise FitDivergedError("non-finite loss after final step", state=last_finite)
    history[cfg.iterations] = final_loss
    resid = pred - problem.target
    per_frame = np.einsum("tna,tna->t", resid, resid) / problem.target.shape[1]
    return history, per_frame


def fit_rig_and_motion(seq: MeshSequence, cfg: FitConfig, graph=None):
    """Jointly fit Gaussian bones and per-frame transforms to a sequence.

    Returns ``(rig, motion, weights, report)``. Deterministic for a fixed
    config and input. ``graph`` overrides the connectivity used for
    geodesics (required for resampled sequences, which carry no faces).
    """
    if seq.n_frames < 2:
        raise InvalidInputError("need at least 2 frames")
    if cfg.n_bones > seq.n_vertices:
        raise InvalidParameterError(
            f"n_bones={cfg.n_bones} exceeds vertex count {seq.n_vertices}"
        )
    t0 = time.perf_counter()
    rest = seq.frames[0]
    anchors = farthest_point_sample(rest, cfg.n_bones)
    diag = bbox_diagonal(rest)
    tau = _resolve_tau(cfg.tau, diag)
    field, mask = _prepare_field(seq, anchors, tau, graph)

    motion = MotionParams.identity(seq.n_frames - 1, cfg.n_bones)
    problem = _Problem(
        rest=rest,
        target=seq.frames[1:],
        anchor_coords=anchors.coords,
        mask=None if mask is None else mask.mask,
        geo_dist=None if field is None else field.dist,
        top_k=cfg.top_k,
    )
    params = {
        **_init_rig_arrays(anchors, diag, cfg.init_jitter, cfg.seed),
        "root_quat": motion.root_quat,
        "root_trans": motion.root_trans,
        "local_quat": motion.local_quat,
        "local_trans": motion.local_trans,
    }
    lr = {
        "delta_center": cfg.rig_lr,
        "log_scale": cfg.rig_lr,
        "bone_quat": cfg.rig_lr,
        "root_quat": cfg.motion_lr,
        "root_trans": cfg.motion_lr,
        "local_quat": cfg.motion_lr,
        "local_trans": cfg.motion_lr,
    }
    history, per_frame = _run_adam(problem, params, cfg, lr, freeze_rig=False)

    rig = RigParams(
        anchors,
        params["delta_center"],
        np.exp(params["log_scale"]),
        params["bone_quat"],
        tau,
        cfg.top_k,
    )
    weights = SkinningWeights.from_dense(rig_weights(rig, rest, field))
    report = FitReport(
        final_loss=float(history[-1]),
        loss_history=history,
        wall_time_s=time.perf_counter() - t0,
        per_frame_mse=per_frame,
        config=cfg.to_dict(),
    )
    return rig, motion, weights, report


def transfer_weights(rig: RigParams, seq: MeshSequence, graph=None) -> np.ndarray:
    """The dense weights a frozen rig induces on a sequence's canonical frame.

    This is the weight matrix :func:`fit_motion_only` optimizes against when
    no explicit weights are supplied: the geodesic field is recomputed on
    this sequence (same anchor indices), the Gaussian part is unchanged.
    """
    if seq.n_vertices < int(np.max(rig.anchors.indices)) + 1:
        raise InvalidInputError(
            "sequence vertex count is too small for the rig's anchor indices"
        )
    field, _ = _prepare_field(seq, rig.anchors, rig.tau, graph)
    return rig_weights(rig, seq.frames[0], field)


def fit_motion_only(rig: RigParams, seq: MeshSequence, cfg: FitConfig,
                    graph=None, weights: np.ndarray | SkinningWeights | None = None):
    """Fit per-frame transforms with the rig frozen (cross-motion transfer).

    Weights default to the rig's own weight function evaluated on this
    sequence's canonical frame (the geodesic field is recomputed there with
    the rig's anchors). Pass ``weights`` to reuse a stored matrix instead.
    Returns ``(motion, report)``; the rig is never modified.
    """
    t0 = time.perf_counter()
    rest = seq.frames[0]
    if weights is None:
        w = transfer_weights(rig, seq, graph)
    else:
        w = weights.to_dense() if isinstance(weights, SkinningWeights) else np.asarray(weights)
        if w.shape != (seq.n_vertices, rig.n_bones):
            raise InvalidInputError(
                f"weights shape {w.shape} does not match (N={seq.n_vertices}, "
                f"K={rig.n_bones})"
            )

    motion = MotionParams.identity(seq.n_frames - 1, rig.n_bones)
    problem = _Problem(
        rest=rest,
        target=seq.frames[1:],
        anchor_coords=rig.anchors.coords,
        mask=None,
        geo_dist=None,
        top_k=rig.top_k,
        fixed_weights=w,
    )
    params = {
        "delta_center": rig.delta_center.copy(),  # constant; centers feed the pivot
        "root_quat": motion.root_quat,
        "root_trans": motion.root_trans,
        "local_quat": motion.local_quat,
        "local_trans": motion.local_trans,
    }
    lr = {
        "root_quat": cfg.motion_lr,
        "root_trans": cfg.motion_lr,
        "local_quat": cfg.motion_lr,
        "local_trans": cfg.motion_lr,
    }
    history, per_frame = _run_adam(problem, params, cfg, lr, freeze_rig=True)
    report = FitReport(
        final_loss=float(history[-1]),
        loss_history=history,
        wall_time_s=time.perf_counter() - t0,
        per_frame_mse=per_frame,
        config=cfg.to_dict(),
    )
    return motion, report
