"""Estimator facade: fit a Gaussian-bone rig with the familiar sklearn verbs.

``GaussianBoneRig`` wraps the functional fitting API in a
``fit``/``predict``/``transform``/``score`` shell so the rig drops into
sklearn-style pipelines and parameter searches. ``X`` is either a
:class:`~gaussrig.geometry.MeshSequence` or a raw (T, N, 3) frame stack
(faces then come through the ``faces`` keyword or masking is disabled).
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import InvalidInputError
from .fitting import (
    FitConfig,
    deform_frames,
    fit_motion_only,
    fit_rig_and_motion,
    recon_loss,
    rig_weights_for_mesh,
    transfer_weights,
)
from .geometry import MeshSequence, TriMesh
from .validation import check_frames


class GaussianBoneRig(BaseEstimator):
    """Explicit rig-and-motion model fit by gradient descent.

    Parameters mirror :class:`~gaussrig.fitting.FitConfig`; see there for
    semantics. After ``fit`` the instance carries ``rig_``, ``motion_``,
    ``weights_``, and ``report_``.
    """

    def __init__(self, n_bones: int = 48, iterations: int = 2000,
                 rig_lr: float = 1e-3, motion_lr: float = 1e-2,
                 tau: float | None = None, top_k: int = 4,
                 clip_norm: float = 1.0, seed: int = 0,
                 init_jitter: float = 0.0):
        self.n_bones = n_bones
        self.iterations = iterations
        self.rig_lr = rig_lr
        self.motion_lr = motion_lr
        self.tau = tau
        self.top_k = top_k
        self.clip_norm = clip_norm
        self.seed = seed
        self.init_jitter = init_jitter

    def _config(self) -> FitConfig:
        return FitConfig(
            n_bones=self.n_bones,
            iterations=self.iterations,
            rig_lr=self.rig_lr,
            motion_lr=self.motion_lr,
            tau=self.tau,
            top_k=self.top_k,
            clip_norm=self.clip_norm,
            seed=self.seed,
            init_jitter=self.init_jitter,
        )

    @staticmethod
    def _as_sequence(X, faces) -> MeshSequence:
        if isinstance(X, MeshSequence):
            return X
        frames = check_frames(X, "X")
        if faces is None:
            faces = np.empty((0, 3), dtype=np.int64)
        return MeshSequence(frames, np.asarray(faces, dtype=np.int64))

    def fit(self, X, y=None, faces=None, graph=None):
        """Fit rig and motion to a sequence; ``y`` is ignored."""
        seq = self._as_sequence(X, faces)
        if seq.faces.size == 0 and graph is None and not (
            self.tau is not None and math.isinf(self.tau)
        ):
            raise InvalidInputError(
                "X carries no faces: pass faces=, a connectivity graph=, "
                "or tau=inf to disable geodesic masking"
            )
        self.rig_, self.motion_, self.weights_, self.report_ = fit_rig_and_motion(
            seq, self._config(), graph=graph
        )
        self.sequence_ = seq
        self.n_features_in_ = seq.n_vertices * 3
        return self

    def _check_fitted(self):
        if not hasattr(self, "rig_"):
            raise InvalidInputError("estimator is not fitted yet; call fit first")

    def predict(self, X=None, faces=None, graph=None) -> np.ndarray:
        """Reconstructed frames, (T-1, N, 3).

        With no argument, replays the fitted motion on the fitted sequence.
        Given a new sequence over the same vertex set, refits motion only
        (frozen rig) and returns that reconstruction.
        """
        self._check_fitted()
        if X is None:
            return deform_frames(
                self.sequence_.frames[0], self.weights_, self.motion_,
                self.rig_.centers(),
            )
        seq = self._as_sequence(X, faces)
        w = transfer_weights(self.rig_, seq, graph)
        motion, _ = fit_motion_only(self.rig_, seq, self._config(), weights=w)
        return deform_frames(seq.frames[0], w, motion, self.rig_.centers())

    def transform(self, X, graph=None) -> np.ndarray:
        """Dense skinning weights of the fitted rig for new geometry.

        ``X`` may be a TriMesh, a MeshSequence (its canonical frame is
        used), or bare (N, 3) vertices (then a graph is required unless
        masking is off).
        """
        self._check_fitted()
        if isinstance(X, MeshSequence):
            X = TriMesh(X.frames[0], X.faces)
        if isinstance(X, TriMesh):
            return rig_weights_for_mesh(self.rig_, X, graph=graph)
        vertices = np.asarray(X, dtype=np.float64)
        mesh = TriMesh(vertices, np.empty((0, 3), dtype=np.int64))
        if graph is None and not math.isinf(self.rig_.tau):
            raise InvalidInputError(
                "bare vertices need a connectivity graph for the geodesic mask"
            )
        return rig_weights_for_mesh(self.rig_, mesh, graph=graph)

    def fit_transform(self, X, y=None, **fit_kwargs) -> np.ndarray:
        return self.fit(X, y, **fit_kwargs).weights_.to_dense()

    def score(self, X=None, y=None, faces=None, graph=None) -> float:
        """Negative reconstruction MSE (higher is better, sklearn convention)."""
        self._check_fitted()
        if X is None:
            return -self.report_.final_loss
        seq = self._as_sequence(X, faces)
        pred = self.predict(seq, graph=graph)
        return -recon_loss(pred, seq.frames[1:])
