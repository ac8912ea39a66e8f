"""Estimator-style wrappers: feature extraction, burst alignment and super-resolution."""

import math

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidArgument
from .align import AlignmentResult, SearchConfig, align_burst, align_features, align_loss, warp_channels
from .burst import BurstSequence, packed_offsets
from .conv import EquivNetSpec, run_network
from .fusion import MdtaParams, mdta_fuse
from .grid import Image
from .reconstruct import reconstruct
from .transforms import invert

__all__ = ["EquivariantFeatureExtractor", "BurstAligner", "BurstSuperResolver"]


def _as_frames(X):
    if isinstance(X, BurstSequence):
        return X.packed() if X.mosaic else list(X.frames)
    if isinstance(X, Image):
        return [X]
    frames = list(X)
    if not frames or not all(isinstance(f, Image) for f in frames):
        raise InvalidArgument("expected an Image, a list of Images or a BurstSequence")
    return frames


class EquivariantFeatureExtractor(TransformerMixin, BaseEstimator):
    """Rotation-equivariant group feature maps from a seeded (untrained) network.

    ``fit`` only builds the network for the input's channel count and mesh
    size; ``transform`` returns the pre-projection feature maps.
    """

    def __init__(self, t=4, p=3, widths=(2, 2), seed=0, activation="relu"):
        self.t = t
        self.p = p
        self.widths = widths
        self.seed = seed
        self.activation = activation

    def fit(self, X, y=None):
        frames = _as_frames(X)
        channels = (frames[0].C,) + tuple(self.widths) + (1,)
        spec = EquivNetSpec.random(self.t, self.p, frames[0].h, channels=channels, seed=self.seed)
        if self.activation == "none":
            spec = EquivNetSpec(spec.banks, ("none",) * spec.N)
        elif self.activation != "relu":
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        self.spec_ = spec
        self.kernels_ = spec.kernel_stacks()
        self.n_features_out_ = self.t * channels[-2]
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return [run_network(self.spec_, f, self.kernels_).features for f in _as_frames(X)]


class BurstAligner(BaseEstimator):
    """Estimate per-frame rotation-translation transforms against frame 0.

    For mosaic bursts the packed RGGB frames are aligned, with each colour
    plane warped about its true sample positions.
    """

    def __init__(self, theta_max_deg=10.0, theta_step_deg=0.5, shift_max=4, max_evals=200, tol=1e-4):
        self.theta_max_deg = theta_max_deg
        self.theta_step_deg = theta_step_deg
        self.shift_max = shift_max
        self.max_evals = max_evals
        self.tol = tol

    def _search(self):
        return SearchConfig(
            theta_max=math.radians(self.theta_max_deg),
            theta_step=math.radians(self.theta_step_deg),
            shift_max=int(self.shift_max),
            max_evals=int(self.max_evals),
            tol=float(self.tol),
        )

    def _offsets(self, X, frames):
        if isinstance(X, BurstSequence) and X.mosaic:
            return packed_offsets(frames[0].h)
        return None

    def fit(self, X, y=None):
        frames = _as_frames(X)
        if len(frames) < 2:
            raise InvalidArgument("alignment needs at least two frames")
        self.offsets_ = self._offsets(X, frames)
        self.result_ = align_burst(frames, self._search(), self.offsets_)
        self.transforms_ = self.result_.transforms
        self.residuals_ = self.result_.residuals
        self.converged_ = self.result_.converged
        return self

    def transform(self, X):
        """Frames warped back onto the reference grid."""
        check_is_fitted(self, "transforms_")
        frames = _as_frames(X)
        if len(frames) != len(self.transforms_):
            raise InvalidArgument("frame count differs from the fitted burst")
        return [frames[0]] + [
            warp_channels(f, invert(tf), self.offsets_) for f, tf in zip(frames[1:], self.transforms_[1:])
        ]

    def score(self, X, y=None):
        """Negative alignment loss of the fitted transforms."""
        check_is_fitted(self, "transforms_")
        frames = _as_frames(X)
        return -align_loss(frames[0], frames, self.transforms_, offsets=self.offsets_)


class BurstSuperResolver(BaseEstimator):
    """Align, fuse and reconstruct a mosaic burst.

    ``features`` selects the residual branch: ``"zero"``, ``"equivariant"``
    (network features aligned in the feature domain and fused by channel
    attention) or ``"shift-and-add"``.
    """

    def __init__(
        self, features="shift-and-add", use_ground_truth=False, lam=10.0, t=4, p=3,
        widths=(2, 2), seed=0, feature_scale=0.01, aligner=None,
    ):
        self.features = features
        self.use_ground_truth = use_ground_truth
        self.lam = lam
        self.t = t
        self.p = p
        self.widths = widths
        self.seed = seed
        self.feature_scale = feature_scale
        self.aligner = aligner

    def fit(self, X, y=None):
        if not isinstance(X, BurstSequence):
            raise InvalidArgument("fit expects a BurstSequence")
        if self.use_ground_truth:
            self.alignment_ = AlignmentResult(
                tuple(X.transforms), tuple(0.0 for _ in X.transforms),
                tuple(0 for _ in X.transforms), tuple(True for _ in X.transforms),
            )
        else:
            aligner = BurstAligner() if self.aligner is None else self.aligner
            aligner.fit(X)
            self.alignment_ = aligner.result_
        if self.features == "equivariant":
            self.extractor_ = EquivariantFeatureExtractor(self.t, self.p, self.widths, self.seed).fit(X)
        return self

    def fused_features(self, X):
        check_is_fitted(self, "extractor_")
        feats = self.extractor_.transform(X)
        aligned = align_features(feats, self.alignment_.transforms)
        width = aligned[0].t * aligned[0].C
        params = MdtaParams.random(len(aligned), width, seed=self.seed)
        return mdta_fuse(aligned, params)

    def predict(self, X):
        check_is_fitted(self, "alignment_")
        fused = self.fused_features(X) if self.features == "equivariant" else None
        return reconstruct(
            X, fused=fused, transforms=self.alignment_.transforms,
            residuals=self.alignment_.residuals, mode=self.features, lam=self.lam,
            seed=self.seed, feature_scale=self.feature_scale,
        )
