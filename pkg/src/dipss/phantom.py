"""Synthetic brain-like phantoms and simulated scanner renderings.

All randomness comes from ``numpy.random.default_rng`` (PCG64), seeded
explicitly, so a given (seed, parameters) pair yields the same volume on
every platform with the same numpy major version.

A phantom is a set of nested ellipsoidal compartments: a dark CSF rim (grows
with cortical thinning), cortical gray matter, white matter, two deep gray
nuclei and a central ventricular cavity (scaled by the disease profile).
``subject_variation`` controls every per-subject perturbation; at 0 the seed
has no influence.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import InvalidProfile
from .volume import CaseRecord, Dataset, Label, Vendor, Volume

DEFAULT_PHANTOM_DIMS = (32, 32, 48)

# label codes of phantom_labels()
BACKGROUND, CSF_RIM, GRAY, WHITE, NUCLEI, CAVITY = range(6)

_BASE_INTENSITY = {CSF_RIM: 30.0, GRAY: 110.0, WHITE: 170.0, NUCLEI: 130.0, CAVITY: 30.0}


@dataclass(frozen=True)
class ScannerProfile:
    name: str
    gamma: float = 1.0
    blur_sigma: float = 0.0
    bias_amplitude: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidProfile(f"{self.name}: gamma must be > 0")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise InvalidProfile(f"{self.name}: blur and noise must be nonnegative")
        if not 0.0 <= self.bias_amplitude <= 1.0:
            raise InvalidProfile(f"{self.name}: bias amplitude must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return (self.gamma, self.blur_sigma, self.bias_amplitude, self.noise_sigma) == (
            1.0, 0.0, 0.0, 0.0)

    @property
    def field_seed(self) -> int:
        """Stable per-profile seed for the scanner's bias-field phases."""
        return zlib.crc32(self.name.encode())


IDENTITY_PROFILE = ScannerProfile("identity")

STOCK_PROFILES = {
    "synthA": ScannerProfile("synthA", gamma=0.85, blur_sigma=0.6, bias_amplitude=0.10, noise_sigma=2.0),
    "synthB": ScannerProfile("synthB"),
    "synthC": ScannerProfile("synthC", gamma=1.2, blur_sigma=0.3, bias_amplitude=0.05, noise_sigma=1.0),
}

# synthB is the reference scanner (Siemens role), synthA the conversion
# source (GE role), synthC the unseen vendor (Philips role).
PROFILE_VENDOR = {"synthA": Vendor.GE, "synthB": Vendor.SI, "synthC": Vendor.PH}


@dataclass(frozen=True)
class DiseaseProfile:
    severity: float = 0.0
    ventricle_scale: float = 1.0
    cortical_thinning: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.severity <= 1.0:
            raise InvalidProfile("severity must lie in [0, 1]")
        if self.ventricle_scale < 1.0:
            raise InvalidProfile("ventricle_scale must be >= 1")
        if not 0.0 <= self.cortical_thinning <= 1.0:
            raise InvalidProfile("cortical_thinning must lie in [0, 1]")
        if self.severity == 0 and (self.ventricle_scale != 1.0 or self.cortical_thinning != 0.0):
            raise InvalidProfile("a healthy profile (severity 0) cannot carry atrophy")

    @classmethod
    def from_severity(cls, severity: float) -> "DiseaseProfile":
        return cls(severity, 1.0 + 0.7 * severity, 0.6 * severity)


HEALTHY = DiseaseProfile()


def _grid(dims):
    axes = [(np.arange(n) + 0.5) / n * 2.0 - 1.0 for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def _ellipsoid_radius(coords, center, semi):
    return np.sqrt(sum(((c - c0) / a) ** 2 for c, c0, a in zip(coords, center, semi)))


def phantom_labels(seed: int, subject_variation: float = 0.0, disease: DiseaseProfile = HEALTHY,
                   dims=DEFAULT_PHANTOM_DIMS):
    """Integer compartment map plus the per-tissue intensities for one subject."""
    if not 0.0 <= subject_variation <= 1.0:
        raise InvalidProfile("subject_variation must lie in [0, 1]")
    if len(dims) != 3 or min(dims) < 4:
        raise InvalidProfile(f"phantom dims must be three integers >= 4, got {dims}")
    rng = np.random.default_rng(seed)
    sv = float(subject_variation)
    # draw everything up front so the stream layout never depends on sv
    u_shape = rng.uniform(-1, 1, size=3)
    u_center = rng.uniform(-1, 1, size=3)
    u_wm = rng.uniform(-1, 1)
    u_vent = rng.uniform(-1, 1, size=3)
    u_nuc = rng.uniform(-1, 1, size=2)
    u_int = rng.uniform(-1, 1, size=len(_BASE_INTENSITY))
    fold_amp = rng.uniform(0, 1, size=3)
    fold_phase = rng.uniform(0, 2 * np.pi, size=3)

    coords = _grid(dims)
    center = 0.03 * sv * u_center
    semi = 0.86 * (1.0 + 0.06 * sv * u_shape)
    r = _ellipsoid_radius(coords, center, semi)
    labels = np.zeros(dims, dtype=np.int8)
    brain = r <= 1.0
    labels[brain] = GRAY

    # gyral undulation of the gray/white boundary
    rel = [(c - c0) / a for c, c0, a in zip(coords, center, semi)]
    az = np.arctan2(rel[1], rel[0])
    el = np.arctan2(rel[2], np.hypot(rel[0], rel[1]))
    folds = (fold_amp[0] * np.cos(4 * az + fold_phase[0])
             + fold_amp[1] * np.cos(3 * el + fold_phase[1])
             + fold_amp[2] * np.cos(2 * az + 3 * el + fold_phase[2])) / 3.0
    wm_radius = 0.70 * (1.0 + 0.05 * sv * u_wm) * (1.0 + 0.10 * sv * folds)
    labels[brain & (r <= wm_radius)] = WHITE

    rim = 0.04 + 0.16 * disease.cortical_thinning
    labels[brain & (r > 1.0 - rim)] = CSF_RIM

    for side in (-1.0, 1.0):
        c = (center[0] + side * 0.30 * semi[0], center[1] + 0.05, center[2] + 0.05 * u_nuc[0] * sv)
        rn = _ellipsoid_radius(coords, c, (0.14 * semi[0], 0.16 * semi[1], 0.18 * semi[2]))
        labels[brain & (rn <= 1.0)] = NUCLEI

    vs = disease.ventricle_scale
    vsemi = tuple(s * vs * b * (1.0 + 0.08 * sv * u)
                  for s, b, u in zip(semi, (0.16, 0.20, 0.30), u_vent))
    for side in (-1.0, 1.0):
        c = (center[0] + side * 0.09 * vs * semi[0], center[1] - 0.05, center[2])
        rv = _ellipsoid_radius(coords, c, vsemi)
        labels[brain & (rv <= 1.0)] = CAVITY

    intensities = {k: v * (1.0 + 0.05 * sv * u) for (k, v), u in zip(_BASE_INTENSITY.items(), u_int)}
    return labels, intensities


def generate_phantom(seed: int, subject_variation: float = 0.0, disease: DiseaseProfile = HEALTHY,
                     dims=DEFAULT_PHANTOM_DIMS, case_id: str | None = None):
    """Render a noise-free phantom and its case record.

    Compartments are painted with their tissue intensity and lightly smoothed
    (sigma 0.5 voxel, partial-volume stand-in) inside the brain support.
    """
    labels, intensities = phantom_labels(seed, subject_variation, disease, dims)
    img = np.zeros(dims, dtype=np.float64)
    for code, value in intensities.items():
        img[labels == code] = value
    mask = labels > BACKGROUND
    img = np.where(mask, ndimage.gaussian_filter(img, 0.5, mode="nearest"), 0.0)
    img = np.clip(img, 0.0, 255.0)
    # smoothing can pull rim voxels toward zero but never to it; keep support exact
    img[mask] = np.maximum(img[mask], 1.0)
    label = Label.SYNTH_DISEASED if disease.severity > 0 else Label.SYNTH_HEALTHY
    cid = case_id or f"phantom-{seed}"
    record = CaseRecord(case_id=cid, subject_id=cid, dataset=Dataset.SYNTH,
                        vendor=Vendor.UNKNOWN, label=label)
    return Volume(img, mask=mask), record


def bias_field(dims, amplitude: float, seed: int) -> np.ndarray:
    """Multiplicative field ``1 + amplitude * mean_k cos(pi u_k + phi_k)``.

    One lowest-order cosine mode per axis (u in [0, 1]), phases drawn from
    ``seed``; the field stays within [1 - amplitude, 1 + amplitude].
    """
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    total = np.zeros(dims)
    for ax, (n, phi) in enumerate(zip(dims, phases)):
        u = (np.arange(n) + 0.5) / n
        shape = [1, 1, 1]
        shape[ax] = n
        total = total + np.cos(np.pi * u + phi).reshape(shape)
    return 1.0 + amplitude * total / 3.0


def gamma_map(x, gamma: float):
    return 255.0 * (np.asarray(x, dtype=np.float64) / 255.0) ** gamma


def apply_scanner(v: Volume, profile: ScannerProfile, seed: int, field_seed: int | None = None) -> Volume:
    """Render ``v`` as if acquired on ``profile``.

    Pipeline: blur -> gamma map -> multiplicative bias field -> additive
    Gaussian noise -> clamp to [0, 255], evaluated inside the brain mask;
    voxels outside the mask keep their input values (zero for skull-stripped
    inputs). ``field_seed`` fixes the bias-field phases independently of the
    per-case noise seed, so a scanner can carry one consistent coil profile.
    """
    if profile.is_identity:
        return v
    mask = v.brain_mask()
    x = np.asarray(v.voxels, dtype=np.float64)
    if profile.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, profile.blur_sigma, mode="nearest")
    if profile.gamma != 1.0:
        x = gamma_map(np.clip(x, 0.0, 255.0), profile.gamma)
    if profile.bias_amplitude > 0:
        x = x * bias_field(v.dims, profile.bias_amplitude, seed if field_seed is None else field_seed)
    if profile.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, profile.noise_sigma, size=x.shape)
    x = np.clip(x, 0.0, 255.0)
    out = np.where(mask, x, v.voxels)
    return Volume(out, mask=v.mask, axis_order=v.axis_order)


def render_case(seed: int, profile: ScannerProfile, subject_variation: float = 0.5,
                severity: float = 0.0, dims=DEFAULT_PHANTOM_DIMS, case_id: str | None = None,
                noise_seed: int | None = None):
    """Phantom + scanner rendering with the record's vendor filled in."""
    disease = DiseaseProfile.from_severity(severity) if severity > 0 else HEALTHY
    vol, rec = generate_phantom(seed, subject_variation, disease, dims, case_id)
    rendered = apply_scanner(vol, profile, seed if noise_seed is None else noise_seed,
                             field_seed=profile.field_seed)
    vendor = PROFILE_VENDOR.get(profile.name, Vendor.UNKNOWN)
    return rendered, CaseRecord(rec.case_id, rec.subject_id, rec.dataset, vendor, rec.label)
