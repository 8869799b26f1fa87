"""DIS kinematic algebra, detector-level features, and classical methods.

Conventions: the z axis points along the proton beam, the electron beam
sits at p_z = -E0, beams are massless, energies in GeV, angles in
radians wrapped to (-pi, pi]. The inclusive event record is the
scattered electron plus one aggregate hadronic-final-state (HFS) vector.

Fifteen detector-level features are derived per event, in the fixed
column order of ``FEATURE_NAMES``; that order is the schema of every
dataset file. Three classical estimators of (x, Q^2, y) are provided:
the electron method (lepton only, best at high y), Jacquet-Blondel (HFS
only, best at low y), and the double-angle method (scale invariant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FEATURE_NAMES = (
    "pt_bal",          # 1 - pT_e / T
    "pz_bal",          # 1 - (Sigma_e + Sigma) / (2 E0)
    "photon_e",        # energy of the photon nearest the electron beam
    "photon_eta",
    "photon_dphi",     # photon azimuth relative to the electron
    "ecal_cone_ratio",  # ECAL energy in a dR<0.4 cone around e, over E_e
    "ecal_nclusters",  # ECAL cluster count in that cone (integer as real)
    "pt_e",
    "pz_e",
    "e_e",
    "hfs_t",           # HFS transverse momentum
    "hfs_pz",
    "hfs_e",
    "dphi_eh",         # azimuth between electron and HFS
    "delta_sigma",     # Sigma_e - Sigma
)
N_FEATURES = len(FEATURE_NAMES)
TARGET_NAMES = ("x", "q2", "y")

IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def wrap_angle(phi):
    """Wrap an angle (array or scalar) into (-pi, pi]."""
    phi = np.asarray(phi, dtype=np.float64)
    out = np.mod(phi + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out <= -np.pi, out + 2.0 * np.pi, out)
    return out if out.ndim else float(out)


def eta_from_theta(theta):
    """Pseudorapidity from polar angle."""
    return -np.log(np.tan(np.asarray(theta, dtype=np.float64) / 2.0))


@dataclass(frozen=True)
class BeamConfig:
    """Electron and proton beam energies; s in the massless approximation."""

    e0: float = 27.6
    ep: float = 920.0

    def __post_init__(self):
        if self.e0 <= 0.0 or self.ep <= 0.0:
            raise DomainError("beam energies must be positive")

    @property
    def s(self) -> float:
        return 4.0 * self.e0 * self.ep


@dataclass(frozen=True)
class KinematicTriplet:
    x: float
    q2: float
    y: float

    def validate(self) -> None:
        if not (0.0 < self.x < 1.0):
            raise DomainError(f"x = {self.x} outside (0, 1)")
        if not (0.0 < self.y < 1.0):
            raise DomainError(f"y = {self.y} outside (0, 1)")
        if self.q2 <= 0.0:
            raise DomainError(f"Q^2 = {self.q2} must be positive")

    def consistency(self, beam: BeamConfig) -> float:
        """Relative deviation of Q^2 from s*x*y."""
        return abs(self.q2 - beam.s * self.x * self.y) / self.q2


@dataclass(frozen=True)
class ElectronState:
    pt: float
    pz: float
    e: float
    phi: float


@dataclass(frozen=True)
class HfsState:
    t: float
    pz: float
    e: float
    phi: float


@dataclass(frozen=True)
class PhotonRecord:
    """Radiative proxies attached to an event."""

    energy: float = 0.0
    eta: float = 0.0
    dphi: float = 0.0
    cone_ratio: float = 1.0
    n_clusters: float = 1.0


@dataclass(frozen=True)
class ReconstructedTriplet:
    """Classical-method output; ``ok=False`` flags a reconstruction failure."""

    x: float
    q2: float
    y: float
    ok: bool

    def as_triplet(self) -> KinematicTriplet:
        if not self.ok:
            raise DomainError("reconstruction failed; no triplet available")
        return KinematicTriplet(self.x, self.q2, self.y)


def q2_from_sxy(x: float, y: float, beam: BeamConfig) -> float:
    """Q^2 from the relation Q^2 = s*x*y."""
    if not (0.0 < x < 1.0):
        raise DomainError(f"x = {x} outside (0, 1)")
    if not (0.0 < y < 1.0):
        raise DomainError(f"y = {y} outside (0, 1)")
    return beam.s * x * y


# ---------------------------------------------------------------------------
# classical reconstruction, vectorized over feature matrices


def _as_matrix(features: np.ndarray) -> tuple[np.ndarray, bool]:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        return f.reshape(1, -1), True
    return f, False


def electron_method_arrays(features: np.ndarray, beam: BeamConfig):
    """Electron method: y = 1 - Sigma_e/(2 E0), Q^2 = pT_e^2/(1-y)."""
    f, _ = _as_matrix(features)
    pt_e = f[:, IDX["pt_e"]]
    sigma_e = f[:, IDX["e_e"]] - f[:, IDX["pz_e"]]
    y = 1.0 - sigma_e / (2.0 * beam.e0)
    ok = (y > 0.0) & (y < 1.0) & (pt_e > 0.0)
    y_safe = np.where(ok, y, 0.5)
    q2 = pt_e * pt_e / (1.0 - y_safe)
    x = q2 / (beam.s * y_safe)
    zero = np.zeros_like(y)
    return (np.where(ok, x, zero), np.where(ok, q2, zero),
            np.where(ok, y, zero), ok)


def jb_method_arrays(features: np.ndarray, beam: BeamConfig):
    """Jacquet-Blondel: y = Sigma/(2 E0), Q^2 = T^2/(1-y), HFS only."""
    f, _ = _as_matrix(features)
    t = f[:, IDX["hfs_t"]]
    sigma_e = f[:, IDX["e_e"]] - f[:, IDX["pz_e"]]
    sigma = sigma_e - f[:, IDX["delta_sigma"]]
    y = sigma / (2.0 * beam.e0)
    ok = (y > 0.0) & (y < 1.0) & (t > 0.0)
    y_safe = np.where(ok, y, 0.5)
    q2 = t * t / (1.0 - y_safe)
    x = q2 / (beam.s * y_safe)
    zero = np.zeros_like(y)
    return (np.where(ok, x, zero), np.where(ok, q2, zero),
            np.where(ok, y, zero), ok)


def da_method_arrays(features: np.ndarray, beam: BeamConfig):
    """Double angle: energy-scale-invariant combination of both angles."""
    f, _ = _as_matrix(features)
    pt_e = f[:, IDX["pt_e"]]
    t = f[:, IDX["hfs_t"]]
    sigma_e = f[:, IDX["e_e"]] - f[:, IDX["pz_e"]]
    sigma = sigma_e - f[:, IDX["delta_sigma"]]
    ok = (pt_e > 0.0) & (t > 0.0) & (sigma_e > 0.0) & (sigma > 0.0)
    pt_safe = np.where(ok, pt_e, 1.0)
    t_safe = np.where(ok, t, 1.0)
    tan_theta = np.where(ok, sigma_e, 1.0) / pt_safe   # tan(theta/2), electron
    tan_gamma = np.where(ok, sigma, 1.0) / t_safe      # tan(gamma/2), HFS
    y = tan_gamma / (tan_gamma + tan_theta)
    q2 = 4.0 * beam.e0 ** 2 / (tan_theta * (tan_theta + tan_gamma))
    x = q2 / (beam.s * np.where(y > 0.0, y, 1.0))
    ok = ok & (y > 0.0) & (y < 1.0)
    zero = np.zeros_like(y)
    return (np.where(ok, x, zero), np.where(ok, q2, zero),
            np.where(ok, y, zero), ok)


def _scalar_result(arrays) -> ReconstructedTriplet:
    x, q2, y, ok = arrays
    return ReconstructedTriplet(float(x[0]), float(q2[0]), float(y[0]), bool(ok[0]))


def electron_method(features: np.ndarray, beam: BeamConfig) -> ReconstructedTriplet:
    return _scalar_result(electron_method_arrays(features, beam))


def jb_method(features: np.ndarray, beam: BeamConfig) -> ReconstructedTriplet:
    return _scalar_result(jb_method_arrays(features, beam))


def da_method(features: np.ndarray, beam: BeamConfig) -> ReconstructedTriplet:
    return _scalar_result(da_method_arrays(features, beam))


# ---------------------------------------------------------------------------
# feature construction


def compute_features_arrays(e_pt, e_pz, e_e, e_phi, h_t, h_pz, h_e, h_phi,
                            photon_e, photon_eta, photon_dphi,
                            cone_ratio, n_clusters, beam: BeamConfig) -> np.ndarray:
    """Fill the 15-column feature matrix from state arrays."""
    h_t = np.asarray(h_t, dtype=np.float64)
    if np.any(h_t <= 0.0):
        raise DomainError("HFS transverse momentum must be positive (pt_bal undefined)")
    sigma_e = e_e - e_pz
    sigma = h_e - h_pz
    n = h_t.shape[0]
    f = np.empty((n, N_FEATURES))
    f[:, IDX["pt_bal"]] = 1.0 - e_pt / h_t
    f[:, IDX["pz_bal"]] = 1.0 - (sigma_e + sigma) / (2.0 * beam.e0)
    f[:, IDX["photon_e"]] = photon_e
    f[:, IDX["photon_eta"]] = photon_eta
    f[:, IDX["photon_dphi"]] = photon_dphi
    f[:, IDX["ecal_cone_ratio"]] = cone_ratio
    f[:, IDX["ecal_nclusters"]] = n_clusters
    f[:, IDX["pt_e"]] = e_pt
    f[:, IDX["pz_e"]] = e_pz
    f[:, IDX["e_e"]] = e_e
    f[:, IDX["hfs_t"]] = h_t
    f[:, IDX["hfs_pz"]] = h_pz
    f[:, IDX["hfs_e"]] = h_e
    f[:, IDX["dphi_eh"]] = wrap_angle(np.asarray(e_phi) - np.asarray(h_phi))
    f[:, IDX["delta_sigma"]] = sigma_e - sigma
    return f


def compute_features(electron: ElectronState, hfs: HfsState,
                     photon: PhotonRecord | None, beam: BeamConfig) -> np.ndarray:
    """Single-event feature vector; photon features are zero when absent."""
    p = photon if photon is not None else PhotonRecord()
    arr = compute_features_arrays(
        np.array([electron.pt]), np.array([electron.pz]), np.array([electron.e]),
        np.array([electron.phi]),
        np.array([hfs.t]), np.array([hfs.pz]), np.array([hfs.e]), np.array([hfs.phi]),
        np.array([p.energy]), np.array([p.eta]), np.array([p.dphi]),
        np.array([p.cone_ratio]), np.array([p.n_clusters]), beam)
    return arr[0]
