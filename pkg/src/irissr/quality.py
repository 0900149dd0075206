"""Full-reference image quality: PSNR, SSIM and FSIM, full-frame or iris region.

All metrics take [0,1] images (peak = 1). PSNR of identical images is the
math.inf sentinel; table writers cap it at 99.0 dB for printing.

FSIM needs phase congruency maps; those are computed with a log-Gabor filter
bank (4 scales x 4 orientations) following the standard construction used by
the index's reference implementation, with the gradient step on a Scharr 3x3
operator and constants rescaled for unit peak.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate


class QualityError(ValueError):
    pass


PSNR_TABLE_CAP = 99.0

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03

FSIM_T1 = 0.85
FSIM_T2 = 160.0 / 255.0**2  # reference value 160 rescaled from 8-bit to unit peak

SCHARR_X = np.array([[3.0, 0.0, -3.0],
                     [10.0, 0.0, -10.0],
                     [3.0, 0.0, -3.0]]) / 16.0
SCHARR_Y = SCHARR_X.T


def _check_pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise QualityError(f"image dims differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """10*log10(peak^2 / MSE) with peak = 1; inf when the images are identical."""
    ref, test = _check_pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_for_table(value: float) -> float:
    return min(value, PSNR_TABLE_CAP)


def ssim(ref: np.ndarray, test: np.ndarray,
         window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean SSIM over all dense uniform windows (population moments)."""
    ref, test = _check_pair(ref, test)
    h, w = ref.shape
    if h < window or w < window:
        raise QualityError(f"image {w}x{h} smaller than SSIM window {window}")
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    w1 = sliding_window_view(ref, (window, window))
    w2 = sliding_window_view(test, (window, window))
    mu1 = w1.mean(axis=(-2, -1))
    mu2 = w2.mean(axis=(-2, -1))
    var1 = (w1 * w1).mean(axis=(-2, -1)) - mu1 * mu1
    var2 = (w2 * w2).mean(axis=(-2, -1)) - mu2 * mu2
    cov = (w1 * w2).mean(axis=(-2, -1)) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)
    den = (mu1**2 + mu2**2 + c1) * (var1 + var2 + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# phase congruency (log-Gabor bank) and FSIM
# ---------------------------------------------------------------------------

def phase_congruency(img: np.ndarray, nscale: int = 4, norient: int = 4,
                     min_wavelength: float = 6.0, mult: float = 2.0,
                     sigma_onf: float = 0.55, dtheta_on_sigma: float = 1.2,
                     k_noise: float = 2.0, cutoff: float = 0.5, g: float = 10.0,
                     epsilon: float = 1e-4) -> np.ndarray:
    """Phase congruency map summed over orientations.

    Log-Gabor bank over `nscale` scales and `norient` orientations with
    median-based noise compensation and a sigmoidal frequency-spread weight.
    """
    img = np.asarray(img, dtype=np.float64)
    rows, cols = img.shape
    im_fft = np.fft.fft2(img)

    fx = np.fft.fftfreq(cols)
    fy = np.fft.fftfreq(rows)
    u, v = np.meshgrid(fx, fy)
    radius = np.hypot(u, v)
    radius[0, 0] = 1.0  # avoid log(0) at DC; the filters zero it anyway
    theta = np.arctan2(-v, u)
    sintheta = np.sin(theta)
    costheta = np.cos(theta)

    # sharp low-pass keeps the bank away from the FFT corners
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)

    log_gabors = []
    for s in range(nscale):
        f0 = 1.0 / (min_wavelength * mult**s)
        lg = np.exp(-(np.log(radius / f0) ** 2) / (2.0 * math.log(sigma_onf) ** 2))
        lg *= lowpass
        lg[0, 0] = 0.0
        log_gabors.append(lg)

    theta_sigma = math.pi / norient / dtheta_on_sigma
    pc_sum = np.zeros((rows, cols))

    for o in range(norient):
        angl = o * math.pi / norient
        ds = sintheta * math.cos(angl) - costheta * math.sin(angl)
        dc = costheta * math.cos(angl) + sintheta * math.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2.0 * theta_sigma**2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        max_an = np.zeros((rows, cols))
        eo_per_scale = []
        tau = 0.0
        for s in range(nscale):
            filt = log_gabors[s] * spread
            eo = np.fft.ifft2(im_fft * filt)
            an = np.abs(eo)
            eo_per_scale.append(eo)
            sum_an += an
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                tau = float(np.median(sum_an)) / math.sqrt(math.log(4.0))
                max_an = an.copy()
            else:
                max_an = np.maximum(max_an, an)

        x_energy = np.hypot(sum_e, sum_o) + epsilon
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in eo_per_scale:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        total_tau = tau * (1.0 - (1.0 / mult) ** nscale) / (1.0 - 1.0 / mult)
        noise_mean = total_tau * math.sqrt(math.pi / 2.0)
        noise_sigma = total_tau * math.sqrt((4.0 - math.pi) / 2.0)
        energy = np.maximum(energy - (noise_mean + k_noise * noise_sigma), 0.0)

        width = (sum_an / (max_an + epsilon) - 1.0) / (nscale - 1)
        weight = 1.0 / (1.0 + np.exp(g * (cutoff - width)))
        pc_sum += weight * energy / (sum_an + epsilon)

    return pc_sum


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    """Scharr 3x3 gradient magnitude with replicated borders."""
    img = np.asarray(img, dtype=np.float64)
    gx = correlate(img, SCHARR_X, mode="nearest")
    gy = correlate(img, SCHARR_Y, mode="nearest")
    return np.hypot(gx, gy)


def fsim(ref: np.ndarray, test: np.ndarray,
         t1: float = FSIM_T1, t2: float = FSIM_T2) -> float:
    """Feature similarity: phase-congruency/gradient similarity weighted by PC."""
    ref, test = _check_pair(ref, test)
    pc1 = phase_congruency(ref)
    pc2 = phase_congruency(test)
    pcm = np.maximum(pc1, pc2)
    total = float(pcm.sum())
    if total < 1e-12:
        # featureless pair (e.g. two constants): equal content counts as perfect
        return 1.0 if float(np.max(np.abs(ref - test))) <= 1e-9 else 0.0
    g1 = gradient_magnitude(ref)
    g2 = gradient_magnitude(test)
    s_pc = (2.0 * pc1 * pc2 + t1) / (pc1**2 + pc2**2 + t1)
    s_g = (2.0 * g1 * g2 + t2) / (g1**2 + g2**2 + t2)
    return float((s_pc * s_g * pcm).sum() / total)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float
    fsim: float
    region: str  # 'full' or 'iris'


def region_report(ref: np.ndarray, test: np.ndarray, ann,
                  radial_res: int | None = None, angular_res: int | None = None):
    """Metrics on the raw pair plus on the rubber-sheet unwrapped iris region."""
    from . import iriscode

    radial_res = iriscode.RADIAL_RES if radial_res is None else radial_res
    angular_res = iriscode.ANGULAR_RES if angular_res is None else angular_res
    full = QualityReport(psnr(ref, test), ssim(ref, test), fsim(ref, test), "full")
    nref = iriscode.unwrap(ref, ann, radial_res, angular_res)
    ntest = iriscode.unwrap(test, ann, radial_res, angular_res)
    iris = QualityReport(
        psnr(nref.values, ntest.values),
        ssim(nref.values, ntest.values),
        fsim(nref.values, ntest.values),
        "iris",
    )
    return full, iris
