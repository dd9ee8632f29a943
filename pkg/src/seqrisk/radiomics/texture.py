"""Gray-level texture matrices (GLCM, GLSZM, GLRLM, NGTDM, GLDM) and their features.

All matrices are indexed by gray level ``1..n_bins`` (row ``i-1``).  Entropies
use log base 2 with an ``EPS`` guard inside the logarithm.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import DegenerateInputError
from .firstorder import EPS, QuantizedImage

# (dy, dx) for 0, 45, 90 and 135 degrees
DIRECTIONS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))

GLCM_NAMES = (
    "Autocorrelation", "Joint Average", "Cluster Prominence", "Cluster Shade",
    "Cluster Tendency", "Contrast", "Correlation", "Difference Average",
    "Difference Entropy", "Difference Variance", "Joint Energy", "Joint Entropy",
    "Informational Measure of Correlation 1", "Informational Measure of Correlation 2",
    "Inverse Difference Moment", "Maximal Correlation Coefficient",
    "Inverse Difference Moment Normalized", "Inverse Difference",
    "Inverse Difference Normalized", "Inverse Variance", "Maximum Probability",
    "Sum Entropy", "Sum Squares",
)
GLSZM_NAMES = (
    "Small Area Emphasis", "Large Area Emphasis", "Gray Level Non-Uniformity",
    "Gray Level Non-Uniformity Normalized", "Size Zone Non-Uniformity",
    "Size Zone Non-Uniformity Normalized", "Zone Percentage", "Gray Level Variance",
    "Zone Variance", "Zone Entropy", "Low Gray Level Zone Emphasis",
    "High Gray Level Zone Emphasis", "Small Area Low Gray Level Emphasis",
    "Small Area High Gray Level Emphasis", "Large Area Low Gray Level Emphasis",
    "Large Area High Gray Level Emphasis",
)
GLRLM_NAMES = (
    "Short Run Emphasis", "Long Run Emphasis", "Gray Level Non-Uniformity",
    "Gray Level Non-Uniformity Normalized", "Run Length Non-Uniformity",
    "Run Length Non-Uniformity Normalized", "Run Percentage", "Gray Level Variance",
    "Run Variance", "Run Entropy", "Low Gray Level Run Emphasis",
    "High Gray Level Run Emphasis", "Short Run Low Gray Level Emphasis",
    "Short Run High Gray Level Emphasis", "Long Run Low Gray Level Emphasis",
    "Long Run High Gray Level Emphasis",
)
NGTDM_NAMES = ("Coarseness", "Contrast", "Busyness", "Complexity", "Strength")
GLDM_NAMES = (
    "Small Dependence Emphasis", "Large Dependence Emphasis", "Gray Level Non-Uniformity",
    "Dependence Non-Uniformity", "Dependence Non-Uniformity Normalized",
    "Gray Level Variance", "Dependence Variance", "Dependence Entropy",
    "Low Gray Level Emphasis", "High Gray Level Emphasis",
    "Small Dependence Low Gray Level Emphasis", "Small Dependence High Gray Level Emphasis",
    "Large Dependence Low Gray Level Emphasis", "Large Dependence High Gray Level Emphasis",
)

COARSENESS_CAP = 1e6


def _shifted_pairs(q: QuantizedImage, dy: int, dx: int):
    """Levels of (p, p + d) for every pixel pair with both ends in the mask."""
    lv, m = q.levels, q.mask
    h, w = lv.shape
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    yd = slice(max(0, dy), h - max(0, -dy))
    xd = slice(max(0, dx), w - max(0, -dx))
    both = m[ys, xs] & m[yd, xd]
    return lv[ys, xs][both], lv[yd, xd][both]


def _entropy(p: np.ndarray) -> float:
    return float(-np.sum(p * np.log2(p + EPS)))


# -- GLCM -------------------------------------------------------------------------
def glcm_matrices(q: QuantizedImage) -> list[np.ndarray]:
    """Symmetric normalized co-occurrence matrices, one per direction with pairs."""
    ng = q.n_bins
    mats = []
    for dy, dx in DIRECTIONS:
        a, b = _shifted_pairs(q, dy, dx)
        if a.size == 0:
            continue
        P = np.zeros((ng, ng))
        np.add.at(P, (a - 1, b - 1), 1.0)
        P = P + P.T
        mats.append(P / P.sum())
    if not mats:
        raise DegenerateInputError("GLCM needs at least one pair of neighbouring masked pixels")
    return mats


def _glcm_single(P: np.ndarray) -> np.ndarray:
    ng = P.shape[0]
    lv = np.arange(1, ng + 1, dtype=np.float64)
    i, j = lv[:, None], lv[None, :]
    px, py = P.sum(axis=1), P.sum(axis=0)
    ux, uy = float(px @ lv), float(py @ lv)
    varx, vary = float(px @ (lv - ux) ** 2), float(py @ (lv - uy) ** 2)
    k_diff = np.abs(i - j).astype(np.int64)
    k_sum = (i + j).astype(np.int64)
    p_diff = np.bincount(k_diff.ravel(), weights=P.ravel(), minlength=ng)
    p_sum = np.bincount(k_sum.ravel(), weights=P.ravel(), minlength=2 * ng + 1)[2:]
    kd = np.arange(ng, dtype=np.float64)

    hx, hy, hxy = _entropy(px), _entropy(py), _entropy(P)
    pxpy = px[:, None] * py[None, :]
    hxy1 = float(-np.sum(P * np.log2(pxpy + EPS)))
    hxy2 = float(-np.sum(pxpy * np.log2(pxpy + EPS)))

    autocorr = float(np.sum(P * i * j))
    centred = i + j - ux - uy
    diff_avg = float(p_diff @ kd)
    hmax = max(hx, hy)
    with np.errstate(divide="ignore"):
        inv_k2 = np.where(kd > 0, 1.0 / np.maximum(kd, 1.0) ** 2, 0.0)

    return np.array([
        autocorr,
        ux,
        np.sum(centred ** 4 * P),
        np.sum(centred ** 3 * P),
        np.sum(centred ** 2 * P),
        np.sum((i - j) ** 2 * P),
        (autocorr - ux * uy) / np.sqrt(varx * vary) if varx > 0 and vary > 0 else 1.0,
        diff_avg,
        _entropy(p_diff),
        float(p_diff @ (kd - diff_avg) ** 2),
        np.sum(P ** 2),
        hxy,
        (hxy - hxy1) / hmax if hmax > 0 else 0.0,
        np.sqrt(1.0 - np.exp(-2.0 * max(hxy2 - hxy, 0.0))),
        np.sum(P / (1.0 + (i - j) ** 2)),
        _mcc(P, px, py),
        np.sum(P / (1.0 + (i - j) ** 2 / ng ** 2)),
        np.sum(P / (1.0 + np.abs(i - j))),
        np.sum(P / (1.0 + np.abs(i - j) / ng)),
        float(p_diff @ inv_k2),
        P.max(),
        _entropy(p_sum),
        float(px @ (lv - ux) ** 2),
    ], dtype=np.float64)


def _mcc(P, px, py) -> float:
    """sqrt of the second-largest eigenvalue of Q(i,j) = sum_k P(i,k)P(j,k)/(px(i)py(k))."""
    rows = px > 0
    cols = py > 0
    if rows.sum() < 2:
        return 1.0
    Pr = P[np.ix_(rows, cols)]
    # symmetric similarity transform of Q: Dx^-1/2 P Dy^-1 P^T Dx^-1/2
    A = Pr / np.sqrt(px[rows])[:, None] / np.sqrt(py[cols])[None, :]
    ev = np.sort(np.linalg.eigvalsh(A @ A.T))[::-1]
    return float(np.sqrt(max(ev[1], 0.0)))


def glcm_features(q: QuantizedImage) -> np.ndarray:
    return np.mean([_glcm_single(P) for P in glcm_matrices(q)], axis=0)


# -- shared emphasis features for (gray level x size) matrices ----------------------
def _size_matrix_features(P: np.ndarray, n_pixels: int) -> dict[str, float]:
    """Features shared by GLSZM/GLRLM/GLDM; ``P[i-1, j-1]`` counts gray level i, size j."""
    ng, ns = P.shape
    total = P.sum()
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, ns + 1, dtype=np.float64)[None, :]
    p = P / total
    gl_marg = P.sum(axis=1)
    sz_marg = P.sum(axis=0)
    mu_i = float(np.sum(p * i))
    mu_j = float(np.sum(p * j))
    return {
        "se": float(np.sum(p / j ** 2)),
        "le": float(np.sum(p * j ** 2)),
        "gln": float(np.sum(gl_marg ** 2) / total),
        "glnn": float(np.sum(gl_marg ** 2) / total ** 2),
        "szn": float(np.sum(sz_marg ** 2) / total),
        "sznn": float(np.sum(sz_marg ** 2) / total ** 2),
        "pct": float(total / n_pixels),
        "glv": float(np.sum(p * (i - mu_i) ** 2)),
        "szv": float(np.sum(p * (j - mu_j) ** 2)),
        "ent": _entropy(p),
        "lgl": float(np.sum(p / i ** 2)),
        "hgl": float(np.sum(p * i ** 2)),
        "slgl": float(np.sum(p / (i ** 2 * j ** 2))),
        "shgl": float(np.sum(p * i ** 2 / j ** 2)),
        "llgl": float(np.sum(p * j ** 2 / i ** 2)),
        "lhgl": float(np.sum(p * i ** 2 * j ** 2)),
    }


# -- GLSZM ----------------------------------------------------------------------
_EIGHT = np.ones((3, 3), dtype=bool)


def glszm_matrix(q: QuantizedImage) -> np.ndarray:
    """Zones are 8-connected same-level regions inside the mask."""
    ng = q.n_bins
    n_pix = int(q.mask.sum())
    P = np.zeros((ng, n_pix))
    for level in np.unique(q.levels[q.mask]):
        labels, n = ndimage.label((q.levels == level) & q.mask, structure=_EIGHT)
        sizes = np.bincount(labels.ravel())[1:]
        np.add.at(P[level - 1], sizes - 1, 1.0)
    return P


def glszm_features(q: QuantizedImage) -> np.ndarray:
    f = _size_matrix_features(glszm_matrix(q), int(q.mask.sum()))
    return np.array([f["se"], f["le"], f["gln"], f["glnn"], f["szn"], f["sznn"], f["pct"],
                     f["glv"], f["szv"], f["ent"], f["lgl"], f["hgl"], f["slgl"], f["shgl"],
                     f["llgl"], f["lhgl"]])


# -- GLRLM ----------------------------------------------------------------------
def _lines(arr: np.ndarray, dy: int, dx: int) -> list[np.ndarray]:
    h, w = arr.shape
    if (dy, dx) == (0, 1):
        return list(arr)
    if (dy, dx) == (-1, 0):
        return list(arr.T)
    if (dy, dx) == (-1, 1):
        # anti-diagonals: walking up-right
        flipped = arr[::-1]
        return [np.diagonal(flipped, k) for k in range(-h + 1, w)]
    return [np.diagonal(arr, k) for k in range(-h + 1, w)]


def glrlm_matrix(q: QuantizedImage, dy: int, dx: int) -> np.ndarray:
    """Run-length matrix along one direction; runs stop at the mask boundary."""
    ng = q.n_bins
    n_max = max(q.levels.shape)
    lv = np.where(q.mask, q.levels, 0)
    seq = np.concatenate([np.append(line, 0) for line in _lines(lv, dy, dx)])
    change = np.flatnonzero(np.diff(np.concatenate(([0], seq))) != 0)
    starts = change
    ends = np.append(change[1:], seq.size)
    vals = seq[starts]
    keep = vals > 0
    P = np.zeros((ng, n_max))
    np.add.at(P, (vals[keep] - 1, (ends - starts)[keep] - 1), 1.0)
    return P


def glrlm_features(q: QuantizedImage) -> np.ndarray:
    n_pix = int(q.mask.sum())
    rows = []
    for dy, dx in DIRECTIONS:
        P = glrlm_matrix(q, dy, dx)
        f = _size_matrix_features(P, n_pix)
        rows.append([f["se"], f["le"], f["gln"], f["glnn"], f["szn"], f["sznn"], f["pct"],
                     f["glv"], f["szv"], f["ent"], f["lgl"], f["hgl"], f["slgl"], f["shgl"],
                     f["llgl"], f["lhgl"]])
    return np.mean(np.array(rows), axis=0)


# -- neighbourhood helpers --------------------------------------------------------
_NEIGHBOURS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def _neighbour_stack(q: QuantizedImage):
    """Per pixel: the 8 neighbour levels and whether each lies inside the mask."""
    lv = np.pad(np.where(q.mask, q.levels, 0), 1)
    m = np.pad(q.mask, 1)
    h, w = q.levels.shape
    levels = np.stack([lv[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _NEIGHBOURS])
    valid = np.stack([m[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _NEIGHBOURS])
    return levels, valid


# -- NGTDM ----------------------------------------------------------------------
def ngtdm_matrix(q: QuantizedImage):
    """Return ``(s, n, n_valid)``: per-level summed |i - neighbourhood mean|, counts."""
    ng = q.n_bins
    levels, valid = _neighbour_stack(q)
    count = valid.sum(axis=0)
    use = q.mask & (count > 0)
    if not use.any():
        raise DegenerateInputError("NGTDM: no masked pixel has a masked neighbour")
    avg = (levels * valid).sum(axis=0)[use] / count[use]
    centre = q.levels[use]
    s = np.bincount(centre - 1, weights=np.abs(centre - avg), minlength=ng)[:ng]
    n = np.bincount(centre - 1, minlength=ng)[:ng].astype(np.float64)
    return s, n, int(use.sum())


def ngtdm_features(q: QuantizedImage) -> np.ndarray:
    s, n, nvp = ngtdm_matrix(q)
    p = n / nvp
    present = p > 0
    lv = np.arange(1, q.n_bins + 1, dtype=np.float64)[present]
    pp, sp = p[present], s[present]
    ngp = int(present.sum())
    ps = float(np.sum(pp * sp))
    s_total = float(np.sum(sp))
    i, j = lv[:, None], lv[None, :]
    pi, pj = pp[:, None], pp[None, :]
    si, sj = sp[:, None], sp[None, :]

    coarseness = 1.0 / ps if ps > 0 else COARSENESS_CAP
    coarseness = min(coarseness, COARSENESS_CAP)
    if ngp > 1:
        contrast = float(np.sum(pi * pj * (i - j) ** 2)) / (ngp * (ngp - 1)) * s_total / nvp
    else:
        contrast = 0.0
    busy_den = float(np.sum(np.abs(i * pi - j * pj)))
    busyness = ps / busy_den if busy_den > 0 else 0.0
    complexity = float(np.sum(np.abs(i - j) * (pi * si + pj * sj) / (pi + pj))) / nvp
    strength = float(np.sum((pi + pj) * (i - j) ** 2)) / s_total if s_total > 0 else 0.0
    return np.array([coarseness, contrast, busyness, complexity, strength])


# -- GLDM -----------------------------------------------------------------------
def gldm_matrix(q: QuantizedImage, alpha: int = 0) -> np.ndarray:
    """``P[i-1, j-1]``: pixels of level i with j-1 dependent masked neighbours."""
    levels, valid = _neighbour_stack(q)
    dep = (valid & (np.abs(levels - q.levels[None]) <= alpha)).sum(axis=0)
    centre = q.levels[q.mask]
    P = np.zeros((q.n_bins, len(_NEIGHBOURS) + 1))
    np.add.at(P, (centre - 1, dep[q.mask]), 1.0)
    return P


def gldm_features(q: QuantizedImage) -> np.ndarray:
    f = _size_matrix_features(gldm_matrix(q), int(q.mask.sum()))
    return np.array([f["se"], f["le"], f["gln"], f["szn"], f["sznn"], f["glv"], f["szv"],
                     f["ent"], f["lgl"], f["hgl"], f["slgl"], f["shgl"], f["llgl"], f["lhgl"]])
