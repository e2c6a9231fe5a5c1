"""MNIST ingestion and single-layer binary NN inference on one subarray.

Layout of one step: the P output neurons of an image occupy P consecutive
rows (row g*P + j holds the weights of neuron j for the image in row group
g), so floor(n_row / P) images share a step and their P outputs land in the
same output column.
"""
from __future__ import annotations

import gzip
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .compute import dot_current, step_ladder, threshold_window
from .device import PcmCellParams, reaches
from .interconnect import DEFAULT_R_DRIVER, LineConfiguration, SubarrayGeometry, min_cell_pitch
from .margin import VoltageWindow
from .thevenin import ladder_row_profile

SIDE = 11
N_PIXELS = SIDE * SIDE
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _open(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    got = int.from_bytes(raw[:4], "big")
    if got != magic:
        raise IdxFormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = raw[3]
    dims = np.frombuffer(raw[4:4 + 4 * ndim], dtype=">u4").astype(int)
    if len(dims) != ndim:
        raise IdxFormatError(f"{path}: truncated header")
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise IdxFormatError(f"{path}: expected {int(np.prod(dims))} bytes of data, "
                             f"found {body.size}")
    return body.reshape(dims)


def write_idx(path, arr: np.ndarray):
    """Write a uint8 array as IDX (gzip if the name ends in .gz)."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    head = bytes([0, 0, 0x08, arr.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in arr.shape)
    data = head + arr.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(data)


def _find(d: Path, kind: str, prefix: Optional[str]) -> Path:
    pats = [f"*{kind}*idx{3 if kind == 'images' else 1}*"]
    hits = sorted(p for pat in pats for p in d.glob(pat)
                  if prefix is None or p.name.startswith(prefix))
    if not hits:
        raise FileNotFoundError(f"no {kind} IDX file in {d}")
    return hits[0]


def load_mnist(path, labels_path=None, prefix: Optional[str] = None):
    """Read MNIST images (n x 28 x 28 uint8) and labels (n,) from IDX files.

    ``path`` is either an images file (then labels_path is required) or a
    directory holding one images and one labels file, optionally told apart
    by a file-name prefix such as "t10k".
    """
    path = Path(path)
    if path.is_dir():
        img_p, lab_p = _find(path, "images", prefix), _find(path, "labels", prefix)
    else:
        if labels_path is None:
            raise ValueError("labels_path is required with an images file")
        img_p, lab_p = path, Path(labels_path)
    images = read_idx(img_p, IMAGE_MAGIC)
    labels = read_idx(lab_p, LABEL_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise IdxFormatError("unexpected IDX dimensions")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise IdxFormatError("label outside 0..9")
    return images, labels


def bundled_mnist_dir() -> Path:
    return Path(str(resources.files("xbar").joinpath("data/mnist")))


def data_dir() -> Path:
    """MNIST location: $XBAR_DATA_DIR if set, else the bundled 1000-image sample."""
    env = os.environ.get("XBAR_DATA_DIR")
    return Path(env) if env else bundled_mnist_dir()


# ------------------------------------------------------------ preprocessing


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the fraction of each input pixel covered by output pixel i."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    A = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for p in range(int(np.floor(lo)), int(np.ceil(hi))):
            A[i, p] = min(hi, p + 1) - max(lo, p)
    return A / A.sum(axis=1, keepdims=True)


_POOL = _pool_matrix(28, SIDE)


@dataclass(frozen=True)
class BinaryImage:
    pixels: np.ndarray
    label: int = -1

    def __post_init__(self):
        if self.pixels.shape != (SIDE, SIDE):
            raise ValueError("binary image must be 11x11")
        if not -1 <= self.label <= 9:
            raise ValueError("label out of range")

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1).astype(np.int8)


def pool(images: np.ndarray) -> np.ndarray:
    """Area-average 28x28 images down to 11x11 (float, same intensity scale)."""
    x = np.asarray(images, dtype=float)
    return np.einsum("ip,...pq,jq->...ij", _POOL, x, _POOL)


def downscale_binarize(image, threshold: float = 128, label: int = -1) -> BinaryImage:
    """Pool to 11x11 and keep pixels whose average intensity is >= threshold."""
    img = np.asarray(image)
    if img.shape != (28, 28):
        raise ValueError("expected a 28x28 image")
    return BinaryImage(pool(img) >= threshold, int(label))


def binarize_batch(images, threshold: float = 128) -> np.ndarray:
    """(n, 28, 28) -> (n, 121) 0/1 matrix."""
    return (pool(images) >= threshold).reshape(len(images), -1).astype(np.int8)


# ------------------------------------------------------------ model


@dataclass
class BinaryNnModel:
    weights: List[np.ndarray]     # layer l: (fan_out x fan_in) 0/1
    thresholds: List[int]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.int8) for w in self.weights]
        if len(self.weights) != len(self.thresholds) or not self.weights:
            raise ValueError("one threshold per layer")
        for a, b in zip(self.weights, self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for w, t in zip(self.weights, self.thresholds):
            if not np.isin(w, (0, 1)).all():
                raise ValueError("weights must be 0/1")
            if not 1 <= t <= w.shape[1]:
                raise ValueError("threshold must lie in 1..fan-in")

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    @classmethod
    def load(cls, directory) -> "BinaryNnModel":
        d = Path(directory)
        th = [int(x) for x in (d / "thresholds.csv").read_text().split() if x.strip()]
        ws = [np.loadtxt(d / f"layer{i + 1}.csv", delimiter=",", dtype=np.int8, ndmin=2)
              for i in range(len(th))]
        return cls(ws, th)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, w in enumerate(self.weights):
            np.savetxt(d / f"layer{i + 1}.csv", w, fmt="%d", delimiter=",")
        (d / "thresholds.csv").write_text("\n".join(str(t) for t in self.thresholds) + "\n")


def bundled_model() -> BinaryNnModel:
    return BinaryNnModel.load(Path(str(resources.files("xbar").joinpath("data/model"))))


def decide(bits: np.ndarray, currents: np.ndarray) -> np.ndarray:
    """Per image: the single set output, else the highest current among the
    set outputs, else the highest current overall (first index on ties)."""
    bits = np.asarray(bits, dtype=bool)
    cur = np.asarray(currents, dtype=float)
    any_set = bits.any(axis=1, keepdims=True)
    masked = np.where(bits | ~any_set, cur, -np.inf)
    return np.argmax(masked, axis=1)


def reference_forward(model: BinaryNnModel, X, v_dd: float = 1.0,
                      params: PcmCellParams = PcmCellParams()):
    """Software reference for a single-layer model: bits, currents, predictions."""
    if len(model.weights) != 1:
        raise ValueError("reference_forward handles single-layer models")
    W = model.weights[0].astype(np.int64)
    X = np.asarray(X, dtype=np.int64)
    a = X @ W.T
    m = X.sum(axis=1, keepdims=True) - a
    bits = (a >= model.thresholds[0]).astype(np.int8)
    cur = dot_current(a, m, v_dd, params)
    return bits, cur, decide(bits, cur)


def evaluate_accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    if p.size == 0:
        return float("nan")
    return float(np.mean(p == y))


# ------------------------------------------------------------ in-array run


@dataclass
class RunReport:
    predictions: np.ndarray
    bits: np.ndarray
    currents: np.ndarray          # delivered output currents (n_images x P)
    dot_currents: np.ndarray      # parasitic-free currents used for tie-breaks
    images_per_step: int
    steps: int
    energy: float
    v_dd: float
    window: VoltageWindow
    disturbs: int = 0

    @property
    def energy_per_image(self) -> float:
        return self.energy / max(len(self.predictions), 1)

    def summary(self) -> dict:
        return {
            "images": int(len(self.predictions)),
            "images_per_step": self.images_per_step,
            "steps": self.steps,
            "v_dd": self.v_dd,
            "window": self.window.to_dict(),
            "energy_total": self.energy,
            "energy_per_image": self.energy_per_image,
            "disturbs": self.disturbs,
        }


# Subarray sizes of the standard size study. Cells are BASELINE_L_MULT x l_min long, and
# the largest array stretches them by LARGE_L_FACTOR to keep a positive margin.
TABLE2_SIZES = [(64, 128), (128, 128), (256, 256), (512, 512), (1024, 1024)]
BASELINE_L_MULT = 6.0
LARGE_L_FACTOR = 2.6


def table2_geometries(config: LineConfiguration, r_driver: Optional[float] = None):
    w_min, l_min = min_cell_pitch(config)
    rd = DEFAULT_R_DRIVER if r_driver is None else r_driver
    out = []
    for r, c in TABLE2_SIZES:
        mult = BASELINE_L_MULT * (LARGE_L_FACTOR if r >= 1024 else 1.0)
        out.append(SubarrayGeometry(r, c, w_min, mult * l_min, rd))
    return out


def steps_needed(n_images: int, n_row: int, p: int = 10) -> Tuple[int, int]:
    """(images per step, number of steps)."""
    per = n_row // p
    if per < 1:
        raise ValueError("subarray has fewer rows than outputs per image")
    return per, -(-n_images // per)


def nn_window(model: BinaryNnModel, X, geom: SubarrayGeometry, config: LineConfiguration,
              params: PcmCellParams = PcmCellParams()) -> VoltageWindow:
    """Supply window in which every row realizes the layer threshold.

    Bounds are taken over the given inputs: the largest number of lit pixels
    and the largest row overlap set the loading and the RESET limit.
    """
    W = model.weights[0]
    X = np.asarray(X)
    lit = int(X.sum(axis=1).max()) if len(X) else W.shape[1]
    lit = max(lit, model.thresholds[0])
    a_max = int((X.astype(np.int64) @ W.T.astype(np.int64)).max()) if len(X) else lit
    a_max = max(a_max, model.thresholds[0])
    per = geom.n_row // W.shape[0]
    return threshold_window(model.thresholds[0], lit, geom, config, params, a_max=a_max,
                            rows=per * W.shape[0], bl_span=geom.n_column - 1)


def map_and_run(model: BinaryNnModel, X, geom: SubarrayGeometry, config: LineConfiguration,
                v_dd="mid", params: PcmCellParams = PcmCellParams(),
                duration: Optional[float] = None) -> RunReport:
    """Run a single-layer binary model over binarized images (n x 121).

    Each step writes floor(n_row/P) images into one output column. Currents
    are computed per step with the Thevenin pair of every row.
    """
    if len(model.weights) != 1:
        raise ValueError("map_and_run maps one layer; use the fabric module for more")
    W = model.weights[0].astype(np.int64)
    P, N = W.shape
    if N > geom.n_column or P > geom.n_row:
        raise ValueError(f"a {P}x{N} layer does not fit a {geom.n_row}x{geom.n_column} subarray")
    X = np.asarray(X, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != N:
        raise ValueError(f"inputs must be (n, {N})")
    t = params.t_set if duration is None else duration
    win = nn_window(model, X, geom, config, params)
    v = win.mid if v_dd == "mid" else float(v_dd)
    per, steps = steps_needed(len(X), geom.n_row, P)

    a = X @ W.T
    m = X.sum(axis=1, keepdims=True) - a
    g_in = a * params.gc + m * params.ga
    n = len(X)
    cur = np.zeros((n, P))
    energy = 0.0
    disturbs = 0
    for s in range(steps):
        idx = np.arange(s * per, min((s + 1) * per, n))
        g_rows = np.zeros(geom.n_row)
        g_rows[: len(idx) * P] = g_in[idx].reshape(-1)
        lit = X[idx].sum(axis=1)
        d = int(lit.min()) if len(lit) else 1
        lad = step_ladder(geom, config, params, g_rows, max(d, 1), geom.n_column - 1)
        alpha, r_th = ladder_row_profile(lad)
        on = g_rows > 0
        I = np.zeros(geom.n_row)
        I[on] = alpha[on] * v / (r_th[on] + 1.0 / g_rows[on] + 1.0 / params.gc)
        cur[idx] = I[: len(idx) * P].reshape(len(idx), P)
        energy += v * I.sum() * t
        disturbs += int(np.sum(I >= params.i_reset * (1 - 1e-12)))
    bits = (cur >= params.i_set * (1 - 1e-12)).astype(np.int8)
    # a RESET-level current leaves the output amorphous
    bits[cur >= params.i_reset * (1 - 1e-12)] = 0
    dot = dot_current(a, m, v, params)
    preds = decide(bits, dot)
    return RunReport(preds, bits, cur, dot, per, steps, energy, v, win, disturbs)
