"""K-means clustering of multiband rasters and satellite-frame construction.

Clusters of a raster become the primary units of a frame and its pixels the
second-stage units.  Ground points are placed into clusters through the
raster's affine georeference.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from mfyield.frames import Frame, Psu, UnitRecord
from mfyield.rng import substream

KMEANS_KEY = 0xC1
_CHUNK = 65536


class ClusterError(ValueError):
    pass


@dataclass(frozen=True)
class Georef:
    origin_x: float = 0.0
    origin_y: float = 0.0
    psize_x: float = 1.0
    psize_y: float = 1.0

    def __post_init__(self) -> None:
        if self.psize_x == 0 or self.psize_y == 0:
            raise ClusterError("pixel size must be non-zero")


@dataclass(frozen=True, eq=False)
class Raster:
    """Row-major grid of ``bands``-dimensional pixel vectors."""

    width: int
    height: int
    pixels: np.ndarray
    georef: Georef = field(default_factory=Georef)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 1:
            px = px.reshape(-1, 1)
        if px.shape[0] != self.width * self.height:
            raise ClusterError(
                f"{px.shape[0]} pixels for a {self.width}x{self.height} raster"
            )
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def bands(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> int:
        return self.width * self.height

    def cell(self, x: float, y: float) -> tuple[int, int]:
        """``(row, col)`` of the cell containing world point ``(x, y)``.

        Cells are half-open, so a point on a shared edge belongs to the cell
        with the higher index.
        """
        g = self.georef
        col = math.floor((x - g.origin_x) / g.psize_x)
        row = math.floor((y - g.origin_y) / g.psize_y)
        return row, col

    def contains(self, x: float, y: float) -> bool:
        row, col = self.cell(x, y)
        return 0 <= row < self.height and 0 <= col < self.width

    def centre(self, index: int) -> tuple[float, float]:
        row, col = divmod(index, self.width)
        g = self.georef
        return g.origin_x + (col + 0.5) * g.psize_x, g.origin_y + (row + 0.5) * g.psize_y


@dataclass(frozen=True, eq=False)
class ClusterModel:
    K: int
    centers: np.ndarray
    assignment: np.ndarray
    sse: float
    iterations: int
    epsilon: float
    history: tuple[float, ...] = ()
    converged: bool = True

    @property
    def sizes(self) -> np.ndarray:
        """Pixel count per cluster; entry ``k - 1`` is cluster ``k``."""
        return np.bincount(self.assignment - 1, minlength=self.K)

    def labels(self) -> np.ndarray:
        return self.assignment


def _assign(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center by squared distance; ties go to the lowest index."""
    labels = np.empty(X.shape[0], dtype=np.int64)
    dist = np.empty(X.shape[0], dtype=np.float64)
    for lo in range(0, X.shape[0], _CHUNK):
        chunk = X[lo:lo + _CHUNK]
        d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        labels[lo:lo + _CHUNK] = idx
        dist[lo:lo + _CHUNK] = d2[np.arange(len(idx)), idx]
    return labels, dist


def _sq_dist(X: np.ndarray, centers: np.ndarray, labels0: np.ndarray) -> np.ndarray:
    return ((X - centers[labels0]) ** 2).sum(axis=1)


def _means(X: np.ndarray, labels0: np.ndarray, K: int, old: np.ndarray) -> tuple[np.ndarray, list[int]]:
    order = np.argsort(labels0, kind="stable")
    counts = np.bincount(labels0, minlength=K)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    centers = old.copy()
    empty = []
    for k in range(K):
        rows = X[order[bounds[k]:bounds[k + 1]]]
        if len(rows) == 0:
            empty.append(k)
            continue
        centers[k] = [math.fsum(rows[:, b].tolist()) / len(rows) for b in range(X.shape[1])]
    return centers, empty


def _initial_centers(X: np.ndarray, K: int, rng: np.random.Generator, init: str) -> np.ndarray:
    if init == "random":
        chosen: list[np.ndarray] = []
        seen: set[bytes] = set()
        for i in rng.permutation(X.shape[0]):
            key = X[i].tobytes()
            if key not in seen:
                seen.add(key)
                chosen.append(X[i])
                if len(chosen) == K:
                    break
        return np.array(chosen)
    if init == "spread":
        first = int(rng.integers(X.shape[0]))
        centers = [X[first]]
        best = ((X - X[first]) ** 2).sum(axis=1)
        for _ in range(1, K):
            i = int(np.argmax(best))
            centers.append(X[i])
            best = np.minimum(best, ((X - X[i]) ** 2).sum(axis=1))
        return np.array(centers)
    raise ClusterError(f"unknown initialisation {init!r}")


def kmeans(
    raster: Raster,
    K: int,
    epsilon: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
    *,
    init: Literal["random", "spread"] = "random",
    standardize: bool = False,
) -> ClusterModel:
    """Lloyd's algorithm minimising the within-cluster sum of squared distances.

    Starts from K distinct pixel vectors picked at random.  Each iteration
    assigns pixels to their nearest center and moves centers to cluster means;
    it stops once no center moves by ``epsilon`` or more and the assignment is
    stable, or after ``max_iter`` iterations.  An empty cluster is reseeded
    with the pixel farthest from its current center.  Labels run 1..K.

    ``history`` holds the SSE after every assignment step and is
    non-increasing.  With ``standardize`` the bands are scaled to unit
    variance before clustering; ``sse`` and ``history`` are then in
    standardized units while ``centers`` are mapped back to band units.
    """
    X = raster.pixels
    if not np.all(np.isfinite(X)):
        raise ClusterError("raster contains non-finite pixel values")
    if epsilon <= 0 or max_iter < 1:
        raise ClusterError("need epsilon > 0 and max_iter >= 1")
    distinct = np.unique(X, axis=0).shape[0]
    if not 1 <= K <= distinct:
        raise ClusterError(f"K={K} but the raster has {distinct} distinct pixel vectors")
    scale = None
    if standardize:
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd[sd == 0] = 1.0
        scale = (mu, sd)
        X = (X - mu) / sd

    centers = _initial_centers(X, K, substream(seed, KMEANS_KEY), init)
    history: list[float] = []
    labels0: Optional[np.ndarray] = None
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        new_labels, dist = _assign(X, centers)
        history.append(math.fsum(dist.tolist()))
        if labels0 is not None and np.array_equal(new_labels, labels0):
            converged = True
            break
        labels0 = new_labels
        new_centers, empty = _means(X, labels0, K, centers)
        if empty:
            d = _sq_dist(X, new_centers, labels0)
            taken: set[int] = set()
            for k in empty:
                masked = np.where(np.isin(np.arange(len(d)), list(taken)), -1.0, d)
                i = int(np.argmax(masked))
                taken.add(i)
                new_centers[k] = X[i]
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < epsilon and not empty:
            check, dist = _assign(X, centers)
            if np.array_equal(check, labels0):
                history.append(math.fsum(dist.tolist()))
                converged = True
                break
    final_labels, dist = _assign(X, centers)
    sse_value = math.fsum(dist.tolist())
    if scale is not None:
        centers = centers * scale[1] + scale[0]
    return ClusterModel(
        K, centers, final_labels + 1, sse_value, it, epsilon, tuple(history), converged
    )


def sse(raster: Raster, model: ClusterModel) -> float:
    """Sum over pixels of the squared distance to the assigned center."""
    if model.assignment.shape[0] != raster.size or model.centers.shape[1] != raster.bands:
        raise ClusterError("model does not match raster dimensions")
    return math.fsum(_sq_dist(raster.pixels, model.centers, model.assignment - 1).tolist())


def locate(point: tuple[float, float], raster: Raster) -> int:
    """Row-major index of the pixel containing ``point``."""
    row, col = raster.cell(*point)
    if not (0 <= row < raster.height and 0 <= col < raster.width):
        raise ClusterError(f"point {point} lies outside the raster")
    return row * raster.width + col


@dataclass(frozen=True)
class SatelliteFrame:
    frame: Frame
    memberships: dict[Hashable, Hashable]
    allocation: dict[Hashable, int]

    @property
    def sampled_psus(self) -> int:
        return sum(1 for c in self.allocation.values() if c > 0)


def cluster_psu_id(label: int) -> str:
    return f"c{label}"


def build_satellite_frame(
    points: Iterable[UnitRecord],
    raster: Raster,
    model: ClusterModel,
    frame_id: int,
    name: str = "",
) -> SatelliteFrame:
    """Frame whose psus are the K clusters, sized by pixel count.

    Each point is placed in the cluster of its containing pixel.  The psu
    listing holds those points; its declared size is the cluster's pixel count.
    """
    if model.assignment.shape[0] != raster.size:
        raise ClusterError("model does not match raster")
    return frame_from_labels(points, raster, model.assignment, frame_id, name, K=model.K)


def frame_from_labels(
    points: Iterable[UnitRecord],
    raster: Raster,
    labels: Sequence[int],
    frame_id: int,
    name: str = "",
    *,
    K: Optional[int] = None,
) -> SatelliteFrame:
    """Same as :func:`build_satellite_frame` but driven by a stored label raster."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != raster.size:
        raise ClusterError(f"{labels.shape[0]} labels for {raster.size} pixels")
    K = int(labels.max()) if K is None else K
    if labels.min() < 1 or labels.max() > K:
        raise ClusterError("labels must lie in 1..K")
    sizes = np.bincount(labels - 1, minlength=K)
    if (sizes == 0).any():
        raise ClusterError(f"clusters {[k + 1 for k in np.flatnonzero(sizes == 0)]} have no pixels")
    members: dict[int, list[Hashable]] = {k: [] for k in range(1, K + 1)}
    memberships: dict[Hashable, Hashable] = {}
    for u in points:
        if u.location is None:
            raise ClusterError(f"unit {u.unit_id!r} has no location")
        try:
            idx = locate(u.location, raster)
        except ClusterError as exc:
            raise ClusterError(f"unit {u.unit_id!r}: {exc}") from None
        label = int(labels[idx])
        members[label].append(u.unit_id)
        memberships[u.unit_id] = cluster_psu_id(label)
    psus = tuple(
        Psu(cluster_psu_id(k), tuple(members[k]), int(sizes[k - 1])) for k in range(1, K + 1)
    )
    allocation = {cluster_psu_id(k): len(members[k]) for k in range(1, K + 1)}
    return SatelliteFrame(Frame(frame_id, psus, name), memberships, allocation)


# -- raster files --------------------------------------------------------------------

HEADER = ("width", "height", "bands", "origin_x", "origin_y", "psize_x", "psize_y")
BINARY_TAG = "binary,float64,little-endian"


def _header_lines(width: int, height: int, bands: int, g: Georef) -> str:
    values = [str(width), str(height), str(bands)] + [repr(float(v)) for v in
                                                      (g.origin_x, g.origin_y, g.psize_x, g.psize_y)]
    return ",".join(HEADER) + "\n" + ",".join(values) + "\n"


def write_raster(path: Path, raster: Raster, *, binary: bool = False) -> None:
    """Write ``raster`` as text (one raster row per line) or as binary.

    Both layouts start with a header-names line and a header-values line.  The
    binary layout follows them with a ``binary,float64,little-endian`` line and
    the pixel-interleaved, row-major values as little-endian float64.
    """
    head = _header_lines(raster.width, raster.height, raster.bands, raster.georef)
    if binary:
        with open(path, "wb") as fh:
            fh.write(head.encode())
            fh.write((BINARY_TAG + "\n").encode())
            fh.write(raster.pixels.astype("<f8").tobytes())
        return
    rows = raster.pixels.reshape(raster.height, raster.width * raster.bands)
    with open(path, "w") as fh:
        fh.write(head)
        fh.writelines(",".join(repr(float(v)) for v in row) + "\n" for row in rows)


def _parse_header(names: str, values: str) -> tuple[int, int, int, Georef]:
    if tuple(s.strip() for s in names.split(",")) != HEADER:
        raise ClusterError(f"bad raster header {names.strip()!r}")
    v = values.split(",")
    if len(v) != len(HEADER):
        raise ClusterError("raster header needs seven values")
    return int(v[0]), int(v[1]), int(v[2]), Georef(*(float(x) for x in v[3:]))


def read_raster(path: Path) -> Raster:
    with open(path, "rb") as fh:
        names = fh.readline().decode()
        values = fh.readline().decode()
        width, height, bands, georef = _parse_header(names, values)
        pos = fh.tell()
        third = fh.readline()
        if third.decode(errors="replace").strip() == BINARY_TAG:
            data = np.frombuffer(fh.read(), dtype="<f8")
        else:
            fh.seek(pos)
            text = fh.read().decode()
            data = np.array([float(x) for x in text.replace("\n", ",").split(",") if x.strip()])
    if data.size != width * height * bands:
        raise ClusterError(f"{path}: expected {width * height * bands} values, found {data.size}")
    return Raster(width, height, data.reshape(width * height, bands), georef)


def write_labels(path: Path, raster: Raster, model: ClusterModel) -> None:
    """Single-band integer label raster with the source raster's header."""
    rows = model.assignment.reshape(raster.height, raster.width)
    with open(path, "w") as fh:
        fh.write(_header_lines(raster.width, raster.height, 1, raster.georef))
        fh.writelines(",".join(str(int(v)) for v in row) + "\n" for row in rows)


def read_labels(path: Path) -> tuple[Raster, np.ndarray]:
    """Return a one-band raster shell (for georeferencing) and the labels."""
    r = read_raster(path)
    labels = r.pixels[:, 0].astype(np.int64)
    if not np.array_equal(labels, r.pixels[:, 0]):
        raise ClusterError(f"{path}: labels must be integers")
    return r, labels


def model_from_labels(raster: Raster, labels: Sequence[int], K: Optional[int] = None) -> ClusterModel:
    """Rebuild a model (centers, SSE) from a stored label raster without re-clustering."""
    labels = np.asarray(labels, dtype=np.int64)
    K = int(labels.max()) if K is None else K
    if labels.min() < 1 or labels.max() > K:
        raise ClusterError("labels must lie in 1..K")
    centers, empty = _means(raster.pixels, labels - 1, K, np.zeros((K, raster.bands)))
    if empty:
        raise ClusterError(f"clusters {[k + 1 for k in empty]} have no pixels")
    d = _sq_dist(raster.pixels, centers, labels - 1)
    return ClusterModel(K, centers, labels, math.fsum(d.tolist()), 0, 0.0)
