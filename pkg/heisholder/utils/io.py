import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, model_validator

from heisholder.services.curves import Chord, HCurve, SegmentMode, horizontal_lift, segment_from_dict
from heisholder.services.filling import Filling, geodesic_segment
from heisholder.services.heis_core import DEFAULT_TOL, HPoint, solve_geodesic
from heisholder.services.selfsim import Ball, SkeletonWindow

logger = logging.getLogger(__name__)

Model = TypeVar("Model", bound=BaseModel)

Triple = Tuple[FiniteFloat, FiniteFloat, FiniteFloat]
Pair = Tuple[FiniteFloat, FiniteFloat]


class ParamDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t: List[FiniteFloat]
    s: List[FiniteFloat]


class CurveDocument(BaseModel):
    """{"closed", "vertices", "modes"} plus the exact segment data and parametrization."""

    model_config = ConfigDict(extra="forbid")

    closed: bool
    vertices: List[Triple] = Field(min_length=2)
    modes: List[SegmentMode]
    segments: Optional[List[Dict]] = None
    param: Optional[ParamDocument] = None

    @model_validator(mode="after")
    def _check_shape(self):
        if len(self.modes) != len(self.vertices) - 1:
            raise ValueError(f"expected {len(self.vertices) - 1} modes, got {len(self.modes)}")
        if self.segments is not None and len(self.segments) != len(self.modes):
            raise ValueError(f"expected {len(self.modes)} segments, got {len(self.segments)}")
        return self


class PlanarDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    points: List[Pair] = Field(min_length=2)
    z0: FiniteFloat = 0.0


class FillingDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    curve: CurveDocument
    scale: FiniteFloat = 1.0
    translation: Triple = (0.0, 0.0, 0.0)
    r: FiniteFloat
    M: int
    m: int
    count: int
    bound: int
    max_perimeter: Optional[FiniteFloat] = None
    vertices: List[Triple]
    triangles: List[Tuple[int, int, int]]
    edges: Optional[List[List[Triple]]] = None


class BallDocument(BaseModel):
    center: List[FiniteFloat]
    radius: FiniteFloat


class GridDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int
    count: int
    radius: FiniteFloat
    separated: bool
    balls: List[BallDocument]


def read_document(path: str, model: Type[Model]) -> Model:
    """Parse a JSON file into model; ValidationError carries the field paths."""
    text = Path(path).read_text(encoding="utf-8")
    return model.model_validate_json(text)


def write_json(path: str, payload) -> None:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json", exclude_none=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")


# curves

def curve_to_document(c: HCurve) -> CurveDocument:
    return CurveDocument(
        closed=c.closed,
        vertices=[tuple(p.as_list()) for p in c.vertices],
        modes=c.modes,
        segments=[seg.to_dict() for seg in c.segments],
        param=ParamDocument(t=list(c.knots_t), s=list(c.knots_s)),
    )


def _segment_from_vertices(p: HPoint, q: HPoint, mode: SegmentMode, tol: float):
    if mode is SegmentMode.GEODESIC:
        return geodesic_segment(p, q, solve_geodesic(p, q, tol))
    return Chord(p, q, mode)


def curve_from_document(doc: CurveDocument, tol: float = DEFAULT_TOL) -> HCurve:
    if doc.segments is not None:
        segments = [segment_from_dict(s) for s in doc.segments]
    else:
        points = [HPoint.of(*v) for v in doc.vertices]
        segments = [_segment_from_vertices(p, q, mode, tol)
                    for p, q, mode in zip(points[:-1], points[1:], doc.modes)]
    curve = HCurve.from_segments(segments, closed=doc.closed)
    if doc.param is not None:
        curve = curve.with_param(doc.param.t, doc.param.s)
    return curve


def read_curve(path: str, tol: float = DEFAULT_TOL) -> HCurve:
    return curve_from_document(read_document(path, CurveDocument), tol)


def write_curve(path: str, c: HCurve) -> None:
    write_json(path, curve_to_document(c))


def read_planar(path: str) -> HCurve:
    doc = read_document(path, PlanarDocument)
    return horizontal_lift([list(p) for p in doc.points], doc.z0)


# fillings

def filling_to_document(f: Filling, scale: float = 1.0, translation: HPoint = HPoint(),
                        max_perimeter: Optional[float] = None, edge_samples: int = 0) -> FillingDocument:
    """Vertices in id order (hub first), ccw triangles and optionally sampled edge polylines."""
    j, l = np.meshgrid(np.arange(1, f.m + 1), np.arange(f.M), indexing="ij")
    images = np.vstack([np.zeros((1, 3)), f.vertex_images(j.ravel(), l.ravel())])
    triangles = f.triangles
    edges = None
    if edge_samples > 0:
        f.prefetch_edges()
        pairs = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
        pairs = np.unique(np.sort(pairs, axis=1), axis=0)
        edges = [[tuple(p) for p in f.edge_curve(int(a), int(b)).sample(edge_samples).tolist()]
                 for a, b in pairs]
    return FillingDocument(
        curve=curve_to_document(f.curve),
        scale=scale,
        translation=tuple(translation.as_list()),
        r=f.r,
        M=f.M,
        m=f.m,
        count=f.count,
        bound=f.bound,
        max_perimeter=max_perimeter,
        vertices=[tuple(v) for v in images.tolist()],
        triangles=[tuple(t) for t in triangles.tolist()],
        edges=edges,
    )


def read_filling(path: str) -> FillingDocument:
    return read_document(path, FillingDocument)


# grids

def grid_to_document(d: int, balls: Sequence[Ball], separated: bool) -> GridDocument:
    return GridDocument(
        d=d,
        count=len(balls),
        radius=balls[0].radius,
        separated=separated,
        balls=[BallDocument(center=list(b.center), radius=b.radius) for b in balls],
    )


# OBJ line files

def write_obj(path: str, vertices: np.ndarray, lines: Iterable[Sequence[int]]) -> None:
    """Vertices as "v x y z", polylines as "l" elements with 1-based indices."""
    with open(path, "w", encoding="utf-8") as handle:
        for x, y, z in np.asarray(vertices, dtype=float):
            handle.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        count = 0
        for line in lines:
            handle.write("l " + " ".join(str(int(i) + 1) for i in line) + "\n")
            count += 1
    logger.info(f"Wrote {path}: {len(vertices)} vertices, {count} lines")


def read_obj(path: str) -> Tuple[np.ndarray, List[List[int]]]:
    """Inverse of write_obj; indices come back 0-based."""
    vertices = []
    lines = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(v) for v in parts[1:4]])
            elif parts[0] == "l":
                lines.append([int(i) - 1 for i in parts[1:]])
            else:
                raise ValueError(f"{path}:{number}: unsupported OBJ element '{parts[0]}'")
    return np.array(vertices, dtype=float).reshape(-1, 3), lines


def skeleton_to_obj(window: SkeletonWindow, max_edges: int) -> Tuple[np.ndarray, List[List[int]]]:
    if window.edge_count > max_edges:
        raise ValueError(f"skeleton window has {window.edge_count} edges, above the limit {max_edges}")
    index: Dict[Tuple[int, int, int], int] = {}
    lines = []
    for start, end in window.edges():
        for v in (start, end):
            if v not in index:
                index[v] = len(index)
        lines.append([index[start], index[end]])
    vertices = np.array([window.vertex_point(*v).as_list() for v in index], dtype=float)
    return vertices, lines
