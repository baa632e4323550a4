"""Stack geometry: wafer slabs, passive shells, and ray traversal.

All bodies are axis-aligned boxes.  The three silicon wafers are solid
slabs; the chip housing and the cryostat cans are hollow shells that a
ray crosses as up to two wall segments (front and back).  Units: cm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import GeometryConfig

TOP, CENTER, BOTTOM = 0, 1, 2
DETECTOR_NAMES = ("top", "center", "bottom")


@dataclass(frozen=True)
class Body:
    """One axis-aligned box, solid or hollow.

    cavity_half is None for solid bodies.  detector is the wafer index
    (0/1/2) for silicon slabs, -1 for passives.
    """

    name: str
    material: str
    detector: int
    center: tuple[float, float, float]
    half: tuple[float, float, float]
    cavity_half: tuple[float, float, float] | None = None

    @property
    def n_segments(self) -> int:
        return 1 if self.cavity_half is None else 2


@dataclass
class StackGeometry:
    bodies: list[Body]
    slot_body: list[int] = field(init=False)  # segment slot -> body index
    material_names: list[str] = field(init=False)
    slot_material: np.ndarray = field(init=False)
    slot_detector: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.slot_body = []
        for i, b in enumerate(self.bodies):
            self.slot_body.extend([i] * b.n_segments)
        self.material_names = sorted({b.material for b in self.bodies})
        mat_id = {m: i for i, m in enumerate(self.material_names)}
        self.slot_material = np.array(
            [mat_id[self.bodies[i].material] for i in self.slot_body], dtype=np.int32
        )
        self.slot_detector = np.array(
            [self.bodies[i].detector for i in self.slot_body], dtype=np.int32
        )

    @property
    def n_slots(self) -> int:
        return len(self.slot_body)

    def detector_bodies(self) -> list[Body]:
        return [b for b in self.bodies if b.detector >= 0]

    def enclosing_radius_cm(self) -> float:
        """Radius of the smallest origin-centered sphere containing every body."""
        r = 0.0
        for b in self.bodies:
            c = np.asarray(b.center)
            h = np.asarray(b.half)
            corners = c + h * np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
            r = max(r, float(np.max(np.linalg.norm(corners, axis=1))))
        return r


def _axis_interval(o: np.ndarray, d: np.ndarray, lo: float, hi: float):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    tlo = np.where(parallel, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(parallel, np.where(inside, np.inf, -np.inf), thi)
    return tlo, thi


def box_interval(origins: np.ndarray, directions: np.ndarray,
                 center: tuple[float, float, float], half: tuple[float, float, float]):
    """Entry/exit ray parameters for an axis-aligned box.

    Returns (t_in, t_out); the ray misses where t_out <= t_in.
    """
    t_in = np.full(origins.shape[0], -np.inf)
    t_out = np.full(origins.shape[0], np.inf)
    for ax in range(3):
        lo = center[ax] - half[ax]
        hi = center[ax] + half[ax]
        tlo, thi = _axis_interval(origins[:, ax], directions[:, ax], lo, hi)
        t_in = np.maximum(t_in, tlo)
        t_out = np.minimum(t_out, thi)
    return t_in, t_out


def chord_length(origins: np.ndarray, directions: np.ndarray, body: Body) -> np.ndarray:
    """Path length of each ray inside the body (0 where it misses)."""
    t_in, t_out = box_interval(origins, directions, body.center, body.half)
    chord = np.maximum(t_out - t_in, 0.0)
    if body.cavity_half is not None:
        c_in, c_out = box_interval(origins, directions, body.center, body.cavity_half)
        chord = chord - np.maximum(np.minimum(c_out, t_out) - np.maximum(c_in, t_in), 0.0)
    return chord


def segment_table(origins: np.ndarray, directions: np.ndarray, geom: StackGeometry):
    """All body crossings for a batch of rays, sorted along each ray.

    Returns (t_entry, length, material, detector, n_segments), each of
    shape (n_rays, n_slots) except the last, with per-ray segments packed
    to the front in traversal order.  Empty slots have length 0 and
    material/detector -1.  Segments behind the origin are clipped at
    t = 0, so rays starting inside a body see only the remaining path.
    """
    n = origins.shape[0]
    t = np.full((n, geom.n_slots), np.inf)
    length = np.zeros((n, geom.n_slots))
    slot = 0
    for body in geom.bodies:
        t_in, t_out = box_interval(origins, directions, body.center, body.half)
        hit = t_out > t_in
        if body.cavity_half is None:
            t[:, slot] = np.where(hit, t_in, np.inf)
            length[:, slot] = np.where(hit, t_out - t_in, 0.0)
            slot += 1
        else:
            c_in, c_out = box_interval(origins, directions, body.center, body.cavity_half)
            c_hit = hit & (c_out > c_in)
            # front wall: from outer entry to cavity entry (full chord if cavity missed)
            front_end = np.where(c_hit, c_in, t_out)
            t[:, slot] = np.where(hit, t_in, np.inf)
            length[:, slot] = np.where(hit, np.maximum(front_end - t_in, 0.0), 0.0)
            # back wall: from cavity exit to outer exit
            t[:, slot + 1] = np.where(c_hit, c_out, np.inf)
            length[:, slot + 1] = np.where(c_hit, np.maximum(t_out - c_out, 0.0), 0.0)
            slot += 2
    hit = length > 0.0
    end = np.where(hit, t + length, 0.0)
    t_clip = np.where(hit, np.maximum(t, 0.0), np.inf)
    length = np.where(hit, np.maximum(end - t_clip, 0.0), 0.0)
    t = np.where(length > 0.0, t_clip, np.inf)
    order = np.argsort(t, axis=1, kind="stable")
    t_sorted = np.take_along_axis(t, order, axis=1)
    length_sorted = np.take_along_axis(length, order, axis=1)
    mat = np.broadcast_to(geom.slot_material, (n, geom.n_slots))
    det = np.broadcast_to(geom.slot_detector, (n, geom.n_slots))
    mat_sorted = np.take_along_axis(mat, order, axis=1).copy()
    det_sorted = np.take_along_axis(det, order, axis=1).copy()
    valid = np.isfinite(t_sorted) & (length_sorted > 0.0)
    mat_sorted[~valid] = -1
    det_sorted[~valid] = -1
    length_sorted[~valid] = 0.0
    n_seg = valid.sum(axis=1).astype(np.int32)
    return t_sorted, length_sorted, mat_sorted, det_sorted, n_seg


def intersect_slab(origin, direction, body: Body):
    """Chord of a single ray inside one solid box, or None on a miss.

    Returns (entry_point, path_length_cm).
    """
    o = np.atleast_2d(np.asarray(origin, dtype=float))
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError("ray direction must be unit-norm")
    d = np.atleast_2d(d)
    t_in, t_out = box_interval(o, d, body.center, body.half)
    if not t_out[0] > t_in[0]:
        return None
    return o[0] + t_in[0] * d[0], float(t_out[0] - t_in[0])


def stack_traversal(origin, direction, geom: StackGeometry):
    """Silicon crossings of a single ray, ordered by entry distance.

    Returns a list of (detector name, path_length_cm); passive bodies
    are handled by the transport walk, not listed here.
    """
    o = np.atleast_2d(np.asarray(origin, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = np.atleast_2d(d / np.linalg.norm(d))
    out = []
    for body in geom.detector_bodies():
        t_in, t_out = box_interval(o, d, body.center, body.half)
        if t_out[0] > t_in[0]:
            out.append((float(t_in[0]), body.name, float(t_out[0] - t_in[0])))
    out.sort()
    return [(name, length) for _, name, length in out]


def build_geometry(gc: GeometryConfig) -> StackGeometry:
    """Assemble the wafer stack, chip housing, and cryostat cans."""
    h = gc.si_half_thickness_cm
    z_outer = gc.layer_gap_cm + 2.0 * h
    off = (gc.center_offset_x_cm, gc.center_offset_y_cm)
    bodies = [
        Body("top", "si", TOP, (0.0, 0.0, z_outer), (gc.top_half_x_cm, gc.top_half_y_cm, h)),
        Body("center", "si", CENTER, (off[0], off[1], 0.0),
             (gc.center_half_x_cm, gc.center_half_y_cm, h)),
        Body("bottom", "si", BOTTOM, (0.0, 0.0, -z_outer),
             (gc.bottom_half_x_cm, gc.bottom_half_y_cm, h)),
    ]
    cav = (gc.center_half_x_cm + gc.box_clearance_xy_cm,
           gc.center_half_y_cm + gc.box_clearance_xy_cm,
           gc.box_cavity_half_z_cm)
    outer = (cav[0] + gc.box_lateral_wall_cm,
             cav[1] + gc.box_lateral_wall_cm,
             cav[2] + gc.box_vertical_wall_cm)
    bodies.append(Body("box", "cu", -1, (off[0], off[1], 0.0), outer, cav))
    for i, sh in enumerate(gc.shield_shells):
        c = (sh.cavity_half_x_cm, sh.cavity_half_y_cm, sh.cavity_half_z_cm)
        o = (c[0] + sh.wall_cm, c[1] + sh.wall_cm, c[2] + sh.wall_cm)
        bodies.append(Body(f"shell{i}_{sh.material}", sh.material, -1, (0.0, 0.0, 0.0), o, c))
    geom = StackGeometry(bodies)
    _validate_geometry(geom, gc)
    return geom


def _contains(outer_c, outer_h, inner_c, inner_h) -> bool:
    return all(abs(inner_c[a] - outer_c[a]) + inner_h[a] <= outer_h[a] + 1e-12 for a in range(3))


def _validate_geometry(geom: StackGeometry, gc: GeometryConfig) -> None:
    top, center, bottom = geom.detector_bodies()
    box = next(b for b in geom.bodies if b.name == "box")
    # wafers must not touch each other or the housing walls
    gap = (top.center[2] - top.half[2]) - (center.center[2] + center.half[2])
    if gap <= 0 or (center.center[2] - center.half[2]) - (bottom.center[2] + bottom.half[2]) <= 0:
        raise ValueError("wafer slabs overlap in z")
    if not _contains(box.center, box.cavity_half, center.center, center.half):
        raise ValueError("center wafer does not fit inside the housing cavity")
    if box.center[2] + box.half[2] >= top.center[2] - top.half[2]:
        raise ValueError("housing lid reaches the outer wafers")
    prev_c, prev_h = box.center, box.half
    for b in geom.bodies:
        if b.name.startswith("shell"):
            if not _contains(b.center, b.cavity_half, prev_c, prev_h):
                raise ValueError(f"{b.name} cavity does not enclose the previous layer")
            for w in (top, bottom):
                if not _contains(b.center, b.cavity_half, w.center, w.half):
                    raise ValueError(f"{b.name} cavity does not enclose the outer wafers")
            prev_c, prev_h = b.center, b.half


def geometric_tagging_fraction(geom: StackGeometry, angular=None, n_rays: int = 2_000_000,
                               seed: int = 1, radius_cm: float | None = None) -> float:
    """Monte Carlo fraction of center-wafer muon tracks the outer pair tags.

    A track is tagged when it crosses both the top and the bottom wafer.
    Purely geometric: no energy deposition or thresholds involved.
    """
    from .config import AngularConfig
    from .sources import sample_muon_rays

    if angular is None:
        angular = AngularConfig()
    if radius_cm is None:
        radius_cm = geom.enclosing_radius_cm() * 1.2
    rng = np.random.default_rng(seed)
    top, center, bottom = geom.detector_bodies()
    n_c = 0
    n_tcb = 0
    for start in range(0, n_rays, 1_000_000):
        m = min(1_000_000, n_rays - start)
        origins, directions = sample_muon_rays(m, angular, radius_cm, rng)
        hit_c = chord_length(origins, directions, center) > 0
        tagged = (chord_length(origins[hit_c], directions[hit_c], top) > 0) \
            & (chord_length(origins[hit_c], directions[hit_c], bottom) > 0)
        n_c += int(hit_c.sum())
        n_tcb += int(tagged.sum())
    if n_c == 0:
        raise RuntimeError("no center-wafer tracks generated; increase n_rays")
    return n_tcb / n_c
