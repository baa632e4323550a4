"""Energy deposition and event building.

Muons are treated as minimum-ionizing: every wafer crossing deposits a
Landau-distributed energy set by the path length, and the muon itself
is never stopped.  Gamma rays random-walk through the ordered material
segments of the stack; interactions in passive material absorb the
photon, interactions in silicon deposit energy (full for photoelectric,
the electron share for Compton) and the scattered photon is re-tracked
for a bounded number of generations.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import attenuation
from .config import RunConfig, TransportConfig
from .geometry import StackGeometry, build_geometry, chord_length, segment_table
from .sources import (
    muon_equivalent_livetime,
    gamma_equivalent_livetime,
    muon_generation_rate,
    gamma_generation_rate,
    orthonormal_basis,
    sample_gamma_energies,
    sample_gamma_rays,
    sample_muon_rays,
)

MU, GAMMA = 0, 1
SPECIES_NAMES = ("mu", "gamma")

EVENT_DTYPE = np.dtype([
    ("event_id", "i8"),
    ("species", "i1"),
    ("t_s", "f8"),
    ("e_top_kev", "f4"),
    ("e_center_kev", "f4"),
    ("e_bottom_kev", "f4"),
])

# stream ids for seed derivation; analysis stages use higher values
SIM_STREAM = 1

SIM_WINDOW_S = 10.0

# silicon ionization constants
SI_MEAN_EXCITATION_KEV = 0.173
SI_XI_COEFF_KEV_PER_CM = 153.4754 * 0.49848 * 2.329  # (K/2) * Z/A * rho
MEC2_KEV = 510.99895
# Sternheimer density-effect parameters for silicon
_STERN_X0 = 0.2014
_STERN_X1 = 2.8715
_STERN_CBAR = 4.4355
_STERN_A = 0.14921
_STERN_K = 3.2546

# scipy's landau parametrization: mode sits at this many scale units below loc
_LANDAU_MODE_OFFSET = 0.4292


def sternheimer_delta(betagamma: float) -> float:
    """Density-effect correction for silicon."""
    x = np.log10(betagamma)
    if x < _STERN_X0:
        return 0.0
    d = 2.0 * np.log(10.0) * x - _STERN_CBAR
    if x < _STERN_X1:
        d += _STERN_A * (_STERN_X1 - x) ** _STERN_K
    return float(d)


def landau_xi_kev(length_cm, betagamma: float):
    """Landau scale parameter xi in keV for a silicon path."""
    beta2 = betagamma**2 / (1.0 + betagamma**2)
    return SI_XI_COEFF_KEV_PER_CM * np.asarray(length_cm, dtype=float) / beta2


def landau_mpv_kev(length_cm, betagamma: float):
    """Most probable energy loss in silicon, Bichsel form."""
    beta2 = betagamma**2 / (1.0 + betagamma**2)
    xi = landau_xi_kev(length_cm, betagamma)
    core = (np.log(2.0 * MEC2_KEV * betagamma**2 / SI_MEAN_EXCITATION_KEV)
            + np.log(xi / SI_MEAN_EXCITATION_KEV)
            + 0.2 - beta2 - sternheimer_delta(betagamma))
    return xi * core


def sample_landau_deposits_kev(lengths_cm: np.ndarray, betagamma: float,
                               rng: np.random.Generator,
                               truncation_mev: float = 10.0) -> np.ndarray:
    """Landau-fluctuated deposits for silicon crossings, in keV.

    The distribution is positioned so its mode lands on the Bichsel most
    probable value; the far tail is clipped at the truncation energy.
    """
    lengths = np.asarray(lengths_cm, dtype=float)
    if np.any(lengths <= 0.0):
        raise ValueError("path length must be > 0")
    xi = landau_xi_kev(lengths, betagamma)
    scale = 0.5 * np.pi * xi
    loc = landau_mpv_kev(lengths, betagamma) + _LANDAU_MODE_OFFSET * scale
    raw = stats.landau.rvs(loc=loc, scale=scale, size=lengths.shape, random_state=rng)
    return np.clip(raw, 0.0, truncation_mev * 1000.0)


def transport_muons(origins: np.ndarray, directions: np.ndarray, geom: StackGeometry,
                    tcfg: TransportConfig, rng: np.random.Generator):
    """Deposits from straight MIP tracks.

    Returns (ray_index, detector, energy_keV) arrays, one entry per
    wafer crossing.
    """
    rays, dets, energies = [], [], []
    for body in geom.detector_bodies():
        chords = chord_length(origins, directions, body)
        sel = np.nonzero(chords > 0.0)[0]
        if sel.size == 0:
            continue
        dep = sample_landau_deposits_kev(chords[sel], tcfg.reference_betagamma,
                                         rng, tcfg.landau_truncation_mev)
        rays.append(sel.astype(np.int64))
        dets.append(np.full(sel.size, body.detector, dtype=np.int32))
        energies.append(dep)
    if not rays:
        empty = np.empty(0)
        return empty.astype(np.int64), empty.astype(np.int32), empty
    return np.concatenate(rays), np.concatenate(dets), np.concatenate(energies)


def transport_gammas(origins: np.ndarray, directions: np.ndarray, e_mev: np.ndarray,
                     geom: StackGeometry, tcfg: TransportConfig,
                     rng: np.random.Generator):
    """Walk photons through the segment table until absorbed or escaped.

    Returns (ray_index, detector, energy_keV) with same-ray, same-wafer
    deposits from successive scatters already merged.
    """
    si = attenuation.TABLES["si"]
    dep_ray, dep_det, dep_e = [], [], []
    o, d, e = origins, directions, np.asarray(e_mev, dtype=float)
    idx = np.arange(o.shape[0], dtype=np.int64)
    max_gen = tcfg.max_scatter_generations if tcfg.retrack_compton else 0
    for gen in range(max_gen + 1):
        if o.shape[0] == 0:
            break
        t, seg_len, mat, det, _ = segment_table(o, d, geom)
        alive = np.ones(o.shape[0], dtype=bool)
        nxt_o, nxt_d, nxt_e, nxt_idx = [], [], [], []
        for s in range(t.shape[1]):
            act = np.nonzero(alive & (seg_len[:, s] > 0.0))[0]
            if act.size == 0:
                continue
            mu = np.empty(act.size)
            mat_ids = mat[act, s]
            for mi, name in enumerate(geom.material_names):
                sel = mat_ids == mi
                if sel.any():
                    mu[sel] = attenuation.TABLES[name].mu_total(e[act[sel]])
            p_int = -np.expm1(-mu * seg_len[act, s])
            hit = rng.random(act.size) < p_int
            if not hit.any():
                continue
            ih = act[hit]
            passive = det[ih, s] < 0
            alive[ih[passive]] = False
            dr = ih[~passive]
            if dr.size == 0:
                continue
            alive[dr] = False
            is_pe = rng.random(dr.size) < si.photoelectric_fraction(e[dr])
            pe_rays = dr[is_pe]
            if pe_rays.size:
                dep_ray.append(idx[pe_rays])
                dep_det.append(det[pe_rays, s].astype(np.int32))
                dep_e.append(e[pe_rays])
            co_rays = dr[~is_pe]
            if co_rays.size:
                eps, cos_t = attenuation.sample_compton_scatter(e[co_rays], rng)
                dep_ray.append(idx[co_rays])
                dep_det.append(det[co_rays, s].astype(np.int32))
                dep_e.append(e[co_rays] * (1.0 - eps))
                if gen < max_gen:
                    # interaction depth conditioned on interacting in this segment
                    mu_co = mu[hit][~passive][~is_pe]
                    p_co = -np.expm1(-mu_co * seg_len[co_rays, s])
                    depth = -np.log1p(-rng.random(co_rays.size) * p_co) / mu_co
                    pos = o[co_rays] + d[co_rays] * (t[co_rays, s] + depth)[:, None]
                    e1, e2 = orthonormal_basis(d[co_rays])
                    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, 1.0))
                    psi = 2.0 * np.pi * rng.random(co_rays.size)
                    d_new = (cos_t[:, None] * d[co_rays]
                             + sin_t[:, None] * (np.cos(psi)[:, None] * e1
                                                 + np.sin(psi)[:, None] * e2))
                    nxt_o.append(pos)
                    nxt_d.append(d_new)
                    nxt_e.append(e[co_rays] * eps)
                    nxt_idx.append(idx[co_rays])
        if not nxt_o:
            break
        o = np.concatenate(nxt_o)
        d = np.concatenate(nxt_d)
        e = np.concatenate(nxt_e)
        idx = np.concatenate(nxt_idx)
        keep = e > attenuation.E_MIN_MEV
        o, d, e, idx = o[keep], d[keep], e[keep], idx[keep]
    if not dep_ray:
        empty = np.empty(0)
        return empty.astype(np.int64), empty.astype(np.int32), empty
    ray = np.concatenate(dep_ray)
    det_out = np.concatenate(dep_det)
    e_kev = np.concatenate(dep_e) * 1000.0
    # merge repeat deposits in the same wafer from re-tracked scatters
    key = ray * 3 + det_out
    uniq, inverse = np.unique(key, return_inverse=True)
    summed = np.bincount(inverse, weights=e_kev)
    return (uniq // 3).astype(np.int64), (uniq % 3).astype(np.int32), summed


def _deposit_matrix(ray, det, e_kev, threshold_kev: float):
    """Per-ray (n, 3) energy matrix for rays with any wafer at/above threshold."""
    if ray.size == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    uniq, inverse = np.unique(ray, return_inverse=True)
    mat = np.zeros((uniq.size, 3))
    mat[inverse, det] += e_kev
    mat[mat < threshold_kev] = 0.0
    keep = mat.any(axis=1)
    return uniq[keep], mat[keep]


@dataclass
class SimulationSummary:
    """Counting summary of one simulated exposure."""

    livetime_s: float
    n_primaries: dict
    detector_counts: dict  # species -> [top, center, bottom]
    tb_counts: dict  # species -> same-primary top+bottom coincidences
    tcb_counts: dict  # species -> top+center+bottom
    tagging_efficiency: float
    tagging_efficiency_err: float
    incomplete: bool = False

    def rate(self, count: int) -> tuple[float, float]:
        if self.livetime_s <= 0:
            return 0.0, 0.0
        return count / self.livetime_s, np.sqrt(max(count, 1)) / self.livetime_s

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        rates = {}
        for sp in SPECIES_NAMES:
            det_rates = [self.rate(c) for c in self.detector_counts[sp]]
            rates[sp] = {
                "singles_hz": {n: r for n, r in zip(("top", "center", "bottom"),
                                                    [r for r, _ in det_rates])},
                "singles_err_hz": {n: e for n, e in zip(("top", "center", "bottom"),
                                                        [e for _, e in det_rates])},
                "tb_hz": self.rate(self.tb_counts[sp])[0],
                "tb_err_hz": self.rate(self.tb_counts[sp])[1],
            }
        out["rates"] = rates
        total_tb = sum(self.tb_counts.values())
        out["tb_total_hz"] = self.rate(total_tb)[0]
        return out


def summarize_events(events: np.ndarray, livetime_s: float,
                     n_primaries: dict) -> SimulationSummary:
    cols = ("e_top_kev", "e_center_kev", "e_bottom_kev")
    detector_counts, tb_counts, tcb_counts = {}, {}, {}
    for code, sp in enumerate(SPECIES_NAMES):
        sub = events[events["species"] == code]
        above = np.column_stack([sub[c] > 0 for c in cols]) if sub.size else np.zeros((0, 3), bool)
        detector_counts[sp] = [int(above[:, i].sum()) for i in range(3)]
        tb = above[:, 0] & above[:, 2]
        tb_counts[sp] = int(tb.sum())
        tcb_counts[sp] = int((tb & above[:, 1]).sum())
    # tagging efficiency: center-wafer muons also seen by the top+bottom pair
    n_center_mu = detector_counts["mu"][1]
    eff = tcb_counts["mu"] / n_center_mu if n_center_mu else 0.0
    err = np.sqrt(eff * (1.0 - eff) / n_center_mu) if n_center_mu else 0.0
    return SimulationSummary(livetime_s, dict(n_primaries), detector_counts,
                             tb_counts, tcb_counts, eff, float(err))


def _make_events(species_code: int, times: np.ndarray, deposits: np.ndarray) -> np.ndarray:
    ev = np.zeros(times.size, dtype=EVENT_DTYPE)
    ev["species"] = species_code
    ev["t_s"] = times
    ev["e_top_kev"] = deposits[:, 0]
    ev["e_center_kev"] = deposits[:, 1]
    ev["e_bottom_kev"] = deposits[:, 2]
    return ev


def _simulate_batch(cfg: RunConfig, geom: StackGeometry, species_code: int,
                    n: int, rng: np.random.Generator):
    """Transport one batch of primaries; returns (ray_index, deposit matrix)."""
    s = cfg.sources
    if species_code == MU:
        origins, directions = sample_muon_rays(n, s.angular, s.hemisphere_radius_cm, rng)
        ray, det, e_kev = transport_muons(origins, directions, geom, cfg.transport, rng)
    else:
        origins, directions = sample_gamma_rays(n, s.gamma_shell_radius_cm, rng)
        e_mev = sample_gamma_energies(n, s, rng)
        ray, det, e_kev = transport_gammas(origins, directions, e_mev, geom,
                                           cfg.transport, rng)
    return _deposit_matrix(ray, det, e_kev, cfg.transport.detection_threshold_kev)


def _simulate_window(cfg: RunConfig, seed: int, window: int, duration_s: float) -> np.ndarray:
    """One fixed time window; fully determined by (cfg, seed, window)."""
    geom = build_geometry(cfg.geometry)
    s = cfg.sources
    rng = np.random.default_rng(np.random.SeedSequence([seed, SIM_STREAM, window]))
    pieces = []
    rates = {
        MU: muon_generation_rate(s.muon_flux_per_cm2_s, s.hemisphere_radius_cm, s.angular),
        GAMMA: gamma_generation_rate(s.gamma_flux_per_cm2_s, s.gamma_shell_radius_cm),
    }
    t0 = window * SIM_WINDOW_S
    for code in (MU, GAMMA):
        n = int(rng.poisson(rates[code] * duration_s))
        if n == 0:
            continue
        rays, deposits = _simulate_batch(cfg, geom, code, n, rng)
        times = t0 + rng.random(n) * duration_s
        pieces.append(_make_events(code, times[rays], deposits))
    if not pieces:
        return np.zeros(0, dtype=EVENT_DTYPE)
    ev = np.concatenate(pieces)
    order = np.argsort(ev["t_s"], kind="stable")
    return ev[order]


def run_simulation(cfg: RunConfig, livetime_s: float, seed: int | None = None,
                   workers: int | None = None):
    """Simulate a mixed muon plus gamma exposure of the given livetime.

    The exposure is split into fixed 10 s windows, each seeded from
    (seed, window index), so the result is byte-identical for any worker
    count.  Returns (events, SimulationSummary).
    """
    if seed is None:
        seed = cfg.seed
    if workers is None:
        workers = cfg.workers
    n_windows = max(1, int(np.ceil(livetime_s / SIM_WINDOW_S)))
    durations = [min(SIM_WINDOW_S, livetime_s - w * SIM_WINDOW_S) for w in range(n_windows)]
    parts = []
    interrupted = False
    try:
        if workers == 1:
            for w in range(n_windows):
                parts.append(_simulate_window(cfg, seed, w, durations[w]))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for part in pool.map(_simulate_window, [cfg] * n_windows,
                                     [seed] * n_windows, range(n_windows), durations,
                                     chunksize=8):
                    parts.append(part)
    except KeyboardInterrupt:
        # keep the completed prefix of windows; rates stay consistent with
        # the reduced livetime
        interrupted = True
    done_livetime = sum(durations[:len(parts)])
    events = np.concatenate(parts) if parts else np.zeros(0, dtype=EVENT_DTYPE)
    events["event_id"] = np.arange(events.size, dtype=np.int64)
    s = cfg.sources
    n_primaries = {
        "mu": int(round(muon_generation_rate(s.muon_flux_per_cm2_s, s.hemisphere_radius_cm,
                                             s.angular) * done_livetime)),
        "gamma": int(round(gamma_generation_rate(s.gamma_flux_per_cm2_s,
                                                 s.gamma_shell_radius_cm) * done_livetime)),
    }
    summary = summarize_events(events, done_livetime, n_primaries)
    summary.incomplete = interrupted
    return events, summary


def simulate_species(cfg: RunConfig, species: str, n_primaries: int,
                     seed: int | None = None):
    """Fixed-count single-species run for rate studies.

    The equivalent livetime follows from the generation rate, so rates
    from the returned summary are directly comparable to measured ones.
    """
    if seed is None:
        seed = cfg.seed
    code = SPECIES_NAMES.index(species)
    geom = build_geometry(cfg.geometry)
    s = cfg.sources
    if code == MU:
        livetime = muon_equivalent_livetime(n_primaries, s.muon_flux_per_cm2_s,
                                            s.hemisphere_radius_cm, s.angular)
    else:
        livetime = gamma_equivalent_livetime(n_primaries, s.gamma_flux_per_cm2_s,
                                             s.gamma_shell_radius_cm)
    rng = np.random.default_rng(np.random.SeedSequence([seed, SIM_STREAM, code]))
    batch = cfg.transport.batch_rays
    pieces = []
    for start in range(0, n_primaries, batch):
        n = min(batch, n_primaries - start)
        rays, deposits = _simulate_batch(cfg, geom, code, n, rng)
        times = (start + rays + rng.random(rays.size)) / n_primaries * livetime
        pieces.append(_make_events(code, times, deposits))
    events = np.concatenate(pieces) if pieces else np.zeros(0, dtype=EVENT_DTYPE)
    events["event_id"] = np.arange(events.size, dtype=np.int64)
    counts = {"mu": 0, "gamma": 0}
    counts[species] = n_primaries
    return events, summarize_events(events, livetime, counts)
