"""Source-to-solution map data and the time-averaged inner-product engine.

The objects assembled here are the ONLY inputs the reconstruction layer is
allowed to read: frozen response data restricted to an observation region,
plus the local structure (region, restricted metric data, fiber rank).
Nothing in them references the full operator, its eigensystem, or the
off-region bundle.

The wave data stores raw kernel samples K(t; x, y) together with the
closed-form convolution weights that reproduce the Duhamel solve exactly
for piecewise-linear-in-time sources, so applying the map to source data
is not a quadrature.  The remaining time integrals in the inner-product
identity (the time averaging and the outer pairing) run through the
high-order sampled-series rules in timequad.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import timequad
from .errors import DataBoundaryError, OperatorError
from .manifold import Region
from .operator import SpectralOperator
from .propagators import TimeGrid, TimeSection, duhamel_weights
from .serialize import complex_from_list, complex_to_list, real_to_list


# ---------------------------------------------------------------------------
# local structure: (U, g|_U, E|_U)

@dataclass(frozen=True)
class LocalStructure:
    """Observation-region data available to inverse procedures.

    Holds the ordered region vertex list, restricted volumes, the edges
    internal to the region with their lengths and conductances, the fiber
    rank, and the induced local distance matrix.  Deliberately excludes
    transports and potential: those are recovery targets.
    """

    vertices: tuple
    volumes: np.ndarray
    rank: int
    edges: np.ndarray  # (E_U, 2) local indices
    edge_lengths: np.ndarray
    edge_weights: np.ndarray
    distances: np.ndarray  # induced shortest paths inside the region

    @property
    def size(self):
        return len(self.vertices)

    @property
    def dim(self):
        return self.size * self.rank

    def weights_flat(self):
        return np.repeat(self.volumes, self.rank)

    def local_index(self, vertex):
        return self.vertices.index(int(vertex))

    def local_ball(self, center_local, radius):
        """Open ball inside the region w.r.t. the induced local metric."""
        row = self.distances[center_local]
        return [int(j) for j in np.nonzero(row < radius)[0]]

    def to_payload(self):
        return {
            "schema": "local_structure@1",
            "vertices": [int(v) for v in self.vertices],
            "volumes": real_to_list(self.volumes),
            "rank": self.rank,
            "edges": [[int(a), int(b)] for a, b in self.edges],
            "edge_lengths": real_to_list(self.edge_lengths),
            "edge_weights": real_to_list(self.edge_weights),
            "distances": real_to_list(self.distances),
        }

    @staticmethod
    def from_payload(p):
        n = len(p["vertices"])
        return LocalStructure(
            vertices=tuple(int(v) for v in p["vertices"]),
            volumes=np.asarray(p["volumes"], dtype=np.float64),
            rank=int(p["rank"]),
            edges=np.asarray(p["edges"], dtype=np.int64).reshape(-1, 2),
            edge_lengths=np.asarray(p["edge_lengths"], dtype=np.float64),
            edge_weights=np.asarray(p["edge_weights"], dtype=np.float64),
            distances=np.asarray(p["distances"], dtype=np.float64).reshape(n, n),
        )


def local_structure(region: Region, rank) -> LocalStructure:
    """Restrict the ambient structures to a region (metric side only)."""
    m = region.manifold
    verts = region.vertices
    pos = {v: i for i, v in enumerate(verts)}
    edges, lens, wts = [], [], []
    for i, (a, b) in enumerate(m.edges):
        a, b = int(a), int(b)
        if a in pos and b in pos:
            edges.append([pos[a], pos[b]])
            lens.append(m.lengths[i])
            wts.append(m.weights[i])
    n = len(verts)
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for (a, b), ell in zip(edges, lens):
        dist[a, b] = min(dist[a, b], ell)
        dist[b, a] = dist[a, b]
    for k in range(n):  # small regions: Floyd--Warshall on local edges only
        dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
    return LocalStructure(
        vertices=verts,
        volumes=m.volumes[list(verts)].copy(),
        rank=rank,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_lengths=np.asarray(lens, dtype=np.float64),
        edge_weights=np.asarray(wts, dtype=np.float64),
        distances=dist,
    )


def _region_slices(region: Region, rank):
    idx = []
    for v in region.vertices:
        idx.extend(range(v * rank, (v + 1) * rank))
    return np.asarray(idx, dtype=np.int64)


# ---------------------------------------------------------------------------
# static (fractional) map data

@dataclass(frozen=True)
class FracMapData:
    """Dense block of the inverse fractional power restricted to the region.

    block[x, y] carries the spectral kernel (no volume weights); applying
    the map multiplies volume weights in, matching the continuous kernel
    convention.  kernel_block is the zero-mode kernel restricted the same
    way, used to reject inputs with a kernel component.
    """

    order: float
    local: LocalStructure
    block: np.ndarray
    kernel_block: np.ndarray
    kernel_tol: float = 1e-8

    def apply(self, f):
        """Map a region-supported section (|U|, r) to the solution on U."""
        f = np.asarray(f, dtype=np.complex128).reshape(self.local.dim)
        wf = self.local.weights_flat() * f
        total = float(np.real(np.vdot(f, wf)))
        if total > 0:
            ker = float(np.real(np.vdot(wf, self.kernel_block @ wf)))
            frac = np.sqrt(max(ker, 0.0) / total)
            if frac > self.kernel_tol:
                raise OperatorError(
                    f"source has kernel fraction {frac:.3e} > {self.kernel_tol:.0e}"
                )
        out = self.block @ wf
        return out.reshape(self.local.size, self.local.rank)

    def to_payload(self):
        return {
            "schema": "frac_map@1",
            "order": self.order,
            "local": self.local.to_payload(),
            "block": complex_to_list(self.block),
            "kernel_block": complex_to_list(self.kernel_block),
        }

    @staticmethod
    def from_payload(p):
        local = LocalStructure.from_payload(p["local"])
        d = local.dim
        return FracMapData(
            order=float(p["order"]),
            local=local,
            block=complex_from_list(p["block"], (d, d)),
            kernel_block=complex_from_list(p["kernel_block"], (d, d)),
        )


def frac_map_assemble(op: SpectralOperator, region: Region, s) -> FracMapData:
    """Freeze the local fractional source-to-solution data for order s."""
    if not 0 < s < 1:
        raise OperatorError("fractional order must be in (0, 1)")
    op.require_nonnegative()
    idx = _region_slices(region, op.bundle.rank)
    VU = op.eigensections[idx, :]
    mask = op.kernel_mask()
    with np.errstate(all="ignore"):
        vals = np.where(mask, 0.0, np.abs(op.eigenvalues) ** (-s))
    block = (VU * vals[None, :]) @ VU.conj().T
    kernel_block = (VU * mask[None, :].astype(float)) @ VU.conj().T
    return FracMapData(
        order=float(s),
        local=local_structure(region, op.bundle.rank),
        block=block,
        kernel_block=kernel_block,
    )


# ---------------------------------------------------------------------------
# wave map data

@dataclass(frozen=True)
class WaveMapData:
    """Time-sampled wave response data on the observation region.

    kernel[m] are the raw wave kernel blocks at grid time t_m.  conv_a and
    conv_b are the closed-form interval weights reproducing the Duhamel
    solve for piecewise-linear sources: the response at t_j to nodal
    source data F is sum_m conv_a[m] (mu F)[j-m] + conv_b[m] (mu F)[j-m+1].
    The grid covers [0, 2 T] for the experiment horizon T.
    """

    grid: TimeGrid
    horizon: float
    local: LocalStructure
    kernel: np.ndarray
    conv_a: np.ndarray
    conv_b: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = self.grid.n_steps
        if n % 2 != 0:
            raise OperatorError("wave map grid needs an even step count")
        if abs(self.grid.t_max - 2.0 * self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise OperatorError("wave map grid must cover [0, 2T]")

    @property
    def half_index(self):
        return self.grid.n_steps // 2

    def source_array(self, f):
        """Validate and restrict a source to nodal region data (N+1, |U| r)."""
        if isinstance(f, TimeSection):
            if f.grid.n_steps != self.grid.n_steps or abs(f.grid.t_max - self.grid.t_max) > 1e-12:
                raise OperatorError("source grid does not match the map grid")
            vals = f.values
            nv = vals.shape[1]
            if nv * vals.shape[2] == self.local.dim and list(vals.shape[1:]) == [self.local.size, self.local.rank]:
                return vals.reshape(len(self.grid), self.local.dim)
            # full-manifold array: must be supported in the region
            arr = vals.reshape(len(self.grid), -1, self.local.rank)
            mask = np.ones(arr.shape[1], dtype=bool)
            mask[list(self.local.vertices)] = False
            if np.any(np.abs(arr[:, mask, :]) > 0):
                raise DataBoundaryError("source is not supported in the observation region")
            return arr[:, list(self.local.vertices), :].reshape(len(self.grid), self.local.dim)
        arr = np.asarray(f, dtype=np.complex128)
        if arr.shape == (len(self.grid), self.local.size, self.local.rank):
            return arr.reshape(len(self.grid), self.local.dim)
        if arr.shape == (len(self.grid), self.local.dim):
            return arr
        raise OperatorError("unrecognized source shape")

    def respond(self, sources):
        """Apply the map to a batch of nodal sources.

        sources: (m, N+1, D) with D = |U| r; returns (m, N+1, D) responses,
        exact for piecewise-linear sources.
        """
        m, n1, D = sources.shape
        wf = sources * self.local.weights_flat()[None, None, :]
        L = 1
        while L < 2 * n1:
            L *= 2
        fa = np.fft.fft(self.conv_a, n=L, axis=0)
        fb = np.fft.fft(self.conv_b, n=L, axis=0)
        out = np.empty_like(sources)
        for i in range(m):
            fsrc = np.fft.fft(wf[i], n=L, axis=0)
            fshift = np.fft.fft(wf[i, 1:], n=L, axis=0)
            resp = np.einsum("tij,tj->ti", fa, fsrc) + np.einsum("tij,tj->ti", fb, fshift)
            out[i] = np.fft.ifft(resp, axis=0)[:n1]
            out[i, 0] = 0.0
        return out

    def to_payload(self):
        return {
            "schema": "wave_map@1",
            "horizon": self.horizon,
            "grid": {"t_max": self.grid.t_max, "n_steps": self.grid.n_steps},
            "local": self.local.to_payload(),
            "kernel": [complex_to_list(self.kernel[m]) for m in range(len(self.grid))],
            "conv_a": [complex_to_list(self.conv_a[m]) for m in range(len(self.grid))],
            "conv_b": [complex_to_list(self.conv_b[m]) for m in range(len(self.grid))],
        }

    @staticmethod
    def from_payload(p):
        local = LocalStructure.from_payload(p["local"])
        grid = TimeGrid(float(p["grid"]["t_max"]), int(p["grid"]["n_steps"]))
        d = local.dim
        def blocks(rows):
            return np.array([complex_from_list(row, (d, d)) for row in rows])
        return WaveMapData(
            grid=grid,
            horizon=float(p["horizon"]),
            local=local,
            kernel=blocks(p["kernel"]),
            conv_a=blocks(p["conv_a"]),
            conv_b=blocks(p["conv_b"]),
        )


def wave_map_assemble(op: SpectralOperator, region: Region, grid: TimeGrid) -> WaveMapData:
    """Freeze the wave source-to-solution data over a [0, 2T] grid."""
    if grid.n_steps % 2 != 0:
        raise OperatorError("use an even number of steps so T sits on the grid")
    idx = _region_slices(region, op.bundle.rank)
    VU = np.ascontiguousarray(op.eigensections[idx, :])
    lam = op.eigenvalues
    ts = grid.times
    from . import modefun

    gvals = modefun.wave_g(ts[:, None], lam[None, :])
    A, B = duhamel_weights(lam, grid.dt, grid.n_steps)
    cV = VU.conj()
    kernel = np.einsum("xk,tk,yk->txy", VU, gvals, cV, optimize=True)
    conv_a = np.einsum("xk,tk,yk->txy", VU, A, cV, optimize=True)
    conv_b = np.einsum("xk,tk,yk->txy", VU, B, cV, optimize=True)
    return WaveMapData(
        grid=grid,
        horizon=grid.t_max / 2.0,
        local=local_structure(region, op.bundle.rank),
        kernel=kernel,
        conv_a=conv_a,
        conv_b=conv_b,
    )


# ---------------------------------------------------------------------------
# time averaging and the inner-product engine

def time_average(series, grid: TimeGrid, piecewise_linear=False):
    """J phi(t) = (1/2) int_t^{2T - t} phi(s) ds at the grid nodes.

    With piecewise_linear the prefix integrals are trapezoid sums (exact
    for nodal piecewise-linear data); otherwise the high-order sampled
    rule is used (exact through degree-5 polynomials).
    """
    arr = np.asarray(series)
    if arr.shape[0] != len(grid):
        raise OperatorError("series is not sampled on the grid")
    if piecewise_linear:
        return timequad.time_average_linear(arr, grid.dt)
    return timequad.time_average_nodes(arr, grid.dt)


def _jh_quadratic_coeffs(h, dt, n_half):
    """Exact local quadratic data of J h for piecewise-linear nodal h.

    Returns (c0, c1, c2) on the first n_half intervals with
    (J h)(t_i + u dt) = c0[i] + c1[i] u + c2[i] u^2.
    """
    jh = timequad.time_average_linear(h, dt)
    vj = jh[:n_half]
    dj = -0.5 * (h[:n_half] + h[::-1][:n_half])
    slopes = h[1:] - h[:-1]
    mirrored = slopes[::-1][:n_half]
    cj = -0.5 * (slopes[:n_half] - mirrored)
    return vj, dj * dt, 0.5 * cj * dt


def blago_bilinear(wmap: WaveMapData, F, H, responses_f=None, responses_h=None):
    """Matrix of wave-state pairings <w^f(T), w^h(T)> from map data alone.

    F: (mf, N+1, D) and H: (mh, N+1, D) nodal sources supported in the
    region.  Uses the identity
        <w^f(T), w^h(T)> = int_0^T [ <f, J L h> - <L f, J h> ] dt
    with the map responses computed exactly for piecewise-linear sources
    and the remaining time integrals by the high-order sampled rules.
    """
    grid = wmap.grid
    dt = grid.dt
    n_half = wmap.half_index
    mu = wmap.local.weights_flat()
    mf = F.shape[0]
    mh = H.shape[0]
    if responses_h is None:
        responses_h = wmap.respond(H)
    if responses_f is None:
        responses_f = responses_h if H is F else wmap.respond(F)

    # term 1: sources paired against the time average of the h responses
    E1 = np.empty(H.shape, dtype=np.complex128)
    for b in range(mh):
        jr = timequad.time_average_nodes(responses_h[b], dt)
        E1[b] = timequad.pl_times_sampled_array(jr, n_half, dt)
    Fw = np.conj(F) * mu[None, None, :]
    T1 = Fw.reshape(mf, -1) @ E1.reshape(mh, -1).T

    # term 2: f responses paired against the exact piecewise-quadratic J h
    E2 = np.empty(H.shape, dtype=np.complex128)
    for b in range(mh):
        c0, c1, c2 = _jh_quadratic_coeffs(H[b], dt, n_half)
        E2[b] = timequad.quadratic_times_sampled_array(c0, c1, c2, len(grid), dt)
    Rw = np.conj(responses_f) * mu[None, None, :]
    T2 = Rw.reshape(mf, -1) @ E2.reshape(mh, -1).T
    return T1 - T2


def blago_inner(wmap: WaveMapData, f, h):
    """<w^f(T, .), w^h(T, .)> computed from the wave map data only."""
    F = wmap.source_array(f)[None, :, :]
    H = wmap.source_array(h)[None, :, :]
    return complex(blago_bilinear(wmap, F, H)[0, 0])


def gram_matrix(wmap: WaveMapData, sources):
    """Hermitian Gram of wave states at time T for a list of sources.

    The pairwise identity values are Hermitized (the identity is exactly
    conjugate-symmetric; averaging removes quadrature asymmetry).
    """
    batch = np.stack([wmap.source_array(s) for s in sources])
    G = blago_bilinear(wmap, batch, batch)
    return 0.5 * (G + G.conj().T)
