"""Cluster geometry on the 2D square lattice.

A cluster is an lx x ly patch of the square lattice with row-major site
indexing.  Bonds inside the cluster are treated exactly; every missing
neighbor of a boundary site is supplied by a mirror site of the identical
adjacent cluster, which under translation invariance is the site on the
opposite edge of the same row or column (periodic wrap).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from spincam.errors import CapacityError, PreconditionError

#: Hard cap on cluster size (4x4 is the largest supported cluster).
MAX_SITES = 16


@dataclass(frozen=True)
class ClusterGeometry:
    """Sites, internal bonds and boundary mirror map of an lx x ly cluster.

    Sites are indexed row-major: site = row * lx + col.  ``bonds`` holds the
    unordered nearest-neighbor pairs internal to the cluster.  ``boundary_map``
    holds one ``(site, mirror_site)`` pair per missing external neighbor, so a
    site appears once per open direction; for 1x1 all four entries map the
    single site onto itself.
    """

    lx: int
    ly: int
    bonds: tuple[tuple[int, int], ...]
    boundary_map: tuple[tuple[int, int], ...]
    n_sites: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_sites", self.lx * self.ly)

    @property
    def label(self) -> str:
        return f"{self.lx}x{self.ly}"

    @property
    def dim(self) -> int:
        return 2 ** self.n_sites

    def site(self, row: int, col: int) -> int:
        return row * self.lx + col

    def boundary_sites(self) -> tuple[int, ...]:
        """Sites with at least one missing external neighbor, ascending."""
        return tuple(sorted({j for j, _ in self.boundary_map}))


def build_cluster(lx: int, ly: int) -> ClusterGeometry:
    """Build the geometry of an lx x ly cluster.

    Raises CapacityError when lx*ly exceeds MAX_SITES and PreconditionError
    for non-positive extents.
    """
    if lx < 1 or ly < 1:
        raise PreconditionError(f"cluster extents must be >= 1, got {lx}x{ly}")
    if lx * ly > MAX_SITES:
        raise CapacityError(
            f"cluster {lx}x{ly} has {lx * ly} sites, cap is {MAX_SITES}"
        )

    def site(row: int, col: int) -> int:
        return row * lx + col

    bonds: list[tuple[int, int]] = []
    boundary: list[tuple[int, int]] = []
    for row in range(ly):
        for col in range(lx):
            j = site(row, col)
            # Horizontal neighbor to the right, vertical neighbor below.
            if col + 1 < lx:
                bonds.append((j, site(row, col + 1)))
            if row + 1 < ly:
                bonds.append((j, site(row + 1, col)))
            # Missing neighbors wrap periodically to the opposite edge.
            if col == 0:
                boundary.append((j, site(row, lx - 1)))  # left edge
            if col == lx - 1:
                boundary.append((j, site(row, 0)))  # right edge
            if row == 0:
                boundary.append((j, site(ly - 1, col)))  # top edge
            if row == ly - 1:
                boundary.append((j, site(0, col)))  # bottom edge

    return ClusterGeometry(lx=lx, ly=ly, bonds=tuple(bonds), boundary_map=tuple(boundary))


def parse_cluster_label(label: str) -> tuple[int, int]:
    """Parse a label like ``"3x3"`` into (lx, ly)."""
    try:
        lx_s, ly_s = label.lower().split("x")
        return int(lx_s), int(ly_s)
    except ValueError as exc:
        raise PreconditionError(f"bad cluster label {label!r}, expected 'LXxLY'") from exc
